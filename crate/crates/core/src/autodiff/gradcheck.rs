use super::{Bindings, Graph, ParameterStore, Var};
use crate::tensor::Tensor;

/// Denominators smaller than this are floored, so coordinates whose true
/// gradient vanishes are compared absolutely instead of blowing up. Central
/// differences in `f64` carry roughly `1e-11` of roundoff at the step sizes
/// used here, well inside `1e-4 * 1e-6`.
const DENOMINATOR_FLOOR: f64 = 1e-6;

/// `|analytic - numeric| / max(|analytic|, |numeric|)`, with `0/0 = 0`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR)
}

/// Compares reverse-mode gradients of a scalar function of `inputs` against
/// central differences with step `eps`, returning the worst relative error
/// over every coordinate of every input. NaN anywhere yields NaN.
///
/// `f` receives a fresh graph and the bindings of all inputs and must
/// return a `1 × 1` node.
pub fn finite_difference_check<F>(f: F, inputs: &ParameterStore<f64>, eps: f64) -> f64
where
    F: Fn(&mut Graph<f64>, &Bindings) -> Var,
{
    let evaluate = |store: &ParameterStore<f64>| -> f64 {
        let mut g = Graph::new();
        let bindings = store.bind(&mut g);
        let out = f(&mut g, &bindings);
        g.value(out).item()
    };

    let mut g = Graph::new();
    let bindings = inputs.bind(&mut g);
    let out = f(&mut g, &bindings);
    let grads = match g.backward(out) {
        Ok(grads) => grads,
        Err(_) => return f64::NAN,
    };

    let mut worst = 0.0_f64;
    let mut probe = inputs.clone();
    let names: Vec<String> = inputs.names().map(str::to_string).collect();
    for name in names {
        let analytic: &Tensor<f64> = &grads[name.as_str()];
        for k in 0..analytic.len() {
            let original = probe.get(&name).expect("bound").data()[k];
            probe.get_mut(&name).expect("bound").data_mut()[k] = original + eps;
            let plus = evaluate(&probe);
            probe.get_mut(&name).expect("bound").data_mut()[k] = original - eps;
            let minus = evaluate(&probe);
            probe.get_mut(&name).expect("bound").data_mut()[k] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic.data()[k], numeric);
            if err.is_nan() {
                return f64::NAN;
            }
            worst = worst.max(err);
        }
    }
    worst
}
