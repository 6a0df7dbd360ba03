//! Finite-difference gradient checks over every primitive, the Tree-LSTM and
//! the full scoring loss, all in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{finite_difference_check, Bindings, Graph, ParameterStore, Var};
use crate::error::Result;
use crate::language::{init_language_params, tree_attention, tree_lstm_encode, LanguageDims, WordEmbeddings};
use crate::model::{ModelConfig, QueryInput, TcmnModel};
use crate::tensor::Tensor;
use crate::training::{ranking_loss, LossConfig};
use crate::treebank::{build_vocabularies, parse_bracketed};
use crate::video::{Modality, Segment, SegmentFeatureTable, SegmentSet};

pub const FD_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub parameters: usize,
    pub max_relative_error: f64,
}

fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
}

/// Values bounded away from zero, for ops with a kink there.
fn away_from_zero(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor<f64> {
    random(rows, cols, rng).map(|x| if x < 0.0 { x - 0.1 } else { x + 0.1 })
}

/// Reduces a non-scalar output to a scalar with fixed random weights, so
/// every output entry contributes to the gradient.
fn project(g: &mut Graph<f64>, out: Var, weights: &Tensor<f64>) -> Var {
    let w = g.constant(weights.clone());
    let prod = g.mul(out, w);
    g.sum(prod)
}

type OpFn = fn(&mut Graph<f64>, &[Var]) -> Var;

fn check_op(name: &str, inputs: Vec<Tensor<f64>>, op: OpFn, rng: &mut impl Rng) -> GradCheck {
    let mut store = ParameterStore::new();
    let names: Vec<String> = (0..inputs.len()).map(|k| format!("x{k}")).collect();
    let parameters = inputs.iter().map(Tensor::len).sum();
    for (n, t) in names.iter().zip(inputs) {
        store.insert(n.clone(), t);
    }
    // Output shape from a dry run, then fixed projection weights.
    let mut g = Graph::new();
    let b = store.bind(&mut g);
    let vars: Vec<Var> = names.iter().map(|n| b.get(n)).collect();
    let probe = op(&mut g, &vars);
    let (r, c) = g.shape(probe);
    let weights = random(r, c, rng);
    let err = finite_difference_check(
        |g: &mut Graph<f64>, b: &Bindings| {
            let vars: Vec<Var> = names.iter().map(|n| b.get(n)).collect();
            let out = op(g, &vars);
            project(g, out, &weights)
        },
        &store,
        FD_EPS,
    );
    GradCheck {
        name: format!("op {name}"),
        parameters,
        max_relative_error: err,
    }
}

fn primitive_checks(rng: &mut ChaCha8Rng) -> Vec<GradCheck> {
    let mut out = Vec::new();
    let mut run = |name: &str, shapes: &[(usize, usize)], kinked: bool, op: OpFn, rng: &mut ChaCha8Rng| {
        let inputs = shapes
            .iter()
            .map(|&(r, c)| {
                if kinked {
                    away_from_zero(r, c, rng)
                } else {
                    random(r, c, rng)
                }
            })
            .collect();
        out.push(check_op(name, inputs, op, rng));
    };
    run("matmul", &[(3, 4), (4, 2)], false, |g, x| g.matmul(x[0], x[1]), rng);
    run("add", &[(2, 3), (2, 3)], false, |g, x| g.add(x[0], x[1]), rng);
    run("sub", &[(2, 3), (2, 3)], false, |g, x| g.sub(x[0], x[1]), rng);
    run("mul", &[(2, 3), (2, 3)], false, |g, x| g.mul(x[0], x[1]), rng);
    run("add_bias", &[(3, 4), (1, 4)], false, |g, x| g.add_bias(x[0], x[1]), rng);
    run(
        "scale_rows",
        &[(3, 4), (3, 1)],
        false,
        |g, x| g.scale_rows(x[0], x[1]),
        rng,
    );
    run("scale", &[(2, 3)], false, |g, x| g.scale(x[0], -1.7), rng);
    run("add_const", &[(2, 3)], false, |g, x| g.add_const(x[0], 0.3), rng);
    run(
        "concat_cols",
        &[(2, 3), (2, 1)],
        false,
        |g, x| g.concat_cols(&[x[0], x[1]]),
        rng,
    );
    run(
        "concat_rows",
        &[(2, 3), (1, 3)],
        false,
        |g, x| g.concat_rows(&[x[0], x[1]]),
        rng,
    );
    run("slice_cols", &[(3, 5)], false, |g, x| g.slice_cols(x[0], 1, 3), rng);
    run(
        "gather_rows",
        &[(4, 3)],
        false,
        |g, x| g.gather_rows(x[0], &[2, 0, 2, 3]),
        rng,
    );
    run("transpose", &[(2, 5)], false, |g, x| g.transpose(x[0]), rng);
    run("reshape", &[(2, 6)], false, |g, x| g.reshape(x[0], 3, 4), rng);
    run("sum", &[(3, 3)], false, |g, x| g.sum(x[0]), rng);
    run("mean", &[(3, 3)], false, |g, x| g.mean(x[0]), rng);
    run("sigmoid", &[(2, 4)], false, |g, x| g.sigmoid(x[0]), rng);
    run("tanh", &[(2, 4)], false, |g, x| g.tanh(x[0]), rng);
    run("softmax", &[(3, 5)], false, |g, x| g.softmax(x[0]), rng);
    run("l2_normalize", &[(3, 4)], false, |g, x| g.l2_normalize(x[0]), rng);
    run("hinge", &[(3, 4)], true, |g, x| g.hinge(x[0]), rng);
    run("max_cols", &[(4, 5)], false, |g, x| g.max_cols(x[0]), rng);
    out
}

/// Tree-LSTM and tree attention on a 5-node tree; the scalar is a random
/// projection of every hidden state, cell state and phrase vector.
fn tree_lstm_check(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let tree = parse_bracketed("(S (NP dog) (VP barks))")?;
    debug_assert_eq!(tree.len(), 5);
    let (labels, words) = build_vocabularies(std::slice::from_ref(&tree));
    let word_dim = 3;
    let observed: Vec<String> = words.tokens()[1..].to_vec();
    let embeddings = WordEmbeddings::new(&observed, &random(observed.len(), word_dim, rng).cast())?;
    let dims = LanguageDims {
        word_dim,
        hidden: 4,
        label_count: labels.len(),
        label_dim: 2,
    };
    let mut store = ParameterStore::<f64>::new();
    init_language_params(&mut store, &dims, rng);
    let weights: Vec<Tensor<f64>> = (0..2 * tree.len() + 3).map(|_| random(1, dims.hidden, rng)).collect();
    let parameters = store.numel();
    let err = finite_difference_check(
        |g: &mut Graph<f64>, b: &Bindings| {
            let states = tree_lstm_encode(g, &tree, &embeddings, b).expect("valid tree");
            let phrases = tree_attention(g, &states, &tree, &labels, b).expect("valid tree");
            let vars: Vec<Var> = states
                .hidden
                .iter()
                .chain(&states.cells)
                .copied()
                .chain([phrases.main, phrases.context, phrases.signal])
                .collect();
            let terms: Vec<Var> = vars.iter().zip(&weights).map(|(&v, w)| project(g, v, w)).collect();
            let stacked = g.concat_rows(&terms);
            g.sum(stacked)
        },
        &store,
        FD_EPS,
    );
    Ok(GradCheck {
        name: "tree-lstm + attention (5 nodes)".into(),
        parameters,
        max_relative_error: err,
    })
}

/// Full scoring path plus ranking loss on four candidates with 6-dim
/// features, differentiated with respect to every model parameter.
fn full_loss_check(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let tree = parse_bracketed("(S (S (NP dog) (VP barks)) (SBAR (IN before) (S (NP man) (VP jumps))))")?;
    let (labels, words) = build_vocabularies(std::slice::from_ref(&tree));
    let word_dim = 4;
    let observed: Vec<String> = words.tokens()[1..].to_vec();
    let embeddings = WordEmbeddings::new(&observed, &random(observed.len(), word_dim, rng).cast())?;
    let s = Segment::new;
    let segments = SegmentSet::from_segments(3, vec![s(0, 0), s(1, 1), s(2, 2), s(0, 2)])?;
    let feature_dim = 6;
    let table = |m: Modality, rng: &mut ChaCha8Rng| SegmentFeatureTable {
        modality: m,
        features: random(segments.len(), feature_dim, rng).cast(),
    };
    let (main, context) = (table(Modality::Rgb, rng), table(Modality::Flow, rng));
    let model = TcmnModel {
        config: ModelConfig {
            main_modality: Modality::Rgb,
            context_modality: Modality::Flow,
            word_dim,
            hidden: 5,
            label_dim: 3,
            main_dim: feature_dim,
            context_dim: feature_dim,
        },
        labels,
    };
    let store: ParameterStore<f64> = model.init_params(rng);
    let parameters = store.numel();
    let loss = LossConfig::default();
    let input = QueryInput {
        tree: &tree,
        main: &main,
        context: &context,
        segments: &segments,
    };
    let err = finite_difference_check(
        |g: &mut Graph<f64>, b: &Bindings| {
            let fwd = model.forward(g, b, &embeddings, input).expect("valid instance");
            ranking_loss(g, fwd.scores, 0, 2, &loss).expect("valid indices").total
        },
        &store,
        FD_EPS,
    );
    Ok(GradCheck {
        name: "full loss (P=4, D=6)".into(),
        parameters,
        max_relative_error: err,
    })
}

/// Runs every check. The same seed always gives the same report.
pub fn grad_check_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = primitive_checks(&mut rng);
    out.push(tree_lstm_check(&mut rng)?);
    out.push(full_loss_check(&mut rng)?);
    Ok(out)
}
