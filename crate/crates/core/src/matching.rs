//! Segment-pair scoring: the localization module (visual and location
//! evidence conditioned on the main/context phrases and the sentence) and
//! the relationship module (location-only evidence conditioned on the
//! temporal-signal phrase).

use rand::Rng;

use crate::autodiff::{Bindings, Graph, ParameterStore, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use crate::video::{SegmentFeatureTable, SegmentSet};

pub const F_MAIN: &str = "f_main";
pub const F_CONTEXT: &str = "f_context";
pub const F_LOC: &str = "f_loc";
pub const F_REL: &str = "f_rel";

fn name(prefix: &str, part: &str) -> String {
    format!("{prefix}.{part}")
}

/// Adds the parameters of one fusion block: text and input projections into
/// a shared `fusion_dim` space, then two affine layers down to a score.
pub fn init_fusion_block<T: Real>(
    store: &mut ParameterStore<T>,
    prefix: &str,
    text_dim: usize,
    input_dim: usize,
    fusion_dim: usize,
    rng: &mut impl Rng,
) {
    store.insert_uniform(name(prefix, "text.w"), text_dim, fusion_dim, text_dim, rng);
    store.insert_uniform(name(prefix, "text.b"), 1, fusion_dim, text_dim, rng);
    store.insert_uniform(name(prefix, "input.w"), input_dim, fusion_dim, input_dim, rng);
    store.insert_uniform(name(prefix, "input.b"), 1, fusion_dim, input_dim, rng);
    store.insert_uniform(name(prefix, "fc1.w"), fusion_dim, fusion_dim, fusion_dim, rng);
    store.insert_uniform(name(prefix, "fc1.b"), 1, fusion_dim, fusion_dim, rng);
    store.insert_uniform(name(prefix, "fc2.w"), fusion_dim, 1, fusion_dim, rng);
    store.insert_uniform(name(prefix, "fc2.b"), 1, 1, fusion_dim, rng);
}

/// Scores every row of `inputs` (`M × D_in`) against one `1 × D_text` text
/// vector, returning `M × 1`:
/// `fc2(tanh(fc1(normalize(text_proj(text) + input_proj(input)))))`.
pub fn fusion_scores<T: Real>(
    g: &mut Graph<T>,
    text: Var,
    inputs: Var,
    prefix: &str,
    params: &Bindings,
) -> Result<Var> {
    let text_w = params.get(&name(prefix, "text.w"));
    let input_w = params.get(&name(prefix, "input.w"));
    let (text_shape, input_shape) = (g.shape(text), g.shape(inputs));
    if text_shape.0 != 1 || text_shape.1 != g.shape(text_w).0 {
        return Err(Error::Shape(format!(
            "{prefix}: text is {text_shape:?}, projection expects 1x{}",
            g.shape(text_w).0
        )));
    }
    if input_shape.1 != g.shape(input_w).0 {
        return Err(Error::Shape(format!(
            "{prefix}: inputs have {} columns, projection expects {}",
            input_shape.1,
            g.shape(input_w).0
        )));
    }
    let t = g.matmul(text, text_w);
    let t = g.add_bias(t, params.get(&name(prefix, "text.b")));
    let x = g.matmul(inputs, input_w);
    let x = g.add_bias(x, params.get(&name(prefix, "input.b")));
    let joint = g.add_bias(x, t);
    let joint = g.l2_normalize(joint);
    let h = g.matmul(joint, params.get(&name(prefix, "fc1.w")));
    let h = g.add_bias(h, params.get(&name(prefix, "fc1.b")));
    let h = g.tanh(h);
    let s = g.matmul(h, params.get(&name(prefix, "fc2.w")));
    Ok(g.add_bias(s, params.get(&name(prefix, "fc2.b"))))
}

/// Single text/input pair; `input` must be one row.
pub fn fusion_score<T: Real>(g: &mut Graph<T>, text: Var, input: Var, prefix: &str, params: &Bindings) -> Result<Var> {
    if g.shape(input).0 != 1 {
        return Err(Error::Shape(format!("{prefix}: expected a single input row")));
    }
    fusion_scores(g, text, input, prefix, params)
}

fn table_constant<T: Real>(g: &mut Graph<T>, table: &SegmentFeatureTable) -> Var {
    g.constant(table.features.cast())
}

/// Row-major pair indices: pair `k` is `(k / P, k % P)`.
fn pair_indices(p: usize) -> (Vec<usize>, Vec<usize>) {
    let first = (0..p * p).map(|k| k / p).collect();
    let second = (0..p * p).map(|k| k % p).collect();
    (first, second)
}

/// Output of [`localization_scores`].
#[derive(Clone, Copy, Debug)]
pub struct Localization {
    /// `P × P`, entry `(i, j)` for main segment `i` and context segment `j`.
    pub scores: Var,
    /// `P × 1` softmax over segments for the main event.
    pub main_attention: Var,
    /// `P × 1` softmax over segments for the context event.
    pub context_attention: Var,
}

fn segment_attention<T: Real>(g: &mut Graph<T>, text: Var, feats: Var, prefix: &str, params: &Bindings) -> Result<Var> {
    let s = fusion_scores(g, text, feats, prefix, params)?;
    let row = g.transpose(s);
    let att = g.softmax(row);
    Ok(g.transpose(att))
}

/// Localization scores for every (main, context) segment pair.
///
/// Each segment is scored against its phrase, the scores are softmaxed
/// over segments, and each segment feature is scaled by its own attention.
/// The pair score is then `f_loc(sentence, [α^m_i v_i, t_i, α^c_j v_j, t_j])`.
#[allow(clippy::too_many_arguments)]
pub fn localization_scores<T: Real>(
    g: &mut Graph<T>,
    main_text: Var,
    context_text: Var,
    sentence: Var,
    feats_main: &SegmentFeatureTable,
    feats_ctx: &SegmentFeatureTable,
    segments: &SegmentSet,
    params: &Bindings,
) -> Result<Localization> {
    let p = segments.len();
    for table in [feats_main, feats_ctx] {
        if table.features.rows() != p {
            return Err(Error::Shape(format!(
                "{} feature table has {} rows, expected {p} segments",
                table.modality,
                table.features.rows()
            )));
        }
    }
    let vm = table_constant(g, feats_main);
    let vc = table_constant(g, feats_ctx);
    let locations = g.constant(segments.location_matrix().cast());

    let main_attention = segment_attention(g, main_text, vm, F_MAIN, params)?;
    let context_attention = segment_attention(g, context_text, vc, F_CONTEXT, params)?;
    let vm_weighted = g.scale_rows(vm, main_attention);
    let vc_weighted = g.scale_rows(vc, context_attention);
    let main_side = g.concat_cols(&[vm_weighted, locations]);
    let context_side = g.concat_cols(&[vc_weighted, locations]);
    let (first, second) = pair_indices(p);
    let left = g.gather_rows(main_side, &first);
    let right = g.gather_rows(context_side, &second);
    let pairs = g.concat_cols(&[left, right]);
    let flat = fusion_scores(g, sentence, pairs, F_LOC, params)?;
    Ok(Localization {
        scores: g.reshape(flat, p, p),
        main_attention,
        context_attention,
    })
}

/// `P × 4` rows `[t_i, t_j]` for every pair, row-major.
pub fn pair_locations(segments: &SegmentSet) -> Tensor<f64> {
    let p = segments.len();
    let mut data = Vec::with_capacity(p * p * 4);
    for i in 0..p {
        for j in 0..p {
            data.extend(segments.location(i));
            data.extend(segments.location(j));
        }
    }
    Tensor::from_vec(p * p, 4, data)
}

/// Relationship scores `f_rel(signal, [t_i, t_j])`; no visual input.
pub fn relationship_scores<T: Real>(
    g: &mut Graph<T>,
    signal_text: Var,
    segments: &SegmentSet,
    params: &Bindings,
) -> Result<Var> {
    let p = segments.len();
    let pairs = g.constant(pair_locations(segments).cast());
    let flat = fusion_scores(g, signal_text, pairs, F_REL, params)?;
    Ok(g.reshape(flat, p, p))
}

pub fn combined_scores<T: Real>(g: &mut Graph<T>, localization: Var, relationship: Var) -> Result<Var> {
    if g.shape(localization) != g.shape(relationship) {
        return Err(Error::Shape(format!(
            "localization {:?} vs relationship {:?}",
            g.shape(localization),
            g.shape(relationship)
        )));
    }
    Ok(g.add(localization, relationship))
}

/// A detached `P × P` score matrix; entry `(i, j)` scores segment `i` as the
/// main event and segment `j` as the context event.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    size: usize,
    data: Vec<f32>,
}

impl ScoreMatrix {
    pub fn new(size: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != size * size {
            return Err(Error::Shape(format!(
                "{} scores for a {size}x{size} matrix",
                data.len()
            )));
        }
        Ok(ScoreMatrix { size, data })
    }

    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        if t.rows() != t.cols() {
            return Err(Error::Shape(format!("score matrix is {:?}", t.shape())));
        }
        let data = t.data().iter().map(|x| x.to_f64_lossy() as f32).collect();
        Self::new(t.rows(), data)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.size..(i + 1) * self.size]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Elementwise sum of localization and relationship scores.
    pub fn combined(loc: &ScoreMatrix, rel: &ScoreMatrix) -> Result<ScoreMatrix> {
        if loc.size != rel.size {
            return Err(Error::Shape(format!("{} vs {}", loc.size, rel.size)));
        }
        let data = loc.data.iter().zip(&rel.data).map(|(a, b)| a + b).collect();
        Ok(ScoreMatrix { size: loc.size, data })
    }

    /// The `k` highest-scoring `(i, j)` pairs, ties toward the lower flat index.
    pub fn top_pairs(&self, k: usize) -> Vec<(usize, usize)> {
        let mut flat: Vec<usize> = (0..self.data.len()).collect();
        flat.sort_by(|&a, &b| self.data[b].total_cmp(&self.data[a]).then(a.cmp(&b)));
        flat.into_iter()
            .take(k)
            .map(|f| (f / self.size, f % self.size))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video::{enumerate_segments, Modality};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block_store(text_dim: usize, input_dim: usize, fusion_dim: usize, seed: u64) -> ParameterStore<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        init_fusion_block(&mut store, "blk", text_dim, input_dim, fusion_dim, &mut rng);
        store
    }

    fn random_row(n: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::row_vector((0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// The fusion formula written with plain vectors.
    fn straight_line(store: &ParameterStore<f64>, prefix: &str, text: &[f64], input: &[f64]) -> f64 {
        let p = |part: &str| store.get(&format!("{prefix}.{part}")).unwrap().clone();
        let affine = |x: &[f64], w: &Tensor<f64>, b: &Tensor<f64>| -> Vec<f64> {
            (0..w.cols())
                .map(|c| (0..w.rows()).map(|r| x[r] * w.get(r, c)).sum::<f64>() + b.data()[c])
                .collect()
        };
        let t = affine(text, &p("text.w"), &p("text.b"));
        let x = affine(input, &p("input.w"), &p("input.b"));
        let sum: Vec<f64> = t.iter().zip(&x).map(|(a, b)| a + b).collect();
        let norm = (sum.iter().map(|v| v * v).sum::<f64>() + crate::autodiff::L2_EPS).sqrt();
        let unit: Vec<f64> = sum.iter().map(|v| v / norm).collect();
        let h: Vec<f64> = affine(&unit, &p("fc1.w"), &p("fc1.b"))
            .iter()
            .map(|v| v.tanh())
            .collect();
        affine(&h, &p("fc2.w"), &p("fc2.b"))[0]
    }

    #[test]
    fn zero_network_scores_zero() {
        let mut store = block_store(3, 4, 5, 1);
        let names: Vec<String> = store.names().map(str::to_string).collect();
        for n in names {
            let t = store.get_mut(&n).unwrap();
            t.data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let text = g.constant(Tensor::row_vector(vec![1.0, 2.0, 3.0]));
        let input = g.constant(Tensor::row_vector(vec![1.0, -1.0, 0.5, 2.0]));
        let s = fusion_score(&mut g, text, input, "blk", &b).unwrap();
        assert_eq!(g.value(s).item(), 0.0);
    }

    #[test]
    fn positive_rescaling_of_the_joint_vector_is_invisible() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let store = block_store(4, 4, 4, 2);
        let text = random_row(4, &mut rng);
        let input = random_row(4, &mut rng);
        // Scaling both projections and their biases scales the sum.
        let mut scaled = store.clone();
        for part in ["text.w", "text.b", "input.w", "input.b"] {
            let t = scaled.get_mut(&format!("blk.{part}")).unwrap();
            for x in t.data_mut() {
                *x *= 37.5;
            }
        }
        let a = straight_line(&store, "blk", text.data(), input.data());
        let b = straight_line(&scaled, "blk", text.data(), input.data());
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn graph_matches_straight_line_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let store = block_store(4, 4, 4, 9);
        for _ in 0..20 {
            let text = random_row(4, &mut rng);
            let input = random_row(4, &mut rng);
            let mut g = Graph::new();
            let b = store.bind(&mut g);
            let t = g.constant(text.clone());
            let x = g.constant(input.clone());
            let s = fusion_score(&mut g, t, x, "blk", &b).unwrap();
            let want = straight_line(&store, "blk", text.data(), input.data());
            assert!((g.value(s).item() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let store = block_store(3, 4, 5, 1);
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let text = g.constant(Tensor::row_vector(vec![1.0, 2.0]));
        let input = g.constant(Tensor::row_vector(vec![1.0; 4]));
        assert!(fusion_score(&mut g, text, input, "blk", &b).is_err());
        let text = g.constant(Tensor::row_vector(vec![1.0; 3]));
        let input = g.constant(Tensor::row_vector(vec![1.0; 5]));
        assert!(fusion_score(&mut g, text, input, "blk", &b).is_err());
    }

    fn full_store(dm: usize, dc: usize, dt: usize, df: usize, seed: u64) -> ParameterStore<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        init_fusion_block(&mut store, F_MAIN, dt, dm, df, &mut rng);
        init_fusion_block(&mut store, F_CONTEXT, dt, dc, df, &mut rng);
        init_fusion_block(&mut store, F_LOC, dt, dm + dc + 4, df, &mut rng);
        init_fusion_block(&mut store, F_REL, dt, 4, df, &mut rng);
        store
    }

    fn table(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> SegmentFeatureTable {
        SegmentFeatureTable {
            modality: Modality::Rgb,
            features: Tensor::from_vec(
                rows,
                cols,
                (0..rows * cols).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
            ),
        }
    }

    #[test]
    fn localization_on_a_single_segment() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let store = full_store(3, 3, 4, 4, 1);
        let segs = enumerate_segments(1).unwrap();
        let (fm, fc) = (table(1, 3, &mut rng), table(1, 3, &mut rng));
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let d = g.constant(random_row(4, &mut rng));
        let loc = localization_scores(&mut g, d, d, d, &fm, &fc, &segs, &b).unwrap();
        assert_eq!(g.value(loc.main_attention).data(), &[1.0]);
        assert_eq!(g.value(loc.context_attention).data(), &[1.0]);
        assert_eq!(g.shape(loc.scores), (1, 1));
    }

    #[test]
    fn localization_rejects_mismatched_tables() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let store = full_store(3, 3, 4, 4, 1);
        let segs = enumerate_segments(3).unwrap();
        let (fm, fc) = (table(6, 3, &mut rng), table(5, 3, &mut rng));
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let d = g.constant(random_row(4, &mut rng));
        assert!(localization_scores(&mut g, d, d, d, &fm, &fc, &segs, &b).is_err());
    }

    #[test]
    fn relationship_ignores_visual_features_and_has_full_shape() {
        let store = full_store(3, 3, 4, 4, 1);
        let segs = enumerate_segments(6).unwrap();
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let d = g.constant(Tensor::row_vector(vec![0.1, 0.2, 0.3, 0.4]));
        let rel = relationship_scores(&mut g, d, &segs, &b).unwrap();
        assert_eq!(g.shape(rel), (21, 21));
        assert_eq!(g.value(rel).len(), 441);
    }

    #[test]
    fn combined_scores_add() {
        let a = ScoreMatrix::new(2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let zero = ScoreMatrix::new(2, vec![0.0; 4]).unwrap();
        assert_eq!(ScoreMatrix::combined(&a, &zero).unwrap(), a);
        let b = ScoreMatrix::new(2, vec![0.5, -1.0, 0.25, 8.0]).unwrap();
        assert_eq!(
            ScoreMatrix::combined(&a, &b).unwrap(),
            ScoreMatrix::combined(&b, &a).unwrap()
        );
        let c = ScoreMatrix::new(3, vec![0.0; 9]).unwrap();
        assert!(ScoreMatrix::combined(&a, &c).is_err());
        assert!(ScoreMatrix::new(2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn top_pairs_order() {
        let m = ScoreMatrix::new(2, vec![0.5, 3.0, 3.0, -1.0]).unwrap();
        assert_eq!(m.top_pairs(3), vec![(0, 1), (1, 0), (0, 0)]);
    }
}
