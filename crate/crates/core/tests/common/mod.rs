//! Fixtures and reference implementations shared by the integration tests.
//! The oracles never touch the autodiff graph.

#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcmn::autodiff::ParameterStore;
use tcmn::language::WordEmbeddings;
use tcmn::model::{ModelConfig, QueryInput, QueryScores, TcmnModel};
use tcmn::tensor::Tensor;
use tcmn::treebank::{LabelVocabulary, Nested, ParseTree, TOKEN_LABEL, UNK};
use tcmn::video::{enumerate_segments, Modality, Segment, SegmentFeatureTable, SegmentSet};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

const LABELS: [&str; 8] = ["S", "NP", "VP", "SBAR", "PP-TMP", "IN", "DT", "NN"];
const WORDS: [&str; 8] = ["the", "dog", "barks", "before", "man", "jumps", "after", "ball"];

/// A random tree with a labelled root, at most `depth` levels of
/// constituents and 1-3 children per constituent.
pub fn random_tree(rng: &mut impl Rng, depth: usize) -> Nested {
    let label = LABELS.choose(rng).unwrap().to_string();
    let n = rng.random_range(1..=3);
    let children = (0..n)
        .map(|_| {
            if depth <= 1 || rng.random_bool(0.4) {
                Nested::Leaf(WORDS.choose(rng).unwrap().to_string())
            } else {
                random_tree(rng, depth - 1)
            }
        })
        .collect();
    Nested::Node(label, children)
}

/// Plain-vector `x W + b` for a row vector `x`.
fn affine(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let cols = b.len();
    (0..cols)
        .map(|c| b[c] + x.iter().enumerate().map(|(r, xr)| xr * w[r * cols + c]).sum::<f64>())
        .collect()
}

/// The fusion block written out by hand:
/// `fc2(tanh(fc1(l2(text W_t + b_t + input W_i + b_i))))`.
pub fn fusion_oracle(store: &ParameterStore<f64>, prefix: &str, text: &[f64], input: &[f64]) -> f64 {
    let p = |part: &str| store.get(&format!("{prefix}.{part}")).unwrap().data().to_vec();
    let t = affine(text, &p("text.w"), &p("text.b"));
    let x = affine(input, &p("input.w"), &p("input.b"));
    let joint: Vec<f64> = t.iter().zip(&x).map(|(a, b)| a + b).collect();
    let norm = joint.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    let joint: Vec<f64> = joint.iter().map(|v| v / norm).collect();
    let h: Vec<f64> = affine(&joint, &p("fc1.w"), &p("fc1.b"))
        .into_iter()
        .map(f64::tanh)
        .collect();
    affine(&h, &p("fc2.w"), &p("fc2.b"))[0]
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// `[a/C, (b+1)/C]`
pub fn location(s: Segment, clips: usize) -> [f64; 2] {
    [s.start as f64 / clips as f64, (s.end + 1) as f64 / clips as f64]
}

/// The margin ranking losses as two explicit loops over the matrix.
#[allow(clippy::needless_range_loop)]
pub fn loss_oracle(s: &[Vec<f64>], p: usize, q: usize, mm: f64, mc: f64, lambda: f64) -> (f64, f64, f64) {
    let n = s.len();
    let row_max = |i: usize| {
        let mut best = f64::NEG_INFINITY;
        for j in 0..n {
            if s[i][j] > best {
                best = s[i][j];
            }
        }
        best
    };
    let mut lm = 0.0;
    for i in 0..n {
        if i != p {
            lm += f64::max(0.0, row_max(i) - row_max(p) + mm);
        }
    }
    let mut lc = 0.0;
    for i in 0..n {
        if i != q {
            lc += f64::max(0.0, s[p][i] - s[p][q] + mc);
        }
    }
    lm /= n as f64;
    lc /= n as f64;
    (lm, lc, lm + lambda * lc)
}

/// Clip-set IoU by explicit set construction.
pub fn iou_oracle(a: Segment, b: Segment) -> f64 {
    let sa: std::collections::BTreeSet<usize> = (a.start..=a.end).collect();
    let sb: std::collections::BTreeSet<usize> = (b.start..=b.end).collect();
    sa.intersection(&sb).count() as f64 / sa.union(&sb).count() as f64
}

/// All contiguous spans of `clips` clips, start-major.
pub fn all_segments(clips: usize) -> Vec<Segment> {
    let mut out = Vec::new();
    for a in 0..clips {
        for b in a..clips {
            out.push(Segment::new(a, b));
        }
    }
    out
}

/// A randomly initialised model with random features on one video, for
/// scoring arbitrary trees built from [`random_tree`]'s vocabulary.
pub struct Rig {
    pub model: TcmnModel,
    pub params: ParameterStore<f64>,
    pub embeddings: WordEmbeddings,
    pub segments: SegmentSet,
    pub main: SegmentFeatureTable,
    pub context: SegmentFeatureTable,
}

impl Rig {
    pub fn new(seed: u64, clips: usize, hidden: usize, feature_dim: usize) -> Rig {
        let mut r = rng(seed);
        let word_dim = 3;
        let words: Vec<String> = WORDS.iter().map(|w| w.to_string()).collect();
        let vectors = Tensor::from_vec(words.len(), word_dim, uniform_vec(words.len() * word_dim, &mut r)).cast();
        let embeddings = WordEmbeddings::new(&words, &vectors).unwrap();
        let labels = LabelVocabulary::new(&[UNK, TOKEN_LABEL], LABELS.iter().copied());
        let segments = enumerate_segments(clips).unwrap();
        let p = segments.len();
        let mut table = |m: Modality| SegmentFeatureTable {
            modality: m,
            features: Tensor::from_vec(p, feature_dim, uniform_vec(p * feature_dim, &mut r)).cast(),
        };
        let (main, context) = (table(Modality::Rgb), table(Modality::Flow));
        let model = TcmnModel {
            config: ModelConfig {
                main_modality: Modality::Rgb,
                context_modality: Modality::Flow,
                word_dim,
                hidden,
                label_dim: 2,
                main_dim: feature_dim,
                context_dim: feature_dim,
            },
            labels,
        };
        // Wider init than the default so attentions are far from uniform.
        let params = model.init_params::<f64>(&mut r);
        let mut scaled = ParameterStore::new();
        for (name, t) in params.iter() {
            scaled.insert(name.to_string(), t.map(|x| 3.0 * x));
        }
        Rig {
            model,
            params: scaled,
            embeddings,
            segments,
            main,
            context,
        }
    }

    pub fn score(&self, tree: &ParseTree) -> QueryScores {
        self.model
            .score(
                &self.params,
                &self.embeddings,
                QueryInput {
                    tree,
                    main: &self.main,
                    context: &self.context,
                    segments: &self.segments,
                },
            )
            .unwrap()
    }
}

/// Shuffles the children of every constituent.
pub fn shuffle_siblings(tree: &Nested, rng: &mut impl Rng) -> Nested {
    use rand::seq::SliceRandom;
    match tree {
        Nested::Leaf(w) => Nested::Leaf(w.clone()),
        Nested::Node(l, kids) => {
            let mut kids: Vec<Nested> = kids.iter().map(|k| shuffle_siblings(k, rng)).collect();
            kids.shuffle(rng);
            Nested::Node(l.clone(), kids)
        }
    }
}
