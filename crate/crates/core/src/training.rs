//! Margin ranking losses and the per-stream training loop.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, Graph, ParameterStore, Var};
use crate::data::{Dataset, PooledVideo};
use crate::error::{Error, Result};
use crate::language::DEFAULT_LABEL_DIM;
use crate::matching::ScoreMatrix;
use crate::model::{ModelConfig, QueryInput, QueryScores, TcmnModel};
use crate::tensor::Real;
use crate::treebank::{build_vocabularies, ParseTree};
use crate::video::{Modality, Segment, SegmentSet};

/// Query type. `DiDeMo` queries describe a single event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    #[serde(rename = "didemo")]
    DiDeMo,
    Before,
    After,
    Then,
    While,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::DiDeMo,
        Category::Before,
        Category::After,
        Category::Then,
        Category::While,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::DiDeMo => "didemo",
            Category::Before => "before",
            Category::After => "after",
            Category::Then => "then",
            Category::While => "while",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Category::DiDeMo => "DiDeMo",
            Category::Before => "Before",
            Category::After => "After",
            Category::Then => "Then",
            Category::While => "While",
        }
    }

    pub fn has_context(self) -> bool {
        self != Category::DiDeMo
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown category {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// One annotated query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingExample {
    pub id: u32,
    pub video: String,
    pub tree_line: usize,
    pub category: Category,
    pub split: Split,
    /// Ground-truth main event.
    pub main: Segment,
    /// Ground-truth context event; absent exactly for single-event queries.
    pub context: Option<Segment>,
}

/// Context segment index used for training: the annotated one, or the
/// whole video when the query has a single event.
pub fn resolve_context(example: &TrainingExample, segments: &SegmentSet) -> Result<usize> {
    match example.context {
        Some(q) => segments
            .index_of(q)
            .ok_or_else(|| Error::Config(format!("query {}: context {q} outside the video", example.id))),
        None => Ok(segments.whole_video()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub main_margin: f64,
    pub context_margin: f64,
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            main_margin: 0.1,
            context_margin: 0.1,
            lambda: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub main: Var,
    pub context: Var,
    pub total: Var,
}

/// Margin ranking losses over a `P × P` score matrix `S`:
///
/// * `L^m = 1/P Σ_{i≠p} max(0, max_j S_ij − max_k S_pk + M^m)`
/// * `L^c = 1/P Σ_{i≠q} max(0, S_pi − S_pq + M^c)`
/// * `L = L^m + λ L^c`
///
/// The ground-truth index itself is left out of each sum; its term would be
/// the constant `M/P` with zero gradient.
pub fn ranking_loss<T: Real>(
    g: &mut Graph<T>,
    scores: Var,
    p: usize,
    q: usize,
    config: &LossConfig,
) -> Result<LossTerms> {
    let (rows, cols) = g.shape(scores);
    if rows != cols || p >= rows || q >= rows {
        return Err(Error::Shape(format!(
            "ranking loss on {rows}x{cols} scores with p={p}, q={q}"
        )));
    }
    let n = rows as f64;

    let hinge_mean = |g: &mut Graph<T>, column: Var, anchor: usize, margin: f64| -> Var {
        let others: Vec<usize> = (0..rows).filter(|&i| i != anchor).collect();
        if others.is_empty() {
            return g.constant(crate::tensor::Tensor::scalar(T::zero()));
        }
        let rivals = g.gather_rows(column, &others);
        let reference = g.gather_rows(column, &vec![anchor; others.len()]);
        let gap = g.sub(rivals, reference);
        let gap = g.add_const(gap, margin);
        let violations = g.hinge(gap);
        let total = g.sum(violations);
        g.scale(total, 1.0 / n)
    };

    let row_best = g.max_cols(scores);
    let main = hinge_mean(g, row_best, p, config.main_margin);
    let row_p = g.gather_rows(scores, &[p]);
    let row_p = g.transpose(row_p);
    let context = hinge_mean(g, row_p, q, config.context_margin);
    let weighted = g.scale(context, config.lambda);
    let total = g.add(main, weighted);
    Ok(LossTerms { main, context, total })
}

/// `(L^m, L^c, L)` for a detached score matrix.
pub fn ranking_loss_values(s: &ScoreMatrix, p: usize, q: usize, config: &LossConfig) -> Result<(f64, f64, f64)> {
    let mut g = Graph::<f64>::new();
    let data = s.data().iter().map(|&x| x as f64).collect();
    let v = g.constant(crate::tensor::Tensor::from_vec(s.size(), s.size(), data));
    let terms = ranking_loss(&mut g, v, p, q, config)?;
    Ok((
        g.value(terms.main).item(),
        g.value(terms.context).item(),
        g.value(terms.total).item(),
    ))
}

/// One stream: which modality feeds the main and context sides, plus
/// optimisation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub main: Modality,
    pub context: Modality,
    pub hidden: usize,
    pub label_dim: usize,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub seed: u64,
}

impl StreamConfig {
    pub fn new(main: Modality, context: Modality) -> Self {
        StreamConfig {
            main,
            context,
            hidden: 16,
            label_dim: DEFAULT_LABEL_DIM,
            adam: AdamConfig::default(),
            epochs: 300,
            seed: 0,
        }
    }

    /// `"(RGB,Flow)"` style name.
    pub fn pair_name(&self) -> String {
        format!("({},{})", self.main, self.context)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_main: f64,
    pub mean_context: f64,
}

/// `epoch,mean_loss,mean_Lm,mean_Lc` with a header row.
pub fn write_loss_log(log: &[EpochLog], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "epoch,mean_loss,mean_Lm,mean_Lc")?;
    for e in log {
        writeln!(out, "{},{},{},{}", e.epoch, e.mean_loss, e.mean_main, e.mean_context)?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainedStream {
    pub model: TcmnModel,
    pub params: ParameterStore<f32>,
    pub log: Vec<EpochLog>,
}

/// Builds an untrained model for `stream` with labels from the training
/// split's trees.
pub fn build_model(data: &Dataset, stream: &StreamConfig) -> Result<TcmnModel> {
    let train_trees: Vec<ParseTree> = data.examples_in(Split::Train).map(|ex| data.tree(ex).clone()).collect();
    if train_trees.is_empty() {
        return Err(Error::Config("no training examples".into()));
    }
    let (labels, _) = build_vocabularies(&train_trees);
    let (main_dim, context_dim) = data.feature_dims(stream.main, stream.context)?;
    Ok(TcmnModel {
        config: ModelConfig {
            main_modality: stream.main,
            context_modality: stream.context,
            word_dim: data.embeddings.dim(),
            hidden: stream.hidden,
            label_dim: stream.label_dim,
            main_dim,
            context_dim,
        },
        labels,
    })
}

fn query_input<'a>(
    data: &'a Dataset,
    pooled: &'a std::collections::BTreeMap<String, PooledVideo>,
    model: &TcmnModel,
    ex: &TrainingExample,
) -> Result<QueryInput<'a>> {
    let video = pooled
        .get(&ex.video)
        .ok_or_else(|| Error::Config(format!("query {}: no features for video {}", ex.id, ex.video)))?;
    Ok(QueryInput {
        tree: data.tree(ex),
        main: video.table(model.config.main_modality),
        context: video.table(model.config.context_modality),
        segments: &video.segments,
    })
}

/// Trains one stream on the training split, calling `on_epoch` after every
/// epoch.
pub fn train_stream_with(
    data: &Dataset,
    stream: &StreamConfig,
    loss: &LossConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainedStream> {
    let model = build_model(data, stream)?;
    let mut rng = ChaCha8Rng::seed_from_u64(stream.seed);
    let mut params: ParameterStore<f32> = model.init_params(&mut rng);
    let pooled = data.pooled()?;
    let mut order: Vec<&TrainingExample> = data.examples_in(Split::Train).collect();
    let mut log = Vec::with_capacity(stream.epochs);

    for epoch in 0..stream.epochs {
        order.shuffle(&mut rng);
        let (mut sum_total, mut sum_main, mut sum_context) = (0.0, 0.0, 0.0);
        for ex in &order {
            let input = query_input(data, &pooled, &model, ex)?;
            let p = input
                .segments
                .index_of(ex.main)
                .ok_or_else(|| Error::Config(format!("query {}: main {} outside the video", ex.id, ex.main)))?;
            let q = resolve_context(ex, input.segments)?;

            let mut g = Graph::new();
            let bindings = params.bind(&mut g);
            let fwd = model.forward(&mut g, &bindings, &data.embeddings, input)?;
            let terms = ranking_loss(&mut g, fwd.scores, p, q, loss)?;
            let total = g.value(terms.total).item() as f64;
            if !total.is_finite() {
                return Err(Error::Numeric(format!(
                    "query {}: loss is {total} in epoch {epoch}",
                    ex.id
                )));
            }
            sum_total += total;
            sum_main += g.value(terms.main).item() as f64;
            sum_context += g.value(terms.context).item() as f64;
            let grads = g.backward(terms.total)?;
            adam_step(&mut params, &grads, &stream.adam)?;
        }
        let n = order.len().max(1) as f64;
        let entry = EpochLog {
            epoch,
            mean_loss: sum_total / n,
            mean_main: sum_main / n,
            mean_context: sum_context / n,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    if params.iter().any(|(_, t)| !t.is_finite()) {
        return Err(Error::Numeric("non-finite parameter after training".into()));
    }
    Ok(TrainedStream { model, params, log })
}

pub fn train_stream(data: &Dataset, stream: &StreamConfig, loss: &LossConfig) -> Result<TrainedStream> {
    train_stream_with(data, stream, loss, |_| {})
}

/// Scores every example of `split`, in dataset order.
pub fn score_split<T: Real>(
    data: &Dataset,
    model: &TcmnModel,
    params: &ParameterStore<T>,
    split: Split,
) -> Result<Vec<(TrainingExample, QueryScores)>> {
    let pooled = data.pooled()?;
    data.examples_in(split)
        .map(|ex| {
            let input = query_input(data, &pooled, model, ex)?;
            let scores = model.score(params, &data.embeddings, input)?;
            if !scores.combined.is_finite() {
                return Err(Error::Numeric(format!("query {}: non-finite scores", ex.id)));
            }
            Ok((ex.clone(), scores))
        })
        .collect()
}

/// Scores one example (any split).
pub fn score_example<T: Real>(
    data: &Dataset,
    model: &TcmnModel,
    params: &ParameterStore<T>,
    example: &TrainingExample,
) -> Result<QueryScores> {
    let pooled = data.pooled_video(&example.video)?;
    let input = QueryInput {
        tree: data.tree(example),
        main: pooled.table(model.config.main_modality),
        context: pooled.table(model.config.context_modality),
        segments: &pooled.segments,
    };
    model.score(params, &data.embeddings, input)
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch {:>4}  loss {:.5}  Lm {:.5}  Lc {:.5}",
            self.epoch, self.mean_loss, self.mean_main, self.mean_context
        )
    }
}
