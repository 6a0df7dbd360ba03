//! The `tcmn` command-line tool.
//!
//! Every subcommand reads its inputs, writes artifacts under the paths it is
//! given and prints a short human-readable summary to stdout. Errors map to
//! exit codes through [`Error::exit_code`]; usage errors exit with 1.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::autodiff::{read_checkpoint, write_checkpoint, AdamConfig, ParameterStore};
use crate::checks::grad_check_suite;
use crate::data::{generate_synthetic, load_dataset, write_dataset, Dataset, SyntheticSpec};
use crate::ensemble::{grid_search_weights, late_fusion, stream_name, EnsembleWeights, GridQuery, ScoreDump, STREAMS};
use crate::error::{Error, Result};
use crate::eval::{evaluate, frequency_prior, rank_main_segments, EvaluationReport, Prediction};
use crate::matching::ScoreMatrix;
use crate::model::{ModelConfig, QueryInput, TcmnModel};
use crate::training::{
    score_split, train_stream_with, write_loss_log, LossConfig, Split, StreamConfig, TrainingExample,
};
use crate::treebank::{parse_bracketed, LabelVocabulary};
use crate::video::{enumerate_segments, Modality, SegmentSet};

pub const CHECKPOINT_FILE: &str = "checkpoint.tcmn";
pub const MODEL_FILE: &str = "model.json";
pub const LABELS_FILE: &str = "labels.vocab";

#[derive(Debug, Parser)]
#[command(
    name = "tcmn",
    version,
    about = "Localize temporal-language queries in video with tree-structured modular networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (manifest, trees, annotations, features, embeddings).
    GenerateSynth(GenerateArgs),
    /// Train one (main, context) modality stream on the training split.
    Train(TrainArgs),
    /// Score every query of one split with a trained stream.
    Score(ScoreArgs),
    /// Grid-search late-fusion weights on validation scores of the four streams.
    Fuse(FuseArgs),
    /// Report R@1, R@5 and mIoU for a score file (or four fused with weights).
    Eval(EvalArgs),
    /// Top-scoring (main, context) segment pairs for a new query on one video.
    Predict(PredictArgs),
    /// Dump node and segment attentions for one query as JSON.
    InspectAttention(InspectArgs),
    /// Finite-difference gradient checks in f64.
    GradCheck(GradCheckArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Generator spec (JSON); missing fields take their defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Overrides the seed in the --spec file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Training hyperparameters.
#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct Hyperparameters {
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    /// Tree-LSTM and fusion width.
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    #[arg(long, default_value_t = crate::language::DEFAULT_LABEL_DIM)]
    pub label_dim: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub weight_decay: f64,
    /// Margin of the main-segment ranking term.
    #[arg(long, default_value_t = 0.1)]
    pub main_margin: f64,
    /// Margin of the context-segment ranking term.
    #[arg(long, default_value_t = 0.1)]
    pub context_margin: f64,
    /// Weight of the context term.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Main and context modality, e.g. `rgb,flow`.
    #[arg(long, value_parser = parse_stream)]
    pub stream: (Modality, Modality),
    #[command(flatten)]
    pub hyper: Hyperparameters,
    /// Print progress every this many epochs (0 for silence).
    #[arg(long, default_value_t = 25)]
    pub log_every: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint file, or the directory `train` wrote.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Validation score files in stream order (RGB,RGB) (RGB,Flow) (Flow,RGB) (Flow,Flow).
    #[arg(long, num_args = 4, required = true)]
    pub scores: Vec<PathBuf>,
    #[arg(long)]
    pub val_manifest: PathBuf,
    /// Grid spacing; must divide 1.
    #[arg(long, default_value_t = 0.1)]
    pub step: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// One score file, or four in stream order together with `--weights`.
    #[arg(long, num_args = 1..=4, required = true)]
    pub scores: Vec<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Also print one row per category.
    #[arg(long)]
    pub per_category: bool,
    /// Print the report as JSON instead of tables.
    #[arg(long)]
    pub json: bool,
    /// Add a frequency-prior baseline row fitted on the training split.
    #[arg(long)]
    pub prior: bool,
    /// Row label in the table.
    #[arg(long, default_value = "TCMN")]
    pub method: String,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Bracketed constituency parse of the query.
    #[arg(long)]
    pub query_tree: String,
    #[arg(long)]
    pub video: String,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset supplying the video's features and the word embeddings.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub top: usize,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub query_id: u32,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

fn parse_stream(s: &str) -> std::result::Result<(Modality, Modality), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected MAIN,CONTEXT (e.g. rgb,flow), got {s:?}"))?;
    Ok((
        a.trim().parse().map_err(|e: Error| e.to_string())?,
        b.trim().parse().map_err(|e: Error| e.to_string())?,
    ))
}

/// Everything `train` was asked to do, saved next to the checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunConfig {
    pub subcommand: String,
    pub manifest: PathBuf,
    pub stream: String,
    pub hyperparameters: Hyperparameters,
    pub out: PathBuf,
}

impl Hyperparameters {
    pub fn stream_config(&self, main: Modality, context: Modality) -> StreamConfig {
        StreamConfig {
            hidden: self.hidden,
            label_dim: self.label_dim,
            adam: AdamConfig {
                lr: self.lr,
                weight_decay: self.weight_decay,
                ..AdamConfig::default()
            },
            epochs: self.epochs,
            seed: self.seed,
            ..StreamConfig::new(main, context)
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            main_margin: self.main_margin,
            context_margin: self.context_margin,
            lambda: self.lambda,
        }
    }
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            epochs: 300,
            hidden: 16,
            label_dim: crate::language::DEFAULT_LABEL_DIM,
            lr: 1e-3,
            weight_decay: 1e-8,
            main_margin: 0.1,
            context_margin: 0.1,
            lambda: 1.0,
            seed: 0,
        }
    }
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{rendered}");
                1
            } else {
                let _ = write!(out, "{rendered}");
                0
            };
        }
    };
    match run(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

pub fn run(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match command {
        Command::GenerateSynth(a) => generate(a, out),
        Command::Train(a) => train(a, out, err),
        Command::Score(a) => score(a, out),
        Command::Fuse(a) => fuse(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Predict(a) => predict(a, out),
        Command::InspectAttention(a) => inspect(a, out),
        Command::GradCheck(a) => grad_check(a, out),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    write(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn generate(a: GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let mut spec: SyntheticSpec = match &a.spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let data = generate_synthetic(&spec)?;
    let manifest = write_dataset(&data, &a.out)?;
    let counts: Vec<String> = [Split::Train, Split::Val, Split::Test]
        .iter()
        .map(|&s| format!("{} {}", s.as_str(), data.examples_in(s).count()))
        .collect();
    writeln!(
        out,
        "wrote {} ({} videos; {})",
        manifest.display(),
        data.videos.len(),
        counts.join(", ")
    )
    .map_err(stdout_err)
}

fn train(a: TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let data = load_dataset(&a.manifest)?;
    let stream = a.hyper.stream_config(a.stream.0, a.stream.1);
    let loss = a.hyper.loss_config();
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;

    // Wall-clock times only ever go to train.log.
    let started = Instant::now();
    let mut timing = String::new();
    let trained = train_stream_with(&data, &stream, &loss, |e| {
        let last = e.epoch + 1 == stream.epochs;
        if a.log_every > 0 && ((e.epoch + 1) % a.log_every == 0 || last) {
            let _ = writeln!(err, "{} {e}", stream.pair_name());
            timing.push_str(&format!("{:.3}s {e}\n", started.elapsed().as_secs_f64()));
        }
    })?;

    write_file(&a.out.join(CHECKPOINT_FILE), |w| write_checkpoint(&trained.params, w))?;
    let model_json = serde_json::to_string_pretty(&trained.model.config).expect("config serializes") + "\n";
    write_file(&a.out.join(MODEL_FILE), |w| w.write_all(model_json.as_bytes()))?;
    write_file(&a.out.join(LABELS_FILE), |w| trained.model.labels.write_to(w))?;
    write_file(&a.out.join("loss.csv"), |w| write_loss_log(&trained.log, w))?;
    let run = RunConfig {
        subcommand: "train".into(),
        manifest: a.manifest.clone(),
        stream: format!("{},{}", a.stream.0.as_str(), a.stream.1.as_str()),
        hyperparameters: a.hyper.clone(),
        out: a.out.clone(),
    };
    let run_json = serde_json::to_string_pretty(&run).expect("run config serializes") + "\n";
    write_file(&a.out.join("run.json"), |w| w.write_all(run_json.as_bytes()))?;
    write_file(&a.out.join("train.log"), |w| w.write_all(timing.as_bytes()))?;

    let final_loss = trained.log.last().map_or(f64::NAN, |e| e.mean_loss);
    writeln!(
        out,
        "trained {} for {} epochs on {} queries; final loss {final_loss:.6}; wrote {}",
        stream.pair_name(),
        stream.epochs,
        data.examples_in(Split::Train).count(),
        a.out.display()
    )
    .map_err(stdout_err)
}

/// Loads a trained stream: the checkpoint plus the `model.json` and
/// `labels.vocab` written beside it. `path` may be the checkpoint file or
/// its directory.
pub fn load_stream(path: &Path) -> Result<(TcmnModel, ParameterStore<f32>)> {
    let (dir, ckpt) = if path.is_dir() {
        (path.to_path_buf(), path.join(CHECKPOINT_FILE))
    } else {
        (path.parent().unwrap_or(Path::new("")).to_path_buf(), path.to_path_buf())
    };
    let model_path = dir.join(MODEL_FILE);
    let text = fs::read_to_string(&model_path).map_err(|e| Error::io(&model_path, e))?;
    let config: ModelConfig = serde_json::from_str(&text)
        .map_err(|e| Error::data(model_path.display().to_string(), Some(e.line()), e.to_string()))?;
    let labels_path = dir.join(LABELS_FILE);
    let labels = LabelVocabulary::read_from(open(&labels_path)?, &labels_path.display().to_string())?;
    let params = read_checkpoint(open(&ckpt)?, &ckpt.display().to_string())?;
    let model = TcmnModel { config, labels };

    // Names and shapes must match a freshly built model.
    use rand::SeedableRng;
    let expected: ParameterStore<f32> = model.init_params(&mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
    let ckpt_name = ckpt.display().to_string();
    for (name, t) in expected.iter() {
        let got = params
            .get(name)
            .ok_or_else(|| Error::data(&ckpt_name, None, format!("missing parameter {name}")))?;
        if got.shape() != t.shape() {
            return Err(Error::data(
                &ckpt_name,
                None,
                format!(
                    "parameter {name} has shape {:?}, model expects {:?}",
                    got.shape(),
                    t.shape()
                ),
            ));
        }
    }
    if params.len() != expected.len() {
        return Err(Error::data(
            &ckpt_name,
            None,
            "checkpoint has parameters the model does not use",
        ));
    }
    Ok((model, params))
}

fn check_dims(model: &TcmnModel, data: &Dataset) -> Result<()> {
    let c = &model.config;
    let (main_dim, context_dim) = data.feature_dims(c.main_modality, c.context_modality)?;
    if (main_dim, context_dim) != (c.main_dim, c.context_dim) || data.embeddings.dim() != c.word_dim {
        return Err(Error::Config(format!(
            "model expects {}-dim main, {}-dim context and {}-dim word features; dataset has {main_dim}, {context_dim} and {}",
            c.main_dim,
            c.context_dim,
            c.word_dim,
            data.embeddings.dim()
        )));
    }
    Ok(())
}

fn score(a: ScoreArgs, out: &mut dyn Write) -> Result<()> {
    let data = load_dataset(&a.manifest)?;
    let (model, params) = load_stream(&a.checkpoint)?;
    check_dims(&model, &data)?;
    let scored = score_split(&data, &model, &params, a.split)?;
    if scored.is_empty() {
        return Err(Error::Config(format!("no {} queries to score", a.split.as_str())));
    }
    let dump = ScoreDump::new(scored.into_iter().map(|(ex, s)| (ex.id, s.combined)).collect())?;
    write_file(&a.out, |w| dump.write_to(w))?;
    writeln!(
        out,
        "scored {} {} queries with ({},{}); wrote {}",
        dump.entries.len(),
        a.split.as_str(),
        model.config.main_modality,
        model.config.context_modality,
        a.out.display()
    )
    .map_err(stdout_err)
}

fn read_dump(path: &Path) -> Result<ScoreDump> {
    ScoreDump::read_from(open(path)?, &path.display().to_string())
}

/// Segment sets per video, keyed by clip count.
fn segment_sets(data: &Dataset) -> Result<BTreeMap<usize, SegmentSet>> {
    let mut sets = BTreeMap::new();
    for v in data.videos.values() {
        if let std::collections::btree_map::Entry::Vacant(e) = sets.entry(v.clips()) {
            e.insert(enumerate_segments(v.clips())?);
        }
    }
    Ok(sets)
}

/// Queries of `data` with their ground truth, matched to score matrices by
/// id. Every dump must cover every selected query.
struct Aligned<'a> {
    examples: Vec<&'a TrainingExample>,
    truths: Vec<usize>,
    segments: Vec<&'a SegmentSet>,
}

fn align<'a>(
    data: &'a Dataset,
    sets: &'a BTreeMap<usize, SegmentSet>,
    examples: Vec<&'a TrainingExample>,
) -> Result<Aligned<'a>> {
    let mut truths = Vec::new();
    let mut segments = Vec::new();
    for ex in &examples {
        let set = &sets[&data.videos[&ex.video].clips()];
        truths.push(set.index_of(ex.main).ok_or_else(|| {
            Error::Config(format!(
                "query {}: main segment {} outside video {}",
                ex.id, ex.main, ex.video
            ))
        })?);
        segments.push(set);
    }
    Ok(Aligned {
        examples,
        truths,
        segments,
    })
}

fn matrices_for(
    dump: &ScoreDump,
    path: &Path,
    examples: &[&TrainingExample],
    sets: &[&SegmentSet],
) -> Result<Vec<ScoreMatrix>> {
    examples
        .iter()
        .zip(sets)
        .map(|(ex, set)| {
            let m = dump.get(ex.id).ok_or_else(|| {
                Error::data(
                    path.display().to_string(),
                    None,
                    format!("no scores for query {}", ex.id),
                )
            })?;
            if m.size() != set.len() {
                return Err(Error::data(
                    path.display().to_string(),
                    None,
                    format!(
                        "query {}: {}x{} scores for {} segments",
                        ex.id,
                        m.size(),
                        m.size(),
                        set.len()
                    ),
                ));
            }
            Ok(m.clone())
        })
        .collect()
}

fn fuse(a: FuseArgs, out: &mut dyn Write) -> Result<()> {
    let data = load_dataset(&a.val_manifest)?;
    let sets = segment_sets(&data)?;
    let aligned = align(&data, &sets, data.examples_in(Split::Val).collect())?;
    if aligned.examples.is_empty() {
        return Err(Error::Config("validation manifest has no val queries".into()));
    }
    let mut per_stream = Vec::new();
    for path in &a.scores {
        per_stream.push(matrices_for(
            &read_dump(path)?,
            path,
            &aligned.examples,
            &aligned.segments,
        )?);
    }
    let queries: Vec<GridQuery> = aligned
        .examples
        .iter()
        .zip(&aligned.truths)
        .zip(&aligned.segments)
        .map(|((ex, &truth), &segments)| GridQuery {
            category: ex.category,
            truth,
            segments,
        })
        .collect();
    let streams: [&[ScoreMatrix]; 4] = [&per_stream[0], &per_stream[1], &per_stream[2], &per_stream[3]];
    let found = grid_search_weights(streams, &queries, a.step)?;
    write_file(&a.out, |w| writeln!(w, "{}", found.weights.to_json()))?;

    let mut text = String::new();
    for (k, &pair) in STREAMS.iter().enumerate() {
        let single = crate::ensemble::fused_r_at_1(streams, &queries, &EnsembleWeights::one_hot(k))?;
        text.push_str(&format!(
            "{:<12} gamma {:.2}  val R@1 alone {:.2}\n",
            stream_name(pair),
            found.weights.get()[k],
            single
        ));
    }
    text.push_str(&format!(
        "fused val R@1 {:.2} over {} grid points; wrote {}\n",
        found.average_r_at_1,
        found.points,
        a.out.display()
    ));
    out.write_all(text.as_bytes()).map_err(stdout_err)
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let data = load_dataset(&a.manifest)?;
    let sets = segment_sets(&data)?;
    let dumps = a.scores.iter().map(|p| read_dump(p)).collect::<Result<Vec<_>>>()?;
    let weights = match (&a.weights, dumps.len()) {
        (None, 1) => None,
        (Some(path), 4) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Some(EnsembleWeights::from_json(&text)?)
        }
        _ => {
            return Err(Error::Config(
                "eval takes one score file, or four score files with --weights".into(),
            ))
        }
    };
    // Query ids come from the first dump, in its order.
    let mut examples = Vec::new();
    for (id, _) in &dumps[0].entries {
        examples.push(data.example(*id).ok_or_else(|| {
            Error::data(
                a.scores[0].display().to_string(),
                None,
                format!("query {id} is not in the manifest"),
            )
        })?);
    }
    let aligned = align(&data, &sets, examples)?;
    let per_stream = dumps
        .iter()
        .zip(&a.scores)
        .map(|(d, p)| matrices_for(d, p, &aligned.examples, &aligned.segments))
        .collect::<Result<Vec<_>>>()?;
    let mut predictions = Vec::new();
    for k in 0..aligned.examples.len() {
        let scores = match &weights {
            None => per_stream[0][k].clone(),
            Some(w) => late_fusion(
                [
                    &per_stream[0][k],
                    &per_stream[1][k],
                    &per_stream[2][k],
                    &per_stream[3][k],
                ],
                w,
            )?,
        };
        predictions.push(Prediction {
            category: aligned.examples[k].category,
            ranking: rank_main_segments(&scores),
            truth: aligned.truths[k],
            segments: aligned.segments[k],
        });
    }
    let report = evaluate(&predictions)?;

    let prior = if a.prior {
        let train = align(&data, &sets, data.examples_in(Split::Train).collect())?;
        let p = sets.values().next().map_or(0, SegmentSet::len);
        if sets.len() != 1 {
            return Err(Error::Config(
                "the frequency prior needs every video to have the same clip count".into(),
            ));
        }
        let ranking = frequency_prior(&train.truths, p)?;
        let preds: Vec<Prediction> = predictions
            .iter()
            .map(|pr| Prediction {
                ranking: ranking.clone(),
                ..pr.clone()
            })
            .collect();
        Some(evaluate(&preds)?)
    } else {
        None
    };

    let mut text = String::new();
    if a.json {
        text = match &prior {
            None => report.to_json(),
            Some(p) => {
                serde_json::to_string_pretty(&serde_json::json!({ a.method.clone(): report, "Frequency Prior": p }))
                    .expect("reports serialize")
            }
        };
        text.push('\n');
    } else {
        let mut rows: Vec<(&str, &EvaluationReport)> = Vec::new();
        if let Some(p) = &prior {
            rows.push(("Frequency Prior", p));
        }
        rows.push((&a.method, &report));
        text.push_str(&EvaluationReport::to_wide_table(&rows));
        if a.per_category {
            text.push('\n');
            text.push_str(&report.to_table(true));
        }
    }
    out.write_all(text.as_bytes()).map_err(stdout_err)
}

fn predict(a: PredictArgs, out: &mut dyn Write) -> Result<()> {
    let tree = parse_bracketed(&a.query_tree)?;
    let data = load_dataset(&a.manifest)?;
    let (model, params) = load_stream(&a.checkpoint)?;
    check_dims(&model, &data)?;
    let pooled = data.pooled_video(&a.video)?;
    let scores = model.score(
        &params,
        &data.embeddings,
        QueryInput {
            tree: &tree,
            main: pooled.table(model.config.main_modality),
            context: pooled.table(model.config.context_modality),
            segments: &pooled.segments,
        },
    )?;
    if !scores.combined.is_finite() {
        return Err(Error::Numeric("non-finite scores".into()));
    }
    let mut text = format!("{:<5} {:<8} {:<8} {:>10}\n", "rank", "main", "context", "score");
    for (rank, (i, j)) in scores.combined.top_pairs(a.top).into_iter().enumerate() {
        text.push_str(&format!(
            "{:<5} {:<8} {:<8} {:>10.5}\n",
            rank + 1,
            pooled.segments.get(i).to_string(),
            pooled.segments.get(j).to_string(),
            scores.combined.get(i, j)
        ));
    }
    out.write_all(text.as_bytes()).map_err(stdout_err)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NodeAttention {
    pub node: usize,
    pub label: String,
    pub token: Option<String>,
    pub main: f64,
    pub context: f64,
    pub signal: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SegmentAttention {
    pub segment: String,
    pub main: f64,
    pub context: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PairScore {
    pub main: String,
    pub context: String,
    pub localization: f32,
    pub relationship: f32,
    pub combined: f32,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AttentionReport {
    pub query_id: u32,
    pub tree: String,
    pub nodes: Vec<NodeAttention>,
    pub segments: Vec<SegmentAttention>,
    pub top_pairs: Vec<PairScore>,
    /// Highest-scoring (main, context) pair.
    pub best_main: String,
    pub best_context: String,
    pub ground_truth_main: String,
}

fn inspect(a: InspectArgs, out: &mut dyn Write) -> Result<()> {
    let data = load_dataset(&a.manifest)?;
    let (model, params) = load_stream(&a.checkpoint)?;
    check_dims(&model, &data)?;
    let ex = data
        .example(a.query_id)
        .ok_or_else(|| Error::Config(format!("no query with id {}", a.query_id)))?;
    let scores = crate::training::score_example(&data, &model, &params, ex)?;
    let tree = data.tree(ex);
    let pooled = data.pooled_video(&ex.video)?;
    let [main, context, signal] = &scores.node_attention;
    let nodes = tree
        .nodes()
        .iter()
        .enumerate()
        .map(|(id, n)| NodeAttention {
            node: id,
            label: n.label.clone(),
            token: n.token.clone(),
            main: main[id],
            context: context[id],
            signal: signal[id],
        })
        .collect();
    let segments = pooled
        .segments
        .segments()
        .iter()
        .enumerate()
        .map(|(k, s)| SegmentAttention {
            segment: s.to_string(),
            main: scores.main_segment_attention[k],
            context: scores.context_segment_attention[k],
        })
        .collect();
    let top_pairs: Vec<PairScore> = scores
        .combined
        .top_pairs(5)
        .into_iter()
        .map(|(i, j)| PairScore {
            main: pooled.segments.get(i).to_string(),
            context: pooled.segments.get(j).to_string(),
            localization: scores.localization.get(i, j),
            relationship: scores.relationship.get(i, j),
            combined: scores.combined.get(i, j),
        })
        .collect();
    let (i, j) = scores.combined.top_pairs(1)[0];
    let report = AttentionReport {
        query_id: ex.id,
        tree: crate::treebank::serialize(tree),
        nodes,
        segments,
        top_pairs,
        best_main: pooled.segments.get(i).to_string(),
        best_context: pooled.segments.get(j).to_string(),
        ground_truth_main: ex.main.to_string(),
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write_file(&a.out, |w| w.write_all(json.as_bytes()))?;
    writeln!(
        out,
        "query {}: best pair main {} context {} (ground truth {}); wrote {}",
        ex.id,
        report.best_main,
        report.best_context,
        report.ground_truth_main,
        a.out.display()
    )
    .map_err(stdout_err)
}

fn grad_check(a: GradCheckArgs, out: &mut dyn Write) -> Result<()> {
    let report = grad_check_suite(a.seed)?;
    let mut text = String::new();
    for c in &report {
        text.push_str(&format!(
            "{:<34} {:>6} params  max rel err {:.3e}\n",
            c.name, c.parameters, c.max_relative_error
        ));
    }
    let worst = report.iter().map(|c| c.max_relative_error).fold(0.0, f64::max);
    text.push_str(&format!(
        "max relative error {worst:.3e} (tolerance {:.0e})\n",
        a.tolerance
    ));
    out.write_all(text.as_bytes()).map_err(stdout_err)?;
    if !(worst < a.tolerance) {
        return Err(Error::Numeric(format!(
            "gradient check failed: {worst:.3e} >= {:.0e}",
            a.tolerance
        )));
    }
    Ok(())
}
