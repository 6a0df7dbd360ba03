//! Three small operations behind the demo page. Each takes plain numbers or
//! strings and returns a JSON string, so the page needs no glue beyond
//! `JSON.parse`.

use serde::Serialize;
use tcmn::data::{generate_synthetic, ModalityRule, SplitSizes, SyntheticSpec};
use tcmn::eval::{iou, rank_main_segments};
use tcmn::training::{score_example, train_stream, Category, LossConfig, Split, StreamConfig};
use tcmn::treebank::{parse_bracketed, serialize, ParseTree};
use tcmn::video::{enumerate_segments, Modality, Segment};
use tcmn::Error;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct TreeView {
    label: String,
    token: Option<String>,
    children: Vec<TreeView>,
}

fn view(tree: &ParseTree, id: usize) -> TreeView {
    let n = tree.node(id);
    TreeView {
        label: n.label.clone(),
        token: n.token.clone(),
        children: n.children.iter().map(|&c| view(tree, c)).collect(),
    }
}

#[derive(Serialize)]
#[serde(untagged)]
enum ParseReply {
    Ok {
        canonical: String,
        tokens: Vec<String>,
        nodes: usize,
        tree: TreeView,
    },
    Err {
        error: String,
        offset: Option<usize>,
    },
}

fn to_json(v: &impl Serialize) -> String {
    serde_json::to_string(v).expect("demo replies serialize")
}

/// Parses one bracketed tree. Errors carry the byte offset when there is one.
#[wasm_bindgen]
pub fn parse_tree(text: &str) -> String {
    let reply = match parse_bracketed(text) {
        Ok(t) => ParseReply::Ok {
            canonical: serialize(&t),
            tokens: t.tokens().into_iter().map(String::from).collect(),
            nodes: t.len(),
            tree: view(&t, t.root()),
        },
        Err(e) => ParseReply::Err {
            offset: match &e {
                Error::Parse { offset, .. } => Some(*offset),
                _ => None,
            },
            error: e.to_string(),
        },
    };
    to_json(&reply)
}

#[derive(Serialize)]
struct SegmentRow {
    index: usize,
    start: usize,
    end: usize,
    location: [f64; 2],
    iou: f64,
}

/// Every candidate segment of a `clips`-clip video with its IoU against
/// `[start, end]`.
#[wasm_bindgen]
pub fn segments(clips: usize, start: usize, end: usize) -> Result<String, JsError> {
    let set = enumerate_segments(clips).map_err(|e| JsError::new(&e.to_string()))?;
    if start > end || end >= clips {
        return Err(JsError::new(&format!(
            "[{start}, {end}] is not a segment of a {clips}-clip video"
        )));
    }
    let truth = Segment::new(start, end);
    let rows: Vec<SegmentRow> = set
        .segments()
        .iter()
        .enumerate()
        .map(|(index, &s)| SegmentRow {
            index,
            start: s.start,
            end: s.end,
            location: set.location(index),
            iou: iou(s, truth),
        })
        .collect();
    Ok(to_json(&rows))
}

#[derive(Serialize)]
pub struct TrainReply {
    pub query: String,
    pub category: String,
    pub losses: Vec<f64>,
    pub segments: Vec<[usize; 2]>,
    /// Row-major combined scores, `segments.len()` squared.
    pub scores: Vec<f32>,
    pub truth_main: usize,
    pub truth_context: Option<usize>,
    pub predicted_main: usize,
    pub test_r_at_1: f64,
}

/// Trains one (RGB, Flow) stream on a tiny synthetic set and scores the
/// first test query.
pub fn train_small(seed: u64, epochs: usize) -> tcmn::Result<TrainReply> {
    let data = generate_synthetic(&SyntheticSpec {
        categories: vec![Category::Before, Category::After],
        queries: SplitSizes {
            train: 3,
            val: 0,
            test: 3,
        },
        main_signal: ModalityRule::Rgb,
        context_signal: ModalityRule::Flow,
        seed,
        ..SyntheticSpec::default()
    })?;
    let stream = StreamConfig {
        epochs,
        hidden: 8,
        label_dim: 4,
        seed,
        ..StreamConfig::new(Modality::Rgb, Modality::Flow)
    };
    let trained = train_stream(&data, &stream, &LossConfig::default())?;
    let tests: Vec<_> = data.examples_in(Split::Test).collect();
    let mut hits = 0;
    let mut first = None;
    for ex in &tests {
        let scores = score_example(&data, &trained.model, &trained.params, ex)?;
        let set = enumerate_segments(data.videos[&ex.video].clips())?;
        let truth = set.index_of(ex.main).expect("generated truth is a candidate");
        let best = rank_main_segments(&scores.combined)[0];
        hits += (best == truth) as usize;
        if first.is_none() {
            first = Some((ex, scores, set, truth, best));
        }
    }
    let (ex, scores, set, truth, best) = first.expect("test split is not empty");
    Ok(TrainReply {
        query: serialize(data.tree(ex)),
        category: ex.category.title().to_string(),
        losses: trained.log.iter().map(|e| e.mean_loss).collect(),
        segments: set.segments().iter().map(|s| [s.start, s.end]).collect(),
        scores: scores.combined.data().to_vec(),
        truth_main: truth,
        truth_context: ex.context.and_then(|c| set.index_of(c)),
        predicted_main: best,
        test_r_at_1: 100.0 * hits as f64 / tests.len() as f64,
    })
}

#[wasm_bindgen]
pub fn train_demo(seed: u32, epochs: u32) -> Result<String, JsError> {
    if epochs == 0 || epochs > 500 {
        return Err(JsError::new("epochs must be between 1 and 500"));
    }
    let reply = train_small(seed as u64, epochs as usize).map_err(|e| JsError::new(&e.to_string()))?;
    Ok(to_json(&reply))
}
