//! Synthetic datasets with planted events, for end-to-end checks at desk
//! scale.
//!
//! Every query gets its own video. The main event (and the context event,
//! for temporal categories) is planted as a fixed pattern vector added to
//! its clips in the modalities chosen by [`ModalityRule`], on top of Gaussian
//! noise everywhere. With `distractors` on, a second copy of the main event
//! is planted where it breaks the temporal relation, so a model can only
//! pick the right copy by also finding the context event.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, VideoFeatures};
use crate::error::{Error, Result};
use crate::language::WordEmbeddings;
use crate::tensor::Tensor;
use crate::training::{Category, Split, TrainingExample};
use crate::treebank::{Nested, ParseTree};
use crate::video::{ClipFeatures, Modality, Segment};

/// Which modalities carry an event's pattern.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModalityRule {
    Rgb,
    Flow,
    #[default]
    Both,
}

impl ModalityRule {
    pub fn covers(self, m: Modality) -> bool {
        matches!(
            (self, m),
            (ModalityRule::Both, _) | (ModalityRule::Rgb, Modality::Rgb) | (ModalityRule::Flow, Modality::Flow)
        )
    }
}

/// Queries per category in each split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub clips: usize,
    pub rgb_dim: usize,
    pub flow_dim: usize,
    pub word_dim: usize,
    pub event_types: usize,
    pub categories: Vec<Category>,
    pub queries: SplitSizes,
    pub signal: f64,
    pub noise: f64,
    pub main_signal: ModalityRule,
    pub context_signal: ModalityRule,
    pub distractors: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            clips: 6,
            rgb_dim: 16,
            flow_dim: 16,
            word_dim: 16,
            event_types: 2,
            categories: Category::ALL.to_vec(),
            queries: SplitSizes {
                train: 8,
                val: 4,
                test: 8,
            },
            signal: 8.0,
            noise: 0.1,
            main_signal: ModalityRule::Both,
            context_signal: ModalityRule::Both,
            distractors: true,
            seed: 0,
        }
    }
}

/// A describable event: "the `subject` `verb`".
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EventTemplate {
    pub subject: &'static str,
    pub verb: &'static str,
}

pub const EVENTS: [EventTemplate; 8] = [
    EventTemplate {
        subject: "dog",
        verb: "barks",
    },
    EventTemplate {
        subject: "man",
        verb: "jumps",
    },
    EventTemplate {
        subject: "woman",
        verb: "waves",
    },
    EventTemplate {
        subject: "car",
        verb: "stops",
    },
    EventTemplate {
        subject: "baby",
        verb: "cries",
    },
    EventTemplate {
        subject: "bird",
        verb: "sings",
    },
    EventTemplate {
        subject: "door",
        verb: "opens",
    },
    EventTemplate {
        subject: "light",
        verb: "flickers",
    },
];

fn node(label: &str, children: Vec<Nested>) -> Nested {
    Nested::Node(label.to_string(), children)
}

fn word(tag: &str, w: &str) -> Nested {
    node(tag, vec![Nested::Leaf(w.to_string())])
}

/// `(S (NP (DT the) (NN dog)) (VP (VBZ barks)))`
fn clause(e: EventTemplate) -> Nested {
    node(
        "S",
        vec![
            node("NP", vec![word("DT", "the"), word("NN", e.subject)]),
            node("VP", vec![word("VBZ", e.verb)]),
        ],
    )
}

/// Query tree for the given category. `fronted` picks the
/// "Before X, M" shape over "M before X" where that exists.
fn query_tree(category: Category, main: EventTemplate, context: Option<EventTemplate>, fronted: bool) -> Nested {
    let m = clause(main);
    let Some(context) = context else {
        return m;
    };
    let (head_tag, signal) = match category {
        Category::Before => ("IN", "before"),
        Category::After => ("IN", "after"),
        Category::Then => ("RB", "then"),
        Category::While => ("IN", "while"),
        Category::DiDeMo => unreachable!("single-event queries have no context"),
    };
    let sbar = node("SBAR", vec![word(head_tag, signal), clause(context)]);
    if fronted && matches!(category, Category::Before | Category::After) {
        node("S", vec![sbar, word(",", ","), m])
    } else {
        node("S", vec![m, sbar])
    }
}

/// Every word the generator can emit.
fn lexicon(spec: &SyntheticSpec) -> Vec<String> {
    let mut words: Vec<String> = ["the", "before", "after", "then", "while", ","]
        .into_iter()
        .map(String::from)
        .collect();
    for e in &EVENTS[..spec.event_types] {
        words.push(e.subject.to_string());
        words.push(e.verb.to_string());
    }
    words
}

fn validate(spec: &SyntheticSpec) -> Result<()> {
    let bad = |m: String| Err(Error::Config(format!("synthetic spec: {m}")));
    if spec.clips < 3 {
        return bad(format!("need at least 3 clips, got {}", spec.clips));
    }
    if spec.rgb_dim == 0 || spec.flow_dim == 0 || spec.word_dim == 0 {
        return bad("feature and word dimensions must be positive".into());
    }
    if !(2..=EVENTS.len()).contains(&spec.event_types) {
        return bad(format!("event_types must be in 2..={}", EVENTS.len()));
    }
    if spec.categories.is_empty() {
        return bad("no categories".into());
    }
    if !(spec.signal > 0.0 && spec.signal.is_finite()) || !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return bad("signal must be positive and noise nonnegative".into());
    }
    if spec.queries.train == 0 {
        return bad("no training queries".into());
    }
    Ok(())
}

/// Main, context and distractor clips for one query.
struct Placement {
    main: usize,
    context: Option<Segment>,
    distractor: Option<usize>,
}

fn place(category: Category, clips: usize, distractors: bool, rng: &mut impl Rng) -> Placement {
    let pick = |rng: &mut dyn rand::RngCore, options: &[usize]| -> Option<usize> { options.choose(rng).copied() };
    let all: Vec<usize> = (0..clips).collect();
    match category {
        Category::DiDeMo => Placement {
            main: rng.random_range(0..clips),
            context: None,
            distractor: None,
        },
        Category::Before | Category::After => {
            // Three ordered clips a < b < c: main first (before) or last
            // (after), context in the middle when a distractor is wanted.
            let mut chosen: Vec<usize> = all
                .choose_multiple(rng, if distractors { 3 } else { 2 })
                .copied()
                .collect();
            chosen.sort_unstable();
            let (main, context, distractor) = match (category, distractors) {
                (Category::Before, true) => (chosen[0], chosen[1], Some(chosen[2])),
                (Category::After, true) => (chosen[2], chosen[1], Some(chosen[0])),
                (Category::Before, false) => (chosen[0], chosen[1], None),
                _ => (chosen[1], chosen[0], None),
            };
            Placement {
                main,
                context: Some(Segment::new(context, context)),
                distractor,
            }
        }
        Category::Then => {
            let main = rng.random_range(0..clips - 1);
            let q = main + 1;
            let options: Vec<usize> = all.iter().copied().filter(|&d| d != main && d != q).collect();
            Placement {
                main,
                context: Some(Segment::new(q, q)),
                distractor: if distractors { pick(rng, &options) } else { None },
            }
        }
        Category::While => {
            // Context spans 2 or 3 clips (never the whole video) and
            // contains the main clip.
            let max_len = 3.min(clips - 1);
            let len = rng.random_range(2..=max_len);
            let start = rng.random_range(0..=clips - len);
            let q = Segment::new(start, start + len - 1);
            let main = rng.random_range(q.start..=q.end);
            let options: Vec<usize> = all.iter().copied().filter(|&d| !q.contains_clip(d)).collect();
            Placement {
                main,
                context: Some(q),
                distractor: if distractors { pick(rng, &options) } else { None },
            }
        }
    }
}

fn unit_vector(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / norm).collect()
}

/// Builds the whole dataset in memory. The same spec always yields the same
/// dataset.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    validate(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let words = lexicon(spec);
    let word_table: Vec<f32> = (0..words.len() * spec.word_dim)
        .map(|_| {
            let x: f64 = StandardNormal.sample(&mut rng);
            (x / (spec.word_dim as f64).sqrt()) as f32
        })
        .collect();
    let embeddings = WordEmbeddings::new(&words, &Tensor::from_vec(words.len(), spec.word_dim, word_table))?;

    let dims = |m: Modality| match m {
        Modality::Rgb => spec.rgb_dim,
        Modality::Flow => spec.flow_dim,
    };
    // patterns[event][modality]
    let patterns: Vec<[Vec<f64>; 2]> = (0..spec.event_types)
        .map(|_| {
            [
                unit_vector(spec.rgb_dim, &mut rng),
                unit_vector(spec.flow_dim, &mut rng),
            ]
        })
        .collect();
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;

    let mut examples = Vec::new();
    let mut trees = Vec::new();
    let mut videos = BTreeMap::new();
    for (split, n) in [
        (Split::Train, spec.queries.train),
        (Split::Val, spec.queries.val),
        (Split::Test, spec.queries.test),
    ] {
        for &category in &spec.categories {
            for _ in 0..n {
                let id = examples.len() as u32;
                let main_event = rng.random_range(0..spec.event_types);
                let context_event = category.has_context().then(|| {
                    let k = rng.random_range(0..spec.event_types - 1);
                    if k >= main_event {
                        k + 1
                    } else {
                        k
                    }
                });
                let fronted = rng.random_bool(0.5);
                let placement = place(category, spec.clips, spec.distractors, &mut rng);

                let mut features = Modality::ALL.map(|m| {
                    let d = dims(m);
                    let data: Vec<f64> = (0..spec.clips * d).map(|_| noise.sample(&mut rng)).collect();
                    (d, data)
                });
                let mut plant = |event: usize, clip: usize, rule: ModalityRule| {
                    for (mi, m) in Modality::ALL.into_iter().enumerate() {
                        if rule.covers(m) {
                            let (d, data) = &mut features[mi];
                            for (x, p) in data[clip * *d..(clip + 1) * *d].iter_mut().zip(&patterns[event][mi]) {
                                *x += spec.signal * p;
                            }
                        }
                    }
                };
                plant(main_event, placement.main, spec.main_signal);
                if let Some(d) = placement.distractor {
                    plant(main_event, d, spec.main_signal);
                }
                if let (Some(q), Some(e)) = (placement.context, context_event) {
                    for clip in q.start..=q.end {
                        plant(e, clip, spec.context_signal);
                    }
                }
                let [rgb, flow] = features;
                let to_clip = |m: Modality, (d, data): (usize, Vec<f64>)| ClipFeatures {
                    modality: m,
                    features: Tensor::from_vec(spec.clips, d, data.into_iter().map(|x| x as f32).collect()),
                };
                let video = format!("v{id:04}");
                videos.insert(
                    video.clone(),
                    VideoFeatures {
                        rgb: to_clip(Modality::Rgb, rgb),
                        flow: to_clip(Modality::Flow, flow),
                    },
                );

                let tree = query_tree(category, EVENTS[main_event], context_event.map(|k| EVENTS[k]), fronted);
                trees.push(ParseTree::from_nested(&tree));
                examples.push(TrainingExample {
                    id,
                    video,
                    tree_line: id as usize,
                    category,
                    split,
                    main: Segment::new(placement.main, placement.main),
                    context: placement.context,
                });
            }
        }
    }
    Dataset::new(examples, trees, videos, embeddings, "synthetic")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treebank::serialize;

    #[test]
    fn templates() {
        let (m, x) = (EVENTS[0], EVENTS[1]);
        let t = ParseTree::from_nested(&query_tree(Category::Before, m, Some(x), false));
        assert_eq!(
            serialize(&t),
            "(S (S (NP (DT the) (NN dog)) (VP (VBZ barks))) (SBAR (IN before) (S (NP (DT the) (NN man)) (VP (VBZ jumps)))))"
        );
        let t = ParseTree::from_nested(&query_tree(Category::After, m, Some(x), true));
        assert_eq!(t.tokens().join(" "), "after the man jumps , the dog barks");
        let t = ParseTree::from_nested(&query_tree(Category::Then, m, Some(x), true));
        assert_eq!(t.tokens().join(" "), "the dog barks then the man jumps");
        let t = ParseTree::from_nested(&query_tree(Category::DiDeMo, m, None, false));
        assert_eq!(t.tokens().join(" "), "the dog barks");
    }

    #[test]
    fn placements_respect_the_relations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            for category in Category::ALL {
                let p = place(category, 6, true, &mut rng);
                let d = p.distractor;
                match (category, p.context) {
                    (Category::DiDeMo, None) => assert!(d.is_none()),
                    (Category::Before, Some(q)) => assert!(p.main < q.start && d.unwrap() > q.end),
                    (Category::After, Some(q)) => assert!(p.main > q.end && d.unwrap() < q.start),
                    (Category::Then, Some(q)) => {
                        assert_eq!(q, Segment::new(p.main + 1, p.main + 1));
                        assert!(d.unwrap() != p.main && !q.contains_clip(d.unwrap()));
                    }
                    (Category::While, Some(q)) => {
                        assert!(q.contains_clip(p.main) && (2..=3).contains(&q.len()));
                        assert!(!q.contains_clip(d.unwrap()));
                    }
                    other => panic!("bad placement {other:?}"),
                }
            }
        }
    }

    #[test]
    fn rejects_impossible_specs() {
        for spec in [
            SyntheticSpec {
                clips: 0,
                ..Default::default()
            },
            SyntheticSpec {
                event_types: 1,
                ..Default::default()
            },
            SyntheticSpec {
                rgb_dim: 0,
                ..Default::default()
            },
            SyntheticSpec {
                noise: -1.0,
                ..Default::default()
            },
        ] {
            assert!(matches!(generate_synthetic(&spec), Err(Error::Config(_))));
        }
    }

    #[test]
    fn modality_rule_plants_only_where_asked() {
        let spec = SyntheticSpec {
            noise: 0.0,
            main_signal: ModalityRule::Rgb,
            context_signal: ModalityRule::Flow,
            ..Default::default()
        };
        let data = generate_synthetic(&spec).unwrap();
        for ex in &data.examples {
            let v = &data.videos[&ex.video];
            let energy = |f: &ClipFeatures, clip: usize| f.features.row(clip).iter().map(|x| x * x).sum::<f32>();
            assert!(energy(&v.rgb, ex.main.start) > 0.5);
            assert_eq!(
                energy(&v.flow, ex.main.start) > 0.5,
                ex.context.is_some_and(|q| q.contains_clip(ex.main.start))
            );
            if let Some(q) = ex.context {
                assert!(energy(&v.flow, q.start) > 0.5);
            }
        }
    }
}
