//! Late fusion of the four stream score matrices and the search for fusion
//! weights.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::eval::{evaluate, rank_main_segments, Prediction};
use crate::matching::ScoreMatrix;
use crate::training::Category;
use crate::video::{Modality, SegmentSet};

/// The four (main, context) modality pairs, in weight order.
pub const STREAMS: [(Modality, Modality); 4] = [
    (Modality::Rgb, Modality::Rgb),
    (Modality::Rgb, Modality::Flow),
    (Modality::Flow, Modality::Rgb),
    (Modality::Flow, Modality::Flow),
];

pub fn stream_name(pair: (Modality, Modality)) -> String {
    format!("({},{})", pair.0, pair.1)
}

pub fn stream_index(main: Modality, context: Modality) -> usize {
    STREAMS
        .iter()
        .position(|&p| p == (main, context))
        .expect("all pairs listed")
}

const SUM_TOLERANCE: f64 = 1e-9;

/// Nonnegative fusion weights summing to one, in [`STREAMS`] order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnsembleWeights([f64; 4]);

impl EnsembleWeights {
    pub fn new(weights: [f64; 4]) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!(
                "fusion weights must be nonnegative: {weights:?}"
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Config(format!("fusion weights sum to {sum}, not 1")));
        }
        Ok(EnsembleWeights(weights))
    }

    pub fn one_hot(stream: usize) -> Self {
        let mut w = [0.0; 4];
        w[stream] = 1.0;
        EnsembleWeights(w)
    }

    pub fn uniform() -> Self {
        EnsembleWeights([0.25; 4])
    }

    pub fn get(&self) -> [f64; 4] {
        self.0
    }

    /// `{"(RGB,RGB)": γ, ...}`
    pub fn to_json(&self) -> String {
        let map: BTreeMap<String, f64> = STREAMS
            .iter()
            .zip(self.0)
            .map(|(&pair, w)| (stream_name(pair), w))
            .collect();
        serde_json::to_string_pretty(&map).expect("weights serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: BTreeMap<String, f64> =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("weights file: {e}")))?;
        let mut w = [0.0; 4];
        for (slot, &pair) in w.iter_mut().zip(&STREAMS) {
            let name = stream_name(pair);
            *slot = *map
                .get(&name)
                .ok_or_else(|| Error::Config(format!("weights file lacks {name}")))?;
        }
        if map.len() != 4 {
            return Err(Error::Config("weights file has unknown streams".into()));
        }
        Self::new(w)
    }
}

/// `s_ij = Σ_n γ_n s^n_ij`. Streams with zero weight are skipped, so a
/// one-hot weight reproduces its stream exactly.
pub fn late_fusion(matrices: [&ScoreMatrix; 4], weights: &EnsembleWeights) -> Result<ScoreMatrix> {
    let size = matrices[0].size();
    if matrices.iter().any(|m| m.size() != size) {
        return Err(Error::Shape("stream score matrices differ in size".into()));
    }
    let mut acc: Vec<Option<f64>> = vec![None; size * size];
    for (m, &w) in matrices.iter().zip(&weights.0) {
        if w == 0.0 {
            continue;
        }
        for (a, &x) in acc.iter_mut().zip(m.data()) {
            let term = w * x as f64;
            *a = Some(a.map_or(term, |s| s + term));
        }
    }
    ScoreMatrix::new(size, acc.into_iter().map(|a| a.unwrap_or(0.0) as f32).collect())
}

/// Every weight vector on the simplex grid with spacing `1 / divisions`, in
/// ascending lexicographic order.
pub fn simplex_grid(divisions: usize) -> Vec<[f64; 4]> {
    let n = divisions;
    let mut out = Vec::new();
    for a in 0..=n {
        for b in 0..=n - a {
            for c in 0..=n - a - b {
                let d = n - a - b - c;
                out.push([a, b, c, d].map(|k| k as f64 / n as f64));
            }
        }
    }
    out
}

/// Ground truth of one validation query.
#[derive(Clone, Debug)]
pub struct GridQuery<'a> {
    pub category: Category,
    pub truth: usize,
    pub segments: &'a SegmentSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSearch {
    pub weights: EnsembleWeights,
    pub average_r_at_1: f64,
    pub points: usize,
}

/// Average R@1 of fused scores over `queries`.
pub fn fused_r_at_1(streams: [&[ScoreMatrix]; 4], queries: &[GridQuery<'_>], weights: &EnsembleWeights) -> Result<f64> {
    let preds = queries
        .iter()
        .enumerate()
        .map(|(k, q)| {
            let fused = late_fusion(streams.map(|s| &s[k]), weights)?;
            Ok(Prediction {
                category: q.category,
                ranking: rank_main_segments(&fused),
                truth: q.truth,
                segments: q.segments,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(evaluate(&preds)?.average.r_at_1)
}

/// Exhaustive simplex search for the weights maximizing validation average
/// R@1. Ties go to the lexicographically smallest weight vector.
pub fn grid_search_weights(streams: [&[ScoreMatrix]; 4], queries: &[GridQuery<'_>], step: f64) -> Result<GridSearch> {
    if queries.is_empty() {
        return Err(Error::Config("empty validation set".into()));
    }
    if streams.iter().any(|s| s.len() != queries.len()) {
        return Err(Error::Config(
            "every stream needs one score matrix per validation query".into(),
        ));
    }
    let divisions = (1.0 / step).round();
    if !(step > 0.0) || divisions < 1.0 || (divisions * step - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("grid step {step} does not divide 1")));
    }
    let grid = simplex_grid(divisions as usize);
    let mut best: Option<(f64, EnsembleWeights)> = None;
    for point in &grid {
        let weights = EnsembleWeights::new(*point)?;
        let r1 = fused_r_at_1(streams, queries, &weights)?;
        if best.as_ref().is_none_or(|(b, _)| r1 > *b) {
            best = Some((r1, weights));
        }
    }
    let (average_r_at_1, weights) = best.expect("grid is never empty");
    Ok(GridSearch {
        weights,
        average_r_at_1,
        points: grid.len(),
    })
}

pub const SCORE_MAGIC: &[u8; 10] = b"TCMNSCORE1";

/// Per-query score matrices of one stream on one split.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreDump {
    pub size: usize,
    pub entries: Vec<(u32, ScoreMatrix)>,
}

impl ScoreDump {
    pub fn new(entries: Vec<(u32, ScoreMatrix)>) -> Result<Self> {
        let size = entries.first().map_or(0, |(_, m)| m.size());
        if entries.iter().any(|(_, m)| m.size() != size) {
            return Err(Error::Shape("score dump needs one matrix size for every query".into()));
        }
        Ok(ScoreDump { size, entries })
    }

    pub fn get(&self, id: u32) -> Option<&ScoreMatrix> {
        self.entries.iter().find(|(q, _)| *q == id).map(|(_, m)| m)
    }

    /// `TCMNSCORE1`, `u32` query count, `u32 P`, then per query a `u32` id
    /// and `P·P` `f32` values row-major; all little-endian.
    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        out.write_all(SCORE_MAGIC)?;
        out.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        out.write_all(&(self.size as u32).to_le_bytes())?;
        for (id, m) in &self.entries {
            out.write_all(&id.to_le_bytes())?;
            for x in m.data() {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut input: impl Read, source: &str) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes).map_err(|e| Error::io(source, e))?;
        let bad = |m: String| Error::data(source, None, m);
        let header = SCORE_MAGIC.len() + 8;
        if bytes.len() < header || &bytes[..SCORE_MAGIC.len()] != SCORE_MAGIC {
            return Err(bad("not a TCMNSCORE1 score file".into()));
        }
        let u32_at = |k: usize| u32::from_le_bytes([bytes[k], bytes[k + 1], bytes[k + 2], bytes[k + 3]]);
        let count = u32_at(10) as usize;
        let size = u32_at(14) as usize;
        let record = 4 + size * size * 4;
        if bytes.len() != header + count * record {
            return Err(bad(format!(
                "{} bytes, header promises {count} queries of {size}x{size} scores",
                bytes.len()
            )));
        }
        let entries = (0..count)
            .map(|k| {
                let at = header + k * record;
                let data = bytes[at + 4..at + record]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                Ok((u32_at(at), ScoreMatrix::new(size, data)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ScoreDump { size, entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video::enumerate_segments;

    fn m(data: &[f32]) -> ScoreMatrix {
        ScoreMatrix::new(2, data.to_vec()).unwrap()
    }

    #[test]
    fn weights_validation() {
        assert!(EnsembleWeights::new([0.5, 0.5, 0.1, 0.0]).is_err());
        assert!(EnsembleWeights::new([1.5, -0.5, 0.0, 0.0]).is_err());
        assert!(EnsembleWeights::new([0.1, 0.2, 0.3, 0.4]).is_ok());
    }

    #[test]
    fn weights_json_round_trip() {
        let w = EnsembleWeights::new([0.1, 0.2, 0.3, 0.4]).unwrap();
        let text = w.to_json();
        assert!(text.contains("\"(RGB,Flow)\": 0.2"), "{text}");
        assert_eq!(EnsembleWeights::from_json(&text).unwrap(), w);
        assert!(EnsembleWeights::from_json(r#"{"(RGB,RGB)": 1.0}"#).is_err());
    }

    #[test]
    fn fusion_projection_and_mean() {
        let a = m(&[1.0, -0.0, 3.0, 4.0]);
        let b = m(&[5.0, 6.0, 7.0, 8.0]);
        let c = m(&[-1.0, -2.0, -3.0, -4.0]);
        let d = m(&[0.5, 0.25, 0.125, 2.0]);
        let fused = late_fusion([&a, &b, &c, &d], &EnsembleWeights::one_hot(0)).unwrap();
        let bits = |s: &ScoreMatrix| s.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&fused), bits(&a));
        let mean = late_fusion([&a, &b, &c, &d], &EnsembleWeights::uniform()).unwrap();
        assert_eq!(mean.data(), &[1.375, 1.0625, 1.78125, 2.5]);
    }

    #[test]
    fn fusion_rejects_mixed_sizes() {
        let small = ScoreMatrix::new(1, vec![0.0]).unwrap();
        let big = m(&[0.0; 4]);
        assert!(late_fusion([&small, &big, &big, &big], &EnsembleWeights::uniform()).is_err());
    }

    #[test]
    fn grid_sizes() {
        assert_eq!(simplex_grid(10).len(), 286);
        assert_eq!(simplex_grid(2).len(), 10);
        assert_eq!(simplex_grid(1)[0], [0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn grid_search_errors() {
        let segs = enumerate_segments(1).unwrap();
        let one = [ScoreMatrix::new(1, vec![0.0]).unwrap()];
        let streams: [&[ScoreMatrix]; 4] = [&one, &one, &one, &one];
        assert!(grid_search_weights(streams, &[], 0.1).is_err());
        let q = [GridQuery {
            category: Category::Before,
            truth: 0,
            segments: &segs,
        }];
        assert!(grid_search_weights(streams, &q, 0.3).is_err());
        assert_eq!(grid_search_weights(streams, &q, 0.5).unwrap().points, 10);
        assert_eq!(grid_search_weights(streams, &q, 0.25).unwrap().points, 35);
    }

    #[test]
    fn score_dump_round_trip() {
        let dump = ScoreDump::new(vec![(7, m(&[1.0, 2.0, 3.0, 4.0])), (9, m(&[0.0, -1.0, 0.5, 8.0]))]).unwrap();
        let mut buf = Vec::new();
        dump.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..10], b"TCMNSCORE1");
        assert_eq!(buf.len(), 10 + 8 + 2 * (4 + 16));
        assert_eq!(ScoreDump::read_from(buf.as_slice(), "s").unwrap(), dump);
        buf.truncate(buf.len() - 1);
        assert!(ScoreDump::read_from(buf.as_slice(), "s").is_err());
    }
}
