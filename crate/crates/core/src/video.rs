//! Candidate segments, segment feature pooling and the clip feature file.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Rgb,
    Flow,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Rgb, Modality::Flow];

    pub fn tag(self) -> u8 {
        match self {
            Modality::Rgb => 0,
            Modality::Flow => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Modality::Rgb),
            1 => Some(Modality::Flow),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Flow => "flow",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Rgb => "RGB",
            Modality::Flow => "Flow",
        })
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rgb" => Ok(Modality::Rgb),
            "flow" => Ok(Modality::Flow),
            other => Err(Error::Config(format!("unknown modality {other:?}"))),
        }
    }
}

/// Inclusive clip span `start..=end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn new(start: usize, end: usize) -> Self {
        Segment { start, end }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains_clip(&self, clip: usize) -> bool {
        self.start <= clip && clip <= self.end
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.start, self.end)
    }
}

/// `[start / C, (end + 1) / C]`.
pub fn location_encoding(segment: Segment, clips: usize) -> [f64; 2] {
    let c = clips as f64;
    [segment.start as f64 / c, (segment.end + 1) as f64 / c]
}

/// Every contiguous clip span of a video, sorted by `(start, end)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentSet {
    clips: usize,
    segments: Vec<Segment>,
    /// True when `segments` is the full enumeration, so indices follow the
    /// closed form.
    complete: bool,
}

pub fn enumerate_segments(clips: usize) -> Result<SegmentSet> {
    if clips == 0 {
        return Err(Error::Config("a video needs at least one clip".into()));
    }
    let segments = (0..clips)
        .flat_map(|a| (a..clips).map(move |b| Segment::new(a, b)))
        .collect();
    Ok(SegmentSet {
        clips,
        segments,
        complete: true,
    })
}

impl SegmentSet {
    /// An arbitrary candidate list. It must contain the whole-video segment
    /// and no duplicates.
    pub fn from_segments(clips: usize, segments: Vec<Segment>) -> Result<Self> {
        if clips == 0 {
            return Err(Error::Config("a video needs at least one clip".into()));
        }
        if let Some(s) = segments.iter().find(|s| s.start > s.end || s.end >= clips) {
            return Err(Error::Config(format!("segment {s} outside a {clips}-clip video")));
        }
        let distinct: std::collections::BTreeSet<_> = segments.iter().collect();
        if distinct.len() != segments.len() {
            return Err(Error::Config("duplicate candidate segments".into()));
        }
        if !segments.contains(&Segment::new(0, clips - 1)) {
            return Err(Error::Config("candidates must include the whole video".into()));
        }
        let complete = segments == enumerate_segments(clips)?.segments;
        Ok(SegmentSet {
            clips,
            segments,
            complete,
        })
    }

    pub fn clips(&self) -> usize {
        self.clips
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn get(&self, index: usize) -> Segment {
        self.segments[index]
    }

    /// Position of `segment` in the enumeration, if it lies inside the video.
    pub fn index_of(&self, segment: Segment) -> Option<usize> {
        let (a, b, c) = (segment.start, segment.end, self.clips);
        if a > b || b >= c {
            return None;
        }
        if !self.complete {
            return self.segments.iter().position(|&s| s == segment);
        }
        // Spans starting before `a` number c + (c-1) + ... + (c-a+1).
        Some(a * c - a * (a.saturating_sub(1)) / 2 + (b - a))
    }

    /// The segment spanning the whole video.
    pub fn whole_video(&self) -> usize {
        self.index_of(Segment::new(0, self.clips - 1)).expect("always present")
    }

    pub fn location(&self, index: usize) -> [f64; 2] {
        location_encoding(self.segments[index], self.clips)
    }

    /// `P × 2` matrix of location encodings.
    pub fn location_matrix(&self) -> Tensor<f64> {
        let rows: Vec<Vec<f64>> = (0..self.len()).map(|i| self.location(i).to_vec()).collect();
        Tensor::from_rows(&rows)
    }
}

/// Pooled features of every candidate segment for one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentFeatureTable {
    pub modality: Modality,
    pub features: Tensor<f32>,
}

/// Mean of the clip rows `a..=b` for every segment.
pub fn pool_segment_features(clip_features: &ClipFeatures, segments: &SegmentSet) -> Result<SegmentFeatureTable> {
    let clips = &clip_features.features;
    if clips.rows() != segments.clips() {
        return Err(Error::Shape(format!(
            "{} clip rows for a {}-clip segment set",
            clips.rows(),
            segments.clips()
        )));
    }
    let dim = clips.cols();
    let mut out = Tensor::zeros(segments.len(), dim);
    for (i, seg) in segments.segments().iter().enumerate() {
        let row = out.row_mut(i);
        for c in seg.start..=seg.end {
            for (o, &x) in row.iter_mut().zip(clips.row(c)) {
                *o += x;
            }
        }
        let n = seg.len() as f32;
        for o in row.iter_mut() {
            *o /= n;
        }
    }
    Ok(SegmentFeatureTable {
        modality: clip_features.modality,
        features: out,
    })
}

pub const FEATURE_MAGIC: &[u8; 9] = b"TCMNFEAT1";

/// Clip-level features of one video in one modality (`C × D_v`).
#[derive(Clone, Debug, PartialEq)]
pub struct ClipFeatures {
    pub modality: Modality,
    pub features: Tensor<f32>,
}

impl ClipFeatures {
    pub fn clips(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// `TCMNFEAT1`, modality tag byte, `u32 C`, `u32 D_v`, then `C·D_v` `f32`
    /// values row-major; all little-endian.
    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        out.write_all(FEATURE_MAGIC)?;
        out.write_all(&[self.modality.tag()])?;
        out.write_all(&(self.clips() as u32).to_le_bytes())?;
        out.write_all(&(self.dim() as u32).to_le_bytes())?;
        for x in self.features.data() {
            out.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut input: impl Read, source: &str) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes).map_err(|e| Error::io(source, e))?;
        let bad = |m: &str| Error::data(source, None, m.to_string());
        let header = FEATURE_MAGIC.len() + 1 + 8;
        if bytes.len() < header || &bytes[..FEATURE_MAGIC.len()] != FEATURE_MAGIC {
            return Err(bad("not a TCMNFEAT1 feature file"));
        }
        let modality = Modality::from_tag(bytes[9]).ok_or_else(|| bad("unknown modality tag"))?;
        let u32_at = |k: usize| u32::from_le_bytes([bytes[k], bytes[k + 1], bytes[k + 2], bytes[k + 3]]) as usize;
        let (clips, dim) = (u32_at(10), u32_at(14));
        let payload = &bytes[header..];
        if payload.len() != clips * dim * 4 {
            return Err(bad(&format!(
                "payload has {} bytes, header promises {clips}x{dim} floats",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(ClipFeatures {
            modality,
            features: Tensor::from_vec(clips, dim, data),
        })
    }
}
