//! Dataset bundle: annotations, trees, clip features and word embeddings,
//! loaded from (or written to) a manifest.

mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::language::WordEmbeddings;
use crate::training::{Category, Split, TrainingExample};
use crate::treebank::{read_tree_file, serialize, ParseTree};
use crate::video::{
    enumerate_segments, pool_segment_features, ClipFeatures, Modality, Segment, SegmentFeatureTable, SegmentSet,
};

pub use synthetic::{generate_synthetic, EventTemplate, ModalityRule, SplitSizes, SyntheticSpec};

/// RGB and optical-flow clip features of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoFeatures {
    pub rgb: ClipFeatures,
    pub flow: ClipFeatures,
}

impl VideoFeatures {
    pub fn get(&self, modality: Modality) -> &ClipFeatures {
        match modality {
            Modality::Rgb => &self.rgb,
            Modality::Flow => &self.flow,
        }
    }

    pub fn clips(&self) -> usize {
        self.rgb.clips()
    }
}

/// Segment set and pooled segment features of one video.
#[derive(Clone, Debug)]
pub struct PooledVideo {
    pub segments: SegmentSet,
    pub rgb: SegmentFeatureTable,
    pub flow: SegmentFeatureTable,
}

impl PooledVideo {
    pub fn new(video: &VideoFeatures) -> Result<Self> {
        let segments = enumerate_segments(video.clips())?;
        Ok(PooledVideo {
            rgb: pool_segment_features(&video.rgb, &segments)?,
            flow: pool_segment_features(&video.flow, &segments)?,
            segments,
        })
    }

    pub fn table(&self, modality: Modality) -> &SegmentFeatureTable {
        match modality {
            Modality::Rgb => &self.rgb,
            Modality::Flow => &self.flow,
        }
    }
}

/// A validated, immutable dataset.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub examples: Vec<TrainingExample>,
    pub trees: Vec<ParseTree>,
    pub videos: BTreeMap<String, VideoFeatures>,
    pub embeddings: WordEmbeddings,
}

impl Dataset {
    /// Cross-checks every reference; `source` names the annotation file in
    /// errors.
    pub fn new(
        examples: Vec<TrainingExample>,
        trees: Vec<ParseTree>,
        videos: BTreeMap<String, VideoFeatures>,
        embeddings: WordEmbeddings,
        source: &str,
    ) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::data(source, None, "no examples"));
        }
        let mut dims: BTreeMap<Modality, (String, usize)> = BTreeMap::new();
        for (id, video) in &videos {
            for m in Modality::ALL {
                let f = video.get(m);
                if f.modality != m {
                    return Err(Error::data(
                        id.as_str(),
                        None,
                        format!("{m} slot holds {} features", f.modality),
                    ));
                }
                if f.clips() == 0 {
                    return Err(Error::data(id.as_str(), None, format!("{m} features have no clips")));
                }
                match dims.get(&m) {
                    Some((first, d)) if *d != f.dim() => {
                        return Err(Error::data(
                            id.as_str(),
                            None,
                            format!("{m} dimension {} differs from {d} in video {first}", f.dim()),
                        ))
                    }
                    Some(_) => {}
                    None => {
                        dims.insert(m, (id.clone(), f.dim()));
                    }
                }
            }
            if video.rgb.clips() != video.flow.clips() {
                return Err(Error::data(
                    id.as_str(),
                    None,
                    format!("{} RGB clips but {} flow clips", video.rgb.clips(), video.flow.clips()),
                ));
            }
        }

        let mut seen = BTreeSet::new();
        for (line, ex) in examples.iter().enumerate() {
            let at = |msg: String| Error::data(source, Some(line + 1), format!("query {}: {msg}", ex.id));
            if !seen.insert(ex.id) {
                return Err(at("duplicate id".into()));
            }
            let video = videos
                .get(&ex.video)
                .ok_or_else(|| at(format!("unknown video {:?}", ex.video)))?;
            if ex.tree_line >= trees.len() {
                return Err(at(format!(
                    "tree line {} missing ({} trees)",
                    ex.tree_line,
                    trees.len()
                )));
            }
            let clips = video.clips();
            let inside = |s: Segment| s.start <= s.end && s.end < clips;
            if !inside(ex.main) {
                return Err(at(format!("main segment {} outside a {clips}-clip video", ex.main)));
            }
            match (ex.category.has_context(), ex.context) {
                (true, None) => return Err(at(format!("{} query without a context segment", ex.category.as_str()))),
                (false, Some(_)) => return Err(at("single-event query with a context segment".into())),
                (_, Some(q)) if !inside(q) => {
                    return Err(at(format!("context segment {q} outside a {clips}-clip video")))
                }
                _ => {}
            }
        }
        Ok(Dataset {
            examples,
            trees,
            videos,
            embeddings,
        })
    }

    pub fn examples_in(&self, split: Split) -> impl Iterator<Item = &TrainingExample> {
        self.examples.iter().filter(move |e| e.split == split)
    }

    pub fn example(&self, id: u32) -> Option<&TrainingExample> {
        self.examples.iter().find(|e| e.id == id)
    }

    pub fn tree(&self, example: &TrainingExample) -> &ParseTree {
        &self.trees[example.tree_line]
    }

    /// Feature dimensions of the two modalities.
    pub fn feature_dims(&self, main: Modality, context: Modality) -> Result<(usize, usize)> {
        let video = self
            .videos
            .values()
            .next()
            .ok_or_else(|| Error::Config("dataset has no videos".into()))?;
        Ok((video.get(main).dim(), video.get(context).dim()))
    }

    pub fn pooled_video(&self, video: &str) -> Result<PooledVideo> {
        let v = self
            .videos
            .get(video)
            .ok_or_else(|| Error::Config(format!("unknown video {video:?}")))?;
        PooledVideo::new(v)
    }

    /// Pooled features of every video.
    pub fn pooled(&self) -> Result<BTreeMap<String, PooledVideo>> {
        self.videos
            .iter()
            .map(|(id, v)| Ok((id.clone(), PooledVideo::new(v)?)))
            .collect()
    }
}

/// Paths tying a dataset together. Relative paths are resolved against the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub trees: PathBuf,
    pub annotations: PathBuf,
    pub features: BTreeMap<String, FeaturePaths>,
    pub embeddings: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturePaths {
    pub rgb: PathBuf,
    pub flow: PathBuf,
}

/// One annotation line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: u32,
    pub video: String,
    pub tree_line: usize,
    pub category: Category,
    pub p: [usize; 2],
    pub q: Option<[usize; 2]>,
    #[serde(default)]
    pub split: Split,
}

impl From<&TrainingExample> for AnnotationRecord {
    fn from(ex: &TrainingExample) -> Self {
        AnnotationRecord {
            id: ex.id,
            video: ex.video.clone(),
            tree_line: ex.tree_line,
            category: ex.category,
            p: [ex.main.start, ex.main.end],
            q: ex.context.map(|q| [q.start, q.end]),
            split: ex.split,
        }
    }
}

impl From<AnnotationRecord> for TrainingExample {
    fn from(r: AnnotationRecord) -> Self {
        TrainingExample {
            id: r.id,
            video: r.video,
            tree_line: r.tree_line,
            category: r.category,
            split: r.split,
            main: Segment::new(r.p[0], r.p[1]),
            context: r.q.map(|q| Segment::new(q[0], q[1])),
        }
    }
}

pub fn read_annotations(reader: impl BufRead, source: &str) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AnnotationRecord =
            serde_json::from_str(&line).map_err(|e| Error::data(source, Some(i + 1), e.to_string()))?;
        if record.p[0] > record.p[1] || record.q.is_some_and(|q| q[0] > q[1]) {
            return Err(Error::data(source, Some(i + 1), "segment start after end"));
        }
        out.push(record.into());
    }
    Ok(out)
}

pub fn write_annotations(examples: &[TrainingExample], mut out: impl Write) -> std::io::Result<()> {
    for ex in examples {
        let line = serde_json::to_string(&AnnotationRecord::from(ex)).map_err(std::io::Error::other)?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(path.display().to_string(), Some(e.line()), e.to_string()))
}

/// Reads and validates everything a manifest points at.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new(""));
    let resolve = |p: &Path| base.join(p);

    let trees_path = resolve(&manifest.trees);
    let trees = read_tree_file(open(&trees_path)?, &trees_path.display().to_string())?;

    let ann_path = resolve(&manifest.annotations);
    let ann_name = ann_path.display().to_string();
    let examples = read_annotations(open(&ann_path)?, &ann_name)?;

    let emb_path = resolve(&manifest.embeddings);
    let embeddings = WordEmbeddings::read_glove(open(&emb_path)?, &emb_path.display().to_string())?;

    let mut videos = BTreeMap::new();
    for (id, paths) in &manifest.features {
        let load = |p: &Path, want: Modality| -> Result<ClipFeatures> {
            let path = resolve(p);
            let name = path.display().to_string();
            let f = ClipFeatures::read_from(open(&path)?, &name)?;
            if f.modality != want {
                return Err(Error::data(
                    name,
                    None,
                    format!("expected {want} features, found {}", f.modality),
                ));
            }
            Ok(f)
        };
        videos.insert(
            id.clone(),
            VideoFeatures {
                rgb: load(&paths.rgb, Modality::Rgb)?,
                flow: load(&paths.flow, Modality::Flow)?,
            },
        );
    }
    Dataset::new(examples, trees, videos, embeddings, &ann_name)
}

/// Writes `dataset` under `dir` (trees.txt, annotations.jsonl,
/// embeddings.txt, features/, manifest.json) and returns the manifest path.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    let feature_dir = dir.join("features");
    fs::create_dir_all(&feature_dir).map_err(|e| Error::io(&feature_dir, e))?;
    let flush = |mut w: BufWriter<File>, path: &Path| w.flush().map_err(|e| Error::io(path, e));

    let trees_path = dir.join("trees.txt");
    let mut w = create(&trees_path)?;
    for t in &dataset.trees {
        writeln!(w, "{}", serialize(t)).map_err(|e| Error::io(&trees_path, e))?;
    }
    flush(w, &trees_path)?;

    let ann_path = dir.join("annotations.jsonl");
    let mut w = create(&ann_path)?;
    write_annotations(&dataset.examples, &mut w).map_err(|e| Error::io(&ann_path, e))?;
    flush(w, &ann_path)?;

    let emb_path = dir.join("embeddings.txt");
    let mut w = create(&emb_path)?;
    dataset
        .embeddings
        .write_glove(&mut w)
        .map_err(|e| Error::io(&emb_path, e))?;
    flush(w, &emb_path)?;

    let mut features = BTreeMap::new();
    for (id, video) in &dataset.videos {
        let mut paths = Vec::new();
        for m in Modality::ALL {
            let rel = PathBuf::from("features").join(format!("{id}.{}.feat", m.as_str()));
            let path = dir.join(&rel);
            let mut w = create(&path)?;
            video.get(m).write_to(&mut w).map_err(|e| Error::io(&path, e))?;
            flush(w, &path)?;
            paths.push(rel);
        }
        let flow = paths.pop().expect("two modalities");
        let rgb = paths.pop().expect("two modalities");
        features.insert(id.clone(), FeaturePaths { rgb, flow });
    }

    let manifest = Manifest {
        trees: "trees.txt".into(),
        annotations: "annotations.jsonl".into(),
        features,
        embeddings: "embeddings.txt".into(),
    };
    let manifest_path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annotation_line_format() {
        let line = r#"{"id":3,"video":"v0","tree_line":2,"category":"before","p":[0,1],"q":[3,3],"split":"test"}"#;
        let ex = read_annotations(line.as_bytes(), "a").unwrap().remove(0);
        assert_eq!(ex.main, Segment::new(0, 1));
        assert_eq!(ex.context, Some(Segment::new(3, 3)));
        assert_eq!(ex.split, Split::Test);
        let mut buf = Vec::new();
        write_annotations(&[ex], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim_end(), line);
    }

    #[test]
    fn split_defaults_to_train_and_q_may_be_null() {
        let line = r#"{"id":1,"video":"v","tree_line":0,"category":"didemo","p":[2,2],"q":null}"#;
        let ex = read_annotations(line.as_bytes(), "a").unwrap().remove(0);
        assert_eq!((ex.split, ex.context), (Split::Train, None));
    }

    #[test]
    fn malformed_line_is_located() {
        let text = "{\"id\":1,\"video\":\"v\",\"tree_line\":0,\"category\":\"didemo\",\"p\":[0,0],\"q\":null}\n{oops\n";
        let err = read_annotations(text.as_bytes(), "ann.jsonl").unwrap_err().to_string();
        assert!(err.starts_with("ann.jsonl:2:"), "{err}");
        let reversed = r#"{"id":1,"video":"v","tree_line":0,"category":"didemo","p":[3,1],"q":null}"#;
        assert!(read_annotations(reversed.as_bytes(), "a").is_err());
    }
}
