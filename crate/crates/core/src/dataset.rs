//! The 24-caption spatial-relation task: caption enumeration, split
//! specifications, record generation and the JSON Lines dataset format.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoders::{add_noise, mhe, synthetic_clusters, FeatureSource, FeatureTable, FeatureVector};
use crate::pregroup::{LEFT_OF, RIGHT_OF, SHAPES};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid split spec:\n  {}", .0.join("\n  "))]
    InvalidSplit(Vec<String>),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("feature `{0}` not found")]
    MissingFeature(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Cylinder,
    Sphere,
    Cube,
    Cone,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Cylinder, Shape::Sphere, Shape::Cube, Shape::Cone];

    /// Position of the hot entry in the one-hot code.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        SHAPES[self.index()]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Shape {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Shape::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| format!("unknown shape `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Left,
    Right,
}

impl Relation {
    pub const ALL: [Relation; 2] = [Relation::Left, Relation::Right];

    pub fn word(self) -> &'static str {
        match self {
            Relation::Left => LEFT_OF,
            Relation::Right => RIGHT_OF,
        }
    }

    pub fn swap(self) -> Self {
        match self {
            Relation::Left => Relation::Right,
            Relation::Right => Relation::Left,
        }
    }

    pub fn from_word(w: &str) -> Option<Self> {
        Relation::ALL.into_iter().find(|r| r.word() == w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub subject: Shape,
    pub relation: Relation,
    pub object: Shape,
}

impl Triple {
    pub fn new(subject: Shape, relation: Relation, object: Shape) -> Self {
        Self { subject, relation, object }
    }

    pub fn caption(&self) -> String {
        format!("{} {} {}", self.subject, self.relation.word(), self.object)
    }

    pub fn negative(&self) -> Self {
        Self { relation: self.relation.swap(), ..*self }
    }

    pub fn parse(caption: &str) -> Option<Self> {
        let mut it = caption.split_ascii_whitespace();
        let (s, r, o) = (it.next()?, it.next()?, it.next()?);
        if it.next().is_some() {
            return None;
        }
        let t = Triple::new(s.parse().ok()?, Relation::from_word(r)?, o.parse().ok()?);
        (t.subject != t.object).then_some(t)
    }
}

/// All ordered shape pairs with both relations, sorted by caption string.
pub fn enumerate_captions() -> Vec<Triple> {
    let mut out: Vec<Triple> = Shape::ALL
        .into_iter()
        .flat_map(|s| {
            Shape::ALL
                .into_iter()
                .filter(move |&o| o != s)
                .flat_map(move |o| Relation::ALL.into_iter().map(move |r| Triple::new(s, r, o)))
        })
        .collect();
    out.sort_by_key(|t| t.caption());
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    IdVal,
    OodVal,
    OodTest,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::IdVal, Split::OodVal, Split::OodTest];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::IdVal => "id_val",
            Split::OodVal => "ood_val",
            Split::OodTest => "ood_test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Split::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| format!("unknown split `{s}`"))
    }
}

/// Caption string to split label. In-distribution validation is not a
/// caption label; it is carved out of train captions' images.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SplitSpec(pub BTreeMap<String, Split>);

// OOD captions come in closed subject/object pairs, so the negative of an
// OOD image is never seen in training either. The odd ood_val count leaves
// one pair split between train and ood_val.
const DEFAULT_TRAIN: [&str; 11] = [
    "cylinder isLeftOf cone",
    "cylinder isRightOf cone",
    "sphere isLeftOf cylinder",
    "sphere isRightOf cylinder",
    "cube isLeftOf sphere",
    "cube isRightOf sphere",
    "cone isLeftOf sphere",
    "cone isRightOf sphere",
    "cone isLeftOf cube",
    "cone isRightOf cube",
    "cube isRightOf cylinder",
];

const DEFAULT_OOD_VAL: [&str; 5] = [
    "cylinder isLeftOf cube",
    "cylinder isRightOf cube",
    "sphere isLeftOf cone",
    "sphere isRightOf cone",
    "cube isLeftOf cylinder",
];

/// Images per train caption held out as in-distribution validation.
pub const ID_VAL_PER_CAPTION: usize = 2;

pub fn default_split() -> SplitSpec {
    let mut map = BTreeMap::new();
    for t in enumerate_captions() {
        let c = t.caption();
        let label = if DEFAULT_TRAIN.contains(&c.as_str()) {
            Split::Train
        } else if DEFAULT_OOD_VAL.contains(&c.as_str()) {
            Split::OodVal
        } else {
            Split::OodTest
        };
        map.insert(c, label);
    }
    SplitSpec(map)
}

impl SplitSpec {
    pub fn label(&self, t: &Triple) -> Option<Split> {
        self.0.get(&t.caption()).copied()
    }

    pub fn captions(&self, split: Split) -> Vec<Triple> {
        enumerate_captions().into_iter().filter(|t| self.label(t) == Some(split)).collect()
    }

    /// Every violated constraint, or `Ok` if none.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut errs = Vec::new();
        let all = enumerate_captions();
        for t in &all {
            if !self.0.contains_key(&t.caption()) {
                errs.push(format!("caption `{}` is not labelled", t.caption()));
            }
        }
        for (c, s) in &self.0 {
            if Triple::parse(c).is_none() {
                errs.push(format!("`{c}` is not a task caption"));
            }
            if *s == Split::IdVal {
                errs.push(format!("`{c}`: id_val is drawn from train captions, not assigned to captions"));
            }
        }
        let train = self.captions(Split::Train);
        if train.is_empty() {
            errs.push("no train captions".into());
        }
        for shape in Shape::ALL {
            if !train.iter().any(|t| t.subject == shape || t.object == shape) {
                errs.push(format!("shape `{shape}` never appears in a train caption"));
            }
        }
        for r in Relation::ALL {
            if !train.iter().any(|t| t.relation == r) {
                errs.push(format!("relation `{}` never appears in a train caption", r.word()));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(DatasetError::InvalidSplit(errs))
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self, DatasetError> {
        let spec: SplitSpec = serde_json::from_str(s).map_err(|e| DatasetError::Parse { line: e.line(), msg: e.to_string() })?;
        spec.validate()?;
        Ok(spec)
    }
}

pub fn load_split(path: impl AsRef<Path>) -> Result<SplitSpec, DatasetError> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| DatasetError::Io(format!("{}: {e}", path.as_ref().display())))?;
    SplitSpec::from_json_str(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub id: String,
    pub subject: Shape,
    pub object: Shape,
    pub relation: Relation,
    pub caption: String,
    pub neg_caption: String,
    pub split: Split,
    pub features: FeatureVector,
}

impl CaptionRecord {
    pub fn triple(&self) -> Triple {
        Triple::new(self.subject, self.relation, self.object)
    }
}

/// Where image features come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureSpec {
    /// Multi-hot caption vectors plus Gaussian input noise.
    Mhe { sigma: f64 },
    /// Per-caption Gaussian clusters standing in for vision-model embeddings.
    Synthetic { dim: usize, sigma: f64 },
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec::Mhe { sigma: 0.1 }
    }
}

pub const IMAGES_PER_CAPTION: usize = 20;

/// Feature rows for every `<caption_index>_<image_index>` id.
pub fn feature_table<R: Rng + ?Sized>(spec: &FeatureSpec, images_per_caption: usize, rng: &mut R) -> FeatureTable {
    let captions = enumerate_captions();
    match spec {
        FeatureSpec::Mhe { sigma } => {
            let mut table = FeatureTable::default();
            for (ci, t) in captions.iter().enumerate() {
                let clean = mhe(t.subject, t.relation, t.object).expect("task captions have distinct shapes");
                for i in 0..images_per_caption {
                    table.ids.push(format!("{ci}_{i}"));
                    table.rows.push(add_noise(&clean, *sigma, rng).values);
                }
            }
            table
        }
        FeatureSpec::Synthetic { dim, sigma } => synthetic_clusters(captions.len(), images_per_caption, *dim, *sigma, rng),
    }
}

/// Build records for every caption. The last `ID_VAL_PER_CAPTION` images of
/// each train caption become in-distribution validation.
pub fn records_from_table(
    split: &SplitSpec,
    table: &FeatureTable,
    source: FeatureSource,
    images_per_caption: usize,
) -> Result<Vec<CaptionRecord>, DatasetError> {
    split.validate()?;
    let mut out = Vec::with_capacity(24 * images_per_caption);
    for (ci, t) in enumerate_captions().iter().enumerate() {
        let label = split.label(t).expect("validated");
        for i in 0..images_per_caption {
            let id = format!("{ci}_{i}");
            let values = table.get(&id).ok_or_else(|| DatasetError::MissingFeature(id.clone()))?.to_vec();
            let rec_split = if label == Split::Train && i + ID_VAL_PER_CAPTION >= images_per_caption {
                Split::IdVal
            } else {
                label
            };
            out.push(CaptionRecord {
                id,
                subject: t.subject,
                object: t.object,
                relation: t.relation,
                caption: t.caption(),
                neg_caption: t.negative().caption(),
                split: rec_split,
                features: FeatureVector::new(values, source),
            });
        }
    }
    Ok(out)
}

pub fn generate<R: Rng + ?Sized>(
    split: &SplitSpec,
    spec: &FeatureSpec,
    images_per_caption: usize,
    rng: &mut R,
) -> Result<Vec<CaptionRecord>, DatasetError> {
    split.validate()?;
    let table = feature_table(spec, images_per_caption, rng);
    let source = match spec {
        FeatureSpec::Mhe { .. } => FeatureSource::Mhe,
        FeatureSpec::Synthetic { .. } => FeatureSource::External,
    };
    records_from_table(split, &table, source, images_per_caption)
}

/// On-disk form: features inline or by reference into a feature CSV.
#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    id: String,
    subject: Shape,
    object: Shape,
    relation: Relation,
    caption: String,
    neg_caption: String,
    split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<FeatureVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features_ref: Option<String>,
}

pub fn write_jsonl<W: Write>(records: &[CaptionRecord], mut out: W) -> Result<(), DatasetError> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| DatasetError::Io(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| DatasetError::Io(e.to_string()))?;
    }
    Ok(())
}

/// Parse JSON Lines; `features_ref` entries resolve against `table`.
pub fn read_jsonl<R: BufRead>(input: R, table: Option<&FeatureTable>) -> Result<Vec<CaptionRecord>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DatasetError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| DatasetError::Parse { line: line_no, msg };
        let r: RecordLine = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let features = match (r.features, r.features_ref) {
            (Some(f), _) => f,
            (None, Some(id)) => {
                let row = table
                    .ok_or_else(|| err(format!("`features_ref: {id}` needs a feature file")))?
                    .get(&id)
                    .ok_or(DatasetError::MissingFeature(id))?;
                FeatureVector::new(row.to_vec(), FeatureSource::External)
            }
            (None, None) => return Err(err("record has no features".into())),
        };
        if features.values.is_empty() || features.values.iter().any(|v| !v.is_finite()) {
            return Err(err("features must be non-empty and finite".into()));
        }
        let t = Triple::new(r.subject, r.relation, r.object);
        if r.subject == r.object || r.caption != t.caption() || r.neg_caption != t.negative().caption() {
            return Err(err(format!("record `{}` is inconsistent with its caption fields", r.id)));
        }
        out.push(CaptionRecord {
            id: r.id,
            subject: r.subject,
            object: r.object,
            relation: r.relation,
            caption: r.caption,
            neg_caption: r.neg_caption,
            split: r.split,
            features,
        });
    }
    Ok(out)
}

pub fn save_jsonl(records: &[CaptionRecord], path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let f = std::fs::File::create(path.as_ref()).map_err(|e| DatasetError::Io(format!("{}: {e}", path.as_ref().display())))?;
    let mut w = std::io::BufWriter::new(f);
    write_jsonl(records, &mut w)?;
    w.flush().map_err(|e| DatasetError::Io(e.to_string()))
}

pub fn load_jsonl(path: impl AsRef<Path>, table: Option<&FeatureTable>) -> Result<Vec<CaptionRecord>, DatasetError> {
    let f = std::fs::File::open(path.as_ref()).map_err(|e| DatasetError::Io(format!("{}: {e}", path.as_ref().display())))?;
    read_jsonl(std::io::BufReader::new(f), table)
}

pub fn count_by_split(records: &[CaptionRecord]) -> BTreeMap<Split, usize> {
    let mut m = BTreeMap::new();
    for r in records {
        *m.entry(r.split).or_insert(0) += 1;
    }
    m
}
