//! CSV manifests.
//!
//! Canonical column order:
//!
//! ```text
//! id,image_path,label,dark_corner,hair,gel_border,gel_bubble,ruler,ink,patches,mask_path,annotation_source
//! ```
//!
//! Manifests produced by test-time censoring append
//! `noisecrop,mask_provenance,mask_low_confidence`. Paths are stored as
//! written and resolved relative to the manifest's directory.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::artifact::{Artifact, ArtifactVector, N_ARTIFACTS};
use crate::error::{Error, Result};

pub const CANONICAL_COLUMNS: [&str; 12] = [
    "id",
    "image_path",
    "label",
    "dark_corner",
    "hair",
    "gel_border",
    "gel_bubble",
    "ruler",
    "ink",
    "patches",
    "mask_path",
    "annotation_source",
];

pub const CENSORING_COLUMNS: [&str; 3] = ["noisecrop", "mask_provenance", "mask_low_confidence"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Benign = 0,
    Melanoma = 1,
}

impl Label {
    pub fn from_bit(bit: bool) -> Self {
        if bit {
            Label::Melanoma
        } else {
            Label::Benign
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_positive(self) -> bool {
        self == Label::Melanoma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationSource {
    GroundTruth,
    Inferred,
}

impl AnnotationSource {
    fn as_str(self) -> &'static str {
        match self {
            AnnotationSource::GroundTruth => "ground_truth",
            AnnotationSource::Inferred => "inferred",
        }
    }
}

/// Where a segmentation mask came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskProvenance {
    GroundTruth,
    Inferred,
    Fallback,
}

impl MaskProvenance {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskProvenance::GroundTruth => "ground_truth",
            MaskProvenance::Inferred => "inferred",
            MaskProvenance::Fallback => "fallback",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "ground_truth" => Some(MaskProvenance::GroundTruth),
            "inferred" => Some(MaskProvenance::Inferred),
            "fallback" => Some(MaskProvenance::Fallback),
            _ => None,
        }
    }
}

impl fmt::Display for MaskProvenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Set on records whose image went through test-time censoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Censoring {
    pub mask_provenance: MaskProvenance,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub image_path: String,
    pub label: Label,
    pub artifacts: ArtifactVector,
    pub mask_path: Option<String>,
    pub annotation_source: AnnotationSource,
    pub censoring: Option<Censoring>,
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub name: String,
    pub records: Vec<SampleRecord>,
    pub provenance: BTreeMap<String, String>,
    root: PathBuf,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct ManifestMeta {
    name: String,
    provenance: BTreeMap<String, String>,
}

impl DatasetManifest {
    /// Builds a manifest, checking that it is non-empty, ids are unique and
    /// both labels occur.
    pub fn new(name: impl Into<String>, root: impl Into<PathBuf>, records: Vec<SampleRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Integrity("manifest has no records".into()));
        }
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if index.insert(r.id.clone(), i).is_some() {
                return Err(Error::Integrity(format!("duplicate id `{}`", r.id)));
            }
        }
        let positives = records.iter().filter(|r| r.label.is_positive()).count();
        if positives == 0 || positives == records.len() {
            return Err(Error::Integrity("manifest must contain both labels".into()));
        }
        Ok(Self {
            name: name.into(),
            records,
            provenance: BTreeMap::new(),
            root: root.into(),
            index,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&SampleRecord> {
        self.position(id).map(|i| &self.records[i])
    }

    /// Positions of `ids` in record order of the manifest, or an integrity
    /// error for the first unknown id.
    pub fn positions(&self, ids: &[String]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|id| {
                self.position(id)
                    .ok_or_else(|| Error::Integrity(format!("id `{id}` is not in manifest `{}`", self.name)))
            })
            .collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.id.clone()).collect()
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn image_path(&self, record: &SampleRecord) -> PathBuf {
        self.resolve(&record.image_path)
    }

    pub fn mask_path(&self, record: &SampleRecord) -> Option<PathBuf> {
        record.mask_path.as_deref().map(|p| self.resolve(p))
    }

    pub fn prevalence(&self) -> f64 {
        let pos = self.records.iter().filter(|r| r.label.is_positive()).count();
        pos as f64 / self.records.len() as f64
    }

    /// A new manifest holding the given records, sharing this manifest's root.
    pub fn subset(&self, name: impl Into<String>, positions: &[usize]) -> Result<Self> {
        let records = positions.iter().map(|&i| self.records[i].clone()).collect();
        let mut m = Self::new(name, self.root.clone(), records)?;
        m.provenance = self.provenance.clone();
        m.provenance.insert("subset_of".into(), self.name.clone());
        Ok(m)
    }

    fn meta_path(path: &Path) -> PathBuf {
        path.with_extension("meta.json")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        let censored = self.records.iter().any(|r| r.censoring.is_some());
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<&str> = CANONICAL_COLUMNS.to_vec();
        if censored {
            header.extend(CENSORING_COLUMNS);
        }
        w.write_record(&header)?;
        for r in &self.records {
            let mut row: Vec<String> = Vec::with_capacity(header.len());
            row.push(r.id.clone());
            row.push(r.image_path.clone());
            row.push(r.label.index().to_string());
            row.extend(r.artifacts.flags().iter().map(|&f| u8::from(f).to_string()));
            row.push(r.mask_path.clone().unwrap_or_default());
            row.push(r.annotation_source.as_str().to_string());
            if censored {
                match r.censoring {
                    Some(c) => {
                        row.push("1".into());
                        row.push(c.mask_provenance.as_str().into());
                        row.push(u8::from(c.low_confidence).to_string());
                    }
                    None => row.extend(["0".to_string(), String::new(), "0".to_string()]),
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        let meta = ManifestMeta {
            name: self.name.clone(),
            provenance: self.provenance.clone(),
        };
        fs::write(Self::meta_path(path), serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(())
    }
}

fn parse_bit(value: &str, row: &str, column: &str) -> Result<bool> {
    match value.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::InvalidValue {
            row: row.to_string(),
            column: column.to_string(),
            value: other.to_string(),
        }),
    }
}

/// Reads a manifest CSV. Every image (and mask, when given) must exist.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let mut cols = [0usize; 12];
    for (slot, name) in cols.iter_mut().zip(CANONICAL_COLUMNS) {
        *slot = col(name)?;
    }
    let censor_cols: Option<[usize; 3]> = match col(CENSORING_COLUMNS[0]) {
        Ok(c0) => Some([c0, col(CENSORING_COLUMNS[1])?, col(CENSORING_COLUMNS[2])?]),
        Err(_) => None,
    };

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or("").trim();
        let id = field(cols[0]).to_string();
        let row_ref = if id.is_empty() {
            format!("line {}", line + 2)
        } else {
            id.clone()
        };
        if id.is_empty() {
            return Err(Error::Integrity(format!("{row_ref}: empty id")));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::Integrity(format!("duplicate id `{id}`")));
        }
        let label = Label::from_bit(parse_bit(field(cols[2]), &row_ref, "label")?);
        let mut artifacts = ArtifactVector::none();
        for (k, a) in Artifact::ALL.into_iter().enumerate().take(N_ARTIFACTS) {
            artifacts.set(a, parse_bit(field(cols[3 + k]), &row_ref, a.column())?);
        }
        let image_path = field(cols[1]).to_string();
        let mask_path = Some(field(cols[10]).to_string()).filter(|s| !s.is_empty());
        let annotation_source = match field(cols[11]) {
            "ground_truth" => AnnotationSource::GroundTruth,
            "inferred" => AnnotationSource::Inferred,
            other => {
                return Err(Error::InvalidValue {
                    row: row_ref,
                    column: "annotation_source".into(),
                    value: other.into(),
                })
            }
        };
        let censoring = match censor_cols {
            Some([c0, c1, c2]) if parse_bit(field(c0), &row_ref, "noisecrop")? => {
                let mask_provenance = MaskProvenance::parse(field(c1)).ok_or_else(|| Error::InvalidValue {
                    row: row_ref.clone(),
                    column: "mask_provenance".into(),
                    value: field(c1).into(),
                })?;
                Some(Censoring {
                    mask_provenance,
                    low_confidence: parse_bit(field(c2), &row_ref, "mask_low_confidence")?,
                })
            }
            _ => None,
        };
        for p in std::iter::once(&image_path).chain(mask_path.as_ref()) {
            let full = root.join(p);
            if !full.exists() {
                return Err(Error::MissingFile(full));
            }
        }
        records.push(SampleRecord {
            id,
            image_path,
            label,
            artifacts,
            mask_path,
            annotation_source,
            censoring,
        });
    }

    let meta_path = DatasetManifest::meta_path(path);
    let (name, provenance) = if meta_path.exists() {
        let meta: ManifestMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?)?;
        (meta.name, meta.provenance)
    } else {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("manifest");
        (stem.to_string(), BTreeMap::new())
    };
    let mut manifest = DatasetManifest::new(name, root, records)?;
    manifest.provenance = provenance;
    Ok(manifest)
}
