use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::artifact::ArtifactVector;
use crate::dataset::{DatasetManifest, Label, SampleRecord};
use crate::error::{Error, Result};

/// Seven artifact bits plus the label: at most 128 x 2 = 256 keys.
pub const MAX_ENVIRONMENTS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EnvironmentKey {
    pub artifact_bitmask: u8,
    pub label: Label,
}

impl EnvironmentKey {
    pub fn new(artifacts: ArtifactVector, label: Label) -> Self {
        Self {
            artifact_bitmask: artifacts.bitmask(),
            label,
        }
    }

    pub fn of(record: &SampleRecord) -> Self {
        Self::new(record.artifacts, record.label)
    }

    /// Dense index in `0..256`.
    pub fn index(self) -> usize {
        usize::from(self.artifact_bitmask) * 2 + self.label.index()
    }
}

impl fmt::Display for EnvironmentKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{:03}-y{}", self.artifact_bitmask, self.label.index())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub key: EnvironmentKey,
    pub ids: Vec<String>,
}

/// Training samples grouped by (artifact combination, label). Only non-empty
/// groups are stored, in key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentPartition {
    pub environments: Vec<Environment>,
}

impl EnvironmentPartition {
    pub fn len(&self) -> usize {
        self.environments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.environments.is_empty()
    }

    pub fn keys(&self) -> Vec<EnvironmentKey> {
        self.environments.iter().map(|e| e.key).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.environments.iter().map(|e| e.ids.len()).collect()
    }

    pub fn total(&self) -> usize {
        self.environments.iter().map(|e| e.ids.len()).sum()
    }

    pub fn get(&self, key: EnvironmentKey) -> Option<&Environment> {
        self.environments.iter().find(|e| e.key == key)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// `key,artifact_bitmask,label,size` table.
    pub fn sizes_csv(&self) -> String {
        let mut out = String::from("key,artifact_bitmask,label,size\n");
        for e in &self.environments {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.key,
                e.key.artifact_bitmask,
                e.key.label.index(),
                e.ids.len()
            ));
        }
        out
    }
}

pub fn build_environments(manifest: &DatasetManifest, train_ids: &[String]) -> Result<EnvironmentPartition> {
    if train_ids.is_empty() {
        return Err(Error::Integrity("no training ids to partition".into()));
    }
    let mut seen = HashSet::with_capacity(train_ids.len());
    let mut groups: BTreeMap<EnvironmentKey, Vec<String>> = BTreeMap::new();
    for id in train_ids {
        let record = manifest
            .get(id)
            .ok_or_else(|| Error::Integrity(format!("id `{id}` is not in manifest `{}`", manifest.name)))?;
        if !seen.insert(id.as_str()) {
            return Err(Error::Integrity(format!("id `{id}` listed twice")));
        }
        groups.entry(EnvironmentKey::of(record)).or_default().push(id.clone());
    }
    Ok(EnvironmentPartition {
        environments: groups.into_iter().map(|(key, ids)| Environment { key, ids }).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_benign_sample_maps_to_origin_key() {
        let key = EnvironmentKey::new(ArtifactVector::none(), Label::Benign);
        assert_eq!(key.artifact_bitmask, 0);
        assert_eq!(key.label, Label::Benign);
        assert_eq!(key.index(), 0);
        assert_eq!(key.to_string(), "a000-y0");
    }

    #[test]
    fn key_space_has_256_entries() {
        let mut indices = HashSet::new();
        for m in 0u8..128 {
            for label in [Label::Benign, Label::Melanoma] {
                let k = EnvironmentKey::new(ArtifactVector::from_bitmask(m), label);
                assert!(k.index() < MAX_ENVIRONMENTS);
                indices.insert(k.index());
            }
        }
        assert_eq!(indices.len(), MAX_ENVIRONMENTS);
    }
}
