use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::artifact::{Artifact, N_ARTIFACTS};
use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};

/// Spearman rank correlation of two binary sequences.
///
/// With average-tie ranks, Spearman's coefficient of 0/1 data reduces to the
/// phi coefficient of the 2x2 contingency table, which is what is computed.
pub fn spearman_binary(x: &[bool], y: &[bool]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!(
            "sequence lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two observations"));
    }
    let mut counts = PairCounts::default();
    for (&a, &b) in x.iter().zip(y) {
        counts.add(a, b);
    }
    counts.phi()
}

/// Joint counts of a binary variable `a` against a binary label `y`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub(crate) struct PairCounts {
    pub n: u64,
    pub n_y: u64,
    pub n_a: u64,
    pub n_ay: u64,
}

impl PairCounts {
    pub fn add(&mut self, a: bool, y: bool) {
        self.n += 1;
        self.n_y += u64::from(y);
        self.n_a += u64::from(a);
        self.n_ay += u64::from(a && y);
    }

    pub fn phi(&self) -> Result<f64> {
        if self.n_a == 0 || self.n_a == self.n {
            return Err(Error::UndefinedCorrelation("first sequence is constant"));
        }
        if self.n_y == 0 || self.n_y == self.n {
            return Err(Error::UndefinedCorrelation("second sequence is constant"));
        }
        let (n, n_a, n_y, n_ay) = (self.n as f64, self.n_a as f64, self.n_y as f64, self.n_ay as f64);
        let num = n * n_ay - n_a * n_y;
        let den = (n_a * (n - n_a) * n_y * (n - n_y)).sqrt();
        Ok((num / den).clamp(-1.0, 1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub set: String,
    pub n: usize,
    pub n_positive: usize,
    /// `None` where the artifact is constant within the set.
    pub values: BTreeMap<Artifact, Option<f64>>,
}

/// Artifact/label Spearman correlations, one row per split and one column
/// per artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub manifest: String,
    pub rows: Vec<CorrelationRow>,
}

impl CorrelationReport {
    pub fn row(&self, set: &str) -> Option<&CorrelationRow> {
        self.rows.iter().find(|r| r.set == set)
    }

    pub fn value(&self, set: &str, artifact: Artifact) -> Option<f64> {
        self.row(set).and_then(|r| r.values.get(&artifact).copied().flatten())
    }

    /// CSV in the layout `set,n,n_positive,<artifacts...>`; undefined cells
    /// are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("set,n,n_positive");
        for a in Artifact::ALL {
            out.push(',');
            out.push_str(a.column());
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{},{},{}", row.set, row.n, row.n_positive);
            for a in Artifact::ALL {
                match row.values.get(&a).copied().flatten() {
                    Some(v) => {
                        let _ = write!(out, ",{v:.3}");
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

pub(crate) fn row_for_positions(manifest: &DatasetManifest, set: &str, positions: &[usize]) -> CorrelationRow {
    let mut counts = [PairCounts::default(); N_ARTIFACTS];
    for &i in positions {
        let r = &manifest.records[i];
        for a in Artifact::ALL {
            counts[a.index()].add(r.artifacts.has(a), r.label.is_positive());
        }
    }
    let n_positive = positions
        .iter()
        .filter(|&&i| manifest.records[i].label.is_positive())
        .count();
    CorrelationRow {
        set: set.to_string(),
        n: positions.len(),
        n_positive,
        values: Artifact::ALL
            .into_iter()
            .map(|a| (a, counts[a.index()].phi().ok()))
            .collect(),
    }
}

/// Per-split correlation table. The splits must partition the manifest.
pub fn correlation_report(manifest: &DatasetManifest, splits: &[(&str, &[String])]) -> Result<CorrelationReport> {
    let mut seen = HashSet::with_capacity(manifest.len());
    let mut rows = Vec::with_capacity(splits.len());
    for (name, ids) in splits {
        if ids.is_empty() {
            return Err(Error::Integrity(format!("split `{name}` is empty")));
        }
        let positions = manifest.positions(ids)?;
        for &p in &positions {
            if !seen.insert(p) {
                return Err(Error::Integrity(format!(
                    "id `{}` is assigned to more than one split",
                    manifest.records[p].id
                )));
            }
        }
        rows.push(row_for_positions(manifest, name, &positions));
    }
    if seen.len() != manifest.len() {
        return Err(Error::Integrity(format!(
            "split assignment covers {} of {} ids",
            seen.len(),
            manifest.len()
        )));
    }
    Ok(CorrelationReport {
        manifest: manifest.name.clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&x| x == 1).collect()
    }

    #[test]
    fn identical_balanced_sequences() {
        let x = b(&[0, 1, 0, 1, 1, 0]);
        assert!((spearman_binary(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn independent_sequences() {
        let r = spearman_binary(&b(&[0, 0, 1, 1]), &b(&[0, 1, 0, 1])).unwrap();
        assert!(r.abs() < 1e-12);
    }

    #[test]
    fn known_value() {
        let r = spearman_binary(&b(&[1, 1, 1, 0, 0, 0]), &b(&[1, 1, 0, 0, 0, 0])).unwrap();
        assert!((r - 6.0 / 72f64.sqrt()).abs() < 1e-12, "{r}");
        assert!((r - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn constant_sequence_is_undefined() {
        assert!(matches!(
            spearman_binary(&b(&[1, 1, 1]), &b(&[0, 1, 0])),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(matches!(
            spearman_binary(&b(&[0, 1, 1]), &b(&[0, 0, 0])),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(spearman_binary(&b(&[1]), &b(&[1])).is_err());
        assert!(matches!(
            spearman_binary(&b(&[1, 0]), &b(&[1])),
            Err(Error::Dimension(_))
        ));
    }
}
