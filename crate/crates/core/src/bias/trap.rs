//! Trap train/test splits with a tunable bias factor.
//!
//! Construction has two phases. First a deterministic trap assignment: each
//! sample is scored by how strongly its artifacts agree with its label under
//! the full-data correlation signs, the highest-scoring samples of each class
//! go to train and the lowest to test, and random same-class swaps that raise
//! the objective
//!
//! ```text
//! J = sum_a s_a * (corr_train(a, y) - corr_test(a, y))
//! ```
//!
//! are accepted. Then every sample independently keeps its trap placement with
//! probability `factor`; the others are re-dealt at random among the slots
//! they freed, which keeps per-class split sizes fixed.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::correlation::{row_for_positions, CorrelationReport, PairCounts};
use crate::artifact::N_ARTIFACTS;
use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::seed::{rng_for, stable_hash};

pub const DEFAULT_SWAP_BUDGET: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapSplit {
    pub factor: f64,
    pub seed: u64,
    pub test_fraction: f64,
    pub swap_budget: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub objective: f64,
    /// Full-data correlation sign per artifact (0 when undefined).
    pub artifact_signs: Vec<i8>,
    /// Objective of the pure trap placement before and after swap refinement.
    pub trap_objective_initial: f64,
    pub trap_objective_refined: f64,
    /// Fraction of samples whose final side equals the pure trap placement.
    pub trap_agreement: f64,
    pub correlations: CorrelationReport,
}

impl TrapSplit {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Per-side artifact/label counts, updated incrementally during swaps.
#[derive(Clone, Copy, Default)]
struct SideCounts([PairCounts; N_ARTIFACTS]);

impl SideCounts {
    fn add(&mut self, bits: u8, y: bool) {
        for (a, c) in self.0.iter_mut().enumerate() {
            c.add(bits & (1 << a) != 0, y);
        }
    }

    /// Replaces a sample with artifact bits `out` by one with bits `inn`;
    /// both have label `y`.
    fn exchange(&mut self, out: u8, inn: u8, y: bool) {
        for (a, c) in self.0.iter_mut().enumerate() {
            let (o, i) = (u64::from(out & (1 << a) != 0), u64::from(inn & (1 << a) != 0));
            c.n_a = c.n_a + i - o;
            if y {
                c.n_ay = c.n_ay + i - o;
            }
        }
    }
}

fn objective(signs: &[i8; N_ARTIFACTS], train: &SideCounts, test: &SideCounts) -> f64 {
    signs
        .iter()
        .enumerate()
        .filter(|(_, &s)| s != 0)
        .map(|(a, &s)| {
            let tr = train.0[a].phi().unwrap_or(0.0);
            let te = test.0[a].phi().unwrap_or(0.0);
            f64::from(s) * (tr - te)
        })
        .sum()
}

/// Objective `J` of an arbitrary split, using the full-data signs.
pub fn split_objective(manifest: &DatasetManifest, train: &[usize], test: &[usize]) -> f64 {
    let signs = artifact_signs(manifest);
    let counts = |positions: &[usize]| {
        let mut c = SideCounts::default();
        for &i in positions {
            let r = &manifest.records[i];
            c.add(r.artifacts.bitmask(), r.label.is_positive());
        }
        c
    };
    objective(&signs, &counts(train), &counts(test))
}

pub fn artifact_signs(manifest: &DatasetManifest) -> [i8; N_ARTIFACTS] {
    let mut counts = SideCounts::default();
    for r in &manifest.records {
        counts.add(r.artifacts.bitmask(), r.label.is_positive());
    }
    let mut signs = [0i8; N_ARTIFACTS];
    for (s, c) in signs.iter_mut().zip(counts.0.iter()) {
        *s = match c.phi() {
            Ok(v) if v > 1e-12 => 1,
            Ok(v) if v < -1e-12 => -1,
            _ => 0,
        };
    }
    signs
}

/// Pure trap placement (phase one) for every manifest position.
fn trap_assignment(
    manifest: &DatasetManifest,
    signs: &[i8; N_ARTIFACTS],
    test_fraction: f64,
    seed: u64,
    swap_budget: usize,
) -> Result<(Vec<Side>, Vec<f64>)> {
    let n = manifest.len();
    let mut sides = vec![Side::Train; n];
    let bits: Vec<u8> = manifest.records.iter().map(|r| r.artifacts.bitmask()).collect();
    let labels: Vec<bool> = manifest.records.iter().map(|r| r.label.is_positive()).collect();

    // per class: (train members, test members)
    let mut pools: Vec<(bool, Vec<usize>, Vec<usize>)> = Vec::with_capacity(2);
    for class in [false, true] {
        let mut members: Vec<(i32, u64, usize)> = (0..n)
            .filter(|&i| labels[i] == class)
            .map(|i| {
                let direction = if class { 1 } else { -1 };
                let score: i32 = (0..N_ARTIFACTS)
                    .filter(|&a| bits[i] & (1 << a) != 0)
                    .map(|a| i32::from(signs[a]) * direction)
                    .sum();
                (score, stable_hash(&manifest.records[i].id), i)
            })
            .collect();
        let n_class = members.len();
        if n_class < 2 {
            return Err(Error::Integrity(format!(
                "class {} has {n_class} sample(s); need at least 2 to split",
                u8::from(class)
            )));
        }
        let n_test = ((test_fraction * n_class as f64).round() as usize).clamp(1, n_class - 1);
        members.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let (train, test) = members.split_at(n_class - n_test);
        pools.push((
            class,
            train.iter().map(|m| m.2).collect(),
            test.iter().map(|m| m.2).collect(),
        ));
    }

    let mut train_counts = SideCounts::default();
    let mut test_counts = SideCounts::default();
    for (class, train, test) in &pools {
        for &i in train {
            train_counts.add(bits[i], *class);
        }
        for &i in test {
            test_counts.add(bits[i], *class);
        }
    }

    let mut current = objective(signs, &train_counts, &test_counts);
    let mut trace = Vec::with_capacity(swap_budget + 1);
    trace.push(current);
    let mut rng = rng_for(seed, "trap-swap", "");
    for _ in 0..swap_budget {
        let (class, train, test) = &mut pools[rng.gen_range(0..2)];
        let ti = rng.gen_range(0..train.len());
        let si = rng.gen_range(0..test.len());
        let (a, b) = (train[ti], test[si]);
        if bits[a] == bits[b] {
            trace.push(current);
            continue;
        }
        let mut new_train = train_counts;
        let mut new_test = test_counts;
        new_train.exchange(bits[a], bits[b], *class);
        new_test.exchange(bits[b], bits[a], *class);
        let candidate = objective(signs, &new_train, &new_test);
        if candidate > current {
            current = candidate;
            train_counts = new_train;
            test_counts = new_test;
            train[ti] = b;
            test[si] = a;
        }
        trace.push(current);
    }

    for (_, _, test) in &pools {
        for &i in test {
            sides[i] = Side::Test;
        }
    }
    Ok((sides, trace))
}

pub fn build_trap_split(
    manifest: &DatasetManifest,
    factor: f64,
    test_fraction: f64,
    seed: u64,
    swap_budget: usize,
) -> Result<TrapSplit> {
    if !(0.0..=1.0).contains(&factor) {
        return Err(Error::Config(format!("bias factor must lie in [0, 1], got {factor}")));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let signs = artifact_signs(manifest);
    let (trap, trace) = trap_assignment(manifest, &signs, test_fraction, seed, swap_budget)?;

    // Bernoulli(factor) keep/randomize; the same uniforms are drawn for every
    // factor, so kept sets are nested as the factor grows.
    let mut mix_rng = rng_for(seed, "trap-mix", "");
    let randomized: Vec<bool> = (0..manifest.len()).map(|_| mix_rng.gen::<f64>() >= factor).collect();
    let mut shuffle_rng = rng_for(seed, "trap-shuffle", "");
    let mut sides = trap.clone();
    for class in [false, true] {
        let members: Vec<usize> = (0..manifest.len())
            .filter(|&i| randomized[i] && manifest.records[i].label.is_positive() == class)
            .collect();
        let mut slots: Vec<Side> = members.iter().map(|&i| trap[i]).collect();
        slots.shuffle(&mut shuffle_rng);
        for (&i, side) in members.iter().zip(slots) {
            sides[i] = side;
        }
    }

    let train: Vec<usize> = (0..manifest.len()).filter(|&i| sides[i] == Side::Train).collect();
    let test: Vec<usize> = (0..manifest.len()).filter(|&i| sides[i] == Side::Test).collect();
    let agreement = sides.iter().zip(&trap).filter(|(a, b)| a == b).count() as f64 / manifest.len() as f64;
    let ids = |positions: &[usize]| positions.iter().map(|&i| manifest.records[i].id.clone()).collect();
    let correlations = CorrelationReport {
        manifest: manifest.name.clone(),
        rows: vec![
            row_for_positions(manifest, "train", &train),
            row_for_positions(manifest, "test", &test),
        ],
    };

    Ok(TrapSplit {
        factor,
        seed,
        test_fraction,
        swap_budget,
        objective: split_objective(manifest, &train, &test),
        train_ids: ids(&train),
        test_ids: ids(&test),
        artifact_signs: signs.to_vec(),
        trap_objective_initial: trace[0],
        trap_objective_refined: *trace.last().expect("trace starts non-empty"),
        trap_agreement: agreement,
        correlations,
    })
}

/// Stratified uniformly random split, independent of the trap machinery.
pub fn random_split(manifest: &DatasetManifest, test_fraction: f64, seed: u64) -> (Vec<String>, Vec<String>) {
    let mut rng = rng_for(seed, "random-split", "");
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [false, true] {
        let mut members: Vec<usize> = (0..manifest.len())
            .filter(|&i| manifest.records[i].label.is_positive() == class)
            .collect();
        members.shuffle(&mut rng);
        let n_test = (test_fraction * members.len() as f64).round() as usize;
        for (k, &i) in members.iter().enumerate() {
            let id = manifest.records[i].id.clone();
            if k < n_test {
                test.push(id);
            } else {
                train.push(id);
            }
        }
    }
    (train, test)
}

#[cfg(test)]
fn swap_trace(manifest: &DatasetManifest, test_fraction: f64, seed: u64, budget: usize) -> Vec<f64> {
    let signs = artifact_signs(manifest);
    trap_assignment(manifest, &signs, test_fraction, seed, budget)
        .unwrap()
        .1
}
