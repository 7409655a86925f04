use std::cmp::Ordering;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::ImageSet;
use super::run::train_on;
use super::{Method, TrainConfig};
use crate::bias::EnvironmentPartition;
use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::eval::roc_auc;
use crate::seed::derive_seed_n;

/// Hyperparameter grid. Stage one crosses learning rates with weight decays;
/// for GroupDRO a second stage then searches the adjustment `C` at the best
/// stage-one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub learning_rates: Vec<f32>,
    pub weight_decays: Vec<f32>,
    #[serde(default)]
    pub adjustments: Vec<f64>,
    #[serde(default = "default_runs")]
    pub n_runs: usize,
}

fn default_runs() -> usize {
    2
}

impl GridSpec {
    /// Learning rates {1e-5, 1e-4, 1e-3} x weight decays {1e-3, 1e-2, 1e-1, 1},
    /// two runs per cell, adjustment searched over 0..=5.
    pub fn reference() -> Self {
        Self {
            learning_rates: vec![1e-5, 1e-4, 1e-3],
            weight_decays: vec![1e-3, 1e-2, 1e-1, 1.0],
            adjustments: (0..=5).map(f64::from).collect(),
            n_runs: 2,
        }
    }

    /// Stage-one cells in declaration order.
    pub fn cells(&self) -> Vec<(f32, f32)> {
        self.learning_rates
            .iter()
            .flat_map(|&lr| self.weight_decays.iter().map(move |&wd| (lr, wd)))
            .collect()
    }

    /// Every stage-one training run as `(learning rate, weight decay, run)`.
    pub fn stage_one_schedule(&self) -> Vec<(f32, f32, usize)> {
        self.cells()
            .into_iter()
            .flat_map(|(lr, wd)| (0..self.n_runs).map(move |r| (lr, wd, r)))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.learning_rates.is_empty() || self.weight_decays.is_empty() || self.n_runs == 0 {
            return Err(Error::Config(
                "grid needs at least one learning rate, weight decay and run".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub learning_rate: f32,
    pub weight_decay: f32,
    pub adjustment: f64,
    /// Validation AUC per run (trap-test AUC in oracle mode).
    pub run_scores: Vec<f64>,
    pub mean_score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridResult {
    pub best: TrainConfig,
    /// Stage-one cells, best first.
    pub leaderboard: Vec<GridEntry>,
    /// GroupDRO adjustment stage, best first; empty for other methods.
    pub adjustment_leaderboard: Vec<GridEntry>,
    /// Selection used test labels (oracle mode).
    pub privileged: bool,
    pub runs_trained: usize,
}

/// Descending score; ties go to the lower learning rate, then the lower
/// weight decay, then the lower adjustment.
fn rank(a: &GridEntry, b: &GridEntry) -> Ordering {
    b.mean_score
        .total_cmp(&a.mean_score)
        .then(a.learning_rate.total_cmp(&b.learning_rate))
        .then(a.weight_decay.total_cmp(&b.weight_decay))
        .then(a.adjustment.total_cmp(&b.adjustment))
}

pub fn grid_search(
    manifest: &DatasetManifest,
    train_ids: &[String],
    environments: Option<&EnvironmentPartition>,
    base: &TrainConfig,
    spec: &GridSpec,
    oracle_test_ids: Option<&[String]>,
    out_dir: Option<&Path>,
) -> Result<GridResult> {
    let data = ImageSet::load(manifest, train_ids)?;
    let oracle = oracle_test_ids.map(|ids| ImageSet::load(manifest, ids)).transpose()?;
    grid_search_on(&data, environments, base, spec, oracle.as_ref(), out_dir)
}

/// Trains every cell `n_runs` times and selects by mean validation AUC, or
/// by mean AUC on `oracle` when given (privileged). Run `r` of every cell
/// uses the same derived seed, hence the same train/validation partition.
pub fn grid_search_on(
    data: &ImageSet,
    environments: Option<&EnvironmentPartition>,
    base: &TrainConfig,
    spec: &GridSpec,
    oracle: Option<&ImageSet>,
    out_dir: Option<&Path>,
) -> Result<GridResult> {
    spec.validate()?;
    let score_runs = |cells: &[(f32, f32, f64)], stage: &str| -> Result<Vec<GridEntry>> {
        let jobs: Vec<(usize, usize)> = (0..cells.len())
            .flat_map(|c| (0..spec.n_runs).map(move |r| (c, r)))
            .collect();
        let scores: Vec<f64> = jobs
            .par_iter()
            .map(|&(c, r)| -> Result<f64> {
                let (lr, wd, adj) = cells[c];
                let config = TrainConfig {
                    learning_rate: lr,
                    weight_decay: wd,
                    adjustment: adj,
                    seed: derive_seed_n(base.seed, "grid-run", r as u64),
                    ..base.clone()
                };
                let dir = out_dir.map(|d| d.join(format!("{stage}-lr{lr:e}-wd{wd:e}-c{adj}-run{r}")));
                let run = train_on(data, environments, &config, dir.as_deref())?;
                match oracle {
                    Some(test) => {
                        let all: Vec<usize> = (0..test.len()).collect();
                        roc_auc(&test.predict(&run.model, &all), &test.positives())
                    }
                    None => Ok(run.best_val_auc),
                }
            })
            .collect::<Result<_>>()?;
        let mut entries: Vec<GridEntry> = cells
            .iter()
            .enumerate()
            .map(|(c, &(lr, wd, adj))| {
                let run_scores = scores[c * spec.n_runs..(c + 1) * spec.n_runs].to_vec();
                GridEntry {
                    learning_rate: lr,
                    weight_decay: wd,
                    adjustment: adj,
                    mean_score: run_scores.iter().sum::<f64>() / run_scores.len() as f64,
                    run_scores,
                }
            })
            .collect();
        entries.sort_by(rank);
        Ok(entries)
    };

    let stage_one: Vec<(f32, f32, f64)> = spec
        .cells()
        .into_iter()
        .map(|(lr, wd)| (lr, wd, base.adjustment))
        .collect();
    let leaderboard = score_runs(&stage_one, "stage1")?;
    let top = &leaderboard[0];
    let mut best = TrainConfig {
        learning_rate: top.learning_rate,
        weight_decay: top.weight_decay,
        ..base.clone()
    };
    let mut runs_trained = stage_one.len() * spec.n_runs;

    let mut adjustment_leaderboard = Vec::new();
    if base.method == Method::GroupDro && !spec.adjustments.is_empty() {
        let stage_two: Vec<(f32, f32, f64)> = spec
            .adjustments
            .iter()
            .map(|&c| (best.learning_rate, best.weight_decay, c))
            .collect();
        adjustment_leaderboard = score_runs(&stage_two, "stage2")?;
        runs_trained += stage_two.len() * spec.n_runs;
        best.adjustment = adjustment_leaderboard[0].adjustment;
    }

    Ok(GridResult {
        best,
        leaderboard,
        adjustment_leaderboard,
        privileged: oracle.is_some(),
        runs_trained,
    })
}
