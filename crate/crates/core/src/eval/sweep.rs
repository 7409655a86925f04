use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::mean_stderr;
use super::tta::{predict_tta, DEFAULT_TTA_REPLICAS};
use crate::bias::{build_environments, build_trap_split, DEFAULT_SWAP_BUDGET};
use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::noisecrop::{batch_noisecrop, NoiseCropConfig};
use crate::seed::derive_seed;
use crate::training::{train_on, Augmentation, ImageSet, Method, TrainConfig};

/// A training method, optionally followed by NoiseCrop on the test images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Arm {
    pub method: Method,
    pub noisecrop: bool,
}

impl Arm {
    pub fn new(method: Method, noisecrop: bool) -> Self {
        Self { method, noisecrop }
    }

    pub fn all() -> Vec<Arm> {
        [false, true]
            .into_iter()
            .flat_map(|nc| Method::ALL.into_iter().map(move |m| Arm::new(m, nc)))
            .collect()
    }

    pub fn parse(s: &str) -> Option<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.strip_suffix("+noisecrop") {
            Some(base) => Method::parse(base).map(|m| Arm::new(m, true)),
            None => Method::parse(&lower).map(|m| Arm::new(m, false)),
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.noisecrop {
            write!(f, "{}+noisecrop", self.method)
        } else {
            write!(f, "{}", self.method)
        }
    }
}

impl TryFrom<String> for Arm {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        Arm::parse(&s).ok_or_else(|| format!("unknown method `{s}`"))
    }
}

impl From<Arm> for String {
    fn from(a: Arm) -> String {
        a.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub sweep_id: String,
    pub factors: Vec<f64>,
    pub arms: Vec<Arm>,
    pub n_seeds: usize,
    pub test_fraction: f64,
    pub swap_budget: usize,
    pub tta_replicas: usize,
    /// Test-time augmentation; the training recipe when absent.
    pub tta_augmentation: Option<Augmentation>,
    /// NoiseCrop canvas side; the test image size when absent.
    pub noisecrop_size: Option<u32>,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sweep_id: "sweep".into(),
            factors: vec![0.0, 0.5, 0.7, 0.9, 1.0],
            arms: Arm::all(),
            n_seeds: 10,
            test_fraction: 0.2,
            swap_budget: DEFAULT_SWAP_BUDGET,
            tta_replicas: DEFAULT_TTA_REPLICAS,
            tta_augmentation: None,
            noisecrop_size: None,
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.factors.is_empty() || self.arms.is_empty() || self.n_seeds == 0 {
            return Err(Error::Config(
                "a sweep needs factors, methods and at least one seed".into(),
            ));
        }
        if let Some(f) = self.factors.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(Error::Config(format!("bias factor {f} outside [0, 1]")));
        }
        if self.tta_replicas == 0 {
            return Err(Error::Config("tta_replicas must be at least 1".into()));
        }
        self.train.validate()
    }

    fn key(factor: f64, seed: usize) -> String {
        format!("{factor}/{seed}")
    }
}

pub fn factor_dir(factor: f64) -> String {
    format!("{factor:.2}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub factor: f64,
    pub arm: Arm,
    pub seed: usize,
    pub auc: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAggregate {
    pub factor: f64,
    pub arm: Arm,
    /// Seeds that produced an AUC; the standard error is over these only.
    pub n_seeds: usize,
    pub n_failed: usize,
    pub mean: Option<f64>,
    pub stderr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub sweep_id: String,
    pub config: SweepConfig,
    pub cells: Vec<SweepCell>,
    pub aggregates: Vec<SweepAggregate>,
}

impl SweepResult {
    pub fn aggregate(&self, factor: f64, arm: Arm) -> Option<&SweepAggregate> {
        self.aggregates.iter().find(|a| a.factor == factor && a.arm == arm)
    }

    pub fn cells_csv(&self) -> String {
        let mut out = String::from("factor,method,seed,auc,error\n");
        for c in &self.cells {
            let auc = c.auc.map(|v| format!("{v:.6}")).unwrap_or_default();
            let err = c.error.as_deref().unwrap_or("").replace([',', '\n'], " ");
            out.push_str(&format!("{},{},{},{auc},{err}\n", c.factor, c.arm, c.seed));
        }
        out
    }

    pub fn aggregate_csv(&self) -> String {
        let mut out = String::from("factor,method,n_seeds,n_failed,mean_auc,stderr\n");
        let fmt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        for a in &self.aggregates {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                a.factor,
                a.arm,
                a.n_seeds,
                a.n_failed,
                fmt(a.mean),
                fmt(a.stderr)
            ));
        }
        out
    }
}

/// Per (factor, arm) mean and standard error over seeds, seeds taken in
/// ascending order. Independent of the order of `cells`.
pub fn aggregate(cells: &[SweepCell]) -> Vec<SweepAggregate> {
    let mut keys: Vec<(f64, Arm)> = Vec::new();
    for c in cells {
        if !keys.iter().any(|&(f, a)| f == c.factor && a == c.arm) {
            keys.push((c.factor, c.arm));
        }
    }
    keys.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keys.into_iter()
        .map(|(factor, arm)| {
            let mut group: Vec<&SweepCell> = cells.iter().filter(|c| c.factor == factor && c.arm == arm).collect();
            group.sort_by_key(|c| c.seed);
            let values: Vec<f64> = group.iter().filter_map(|c| c.auc).collect();
            let (mean, stderr) = if values.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_stderr(&values);
                (Some(m), Some(s))
            };
            SweepAggregate {
                factor,
                arm,
                n_seeds: values.len(),
                n_failed: group.len() - values.len(),
                mean,
                stderr,
            }
        })
        .collect()
}

fn methods_of(arms: &[Arm]) -> Vec<Method> {
    arms.iter()
        .map(|a| a.method)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn run_cell(
    manifest: &DatasetManifest,
    config: &SweepConfig,
    factor: f64,
    seed: usize,
    out_dir: &Path,
) -> Vec<SweepCell> {
    let key = SweepConfig::key(factor, seed);
    let fdir = out_dir.join(factor_dir(factor));
    let failed = |arms: &[Arm], e: &Error| -> Vec<SweepCell> {
        arms.iter()
            .map(|&arm| SweepCell {
                factor,
                arm,
                seed,
                auc: None,
                error: Some(e.to_string()),
            })
            .collect()
    };

    struct Prepared {
        train: ImageSet,
        test: ImageSet,
        test_nc: Option<ImageSet>,
        envs: crate::bias::EnvironmentPartition,
    }
    let prepare = || -> Result<Prepared> {
        let split_seed = derive_seed(config.seed, "sweep-split", &key);
        let split = build_trap_split(manifest, factor, config.test_fraction, split_seed, config.swap_budget)?;
        fs::create_dir_all(fdir.join("splits"))?;
        fs::write(fdir.join("splits").join(format!("{seed}.json")), split.to_json()?)?;
        let envs = build_environments(manifest, &split.train_ids)?;
        let train = ImageSet::load(manifest, &split.train_ids)?;
        let test = ImageSet::load(manifest, &split.test_ids)?;
        let test_nc = if config.arms.iter().any(|a| a.noisecrop) {
            let subset = manifest.subset(
                format!("{}-trap-test", manifest.name),
                &manifest.positions(&split.test_ids)?,
            )?;
            let nc_config = NoiseCropConfig {
                output_size: config.noisecrop_size.unwrap_or(test.w.max(test.h) as u32),
                seed: derive_seed(config.seed, "sweep-noisecrop", &key),
                ..NoiseCropConfig::default()
            };
            let nc = batch_noisecrop(&subset, &nc_config, &fdir.join("noisecrop").join(seed.to_string()))?;
            if let Some(f) = nc.summary.failures.first() {
                return Err(Error::Integrity(format!(
                    "noisecrop failed for `{}`: {}",
                    f.id, f.error
                )));
            }
            Some(ImageSet::load(&nc.manifest, &split.test_ids)?)
        } else {
            None
        };
        Ok(Prepared {
            train,
            test,
            test_nc,
            envs,
        })
    };
    let prepared = match prepare() {
        Ok(p) => p,
        Err(e) => return failed(&config.arms, &e),
    };

    let tta_aug = config
        .tta_augmentation
        .clone()
        .unwrap_or_else(|| config.train.augmentation.clone());
    let tta_seed = derive_seed(config.seed, "sweep-tta", &key);
    let mut cells = Vec::new();
    for method in methods_of(&config.arms) {
        let arms: Vec<Arm> = config.arms.iter().copied().filter(|a| a.method == method).collect();
        let train_config = TrainConfig {
            method,
            seed: derive_seed(config.seed, "sweep-train", &key),
            ..config.train.clone()
        };
        let run_dir = fdir.join(method.as_str()).join(seed.to_string());
        let run = match train_on(&prepared.train, Some(&prepared.envs), &train_config, Some(&run_dir)) {
            Ok(r) => r,
            Err(e) => {
                cells.extend(failed(&arms, &e));
                continue;
            }
        };
        for arm in arms {
            let images = if arm.noisecrop {
                prepared.test_nc.as_ref().expect("prepared when a noisecrop arm exists")
            } else {
                &prepared.test
            };
            let result = predict_tta(
                &run.model,
                images,
                config.tta_replicas,
                &tta_aug,
                tta_seed,
                arm.noisecrop,
            )
            .and_then(|preds| {
                let auc = preds.auc()?;
                let dir = fdir.join(arm.to_string()).join(seed.to_string());
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("predictions.csv"), preds.to_csv())?;
                Ok(auc)
            });
            cells.push(SweepCell {
                factor,
                arm,
                seed,
                auc: result.as_ref().ok().copied(),
                error: result.err().map(|e| e.to_string()),
            });
        }
    }
    for c in &cells {
        let dir = fdir.join(c.arm.to_string()).join(seed.to_string());
        if fs::create_dir_all(&dir).is_ok() {
            if let Ok(text) = serde_json::to_string_pretty(c) {
                let _ = fs::write(dir.join("cell.json"), text + "\n");
            }
        }
    }
    cells
}

/// Trains and evaluates every (factor, seed, method) cell under `out_dir`,
/// laid out as `<factor>/<method>/<seed>/`. Cells run in parallel on the
/// current rayon pool; a failing cell is recorded and the sweep continues.
/// Writes `sweep.json`, `cells.csv` and `aggregate.csv`.
pub fn run_trap_sweep(manifest: &DatasetManifest, config: &SweepConfig, out_dir: &Path) -> Result<SweepResult> {
    config.validate()?;
    fs::create_dir_all(out_dir)?;
    fs::write(
        out_dir.join("sweep_config.json"),
        serde_json::to_string_pretty(config)? + "\n",
    )?;
    let jobs: Vec<(f64, usize)> = config
        .factors
        .iter()
        .flat_map(|&f| (0..config.n_seeds).map(move |s| (f, s)))
        .collect();
    let mut cells: Vec<SweepCell> = jobs
        .par_iter()
        .flat_map_iter(|&(f, s)| run_cell(manifest, config, f, s, out_dir))
        .collect();
    cells.sort_by(|a, b| {
        a.factor
            .total_cmp(&b.factor)
            .then(a.arm.cmp(&b.arm))
            .then(a.seed.cmp(&b.seed))
    });
    let result = SweepResult {
        sweep_id: config.sweep_id.clone(),
        config: config.clone(),
        aggregates: aggregate(&cells),
        cells,
    };
    fs::write(
        out_dir.join("sweep.json"),
        serde_json::to_string_pretty(&result)? + "\n",
    )?;
    fs::write(out_dir.join("cells.csv"), result.cells_csv())?;
    fs::write(out_dir.join("aggregate.csv"), result.aggregate_csv())?;
    Ok(result)
}
