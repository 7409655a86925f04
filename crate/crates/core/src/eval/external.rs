use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::mean_stderr;
use super::tta::{predict_tta, DEFAULT_TTA_REPLICAS};
use crate::artifact::{Artifact, N_ARTIFACTS};
use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::nn::Classifier;
use crate::noisecrop::{batch_noisecrop, NoiseCropConfig};
use crate::training::{Augmentation, ImageSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExternalConfig {
    pub tta_replicas: usize,
    pub augmentation: Augmentation,
    pub seed: u64,
    /// Censor the external images first when set.
    pub noisecrop: Option<NoiseCropConfig>,
}

impl Default for ExternalConfig {
    fn default() -> Self {
        Self {
            tta_replicas: DEFAULT_TTA_REPLICAS,
            augmentation: Augmentation::standard(),
            seed: 0,
            noisecrop: None,
        }
    }
}

/// Share of samples carrying each artifact, overall and per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceRow {
    pub artifact: Artifact,
    pub overall: f64,
    pub benign: f64,
    pub melanoma: f64,
}

pub fn artifact_prevalence(manifest: &DatasetManifest) -> Vec<PrevalenceRow> {
    let mut counts = [[0usize; 2]; N_ARTIFACTS];
    let mut totals = [0usize; 2];
    for r in &manifest.records {
        let y = r.label.index();
        totals[y] += 1;
        for a in Artifact::ALL {
            if r.artifacts.has(a) {
                counts[a.index()][y] += 1;
            }
        }
    }
    let share = |c: usize, n: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    Artifact::ALL
        .iter()
        .map(|&a| {
            let [b, m] = counts[a.index()];
            PrevalenceRow {
                artifact: a,
                overall: share(b + m, totals[0] + totals[1]),
                benign: share(b, totals[0]),
                melanoma: share(m, totals[1]),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEval {
    pub model_hash: String,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub n_samples: usize,
    pub n_positive: usize,
    pub noisecrop: bool,
    pub n_replicas: usize,
    pub models: Vec<ModelEval>,
    pub mean_auc: f64,
    /// Standard error over the evaluated models (0 for one model).
    pub stderr: f64,
    pub prevalence: Vec<PrevalenceRow>,
}

impl EvalReport {
    pub fn prevalence_csv(&self) -> String {
        let mut out = String::from("artifact,overall,benign,melanoma\n");
        for r in &self.prevalence {
            let _ = writeln!(
                out,
                "{},{:.4},{:.4},{:.4}",
                r.artifact.column(),
                r.overall,
                r.benign,
                r.melanoma
            );
        }
        out
    }
}

/// TTA AUC of each model on an external manifest, which is left untouched.
/// With NoiseCrop configured the censored copy is written to `noisecrop_dir`
/// (`work_dir/noisecrop` when absent). Predictions go to `work_dir/predictions_<k>.csv` and the report to
/// `work_dir/eval.json` plus `work_dir/prevalence.csv`.
pub fn evaluate_external<M: Classifier>(
    models: &[M],
    manifest: &DatasetManifest,
    config: &ExternalConfig,
    work_dir: &Path,
    noisecrop_dir: Option<&Path>,
) -> Result<EvalReport> {
    if models.is_empty() {
        return Err(Error::Config("no models to evaluate".into()));
    }
    fs::create_dir_all(work_dir)?;
    let ids = manifest.ids();
    let images = match &config.noisecrop {
        Some(nc) => {
            let censored = match noisecrop_dir {
                Some(dir) => batch_noisecrop(manifest, nc, dir)?,
                None => batch_noisecrop(manifest, nc, &work_dir.join("noisecrop"))?,
            };
            if let Some(f) = censored.summary.failures.first() {
                return Err(Error::Integrity(format!(
                    "noisecrop failed for `{}`: {}",
                    f.id, f.error
                )));
            }
            ImageSet::load(&censored.manifest, &ids)?
        }
        None => ImageSet::load(manifest, &ids)?,
    };
    let mut evals = Vec::with_capacity(models.len());
    for (k, model) in models.iter().enumerate() {
        let preds = predict_tta(
            model,
            &images,
            config.tta_replicas,
            &config.augmentation,
            config.seed,
            config.noisecrop.is_some(),
        )?;
        fs::write(work_dir.join(format!("predictions_{k}.csv")), preds.to_csv())?;
        evals.push(ModelEval {
            auc: preds.auc()?,
            model_hash: preds.model_hash,
        });
    }
    let aucs: Vec<f64> = evals.iter().map(|e| e.auc).collect();
    let (mean_auc, stderr) = mean_stderr(&aucs);
    let report = EvalReport {
        dataset: manifest.name.clone(),
        n_samples: manifest.len(),
        n_positive: manifest.records.iter().filter(|r| r.label.is_positive()).count(),
        noisecrop: config.noisecrop.is_some(),
        n_replicas: config.tta_replicas,
        models: evals,
        mean_auc,
        stderr,
        prevalence: artifact_prevalence(manifest),
    };
    fs::write(
        work_dir.join("eval.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    fs::write(work_dir.join("prevalence.csv"), report.prevalence_csv())?;
    Ok(report)
}
