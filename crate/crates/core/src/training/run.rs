use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::{validation_split, ImageSet};
use super::groups::GroupWeights;
use super::step::{erm_step_losses, groupdro_step_losses, rsc_step_losses, Batch};
use super::{Method, TrainConfig};
use crate::bias::{EnvironmentKey, EnvironmentPartition};
use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::eval::roc_auc;
use crate::nn::{save_model, Sgd, SmallCnn};
use crate::seed::{derive_seed, rng_for};

/// Stops after `patience` consecutive epochs without a strict improvement of
/// the monitored value.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopper {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    pub stale: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records the value for `epoch`; returns whether it is a new best.
    pub fn observe(&mut self, epoch: usize, value: f64) -> bool {
        if value > self.best {
            self.best = value;
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean per-sample loss of each environment seen this epoch.
    pub group_losses: BTreeMap<String, f64>,
    pub val_auc: f64,
    /// GroupDRO weights at the end of the epoch.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRun {
    pub config: TrainConfig,
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub epochs_run: usize,
    pub early_stopped: bool,
    pub n_fit: usize,
    pub validation_ids: Vec<String>,
    /// Kept out of `run.json` so reruns are byte-identical.
    #[serde(skip)]
    pub wall_time_secs: f64,
    /// Always false for runs produced here: training and model selection see
    /// only training ids.
    pub test_labels_read: bool,
    pub model_path: Option<PathBuf>,
    /// Parameters from the best validation epoch.
    #[serde(skip)]
    pub model: SmallCnn,
}

/// Loads the training images and trains on them; see [`train_on`].
pub fn train(
    manifest: &DatasetManifest,
    train_ids: &[String],
    environments: Option<&EnvironmentPartition>,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainRun> {
    config.validate()?;
    let data = ImageSet::load(manifest, train_ids)?;
    train_on(&data, environments, config, out_dir)
}

/// Trains one model. A stratified validation subset is carved from `data`
/// (seeded by the run seed); the rest is fitted. Validation AUC drives early
/// stopping and selects the returned parameters. With `out_dir`, per-epoch
/// metrics are appended to `metrics.jsonl` and the model and run summary are
/// written at the end.
pub fn train_on(
    data: &ImageSet,
    environments: Option<&EnvironmentPartition>,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainRun> {
    config.validate()?;
    let started = Instant::now();
    let (fit, val) = validation_split(&data.labels, config.validation_fraction, config.seed)?;
    let val_labels: Vec<bool> = val.iter().map(|&i| data.labels[i] == 1).collect();

    let mut group_weights = match config.method {
        Method::GroupDro => {
            let partition =
                environments.ok_or_else(|| Error::Config("GroupDRO needs an environment partition".into()))?;
            Some(dro_weights(data, &fit, partition, config)?)
        }
        _ => None,
    };

    let mut model = SmallCnn::new(config.model.clone(), derive_seed(config.seed, "model-init", ""));
    let mut opt = Sgd::new(
        config.learning_rate,
        config.momentum,
        config.weight_decay,
        crate::nn::Classifier::num_params(&model),
    );
    let mut stopper = EarlyStopper::new(config.patience);
    let mut best_model = model.clone();
    let mut metrics = Vec::new();

    let mut jsonl = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Some(File::create(dir.join("metrics.jsonl"))?)
        }
        None => None,
    };

    for epoch in 1..=config.max_epochs {
        let epoch_key = epoch.to_string();
        let mut order = fit.clone();
        order.shuffle(&mut rng_for(config.seed, "train-shuffle", &epoch_key));
        let mut aug_rng = rng_for(config.seed, "train-augment", &epoch_key);
        let mut rsc_rng = rng_for(config.seed, "rsc", &epoch_key);

        let mut loss_sum = 0.0f64;
        let mut group_sums: BTreeMap<EnvironmentKey, (f64, usize)> = BTreeMap::new();
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = Batch {
                x: data.batch(chunk, Some((&config.augmentation, &mut aug_rng))),
                labels: chunk.iter().map(|&i| data.labels[i]).collect(),
            };
            let outcome = match config.method {
                Method::Erm => erm_step_losses(&mut model, &mut opt, &batch),
                Method::GroupDro => {
                    let keys: Vec<EnvironmentKey> = chunk.iter().map(|&i| data.keys[i]).collect();
                    let weights = group_weights.as_mut().expect("built for GroupDRO");
                    groupdro_step_losses(&mut model, &mut opt, &batch, &keys, weights)
                }
                Method::Rsc => rsc_step_losses(
                    &mut model,
                    &mut opt,
                    &batch,
                    config.rsc_percentile,
                    config.rsc_fraction,
                    &mut rsc_rng,
                ),
            };
            let (_, losses) = outcome.map_err(|e| match e {
                Error::NonFiniteLoss { loss, .. } => Error::NonFiniteLoss { epoch, step, loss },
                other => other,
            })?;
            for (&i, &l) in chunk.iter().zip(&losses) {
                loss_sum += f64::from(l);
                let entry = group_sums.entry(data.keys[i]).or_insert((0.0, 0));
                entry.0 += f64::from(l);
                entry.1 += 1;
            }
        }

        let val_auc = roc_auc(&data.predict(&model, &val), &val_labels)?;
        if stopper.observe(epoch, val_auc) {
            best_model = model.clone();
        }
        let record = EpochMetrics {
            epoch,
            train_loss: loss_sum / fit.len() as f64,
            group_losses: group_sums
                .iter()
                .map(|(k, &(s, n))| (k.to_string(), s / n as f64))
                .collect(),
            val_auc,
            q: group_weights
                .as_ref()
                .map(|w| w.keys.iter().map(|k| k.to_string()).zip(w.q.iter().copied()).collect()),
        };
        if let Some(file) = jsonl.as_mut() {
            writeln!(file, "{}", serde_json::to_string(&record)?)?;
        }
        metrics.push(record);
        if stopper.should_stop() {
            break;
        }
    }

    let epochs_run = metrics.len();
    let mut run = TrainRun {
        config: config.clone(),
        metrics,
        best_epoch: stopper.best_epoch,
        best_val_auc: stopper.best,
        epochs_run,
        early_stopped: stopper.should_stop(),
        n_fit: fit.len(),
        validation_ids: val.iter().map(|&i| data.ids[i].clone()).collect(),
        wall_time_secs: 0.0,
        test_labels_read: false,
        model_path: None,
        model: best_model,
    };
    if let Some(dir) = out_dir {
        let path = dir.join("model.bin");
        save_model(&run.model, &path)?;
        run.model_path = Some(path);
    }
    run.wall_time_secs = started.elapsed().as_secs_f64();
    if let Some(dir) = out_dir {
        fs::write(dir.join("run.json"), serde_json::to_string_pretty(&run)? + "\n")?;
    }
    Ok(run)
}

/// Group weights over the environments of the fitted samples, with `n_g`
/// counted on the fitted part only.
fn dro_weights(
    data: &ImageSet,
    fit: &[usize],
    partition: &EnvironmentPartition,
    config: &TrainConfig,
) -> Result<GroupWeights> {
    let mut membership: HashMap<&str, EnvironmentKey> = HashMap::new();
    for env in &partition.environments {
        for id in &env.ids {
            membership.insert(id, env.key);
        }
    }
    let mut sizes: BTreeMap<EnvironmentKey, usize> = BTreeMap::new();
    for &i in fit {
        let key = membership
            .get(data.ids[i].as_str())
            .ok_or_else(|| Error::Integrity(format!("training id `{}` is in no environment", data.ids[i])))?;
        if *key != data.keys[i] {
            return Err(Error::Integrity(format!(
                "environment of `{}` disagrees with its manifest record",
                data.ids[i]
            )));
        }
        *sizes.entry(*key).or_insert(0) += 1;
    }
    let groups: Vec<(EnvironmentKey, usize)> = sizes.into_iter().collect();
    GroupWeights::new(&groups, config.eta_q, config.adjustment)
}
