//! ERM, GroupDRO and RSC training with validation-AUC early stopping and
//! grid-search model selection.

mod augment;
mod data;
mod grid;
mod groups;
mod run;
mod step;

pub use augment::Augmentation;
pub use data::{validation_split, ImageSet};
pub use grid::{grid_search, grid_search_on, GridEntry, GridResult, GridSpec};
pub use groups::GroupWeights;
pub use run::{train, train_on, EarlyStopper, EpochMetrics, TrainRun};
pub use step::{erm_step, groupdro_step, rsc_mask, rsc_mute_count, rsc_step, top_gradient_indices, Batch};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::CnnConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "erm")]
    Erm,
    #[serde(rename = "groupdro")]
    GroupDro,
    #[serde(rename = "rsc")]
    Rsc,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Erm, Method::GroupDro, Method::Rsc];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Erm => "erm",
            Method::GroupDro => "groupdro",
            Method::Rsc => "rsc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s.to_ascii_lowercase())
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub learning_rate: f32,
    pub weight_decay: f32,
    pub momentum: f32,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    /// GroupDRO weight step size.
    pub eta_q: f64,
    /// GroupDRO generalization adjustment `C`.
    pub adjustment: f64,
    /// RSC drop percentile `p` in `[0, 100)`.
    pub rsc_percentile: f64,
    /// RSC fraction of each batch that is muted.
    pub rsc_fraction: f64,
    /// Fraction of the training ids held out for validation.
    pub validation_fraction: f64,
    pub seed: u64,
    pub augmentation: Augmentation,
    pub model: CnnConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Erm,
            learning_rate: 0.01,
            weight_decay: 1e-4,
            momentum: 0.9,
            max_epochs: 100,
            patience: 22,
            batch_size: 32,
            eta_q: 0.01,
            adjustment: 0.0,
            rsc_percentile: 33.0,
            rsc_fraction: 0.5,
            validation_fraction: 0.15,
            seed: 0,
            augmentation: Augmentation::standard(),
            model: CnnConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be a non-negative number, got {}",
                self.learning_rate
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!(
                "weight_decay must be a non-negative number, got {}",
                self.weight_decay
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.max_epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return bad("max_epochs, patience and batch_size must be positive".into());
        }
        if !(0.0..=5.0).contains(&self.adjustment) {
            return bad(format!("adjustment must lie in [0, 5], got {}", self.adjustment));
        }
        step::validate_rsc(self.rsc_percentile, self.rsc_fraction)?;
        Ok(())
    }
}
