//! Debiasing toolkit for binary image classifiers under spurious artifact
//! correlations.
//!
//! The pipeline: [`bias`] builds trap train/test splits with tunable bias and
//! groups training samples into artifact environments, [`training`] fits
//! ERM / GroupDRO / RSC classifiers, [`noisecrop`] censors test images down to
//! the lesion, and [`eval`] measures ROC AUC across bias sweeps.

pub mod artifact;
pub mod bias;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod nn;
pub mod noisecrop;
pub mod seed;
pub mod training;

pub use artifact::{Artifact, ArtifactVector, N_ARTIFACTS};
pub use error::{Error, Result};
