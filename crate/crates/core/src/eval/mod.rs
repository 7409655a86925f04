//! Evaluation: ROC AUC, test-time augmentation, bias-factor sweeps, external
//! evaluation, ScoreCAM saliency and report rendering.

mod external;
mod metrics;
mod report;
mod scorecam;
mod sweep;
mod tta;

pub use external::{artifact_prevalence, evaluate_external, EvalReport, ExternalConfig, ModelEval, PrevalenceRow};
pub use metrics::{mean_stderr, roc_auc};
pub use report::{
    correlation_html, render_report, saliency_overlay, sweep_auc_csv, ReportFiles, ReportInputs, SaliencyItem,
};
pub use scorecam::{combine_channels, layer_tag, scorecam, upsample_bilinear, SaliencyMap};
pub use sweep::{aggregate, factor_dir, run_trap_sweep, Arm, SweepAggregate, SweepCell, SweepConfig, SweepResult};
pub use tta::{model_hash, predict_tta, PredictionSet, DEFAULT_TTA_REPLICAS};
