//! Artifact/label correlation audits, trap splits and artifact environments.

mod correlation;
mod environments;
mod trap;

pub use correlation::{correlation_report, spearman_binary, CorrelationReport, CorrelationRow};
pub use environments::{build_environments, Environment, EnvironmentKey, EnvironmentPartition, MAX_ENVIRONMENTS};
pub use trap::{artifact_signs, build_trap_split, random_split, split_objective, Side, TrapSplit, DEFAULT_SWAP_BUDGET};
