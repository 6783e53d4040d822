//! Experiment executive: runs the balance, identification, LQR and tracking
//! experiments on both vertical planes and writes telemetry and summaries.

pub mod cli;
pub mod config;
pub mod experiments;
pub mod telemetry;

pub use config::ExperimentConfig;
pub use experiments::{
    excitation_peak_tilt, max_safe_alpha, run_balance, run_identify, run_lqr, run_pipeline, run_track, IdentifiedModel,
    IdentifyOutput, PipelineOutput, RunOutput,
};
pub use telemetry::{Metrics, RunStatus, RunSummary, TelemetryRow};
