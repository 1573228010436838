//! Experiment pipelines: hard curation, rho and beta sweeps, the K_des
//! scaling study and entropy-curve export, plus the synthetic fixture
//! family used for desk-scale checks.

pub mod config;
pub mod output;
pub mod pipeline;
pub mod runner;
pub mod synthetic;

pub use config::{AlignmentFormat, ExperimentConfig, ExperimentKind, MarkerSpec, Mode};
pub use output::{CurveSummary, MetricsRow, RunManifest};
pub use pipeline::{evaluate_generation, generate, ConditionMetrics, Generation, PreparedMemory};
pub use runner::{
    export_entropy_curves, load_family, replay, run_beta_sweep, run_experiment, run_hard_curation, run_rho_sweep,
    run_scaling_study, ConditionOutput, Family, RunOutput,
};
pub use synthetic::{generate_synthetic_family, SyntheticFamilySpec};
