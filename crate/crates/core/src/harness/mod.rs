//! Image I/O, procedural inputs and the experiment suite.

pub mod checks;
pub mod config;
pub mod images;
pub mod suite;

pub use config::ExperimentConfig;
pub use images::{load_ppm, save_ppm, ImageKind, PpmError, ProceduralImage};
pub use suite::{run_experiment_suite, SuiteReport, COVERAGE_CHECKLIST, OUTPUT_FILES};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Ppm(#[from] PpmError),
    #[error(transparent)]
    Numerics(#[from] crate::numerics::NumericsError),
    #[error(transparent)]
    Descriptor(#[from] crate::descriptor::DescriptorError),
    #[error(transparent)]
    Attack(#[from] crate::attack::AttackError),
    #[error(transparent)]
    Defense(#[from] crate::defense::DefenseError),
    #[error(transparent)]
    Circuit(#[from] crate::circuit::CircuitError),
    #[error(transparent)]
    Proof(#[from] crate::proof::ProofError),
    #[error(transparent)]
    Chain(#[from] crate::chain::ChainError),
    #[error("stage {stage} failed: {reason}")]
    Stage { stage: &'static str, reason: String },
}
