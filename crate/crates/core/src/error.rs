use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the simulator library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite input in {context}")]
    NonFiniteInput { context: &'static str },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// State magnitude exceeded the overflow guard during integration.
    #[error("integration blow-up at t = {time} s (|state[{index}]| > {guard:e})")]
    IntegrationBlowUp { time: f64, index: usize, guard: f64 },

    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    TrainingDiverged { epoch: usize, batch: usize },

    #[error("non-finite gradient in parameter block `{block}`")]
    NonFiniteGradient { block: String },

    /// A latent rollout left the finite range; reports the spectral radius of
    /// the transition matrix as the likely culprit.
    #[error("rollout diverged at step {step} (spectral radius {spectral_radius:.6})")]
    RolloutDiverged { step: usize, spectral_radius: f64 },

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{phase}: {source}")]
    Phase {
        phase: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps an error with a monitoring-phase label.
    pub fn in_phase(self, phase: &'static str) -> Self {
        Error::Phase {
            phase,
            source: Box::new(self),
        }
    }
}
