//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or model file (bad dimensions, non-positive
    /// parameters, schema mismatch, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Trig normalization is undefined when both sin and cos are zero.
    #[error("degenerate heading: s and c are both zero")]
    DegenerateHeading,

    /// A least-squares block has a (near-)singular regressor.
    #[error("identifiability error in the {block} block: {detail}")]
    Identifiability { block: &'static str, detail: String },

    /// Training loss became non-finite.
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDiverged { epoch: usize },

    /// The feasible input set for the given previous input is empty.
    #[error("infeasible projection: empty input set for u_prev = ({0}, {1})")]
    InfeasibleProjection(f64, f64),

    /// Numerical-integration domain does not hold enough probability mass.
    #[error("integration domain too small: relative mass outside is {0:.3e}")]
    DomainTooSmall(f64),

    /// Continuity statistics require projection-free rollouts.
    #[error("continuity measurement invalid: projection active at rollout step {step}")]
    MeasurementInvalid { step: usize },

    /// Malformed raw logs or an otherwise unusable preprocessing input.
    #[error("preprocess error: {0}")]
    Preprocess(String),

    /// A closed-loop run left the divergence guard radius.
    #[error("run diverged: path error {e_path:.3} m at t = {t:.3} s")]
    Diverged { t: f64, e_path: f64 },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
