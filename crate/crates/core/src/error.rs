use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, grids or horizons that do not line up.
    #[error("structural mismatch: {0}")]
    Structure(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    /// Every action of a state carries zero weight, so the softmax has no mass.
    #[error("step {step}, state {state}: no action with positive twisted weight (all KL terms infinite or reference zero)")]
    UnnormalizableRow { step: usize, state: usize },
    #[error("observation {observation}: observed action has zero modified-control weight")]
    ZeroLikelihood { observation: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by arithmetic rather than malformed inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::UnnormalizableRow { .. } | Error::ZeroLikelihood { .. } | Error::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
