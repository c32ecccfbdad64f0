use thiserror::Error;

/// Errors raised by estimation, testing and the simulation harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("rank deficient design in {context} (condition estimate {condition:.3e})")]
    RankDeficient { context: String, condition: f64 },

    #[error("Q matrix of regime {regime} is not positive definite")]
    SingularQ { regime: usize },

    #[error("middle matrix of the Wald form is singular")]
    SingularMiddle,

    #[error("no admissible partition: {0}")]
    Infeasible(String),

    #[error("no regime of the {breaks}-break fit admits an extra break")]
    InfeasibleRegime { breaks: usize },

    #[error("degenerate statistic: {0}")]
    Degenerate(String),

    #[error("empty bootstrap distribution")]
    EmptyDraws,

    #[error("{failed} of {total} bootstrap replications failed (cap is 5%)")]
    FailureCap { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::RankDeficient { .. } | Error::SingularQ { .. } | Error::SingularMiddle | Error::Degenerate(_) | Error::FailureCap { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
