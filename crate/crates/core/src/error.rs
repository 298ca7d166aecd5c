use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// The CLI maps the variants onto its exit-code contract, see
/// [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    /// A caller passed arguments that violate an operation's preconditions.
    #[error("invalid input: {0}")]
    Input(String),

    /// A model failed validation at construction time.
    #[error("model validation failed: {0}")]
    Validation(String),

    /// A configuration file or chain configuration is malformed.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    /// The Markov chain produced a non-finite energy.
    #[error("non-finite energy {energy} at step {step} in state {state:?}")]
    NonFiniteEnergy {
        step: u64,
        energy: f64,
        state: Vec<f64>,
    },

    /// A sampler run failed for a specific ladder rung.
    #[error("chain at alpha = {alpha} failed: {source}")]
    Ladder {
        alpha: f64,
        #[source]
        source: Box<Error>,
    },

    /// An exact oracle declined to produce a result.
    #[error("oracle refused: {0}")]
    OracleRefused(String),

    /// A deterministic numerical routine broke down.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: msg.into(),
        }
    }

    /// Process exit code: 2 for schema/config problems, 3 for sampler
    /// failures, 4 for oracle refusals, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Validation(_) | Error::Input(_) => 2,
            Error::NonFiniteEnergy { .. } | Error::Ladder { .. } => 3,
            Error::OracleRefused(_) => 4,
            Error::Numerical(_) | Error::Io(_) | Error::Json(_) => 1,
        }
    }
}
