use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("velocity grid cannot resolve the collision invariants: {0}")]
    DegenerateGrid(String),

    #[error("equilibrium is not a supersonic inflow state (Mach number {mach})")]
    NotSupersonic { mach: f64 },

    #[error("inconsistent linearized operator: {0}")]
    InconsistentOperator(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("iteration did not converge: {0}")]
    NonConvergence(String),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Io(_) | Error::Json(_) => 1,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
