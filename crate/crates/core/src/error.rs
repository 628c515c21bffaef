use thiserror::Error;

/// Errors produced by the library. Solver payloads (iterates, residuals) are
/// reported as `f64` regardless of the scalar type the fit ran at.
#[derive(Debug, Error)]
pub enum Error {
    #[error("load error in {path}:{line}: {message}")]
    Load {
        path: String,
        line: usize,
        message: String,
    },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("cell {cell_id}: cycle {cycle} not present")]
    MissingCycle { cell_id: String, cycle: u32 },

    #[error("cell {cell_id}: degraded at start (first fade point below threshold)")]
    DegradedAtStart { cell_id: String },

    #[error("coverage error for {context}: {message}")]
    Coverage { context: String, message: String },

    #[error("domain error for feature {feature}: {transform} undefined at {value}")]
    Domain {
        feature: String,
        transform: String,
        value: f64,
    },

    #[error("column {name} is constant and cannot be standardized; remove it")]
    ConstantColumn { name: String },

    #[error("feature error: {0}")]
    Feature(String),

    #[error("identifiability error: {message}; dependent columns: {columns:?}")]
    Identifiability {
        message: String,
        columns: Vec<String>,
    },

    #[error(
        "solver did not converge after {iterations} iterations \
         (stationarity residual {kkt:.6e}, primal {primal:.6e}, dual {dual:.6e})"
    )]
    NonConvergence {
        iterations: usize,
        kkt: f64,
        primal: f64,
        dual: f64,
        coefficients: Vec<f64>,
        intercept: f64,
    },

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("cross-validation error: {0}")]
    CrossValidation(String),

    #[error("bootstrap unstable: {failures} of {total} resample refits failed to converge")]
    BootstrapUnstable { failures: usize, total: usize },

    #[error("diagnostics error: {0}")]
    Diagnostics(String),

    #[error("synthesis error: {0}")]
    Synth(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    WithContext {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with a location note, preserving the root variant for
    /// exit-code mapping.
    pub fn with_context(self, context: impl Into<String>) -> Self {
        Error::WithContext {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Unwraps context layers down to the root error.
    pub fn root(&self) -> &Error {
        match self {
            Error::WithContext { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
