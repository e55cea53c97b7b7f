use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown mean-model family `{0}`")]
    UnknownFamily(String),

    #[error("family `{family}` expects {expected} parameters, got {got}")]
    ParamLength {
        family: String,
        expected: usize,
        got: usize,
    },

    #[error("family `{family}`: parameter {index} must be positive, got {value}")]
    Constraint {
        family: String,
        index: usize,
        value: f64,
    },

    #[error("sigma model has {terms} terms but {coefs} coefficients")]
    SigmaLength { terms: usize, coefs: usize },

    #[error("non-finite likelihood contribution at observation {index}")]
    NonFinite { index: usize },

    #[error("model not identifiable: {distinct} distinct design points for {params} mean parameters")]
    Identifiability { distinct: usize, params: usize },

    #[error("optimizer did not converge after {attempts} start(s)")]
    NonConvergence { attempts: usize },

    #[error("bootstrap level {level} replicate {replicate}: refit failed after {retries} regenerations")]
    BootstrapExhausted {
        level: u8,
        replicate: usize,
        retries: usize,
    },

    #[error("surface side {side:?} does not match hypothesis form {form:?}")]
    SideMismatch {
        side: crate::model::Side,
        form: crate::model::Form,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
