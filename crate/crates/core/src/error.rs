use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid matrix shape: {0}")]
    Shape(String),
    #[error("matrix is not irreducible")]
    NotIrreducible,
    #[error("matrix is not row-stochastic: {0}")]
    NotStochastic(String),
    #[error("matrix has a negative entry at ({row}, {col}): {value}")]
    Negative { row: usize, col: usize, value: f64 },
    #[error("power iteration did not converge: residual {residual:e} after {iters} iterations")]
    NoConvergence { residual: f64, iters: usize },
    #[error("singular matrix (pivot {pivot:e} at column {column})")]
    Singular { pivot: f64, column: usize },
    #[error("fixed-point matrix A is singular and the system is inconsistent")]
    SingularA,
    #[error("feature covariance C is singular")]
    SingularC,
    #[error("feature Gram matrix is singular")]
    SingularGram,
    #[error("LSPE matrix B stayed singular for the whole run")]
    SingularB,
    #[error("projected matrix has a negative entry at ({row}, {col}): {value:e}")]
    NegativeQ { row: usize, col: usize, value: f64 },
    #[error("start state {0} out of range")]
    BadStart(usize),
    #[error("invalid policy: {0}")]
    BadPolicy(String),
    #[error("invalid model: {0}")]
    BadModel(String),
    #[error("step-size index {0} is out of range for this schedule")]
    BadIndex(u64),
    #[error("step-size exponent k = {0} must lie in (1/2, 1)")]
    BadK(f64),
    #[error("schedule is not square-summable")]
    NonSquareSummable,
    #[error("partial sums never reach {0} within the iteration cap")]
    Unreachable(f64),
    #[error("unsupported contraction modulus {0}; the closed form is only available for 0.9")]
    UnsupportedAlpha(f64),
    #[error("undefined logarithm at ({row}, {col}): a = {a:e}, b = {b:e}")]
    UndefinedLog { row: usize, col: usize, a: f64, b: f64 },
    #[error("iterate diverged at step {0}")]
    Diverged(u64),
    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
