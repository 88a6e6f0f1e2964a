use crate::dsl::{EvalError, ParseError};

/// Errors raised by the solvers.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("coefficient evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("monotonicity violated at node {node}: {detail}; refine the grid or rescale the coefficients")]
    MonotonicityViolation { node: usize, detail: String },
    #[error("obliqueness too weak at boundary node {node}: normal part {normal:.3e}, tangential part {tangential:.3e}")]
    ObliquenessTooWeak {
        node: usize,
        normal: f64,
        tangential: f64,
    },
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },
    #[error("extrapolation unstable: successive estimates {first:.6e} and {second:.6e}")]
    ExtrapolationUnstable { first: f64, second: f64 },
    #[error("cell constant {lambda:.3e} is not zero; the singular problem does not homogenize")]
    NonzeroCellConstant { lambda: f64 },
    #[error("affine model violated: relative deviation {deviation:.3e}")]
    AffinityViolation { deviation: f64 },
    #[error("{nodes} nodes per fast period, at least 16 are needed")]
    ResolutionInsufficient { nodes: usize },
    #[error("boundary penetration {depth:.3e} exceeds one cell; reduce dt")]
    StepRejected { depth: f64 },
    #[error("expected local time {value:.3e} is too small for the ratio estimator")]
    DegenerateDenominator { value: f64 },
    #[error("ergodic criterion fails: lambda_hat = {lambda_hat:.3e} > 0")]
    CriterionViolated { lambda_hat: f64 },
    #[error("singular linear system: {0}")]
    Singular(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
