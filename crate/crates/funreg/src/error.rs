use thiserror::Error;

/// Errors produced by the estimation toolkit.
#[derive(Error, Debug)]
pub enum FunRegError {
    #[error("spline dimension {dof} is smaller than the order {order}")]
    DofBelowOrder { dof: usize, order: usize },

    #[error("spline order must be at least 1")]
    InvalidOrder,

    #[error("evaluation point {0} lies outside [0, 1]")]
    PointOutOfDomain(f64),

    #[error("derivative order {deriv} must be below the spline order {order}")]
    DerivativeTooHigh { deriv: usize, order: usize },

    #[error("covariate grid has {got} points; at least {need} are required")]
    GridTooCoarse { got: usize, need: usize },

    #[error("eigenvalue grid too coarse: {0} points (need at least 32)")]
    EigenGridTooCoarse(usize),

    #[error("requested {n_eigs} eigenvalues from a {n_grid}-point discretization")]
    TooManyEigenvalues { n_eigs: usize, n_grid: usize },

    #[error("Cholesky factorization failed even at the maximum jitter level")]
    CholeskyFailed,

    #[error("roughness form has {found} near-null directions; expected at most {expected} (degenerate knots?)")]
    KnotDegeneracy { found: usize, expected: usize },

    #[error("regularized covariance form is numerically singular after the null-space fix")]
    SingularCovarianceForm,

    #[error("gamma entry {index} is non-positive ({value}) inside the growth-fit window")]
    NonPositiveGamma { index: usize, value: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("bandwidth must be positive, got {0}")]
    InvalidBandwidth(f64),

    #[error("weight matrix is not a valid Laplacian input: {0}")]
    InvalidLaplacian(String),

    #[error("eigenvalue range [{m_lo}, {m_hi}] is invalid for {m} vertices (m_lo >= 5, m_hi <= m)")]
    InvalidSpectralRange { m_lo: usize, m_hi: usize, m: usize },

    #[error("rank degeneracy: singular value {index} fell to {value:.3e}")]
    RankDegeneracy { index: usize, value: f64 },

    #[error("rank {rank} is outside 1..=min({k}, {m})")]
    RankOutOfrange { rank: usize, k: usize, m: usize },

    #[error("logistic loss requires responses in {{0, 1}}; found {0}")]
    InvalidLabel(f64),

    #[error("quantile level must lie strictly inside (0, 1); got {0}")]
    InvalidQuantileLevel(f64),

    #[error("linear system is singular (eta1 = 0 with N < K?)")]
    SingularSystem,

    #[error("conjugate gradient failed to reach tolerance {tol:.1e} in {iters} iterations (residual {residual:.3e})")]
    CgDidNotConverge { iters: usize, tol: f64, residual: f64 },

    #[error("rate slope needs at least 4 strictly positive points")]
    InsufficientSlopePoints,

    #[error("non-positive value in log-log regression input")]
    NonPositiveSlopeInput,

    #[error("dataset is inconsistent: {0}")]
    InvalidDataset(String),

    #[error("scenario configuration invalid: {0}")]
    InvalidScenario(String),

    #[error("linear algebra backend error: {0}")]
    Linalg(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}

impl From<ndarray_linalg::error::LinalgError> for FunRegError {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        FunRegError::Linalg(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, FunRegError>;
