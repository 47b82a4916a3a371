use thiserror::Error;

pub type Result<T> = std::result::Result<T, CuspError>;

#[derive(Debug, Error)]
pub enum CuspError {
    /// A scalar parameter lies outside the range where an operation is defined.
    #[error("parameter out of range: {0}")]
    Domain(String),

    /// The bracket for the cap profile root does not contain a sign change.
    #[error(
        "no sign change for the cap profile at |x̄| = {xbar_norm}, ε = {eps}: \
         residuals {residual_lo:e} and {residual_hi:e} (is ε₀ ≤ 1/4 and α > 1/2?)"
    )]
    Bracket {
        xbar_norm: f64,
        eps: f64,
        residual_lo: f64,
        residual_hi: f64,
    },

    #[error("residual {residual:e} of the cap profile equation exceeds tolerance {tol:e}")]
    Residual { residual: f64, tol: f64 },

    #[error("dimension {0} is not supported by this operation (only N = 2)")]
    UnsupportedDimension(usize),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("point ({0}, {1}) lies outside the domain of the map")]
    OutOfDomain(f64, f64),

    #[error("point ({0}, {1}) lies on a branch interface of the map")]
    Interface(f64, f64),

    #[error("singular Jacobian at ({0}, {1})")]
    Singular(f64, f64),

    #[error("matrix is not symmetric positive definite: {0}")]
    MatrixDomain(String),

    #[error("meshing failed: {0}")]
    Meshing(String),

    #[error("quadrature failed in element {element} at ({x}, {y}): {source}")]
    Quadrature {
        element: usize,
        x: f64,
        y: f64,
        #[source]
        source: Box<CuspError>,
    },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("eigensolver converged only {converged} of {requested} eigenpairs")]
    NotConverged { converged: usize, requested: usize },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("cluster mismatch: {0}")]
    Cluster(String),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("rate fit failed: {0}")]
    Fit(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CuspError {
    pub(crate) fn in_element(self, element: usize, x: f64, y: f64) -> Self {
        CuspError::Quadrature {
            element,
            x,
            y,
            source: Box::new(self),
        }
    }
}
