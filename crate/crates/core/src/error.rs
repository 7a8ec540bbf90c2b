use thiserror::Error;

use crate::psidsl::PsiError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Eigenvalues of a curvature matrix are not all strictly positive.
    #[error("curvature matrix leaves the positive cone (min eigenvalue {min_eigenvalue:e})")]
    ConeViolation { min_eigenvalue: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    /// The state fails `u*sigma + hess u > 0` at `node`.
    #[error("state is not admissible at node {node} (min eigenvalue {min_eigenvalue:e})")]
    NotAdmissible { node: usize, min_eigenvalue: f64 },

    #[error(transparent)]
    Psi(#[from] PsiError),

    #[error("singular linear system (zero pivot in column {column})")]
    Singular { column: usize },

    #[error("line search exhausted after {attempts} halvings (residual {residual:e})")]
    LineSearch { attempts: usize, residual: f64 },

    #[error("newton iteration did not converge in {iterations} iterations (residual {residual:e})")]
    NewtonDiverged { iterations: usize, residual: f64 },

    #[error("serrin condition violated: {0}")]
    Serrin(String),

    #[error("continuation failed: {0}")]
    Continuation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
