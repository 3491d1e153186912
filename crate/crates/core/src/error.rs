use thiserror::Error;

use crate::semilinear::NewtonReport;

/// Errors produced by the discretization, solvers and studies.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("non-finite value in {what} on triangle {triangle}")]
    NonFinite { what: &'static str, triangle: usize },

    #[error("negative weight {value:e} at a quadrature point of triangle {triangle}")]
    NegativeWeight { triangle: usize, value: f64 },

    #[error("monotonicity violated: df/dy = {value:e} on triangle {triangle}")]
    NonMonotone { triangle: usize, value: f64 },

    #[error("empty control box on triangle {triangle}: u_a = {lower}, u_b = {upper}")]
    EmptyBox {
        triangle: usize,
        lower: f64,
        upper: f64,
    },

    #[error("operator is not symmetric")]
    NotSymmetric,

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    LinearSolver { iterations: usize, residual: f64 },

    #[error("Newton iteration failed after {} iterations (residual {:e})", .0.iterations, .0.final_residual())]
    NewtonDivergence(Box<NewtonReport>),

    #[error("fields live on different meshes")]
    MeshMismatch,

    #[error("perturbation size {size} exceeds the admissible bound {bound}")]
    PerturbationTooLarge { size: f64, bound: f64 },

    #[error("manufactured construction failed: {0}")]
    Construction(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
