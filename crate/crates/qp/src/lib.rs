//! Sparse convex quadratic programming by ADMM operator splitting.
//!
//! ```
//! use ideam_qp::{CscMatrix, QpProblem, Solver, Status};
//!
//! // minimize x² subject to x ≥ 1
//! let h = CscMatrix::from_triplets(1, 1, &[(0, 0, 2.0)]).unwrap();
//! let mut p = QpProblem::unconstrained(h, vec![0.0]);
//! p.lb[0] = 1.0;
//! let sol = Solver::default().solve(&p).unwrap();
//! assert_eq!(sol.status, Status::Optimal);
//! assert!((sol.x[0] - 1.0).abs() < 1e-6);
//! ```

mod admm;
mod csc;
pub mod ldl;
mod problem;

pub use admm::{infeasibility_certificate, QpSolution, Settings, Solver, Status};
pub use csc::{vstack, CscMatrix};
pub use problem::{QpProblem, StackedForm, WarmStart};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite data: {0}")]
    NonFinite(String),
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("problem is not convex: {0}")]
    NotConvex(String),
    #[error("factorization failed: {0}")]
    Factorization(String),
}
