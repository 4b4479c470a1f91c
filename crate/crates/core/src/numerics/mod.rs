//! Dense small-matrix linear algebra, the matrix exponential, fixed-step
//! RK4 integration and least-squares slope fitting.
//!
//! Everything here is pure and allocation-per-call; values are immutable
//! after construction and safe to share across threads.

mod expm;
mod grid;
mod matrix;
mod ode;
mod stats;

pub use expm::matrix_exponential;
pub use grid::{interp_matrix, interp_vector, trapezoid, TimeGrid};
pub use matrix::{determinant, symmetric_eigenvalues, Lu, Matrix};
pub use ode::{integrate_linear_ode_backward, integrate_matrix_ode_backward};
pub use stats::{loglog_slope, mean_and_se, pairwise_sum};

/// Serializes a number with 17 significant digits, which round-trips `f64`
/// exactly. All CSV output goes through this.
pub fn csv_num(x: f64) -> String {
    format!("{x:.16e}")
}
