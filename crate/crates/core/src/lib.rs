//! Solver and simulator for a leader-follower mean-field linear-quadratic
//! social-optimum control problem.
//!
//! One leader and `N` weakly coupled followers jointly minimize a social cost
//! `alpha * N * J_0 + sum_i J_i` over a finite horizon. As `N` grows, the
//! empirical follower average is replaced by a mean-field limit process and
//! the problem reduces to a ten-block forward-backward SDE (the consistency
//! condition system). The crate
//!
//! * assembles the block matrices of that system from the raw model data,
//! * checks the determinant-based solvability condition,
//! * decouples the system with a `5n x 5n` Riccati flow `K` and an affine
//!   offset `kappa`, plus the follower-level Riccati `P` with offset `phi`,
//! * simulates the mean-field path and the realized `N`-agent population
//!   under the resulting decentralized controls, and
//! * measures the mean-field approximation errors, their decay rate in `N`,
//!   and first-order optimality of the decentralized strategies.
//!
//! Modules mirror that pipeline: [`numerics`] (dense linear algebra, matrix
//! exponential, RK4, slope fits), [`model`] (problem data and validation),
//! [`assembly`] (block system and solvability scan), [`riccati`] (decoupling
//! solvers), [`simulate`] (SDE sampling, error and cost functionals) and
//! [`analysis`] (convergence studies and optimality probes).

pub mod analysis;
pub mod assembly;
pub mod model;
pub mod numerics;
pub mod riccati;
pub mod simulate;

mod error;

pub use error::{Error, Result};

pub use assembly::{BlockSystem, SolvabilityReport, DET_THRESHOLD};
pub use model::{ModelParams, XiTerms};
pub use numerics::{Matrix, TimeGrid};
pub use riccati::{CouplingSolution, FollowerSolution};
pub use simulate::{CostReport, ErrorFunctionals, ErrorReport, MeanFieldPath, PopulationRun};

pub use analysis::{ConvergenceReport, OptimalityProbe, SolvedSystem};
