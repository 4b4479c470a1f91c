//! Raw problem data of the leader-follower model, assumption checks and the
//! `Xi` shorthand matrices that feed the block assembly.

use crate::numerics::{symmetric_eigenvalues, Matrix};
use crate::{Error, Result};

/// Tolerance for numerical symmetry / semidefiniteness checks.
const EIG_TOL: f64 = 1e-10;

/// Default lower bound `delta` for the control-weight positivity check.
pub const DEFAULT_DELTA: f64 = 1e-8;

/// Coefficients of the leader-follower dynamics and costs, plus the laws of
/// the initial states. Coefficients are constant in time.
///
/// Dynamics (state dim `n`, control dim `m`, noise dim `d`):
///
/// ```text
/// leader:    dx0 = [a0 x0 + b0 u0 + c0 x_avg] dt + d0 dW0
/// follower:  dxi = [a xi + b ui + c x_avg + f x0] dt + d dWi
/// ```
///
/// Running costs penalize `x0 - theta0 x_avg - eta0` (leader, weight `q0`)
/// and `xi - theta x_avg - theta1 x0 - eta` (follower, weight `q`) plus the
/// control energies `u' r0 u` / `u' r u`; terminal costs use the hatted
/// couplings with weights `g0`, `g`. The social cost is
/// `alpha * N * J0 + sum_i Ji`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    // leader dynamics
    pub a0: Matrix,
    pub b0: Matrix,
    pub c0: Matrix,
    pub d0: Matrix,
    // follower dynamics
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
    pub f: Matrix,
    // leader cost
    pub q0: Matrix,
    pub r0: Matrix,
    pub g0: Matrix,
    pub theta0: Matrix,
    pub theta_hat0: Matrix,
    pub eta0: Vec<f64>,
    pub eta_hat0: Vec<f64>,
    // follower cost
    pub q: Matrix,
    pub r: Matrix,
    pub g: Matrix,
    pub theta: Matrix,
    pub theta1: Matrix,
    pub theta_hat: Matrix,
    pub theta_hat1: Matrix,
    pub eta: Vec<f64>,
    pub eta_hat: Vec<f64>,
    // social weight and horizon
    pub alpha: f64,
    pub horizon: f64,
    // initial laws (componentwise Gaussian)
    pub xi0_mean: Vec<f64>,
    pub xi0_std: Vec<f64>,
    pub xi_hat: Vec<f64>,
    pub xi_std: Vec<f64>,
}

impl ModelParams {
    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.cols()
    }

    pub fn noise_dim(&self) -> usize {
        self.d.cols()
    }

    /// The scalar benchmark scenario: one-dimensional states, zero terminal
    /// weights, unit-variance initial laws. Used across the test suites and
    /// shipped with the CLI as `scalar_benchmark.json`.
    pub fn scalar_benchmark() -> Self {
        let s = Matrix::scalar;
        ModelParams {
            a0: s(0.1),
            b0: s(1.0),
            c0: s(0.01),
            d0: s(1.0),
            a: s(0.05),
            b: s(1.0),
            c: s(0.05),
            d: s(1.0),
            f: s(0.3),
            q0: s(1.0),
            r0: s(10.0),
            g0: s(0.0),
            theta0: s(1.0),
            theta_hat0: s(0.0),
            eta0: vec![0.0],
            eta_hat0: vec![0.0],
            q: s(0.9),
            r: s(15.0),
            g: s(0.0),
            theta: s(0.1),
            theta1: s(1.0),
            theta_hat: s(0.0),
            theta_hat1: s(0.0),
            eta: vec![0.0],
            eta_hat: vec![0.0],
            alpha: 1.02,
            horizon: 12.0,
            xi0_mean: vec![0.0],
            xi0_std: vec![1.0],
            xi_hat: vec![0.0],
            xi_std: vec![1.0],
        }
    }
}

fn require_shape(name: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.rows() != rows || m.cols() != cols {
        return Err(Error::Shape(format!(
            "{name} must be {rows}x{cols}, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    Ok(())
}

fn require_len(name: &str, v: &[f64], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::Shape(format!(
            "{name} must have {len} components, got {}",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NotFinite { what: "vector entry" });
    }
    Ok(())
}

fn require_symmetric(name: &str, m: &Matrix) -> Result<()> {
    if m.sub(&m.transpose()).max_abs() > EIG_TOL {
        return Err(Error::NotSymmetric(name.to_string()));
    }
    Ok(())
}

fn min_eigenvalue(m: &Matrix) -> Result<f64> {
    let ev = symmetric_eigenvalues(m)?;
    Ok(ev.into_iter().fold(f64::INFINITY, f64::min))
}

/// Checks the standing assumptions: all shapes consistent with `(n, m, d)`,
/// state and terminal weights symmetric positive semidefinite, control
/// weights symmetric with minimum eigenvalue above `delta`, positive horizon
/// and social weight, finite initial laws. Returns the params unchanged.
pub fn validate_params(p: ModelParams, delta: f64) -> Result<ModelParams> {
    let n = p.state_dim();
    let m = p.control_dim();
    let d = p.noise_dim();
    if n == 0 || m == 0 || d == 0 {
        return Err(Error::Shape("dimensions must be positive".into()));
    }

    for (name, mat, rows, cols) in [
        ("A0", &p.a0, n, n),
        ("C0", &p.c0, n, n),
        ("A", &p.a, n, n),
        ("C", &p.c, n, n),
        ("F", &p.f, n, n),
        ("B0", &p.b0, n, m),
        ("B", &p.b, n, m),
        ("D0", &p.d0, n, d),
        ("D", &p.d, n, d),
        ("Q0", &p.q0, n, n),
        ("G0", &p.g0, n, n),
        ("Q", &p.q, n, n),
        ("G", &p.g, n, n),
        ("R0", &p.r0, m, m),
        ("R", &p.r, m, m),
        ("Theta0", &p.theta0, n, n),
        ("ThetaHat0", &p.theta_hat0, n, n),
        ("Theta", &p.theta, n, n),
        ("Theta1", &p.theta1, n, n),
        ("ThetaHat", &p.theta_hat, n, n),
        ("ThetaHat1", &p.theta_hat1, n, n),
    ] {
        require_shape(name, mat, rows, cols)?;
    }
    for (name, v, len) in [
        ("eta0", &p.eta0, n),
        ("eta_hat0", &p.eta_hat0, n),
        ("eta", &p.eta, n),
        ("eta_hat", &p.eta_hat, n),
        ("xi0_mean", &p.xi0_mean, n),
        ("xi0_std", &p.xi0_std, n),
        ("xi_hat", &p.xi_hat, n),
        ("xi_std", &p.xi_std, n),
    ] {
        require_len(name, v, len)?;
    }

    for (name, mat) in [
        ("Q0", &p.q0),
        ("G0", &p.g0),
        ("Q", &p.q),
        ("G", &p.g),
        ("R0", &p.r0),
        ("R", &p.r),
    ] {
        require_symmetric(name, mat)?;
    }
    for (name, mat) in [("Q0", &p.q0), ("G0", &p.g0), ("Q", &p.q), ("G", &p.g)] {
        let min_eig = min_eigenvalue(mat)?;
        if min_eig < -EIG_TOL {
            return Err(Error::NotPsd { name: match name {
                "Q0" => "Q0",
                "G0" => "G0",
                "Q" => "Q",
                _ => "G",
            }, min_eig });
        }
    }
    for mat in [&p.r0, &p.r] {
        let min_eig = min_eigenvalue(mat)?;
        if min_eig <= delta {
            return Err(Error::NotUniformlyPositive { min_eig, delta });
        }
    }

    if !(p.horizon.is_finite() && p.horizon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "horizon must be positive, got {}",
            p.horizon
        )));
    }
    if !(p.alpha.is_finite() && p.alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be positive, got {}",
            p.alpha
        )));
    }
    for (name, v) in [("xi0_std", &p.xi0_std), ("xi_std", &p.xi_std)] {
        if v.iter().any(|x| *x < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "{name} must be componentwise nonnegative"
            )));
        }
    }
    Ok(p)
}

/// The ten shorthand matrices/vectors built from the cost couplings.
///
/// With `S := I - theta^T`:
///
/// ```text
/// xi1 = S q (I - theta) + alpha theta0^T q0 theta0
/// xi2 = S q theta1 + alpha theta0^T q0
/// xi3 = S q eta - alpha theta0^T q0 eta0
/// xi4 = theta1^T q theta1 + alpha q0
/// xi5 = theta1^T q eta - alpha q0 eta0
/// ```
///
/// and the `_g` counterparts replace `(q, theta, theta0, theta1, eta, eta0)`
/// by the terminal data `(g, theta_hat, theta_hat0, theta_hat1, eta_hat,
/// eta_hat0)` with weights `g`, `g0`.
#[derive(Debug, Clone, PartialEq)]
pub struct XiTerms {
    pub xi1: Matrix,
    pub xi2: Matrix,
    pub xi3: Vec<f64>,
    pub xi4: Matrix,
    pub xi5: Vec<f64>,
    pub xi1_g: Matrix,
    pub xi2_g: Matrix,
    pub xi3_g: Vec<f64>,
    pub xi4_g: Matrix,
    pub xi5_g: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn xi_family(
    n: usize,
    alpha: f64,
    q: &Matrix,
    q0: &Matrix,
    theta: &Matrix,
    theta0: &Matrix,
    theta1: &Matrix,
    eta: &[f64],
    eta0: &[f64],
) -> (Matrix, Matrix, Vec<f64>, Matrix, Vec<f64>) {
    let ident = Matrix::identity(n);
    let s = ident.sub(&theta.transpose()); // I - theta^T
    let sq = s.matmul(q);
    let th0t_q0 = theta0.transpose().matmul(q0);
    let th1t_q = theta1.transpose().matmul(q);

    let xi1 = sq
        .matmul(&ident.sub(theta))
        .add(&th0t_q0.matmul(theta0).scale(alpha));
    let xi2 = sq.matmul(theta1).add(&th0t_q0.scale(alpha));
    let xi3: Vec<f64> = sq
        .matvec(eta)
        .iter()
        .zip(th0t_q0.matvec(eta0))
        .map(|(a, b)| a - alpha * b)
        .collect();
    let xi4 = th1t_q.matmul(theta1).add(&q0.scale(alpha));
    let xi5: Vec<f64> = th1t_q
        .matvec(eta)
        .iter()
        .zip(q0.matvec(eta0))
        .map(|(a, b)| a - alpha * b)
        .collect();
    (xi1, xi2, xi3, xi4, xi5)
}

/// Evaluates the shorthand matrices for validated params.
pub fn compute_xi_terms(p: &ModelParams) -> XiTerms {
    let n = p.state_dim();
    let (xi1, xi2, xi3, xi4, xi5) = xi_family(
        n, p.alpha, &p.q, &p.q0, &p.theta, &p.theta0, &p.theta1, &p.eta, &p.eta0,
    );
    let (xi1_g, xi2_g, xi3_g, xi4_g, xi5_g) = xi_family(
        n,
        p.alpha,
        &p.g,
        &p.g0,
        &p.theta_hat,
        &p.theta_hat0,
        &p.theta_hat1,
        &p.eta_hat,
        &p.eta_hat0,
    );
    XiTerms {
        xi1,
        xi2,
        xi3,
        xi4,
        xi5,
        xi1_g,
        xi2_g,
        xi3_g,
        xi4_g,
        xi5_g,
    }
}
