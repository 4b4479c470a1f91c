use super::grid::TimeGrid;
use super::matrix::Matrix;
use crate::{Error, Result};

/// Backward RK4 integration of the affine system `y' = coef(t) y + src(t)`
/// from `y(t1) = terminal` down to `t0`, returning the value at every node.
///
/// The classical fourth-order scheme marches with step `-dt`; the terminal
/// node holds `terminal` exactly.
pub fn integrate_linear_ode_backward<F>(
    rhs: F,
    terminal: &[f64],
    grid: &TimeGrid,
) -> Result<Vec<Vec<f64>>>
where
    F: Fn(f64) -> (Matrix, Vec<f64>),
{
    let dim = terminal.len();
    let check = |coef: &Matrix, src: &Vec<f64>| -> Result<()> {
        if coef.rows() != dim || coef.cols() != dim || src.len() != dim {
            return Err(Error::Dimension(format!(
                "rhs shape ({}x{}, {}) does not match state dimension {dim}",
                coef.rows(),
                coef.cols(),
                src.len()
            )));
        }
        Ok(())
    };

    let eval = |t: f64, y: &[f64]| -> Result<Vec<f64>> {
        let (coef, src) = rhs(t);
        check(&coef, &src)?;
        let mut out = coef.matvec(y);
        for (o, s) in out.iter_mut().zip(&src) {
            *o += s;
        }
        Ok(out)
    };

    let nodes = grid.nodes();
    let h = -grid.dt();
    let mut values = vec![Vec::new(); nodes];
    values[nodes - 1] = terminal.to_vec();

    let mut y = terminal.to_vec();
    for k in (1..nodes).rev() {
        let t = grid.time(k);
        let k1 = eval(t, &y)?;
        let y2: Vec<f64> = y.iter().zip(&k1).map(|(a, b)| a + 0.5 * h * b).collect();
        let k2 = eval(t + 0.5 * h, &y2)?;
        let y3: Vec<f64> = y.iter().zip(&k2).map(|(a, b)| a + 0.5 * h * b).collect();
        let k3 = eval(t + 0.5 * h, &y3)?;
        let y4: Vec<f64> = y.iter().zip(&k3).map(|(a, b)| a + h * b).collect();
        let k4 = eval(t + h, &y4)?;
        for i in 0..dim {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        values[k - 1] = y.clone();
    }
    Ok(values)
}

/// Backward RK4 on a matrix-valued ODE `Y' = f(t, Y)` from `Y(t1) = terminal`.
///
/// Used for the Riccati flows; a blow-up check runs every step.
pub fn integrate_matrix_ode_backward<F>(
    f: F,
    terminal: Matrix,
    grid: &TimeGrid,
) -> Result<Vec<Matrix>>
where
    F: Fn(f64, &Matrix) -> Matrix,
{
    let nodes = grid.nodes();
    let h = -grid.dt();
    let mut values: Vec<Matrix> = vec![Matrix::zeros(0, 0); nodes];
    let mut y = terminal.clone();
    values[nodes - 1] = terminal;
    for k in (1..nodes).rev() {
        let t = grid.time(k);
        let k1 = f(t, &y);
        let k2 = f(t + 0.5 * h, &y.add(&k1.scale(0.5 * h)));
        let k3 = f(t + 0.5 * h, &y.add(&k2.scale(0.5 * h)));
        let k4 = f(t + h, &y.add(&k3.scale(h)));
        y = y
            .add(&k1.scale(h / 6.0))
            .add(&k2.scale(h / 3.0))
            .add(&k3.scale(h / 3.0))
            .add(&k4.scale(h / 6.0));
        if !y.is_finite() {
            return Err(Error::RiccatiBlowUp { t: grid.time(k - 1) });
        }
        values[k - 1] = y.clone();
    }
    Ok(values)
}
