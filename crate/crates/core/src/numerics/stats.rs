use crate::{Error, Result};

/// Pairwise (cascade) summation. Deterministic for a fixed input order and
/// more accurate than a running sum on long Monte Carlo tallies.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(values) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Ordinary least squares on `(ln x, ln y)`; returns `(slope, intercept)`.
///
/// Rejects fewer than two points and any non-positive coordinate.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 2 {
        return Err(Error::NonPositiveData(format!(
            "log-log fit needs at least 2 points, got {}",
            points.len()
        )));
    }
    for &(x, y) in points {
        if !(x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite()) {
            return Err(Error::NonPositiveData(format!(
                "log-log fit needs positive finite coordinates, got ({x}, {y})"
            )));
        }
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = points.len() as f64;
    let mx = pairwise_sum(&lx) / n;
    let my = pairwise_sum(&ly) / n;
    let sxx: Vec<f64> = lx.iter().map(|x| (x - mx) * (x - mx)).collect();
    let sxy: Vec<f64> = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (x - mx) * (y - my))
        .collect();
    let denom = pairwise_sum(&sxx);
    if denom == 0.0 {
        return Err(Error::NonPositiveData(
            "log-log fit needs at least two distinct x values".into(),
        ));
    }
    let slope = pairwise_sum(&sxy) / denom;
    let intercept = my - slope * mx;
    Ok((slope, intercept))
}
