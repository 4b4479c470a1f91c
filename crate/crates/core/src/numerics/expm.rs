use super::matrix::Matrix;
use crate::{Error, Result};

/// Degree-13 Padé numerator coefficients (denominator is the same with
/// alternating signs applied through `V - U`).
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Scaling threshold for the degree-13 approximant.
const THETA_13: f64 = 5.371920351148152;

/// Matrix exponential by scaling and squaring with a degree-13 Padé
/// approximant.
///
/// The scaling power is chosen from the 1-norm so the scaled argument lies
/// inside the approximant's accuracy region; the result is then squared back.
pub fn matrix_exponential(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "matrix exponential needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let n = a.rows();
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }

    let norm = a.one_norm();
    let s = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a.scale(0.5f64.powi(s as i32));

    let ident = Matrix::identity(n);
    let a2 = scaled.matmul(&scaled);
    let a4 = a2.matmul(&a2);
    let a6 = a4.matmul(&a2);

    // U = A (A6 (b13 A6 + b11 A4 + b9 A2) + b7 A6 + b5 A4 + b3 A2 + b1 I)
    let inner_u = a6
        .scale(B13[13])
        .add(&a4.scale(B13[11]))
        .add(&a2.scale(B13[9]));
    let u = scaled.matmul(
        &a6.matmul(&inner_u)
            .add(&a6.scale(B13[7]))
            .add(&a4.scale(B13[5]))
            .add(&a2.scale(B13[3]))
            .add(&ident.scale(B13[1])),
    );
    // V = A6 (b12 A6 + b10 A4 + b8 A2) + b6 A6 + b4 A4 + b2 A2 + b0 I
    let inner_v = a6
        .scale(B13[12])
        .add(&a4.scale(B13[10]))
        .add(&a2.scale(B13[8]));
    let v = a6
        .matmul(&inner_v)
        .add(&a6.scale(B13[6]))
        .add(&a4.scale(B13[4]))
        .add(&a2.scale(B13[2]))
        .add(&ident.scale(B13[0]));

    let denom = v.sub(&u);
    let numer = v.add(&u);
    let mut result = denom
        .lu()
        .map_err(|_| Error::Singular("Pade denominator".into()))?
        .solve_matrix(&numer)?;

    for _ in 0..s {
        result = result.matmul(&result);
    }
    if !result.is_finite() {
        return Err(Error::NotFinite {
            what: "matrix exponential",
        });
    }
    Ok(result)
}
