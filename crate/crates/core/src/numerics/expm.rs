use super::{ensure_finite, ContinuousSS, DiscreteSS, Matrix};
use crate::error::{Error, Result};

const SERIES_TOL: f64 = 1e-12;
const MAX_TERMS: usize = 60;

fn norm_1(m: &Matrix) -> f64 {
    m.column_iter()
        .map(|col| col.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
pub fn expm(a: &Matrix) -> Result<Matrix> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!("expm needs a square matrix, got {}x{}", a.nrows(), a.ncols())));
    }
    ensure_finite(a, "matrix exponential argument")?;
    let n = a.nrows();

    // Scale so the 1-norm is at most 1/2.
    let norm = norm_1(a);
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let scaled = a / 2f64.powi(squarings as i32);

    let mut sum = Matrix::identity(n, n);
    let mut term = Matrix::identity(n, n);
    for k in 1..=MAX_TERMS {
        term = &term * &scaled / k as f64;
        sum += &term;
        // Squaring amplifies truncation error, so run the series to round-off
        // rather than stopping at the bare tolerance.
        if norm_1(&term) <= SERIES_TOL.min(f64::EPSILON * norm_1(&sum)) {
            break;
        }
    }

    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    ensure_finite(&sum, "matrix exponential")?;
    Ok(sum)
}

/// Exact zero-order-hold discretization through the augmented exponential
/// `exp([[A, B], [0, 0]] * ts)`.
pub fn zoh_discretize(sys: &ContinuousSS, ts: f64) -> Result<DiscreteSS> {
    if !(ts > 0.0 && ts.is_finite()) {
        return Err(Error::NumericalDomain(format!("sample time must be positive, got {ts}")));
    }
    ensure_finite(&sys.a, "A")?;
    ensure_finite(&sys.b, "B")?;
    let n = sys.states();
    let m = sys.inputs();

    let mut aug = Matrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(&sys.a * ts));
    aug.view_mut((0, n), (n, m)).copy_from(&(&sys.b * ts));
    let e = expm(&aug)?;

    DiscreteSS::new(
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
        sys.c.clone(),
        sys.d.clone(),
        ts,
    )
}
