use super::{ensure_finite, norm_inf, Matrix};
use crate::error::{Error, Result};

const STEP_TOL: f64 = 1e-10;
const MAX_ITERATIONS: usize = 100_000;

/// Solution of the discrete algebraic Riccati equation and the matching
/// state-feedback gain `u = -K x`.
#[derive(Debug, Clone)]
pub struct Dare {
    pub p: Matrix,
    pub k: Matrix,
    pub iterations: usize,
    /// Infinity-norm of the DARE residual at `p`, relative to `max(1, |P|)`.
    pub residual: f64,
}

/// Residual `A'PA - P - A'PB (R + B'PB)^-1 B'PA + Q`.
pub fn dare_residual(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> Result<Matrix> {
    let at = a.transpose();
    let bt = b.transpose();
    let s = r + &bt * p * b;
    let lu = s.clone().lu();
    let gain = lu
        .solve(&(&bt * p * a))
        .ok_or_else(|| Error::NumericalDomain("R + B'PB is singular".into()))?;
    Ok(&at * p * a - p - &at * p * b * gain + q)
}

/// Solves the DARE by the doubling form of the Riccati fixed-point recursion.
///
/// Iteration k of the doubling scheme lands on step 2^k of the plain recursion
/// `P <- Q + A'PA - A'PB (R + B'PB)^-1 B'PA` started from `P = Q`, so slowly
/// contracting closed loops still converge within a few dozen iterations.
/// The step test `|P_{k+1} - P_k|_inf < 1e-10` is taken relative to `max(1, |P|)`.
pub fn solve_dare(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<Dare> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::Dimension(format!(
            "DARE needs A {n}x{n}, B {n}x{m}, Q {n}x{n}, R {m}x{m}; got A {:?}, B {:?}, Q {:?}, R {:?}",
            a.shape(),
            b.shape(),
            q.shape(),
            r.shape()
        )));
    }
    for (mat, name) in [(a, "A"), (b, "B"), (q, "Q"), (r, "R")] {
        ensure_finite(mat, name)?;
    }
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NumericalDomain("R is singular".into()))?;

    let eye = Matrix::identity(n, n);
    let mut ak = a.clone();
    let mut gk = b * r_inv * b.transpose();
    let mut hk = q.clone();
    let mut last_step = f64::INFINITY;

    for it in 1..=MAX_ITERATIONS {
        let w = (&eye + &gk * &hk).lu();
        let w_a = w
            .solve(&ak)
            .ok_or_else(|| Error::NumericalDomain("singular doubling step".into()))?;
        let w_g = w
            .solve(&gk)
            .ok_or_else(|| Error::NumericalDomain("singular doubling step".into()))?;
        let at = ak.transpose();
        let h_next = &hk + &at * &hk * &w_a;
        let g_next = &gk + &ak * &w_g * &at;
        let a_next = &ak * &w_a;

        let h_next = (&h_next + h_next.transpose()) * 0.5;
        let g_next = (&g_next + g_next.transpose()) * 0.5;
        if !h_next.iter().chain(a_next.iter()).all(|v| v.is_finite()) {
            // An undamped unstable mode makes the doubling iterates overflow.
            return Err(Error::NotStabilizable { iterations: it, last_step });
        }

        last_step = norm_inf(&(&h_next - &hk)) / norm_inf(&h_next).max(1.0);
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if last_step < STEP_TOL {
            let k = gain(a, b, r, &hk)?;
            let residual = norm_inf(&dare_residual(a, b, q, r, &hk)?) / norm_inf(&hk).max(1.0);
            return Ok(Dare { p: hk, k, iterations: it, residual });
        }
    }
    Err(Error::NotStabilizable { iterations: MAX_ITERATIONS, last_step })
}

fn gain(a: &Matrix, b: &Matrix, r: &Matrix, p: &Matrix) -> Result<Matrix> {
    let bt = b.transpose();
    (r + &bt * p * b)
        .lu()
        .solve(&(&bt * p * a))
        .ok_or_else(|| Error::NumericalDomain("R + B'PB is singular".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::spectral_radius;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    /// Plain Riccati recursion, used as an independent check.
    fn plain_recursion(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, steps: usize) -> Matrix {
        let mut p = q.clone();
        for _ in 0..steps {
            let bt = b.transpose();
            let s = (r + &bt * &p * b).try_inverse().unwrap();
            p = q + a.transpose() * &p * a - a.transpose() * &p * b * s * &bt * &p * a;
        }
        p
    }

    #[test]
    fn deadbeat_scalar() {
        let sol = solve_dare(&scalar(0.0), &scalar(1.0), &scalar(1.0), &scalar(1.0)).unwrap();
        assert!((sol.p[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(sol.k[(0, 0)].abs() < 1e-12);
    }

    #[test]
    fn golden_ratio_scalar() {
        let sol = solve_dare(&scalar(1.0), &scalar(1.0), &scalar(1.0), &scalar(1.0)).unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((sol.p[(0, 0)] - phi).abs() < 1e-10);
        assert!((sol.k[(0, 0)] - phi / (1.0 + phi)).abs() < 1e-10);
        assert!(sol.residual < 1e-8);
    }

    #[test]
    fn matches_plain_recursion_on_fast_system() {
        let a = Matrix::from_row_slice(2, 2, &[1.1, 0.2, 0.0, 0.9]);
        let b = Matrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let q = Matrix::identity(2, 2);
        let r = scalar(0.5);
        let sol = solve_dare(&a, &b, &q, &r).unwrap();
        let oracle = plain_recursion(&a, &b, &q, &r, 2000);
        assert!((&sol.p - oracle).abs().max() < 1e-9);
        let acl = &a - &b * &sol.k;
        assert!(spectral_radius(&acl).unwrap() < 1.0);
    }

    #[test]
    fn unstabilizable_pair_is_reported() {
        // Unstable mode with no input authority.
        let a = Matrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        let b = Matrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let res = solve_dare(&a, &b, &Matrix::identity(2, 2), &scalar(1.0));
        assert!(matches!(res, Err(Error::NotStabilizable { .. })), "{res:?}");
    }
}
