//! Dense small-matrix numerics shared by every other module.
//!
//! Matrices are `nalgebra::DMatrix<f64>`; everything here is sized for the
//! handful of states a planar balancing robot needs (n <= 8).

mod eigen;
mod expm;
mod filter;
mod fit;
mod ode;
mod riccati;

pub use eigen::{eigenvalues, spectral_radius};
pub use expm::{expm, zoh_discretize};
pub use filter::Biquad;
pub use fit::nrmse_fit;
pub use ode::rk4_step;
pub use riccati::{dare_residual, solve_dare, Dare};

use crate::error::{Error, Result};
use nalgebra::DMatrix;

pub type Matrix = DMatrix<f64>;

pub(crate) fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalDomain(format!("{what} has non-finite entries")))
    }
}

/// Largest absolute row sum.
pub fn norm_inf(m: &Matrix) -> f64 {
    m.row_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Continuous-time LTI model `x' = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousSS {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
}

impl ContinuousSS {
    /// Full-state output: `C = I`, `D = 0`.
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        Self::with_output(a, b, Matrix::identity(n, n), Matrix::zeros(n, m))
    }

    pub fn with_output(a: Matrix, b: Matrix, c: Matrix, d: Matrix) -> Result<Self> {
        check_dims(&a, &b, &c, &d)?;
        Ok(Self { a, b, c, d })
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }
}

/// Discrete-time LTI model `x[k+1] = A x[k] + B u[k]` sampled every `ts` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSS {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
    pub ts: f64,
}

impl DiscreteSS {
    pub fn new(a: Matrix, b: Matrix, c: Matrix, d: Matrix, ts: f64) -> Result<Self> {
        if !(ts > 0.0 && ts.is_finite()) {
            return Err(Error::NumericalDomain(format!("sample time must be positive, got {ts}")));
        }
        check_dims(&a, &b, &c, &d)?;
        Ok(Self { a, b, c, d, ts })
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    /// One state update for a single-input model.
    pub fn step(&self, x: &nalgebra::DVector<f64>, u: f64) -> nalgebra::DVector<f64> {
        &self.a * x + self.b.column(0) * u
    }
}

fn check_dims(a: &Matrix, b: &Matrix, c: &Matrix, d: &Matrix) -> Result<()> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::Dimension(format!("A must be square and non-empty, got {}x{}", a.nrows(), a.ncols())));
    }
    if b.nrows() != n || b.ncols() == 0 {
        return Err(Error::Dimension(format!("B must have {n} rows, got {}x{}", b.nrows(), b.ncols())));
    }
    if c.ncols() != n || c.nrows() == 0 {
        return Err(Error::Dimension(format!("C must have {n} columns, got {}x{}", c.nrows(), c.ncols())));
    }
    if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
        return Err(Error::Dimension(format!(
            "D must be {}x{}, got {}x{}",
            c.nrows(),
            b.ncols(),
            d.nrows(),
            d.ncols()
        )));
    }
    Ok(())
}
