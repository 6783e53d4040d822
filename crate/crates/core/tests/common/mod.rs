//! Independent reference computations used by the integration tests. None of
//! these share code with the library routines they check.
#![allow(dead_code)]

use ballbot_core::numerics::Matrix;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Characteristic polynomial coefficients `[1, c1, ..., cn]` of
/// `det(sI - A) = s^n + c1 s^(n-1) + ... + cn` by Faddeev-LeVerrier.
pub fn char_poly(a: &Matrix) -> Vec<f64> {
    let n = a.nrows();
    let mut coeffs = vec![1.0];
    let mut m = DMatrix::<f64>::zeros(n, n);
    for k in 1..=n {
        m = a * &m + DMatrix::identity(n, n) * coeffs[k - 1];
        let am = a * &m;
        coeffs.push(-am.trace() / k as f64);
    }
    coeffs
}

fn horner(coeffs: &[f64], z: Complex64) -> Complex64 {
    coeffs.iter().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
}

fn horner_derivative(coeffs: &[f64], z: Complex64) -> Complex64 {
    let n = coeffs.len() - 1;
    coeffs[..n]
        .iter()
        .enumerate()
        .fold(Complex64::new(0.0, 0.0), |acc, (i, &c)| acc * z + c * (n - i) as f64)
}

/// Roots of a monic polynomial by Durand-Kerner, finished with Newton steps.
pub fn poly_roots(coeffs: &[f64]) -> Vec<Complex64> {
    let n = coeffs.len() - 1;
    let radius = 1.0 + coeffs[1..].iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let seed = Complex64::new(0.4, 0.9);
    let mut z: Vec<Complex64> = (0..n).map(|k| seed.powu(k as u32) * radius / seed.norm().powi(k as i32)).collect();
    for _ in 0..2000 {
        let mut moved = 0.0f64;
        for i in 0..n {
            let mut denom = Complex64::new(1.0, 0.0);
            for j in 0..n {
                if i != j {
                    denom *= z[i] - z[j];
                }
            }
            let step = horner(coeffs, z[i]) / denom;
            z[i] -= step;
            moved = moved.max(step.norm() / z[i].norm().max(1.0));
        }
        if moved < 1e-15 {
            break;
        }
    }
    for r in z.iter_mut() {
        for _ in 0..5 {
            let d = horner_derivative(coeffs, *r);
            if d.norm() == 0.0 {
                break;
            }
            *r -= horner(coeffs, *r) / d;
        }
    }
    z
}

/// Eigenvalues through the characteristic polynomial.
pub fn eig_oracle(a: &Matrix) -> Vec<Complex64> {
    poly_roots(&char_poly(a))
}

/// Largest distance between two root sets after greedy nearest matching.
pub fn max_matched_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut used = vec![false; b.len()];
    let mut worst = 0.0f64;
    for x in a {
        let (j, d) = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, y)| (j, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .expect("same length");
        used[j] = true;
        worst = worst.max(d);
    }
    worst
}

/// Zero-order-hold discretization by a truncated Taylor series of the
/// augmented exponential `exp([[A, B], [0, 0]] ts)` with `terms` terms. The
/// argument is halved until its norm is below 1/2 and the result squared
/// back, which keeps the series free of cancellation for stiff models.
pub fn zoh_series(a: &Matrix, b: &Matrix, ts: f64, terms: usize) -> (Matrix, Matrix) {
    let n = a.nrows();
    let m = b.ncols();
    let mut big = DMatrix::<f64>::zeros(n + m, n + m);
    big.view_mut((0, 0), (n, n)).copy_from(&(a * ts));
    big.view_mut((0, n), (n, m)).copy_from(&(b * ts));
    let mut halvings = 0;
    while big.amax() * (n + m) as f64 > 0.5 {
        big /= 2.0;
        halvings += 1;
    }
    let mut term = DMatrix::<f64>::identity(n + m, n + m);
    let mut sum = term.clone();
    for k in 1..terms {
        term = &term * &big / k as f64;
        sum += &term;
    }
    for _ in 0..halvings {
        sum = &sum * &sum;
    }
    (sum.view((0, 0), (n, n)).into_owned(), sum.view((0, n), (n, m)).into_owned())
}

/// A strictly convex box-constrained QP `min 1/2 z'Pz + q'z, l <= z <= u`.
#[derive(Debug, Clone)]
pub struct BoxQp {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
}

impl BoxQp {
    pub fn random(rng: &mut ChaCha8Rng, n: usize) -> Self {
        let m = DMatrix::<f64>::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let p = m.transpose() * &m + DMatrix::identity(n, n) * rng.random_range(0.05..1.0);
        let q = DVector::<f64>::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let l = DVector::<f64>::from_fn(n, |_, _| rng.random_range(-2.0..0.5));
        let u = DVector::<f64>::from_fn(n, |i, _| l[i] + rng.random_range(0.1..2.5));
        Self { p, q, l, u }
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.p * z)) + self.q.dot(z)
    }
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Exact optimum by enumerating every free / lower / upper pattern. For each
/// pattern the free variables solve the reduced stationarity system; the best
/// feasible candidate is the global minimizer because the problem is strictly
/// convex and its minimizer is one of the candidates.
pub fn enumerate_box_qp(qp: &BoxQp) -> (DVector<f64>, f64) {
    let n = qp.q.len();
    let mut best: Option<(DVector<f64>, f64)> = None;
    for code in 0..3usize.pow(n as u32) {
        let mut pattern = vec![0u8; n];
        let mut c = code;
        for s in pattern.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        let mut z = DVector::<f64>::zeros(n);
        let free: Vec<usize> = (0..n).filter(|&i| pattern[i] == 0).collect();
        for i in 0..n {
            match pattern[i] {
                1 => z[i] = qp.l[i],
                2 => z[i] = qp.u[i],
                _ => {}
            }
        }
        if !free.is_empty() {
            let k = free.len();
            let pff = DMatrix::<f64>::from_fn(k, k, |r, c| qp.p[(free[r], free[c])]);
            let rhs = DVector::<f64>::from_fn(k, |r, _| {
                -qp.q[free[r]] - (0..n).filter(|j| pattern[*j] != 0).map(|j| qp.p[(free[r], j)] * z[j]).sum::<f64>()
            });
            let sol = pff.lu().solve(&rhs).expect("principal submatrix of a positive definite matrix");
            for (r, &i) in free.iter().enumerate() {
                z[i] = sol[r];
            }
        }
        let feasible = (0..n).all(|i| z[i] >= qp.l[i] - 1e-12 && z[i] <= qp.u[i] + 1e-12);
        if feasible {
            let f = qp.objective(&z);
            if best.as_ref().is_none_or(|b| f < b.1) {
                best = Some((z, f));
            }
        }
    }
    best.expect("the box is nonempty")
}

/// Primal residual, dual residual and complementarity violation of `(z, y)`
/// for `l <= A z <= u` with multipliers `y` (positive on upper bounds).
pub fn kkt_residuals(p: &DMatrix<f64>, q: &DVector<f64>, a: &DMatrix<f64>, l: &DVector<f64>, u: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>) -> (f64, f64, f64) {
    let az = a * z;
    let primal = (0..az.len()).map(|i| (l[i] - az[i]).max(az[i] - u[i]).max(0.0)).fold(0.0, f64::max);
    let dual = (p * z + q + a.transpose() * y).amax();
    let comp = (0..az.len())
        .map(|i| {
            if y[i] > 0.0 {
                y[i] * (u[i] - az[i]).abs()
            } else {
                -y[i] * (az[i] - l[i]).abs()
            }
        })
        .fold(0.0, f64::max);
    (primal, dual, comp)
}
