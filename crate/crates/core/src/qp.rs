//! Dense operator-splitting (ADMM) solver for convex QPs
//!
//! ```text
//! minimize ½ zᵀ P z + qᵀ z   subject to   l ≤ A z ≤ u
//! ```
//!
//! Each iteration solves `(P + σI + Aᵀ diag(ρ) A) x = rhs`, which is the
//! quasi-definite KKT system `[[P + σI, Aᵀ], [A, -diag(ρ)⁻¹]]` with the
//! constraint block eliminated. The Cholesky factor is computed once per
//! problem structure and reused while `q`, `l` and `u` change.

use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

/// Bounds at or beyond this magnitude count as infinite.
pub const INFTY: f64 = 1e20;
/// Equality rows use a step size this much larger than inequality rows.
const RHO_EQ_SCALE: f64 = 1e3;
/// Rows with no finite bound get a tiny step size.
const RHO_MIN: f64 = 1e-6;
/// Iterations between early refinement attempts.
const EARLY_POLISH_INTERVAL: usize = 25;
/// Residual-to-tolerance ratio below which an early refinement is attempted.
const EARLY_POLISH_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
}

impl QpProblem {
    pub fn validate(&self) -> Result<()> {
        let n = self.q.len();
        let m = self.l.len();
        if self.p.shape() != (n, n) || self.a.shape() != (m, n) || self.u.len() != m {
            return Err(Error::InvalidQp(format!(
                "inconsistent shapes: P {:?}, q {}, A {:?}, l {}, u {}",
                self.p.shape(),
                n,
                self.a.shape(),
                m,
                self.u.len()
            )));
        }
        if n == 0 {
            return Err(Error::InvalidQp("no decision variables".into()));
        }
        if (&self.p - self.p.transpose()).abs().max() > 1e-12 * self.p.abs().max().max(1.0) {
            return Err(Error::InvalidQp("P is not symmetric".into()));
        }
        if self.p.iter().chain(self.q.iter()).chain(self.a.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidQp("P, q and A must be finite".into()));
        }
        for i in 0..m {
            if self.l[i].is_nan() || self.u[i].is_nan() || self.l[i] > self.u[i] {
                return Err(Error::InvalidQp(format!("row {i}: need l <= u, got [{}, {}]", self.l[i], self.u[i])));
            }
        }
        Ok(())
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.p * z)) + self.q.dot(z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QpSettings {
    pub rho: f64,
    pub sigma: f64,
    pub alpha_relax: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    /// Tolerance of the primal infeasibility certificate.
    pub eps_prim_inf: f64,
    pub max_iter: usize,
    /// Refine a converged iterate by solving the KKT system on its active set.
    pub polish: bool,
    /// Passes of Ruiz equilibration applied before iterating; 0 disables it.
    pub scaling_iters: usize,
    /// Rebalance `rho` from the residual ratio every this many iterations
    /// (refactorizing when it moves by more than 5x); 0 keeps `rho` fixed.
    pub adaptive_rho_interval: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            rho: 0.1,
            sigma: 1e-6,
            alpha_relax: 1.6,
            eps_abs: 1e-4,
            eps_rel: 1e-4,
            eps_prim_inf: 1e-5,
            max_iter: 4000,
            polish: true,
            scaling_iters: 0,
            adaptive_rho_interval: 0,
        }
    }
}

impl QpSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rho > 0.0
            && self.sigma > 0.0
            && self.alpha_relax > 0.0
            && self.alpha_relax < 2.0
            && self.eps_abs >= 0.0
            && self.eps_rel >= 0.0
            && self.eps_abs + self.eps_rel > 0.0
            && self.eps_prim_inf > 0.0
            && self.max_iter > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidQp("settings need rho, sigma > 0, 0 < alpha < 2, positive tolerances, max_iter > 0".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Solved,
    MaxIter,
    PrimalInfeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub y: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
    pub polished: bool,
}

/// Solver workspace: the scaled problem, its cached factorization and the
/// iterates used for warm starts.
///
/// With equilibration the solver iterates on `P̄ = c D P D`, `q̄ = c D q`,
/// `Ā = E A D`, `l̄ = E l`, `ū = E u`; residuals and termination are always
/// measured on the original problem.
#[derive(Debug, Clone)]
pub struct QpSolver {
    prob: QpProblem,
    work: QpProblem,
    p_csr: Csr,
    a_csr: Csr,
    work_a_csr: Csr,
    d: DVector<f64>,
    e: DVector<f64>,
    c: f64,
    settings: QpSettings,
    rho_scalar: f64,
    rho: DVector<f64>,
    factor: Cholesky<f64, Dyn>,
    x: DVector<f64>,
    z: DVector<f64>,
    y: DVector<f64>,
}

fn norm_inf(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Compressed-row copy used for the matrix-vector products of the iteration;
/// the MPC matrices are mostly zeros, so this is far cheaper than dense products.
#[derive(Debug, Clone)]
struct Csr {
    ncols: usize,
    ptr: Vec<usize>,
    idx: Vec<usize>,
    val: Vec<f64>,
}

impl Csr {
    fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut ptr = vec![0];
        let (mut idx, mut val) = (Vec::new(), Vec::new());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if v != 0.0 {
                    idx.push(j);
                    val.push(v);
                }
            }
            ptr.push(idx.len());
        }
        Self { ncols: m.ncols(), ptr, idx, val }
    }

    fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.ptr.len() - 1, |i, _| {
            (self.ptr[i]..self.ptr[i + 1]).map(|k| self.val[k] * x[self.idx[k]]).sum()
        })
    }

    fn tr_mul(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.ncols);
        for i in 0..self.ptr.len() - 1 {
            let yi = y[i];
            if yi != 0.0 {
                for k in self.ptr[i]..self.ptr[i + 1] {
                    out[self.idx[k]] += self.val[k] * yi;
                }
            }
        }
        out
    }
}

fn step_sizes(l: &DVector<f64>, u: &DVector<f64>, rho: f64) -> DVector<f64> {
    DVector::from_iterator(
        l.len(),
        l.iter().zip(u.iter()).map(|(&lo, &hi)| {
            if lo <= -INFTY && hi >= INFTY {
                RHO_MIN
            } else if hi - lo < 1e-12 * (1.0 + lo.abs()) {
                RHO_EQ_SCALE * rho
            } else {
                rho
            }
        }),
    )
}

/// Scales a bound, leaving infinite ones infinite.
fn scale_bound(v: f64, s: f64) -> f64 {
    if v.abs() >= INFTY {
        v
    } else {
        v * s
    }
}

/// Ruiz equilibration of the KKT matrix `[[P, Aᵀ], [A, 0]]` followed by a
/// cost scaling; returns `(D, E, c)`.
fn equilibrate(prob: &QpProblem, iters: usize) -> (DVector<f64>, DVector<f64>, f64) {
    let (n, m) = (prob.q.len(), prob.l.len());
    let mut d = DVector::from_element(n, 1.0);
    let mut e = DVector::from_element(m, 1.0);
    let clamp = |v: f64| if v < 1e-4 { 1.0 } else { 1.0 / v.min(1e4).sqrt() };
    let mut p = prob.p.clone();
    let mut a = prob.a.clone();
    for _ in 0..iters {
        let dx = DVector::from_fn(n, |j, _| clamp(p.column(j).amax().max(a.column(j).amax())));
        let dy = DVector::from_fn(m, |i, _| clamp(a.row(i).amax()));
        p = DMatrix::from_fn(n, n, |i, j| dx[i] * p[(i, j)] * dx[j]);
        a = DMatrix::from_fn(m, n, |i, j| dy[i] * a[(i, j)] * dx[j]);
        d.component_mul_assign(&dx);
        e.component_mul_assign(&dy);
    }
    let mut c = 1.0;
    if iters > 0 {
        let q = prob.q.component_mul(&d);
        let mean_col = (0..n).map(|j| p.column(j).amax()).sum::<f64>() / n as f64;
        let s = mean_col.max(norm_inf(&q));
        c = if s < 1e-4 { 1.0 } else { 1.0 / s.min(1e4) };
    }
    (d, e, c)
}

impl QpSolver {
    pub fn new(prob: QpProblem, settings: QpSettings) -> Result<Self> {
        prob.validate()?;
        settings.validate()?;
        let (d, e, c) = equilibrate(&prob, settings.scaling_iters);
        let (n, m) = (prob.q.len(), prob.l.len());
        let work = QpProblem {
            p: DMatrix::from_fn(n, n, |i, j| c * d[i] * prob.p[(i, j)] * d[j]),
            q: prob.q.component_mul(&d) * c,
            a: DMatrix::from_fn(m, n, |i, j| e[i] * prob.a[(i, j)] * d[j]),
            l: DVector::from_fn(m, |i, _| scale_bound(prob.l[i], e[i])),
            u: DVector::from_fn(m, |i, _| scale_bound(prob.u[i], e[i])),
        };
        let rho = step_sizes(&work.l, &work.u, settings.rho);
        let factor = Self::factorize(&work, &settings, &rho)?;
        Ok(Self {
            p_csr: Csr::from_dense(&prob.p),
            a_csr: Csr::from_dense(&prob.a),
            work_a_csr: Csr::from_dense(&work.a),
            prob,
            work,
            d,
            e,
            c,
            settings,
            rho_scalar: settings.rho,
            rho,
            factor,
            x: DVector::zeros(n),
            z: DVector::zeros(m),
            y: DVector::zeros(m),
        })
    }

    fn factorize(work: &QpProblem, settings: &QpSettings, rho: &DVector<f64>) -> Result<Cholesky<f64, Dyn>> {
        let n = work.q.len();
        let mut k = &work.p + DMatrix::identity(n, n) * settings.sigma;
        let ra = DMatrix::from_fn(work.a.nrows(), n, |i, j| rho[i] * work.a[(i, j)]);
        k += work.a.transpose() * ra;
        Cholesky::new(k).ok_or_else(|| Error::InvalidQp("P is not positive semidefinite".into()))
    }

    pub fn problem(&self) -> &QpProblem {
        &self.prob
    }

    /// Replaces the linear cost; the factorization is kept.
    pub fn update_q(&mut self, q: DVector<f64>) -> Result<()> {
        if q.len() != self.prob.q.len() || q.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidQp("q has the wrong length or non-finite entries".into()));
        }
        self.work.q = q.component_mul(&self.d) * self.c;
        self.prob.q = q;
        Ok(())
    }

    /// Replaces the bounds; refactorizes only if the equality pattern changes.
    pub fn update_bounds(&mut self, l: DVector<f64>, u: DVector<f64>) -> Result<()> {
        let mut next = self.prob.clone();
        next.l = l;
        next.u = u;
        next.validate()?;
        let m = next.l.len();
        self.work.l = DVector::from_fn(m, |i, _| scale_bound(next.l[i], self.e[i]));
        self.work.u = DVector::from_fn(m, |i, _| scale_bound(next.u[i], self.e[i]));
        let rho = step_sizes(&self.work.l, &self.work.u, self.rho_scalar);
        if rho != self.rho {
            self.factor = Self::factorize(&self.work, &self.settings, &rho)?;
            self.rho = rho;
        }
        self.prob = next;
        Ok(())
    }

    /// Starts the next solve from `(z, y)` instead of the previous iterates.
    pub fn warm_start(&mut self, z: &DVector<f64>, y: &DVector<f64>) -> Result<()> {
        if z.len() != self.x.len() || y.len() != self.y.len() {
            return Err(Error::InvalidQp("warm start has the wrong dimensions".into()));
        }
        self.x = z.component_div(&self.d);
        self.y = y.component_div(&self.e) * self.c;
        self.z = self.work_a_csr.mul(&self.x);
        Ok(())
    }

    pub fn cold_start(&mut self) {
        self.x.fill(0.0);
        self.z.fill(0.0);
        self.y.fill(0.0);
    }

    fn project(v: &DVector<f64>, l: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(v.len(), v.iter().enumerate().map(|(i, x)| x.clamp(l[i], u[i])))
    }

    /// Current iterate in original units: `(x, z, y)`.
    fn unscaled(&self) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        (self.x.component_mul(&self.d), self.z.component_div(&self.e), self.y.component_mul(&self.e) / self.c)
    }

    /// Primal and dual residuals with their tolerances, on the original problem.
    fn residuals(&self, x: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>) -> (f64, f64, f64, f64) {
        let ax = self.a_csr.mul(x);
        let px = self.p_csr.mul(x);
        let aty = self.a_csr.tr_mul(y);
        let r_prim = norm_inf(&(&ax - z));
        let r_dual = norm_inf(&(&px + &self.prob.q + &aty));
        let eps_prim = self.settings.eps_abs + self.settings.eps_rel * norm_inf(&ax).max(norm_inf(z));
        let eps_dual = self.settings.eps_abs
            + self.settings.eps_rel * norm_inf(&px).max(norm_inf(&aty)).max(norm_inf(&self.prob.q));
        (r_prim, r_dual, eps_prim, eps_dual)
    }

    /// Certificate test: `δy` with `Aᵀδy ≈ 0` and `uᵀδy₊ + lᵀδy₋ < 0`.
    fn primal_infeasible(&self, dy: &DVector<f64>) -> bool {
        let norm = norm_inf(dy);
        if norm < 1e-30 {
            return false;
        }
        let eps = self.settings.eps_prim_inf * norm;
        if norm_inf(&self.a_csr.tr_mul(dy)) > eps {
            return false;
        }
        let mut support = 0.0;
        for i in 0..dy.len() {
            let d = dy[i];
            if d > eps {
                if self.prob.u[i] >= INFTY {
                    return false;
                }
                support += self.prob.u[i] * d;
            } else if d < -eps {
                if self.prob.l[i] <= -INFTY {
                    return false;
                }
                support += self.prob.l[i] * d;
            }
        }
        support < -eps
    }

    /// Residual-balancing update of `rho` from the primal and dual residuals
    /// relative to their tolerances; returns whether it refactorized.
    fn adapt_rho(&mut self, prim_ratio: f64, dual_ratio: f64) -> Result<bool> {
        let ratio = (prim_ratio / dual_ratio.max(1e-30)).sqrt();
        if (0.2..=5.0).contains(&ratio) || !ratio.is_finite() {
            return Ok(false);
        }
        let next = (self.rho_scalar * ratio).clamp(1e-6, 1e6);
        let rho = step_sizes(&self.work.l, &self.work.u, next);
        self.factor = Self::factorize(&self.work, &self.settings, &rho)?;
        self.rho = rho;
        self.rho_scalar = next;
        Ok(true)
    }

    pub fn solve(&mut self) -> QpSolution {
        let s = self.settings;
        let alpha = s.alpha_relax;
        let mut last = (f64::INFINITY, f64::INFINITY);
        for it in 1..=s.max_iter {
            let w = &self.work;
            let rhs = &self.x * s.sigma - &w.q + self.work_a_csr.tr_mul(&(self.rho.component_mul(&self.z) - &self.y));
            let x_tilde = self.factor.solve(&rhs);
            let z_tilde = self.work_a_csr.mul(&x_tilde);
            let x_next = &x_tilde * alpha + &self.x * (1.0 - alpha);
            let z_relaxed = &z_tilde * alpha + &self.z * (1.0 - alpha);
            let z_next = Self::project(&(&z_relaxed + self.y.component_div(&self.rho)), &w.l, &w.u);
            let y_next = &self.y + self.rho.component_mul(&(&z_relaxed - &z_next));
            let dy = (&y_next - &self.y).component_mul(&self.e) / self.c;
            self.x = x_next;
            self.z = z_next;
            self.y = y_next;

            let (x, z, y) = self.unscaled();
            let (r_prim, r_dual, eps_prim, eps_dual) = self.residuals(&x, &z, &y);
            last = (r_prim, r_dual);
            if r_prim <= eps_prim && r_dual <= eps_dual {
                return self.finish(QpStatus::Solved, it, r_prim, r_dual);
            }
            // The active set usually settles long before the ADMM tail does; a
            // refined point that passes the ordinary test ends the solve early.
            if s.polish
                && it % EARLY_POLISH_INTERVAL == 0
                && r_prim <= EARLY_POLISH_FACTOR * eps_prim
                && r_dual <= EARLY_POLISH_FACTOR * eps_dual
            {
                if let Some(sol) = self.try_polish(it, &z, &y) {
                    return sol;
                }
            }
            if self.primal_infeasible(&dy) {
                return QpSolution {
                    z: x,
                    y: dy,
                    status: QpStatus::PrimalInfeasible,
                    iterations: it,
                    primal_residual: r_prim,
                    dual_residual: r_dual,
                    objective: f64::INFINITY,
                    polished: false,
                };
            }
            if s.adaptive_rho_interval > 0 && it % s.adaptive_rho_interval == 0 && self.adapt_rho(r_prim / eps_prim, r_dual / eps_dual).is_err() {
                log::warn!("qp: refactorization failed while adapting rho; keeping the previous factor");
            }
        }
        self.finish(QpStatus::MaxIter, s.max_iter, last.0, last.1)
    }

    /// Refines the current iterate and returns a solved point only if it meets
    /// the termination tolerances.
    fn try_polish(&mut self, iterations: usize, z: &DVector<f64>, y: &DVector<f64>) -> Option<QpSolution> {
        let (px, py) = self.polish(z, y)?;
        let pz = Self::project(&self.a_csr.mul(&px), &self.prob.l, &self.prob.u);
        let (p, d, eps_p, eps_d) = self.residuals(&px, &pz, &py);
        if p > eps_p || d > eps_d {
            return None;
        }
        self.x = px.component_div(&self.d);
        self.y = py.component_div(&self.e) * self.c;
        self.z = pz.component_mul(&self.e);
        Some(QpSolution {
            objective: self.prob.objective(&px),
            z: px,
            y: py,
            status: QpStatus::Solved,
            iterations,
            primal_residual: p,
            dual_residual: d,
            polished: true,
        })
    }

    fn finish(&mut self, status: QpStatus, iterations: usize, r_prim: f64, r_dual: f64) -> QpSolution {
        let (x, z, y) = self.unscaled();
        let mut sol = QpSolution {
            objective: self.prob.objective(&x),
            z: x,
            y,
            status,
            iterations,
            primal_residual: r_prim,
            dual_residual: r_dual,
            polished: false,
        };
        if status == QpStatus::Solved && self.settings.polish {
            if let Some((px, py)) = self.polish(&z, &sol.y) {
                let pz = Self::project(&self.a_csr.mul(&px), &self.prob.l, &self.prob.u);
                let (p, d, _, _) = self.residuals(&px, &pz, &py);
                // Keep the refined point only if it is at least as good on both residuals.
                if p <= r_prim.max(1e-12) && d <= r_dual.max(1e-12) {
                    self.x = px.component_div(&self.d);
                    self.y = py.component_div(&self.e) * self.c;
                    self.z = pz.component_mul(&self.e);
                    sol.objective = self.prob.objective(&px);
                    sol.z = px;
                    sol.y = py;
                    sol.primal_residual = p;
                    sol.dual_residual = d;
                    sol.polished = true;
                }
            }
        }
        sol
    }

    /// Solves the equality-constrained QP on the active set guessed from the
    /// iterate `(z, y)`, correcting the guess a few times (drop rows whose dual
    /// has the wrong sign, add rows whose bound is violated). Returns `None`
    /// when no consistent active set is found.
    fn polish(&self, z: &DVector<f64>, y: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        const MAX_CORRECTIONS: usize = 10;
        let m = self.y.len();
        let (l, u) = (&self.prob.l, &self.prob.u);
        let is_eq = |i: usize| u[i] - l[i] < 1e-12 * (1.0 + l[i].abs());
        // -1: held at l, +1: held at u, 0: free. Equalities are held at l = u.
        let mut side: Vec<i8> = (0..m)
            .map(|i| {
                if is_eq(i) || (z[i] - l[i] < -y[i] && l[i] > -INFTY) {
                    -1
                } else if u[i] - z[i] < y[i] && u[i] < INFTY {
                    1
                } else {
                    0
                }
            })
            .collect();
        let tol = self.settings.eps_abs.max(1e-9);
        for _ in 0..MAX_CORRECTIONS {
            let (x, yp) = self.solve_active(&side)?;
            let ax = &self.prob.a * &x;
            let mut changed = false;
            for i in 0..m {
                if is_eq(i) {
                    continue;
                }
                let wrong_sign = (side[i] == -1 && yp[i] > tol) || (side[i] == 1 && yp[i] < -tol);
                if wrong_sign {
                    side[i] = 0;
                    changed = true;
                } else if side[i] == 0 && ax[i] < l[i] - tol {
                    side[i] = -1;
                    changed = true;
                } else if side[i] == 0 && ax[i] > u[i] + tol {
                    side[i] = 1;
                    changed = true;
                }
            }
            if !changed {
                return Some((x, yp));
            }
        }
        None
    }

    /// KKT solve with the rows flagged in `side` held at their bounds.
    fn solve_active(&self, side: &[i8]) -> Option<(DVector<f64>, DVector<f64>)> {
        let (n, m) = (self.x.len(), self.y.len());
        let active: Vec<(usize, f64)> = (0..m)
            .filter_map(|i| match side[i] {
                -1 => Some((i, self.prob.l[i])),
                1 => Some((i, self.prob.u[i])),
                _ => None,
            })
            .collect();
        let k = active.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&self.prob.p);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&self.prob.q));
        for (r, &(i, b)) in active.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = self.prob.a[(i, j)];
                kkt[(j, n + r)] = self.prob.a[(i, j)];
            }
            rhs[n + r] = b;
        }
        let sol = kkt.lu().solve(&rhs)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let x = sol.rows(0, n).into_owned();
        let mut y = DVector::zeros(m);
        for (r, &(i, _)) in active.iter().enumerate() {
            y[i] = sol[n + r];
        }
        Some((x, y))
    }
}

/// One-shot solve with optional warm start `(z, y)`.
pub fn solve(prob: &QpProblem, settings: &QpSettings, warm: Option<(&DVector<f64>, &DVector<f64>)>) -> Result<QpSolution> {
    let mut solver = QpSolver::new(prob.clone(), *settings)?;
    if let Some((z, y)) = warm {
        solver.warm_start(z, y)?;
    }
    Ok(solver.solve())
}
