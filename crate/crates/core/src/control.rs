//! Model-based control: a fast LQR that balances the robot and a slow MPC that
//! shapes the position response by adding a correction on top of it.
//!
//! The MPC predicts the LQR-stabilized plant (the dual-mode structure), lifted
//! to its own period by holding the correction over `m` inner steps.

use crate::error::{Error, Result};
use crate::numerics::{eigenvalues, solve_dare, spectral_radius, DiscreteSS, Matrix};
use crate::plant::StateVec;
use crate::qp::{QpProblem, QpSettings, QpSolver, QpStatus, INFTY};
use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqrConfig {
    pub q_diag: [f64; 4],
    pub r: f64,
    pub ts: f64,
}

impl Default for LqrConfig {
    fn default() -> Self {
        Self { q_diag: [20.0, 100.0, 10.0, 50.0], r: 200.0, ts: 0.005 }
    }
}

impl LqrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q_diag.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || !(self.r > 0.0) || !(self.ts > 0.0) {
            return Err(Error::Config("lqr needs Q >= 0, R > 0 and ts > 0".into()));
        }
        Ok(())
    }

    pub fn q(&self) -> Matrix {
        Matrix::from_diagonal(&DVector::from_row_slice(&self.q_diag))
    }

    pub fn r(&self) -> Matrix {
        Matrix::from_element(1, 1, self.r)
    }
}

#[derive(Debug, Clone)]
pub struct LqrDesign {
    pub q: Matrix,
    pub r: Matrix,
    /// Gain of `u = -K x`.
    pub k: Matrix,
    pub p: Matrix,
    pub ts: f64,
    pub closed_loop_eigenvalues: Vec<Complex64>,
    pub spectral_radius: f64,
    pub dare_residual: f64,
}

impl LqrDesign {
    /// `-K x` for a single-input design.
    pub fn control(&self, x: &StateVec) -> f64 {
        let xs = x.to_array();
        -(0..4).map(|j| self.k[(0, j)] * xs[j]).sum::<f64>()
    }
}

pub fn design_lqr(sys_d: &DiscreteSS, q: &Matrix, r: &Matrix) -> Result<LqrDesign> {
    let n = sys_d.states();
    let q_sym = (q + q.transpose()) * 0.5;
    if q_sym.clone().symmetric_eigenvalues().iter().any(|&v| v < -1e-12 * q.abs().max().max(1.0)) {
        return Err(Error::Config("Q must be positive semidefinite".into()));
    }
    if r.clone().cholesky().is_none() {
        return Err(Error::Config("R must be positive definite".into()));
    }
    let dare = solve_dare(&sys_d.a, &sys_d.b, q, r)?;
    let a_cl = &sys_d.a - &sys_d.b * &dare.k;
    let eig = eigenvalues(&a_cl)?;
    let rho = eig.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if !(rho < 1.0) {
        return Err(Error::NumericalDomain(format!("LQR closed loop has spectral radius {rho} (n = {n})")));
    }
    Ok(LqrDesign {
        q: q.clone(),
        r: r.clone(),
        k: dare.k,
        p: dare.p,
        ts: sys_d.ts,
        closed_loop_eigenvalues: eig,
        spectral_radius: rho,
        dare_residual: dare.residual,
    })
}

/// Inner closed loop lifted to the MPC period with the correction held.
#[derive(Debug, Clone)]
pub struct DualModePredictor {
    pub a_bar: Matrix,
    pub b_bar: Matrix,
    pub k_lqr: Matrix,
    pub m: usize,
    /// One inner step: `A_d - B_d K` and `B_d`.
    pub a_inner: Matrix,
    pub b_inner: Matrix,
}

pub fn build_predictor(sys_d: &DiscreteSS, k_lqr: &Matrix, m: usize) -> Result<DualModePredictor> {
    let n = sys_d.states();
    if m == 0 {
        return Err(Error::Config("rate ratio m must be at least 1".into()));
    }
    if k_lqr.shape() != (sys_d.b.ncols(), n) {
        return Err(Error::Dimension(format!("K must be {}x{n}, got {:?}", sys_d.b.ncols(), k_lqr.shape())));
    }
    let a_inner = &sys_d.a - &sys_d.b * k_lqr;
    let rho = spectral_radius(&a_inner)?;
    if !(rho < 1.0) {
        return Err(Error::UnstableInnerLoop(rho));
    }
    let mut a_bar = Matrix::identity(n, n);
    let mut b_bar = Matrix::zeros(n, sys_d.b.ncols());
    for _ in 0..m {
        b_bar += &a_bar * &sys_d.b;
        a_bar = &a_inner * a_bar;
    }
    Ok(DualModePredictor { a_bar, b_bar, k_lqr: k_lqr.clone(), m, a_inner, b_inner: sys_d.b.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub horizon: usize,
    pub ts_mpc: f64,
    pub q_diag: [f64; 4],
    pub qn_diag: [f64; 4],
    pub r: f64,
    pub theta_max: f64,
    pub ydot_max: f64,
    pub thetadot_max: f64,
    pub u_max: f64,
    pub qp: QpSettings,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 40,
            ts_mpc: 0.1,
            q_diag: [1000.0, 0.0, 0.0, 0.0],
            qn_diag: [1000.0, 0.0, 0.0, 0.0],
            r: 0.3,
            theta_max: 3.0,
            ydot_max: 15.0,
            thetadot_max: 25.0,
            u_max: 1000.0,
            // Ticks/s inputs move the states by ~1e-4 per unit, so the stacked
            // problem is badly scaled; equilibration and rho rebalancing fix that.
            qp: QpSettings { scaling_iters: 10, adaptive_rho_interval: 25, ..QpSettings::default() },
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("mpc horizon must be at least 1".into()));
        }
        let bounds = [self.theta_max, self.ydot_max, self.thetadot_max, self.u_max];
        if bounds.iter().any(|b| !(*b > 0.0)) || !(self.ts_mpc > 0.0) {
            return Err(Error::Config("mpc bounds and ts_mpc must be positive".into()));
        }
        if self.q_diag.iter().chain(&self.qn_diag).any(|v| !(v.is_finite() && *v >= 0.0)) || !(self.r > 0.0) {
            return Err(Error::Config("mpc needs Q, Q_N >= 0 and R > 0".into()));
        }
        self.qp.validate()
    }

    fn state_bounds(&self) -> [f64; 3] {
        [self.theta_max, self.ydot_max, self.thetadot_max]
    }
}

/// Stacked MPC problem over `z = (x_1..x_N, u_0..u_{N-1})`.
///
/// Rows: `4N` dynamics equalities, then `3N` boxes on `(theta, ydot, thetadot)`
/// of every predicted state, then `N` input boxes. The objective omits the
/// constant `e_kᵀ Q e_k` terms, so it equals the tracking cost up to a constant.
pub fn build_qp(pred: &DualModePredictor, cfg: &MpcConfig, x0: &StateVec, refs: &[StateVec]) -> Result<QpProblem> {
    let n = cfg.horizon;
    if refs.len() != n + 1 {
        return Err(Error::Dimension(format!("need {} reference states, got {}", n + 1, refs.len())));
    }
    if pred.a_bar.shape() != (4, 4) || pred.b_bar.shape() != (4, 1) {
        return Err(Error::Dimension("predictor must be 4-state single-input".into()));
    }
    let nx = 4 * n;
    let nz = 5 * n;
    let rows = 8 * n;
    let mut p = Matrix::zeros(nz, nz);
    let mut q = DVector::zeros(nz);
    for k in 1..=n {
        let w = if k == n { &cfg.qn_diag } else { &cfg.q_diag };
        let r = refs[k].to_array();
        for i in 0..4 {
            let idx = 4 * (k - 1) + i;
            p[(idx, idx)] = 2.0 * w[i];
            q[idx] = -2.0 * w[i] * r[i];
        }
    }
    for k in 0..n {
        p[(nx + k, nx + k)] = 2.0 * cfg.r;
    }

    let mut a = Matrix::zeros(rows, nz);
    let mut l = DVector::zeros(rows);
    let mut u = DVector::zeros(rows);
    let ax0 = &pred.a_bar * x0.to_dvector();
    for k in 0..n {
        for i in 0..4 {
            let row = 4 * k + i;
            a[(row, 4 * k + i)] = 1.0;
            a[(row, nx + k)] = -pred.b_bar[(i, 0)];
            if k > 0 {
                for j in 0..4 {
                    a[(row, 4 * (k - 1) + j)] = -pred.a_bar[(i, j)];
                }
            } else {
                l[row] = ax0[i];
                u[row] = ax0[i];
            }
        }
    }
    let sb = cfg.state_bounds();
    for k in 0..n {
        for (j, b) in sb.iter().enumerate() {
            let row = nx + 3 * k + j;
            a[(row, 4 * k + 1 + j)] = 1.0;
            l[row] = -b;
            u[row] = *b;
        }
        let row = nx + 3 * n + k;
        a[(row, nx + k)] = 1.0;
        l[row] = -cfg.u_max;
        u[row] = cfg.u_max;
    }
    debug_assert!(u.iter().all(|v| *v < INFTY));
    Ok(QpProblem { p, q, a, l, u })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcOutput {
    /// Correction to apply over the next MPC period (ticks/s).
    pub u: f64,
    pub status: QpStatus,
    pub iterations: usize,
    /// The solver stopped at its iteration cap; `u` comes from its last iterate.
    pub degraded: bool,
    /// The QP was infeasible and `u` fell back to zero.
    pub infeasible: bool,
    /// Predicted states `x_1..x_N` of the accepted solution.
    pub predicted: Vec<StateVec>,
}

/// Receding-horizon controller. The QP structure (`P`, `A`) never changes, so
/// the factorization is built once; only the reference and `x0` rows move.
#[derive(Debug, Clone)]
pub struct MpcController {
    pred: DualModePredictor,
    cfg: MpcConfig,
    solver: Option<QpSolver>,
    warm: Option<(DVector<f64>, DVector<f64>)>,
}

impl MpcController {
    pub fn new(pred: DualModePredictor, cfg: MpcConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { pred, cfg, solver: None, warm: None })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    pub fn predictor(&self) -> &DualModePredictor {
        &self.pred
    }

    pub fn reset(&mut self) {
        self.warm = None;
    }

    pub fn step(&mut self, x0: &StateVec, refs: &[StateVec]) -> Result<MpcOutput> {
        let prob = build_qp(&self.pred, &self.cfg, x0, refs)?;
        let solver = match self.solver.as_mut() {
            Some(s) => {
                s.update_q(prob.q)?;
                s.update_bounds(prob.l, prob.u)?;
                s
            }
            None => self.solver.insert(QpSolver::new(prob, self.cfg.qp)?),
        };
        match &self.warm {
            Some((z, y)) => solver.warm_start(&shift_primal(z, self.cfg.horizon), &shift_dual(y, self.cfg.horizon))?,
            None => solver.cold_start(),
        }
        let sol = solver.solve();
        let n = self.cfg.horizon;
        let out = match sol.status {
            QpStatus::PrimalInfeasible => {
                self.warm = None;
                log::warn!("mpc: infeasible QP at x0 = {x0:?}; applying zero correction");
                MpcOutput { u: 0.0, status: sol.status, iterations: sol.iterations, degraded: false, infeasible: true, predicted: Vec::new() }
            }
            status => {
                if status == QpStatus::MaxIter {
                    log::warn!("mpc: solver hit its iteration cap; using the last iterate");
                }
                let predicted = (0..n).map(|k| StateVec::from_slice(&sol.z.as_slice()[4 * k..4 * k + 4])).collect();
                let out = MpcOutput {
                    u: sol.z[4 * n],
                    status,
                    iterations: sol.iterations,
                    degraded: status == QpStatus::MaxIter,
                    infeasible: false,
                    predicted,
                };
                self.warm = Some((sol.z, sol.y));
                out
            }
        };
        Ok(out)
    }
}

/// Drops the first block of every group and repeats the last one.
fn shift_blocks(v: &mut [f64], width: usize) {
    let len = v.len();
    if len > width {
        v.copy_within(width.., 0);
        v.copy_within(len - 2 * width..len - width, len - width);
    }
}

fn shift_primal(z: &DVector<f64>, n: usize) -> DVector<f64> {
    let mut z = z.clone();
    let s = z.as_mut_slice();
    shift_blocks(&mut s[..4 * n], 4);
    shift_blocks(&mut s[4 * n..], 1);
    z
}

fn shift_dual(y: &DVector<f64>, n: usize) -> DVector<f64> {
    let mut y = y.clone();
    let s = y.as_mut_slice();
    shift_blocks(&mut s[..4 * n], 4);
    shift_blocks(&mut s[4 * n..7 * n], 3);
    shift_blocks(&mut s[7 * n..], 1);
    y
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothStepRef {
    pub t0: f64,
    pub amplitude: f64,
    pub t_rise: f64,
}

impl Default for SmoothStepRef {
    fn default() -> Self {
        Self { t0: 1.0, amplitude: 20.0, t_rise: 2.0 }
    }
}

impl SmoothStepRef {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_rise > 0.0) || !self.t0.is_finite() || !self.amplitude.is_finite() {
            return Err(Error::Config("smooth step needs t_rise > 0 and finite t0, amplitude".into()));
        }
        Ok(())
    }
}

/// Position reference with a half-cosine transition; other states stay zero.
pub fn smooth_step(r: &SmoothStepRef, t: f64) -> StateVec {
    let y = if t < r.t0 {
        0.0
    } else if t < r.t0 + r.t_rise {
        r.amplitude * (1.0 - (PI * (t - r.t0) / r.t_rise).cos()) / 2.0
    } else {
        r.amplitude
    };
    StateVec::new(y, 0.0, 0.0, 0.0)
}

/// References at `t + k * ts_mpc` for `k = 0..=N`.
pub fn reference_preview(r: &SmoothStepRef, t: f64, cfg: &MpcConfig) -> Vec<StateVec> {
    (0..=cfg.horizon).map(|k| smooth_step(r, t + k as f64 * cfg.ts_mpc)).collect()
}
