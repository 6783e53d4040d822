//! Double-loop balancing: an outer state feedback produces a reference ball
//! speed, and an inner PID (or plain P) loop drives the ball to that speed.

use crate::error::{Error, Result};
use crate::numerics::{zoh_discretize, ContinuousSS, DiscreteSS, Matrix};
use crate::plant::{build_linear_ss, LinearParams, StateVec};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self { kp: 180.0, ki: 830.0, kd: 50.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeedbackGains {
    pub k_y: f64,
    pub k_theta: f64,
    pub k_ydot: f64,
    pub k_thetadot: f64,
    /// Inner proportional gain used during identification.
    pub kp: f64,
    pub pid: PidGains,
}

impl Default for FeedbackGains {
    fn default() -> Self {
        Self { k_y: 0.0, k_theta: 1.2, k_ydot: 1.1, k_thetadot: 0.005, kp: 300.0, pid: PidGains::default() }
    }
}

impl FeedbackGains {
    /// Row vector `F` with `ydot_ref - ydot = F x`.
    pub fn error_feedback(&self) -> [f64; 4] {
        [self.k_y, self.k_theta, self.k_ydot - 1.0, self.k_thetadot]
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.k_y, self.k_theta, self.k_ydot, self.k_thetadot, self.kp, self.pid.kp, self.pid.ki, self.pid.kd];
        if all.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config("gains must be finite".into()))
        }
    }
}

/// Reference ball speed requested by the outer loop (cm/s).
pub fn outer_reference(g: &FeedbackGains, x: &StateVec) -> f64 {
    g.k_y * x.y + g.k_theta * x.theta + g.k_ydot * x.ydot + g.k_thetadot * x.thetadot
}

/// Memory of the discrete PID: accumulated speed error and the previous speed error.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidState {
    pub e_y_accum: f64,
    pub e_ydot_prev: f64,
}

impl PidState {
    /// One controller tick: rectangular integration and a raw backward difference.
    pub fn step(&mut self, e_ydot: f64, gains: &PidGains, ts: f64) -> f64 {
        self.e_y_accum += e_ydot * ts;
        let e_yddot = (e_ydot - self.e_ydot_prev) / ts;
        self.e_ydot_prev = e_ydot;
        gains.kp * e_ydot + gains.ki * self.e_y_accum + gains.kd * e_yddot
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

pub fn p_step(kp: f64, e_ydot: f64) -> f64 {
    kp * e_ydot
}

/// Closed loop of the linear plant under the P inner loop, driven by the
/// excitation `d` added to the speed error: `x' = (A + B kp F) x + B kp d`.
pub fn closed_loop_matrices(lp: &LinearParams, g: &FeedbackGains) -> ContinuousSS {
    let sys = build_linear_ss(lp);
    let f = Matrix::from_row_slice(1, 4, &g.error_feedback());
    let b_cl = &sys.b * g.kp;
    let a_cl = &sys.a + &b_cl * f;
    ContinuousSS::new(a_cl, b_cl).expect("closed loop keeps the plant dimensions")
}

/// Drops the position state; exact when neither the plant nor the feedback uses `y`.
pub fn reduce(sys: &ContinuousSS) -> Result<ContinuousSS> {
    if sys.states() != 4 || sys.a.column(0).iter().any(|&v| v != 0.0) {
        return Err(Error::Dimension("reduction needs a 4-state model whose first column is zero".into()));
    }
    let a = sys.a.view((1, 1), (3, 3)).into_owned();
    let b = sys.b.rows(1, 3).into_owned();
    ContinuousSS::new(a, b)
}

/// Reduced 3-state `(theta, ydot, thetadot)` closed loop.
pub fn reduced_closed_loop(lp: &LinearParams, g: &FeedbackGains) -> Result<ContinuousSS> {
    if g.k_y != 0.0 {
        return Err(Error::Config("the reduced closed loop requires k_y = 0".into()));
    }
    reduce(&closed_loop_matrices(lp, g))
}

/// Sampled-data closed loop on the reduced states: the plant is held over each
/// period `ts` and the controller acts on the sampled state, so
/// `x[k+1] = (A_d + B_d kp F) x[k] + B_d kp d[k]`.
pub fn sampled_closed_loop(lp: &LinearParams, g: &FeedbackGains, ts: f64) -> Result<DiscreteSS> {
    if g.k_y != 0.0 {
        return Err(Error::Config("the reduced closed loop requires k_y = 0".into()));
    }
    let plant = zoh_discretize(&reduce(&build_linear_ss(lp))?, ts)?;
    let f = g.error_feedback();
    let f = Matrix::from_row_slice(1, 3, &f[1..]);
    let b_cl = &plant.b * g.kp;
    let a_cl = &plant.a + &b_cl * f;
    DiscreteSS::new(a_cl, b_cl, plant.c, plant.d, ts)
}
