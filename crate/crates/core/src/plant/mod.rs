//! The synthetic ballbot for one vertical plane.
//!
//! Units everywhere: position in cm, tilt in degrees, time in seconds, wheel
//! commands in stepper ticks per second.

mod nonlinear;
mod sensor;
mod sim;

pub use nonlinear::{energy, linearize, mass_matrix, nonlinear_dynamics, PhysicalParams};
pub use sensor::{Sensor, SensorSpec};
pub use sim::{Plant, PlantMode, TILT_ENVELOPE_DEG};

use crate::numerics::{ContinuousSS, Matrix};
use serde::{Deserialize, Serialize};

/// Ball radius used to scale the published linear model when none is configured.
pub const DEFAULT_BALL_RADIUS_CM: f64 = 3.0;

/// Planar state `(y [cm], theta [deg], ydot [cm/s], thetadot [deg/s])`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StateVec {
    pub y: f64,
    pub theta: f64,
    pub ydot: f64,
    pub thetadot: f64,
}

impl StateVec {
    pub const ZERO: StateVec = StateVec { y: 0.0, theta: 0.0, ydot: 0.0, thetadot: 0.0 };

    pub fn new(y: f64, theta: f64, ydot: f64, thetadot: f64) -> Self {
        Self { y, theta, ydot, thetadot }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.y, self.theta, self.ydot, self.thetadot]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_dvector(self) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_row_slice(&self.to_array())
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    /// The three states the balancing loop actually sees: `(theta, ydot, thetadot)`.
    pub fn reduced(self) -> [f64; 3] {
        [self.theta, self.ydot, self.thetadot]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// The eight constants of the linearized planar model:
///
/// ```text
/// d/dt [y, θ, ẏ, θ̇] = [[0, 0,  1,  0 ],      [0 ]
///                       [0, 0,  0,  1 ],   +  [0 ] u
///                       [0, p1, p2, p7],      [p3]
///                       [0, p4, p5, p8]]      [p6]
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearParams {
    pub p: [f64; 8],
    /// Ball radius (cm) the published parameter table was scaled with.
    pub r: f64,
}

impl LinearParams {
    /// The published identified model; `p1`, `p2` and `p5` scale with the ball radius `r` in cm.
    pub fn published(r: f64) -> Self {
        Self { p: [0.25 * r, -13.87 * r, 0.01, 3.95, 214.68 / r, -0.28, -6.05, 5.50], r }
    }

    pub fn p(&self, i: usize) -> f64 {
        self.p[i - 1]
    }

    /// State matrix; its first column is zero by construction.
    pub fn a_matrix(&self) -> Matrix {
        let p = |i| self.p(i);
        Matrix::from_row_slice(
            4,
            4,
            &[
                0.0, 0.0, 1.0, 0.0, //
                0.0, 0.0, 0.0, 1.0, //
                0.0, p(1), p(2), p(7), //
                0.0, p(4), p(5), p(8),
            ],
        )
    }

    pub fn b_matrix(&self) -> Matrix {
        Matrix::from_column_slice(4, 1, &[0.0, 0.0, self.p(3), self.p(6)])
    }

    /// Rebuilds the constants from a 4-state model with the layout above.
    pub fn from_matrices(a: &Matrix, b: &Matrix, r: f64) -> Self {
        Self {
            p: [a[(2, 1)], a[(2, 2)], b[(2, 0)], a[(3, 1)], a[(3, 2)], b[(3, 0)], a[(2, 3)], a[(3, 3)]],
            r,
        }
    }
}

impl Default for LinearParams {
    fn default() -> Self {
        Self::published(DEFAULT_BALL_RADIUS_CM)
    }
}

/// Continuous model with full-state output (`C = I`, `D = 0`).
pub fn build_linear_ss(lp: &LinearParams) -> ContinuousSS {
    ContinuousSS::new(lp.a_matrix(), lp.b_matrix()).expect("linear model template is 4x4 / 4x1")
}

/// Per-motor velocity commands for the three omniwheels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WheelCommands {
    pub u1: f64,
    pub u2: f64,
    pub u3: f64,
}

/// Latitude of the omniwheel contact points on the ball.
pub const WHEEL_LATITUDE_DEG: f64 = 45.0;

/// Maps the planar tilt commands and the yaw command onto the three motors.
pub fn mix_to_wheels(u_tx: f64, u_ty: f64, u_tz: f64) -> WheelCommands {
    let alpha = WHEEL_LATITUDE_DEG.to_radians();
    let (s, c) = alpha.sin_cos();
    let h = 3f64.sqrt() / 2.0;
    WheelCommands {
        u1: (2.0 * u_tx / c + u_tz / s) / 3.0,
        u2: (-u_tx / c + 2.0 * h * u_ty / c + u_tz / s) / 3.0,
        u3: (-u_tx / c - 2.0 * h * u_ty / c + u_tz / s) / 3.0,
    }
}
