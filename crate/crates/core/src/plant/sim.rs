use super::{build_linear_ss, nonlinear_dynamics, LinearParams, PhysicalParams, StateVec};
use crate::error::{Error, Result};
use crate::numerics::{rk4_step, zoh_discretize, DiscreteSS};
use serde::{Deserialize, Serialize};

/// Tilt beyond which the planar small-angle model is meaningless and a run is aborted.
pub const TILT_ENVELOPE_DEG: f64 = 45.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PlantMode {
    #[default]
    Linear,
    Nonlinear,
}

#[derive(Debug, Clone)]
enum Model {
    Linear(DiscreteSS),
    Nonlinear(PhysicalParams),
}

/// Ground-truth plant advanced at a fixed step `dt` with the input held over the step.
#[derive(Debug, Clone)]
pub struct Plant {
    model: Model,
    dt: f64,
}

impl Plant {
    /// Exact zero-order-hold update of the linear model.
    pub fn linear(lp: &LinearParams, dt: f64) -> Result<Self> {
        let sys = zoh_discretize(&build_linear_ss(lp), dt)?;
        Ok(Self { model: Model::Linear(sys), dt })
    }

    /// RK4 integration of the rigid-body model.
    pub fn nonlinear(pp: &PhysicalParams, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::NumericalDomain(format!("step size must be positive, got {dt}")));
        }
        pp.validate()?;
        Ok(Self { model: Model::Nonlinear(*pp), dt })
    }

    pub fn mode(&self) -> PlantMode {
        match self.model {
            Model::Linear(_) => PlantMode::Linear,
            Model::Nonlinear(_) => PlantMode::Nonlinear,
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// The discrete model used in linear mode.
    pub fn discrete(&self) -> Option<&DiscreteSS> {
        match &self.model {
            Model::Linear(sys) => Some(sys),
            Model::Nonlinear(_) => None,
        }
    }

    /// Advances from `x` at time `t` by one step; leaving the tilt envelope aborts.
    pub fn step(&self, t: f64, x: &StateVec, u: f64) -> Result<StateVec> {
        let next = match &self.model {
            Model::Linear(sys) => StateVec::from_slice(sys.step(&x.to_dvector(), u).as_slice()),
            Model::Nonlinear(pp) => {
                let f = |s: &[f64; 4], u: f64| nonlinear_dynamics(pp, &StateVec::from_array(*s), u).map(StateVec::to_array);
                StateVec::from_array(rk4_step(f, &x.to_array(), u, self.dt)?)
            }
        };
        if !next.is_finite() {
            return Err(Error::PlantBlowUp { state: next.to_array().to_vec() });
        }
        if next.theta.abs() >= TILT_ENVELOPE_DEG {
            return Err(Error::PlantFellOver { time: t + self.dt, theta_deg: next.theta });
        }
        Ok(next)
    }
}
