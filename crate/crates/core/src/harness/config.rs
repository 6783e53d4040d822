use crate::control::{LqrConfig, MpcConfig, SmoothStepRef};
use crate::error::{Error, Result};
use crate::excitation::MultisineSpec;
use crate::plant::{linearize, LinearParams, PhysicalParams, PlantMode, SensorSpec};
use crate::stabilizer::FeedbackGains;
use crate::sysid::IdConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Excitation scale used for identification runs unless configured otherwise.
/// Large enough to lift the response well above the sensor noise while the
/// tilt stays inside a few degrees.
pub const DEFAULT_ID_ALPHA: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSection {
    pub mode: PlantMode,
    /// Ground truth in linear mode.
    pub linear: LinearParams,
    /// Ground truth in nonlinear mode.
    pub physical: PhysicalParams,
    pub sensor: SensorSpec,
    /// `false` replaces the sensor with perfect measurements.
    pub noise: bool,
}

impl Default for PlantSection {
    fn default() -> Self {
        Self {
            mode: PlantMode::Linear,
            linear: LinearParams::default(),
            physical: PhysicalParams::default(),
            sensor: SensorSpec::default(),
            noise: true,
        }
    }
}

/// Initial tilt (deg) per plane, ordered `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    pub balance_theta0: [f64; 2],
    pub lqr_theta0: [f64; 2],
}

impl Default for InitialSection {
    fn default() -> Self {
        Self { balance_theta0: [2.0, 2.0], lqr_theta0: [2.0, 2.0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Overrides the per-experiment default duration (s).
    pub duration: Option<f64>,
    pub seed: u64,
    pub ts_inner: f64,
    /// 0 applies each MPC solution immediately, 1 holds it back one MPC period.
    pub latency_mpc_periods: u32,
    /// Low-pass cutoff on the MPC correction; `None` disables the filter.
    pub filter_cutoff_hz: Option<f64>,
    /// Design LQR and MPC on the true model instead of the identified one.
    pub use_truth: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { duration: None, seed: 1, ts_inner: 0.005, latency_mpc_periods: 0, filter_cutoff_hz: Some(1.0), use_truth: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantSection,
    pub gains: FeedbackGains,
    pub excitation: MultisineSpec,
    pub id: IdConfig,
    pub lqr: LqrConfig,
    pub mpc: MpcConfig,
    pub reference: SmoothStepRef,
    pub initial: InitialSection,
    pub run: RunSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            plant: PlantSection::default(),
            gains: FeedbackGains::default(),
            excitation: MultisineSpec::default().scaled(DEFAULT_ID_ALPHA),
            id: IdConfig::default(),
            lqr: LqrConfig::default(),
            mpc: MpcConfig::default(),
            reference: SmoothStepRef::default(),
            initial: InitialSection::default(),
            run: RunSection::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses JSON; errors name the offending key path, e.g. `plant.sensor.sigma_theta`.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("at `{path}`: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Sets every seed in the configuration from one value.
    pub fn set_seed(&mut self, seed: u64) {
        self.run.seed = seed;
        self.plant.sensor.seed = seed;
        self.id.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        let ts = self.run.ts_inner;
        if !(ts > 0.0 && ts.is_finite()) {
            return Err(Error::Config(format!("run.ts_inner must be positive, got {ts}")));
        }
        if let Some(d) = self.run.duration {
            if !(d >= ts && d.is_finite()) {
                return Err(Error::Config(format!("run.duration must be at least one tick, got {d}")));
            }
        }
        if self.run.latency_mpc_periods > 1 {
            return Err(Error::Config(format!("run.latency_mpc_periods must be 0 or 1, got {}", self.run.latency_mpc_periods)));
        }
        if let Some(fc) = self.run.filter_cutoff_hz {
            if !(fc > 0.0 && fc < 0.5 / ts) {
                return Err(Error::Config(format!("run.filter_cutoff_hz must lie in (0, {}), got {fc}", 0.5 / ts)));
            }
        }
        if (self.plant.sensor.ts_sensor - ts).abs() > 1e-12 {
            return Err(Error::Config("plant.sensor.ts_sensor must equal run.ts_inner".into()));
        }
        if (self.lqr.ts - ts).abs() > 1e-12 {
            return Err(Error::Config("lqr.ts must equal run.ts_inner".into()));
        }
        self.mpc_ratio()?;
        self.plant.sensor.validate()?;
        if self.plant.mode == PlantMode::Nonlinear {
            self.plant.physical.validate()?;
        }
        if !self.plant.linear.p.iter().all(|v| v.is_finite()) || !(self.plant.linear.r > 0.0) {
            return Err(Error::Config("plant.linear needs finite constants and r > 0".into()));
        }
        self.gains.validate()?;
        self.excitation.validate()?;
        self.lqr.validate()?;
        self.mpc.validate()?;
        self.reference.validate()?;
        if self.initial.balance_theta0.iter().chain(&self.initial.lqr_theta0).any(|v| !v.is_finite()) {
            return Err(Error::Config("initial tilts must be finite".into()));
        }
        Ok(())
    }

    /// Inner ticks per MPC period; the two sample times must be commensurate.
    pub fn mpc_ratio(&self) -> Result<usize> {
        let ratio = self.mpc.ts_mpc / self.run.ts_inner;
        let m = ratio.round();
        if m < 1.0 || (ratio - m).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::Config(format!(
                "mpc.ts_mpc / run.ts_inner must be a positive integer, got {ratio}"
            )));
        }
        Ok(m as usize)
    }

    /// Sensor actually used: the configured one, or a perfect one when noise is off.
    pub fn effective_sensor(&self) -> SensorSpec {
        if self.plant.noise {
            self.plant.sensor
        } else {
            SensorSpec::ideal(self.run.ts_inner)
        }
    }

    /// Linear model of the ground-truth plant.
    pub fn truth_model(&self) -> Result<LinearParams> {
        match self.plant.mode {
            PlantMode::Linear => Ok(self.plant.linear),
            PlantMode::Nonlinear => linearize(&self.plant.physical),
        }
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
