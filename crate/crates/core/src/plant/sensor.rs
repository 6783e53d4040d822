use super::StateVec;
use crate::error::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Synthetic stand-in for the IMU (tilt, tilt rate) and the trackball (position, speed).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorSpec {
    /// Tilt noise standard deviation (deg).
    pub sigma_theta: f64,
    /// Tilt-rate noise standard deviation (deg/s).
    pub sigma_thetadot: f64,
    /// Trackball speed noise standard deviation (cm/s).
    pub sigma_ydot: f64,
    /// Trackball resolution (cm per count); 0 disables quantization.
    pub trackball_quantum: f64,
    /// Sensor sample period (s).
    pub ts_sensor: f64,
    pub seed: u64,
}

impl SensorSpec {
    /// Perfect sensing: no noise, no quantization.
    pub fn ideal(ts_sensor: f64) -> Self {
        Self { sigma_theta: 0.0, sigma_thetadot: 0.0, sigma_ydot: 0.0, trackball_quantum: 0.0, ts_sensor, seed: 0 }
    }

    pub fn is_ideal(&self) -> bool {
        self.sigma_theta == 0.0 && self.sigma_thetadot == 0.0 && self.sigma_ydot == 0.0 && self.trackball_quantum == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma_theta >= 0.0
            && self.sigma_thetadot >= 0.0
            && self.sigma_ydot >= 0.0
            && self.trackball_quantum >= 0.0
            && self.ts_sensor > 0.0
            && [self.sigma_theta, self.sigma_thetadot, self.sigma_ydot, self.trackball_quantum, self.ts_sensor]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config("sensor: sigmas and quantum must be >= 0 and ts_sensor > 0".into()))
        }
    }
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self { sigma_theta: 0.005, sigma_thetadot: 0.05, sigma_ydot: 0.01, trackball_quantum: 1e-5, ts_sensor: 0.005, seed: 1 }
    }
}

/// Seeded measurement model. Every call draws from the generator, so the noise
/// sequence depends only on the seed and the number of calls.
#[derive(Debug, Clone)]
pub struct Sensor {
    spec: SensorSpec,
    rng: ChaCha8Rng,
    theta_noise: Normal<f64>,
    thetadot_noise: Normal<f64>,
    ydot_noise: Normal<f64>,
}

impl Sensor {
    pub fn new(spec: SensorSpec) -> Result<Self> {
        spec.validate()?;
        let normal = |s: f64| Normal::new(0.0, s).map_err(|e| Error::Config(format!("sensor noise: {e}")));
        Ok(Self {
            spec,
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            theta_noise: normal(spec.sigma_theta)?,
            thetadot_noise: normal(spec.sigma_thetadot)?,
            ydot_noise: normal(spec.sigma_ydot)?,
        })
    }

    /// Separate, reproducible stream for a second plane sharing the same spec.
    pub fn with_stream(spec: SensorSpec, stream: u64) -> Result<Self> {
        let mut s = Self::new(spec)?;
        s.rng.set_stream(stream);
        Ok(s)
    }

    pub fn spec(&self) -> &SensorSpec {
        &self.spec
    }

    /// Tilt and tilt rate get additive Gaussian noise. The trackball reports
    /// position truncated to whole counts and speed as the truncated count
    /// rate over one sensor period, plus additive Gaussian speed noise.
    pub fn measure(&mut self, x: &StateVec) -> StateVec {
        let q = self.spec.trackball_quantum;
        let ts = self.spec.ts_sensor;
        let theta = x.theta + self.theta_noise.sample(&mut self.rng);
        let thetadot = x.thetadot + self.thetadot_noise.sample(&mut self.rng);
        let ydot_noise = self.ydot_noise.sample(&mut self.rng);
        StateVec {
            y: quantize(x.y, q),
            theta,
            ydot: quantize(x.ydot * ts, q) / ts + ydot_noise,
            thetadot,
        }
    }
}

/// Truncates toward zero onto the grid `q`; `q = 0` passes the value through.
pub fn quantize(v: f64, q: f64) -> f64 {
    if q == 0.0 {
        v
    } else {
        // The small relative nudge keeps exact multiples (e.g. 0.15 / 0.05) on their own count.
        let counts = v / q;
        (counts + counts.signum() * 1e-9).trunc() * q
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ideal_sensor_is_identity() {
        let mut s = Sensor::new(SensorSpec::ideal(0.005)).unwrap();
        let x = StateVec::new(0.123, -1.5, 2.25, 7.0);
        assert_eq!(s.measure(&x), x);
    }

    #[test]
    fn trackball_truncates_toward_zero() {
        assert!((quantize(0.123, 0.05) - 0.10).abs() < 1e-15);
        assert!((quantize(-0.123, 0.05) + 0.10).abs() < 1e-15);
        assert!((quantize(0.15, 0.05) - 0.15).abs() < 1e-15);
        let spec = SensorSpec { trackball_quantum: 0.05, ..SensorSpec::ideal(0.005) };
        let m = Sensor::new(spec).unwrap().measure(&StateVec::new(0.123, 0.0, 25.0, 0.0));
        assert!((m.y - 0.10).abs() < 1e-15);
        // 25 cm/s over 5 ms is 2.5 counts, truncated to 2 counts per period.
        assert!((m.ydot - 20.0).abs() < 1e-9);
    }

    #[test]
    fn same_seed_same_noise() {
        let spec = SensorSpec::default();
        let mut a = Sensor::new(spec).unwrap();
        let mut b = Sensor::new(spec).unwrap();
        let mut c = Sensor::with_stream(spec, 1).unwrap();
        let x = StateVec::new(1.0, 2.0, 3.0, 4.0);
        let mut differs = false;
        for _ in 0..100 {
            let (ma, mb, mc) = (a.measure(&x), b.measure(&x), c.measure(&x));
            assert_eq!(ma, mb);
            differs |= ma != mc;
        }
        assert!(differs);
    }

    #[test]
    fn noise_has_configured_spread() {
        let spec = SensorSpec { sigma_theta: 0.5, sigma_thetadot: 2.0, sigma_ydot: 1.0, ..SensorSpec::ideal(0.005) };
        let mut s = Sensor::new(spec).unwrap();
        let n = 20_000;
        let mut sums = [0.0; 3];
        for _ in 0..n {
            let m = s.measure(&StateVec::ZERO);
            sums[0] += m.theta * m.theta;
            sums[1] += m.thetadot * m.thetadot;
            sums[2] += m.ydot * m.ydot;
        }
        let rms = sums.map(|v| (v / n as f64).sqrt());
        assert!((rms[0] - 0.5).abs() < 0.02);
        assert!((rms[1] - 2.0).abs() < 0.08);
        assert!((rms[2] - 1.0).abs() < 0.04);
    }

    #[test]
    fn rejects_negative_sigma() {
        assert!(Sensor::new(SensorSpec { sigma_theta: -1.0, ..SensorSpec::default() }).is_err());
    }
}
