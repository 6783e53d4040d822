//! Multisine perturbation `d(t) = alpha * sum_i a_i sin(2 pi b_i t)` injected
//! into the inner speed loop during identification.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SineComponent {
    /// Amplitude (cm/s).
    pub a: f64,
    /// Frequency (Hz).
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultisineSpec {
    pub alpha_scale: f64,
    pub components: Vec<SineComponent>,
}

impl Default for MultisineSpec {
    fn default() -> Self {
        let a = [0.14, 1.0, 0.27, 0.14, 0.125];
        let b = [0.43, 0.64, 0.7, 3.4, 5.1];
        Self {
            alpha_scale: 1.0,
            components: a.iter().zip(b).map(|(&a, b)| SineComponent { a, b }).collect(),
        }
    }
}

impl MultisineSpec {
    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Config("excitation needs at least one component".into()));
        }
        if !self.alpha_scale.is_finite() || self.components.iter().any(|c| !(c.b > 0.0) || !c.a.is_finite() || !c.b.is_finite()) {
            return Err(Error::Config("excitation frequencies must be positive and amplitudes finite".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self { alpha_scale: alpha, ..self.clone() }
    }

    /// Upper bound on `|d(t)|` from the triangle inequality.
    pub fn amplitude_bound(&self) -> f64 {
        self.alpha_scale.abs() * self.components.iter().map(|c| c.a.abs()).sum::<f64>()
    }
}

pub fn d_at(spec: &MultisineSpec, t: f64) -> f64 {
    spec.alpha_scale * spec.components.iter().map(|c| c.a * (2.0 * PI * c.b * t).sin()).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledExcitation {
    pub samples: Vec<f64>,
    pub peak: f64,
    pub rms: f64,
}

/// Samples `d` at `k * ts` for `k = 0..=floor(duration / ts)`.
pub fn sample_sequence(spec: &MultisineSpec, ts: f64, duration: f64) -> Result<SampledExcitation> {
    if !(ts > 0.0 && duration >= ts && duration.is_finite()) {
        return Err(Error::Config(format!("need ts > 0 and duration >= ts, got ts = {ts}, duration = {duration}")));
    }
    // The small slack keeps e.g. 60 / 0.005 from rounding down a whole sample.
    let n = (duration / ts + 1e-9).floor() as usize;
    let samples: Vec<f64> = (0..=n).map(|k| d_at(spec, k as f64 * ts)).collect();
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rms = (samples.iter().map(|v| v * v).sum::<f64>() / samples.len() as f64).sqrt();
    Ok(SampledExcitation { samples, peak, rms })
}
