use crate::error::Result;
use crate::plant::{StateVec, WheelCommands};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// One plane at one tick: true and measured state plus the commands acting on it.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlaneSample {
    pub truth: StateVec,
    pub meas: StateVec,
    /// Ball speed requested by the outer loop (cm/s); zero for LQR runs.
    pub ydot_ref: f64,
    /// Total planar command (ticks/s).
    pub u: f64,
    /// LQR share of the command (ticks/s); zero for the PID/P runs.
    pub u_lqr: f64,
}

/// State at time `t` and the commands held over `[t, t + Ts_inner)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TelemetryRow {
    pub t: f64,
    /// Planes ordered `[x, y]`.
    pub planes: [PlaneSample; 2],
    /// Excitation injected into the y-plane speed loop (cm/s).
    pub d: f64,
    pub u_mpc_raw: f64,
    pub u_mpc_filt: f64,
    pub y_ref: f64,
    pub wheels: WheelCommands,
}

const PLANE_COLUMNS: [&str; 11] = [
    "{p}_cm",
    "theta_{p}_deg",
    "{p}dot_cm_s",
    "thetadot_{p}_deg_s",
    "{p}_meas_cm",
    "theta_{p}_meas_deg",
    "{p}dot_meas_cm_s",
    "thetadot_{p}_meas_deg_s",
    "ydot_ref_{p}_cm_s",
    "u_{p}_ticks_s",
    "u_lqr_{p}_ticks_s",
];

/// Unit-annotated column names in output order.
pub fn header() -> Vec<String> {
    let mut cols = vec!["t_s".to_string()];
    for p in ["x", "y"] {
        cols.extend(PLANE_COLUMNS.iter().map(|c| c.replace("{p}", p)));
    }
    cols.extend(
        ["d_cm_s", "u_mpc_raw_ticks_s", "u_mpc_filt_ticks_s", "y_ref_cm", "u1_ticks_s", "u2_ticks_s", "u3_ticks_s"]
            .map(String::from),
    );
    cols
}

impl TelemetryRow {
    pub fn values(&self) -> Vec<f64> {
        let mut v = vec![self.t];
        for p in &self.planes {
            v.extend(p.truth.to_array());
            v.extend(p.meas.to_array());
            v.extend([p.ydot_ref, p.u, p.u_lqr]);
        }
        v.extend([self.d, self.u_mpc_raw, self.u_mpc_filt, self.y_ref, self.wheels.u1, self.wheels.u2, self.wheels.u3]);
        v
    }
}

/// Nine significant digits, so identical runs give identical bytes.
fn fmt_value(v: f64) -> String {
    format!("{v:.8e}")
}

pub fn write_csv<W: Write>(rows: &[TelemetryRow], mut out: W) -> Result<()> {
    writeln!(out, "{}", header().join(","))?;
    for row in rows {
        let line: Vec<String> = row.values().into_iter().map(fmt_value).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_csv_file(rows: &[TelemetryRow], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(rows, std::io::BufWriter::new(file))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// The plant left its envelope; telemetry stops at the abort.
    Aborted,
    /// The experiment could not produce its result (e.g. identification failed).
    Failed,
    ConfigError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortInfo {
    pub time_s: f64,
    pub reason: String,
    /// `[x plane, y plane]` true states at the last finite tick.
    pub state: [[f64; 4]; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub solves: usize,
    pub total: usize,
    pub mean: f64,
    pub max: usize,
}

impl IterationStats {
    pub fn from_counts(counts: &[usize]) -> Self {
        let total = counts.iter().sum();
        Self {
            solves: counts.len(),
            total,
            mean: if counts.is_empty() { 0.0 } else { total as f64 / counts.len() as f64 },
            max: counts.iter().copied().max().unwrap_or(0),
        }
    }
}

/// Metrics an experiment reports; fields that do not apply stay absent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub balanced: Option<bool>,
    /// Time (s) after which the settling band holds until the end; for
    /// tracking it is measured from the start of the reference step.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub settling_time_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steady_state_error_cm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_abs_theta_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_abs_ydot_cm_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_abs_thetadot_deg_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_abs_u_mpc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_position_cm: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constraint_violations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub infeasible_events: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub degraded_solves: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver_iterations: Option<IterationStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tracking_cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_rates: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_hat: Option<[f64; 8]>,
    /// Relative error (%) of each identified constant against the true plant's linear model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_rel_error_pct: Option<[f64; 8]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id_converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub excitation_alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spectral_radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dare_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub experiment: String,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abort: Option<AbortInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub metrics: Metrics,
    pub seed: u64,
    pub config_hash: String,
}

impl RunSummary {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("summary serializes");
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}
