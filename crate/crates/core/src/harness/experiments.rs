use super::config::ExperimentConfig;
use super::telemetry::{AbortInfo, IterationStats, Metrics, PlaneSample, RunStatus, RunSummary, TelemetryRow};
use crate::control::{build_predictor, design_lqr, reference_preview, smooth_step, LqrDesign, MpcController};
use crate::error::{Error, Result};
use crate::excitation::{d_at, MultisineSpec};
use crate::numerics::{zoh_discretize, Biquad};
use crate::plant::{build_linear_ss, mix_to_wheels, LinearParams, Plant, PlantMode, Sensor, StateVec};
use crate::stabilizer::{outer_reference, p_step, PidState};
use crate::sysid::{identify, open_loop_model, validate, IdDataset, IdResult};
use serde::{Deserialize, Serialize};

pub const DEFAULT_BALANCE_DURATION_S: f64 = 20.0;
pub const DEFAULT_IDENTIFY_DURATION_S: f64 = 120.0;
pub const DEFAULT_LQR_DURATION_S: f64 = 10.0;
pub const DEFAULT_TRACK_DURATION_S: f64 = 40.0;

/// The balance run counts as balanced when `|theta|` stays below this after `BALANCE_CHECK_AFTER_S`.
pub const BALANCE_BAND_DEG: f64 = 0.1;
pub const BALANCE_CHECK_AFTER_S: f64 = 10.0;
/// Settling band on the tilt for LQR runs.
pub const LQR_SETTLE_BAND_DEG: f64 = 0.05;
/// Settling band on the position error for tracking runs.
pub const TRACK_SETTLE_BAND_CM: f64 = 1.0;
/// Window at the end of a tracking run averaged for the steady-state error.
pub const STEADY_STATE_WINDOW_S: f64 = 1.0;
/// Relative slack before a bound counts as violated.
pub const VIOLATION_TOLERANCE: f64 = 1e-6;
/// Prior for the identification when none is configured: the true constants scaled by this factor.
pub const DEFAULT_GUESS_FACTOR: f64 = 1.3;

pub const X: usize = 0;
pub const Y: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub telemetry: Vec<TelemetryRow>,
    pub summary: RunSummary,
}

/// The model handed from identification to controller design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiedModel {
    pub model: LinearParams,
    pub p_hat: [f64; 8],
    pub fit_rates: [f64; 3],
    pub seed: u64,
    pub config_hash: String,
}

impl IdentifiedModel {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Config(format!("model file at `{}`: {}", e.path(), e.inner())))
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("model serializes") + "\n")?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentifyOutput {
    pub run: RunOutput,
    pub result: Option<IdResult>,
    pub model: Option<IdentifiedModel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub balance: RunOutput,
    pub identify: IdentifyOutput,
    pub lqr: RunOutput,
    pub track: RunOutput,
}

impl PipelineOutput {
    pub fn summaries(&self) -> [&RunSummary; 4] {
        [&self.balance.summary, &self.identify.run.summary, &self.lqr.summary, &self.track.summary]
    }
}

fn summary(cfg: &ExperimentConfig, name: &str) -> RunSummary {
    RunSummary {
        experiment: name.to_string(),
        status: RunStatus::Completed,
        abort: None,
        message: None,
        metrics: Metrics::default(),
        seed: cfg.run.seed,
        config_hash: cfg.hash(),
    }
}

/// Configuration errors propagate; every other failure becomes a `failed` summary.
fn guarded(cfg: &ExperimentConfig, name: &str, f: impl FnOnce() -> Result<RunOutput>) -> Result<RunOutput> {
    match f() {
        Err(e @ Error::Config(_)) => Err(e),
        Err(e) => {
            let mut s = summary(cfg, name);
            s.status = RunStatus::Failed;
            s.message = Some(e.to_string());
            Ok(RunOutput { telemetry: Vec::new(), summary: s })
        }
        ok => ok,
    }
}

fn ticks(cfg: &ExperimentConfig, default_duration: f64) -> usize {
    let d = cfg.run.duration.unwrap_or(default_duration);
    (d / cfg.run.ts_inner + 1e-9).floor() as usize
}

fn tilted(theta0: [f64; 2]) -> [StateVec; 2] {
    theta0.map(|th| StateVec::new(0.0, th, 0.0, 0.0))
}

/// Both planes of the true plant with their own sensor streams.
struct Rig {
    plant: Plant,
    sensors: [Sensor; 2],
    x: [StateVec; 2],
}

impl Rig {
    fn new(cfg: &ExperimentConfig, x0: [StateVec; 2]) -> Result<Self> {
        let ts = cfg.run.ts_inner;
        let plant = match cfg.plant.mode {
            PlantMode::Linear => Plant::linear(&cfg.plant.linear, ts)?,
            PlantMode::Nonlinear => Plant::nonlinear(&cfg.plant.physical, ts)?,
        };
        let spec = cfg.effective_sensor();
        Ok(Self { plant, sensors: [Sensor::with_stream(spec, 0)?, Sensor::with_stream(spec, 1)?], x: x0 })
    }

    fn measure(&mut self) -> [StateVec; 2] {
        [self.sensors[X].measure(&self.x[X]), self.sensors[Y].measure(&self.x[Y])]
    }

    /// Advances both planes; a plant that leaves its envelope yields the abort record.
    fn step(&mut self, t: f64, u: [f64; 2]) -> Result<Option<AbortInfo>> {
        let mut next = self.x;
        for i in [X, Y] {
            match self.plant.step(t, &self.x[i], u[i]) {
                Ok(s) => next[i] = s,
                Err(e @ (Error::PlantFellOver { .. } | Error::PlantBlowUp { .. })) => {
                    let time_s = match e {
                        Error::PlantFellOver { time, .. } => time,
                        _ => t + self.plant.dt(),
                    };
                    return Ok(Some(AbortInfo {
                        time_s,
                        reason: e.to_string(),
                        state: self.x.map(StateVec::to_array),
                    }));
                }
                Err(e) => return Err(e),
            }
        }
        self.x = next;
        Ok(None)
    }
}

fn finish(mut s: RunSummary, abort: Option<AbortInfo>) -> RunSummary {
    if abort.is_some() {
        s.status = RunStatus::Aborted;
        s.message = abort.as_ref().map(|a| a.reason.clone());
    }
    s.abort = abort;
    s
}

fn max_abs(rows: &[TelemetryRow], f: impl Fn(&TelemetryRow) -> f64) -> f64 {
    rows.iter().map(|r| f(r).abs()).fold(0.0, f64::max)
}

/// Time of the first row after which `inside` holds to the end of the record.
fn settling_time(rows: &[TelemetryRow], inside: impl Fn(&TelemetryRow) -> bool) -> Option<f64> {
    match rows.iter().rposition(|r| !inside(r)) {
        None => rows.first().map(|r| r.t),
        Some(i) => rows.get(i + 1).map(|r| r.t),
    }
}

/// PID double loop on both planes from the configured initial tilt.
pub fn run_balance(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    guarded(cfg, "balance", || {
        let ts = cfg.run.ts_inner;
        let n = ticks(cfg, DEFAULT_BALANCE_DURATION_S);
        let mut rig = Rig::new(cfg, tilted(cfg.initial.balance_theta0))?;
        let mut pid = [PidState::default(); 2];
        let mut rows = Vec::with_capacity(n);
        let mut abort = None;
        for k in 0..n {
            let t = k as f64 * ts;
            let meas = rig.measure();
            let mut row = TelemetryRow { t, ..Default::default() };
            let mut u = [0.0; 2];
            for i in [X, Y] {
                let ydot_ref = outer_reference(&cfg.gains, &meas[i]);
                u[i] = pid[i].step(ydot_ref - meas[i].ydot, &cfg.gains.pid, ts);
                row.planes[i] = PlaneSample { truth: rig.x[i], meas: meas[i], ydot_ref, u: u[i], u_lqr: 0.0 };
            }
            row.wheels = mix_to_wheels(u[X], u[Y], 0.0);
            rows.push(row);
            abort = rig.step(t, u)?;
            if abort.is_some() {
                break;
            }
        }
        let in_band = |r: &TelemetryRow| r.planes.iter().all(|p| p.truth.theta.abs() < BALANCE_BAND_DEG);
        let late: Vec<&TelemetryRow> = rows.iter().filter(|r| r.t >= BALANCE_CHECK_AFTER_S).collect();
        let mut s = summary(cfg, "balance");
        s.metrics = Metrics {
            balanced: Some(abort.is_none() && !late.is_empty() && late.iter().all(|r| in_band(r)) && rig.x.iter().all(|x| x.theta.abs() < BALANCE_BAND_DEG)),
            settling_time_s: if abort.is_none() { settling_time(&rows, in_band) } else { None },
            max_abs_theta_deg: Some(max_abs(&rows, |r| r.planes[X].truth.theta.abs().max(r.planes[Y].truth.theta.abs()))),
            final_position_cm: Some([rig.x[X].y, rig.x[Y].y]),
            ..Default::default()
        };
        Ok(RunOutput { telemetry: rows, summary: finish(s, abort) })
    })
}

/// Closed-loop record of the identification experiment.
struct IdRecord {
    rows: Vec<TelemetryRow>,
    data: IdDataset,
    abort: Option<AbortInfo>,
}

/// P-only double loop on both planes with the excitation added to the y-plane speed error.
fn record_identification(cfg: &ExperimentConfig, excitation: &MultisineSpec, n: usize) -> Result<IdRecord> {
    let ts = cfg.run.ts_inner;
    let g = &cfg.gains;
    let mut rig = Rig::new(cfg, [StateVec::ZERO; 2])?;
    let mut rows = Vec::with_capacity(n);
    let mut data = IdDataset { ts, y: Some(Vec::with_capacity(n)), ..Default::default() };
    let mut abort = None;
    for k in 0..n {
        let t = k as f64 * ts;
        let meas = rig.measure();
        let d = d_at(excitation, t);
        let mut row = TelemetryRow { t, d, ..Default::default() };
        let mut u = [0.0; 2];
        for i in [X, Y] {
            let ydot_ref = outer_reference(g, &meas[i]);
            let inject = if i == Y { d } else { 0.0 };
            u[i] = p_step(g.kp, ydot_ref - meas[i].ydot + inject);
            row.planes[i] = PlaneSample { truth: rig.x[i], meas: meas[i], ydot_ref, u: u[i], u_lqr: 0.0 };
        }
        row.wheels = mix_to_wheels(u[X], u[Y], 0.0);
        rows.push(row);
        let m = meas[Y];
        data.d.push(d);
        data.theta.push(m.theta);
        data.ydot.push(m.ydot);
        data.thetadot.push(m.thetadot);
        data.y.as_mut().expect("position channel allocated").push(m.y);
        abort = rig.step(t, u)?;
        if abort.is_some() {
            break;
        }
    }
    Ok(IdRecord { rows, data, abort })
}

/// Largest true y-plane tilt (deg) during an identification record excited with
/// scale `alpha`; infinite when the plant falls over.
pub fn excitation_peak_tilt(cfg: &ExperimentConfig, alpha: f64) -> Result<f64> {
    cfg.validate()?;
    let rec = record_identification(cfg, &cfg.excitation.scaled(alpha), ticks(cfg, DEFAULT_IDENTIFY_DURATION_S))?;
    if rec.abort.is_some() {
        return Ok(f64::INFINITY);
    }
    Ok(max_abs(&rec.rows, |r| r.planes[Y].truth.theta))
}

/// Over-excitation limit: the largest scale whose record keeps the y-plane tilt
/// at or below `theta_limit_deg`, found by bracketing and bisection to a
/// relative width of `rel_tol`. Returns `(alpha, peak tilt at alpha)`.
pub fn max_safe_alpha(cfg: &ExperimentConfig, theta_limit_deg: f64, rel_tol: f64) -> Result<(f64, f64)> {
    if !(theta_limit_deg > 0.0 && rel_tol > 0.0) {
        return Err(Error::Config("tilt limit and tolerance must be positive".into()));
    }
    let mut lo = (0.0, 0.0);
    let mut hi = 1.0;
    loop {
        let peak = excitation_peak_tilt(cfg, hi)?;
        if peak > theta_limit_deg {
            break;
        }
        lo = (hi, peak);
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Config("excitation never reaches the tilt limit".into()));
        }
    }
    while hi - lo.0 > rel_tol * hi {
        let mid = 0.5 * (lo.0 + hi);
        let peak = excitation_peak_tilt(cfg, mid)?;
        if peak <= theta_limit_deg {
            lo = (mid, peak);
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Identification experiment: record, split into fit and holdout halves,
/// identify, validate, and rebuild the open-loop model.
pub fn run_identify(cfg: &ExperimentConfig) -> Result<IdentifyOutput> {
    cfg.validate()?;
    let truth = cfg.truth_model()?;
    let guess = cfg.id.initial_guess.unwrap_or_else(|| truth.p.map(|v| v * DEFAULT_GUESS_FACTOR));
    cfg.id.validate(&guess)?;
    let rec = record_identification(cfg, &cfg.excitation, ticks(cfg, DEFAULT_IDENTIFY_DURATION_S))?;
    let mut s = summary(cfg, "identify");
    s.metrics.excitation_alpha = Some(cfg.excitation.alpha_scale);
    s.metrics.max_abs_theta_deg = Some(max_abs(&rec.rows, |r| r.planes[Y].truth.theta));
    if rec.abort.is_some() {
        return Ok(IdentifyOutput { run: RunOutput { telemetry: rec.rows, summary: finish(s, rec.abort) }, result: None, model: None });
    }

    let fitted = (|| -> Result<(IdResult, [f64; 3], LinearParams)> {
        let (fit, hold) = rec.data.split_half();
        let res = identify(&fit, &cfg.gains, &cfg.id, &guess)?;
        let fits = validate(&res.p_hat, &hold, &cfg.gains)?;
        let model = open_loop_model(&res.p_hat, &cfg.gains, truth.r)?;
        Ok((res, fits, model))
    })();
    match fitted {
        Ok((res, fits, model)) => {
            s.metrics.fit_rates = Some(fits);
            s.metrics.p_hat = Some(res.p_hat);
            s.metrics.p_rel_error_pct = Some(std::array::from_fn(|i| 100.0 * (res.p_hat[i] - truth.p[i]).abs() / truth.p[i].abs()));
            s.metrics.id_converged = Some(res.converged);
            let model = IdentifiedModel { model, p_hat: res.p_hat, fit_rates: fits, seed: cfg.run.seed, config_hash: s.config_hash.clone() };
            Ok(IdentifyOutput { run: RunOutput { telemetry: rec.rows, summary: s }, result: Some(res), model: Some(model) })
        }
        Err(e @ Error::Config(_)) => Err(e),
        Err(e) => {
            s.status = RunStatus::Failed;
            s.message = Some(e.to_string());
            Ok(IdentifyOutput { run: RunOutput { telemetry: rec.rows, summary: s }, result: None, model: None })
        }
    }
}

fn lqr_for(cfg: &ExperimentConfig, model: &LinearParams) -> Result<(crate::numerics::DiscreteSS, LqrDesign)> {
    let sys = zoh_discretize(&build_linear_ss(model), cfg.run.ts_inner)?;
    let design = design_lqr(&sys, &cfg.lqr.q(), &cfg.lqr.r())?;
    Ok((sys, design))
}

/// LQR-only balance of both planes, designed on `model`, from the configured initial tilt.
pub fn run_lqr(cfg: &ExperimentConfig, model: &LinearParams) -> Result<RunOutput> {
    cfg.validate()?;
    guarded(cfg, "lqr", || {
        let ts = cfg.run.ts_inner;
        let (_, design) = lqr_for(cfg, model)?;
        let n = ticks(cfg, DEFAULT_LQR_DURATION_S);
        let mut rig = Rig::new(cfg, tilted(cfg.initial.lqr_theta0))?;
        let mut rows = Vec::with_capacity(n);
        let mut abort = None;
        for k in 0..n {
            let t = k as f64 * ts;
            let meas = rig.measure();
            let mut row = TelemetryRow { t, ..Default::default() };
            let mut u = [0.0; 2];
            for i in [X, Y] {
                u[i] = design.control(&meas[i]);
                row.planes[i] = PlaneSample { truth: rig.x[i], meas: meas[i], ydot_ref: 0.0, u: u[i], u_lqr: u[i] };
            }
            row.wheels = mix_to_wheels(u[X], u[Y], 0.0);
            rows.push(row);
            abort = rig.step(t, u)?;
            if abort.is_some() {
                break;
            }
        }
        let in_band = |r: &TelemetryRow| r.planes.iter().all(|p| p.truth.theta.abs() < LQR_SETTLE_BAND_DEG);
        let mut s = summary(cfg, "lqr");
        s.metrics = Metrics {
            settling_time_s: if abort.is_none() { settling_time(&rows, in_band) } else { None },
            max_abs_theta_deg: Some(max_abs(&rows, |r| r.planes[X].truth.theta.abs().max(r.planes[Y].truth.theta.abs()))),
            final_position_cm: Some([rig.x[X].y, rig.x[Y].y]),
            spectral_radius: Some(design.spectral_radius),
            dare_residual: Some(design.dare_residual),
            ..Default::default()
        };
        Ok(RunOutput { telemetry: rows, summary: finish(s, abort) })
    })
}

/// Reference tracking on the y plane (LQR plus filtered MPC correction) while
/// the x plane only balances under LQR.
pub fn run_track(cfg: &ExperimentConfig, model: &LinearParams) -> Result<RunOutput> {
    cfg.validate()?;
    guarded(cfg, "track", || {
        let ts = cfg.run.ts_inner;
        let m = cfg.mpc_ratio()?;
        let (sys, design) = lqr_for(cfg, model)?;
        let mut mpc = MpcController::new(build_predictor(&sys, &design.k, m)?, cfg.mpc.clone())?;
        let mut filter = cfg.run.filter_cutoff_hz.map(|fc| Biquad::butterworth_lowpass(fc, 1.0 / ts)).transpose()?;
        let n = ticks(cfg, DEFAULT_TRACK_DURATION_S);
        let mut rig = Rig::new(cfg, [StateVec::ZERO; 2])?;
        let mut rows = Vec::with_capacity(n);
        let mut abort = None;
        let (mut raw, mut pending) = (0.0, 0.0);
        let (mut infeasible, mut degraded) = (0, 0);
        let mut iterations = Vec::with_capacity(n / m + 1);
        for k in 0..n {
            let t = k as f64 * ts;
            let meas = rig.measure();
            if k % m == 0 {
                let out = mpc.step(&meas[Y], &reference_preview(&cfg.reference, t, &cfg.mpc))?;
                iterations.push(out.iterations);
                infeasible += out.infeasible as usize;
                degraded += out.degraded as usize;
                if cfg.run.latency_mpc_periods == 0 {
                    raw = out.u;
                } else {
                    raw = pending;
                    pending = out.u;
                }
            }
            let filt = filter.as_mut().map_or(raw, |f| f.step(raw));
            let u_lqr = [design.control(&meas[X]), design.control(&meas[Y])];
            let u = [u_lqr[X], u_lqr[Y] + filt];
            let mut row = TelemetryRow {
                t,
                u_mpc_raw: raw,
                u_mpc_filt: filt,
                y_ref: smooth_step(&cfg.reference, t).y,
                wheels: mix_to_wheels(u[X], u[Y], 0.0),
                ..Default::default()
            };
            for i in [X, Y] {
                row.planes[i] = PlaneSample { truth: rig.x[i], meas: meas[i], ydot_ref: 0.0, u: u[i], u_lqr: u_lqr[i] };
            }
            rows.push(row);
            abort = rig.step(t, u)?;
            if abort.is_some() {
                break;
            }
        }

        let target = cfg.reference.amplitude;
        let c = &cfg.mpc;
        let over = |v: f64, bound: f64| v.abs() > bound * (1.0 + VIOLATION_TOLERANCE);
        let violations = rows
            .iter()
            .filter(|r| {
                let x = r.planes[Y].truth;
                over(x.theta, c.theta_max) || over(x.ydot, c.ydot_max) || over(x.thetadot, c.thetadot_max) || over(r.u_mpc_raw, c.u_max)
            })
            .count();
        let window = (STEADY_STATE_WINDOW_S / ts).round().max(1.0) as usize;
        let tail = &rows[rows.len().saturating_sub(window)..];
        let mean_tail = tail.iter().map(|r| r.planes[Y].truth.y).sum::<f64>() / tail.len().max(1) as f64;
        let settle = settling_time(&rows, |r| (r.planes[Y].truth.y - target).abs() < TRACK_SETTLE_BAND_CM);
        let mut s = summary(cfg, "track");
        s.metrics = Metrics {
            settling_time_s: if abort.is_none() { settle.map(|t| (t - cfg.reference.t0).max(0.0)) } else { None },
            steady_state_error_cm: (!tail.is_empty()).then(|| (mean_tail - target).abs()),
            max_abs_theta_deg: Some(max_abs(&rows, |r| r.planes[Y].truth.theta)),
            max_abs_ydot_cm_s: Some(max_abs(&rows, |r| r.planes[Y].truth.ydot)),
            max_abs_thetadot_deg_s: Some(max_abs(&rows, |r| r.planes[Y].truth.thetadot)),
            max_abs_u_mpc: Some(max_abs(&rows, |r| r.u_mpc_raw)),
            final_position_cm: Some([rig.x[X].y, rig.x[Y].y]),
            constraint_violations: Some(violations),
            infeasible_events: Some(infeasible),
            degraded_solves: Some(degraded),
            solver_iterations: Some(IterationStats::from_counts(&iterations)),
            tracking_cost: Some(rows.iter().map(|r| (r.planes[Y].truth.y - r.y_ref).powi(2) * ts).sum()),
            spectral_radius: Some(design.spectral_radius),
            ..Default::default()
        };
        Ok(RunOutput { telemetry: rows, summary: finish(s, abort) })
    })
}

fn missing_model(cfg: &ExperimentConfig, name: &str) -> RunOutput {
    let mut s = summary(cfg, name);
    s.status = RunStatus::Failed;
    s.message = Some("no identified model available".into());
    RunOutput { telemetry: Vec::new(), summary: s }
}

/// Balance, identify, LQR, track; the last two are designed on the identified
/// model unless `run.use_truth` is set.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let balance = run_balance(cfg)?;
    let identify = run_identify(cfg)?;
    let model = if cfg.run.use_truth { Some(cfg.truth_model()?) } else { identify.model.as_ref().map(|m| m.model) };
    let (lqr, track) = match model {
        Some(model) => (run_lqr(cfg, &model)?, run_track(cfg, &model)?),
        None => (missing_model(cfg, "lqr"), missing_model(cfg, "track")),
    };
    Ok(PipelineOutput { balance, identify, lqr, track })
}
