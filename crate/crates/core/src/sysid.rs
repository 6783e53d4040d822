//! Indirect closed-loop gray-box identification.
//!
//! The balancing loop is known, so the model fitted to the excitation-to-state
//! response is the closed loop parameterized by the eight open-loop constants.
//! Only the excitation drives the simulation; measured states never feed back
//! into the prediction, which keeps the estimate free of noise/input correlation.

use crate::error::{Error, Result};
use crate::numerics::{nrmse_fit, ContinuousSS, Matrix};
use crate::plant::LinearParams;
use crate::stabilizer::{reduced_closed_loop, sampled_closed_loop, FeedbackGains};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Smallest record the identification accepts.
pub const MIN_SAMPLES: usize = 1000;

/// Logged closed-loop experiment sampled every `ts`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IdDataset {
    pub ts: f64,
    pub d: Vec<f64>,
    pub theta: Vec<f64>,
    pub ydot: Vec<f64>,
    pub thetadot: Vec<f64>,
    pub y: Option<Vec<f64>>,
}

impl IdDataset {
    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.d.len();
        if [self.theta.len(), self.ydot.len(), self.thetadot.len()].iter().any(|&l| l != n) {
            return Err(Error::Dimension("dataset channels must have equal lengths".into()));
        }
        if n < MIN_SAMPLES {
            return Err(Error::Dimension(format!("dataset needs at least {MIN_SAMPLES} samples, got {n}")));
        }
        if !(self.ts > 0.0) {
            return Err(Error::Config(format!("dataset sample time must be positive, got {}", self.ts)));
        }
        Ok(())
    }

    pub fn channels(&self) -> [&[f64]; 3] {
        [&self.theta, &self.ydot, &self.thetadot]
    }

    /// First half for fitting, second half for validation.
    pub fn split_half(&self) -> (IdDataset, IdDataset) {
        let h = self.len() / 2;
        let part = |r: std::ops::Range<usize>| IdDataset {
            ts: self.ts,
            d: self.d[r.clone()].to_vec(),
            theta: self.theta[r.clone()].to_vec(),
            ydot: self.ydot[r.clone()].to_vec(),
            thetadot: self.thetadot[r.clone()].to_vec(),
            y: self.y.as_ref().map(|y| y[r].to_vec()),
        };
        (part(0..h), part(h..self.len()))
    }

    fn initial_state(&self) -> [f64; 3] {
        [self.theta[0], self.ydot[0], self.thetadot[0]]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdConfig {
    /// Starting point; `None` lets the caller supply a prior.
    pub initial_guess: Option<[f64; 8]>,
    pub multistart_count: usize,
    pub lm_lambda0: f64,
    pub lm_tolerance: f64,
    pub max_iterations: usize,
    /// Per-parameter `[lower, upper]` box; `None` means unbounded.
    pub parameter_bounds: Option<[[f64; 2]; 8]>,
    pub seed: u64,
}

impl Default for IdConfig {
    fn default() -> Self {
        Self {
            initial_guess: None,
            multistart_count: 4,
            lm_lambda0: 1e-3,
            lm_tolerance: 1e-10,
            max_iterations: 500,
            parameter_bounds: None,
            seed: 7,
        }
    }
}

impl IdConfig {
    pub fn validate(&self, guess: &[f64; 8]) -> Result<()> {
        if self.multistart_count == 0 {
            return Err(Error::Config("multistart_count must be at least 1".into()));
        }
        if !(self.lm_lambda0 > 0.0 && self.lm_tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::Config("LM settings must be positive".into()));
        }
        if let Some(bounds) = &self.parameter_bounds {
            for (i, (b, g)) in bounds.iter().zip(guess).enumerate() {
                if !(b[0] <= *g && *g <= b[1]) {
                    return Err(Error::Config(format!("initial guess p{} = {g} lies outside its bounds {b:?}", i + 1)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartReport {
    pub start: [f64; 8],
    pub p: [f64; 8],
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdResult {
    pub p_hat: [f64; 8],
    /// Fit (%) for theta, ydot, thetadot.
    pub fit_rates: [f64; 3],
    pub final_cost: f64,
    pub converged: bool,
    pub iterations: usize,
    pub best_start: usize,
    pub starts: Vec<StartReport>,
}

/// Predicted `(theta, ydot, thetadot)` of the sampled closed loop driven by `d`
/// from `x0`. `None` when the candidate diverges.
pub fn simulate_syscl(p: &[f64; 8], g: &FeedbackGains, d: &[f64], ts: f64, x0: [f64; 3]) -> Result<Option<[Vec<f64>; 3]>> {
    let lp = LinearParams { p: *p, r: f64::NAN };
    if p.iter().any(|v| !v.is_finite()) {
        return Ok(None);
    }
    let cl = match sampled_closed_loop(&lp, g, ts) {
        Ok(cl) => cl,
        Err(Error::NumericalDomain(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let a = &cl.a;
    let b = &cl.b;
    let mut out = [Vec::with_capacity(d.len()), Vec::with_capacity(d.len()), Vec::with_capacity(d.len())];
    let mut x = x0;
    for &dk in d {
        for (o, v) in out.iter_mut().zip(x) {
            o.push(v);
        }
        let next: [f64; 3] = std::array::from_fn(|i| a[(i, 0)] * x[0] + a[(i, 1)] * x[1] + a[(i, 2)] * x[2] + b[(i, 0)] * dk);
        if next.iter().any(|v| !v.is_finite() || v.abs() > 1e12) {
            return Ok(None);
        }
        x = next;
    }
    Ok(Some(out))
}

/// Per-channel `sqrt(N * sample variance)`; residuals divided by these sum to the cost.
fn channel_scales(data: &IdDataset) -> Result<[f64; 3]> {
    let mut out = [0.0; 3];
    for (o, ch) in out.iter_mut().zip(data.channels()) {
        let n = ch.len() as f64;
        let mean = ch.iter().sum::<f64>() / n;
        let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        if !(var > 0.0) {
            return Err(Error::UndefinedFit);
        }
        *o = (n * var).sqrt();
    }
    Ok(out)
}

/// Variance-normalized residuals, or `None` for a divergent candidate.
fn residuals(p: &[f64; 8], data: &IdDataset, g: &FeedbackGains, scales: &[f64; 3]) -> Result<Option<DVector<f64>>> {
    let Some(pred) = simulate_syscl(p, g, &data.d, data.ts, data.initial_state())? else {
        return Ok(None);
    };
    let n = data.len();
    let mut r = DVector::zeros(3 * n);
    for (c, (meas, sim)) in data.channels().into_iter().zip(&pred).enumerate() {
        for k in 0..n {
            r[c * n + k] = (meas[k] - sim[k]) / scales[c];
        }
    }
    Ok(Some(r))
}

/// Sum over the three channels of the mean squared prediction error divided by
/// the channel's sample variance, so predicting each channel's mean costs
/// `3 (N - 1) / N`. `+inf` for a divergent candidate.
pub fn pe_cost(p: &[f64; 8], data: &IdDataset, g: &FeedbackGains) -> Result<f64> {
    let scales = channel_scales(data)?;
    Ok(residuals(p, data, g, &scales)?.map_or(f64::INFINITY, |r| r.norm_squared()))
}

fn clamp_to(p: &mut [f64; 8], bounds: &Option<[[f64; 2]; 8]>) {
    if let Some(b) = bounds {
        for (v, lim) in p.iter_mut().zip(b) {
            *v = v.clamp(lim[0], lim[1]);
        }
    }
}

fn jacobian(p: &[f64; 8], r0: &DVector<f64>, data: &IdDataset, g: &FeedbackGains, scales: &[f64; 3]) -> Result<Option<DMatrix<f64>>> {
    let mut j = DMatrix::zeros(r0.len(), 8);
    for i in 0..8 {
        let h = 1e-6 * p[i].abs().max(1e-6);
        let mut q = *p;
        q[i] += h;
        let Some(ri) = residuals(&q, data, g, scales)? else {
            return Ok(None);
        };
        j.set_column(i, &((ri - r0) / h));
    }
    Ok(Some(j))
}

fn levenberg_marquardt(start: [f64; 8], data: &IdDataset, g: &FeedbackGains, cfg: &IdConfig, scales: &[f64; 3]) -> Result<StartReport> {
    let mut p = start;
    clamp_to(&mut p, &cfg.parameter_bounds);
    let diverged = |p| StartReport { start, p, cost: f64::INFINITY, iterations: 0, converged: false };
    let Some(mut r) = residuals(&p, data, g, scales)? else {
        return Ok(diverged(p));
    };
    let mut cost = r.norm_squared();
    let mut lambda = cfg.lm_lambda0;
    let mut converged = false;
    let mut iterations = 0;
    'outer: while iterations < cfg.max_iterations {
        iterations += 1;
        let Some(j) = jacobian(&p, &r, data, g, scales)? else {
            break;
        };
        let jtj = j.transpose() * &j;
        let jtr = j.transpose() * &r;
        loop {
            let mut lhs = jtj.clone();
            for i in 0..8 {
                lhs[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = lhs.cholesky().map(|c| c.solve(&(-&jtr))) else {
                lambda *= 10.0;
                if lambda > 1e16 {
                    break 'outer;
                }
                continue;
            };
            let mut trial: [f64; 8] = std::array::from_fn(|i| p[i] + step[i]);
            clamp_to(&mut trial, &cfg.parameter_bounds);
            let trial_r = residuals(&trial, data, g, scales)?;
            let trial_cost = trial_r.as_ref().map_or(f64::INFINITY, |r| r.norm_squared());
            if trial_cost < cost {
                let decrease = (cost - trial_cost) / cost.max(f64::MIN_POSITIVE);
                p = trial;
                r = trial_r.expect("finite cost implies residuals");
                cost = trial_cost;
                lambda = (lambda / 10.0).max(1e-15);
                if decrease < cfg.lm_tolerance || cost == 0.0 {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                // No descent direction left at working precision: a stationary point.
                converged = true;
                break 'outer;
            }
        }
    }
    Ok(StartReport { start, p, cost, iterations, converged })
}

/// Starting points: the guess itself, then guesses scaled per parameter by a
/// log-uniform factor in `[0.5, 1.5]`.
pub fn multistart_points(guess: &[f64; 8], count: usize, seed: u64) -> Vec<[f64; 8]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (0.5f64.ln(), 1.5f64.ln());
    let mut starts = vec![*guess];
    while starts.len() < count {
        starts.push(std::array::from_fn(|i| guess[i] * rng.random_range(lo..hi).exp()));
    }
    starts
}

/// Prediction-error fit of the eight constants on `data`. Fit rates in the
/// result are measured on `data` itself; use `validate` for a holdout.
pub fn identify(data: &IdDataset, g: &FeedbackGains, cfg: &IdConfig, guess: &[f64; 8]) -> Result<IdResult> {
    data.validate()?;
    cfg.validate(guess)?;
    if g.kp == 0.0 {
        return Err(Error::NonInvertibleLoop);
    }
    let scales = channel_scales(data)?;
    let starts = multistart_points(guess, cfg.multistart_count, cfg.seed);
    let reports: Vec<StartReport> = starts
        .par_iter()
        .map(|s| levenberg_marquardt(*s, data, g, cfg, &scales))
        .collect::<Result<_>>()?;
    // Lowest cost wins; ties go to the lowest start index.
    let (best, report) = reports
        .iter()
        .enumerate()
        .filter(|(_, r)| r.cost.is_finite())
        .min_by(|a, b| a.1.cost.total_cmp(&b.1.cost).then(a.0.cmp(&b.0)))
        .ok_or_else(|| {
            Error::IdentificationFailed(format!("all {} starts diverged; starts: {:?}", reports.len(), starts))
        })?;
    let fit_rates = fit_rates(&report.p, data, g)?;
    Ok(IdResult {
        p_hat: report.p,
        fit_rates,
        final_cost: report.cost,
        converged: report.converged,
        iterations: report.iterations,
        best_start: best,
        starts: reports.clone(),
    })
}

fn fit_rates(p: &[f64; 8], data: &IdDataset, g: &FeedbackGains) -> Result<[f64; 3]> {
    let pred = simulate_syscl(p, g, &data.d, data.ts, data.initial_state())?
        .ok_or_else(|| Error::IdentificationFailed("model diverges on the validation record".into()))?;
    let ch = data.channels();
    Ok([nrmse_fit(ch[0], &pred[0])?, nrmse_fit(ch[1], &pred[1])?, nrmse_fit(ch[2], &pred[2])?])
}

/// Fit rates (%) of the model `p` on a holdout record, per channel `(theta, ydot, thetadot)`.
pub fn validate(p: &[f64; 8], holdout: &IdDataset, g: &FeedbackGains) -> Result<[f64; 3]> {
    holdout.validate()?;
    fit_rates(p, holdout, g)
}

/// Recovers the open-loop model from a closed loop `x' = A_cl x + B_cl d`
/// built with the inner P gain and the outer feedback: `B = B_cl / kp`,
/// `A = A_cl - B_cl F`. Works on the full 4-state or the reduced 3-state form.
pub fn extract_open_loop(cl: &ContinuousSS, g: &FeedbackGains) -> Result<ContinuousSS> {
    if g.kp == 0.0 {
        return Err(Error::NonInvertibleLoop);
    }
    let f = g.error_feedback();
    let f = match cl.states() {
        4 => Matrix::from_row_slice(1, 4, &f),
        3 => Matrix::from_row_slice(1, 3, &f[1..]),
        n => return Err(Error::Dimension(format!("closed loop must have 3 or 4 states, got {n}"))),
    };
    let a = &cl.a - &cl.b * f;
    let b = &cl.b / g.kp;
    ContinuousSS::new(a, b)
}

/// Re-inserts the ball position in front of the reduced `(theta, ydot, thetadot)`
/// states with `dy/dt = ydot`.
pub fn augment_position(sys: &ContinuousSS) -> Result<ContinuousSS> {
    if sys.states() != 3 {
        return Err(Error::Dimension(format!("augmentation expects 3 states, got {}", sys.states())));
    }
    let mut a = Matrix::zeros(4, 4);
    a.view_mut((1, 1), (3, 3)).copy_from(&sys.a);
    a[(0, 2)] = 1.0;
    let mut b = Matrix::zeros(4, sys.inputs());
    b.rows_mut(1, 3).copy_from(&sys.b);
    ContinuousSS::new(a, b)
}

/// Identified constants to the full 4-state open-loop model via the closed
/// loop: compose, extract, augment.
pub fn open_loop_model(p: &[f64; 8], g: &FeedbackGains, r: f64) -> Result<LinearParams> {
    let cl = reduced_closed_loop(&LinearParams { p: *p, r }, g)?;
    let open = augment_position(&extract_open_loop(&cl, g)?)?;
    Ok(LinearParams::from_matrices(&open.a, &open.b, r))
}
