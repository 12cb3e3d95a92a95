//! The AMP iteration.
//!
//! State at iteration `t` holds the estimate `x^t`, the residual `r^t` and
//! `tau_t^2 = ||r^t||^2 / M`. One step computes
//!
//! ```text
//! v^t     = x^t + C^T r^t
//! x^{t+1} = eta(v^t; tau_t^2)
//! r^{t+1} = y - C x^{t+1} + (N / M) div(eta)(v^t; tau_t^2) r^t
//! ```
//!
//! starting from `x^0 = 0`, `r^0 = y`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::denoise::Denoise;
use crate::error::{Error, Result};
use crate::model::{decode_hard, MessageVector, Observation, SensingOperator, SystemConfig};
use crate::se::mue;

/// Stopping control for [`run_amp`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AmpRunConfig {
    pub max_iterations: usize,
    /// Stop once `|tau_{t+1}^2 - tau_t^2| / tau_t^2` drops below this.
    pub convergence_tol: f64,
    pub record_trajectory: bool,
    /// When false the run always performs `max_iterations` steps.
    pub stop_on_convergence: bool,
    /// Ablation hook: with `false` the Onsager term is dropped and the
    /// iteration reduces to plain iterative thresholding.
    pub onsager: bool,
}

impl Default for AmpRunConfig {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            convergence_tol: 1e-6,
            record_trajectory: false,
            stop_on_convergence: true,
            onsager: true,
        }
    }
}

impl AmpRunConfig {
    pub fn new(max_iterations: usize, convergence_tol: f64, record_trajectory: bool) -> Result<Self> {
        let cfg = Self { max_iterations, convergence_tol, record_trajectory, ..Self::default() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be >= 1".into()));
        }
        if !(self.convergence_tol.is_finite() && self.convergence_tol > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "convergence_tol must be positive, got {}",
                self.convergence_tol
            )));
        }
        Ok(())
    }
}

/// Decoder state after `iteration` steps.
#[derive(Debug, Clone)]
pub struct AmpState {
    pub estimate: Vec<f64>,
    pub residual: Vec<f64>,
    /// `v^{t-1}`, the input that produced `estimate`. Empty at `t = 0`.
    pub pseudo_observation: Vec<f64>,
    /// Variance that was handed to the denoiser together with
    /// `pseudo_observation`.
    pub pseudo_tau2: f64,
    /// `tau_t^2 = ||r^t||^2 / M`.
    pub tau2: f64,
    /// Divergence used in the last Onsager term.
    pub divergence: f64,
    pub iteration: usize,
    /// `C^T r^t`, carried into the next step. Empty until first computed.
    pub correlation: Vec<f64>,
}

impl AmpState {
    /// `x^0 = 0`, `r^0 = y`.
    pub fn initial(y: &[f64], n: usize) -> Result<Self> {
        Ok(Self {
            estimate: vec![0.0; n],
            residual: y.to_vec(),
            pseudo_observation: Vec::new(),
            pseudo_tau2: f64::NAN,
            tau2: estimate_effective_noise(y)?,
            divergence: 0.0,
            iteration: 0,
            correlation: Vec::new(),
        })
    }
}

/// `||r||^2 / M`.
pub fn estimate_effective_noise(r: &[f64]) -> Result<f64> {
    if r.is_empty() {
        return Err(Error::DimensionMismatch { what: "residual", expected: 1, found: 0 });
    }
    Ok(r.iter().map(|x| x * x).sum::<f64>() / r.len() as f64)
}

fn check_dims(c: &dyn SensingOperator, y: &Observation, d: &dyn Denoise, cfg: &SystemConfig) -> Result<()> {
    if c.rows() != cfg.m() {
        return Err(Error::DimensionMismatch { what: "sensing matrix rows", expected: cfg.m(), found: c.rows() });
    }
    if c.cols() != cfg.n() {
        return Err(Error::DimensionMismatch { what: "sensing matrix columns", expected: cfg.n(), found: c.cols() });
    }
    if y.y.len() != cfg.m() {
        return Err(Error::DimensionMismatch { what: "observation length", expected: cfg.m(), found: y.y.len() });
    }
    if !cfg.n().is_multiple_of(d.block_len()) {
        return Err(Error::DimensionMismatch {
            what: "denoiser block length",
            expected: cfg.block_len(),
            found: d.block_len(),
        });
    }
    Ok(())
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn step(state: &AmpState, c: &dyn SensingOperator, y: &[f64], d: &dyn Denoise, onsager: bool) -> Result<AmpState> {
    let (m, n) = (c.rows(), c.cols());
    let next_t = state.iteration + 1;
    let diverged = || Error::NumericalDivergence { iteration: next_t };

    let mut v = if state.correlation.len() == n {
        state.correlation.clone()
    } else {
        let mut g = vec![0.0; n];
        c.apply_transpose(&state.residual, &mut g);
        g
    };
    for (vi, xi) in v.iter_mut().zip(&state.estimate) {
        *vi += xi;
    }
    if !all_finite(&v) {
        return Err(diverged());
    }

    let mut estimate = vec![0.0; n];
    d.apply(&v, state.tau2, &mut estimate)?;
    let divergence = if onsager { d.divergence(&v, state.tau2)? } else { 0.0 };

    let mut residual = vec![0.0; m];
    let mut correlation = vec![0.0; n];
    let memory = n as f64 / m as f64 * divergence;
    c.residual_and_correlation(&estimate, y, memory, &state.residual, &mut residual, &mut correlation);
    let tau2 = estimate_effective_noise(&residual)?;
    if !(all_finite(&estimate) && tau2.is_finite()) {
        return Err(diverged());
    }
    Ok(AmpState {
        estimate,
        residual,
        pseudo_observation: v,
        pseudo_tau2: state.tau2,
        tau2,
        divergence,
        iteration: next_t,
        correlation,
    })
}

/// One AMP iteration with the Onsager correction.
pub fn amp_step(
    state: &AmpState,
    c: &dyn SensingOperator,
    y: &Observation,
    d: &dyn Denoise,
    cfg: &SystemConfig,
) -> Result<AmpState> {
    check_dims(c, y, d, cfg)?;
    step(state, c, &y.y, d, true)
}

/// Per-iteration record. Entry `t` describes `x^t` and `r^t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: usize,
    pub tau2_hat: f64,
    /// `(1/N) ||x^t - x||^2`, when the truth is known.
    pub mse: Option<f64>,
    /// `(1/N) sum |x^t_i - x_i|`, when the truth is known.
    pub mae: Option<f64>,
    /// `sigma_w^2 / tau_t^2`, clamped to 1.
    pub mue_hat: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AmpTrajectory {
    pub points: Vec<TrajectoryPoint>,
}

impl AmpTrajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn tau2(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.tau2_hat).collect()
    }

    pub fn mue(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.mue_hat).collect()
    }

    /// CSV rows `trial_id,t,tau2_hat,mse,mue_hat`; `mse` is empty when the
    /// truth was withheld.
    pub fn write_csv<W: Write>(&self, w: W, trial_id: &str, header: bool) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        if header {
            out.write_record(["trial_id", "t", "tau2_hat", "mse", "mue_hat"])?;
        }
        for p in &self.points {
            out.write_record([
                trial_id.to_string(),
                p.t.to_string(),
                p.tau2_hat.to_string(),
                p.mse.map(|v| v.to_string()).unwrap_or_default(),
                p.mue_hat.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn record(state: &AmpState, truth: Option<&[f64]>, noise_var: f64) -> TrajectoryPoint {
    let (mse, mae) = match truth {
        Some(x) => {
            let n = x.len() as f64;
            let (sq, abs) = state.estimate.iter().zip(x).fold((0.0, 0.0), |(sq, abs), (a, b)| {
                let e = a - b;
                (sq + e * e, abs + e.abs())
            });
            (Some(sq / n), Some(abs / n))
        }
        None => (None, None),
    };
    TrajectoryPoint { t: state.iteration, tau2_hat: state.tau2, mse, mae, mue_hat: mue(noise_var, state.tau2).value }
}

/// Result of a full decoder run.
#[derive(Debug, Clone)]
pub struct AmpOutput {
    pub estimate: Vec<f64>,
    pub trajectory: AmpTrajectory,
    pub messages: MessageVector,
    pub iterations: usize,
    pub converged: bool,
    pub final_state: AmpState,
}

/// Iterates [`amp_step`] until the relative change of `tau^2` falls below
/// the tolerance or `max_iterations` steps have run, then hard-decodes.
pub fn run_amp(
    y: &Observation,
    c: &dyn SensingOperator,
    d: &dyn Denoise,
    cfg: &SystemConfig,
    run_cfg: &AmpRunConfig,
) -> Result<AmpOutput> {
    run_cfg.validate()?;
    check_dims(c, y, d, cfg)?;
    let truth = y.truth.as_ref().map(|x| x.values());
    let mut state = AmpState::initial(&y.y, cfg.n())?;
    let mut trajectory = AmpTrajectory::default();
    if run_cfg.record_trajectory {
        trajectory.points.push(record(&state, truth, cfg.noise_var));
    }
    let mut converged = false;
    while state.iteration < run_cfg.max_iterations {
        if state.tau2 == 0.0 {
            // exact fit, nothing left to denoise
            converged = true;
            break;
        }
        let next = step(&state, c, &y.y, d, run_cfg.onsager)?;
        let change = (next.tau2 - state.tau2).abs() / state.tau2;
        state = next;
        if run_cfg.record_trajectory {
            trajectory.points.push(record(&state, truth, cfg.noise_var));
        }
        if change < run_cfg.convergence_tol {
            converged = true;
            if run_cfg.stop_on_convergence {
                break;
            }
        }
    }
    Ok(AmpOutput {
        messages: decode_hard(&state.estimate, cfg),
        estimate: state.estimate.clone(),
        trajectory,
        iterations: state.iteration,
        converged,
        final_state: state,
    })
}

/// Gaussianity check of `v^t - x` against `N(0, tau^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecouplingReport {
    /// Sample variance of `v - x` divided by `tau^2`.
    pub variance_ratio: f64,
    /// Kolmogorov-Smirnov distance to `N(0, tau^2)`.
    pub ks_statistic: f64,
    /// 1% critical value of the KS statistic at this sample size.
    pub ks_critical_1pct: f64,
    /// Set when the residual has zero spread or `tau^2` is not positive.
    pub degenerate: bool,
    pub samples: usize,
}

impl DecouplingReport {
    pub fn ks_passes(&self) -> bool {
        !self.degenerate && self.ks_statistic < self.ks_critical_1pct
    }
}

/// Asymptotic 1% critical value of the one-sample KS statistic with
/// Stephens' finite-sample correction.
pub fn ks_critical_1pct(samples: usize) -> f64 {
    let sqrt_n = (samples as f64).sqrt();
    1.628 / (sqrt_n + 0.12 + 0.11 / sqrt_n)
}

fn standard_normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

pub fn decoupling_diagnostic(v: &[f64], x_true: &[f64], tau2: f64) -> DecouplingReport {
    assert_eq!(v.len(), x_true.len());
    let n = v.len();
    let critical = ks_critical_1pct(n.max(1));
    let mut e: Vec<f64> = v.iter().zip(x_true).map(|(a, b)| a - b).collect();
    if n < 2 {
        return DecouplingReport {
            variance_ratio: 0.0,
            ks_statistic: 1.0,
            ks_critical_1pct: critical,
            degenerate: true,
            samples: n,
        };
    }
    let mean = e.iter().sum::<f64>() / n as f64;
    let var = e.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 || !(tau2 > 0.0) {
        return DecouplingReport {
            variance_ratio: if tau2 > 0.0 { 0.0 } else { f64::NAN },
            ks_statistic: 1.0,
            ks_critical_1pct: critical,
            degenerate: true,
            samples: n,
        };
    }
    let sd = tau2.sqrt();
    e.sort_by(f64::total_cmp);
    let nf = n as f64;
    let ks = e
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = standard_normal_cdf(x / sd);
            (f - i as f64 / nf).max((i + 1) as f64 / nf - f)
        })
        .fold(0.0, f64::max);
    DecouplingReport {
        variance_ratio: var / tau2,
        ks_statistic: ks,
        ks_critical_1pct: critical,
        degenerate: false,
        samples: n,
    }
}
