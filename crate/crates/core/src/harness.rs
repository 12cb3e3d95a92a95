//! Monte Carlo experiments: trials, BLER sweeps, rate search and MUE
//! trajectories.
//!
//! Every random quantity of trial `i` is drawn from a seed derived from
//! `(master_seed, i, stream)`. The same trial index therefore sees the same
//! codebook, messages and noise under every decoder and at every grid point.
//! Trials run in fixed-size batches on a worker pool and are reduced in index
//! order, so results do not depend on the number of threads.

use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amp::{run_amp, AmpRunConfig, AmpTrajectory};
use crate::denoise::{DecoderKind, Denoise, Denoiser, PriorSpec, DEFAULT_SOFT_ALPHA};
use crate::error::{Error, Result};
use crate::model::{
    block_errors, channel, encode, power_for_ebn0_db, ImplicitSensingMatrix, MessageVector, SensingMatrix,
    SensingOperator, SystemConfig, DEFAULT_MEMORY_BUDGET,
};
use crate::rng::{derive_seed, Stream};
use crate::se::{run_se_with, QuadratureSpec};
use crate::stats::{mean_std, wilson95};

/// Monte Carlo samples per block state-evolution step.
const BLOCK_SE_SAMPLES: usize = 20_000;

/// Parameters shared by every grid point. Sweeps override `ebn0_db` and
/// `rate` where they define a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemTemplate {
    pub devices: usize,
    pub bits: u32,
    /// Target spectral efficiency; `n = round(K / R)`.
    pub rate: f64,
    pub ebn0_db: f64,
    #[serde(default = "unit")]
    pub noise_var: f64,
}

fn unit() -> f64 {
    1.0
}

impl SystemTemplate {
    pub fn resolve(&self, ebn0_db: f64, rate: f64) -> Result<SystemConfig> {
        SystemConfig::from_rate(
            self.devices,
            self.bits,
            rate,
            power_for_ebn0_db(ebn0_db, self.bits, self.noise_var),
            self.noise_var,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum Sweep {
    /// BLER at each Eb/N0 (dB) at the template rate.
    EbN0Grid { ebn0_db: Vec<f64> },
    /// Largest rate in `rates` whose BLER upper confidence bound is at most
    /// `target_pe`, for each Eb/N0.
    RateSearch { target_pe: f64, ebn0_db: Vec<f64>, rates: Vec<f64> },
    /// Empirical and analytical MUE trajectories over `iterations` steps.
    Trajectory { ebn0_db: Vec<f64>, rates: Vec<f64>, iterations: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatrixPolicy {
    #[default]
    FreshPerTrial,
    FixedAcrossTrials,
}

/// How the codebook is held in memory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatrixStorage {
    #[default]
    Dense,
    /// Rows are regenerated from their seeds on every product. Same entries as
    /// `Dense`, O(N) memory, one normal draw per entry per product.
    Implicit,
}

fn default_alpha() -> f64 {
    DEFAULT_SOFT_ALPHA
}

fn default_budget() -> u64 {
    DEFAULT_MEMORY_BUDGET
}

/// A complete, reproducible experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub system: SystemTemplate,
    pub decoders: Vec<DecoderKind>,
    #[serde(default = "default_alpha")]
    pub soft_alpha: f64,
    pub sweep: Sweep,
    pub trials: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub matrix_policy: MatrixPolicy,
    #[serde(default)]
    pub storage: MatrixStorage,
    #[serde(default)]
    pub amp: AmpRunConfig,
    #[serde(default = "default_budget")]
    pub memory_budget_bytes: u64,
    /// Rate search only: stop a grid point once the lower confidence bound of
    /// its BLER exceeds the target.
    #[serde(default)]
    pub early_stop: bool,
}

fn sorted(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[0] < w[1]) || values.windows(2).all(|w| w[0] > w[1])
}

impl ExperimentSpec {
    /// Collects every problem instead of stopping at the first one.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let s = &self.system;
        if s.devices == 0 {
            out.push("system.devices: must be >= 1".into());
        }
        if s.bits == 0 || s.bits > crate::model::MAX_BITS {
            out.push(format!("system.bits: must be in 1..={}", crate::model::MAX_BITS));
        }
        if !(s.rate.is_finite() && s.rate > 0.0) {
            out.push(format!("system.rate: must be positive, got {}", s.rate));
        }
        if !s.ebn0_db.is_finite() {
            out.push("system.ebn0_db: must be finite".into());
        }
        if !(s.noise_var.is_finite() && s.noise_var > 0.0) {
            out.push(format!("system.noise_var: must be positive, got {}", s.noise_var));
        }
        if self.decoders.is_empty() {
            out.push("decoders: at least one decoder required".into());
        }
        if !(self.soft_alpha.is_finite() && self.soft_alpha > 0.0) {
            out.push(format!("soft_alpha: must be positive, got {}", self.soft_alpha));
        }
        if self.trials == 0 {
            out.push("trials: must be >= 1".into());
        }
        if let Err(e) = self.amp.validate() {
            out.push(format!("amp: {e}"));
        }
        if self.memory_budget_bytes == 0 {
            out.push("memory_budget_bytes: must be positive".into());
        }
        let check_grid = |name: &str, g: &[f64], positive: bool, out: &mut Vec<String>| {
            if g.is_empty() {
                out.push(format!("sweep.{name}: grid must not be empty"));
            } else if g.iter().any(|v| !v.is_finite() || (positive && *v <= 0.0)) {
                out.push(format!("sweep.{name}: values must be finite{}", if positive { " and positive" } else { "" }));
            } else if !sorted(g) {
                out.push(format!("sweep.{name}: grid must be strictly sorted"));
            }
        };
        match &self.sweep {
            Sweep::EbN0Grid { ebn0_db } => check_grid("ebn0_db", ebn0_db, false, &mut out),
            Sweep::RateSearch { target_pe, ebn0_db, rates } => {
                if !(*target_pe > 0.0 && *target_pe <= 1.0) {
                    out.push(format!("sweep.target_pe: must be in (0, 1], got {target_pe}"));
                }
                check_grid("ebn0_db", ebn0_db, false, &mut out);
                check_grid("rates", rates, true, &mut out);
            }
            Sweep::Trajectory { ebn0_db, rates, iterations } => {
                check_grid("ebn0_db", ebn0_db, false, &mut out);
                check_grid("rates", rates, true, &mut out);
                if *iterations == 0 {
                    out.push("sweep.iterations: must be >= 1".into());
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

enum Codebook {
    Fresh,
    Fixed(Arc<dyn SensingOperator>),
}

/// Codebook lent to one trial.
enum Lease {
    Shared(Arc<dyn SensingOperator>),
    Pooled(SensingMatrix),
}

impl Lease {
    fn op(&self) -> &dyn SensingOperator {
        match self {
            Lease::Shared(c) => c.as_ref(),
            Lease::Pooled(c) => c,
        }
    }
}

/// Everything needed to run trials of one decoder at one grid point.
pub struct TrialPlan {
    pub cfg: SystemConfig,
    pub decoder: DecoderKind,
    pub denoiser: Denoiser,
    pub run_cfg: AmpRunConfig,
    pub master_seed: u64,
    pub storage: MatrixStorage,
    pub memory_budget_bytes: u64,
    codebook: Codebook,
    /// Dense buffers returned by finished trials, redrawn in place.
    spare: Mutex<Vec<SensingMatrix>>,
}

impl TrialPlan {
    pub fn new(spec: &ExperimentSpec, cfg: SystemConfig, decoder: DecoderKind, run_cfg: AmpRunConfig) -> Result<Self> {
        let mut plan = Self {
            cfg,
            decoder,
            denoiser: decoder.denoiser(&cfg, spec.soft_alpha),
            run_cfg,
            master_seed: spec.master_seed,
            storage: spec.storage,
            memory_budget_bytes: spec.memory_budget_bytes,
            codebook: Codebook::Fresh,
            spare: Mutex::new(Vec::new()),
        };
        if spec.matrix_policy == MatrixPolicy::FixedAcrossTrials {
            let c: Arc<dyn SensingOperator> = match plan.lease(0)? {
                Lease::Pooled(c) => Arc::new(c),
                Lease::Shared(c) => c,
            };
            plan.codebook = Codebook::Fixed(c);
        }
        Ok(plan)
    }

    fn lease(&self, trial: u64) -> Result<Lease> {
        if let Codebook::Fixed(c) = &self.codebook {
            return Ok(Lease::Shared(Arc::clone(c)));
        }
        let seed = derive_seed(self.master_seed, trial, Stream::Matrix);
        Ok(match self.storage {
            MatrixStorage::Dense => {
                let spare = self.spare.lock().expect("matrix pool").pop();
                match spare {
                    Some(mut c) => {
                        c.resample(seed);
                        Lease::Pooled(c)
                    }
                    None => Lease::Pooled(SensingMatrix::sample(
                        self.cfg.m(),
                        self.cfg.n(),
                        seed,
                        self.memory_budget_bytes,
                    )?),
                }
            }
            MatrixStorage::Implicit => {
                Lease::Shared(Arc::new(ImplicitSensingMatrix::new(self.cfg.m(), self.cfg.n(), seed)?))
            }
        })
    }

    fn give_back(&self, lease: Lease) {
        if let Lease::Pooled(c) = lease {
            self.spare.lock().expect("matrix pool").push(c);
        }
    }

    /// Trials that may hold a fresh dense codebook at the same time.
    fn memory_concurrency(&self) -> usize {
        match (&self.codebook, self.storage) {
            (Codebook::Fresh, MatrixStorage::Dense) => {
                let bytes = (self.cfg.m() as u128 * self.cfg.n() as u128 * 8).max(1);
                ((self.memory_budget_bytes as u128 / bytes) as usize).max(1)
            }
            _ => usize::MAX,
        }
    }

    fn workers(&self) -> Result<rayon::ThreadPool> {
        pool(worker_threads().min(self.memory_concurrency()))
    }
}

/// Outcome of a single trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: u64,
    pub block_errors: usize,
    pub devices: usize,
    pub iterations: usize,
    pub converged: bool,
    pub trajectory: AmpTrajectory,
    pub messages: MessageVector,
}

/// Runs trial `trial` of `plan`: draw messages, codebook and noise from their
/// derived seeds, decode, count device errors.
pub fn run_trial(plan: &TrialPlan, trial: u64) -> Result<TrialResult> {
    let cfg = &plan.cfg;
    let lease = plan.lease(trial)?;
    let c = lease.op();
    let messages = MessageVector::random(cfg, derive_seed(plan.master_seed, trial, Stream::Messages));
    let x = encode(&messages, cfg)?;
    let y = channel(c, &x, cfg.noise_var, derive_seed(plan.master_seed, trial, Stream::Noise))?;
    let out = run_amp(&y, c, &plan.denoiser, cfg, &plan.run_cfg);
    plan.give_back(lease);
    let out = out?;
    Ok(TrialResult {
        trial,
        block_errors: block_errors(&out.messages, &messages)?,
        devices: cfg.devices,
        iterations: out.iterations,
        converged: out.converged,
        trajectory: out.trajectory,
        messages: out.messages,
    })
}

/// Worker count: `AMPMUD_THREADS` if set, else the rayon default.
pub fn worker_threads() -> usize {
    std::env::var("AMPMUD_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))
}

/// Runs trials `range` of `plan` on the pool. Numerical divergence is
/// reported per trial as `None`; any other error aborts.
fn run_batch(
    plan: &TrialPlan,
    workers: &rayon::ThreadPool,
    range: std::ops::Range<u64>,
) -> Result<Vec<Option<TrialResult>>> {
    let results: Vec<Result<TrialResult>> =
        workers.install(|| range.into_par_iter().map(|i| run_trial(plan, i)).collect());
    results
        .into_iter()
        .map(|r| match r {
            Ok(t) => Ok(Some(t)),
            Err(Error::NumericalDivergence { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect()
}

/// Visits trials `0..trials` in index order until `visit` returns `false`.
/// Trials are computed in parallel batches of one per worker; trials computed
/// past the stopping point are discarded, so the visited set never depends on
/// the worker count.
fn for_each_trial(plan: &TrialPlan, trials: usize, mut visit: impl FnMut(Option<TrialResult>) -> bool) -> Result<()> {
    let workers = plan.workers()?;
    let batch = workers.current_num_threads().max(1);
    let mut start = 0;
    while start < trials {
        let end = (start + batch).min(trials);
        for outcome in run_batch(plan, &workers, start as u64..end as u64)? {
            if !visit(outcome) {
                return Ok(());
            }
        }
        start = end;
    }
    Ok(())
}

/// Aggregated result of one decoder at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointStats {
    pub decoder: DecoderKind,
    pub ebn0_db: f64,
    pub rate: f64,
    pub channel_uses: usize,
    /// Trials run, including diverged ones.
    pub trials: usize,
    pub diverged: usize,
    pub block_errors: u64,
    /// Device decisions counted, `(trials - diverged) D`.
    pub decisions: u64,
    pub bler: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub mean_iterations: f64,
    pub stopped_early: bool,
}

impl PointStats {
    /// More than half of the trials diverged.
    pub fn diverged_dominated(&self) -> bool {
        2 * self.diverged > self.trials
    }
}

/// Runs up to `trials` trials of `plan`. With `stop_above = Some(target)`,
/// stops after the first trial at which the BLER lower confidence bound
/// exceeds `target`.
pub fn evaluate_point(plan: &TrialPlan, ebn0_db: f64, trials: usize, stop_above: Option<f64>) -> Result<PointStats> {
    let mut run = 0usize;
    let mut diverged = 0usize;
    let mut errors = 0u64;
    let mut decisions = 0u64;
    let mut iterations = 0usize;
    let mut stopped_early = false;
    for_each_trial(plan, trials, |outcome| {
        run += 1;
        match outcome {
            Some(t) => {
                errors += t.block_errors as u64;
                decisions += t.devices as u64;
                iterations += t.iterations;
            }
            None => diverged += 1,
        }
        if let Some(target) = stop_above {
            if run < trials && decisions > 0 && wilson95(errors, decisions).lo > target {
                stopped_early = true;
                return false;
            }
        }
        true
    })?;
    let ci = wilson95(errors, decisions);
    let converged_trials = run - diverged;
    Ok(PointStats {
        decoder: plan.decoder,
        ebn0_db,
        rate: plan.cfg.rate(),
        channel_uses: plan.cfg.channel_uses,
        trials: run,
        diverged,
        block_errors: errors,
        decisions,
        bler: if decisions > 0 { errors as f64 / decisions as f64 } else { f64::NAN },
        ci_lo: ci.lo,
        ci_hi: ci.hi,
        mean_iterations: if converged_trials > 0 { iterations as f64 / converged_trials as f64 } else { f64::NAN },
        stopped_early,
    })
}

/// Wall time of one grid point, kept out of the CSV data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointTiming {
    pub decoder: DecoderKind,
    pub ebn0_db: f64,
    pub rate: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<PointStats>,
    pub timings: Vec<PointTiming>,
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed().as_secs_f64()))
}

/// BLER for every decoder and Eb/N0 of an `EbN0Grid` sweep.
pub fn sweep_ebn0(spec: &ExperimentSpec) -> Result<SweepResult> {
    spec.validate()?;
    let Sweep::EbN0Grid { ebn0_db } = &spec.sweep else {
        return Err(Error::InvalidConfig("sweep_ebn0 needs an EbN0Grid sweep".into()));
    };
    let mut result = SweepResult::default();
    for &decoder in &spec.decoders {
        for &e in ebn0_db {
            let cfg = spec.system.resolve(e, spec.system.rate)?;
            let plan = TrialPlan::new(spec, cfg, decoder, spec.amp)?;
            let (row, seconds) = timed(|| evaluate_point(&plan, e, spec.trials, None))?;
            result.timings.push(PointTiming { decoder, ebn0_db: e, rate: row.rate, seconds });
            result.rows.push(row);
        }
    }
    Ok(result)
}

/// One point of the achievable-rate frontier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierRow {
    pub decoder: DecoderKind,
    pub ebn0_db: f64,
    pub target_pe: f64,
    /// Largest feasible grid rate (realized `K / n`), `None` if none is.
    pub rate: Option<f64>,
    pub channel_uses: Option<usize>,
    /// Upper BLER confidence bound at `rate`.
    pub ci_hi: Option<f64>,
}

impl FrontierRow {
    pub fn feasible(&self) -> bool {
        self.rate.is_some()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrontierResult {
    pub frontier: Vec<FrontierRow>,
    /// Every evaluated grid point.
    pub points: SweepResult,
}

impl FrontierResult {
    pub fn rate_for(&self, decoder: DecoderKind, ebn0_db: f64) -> Option<&FrontierRow> {
        self.frontier.iter().find(|r| r.decoder == decoder && r.ebn0_db == ebn0_db)
    }
}

/// Distinct channel-use counts for `rates`, largest rate first.
pub fn channel_uses_grid(bits: u32, rates: &[f64]) -> Result<Vec<usize>> {
    let mut ns = rates.iter().map(|&r| crate::model::channel_uses_for_rate(bits, r)).collect::<Result<Vec<_>>>()?;
    ns.sort_unstable();
    ns.dedup();
    Ok(ns)
}

/// Scans the rate grid from the largest rate down and keeps the first point
/// whose BLER upper confidence bound is at most the target.
pub fn rate_search(spec: &ExperimentSpec) -> Result<FrontierResult> {
    spec.validate()?;
    let Sweep::RateSearch { target_pe, ebn0_db, rates } = &spec.sweep else {
        return Err(Error::InvalidConfig("rate_search needs a RateSearch sweep".into()));
    };
    let ns = channel_uses_grid(spec.system.bits, rates)?;
    let stop = spec.early_stop.then_some(*target_pe);
    let mut out = FrontierResult::default();
    for &decoder in &spec.decoders {
        for &e in ebn0_db {
            let mut row =
                FrontierRow { decoder, ebn0_db: e, target_pe: *target_pe, rate: None, channel_uses: None, ci_hi: None };
            for &n in &ns {
                let s = &spec.system;
                let cfg =
                    SystemConfig::new(s.devices, s.bits, n, power_for_ebn0_db(e, s.bits, s.noise_var), s.noise_var)?;
                let plan = TrialPlan::new(spec, cfg, decoder, spec.amp)?;
                let (point, seconds) = timed(|| evaluate_point(&plan, e, spec.trials, stop))?;
                out.points.timings.push(PointTiming { decoder, ebn0_db: e, rate: point.rate, seconds });
                let feasible = !point.diverged_dominated() && point.decisions > 0 && point.ci_hi <= *target_pe;
                if feasible {
                    row.rate = Some(point.rate);
                    row.channel_uses = Some(n);
                    row.ci_hi = Some(point.ci_hi);
                }
                out.points.rows.push(point);
                if feasible {
                    break;
                }
            }
            out.frontier.push(row);
        }
    }
    Ok(out)
}

/// Per-iteration MUE of one (decoder, Eb/N0, rate) configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MueCurve {
    pub decoder: DecoderKind,
    pub ebn0_db: f64,
    pub rate: f64,
    pub channel_uses: usize,
    pub trials: usize,
    pub diverged: usize,
    pub rows: Vec<MueRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MueRow {
    pub t: usize,
    pub xi_empirical_mean: f64,
    pub xi_empirical_std: f64,
    pub xi_analytical: f64,
}

impl MueCurve {
    /// First `t` with `xi_t >= level`, from the empirical mean or the
    /// analytical sequence.
    pub fn crossing_time(&self, level: f64, empirical: bool) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| if empirical { r.xi_empirical_mean >= level } else { r.xi_analytical >= level })
            .map(|r| r.t)
    }

    pub fn max_abs_gap(&self, t_max: usize) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.t <= t_max)
            .map(|r| (r.xi_empirical_mean - r.xi_analytical).abs())
            .fold(0.0, f64::max)
    }

    /// Columns `t,xi_empirical_mean,xi_empirical_std,xi_analytical`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "xi_empirical_mean", "xi_empirical_std", "xi_analytical"])?;
        for r in &self.rows {
            out.write_record([
                r.t.to_string(),
                r.xi_empirical_mean.to_string(),
                r.xi_empirical_std.to_string(),
                r.xi_analytical.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn file_name(&self) -> String {
        format!("mue_{}_ebn0_{}_R_{}.csv", self.decoder, self.ebn0_db, self.rate)
    }
}

/// Analytical state evolution matching `decoder` at `cfg`.
pub fn analytical_trajectory(
    denoiser: &Denoiser,
    cfg: &SystemConfig,
    iterations: usize,
    seed: u64,
) -> Result<crate::se::SeTrajectory> {
    let (prior, q) = if denoiser.block_len() > 1 {
        (PriorSpec::block_for(cfg), QuadratureSpec::monte_carlo(BLOCK_SE_SAMPLES, seed))
    } else {
        (PriorSpec::separable_for(cfg), QuadratureSpec::default())
    };
    run_se_with(&prior, denoiser, cfg.beta(), cfg.noise_var, iterations, &q)
}

/// Empirical MUE `sigma_w^2 / tau_hat_t^2` averaged over trials, next to the
/// state-evolution prediction, for every decoder, Eb/N0 and rate of a
/// `Trajectory` sweep. AMP runs exactly `iterations` steps.
pub fn mue_trajectory_experiment(spec: &ExperimentSpec) -> Result<(Vec<MueCurve>, Vec<PointTiming>)> {
    spec.validate()?;
    let Sweep::Trajectory { ebn0_db, rates, iterations } = &spec.sweep else {
        return Err(Error::InvalidConfig("mue_trajectory_experiment needs a Trajectory sweep".into()));
    };
    let run_cfg =
        AmpRunConfig { max_iterations: *iterations, record_trajectory: true, stop_on_convergence: false, ..spec.amp };
    let ns = channel_uses_grid(spec.system.bits, rates)?;
    let mut curves = Vec::new();
    let mut timings = Vec::new();
    for &decoder in &spec.decoders {
        for &e in ebn0_db {
            for &n in &ns {
                let s = &spec.system;
                let cfg =
                    SystemConfig::new(s.devices, s.bits, n, power_for_ebn0_db(e, s.bits, s.noise_var), s.noise_var)?;
                let plan = TrialPlan::new(spec, cfg, decoder, run_cfg)?;
                let (curve, seconds) = timed(|| {
                    let mut trajectories = Vec::new();
                    let mut diverged = 0;
                    for_each_trial(&plan, spec.trials, |t| {
                        match t {
                            Some(t) => trajectories.push(t.trajectory),
                            None => diverged += 1,
                        }
                        true
                    })?;
                    let se = analytical_trajectory(
                        &plan.denoiser,
                        &cfg,
                        *iterations,
                        derive_seed(spec.master_seed, n as u64, Stream::Auxiliary),
                    )?;
                    let horizon = trajectories.iter().map(AmpTrajectory::len).min().unwrap_or(0).min(se.mue.len());
                    let rows = (0..horizon)
                        .map(|t| {
                            let xs: Vec<f64> = trajectories.iter().map(|tr| tr.points[t].mue_hat).collect();
                            let (m, sd) = mean_std(&xs);
                            MueRow { t, xi_empirical_mean: m, xi_empirical_std: sd, xi_analytical: se.mue[t] }
                        })
                        .collect();
                    Ok(MueCurve {
                        decoder,
                        ebn0_db: e,
                        rate: cfg.rate(),
                        channel_uses: n,
                        trials: spec.trials,
                        diverged,
                        rows,
                    })
                })?;
                timings.push(PointTiming { decoder, ebn0_db: e, rate: curve.rate, seconds });
                curves.push(curve);
            }
        }
    }
    Ok((curves, timings))
}

/// Column order of sweep and frontier-point CSVs.
pub const SWEEP_COLUMNS: [&str; 13] = [
    "decoder",
    "ebn0_db",
    "rate",
    "channel_uses",
    "trials",
    "diverged",
    "block_errors",
    "decisions",
    "bler",
    "ci_lo",
    "ci_hi",
    "mean_iterations",
    "stopped_early",
];

pub fn write_sweep_csv<W: std::io::Write>(rows: &[PointStats], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SWEEP_COLUMNS)?;
    for r in rows {
        out.write_record([
            r.decoder.to_string(),
            r.ebn0_db.to_string(),
            r.rate.to_string(),
            r.channel_uses.to_string(),
            r.trials.to_string(),
            r.diverged.to_string(),
            r.block_errors.to_string(),
            r.decisions.to_string(),
            r.bler.to_string(),
            r.ci_lo.to_string(),
            r.ci_hi.to_string(),
            r.mean_iterations.to_string(),
            r.stopped_early.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Columns `decoder,ebn0_db,target_pe,rate,channel_uses,ci_hi,feasible`;
/// `rate`, `channel_uses` and `ci_hi` are empty for infeasible rows.
pub fn write_frontier_csv<W: std::io::Write>(rows: &[FrontierRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["decoder", "ebn0_db", "target_pe", "rate", "channel_uses", "ci_hi", "feasible"])?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in rows {
        out.write_record([
            r.decoder.to_string(),
            r.ebn0_db.to_string(),
            r.target_pe.to_string(),
            opt(r.rate.map(|v| v.to_string())),
            opt(r.channel_uses.map(|v| v.to_string())),
            opt(r.ci_hi.map(|v| v.to_string())),
            r.feasible().to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Written beside every set of outputs; enough to reproduce the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub master_seed: u64,
    pub spec: ExperimentSpec,
    pub outputs: Vec<String>,
    pub timings: Vec<PointTiming>,
    pub created_unix: u64,
}

impl Manifest {
    pub fn new(command: &str, spec: &ExperimentSpec, outputs: Vec<String>, timings: Vec<PointTiming>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            master_seed: spec.master_seed,
            spec: spec.clone(),
            outputs,
            timings,
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Reads an experiment spec, or the spec embedded in a manifest.
pub fn load_spec(path: &Path) -> Result<ExperimentSpec> {
    parse_spec(&std::fs::read_to_string(path)?)
}

/// Parses an experiment spec, or the spec embedded in a manifest.
pub fn parse_spec(text: &str) -> Result<ExperimentSpec> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    if value.get("spec").is_some() && value.get("tool").is_some() {
        let m: Manifest = serde_json::from_value(value)?;
        Ok(m.spec)
    } else {
        Ok(serde_json::from_value(value)?)
    }
}
