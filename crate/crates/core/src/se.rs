//! State evolution and multiuser efficiency.
//!
//! For a separable denoiser the effective noise follows
//! `tau_{t+1}^2 = sigma_w^2 + E{(eta(U + tau_t Z) - U)^2} / beta` with
//! `tau_0^2 = sigma_w^2 + E{U^2} / beta`. The block recursion replaces the
//! scalar error by `E{||eta(U + tau_t Z) - U||^2} / l` with `l = 2^K`. For the
//! one-hot prior both start from `sigma_w^2 + P_I / (2^K beta)`.
//!
//! Separable expectations use Gauss-Hermite quadrature split over the two
//! prior atoms, doubling the node count until the step value settles. Block
//! expectations are Monte Carlo, conditioned on the transmitted index being
//! the first one (the prior and the MMSE denoiser are permutation invariant).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amp::AmpTrajectory;
use crate::denoise::{Denoise, Denoiser, PriorSpec};
use crate::error::{Error, Result};
use crate::model::SystemConfig;
use crate::quadrature::GaussHermite;
use crate::rng::{self, Stream};

/// Largest Gauss-Hermite rule tried before giving up.
const MAX_NODES: usize = 1921;

/// Target number of scalar draws per Monte Carlo chunk.
const CHUNK_ENTRIES: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeVariant {
    Separable,
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum QuadratureMethod {
    GaussHermite { nodes: usize },
    MonteCarlo { samples: usize, seed: u64 },
}

/// Rule for evaluating the state-evolution expectations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub method: QuadratureMethod,
    pub target_rel_err: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self::gauss_hermite(61)
    }
}

impl QuadratureSpec {
    pub fn gauss_hermite(nodes: usize) -> Self {
        Self { method: QuadratureMethod::GaussHermite { nodes }, target_rel_err: 1e-4 }
    }

    pub fn monte_carlo(samples: usize, seed: u64) -> Self {
        Self { method: QuadratureMethod::MonteCarlo { samples, seed }, target_rel_err: 1e-4 }
    }

    pub fn validate(&self) -> Result<()> {
        match self.method {
            QuadratureMethod::GaussHermite { nodes } if nodes < 3 || nodes % 2 == 0 => {
                Err(Error::InvalidConfig(format!("node count must be odd and >= 3, got {nodes}")))
            }
            QuadratureMethod::MonteCarlo { samples, .. } if samples < 1000 => {
                Err(Error::InvalidConfig(format!("need at least 1000 samples, got {samples}")))
            }
            _ if !(self.target_rel_err > 0.0) => Err(Error::InvalidConfig("target_rel_err must be positive".into())),
            _ => Ok(()),
        }
    }

    fn reseeded(&self, stream_index: u64) -> Self {
        match self.method {
            QuadratureMethod::MonteCarlo { samples, seed } => Self {
                method: QuadratureMethod::MonteCarlo {
                    samples,
                    seed: rng::derive_seed(seed, stream_index, Stream::Auxiliary),
                },
                ..*self
            },
            QuadratureMethod::GaussHermite { .. } => *self,
        }
    }
}

/// A numerically evaluated expectation. `std_error` is the Monte Carlo
/// standard error, or the last node-doubling change for quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeEstimate {
    pub value: f64,
    pub std_error: f64,
}

fn bernoulli_atoms(prior: &PriorSpec) -> Result<(f64, f64)> {
    prior.validate()?;
    match *prior {
        PriorSpec::ScaledBernoulli { power, p } => Ok((power.sqrt(), p)),
        PriorSpec::BlockOneHot { .. } => {
            Err(Error::UnsupportedPrior("separable recursion needs a scaled Bernoulli prior".into()))
        }
    }
}

fn require_separable(d: &dyn Denoise) -> Result<()> {
    if d.block_len() != 1 {
        return Err(Error::InvalidConfig(format!(
            "separable recursion needs a separable denoiser, got block length {}",
            d.block_len()
        )));
    }
    Ok(())
}

/// `E{psi(eta(U + tau Z) - U)}` with a Gauss-Hermite rule, one sum per atom.
fn separable_quadrature<F: Fn(f64) -> f64>(
    rule: &GaussHermite,
    amp: f64,
    p: f64,
    tau2: f64,
    d: &dyn Denoise,
    loss: &F,
) -> Result<f64> {
    let tau = tau2.sqrt();
    let mut total = 0.0;
    for (atom, mass) in [(amp, p), (0.0, 1.0 - p)] {
        if mass == 0.0 {
            continue;
        }
        let v: Vec<f64> = rule.points().iter().map(|z| atom + tau * z).collect();
        let mut est = vec![0.0; v.len()];
        d.apply(&v, tau2, &mut est)?;
        let branch: f64 = rule.weights().iter().zip(&est).map(|(w, e)| w * loss(e - atom)).sum();
        total += mass * branch;
    }
    Ok(total)
}

/// Sample mean and its standard error of `loss(eta(U + tau Z) - U)` over
/// `samples` draws, in fixed-size chunks reduced in index order.
fn separable_monte_carlo<F: Fn(f64) -> f64 + Sync>(
    samples: usize,
    seed: u64,
    amp: f64,
    p: f64,
    tau2: f64,
    d: &dyn Denoise,
    loss: &F,
) -> Result<SeEstimate> {
    use rand::Rng;
    let tau = tau2.sqrt();
    let chunks = samples.div_ceil(CHUNK_ENTRIES);
    let partial: Vec<Result<(f64, f64)>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let len = CHUNK_ENTRIES.min(samples - chunk * CHUNK_ENTRIES);
            let mut r = rng::rng_from_seed(rng::derive_seed(seed, chunk as u64, Stream::Auxiliary));
            let mut u = vec![0.0; len];
            let mut v = vec![0.0; len];
            for (ui, vi) in u.iter_mut().zip(v.iter_mut()) {
                *ui = if r.random::<f64>() < p { amp } else { 0.0 };
                *vi = *ui + tau * rng::standard_normal(&mut r);
            }
            let mut est = vec![0.0; len];
            d.apply(&v, tau2, &mut est)?;
            Ok(est.iter().zip(&u).fold((0.0, 0.0), |(s, s2), (e, ui)| {
                let l = loss(e - ui);
                (s + l, s2 + l * l)
            }))
        })
        .collect();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for part in partial {
        let (s, s2) = part?;
        sum += s;
        sum_sq += s2;
    }
    Ok(mean_and_error(sum, sum_sq, samples))
}

fn mean_and_error(sum: f64, sum_sq: f64, n: usize) -> SeEstimate {
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    SeEstimate { value: mean, std_error: (var / nf).sqrt() }
}

/// Expected per-entry loss under the separable prior, by adaptive quadrature
/// or Monte Carlo. `settle` maps an expectation to the quantity whose relative
/// change decides convergence of the node doubling.
fn separable_expectation<F, S>(
    tau2: f64,
    prior: &PriorSpec,
    d: &dyn Denoise,
    q: &QuadratureSpec,
    loss: F,
    settle: S,
) -> Result<SeEstimate>
where
    F: Fn(f64) -> f64 + Sync,
    S: Fn(f64) -> f64,
{
    q.validate()?;
    require_separable(d)?;
    let (amp, p) = bernoulli_atoms(prior)?;
    if !(tau2.is_finite() && tau2 > 0.0) {
        return Err(Error::InvalidVariance(tau2));
    }
    match q.method {
        QuadratureMethod::MonteCarlo { samples, seed } => separable_monte_carlo(samples, seed, amp, p, tau2, d, &loss),
        QuadratureMethod::GaussHermite { nodes } => {
            let mut nodes = nodes;
            let mut prev = separable_quadrature(&*GaussHermite::cached(nodes)?, amp, p, tau2, d, &loss)?;
            loop {
                let next_nodes = 2 * nodes - 1;
                if next_nodes > MAX_NODES {
                    return Err(Error::Precision { target: q.target_rel_err, achieved: f64::NAN });
                }
                let next = separable_quadrature(&*GaussHermite::cached(next_nodes)?, amp, p, tau2, d, &loss)?;
                let (a, b) = (settle(prev), settle(next));
                let change = (b - a).abs() / b.abs().max(f64::MIN_POSITIVE);
                if change < q.target_rel_err {
                    return Ok(SeEstimate { value: next, std_error: (next - prev).abs() });
                }
                if next_nodes * 2 - 1 > MAX_NODES {
                    return Err(Error::Precision { target: q.target_rel_err, achieved: change });
                }
                prev = next;
                nodes = next_nodes;
            }
        }
    }
}

/// `sigma_w^2 + E{U^2} / beta` or its block analogue; identical for matched
/// one-hot parameters.
pub fn se_init(prior: &PriorSpec, beta: f64, noise_var: f64) -> f64 {
    noise_var + prior.energy_per_entry() / beta
}

/// One step of the separable recursion.
pub fn se_step_separable(
    tau2: f64,
    prior: &PriorSpec,
    d: &dyn Denoise,
    beta: f64,
    noise_var: f64,
    q: &QuadratureSpec,
) -> Result<SeEstimate> {
    let mse = separable_expectation(tau2, prior, d, q, |e| e * e, |m| noise_var + m / beta)?;
    Ok(SeEstimate { value: noise_var + mse.value / beta, std_error: mse.std_error / beta })
}

#[allow(clippy::too_many_arguments)]
fn block_monte_carlo<F>(
    rho2: f64,
    bits: u32,
    amp: f64,
    d: &dyn Denoise,
    samples: usize,
    seed: u64,
    conditioned: bool,
    loss: &F,
) -> Result<SeEstimate>
where
    F: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    use rand::Rng;
    let l = 1usize << bits;
    let per_chunk = (CHUNK_ENTRIES / l).max(1);
    let chunks = samples.div_ceil(per_chunk);
    let rho = rho2.sqrt();
    let partial: Vec<Result<(f64, f64)>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let count = per_chunk.min(samples - chunk * per_chunk);
            let mut r = rng::rng_from_seed(rng::derive_seed(seed, chunk as u64, Stream::Auxiliary));
            let mut u = vec![0.0; count * l];
            let mut v = vec![0.0; count * l];
            for s in 0..count {
                let hot = if conditioned { 0 } else { r.random_range(0..l) };
                u[s * l + hot] = amp;
                for i in s * l..(s + 1) * l {
                    v[i] = u[i] + rho * rng::standard_normal(&mut r);
                }
            }
            let mut est = vec![0.0; count * l];
            d.apply(&v, rho2, &mut est)?;
            Ok(est.chunks_exact(l).zip(u.chunks_exact(l)).fold((0.0, 0.0), |(s, s2), (e, ub)| {
                let q = loss(e, ub);
                (s + q, s2 + q * q)
            }))
        })
        .collect();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for part in partial {
        let (s, s2) = part?;
        sum += s;
        sum_sq += s2;
    }
    Ok(mean_and_error(sum, sum_sq, samples))
}

fn block_squared_error(e: &[f64], u: &[f64]) -> f64 {
    e.iter().zip(u).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn check_block_inputs(rho2: f64, bits: u32, d: &dyn Denoise, q: &QuadratureSpec) -> Result<(usize, u64)> {
    q.validate()?;
    if bits == 0 || bits > 10 {
        return Err(Error::InvalidConfig(format!("block recursion supports 1..=10 bits, got {bits}")));
    }
    if d.block_len() != 1usize << bits {
        return Err(Error::InvalidConfig(format!("denoiser block length {} does not match 2^{bits}", d.block_len())));
    }
    if !(rho2.is_finite() && rho2 > 0.0) {
        return Err(Error::InvalidVariance(rho2));
    }
    match q.method {
        QuadratureMethod::MonteCarlo { samples, seed } => Ok((samples, seed)),
        QuadratureMethod::GaussHermite { .. } => Err(Error::InvalidConfig(
            "block recursion is evaluated by Monte Carlo; pass a MonteCarlo quadrature spec".into(),
        )),
    }
}

/// One step of the block recursion,
/// `sigma_w^2 + E{||eta(U + rho Z) - U||^2} / (l beta)`, by Monte Carlo
/// conditioned on `U = sqrt(P) e_1`.
pub fn se_step_block(
    rho2: f64,
    bits: u32,
    power: f64,
    beta: f64,
    noise_var: f64,
    d: &dyn Denoise,
    q: &QuadratureSpec,
) -> Result<SeEstimate> {
    let (samples, seed) = check_block_inputs(rho2, bits, d, q)?;
    let err = block_monte_carlo(rho2, bits, power.sqrt(), d, samples, seed, true, &block_squared_error)?;
    let scale = 1.0 / ((1usize << bits) as f64 * beta);
    Ok(SeEstimate { value: noise_var + err.value * scale, std_error: err.std_error * scale })
}

/// Same expectation as [`se_step_block`] without the symmetry reduction:
/// the transmitted index is drawn uniformly.
pub fn se_step_block_unconditioned(
    rho2: f64,
    bits: u32,
    power: f64,
    beta: f64,
    noise_var: f64,
    d: &dyn Denoise,
    q: &QuadratureSpec,
) -> Result<SeEstimate> {
    let (samples, seed) = check_block_inputs(rho2, bits, d, q)?;
    let err = block_monte_carlo(rho2, bits, power.sqrt(), d, samples, seed, false, &block_squared_error)?;
    let scale = 1.0 / ((1usize << bits) as f64 * beta);
    Ok(SeEstimate { value: noise_var + err.value * scale, std_error: err.std_error * scale })
}

/// Multiuser efficiency `sigma_w^2 / tau^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mue {
    pub value: f64,
    /// Set when `tau^2 < sigma_w^2` (finite-sample fluctuation) and the value
    /// was clamped to 1.
    pub clamped: bool,
}

pub fn mue(noise_var: f64, tau2: f64) -> Mue {
    if tau2 < noise_var {
        Mue { value: 1.0, clamped: true }
    } else {
        Mue { value: noise_var / tau2, clamped: false }
    }
}

/// Analytical state-evolution sequence with its MUE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeTrajectory {
    pub variant: SeVariant,
    pub denoiser: Denoiser,
    pub prior: PriorSpec,
    /// `tau_t^2` for `t = 0..=T`.
    pub tau2: Vec<f64>,
    /// Standard error of each entry (0 for the closed-form `t = 0`).
    pub std_error: Vec<f64>,
    /// `xi_t = sigma_w^2 / tau_t^2`.
    pub mue: Vec<f64>,
    pub beta: f64,
    pub noise_var: f64,
}

impl SeTrajectory {
    pub fn last(&self) -> f64 {
        *self.tau2.last().expect("trajectory is never empty")
    }

    /// Predicted per-entry MSE of `x^t`, `(tau_t^2 - sigma_w^2) beta`.
    pub fn predicted_mse(&self, t: usize) -> f64 {
        (self.tau2[t] - self.noise_var) * self.beta
    }

    /// Rows in the trajectory CSV schema with `trial_id = SE`; the `mse`
    /// column carries the predicted MSE.
    pub fn write_csv<W: std::io::Write>(&self, w: W, header: bool) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        if header {
            out.write_record(["trial_id", "t", "tau2_hat", "mse", "mue_hat"])?;
        }
        for t in 0..self.tau2.len() {
            out.write_record([
                "SE".to_string(),
                t.to_string(),
                self.tau2[t].to_string(),
                self.predicted_mse(t).to_string(),
                self.mue[t].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Runs `iterations` steps of the recursion matching `prior` with the MMSE
/// denoiser for that prior.
pub fn run_se(prior: &PriorSpec, cfg: &SystemConfig, iterations: usize, q: &QuadratureSpec) -> Result<SeTrajectory> {
    let denoiser = match *prior {
        PriorSpec::ScaledBernoulli { power, p } => Denoiser::BernoulliMmse { power, p },
        PriorSpec::BlockOneHot { bits, power } => Denoiser::BlockMmse { power, bits },
    };
    run_se_with(prior, &denoiser, cfg.beta(), cfg.noise_var, iterations, q)
}

/// Runs the recursion for an arbitrary denoiser. Block denoisers use the
/// block recursion; Monte Carlo steps get per-iteration derived seeds.
pub fn run_se_with(
    prior: &PriorSpec,
    denoiser: &Denoiser,
    beta: f64,
    noise_var: f64,
    iterations: usize,
    q: &QuadratureSpec,
) -> Result<SeTrajectory> {
    if iterations == 0 {
        return Err(Error::InvalidConfig("state evolution needs T >= 1".into()));
    }
    if !(beta > 0.0) || !(noise_var > 0.0) {
        return Err(Error::InvalidConfig(format!("beta and noise_var must be positive, got {beta} and {noise_var}")));
    }
    let variant = if denoiser.block_len() > 1 { SeVariant::Block } else { SeVariant::Separable };
    let mut tau2 = vec![se_init(prior, beta, noise_var)];
    let mut std_error = vec![0.0];
    for t in 0..iterations {
        let current = tau2[t];
        let qt = q.reseeded(t as u64);
        let step = match variant {
            SeVariant::Separable => {
                let sep = match *prior {
                    PriorSpec::BlockOneHot { bits, power } => {
                        PriorSpec::ScaledBernoulli { power, p: 1.0 / (1u64 << bits) as f64 }
                    }
                    other => other,
                };
                se_step_separable(current, &sep, denoiser, beta, noise_var, &qt)?
            }
            SeVariant::Block => {
                let (bits, power) = match *prior {
                    PriorSpec::BlockOneHot { bits, power } => (bits, power),
                    PriorSpec::ScaledBernoulli { .. } => {
                        return Err(Error::UnsupportedPrior("block recursion needs the block one-hot prior".into()))
                    }
                };
                se_step_block(current, bits, power, beta, noise_var, denoiser, &qt)?
            }
        };
        tau2.push(step.value);
        std_error.push(step.std_error);
    }
    let mue_seq = tau2.iter().map(|&t| mue(noise_var, t).value).collect();
    Ok(SeTrajectory { variant, denoiser: *denoiser, prior: *prior, tau2, std_error, mue: mue_seq, beta, noise_var })
}

/// Pseudo-Lipschitz test function for the functional-convergence check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestFunction {
    SquaredError,
    AbsoluteError,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionalRow {
    pub t: usize,
    pub empirical: f64,
    pub analytical: f64,
    pub rel_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalReport {
    pub psi: TestFunction,
    pub rows: Vec<FunctionalRow>,
}

impl FunctionalReport {
    pub fn max_rel_dev(&self) -> f64 {
        self.rows.iter().map(|r| r.rel_dev).fold(0.0, f64::max)
    }
}

fn rel_dev(empirical: f64, analytical: f64) -> f64 {
    if empirical == analytical {
        0.0
    } else {
        (empirical - analytical).abs() / analytical.abs()
    }
}

/// Compares the empirical functional of the AMP estimates with its
/// state-evolution prediction at every iteration `t >= 1` present in both.
///
/// `SquaredError` uses `(1/N) ||x^t - x||^2` against `(tau_t^2 - sigma_w^2) beta`
/// for the separable variant, and the block form `(1/L) sum_u ||x_u^t - x_u||^2`
/// against `l beta (rho_t^2 - sigma_w^2)` for the block variant.
/// `AbsoluteError` uses `(1/N) sum |x_i^t - x_i|` against
/// `E{|eta(U + tau_{t-1} Z) - U|}` per entry.
pub fn functional_convergence_check(
    psi: TestFunction,
    empirical: &AmpTrajectory,
    analytical: &SeTrajectory,
    q: &QuadratureSpec,
) -> Result<FunctionalReport> {
    let horizon = empirical.len().min(analytical.tau2.len());
    let block_scale = match analytical.variant {
        SeVariant::Separable => 1.0,
        SeVariant::Block => analytical.denoiser.block_len() as f64,
    };
    let mut rows = Vec::new();
    for t in 1..horizon {
        let point = &empirical.points[t];
        let (emp, ana) = match psi {
            TestFunction::SquaredError => {
                let emp =
                    point.mse.ok_or_else(|| Error::InvalidConfig("empirical trajectory has no ground truth".into()))?;
                (emp * block_scale, analytical.predicted_mse(t) * block_scale)
            }
            TestFunction::AbsoluteError => {
                let emp =
                    point.mae.ok_or_else(|| Error::InvalidConfig("empirical trajectory has no ground truth".into()))?;
                let prev = analytical.tau2[t - 1];
                let ana = match analytical.variant {
                    SeVariant::Separable => {
                        separable_expectation(prev, &analytical.prior, &analytical.denoiser, q, f64::abs, |m| m)?.value
                    }
                    SeVariant::Block => {
                        let (bits, power) = match analytical.prior {
                            PriorSpec::BlockOneHot { bits, power } => (bits, power),
                            _ => return Err(Error::UnsupportedPrior("block check needs block prior".into())),
                        };
                        let (samples, seed) = check_block_inputs(prev, bits, &analytical.denoiser, q)?;
                        let l1 = |e: &[f64], u: &[f64]| -> f64 { e.iter().zip(u).map(|(a, b)| (a - b).abs()).sum() };
                        block_monte_carlo(prev, bits, power.sqrt(), &analytical.denoiser, samples, seed, true, &l1)?
                            .value
                            / (1usize << bits) as f64
                    }
                };
                (emp, ana)
            }
        };
        rows.push(FunctionalRow { t, empirical: emp, analytical: ana, rel_dev: rel_dev(emp, ana) });
    }
    Ok(FunctionalReport { psi, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Passes `v` through unchanged.
    struct Identity;
    impl Denoise for Identity {
        fn apply(&self, v: &[f64], _: f64, out: &mut [f64]) -> Result<()> {
            out.copy_from_slice(v);
            Ok(())
        }
        fn divergence(&self, _: &[f64], _: f64) -> Result<f64> {
            Ok(1.0)
        }
    }

    /// Rounds to the nearest prior atom; exact whenever the noise is far below
    /// half the atom spacing.
    struct NearestAtom {
        amp: f64,
        block_len: usize,
    }
    impl Denoise for NearestAtom {
        fn block_len(&self) -> usize {
            self.block_len
        }
        fn apply(&self, v: &[f64], _: f64, out: &mut [f64]) -> Result<()> {
            if self.block_len == 1 {
                for (o, x) in out.iter_mut().zip(v) {
                    *o = if (x - self.amp).abs() < x.abs() { self.amp } else { 0.0 };
                }
            } else {
                for (ob, vb) in out.chunks_exact_mut(self.block_len).zip(v.chunks_exact(self.block_len)) {
                    let hot = vb.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
                    ob.fill(0.0);
                    ob[hot] = self.amp;
                }
            }
            Ok(())
        }
        fn divergence(&self, _: &[f64], _: f64) -> Result<f64> {
            Ok(0.0)
        }
    }

    #[test]
    fn init_examples() {
        let p = 1.0 / 256.0;
        let beta = 8.0 / 256.0;
        let sep = PriorSpec::scaled_bernoulli(1.0, p).unwrap();
        let blk = PriorSpec::block_one_hot(8, 1.0).unwrap();
        assert!((se_init(&sep, beta, 0.5) - 0.625).abs() < 1e-15);
        assert_eq!(se_init(&sep, beta, 0.5), se_init(&blk, beta, 0.5));
        let zero = PriorSpec::scaled_bernoulli(0.0, p).unwrap();
        assert_eq!(se_init(&zero, beta, 0.5), 0.5);
        // p = 2^-K, beta = n / 2^K gives sigma^2 + P / n
        let cfg = SystemConfig::new(10, 5, 3, 7.0, 0.2).unwrap();
        let v = se_init(&PriorSpec::separable_for(&cfg), cfg.beta(), cfg.noise_var);
        assert!((v - (0.2 + 7.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn identity_step_adds_scaled_variance() {
        let prior = PriorSpec::scaled_bernoulli(1.0, 0.1).unwrap();
        let v = se_step_separable(0.7, &prior, &Identity, 0.25, 0.3, &QuadratureSpec::default()).unwrap();
        assert!((v.value - (0.3 + 0.7 / 0.25)).abs() < 1e-12);
    }

    #[test]
    fn exact_denoiser_returns_noise_floor() {
        let prior = PriorSpec::scaled_bernoulli(1.0, 0.1).unwrap();
        let d = NearestAtom { amp: 1.0, block_len: 1 };
        let v = se_step_separable(1e-6, &prior, &d, 0.25, 0.3, &QuadratureSpec::default()).unwrap();
        assert_eq!(v.value, 0.3);

        let d = NearestAtom { amp: 1.0, block_len: 16 };
        let q = QuadratureSpec::monte_carlo(5000, 1);
        let v = se_step_block(1e-6, 4, 1.0, 0.25, 0.3, &d, &q).unwrap();
        assert_eq!(v.value, 0.3);
    }

    #[test]
    fn block_step_vanishing_noise() {
        let d = Denoiser::BlockMmse { power: 1.0, bits: 4 };
        let q = QuadratureSpec::monte_carlo(5000, 2);
        let v = se_step_block(1e-6, 4, 1.0, 0.25, 0.3, &d, &q).unwrap();
        assert!(v.value <= 0.3 * 1.01);
    }

    #[test]
    fn quadrature_agrees_with_monte_carlo() {
        let (beta, p, power, noise) = (1.0 / 16.0, 1.0 / 16.0, 1.0, 0.1);
        let prior = PriorSpec::scaled_bernoulli(power, p).unwrap();
        let d = Denoiser::BernoulliMmse { power, p };
        let tau2 = se_init(&prior, beta, noise);
        let gh = se_step_separable(tau2, &prior, &d, beta, noise, &QuadratureSpec::gauss_hermite(61)).unwrap();
        let mc = se_step_separable(tau2, &prior, &d, beta, noise, &QuadratureSpec::monte_carlo(1_000_000, 3)).unwrap();
        assert!((gh.value - mc.value).abs() <= 3.0 * mc.std_error, "{gh:?} vs {mc:?}");
    }

    #[test]
    fn block_k1_matches_two_point_enumeration() {
        // with K = 1 the block posterior depends on v_1 - v_2 only; recompute
        // the same error directly from the two-point posterior
        let (power, beta, noise, rho2) = (2.0f64, 0.5, 0.4, 0.9);
        let d = Denoiser::BlockMmse { power, bits: 1 };
        let q = QuadratureSpec::monte_carlo(200_000, 4);
        let blk = se_step_block(rho2, 1, power, beta, noise, &d, &q).unwrap();
        let oracle = {
            use rand::Rng;
            let amp = power.sqrt();
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            let n = 200_000;
            let mut r = rng::rng_from_seed(99);
            for _ in 0..n {
                let _ = r.random::<u8>();
                let v1 = amp + rho2.sqrt() * rng::standard_normal(&mut r);
                let v2 = rho2.sqrt() * rng::standard_normal(&mut r);
                let w1 = (-((v1 - amp).powi(2) + v2 * v2) / (2.0 * rho2)).exp();
                let w2 = (-(v1 * v1 + (v2 - amp).powi(2)) / (2.0 * rho2)).exp();
                let s1 = w1 / (w1 + w2);
                let err = (amp * s1 - amp).powi(2) + (amp * (1.0 - s1)).powi(2);
                sum += err;
                sum_sq += err * err;
            }
            let est = mean_and_error(sum, sum_sq, n);
            SeEstimate { value: noise + est.value / (2.0 * beta), std_error: est.std_error / (2.0 * beta) }
        };
        let spread = 3.0 * (blk.std_error.powi(2) + oracle.std_error.powi(2)).sqrt();
        assert!((blk.value - oracle.value).abs() <= spread, "{blk:?} vs {oracle:?}");
    }

    #[test]
    fn symmetry_reduction_matches_unconditioned() {
        let d = Denoiser::BlockMmse { power: 3.0, bits: 2 };
        let q = QuadratureSpec::monte_carlo(200_000, 5);
        let a = se_step_block(0.8, 2, 3.0, 0.5, 0.2, &d, &q).unwrap();
        let b = se_step_block_unconditioned(0.8, 2, 3.0, 0.5, 0.2, &d, &q.reseeded(1)).unwrap();
        let spread = 3.0 * (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
        assert!((a.value - b.value).abs() <= spread);
    }

    #[test]
    fn block_step_needs_monte_carlo() {
        let d = Denoiser::BlockMmse { power: 1.0, bits: 2 };
        assert!(se_step_block(1.0, 2, 1.0, 1.0, 1.0, &d, &QuadratureSpec::default()).is_err());
        let big = Denoiser::BlockMmse { power: 1.0, bits: 11 };
        assert!(se_step_block(1.0, 11, 1.0, 1.0, 1.0, &big, &QuadratureSpec::monte_carlo(1000, 0)).is_err());
    }

    #[test]
    fn mue_examples() {
        assert_eq!(mue(0.5, 0.5).value, 1.0);
        assert_eq!(mue(0.5, 1.0).value, 0.5);
        let m = mue(1.0, 0.9);
        assert!(m.clamped);
        assert_eq!(m.value, 1.0);
    }

    #[test]
    fn trajectories_are_monotone_with_mue_in_unit_interval() {
        let q = QuadratureSpec::default();
        for bits in [4u32, 8] {
            for n in [2usize, 4, 8, 16] {
                for ebn0 in [0.0, 3.0, 6.0, 10.0] {
                    let cfg = SystemConfig::at_ebn0_db(64, bits, n, ebn0, 1.0).unwrap();
                    let se = run_se(&PriorSpec::separable_for(&cfg), &cfg, 25, &q).unwrap();
                    for w in se.tau2.windows(2) {
                        assert!(w[1] <= w[0] * (1.0 + 1e-9), "{bits} {n} {ebn0}: {:?}", se.tau2);
                    }
                    assert!(se.mue.iter().all(|&m| m > 0.0 && m <= 1.0));
                }
            }
        }
    }

    #[test]
    fn fixed_point_is_stable() {
        let cfg = SystemConfig::at_ebn0_db(64, 8, 8, 5.0, 1.0).unwrap();
        let prior = PriorSpec::separable_for(&cfg);
        let q = QuadratureSpec::default();
        let se = run_se(&prior, &cfg, 60, &q).unwrap();
        let fp = se.last();
        let d = Denoiser::BernoulliMmse { power: cfg.power, p: cfg.activity() };
        let again = se_step_separable(fp, &prior, &d, cfg.beta(), cfg.noise_var, &q).unwrap();
        assert!((again.value - fp).abs() <= 1e-4 * fp);
    }

    #[test]
    fn invalid_quadrature_specs() {
        assert!(QuadratureSpec::gauss_hermite(4).validate().is_err());
        assert!(QuadratureSpec::gauss_hermite(1).validate().is_err());
        assert!(QuadratureSpec::monte_carlo(10, 0).validate().is_err());
        let cfg = SystemConfig::new(4, 2, 2, 1.0, 1.0).unwrap();
        assert!(run_se(&PriorSpec::separable_for(&cfg), &cfg, 0, &QuadratureSpec::default()).is_err());
    }
}
