//! Denoisers for the AMP iteration and their divergences.
//!
//! Three families are provided:
//!
//! * soft thresholding at `alpha * tau`, the prior-agnostic baseline;
//! * the separable posterior mean under the scaled Bernoulli prior
//!   `p delta(x - sqrt(P)) + (1 - p) delta(x)` with `p = 2^-K` (RBS-AMP);
//! * the block posterior mean under the exact one-hot prior, a softmax over
//!   the `2^K` entries of each block (BS-AMP).
//!
//! Both posterior means are evaluated in log-space so they stay finite for
//! vanishing `tau^2`. [`posterior_mean_oracle`] recomputes them by brute-force
//! enumeration of the prior support and is the reference in tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SystemConfig;

/// Soft-threshold multiplier used when none is given.
pub const DEFAULT_SOFT_ALPHA: f64 = 1.1402;

/// Prior on the transmitted vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PriorSpec {
    /// Elementwise `p delta(x - sqrt(power)) + (1 - p) delta(x)`.
    ScaledBernoulli { power: f64, p: f64 },
    /// Each block of `2^bits` entries is `sqrt(power) e_k`, `k` uniform.
    BlockOneHot { bits: u32, power: f64 },
}

impl PriorSpec {
    pub fn scaled_bernoulli(power: f64, p: f64) -> Result<Self> {
        let prior = Self::ScaledBernoulli { power, p };
        prior.validate()?;
        Ok(prior)
    }

    pub fn block_one_hot(bits: u32, power: f64) -> Result<Self> {
        let prior = Self::BlockOneHot { bits, power };
        prior.validate()?;
        Ok(prior)
    }

    /// Relaxed (separable) prior matching `cfg`.
    pub fn separable_for(cfg: &SystemConfig) -> Self {
        Self::ScaledBernoulli { power: cfg.power, p: cfg.activity() }
    }

    pub fn block_for(cfg: &SystemConfig) -> Self {
        Self::BlockOneHot { bits: cfg.bits, power: cfg.power }
    }

    /// Power 0 is accepted as a degenerate all-zero prior.
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::ScaledBernoulli { power, p } => {
                if !(power.is_finite() && power >= 0.0) {
                    return Err(Error::InvalidConfig(format!("prior power {power}")));
                }
                if !(p > 0.0 && p <= 1.0) {
                    return Err(Error::InvalidConfig(format!("activity probability must be in (0, 1], got {p}")));
                }
            }
            Self::BlockOneHot { bits, power } => {
                if !(power.is_finite() && power >= 0.0) {
                    return Err(Error::InvalidConfig(format!("prior power {power}")));
                }
                if bits == 0 || bits > crate::model::MAX_BITS {
                    return Err(Error::InvalidConfig(format!("prior bits {bits}")));
                }
            }
        }
        Ok(())
    }

    pub fn power(&self) -> f64 {
        match *self {
            Self::ScaledBernoulli { power, .. } | Self::BlockOneHot { power, .. } => power,
        }
    }

    /// Expected energy per entry, `E{U^2}` (separable) or `E{||U||^2} / l`
    /// (block). Equal for matched parameters.
    pub fn energy_per_entry(&self) -> f64 {
        match *self {
            Self::ScaledBernoulli { power, p } => p * power,
            Self::BlockOneHot { bits, power } => power / (1u64 << bits) as f64,
        }
    }
}

/// A denoiser `eta(v; tau^2)` paired with its divergence
/// `(1/N) tr(d eta / d v)`.
///
/// Separable denoisers report `block_len() == 1`; block denoisers act on
/// consecutive, non-overlapping blocks of `block_len()` entries.
pub trait Denoise: Send + Sync {
    fn block_len(&self) -> usize {
        1
    }

    fn apply(&self, v: &[f64], tau2: f64, out: &mut [f64]) -> Result<()>;

    fn divergence(&self, v: &[f64], tau2: f64) -> Result<f64>;
}

/// Which denoiser a decoder runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    /// AMP with soft thresholding.
    Soft,
    /// Relaxed block sparsity: separable Bernoulli posterior mean.
    Rbs,
    /// Block sparsity: block one-hot posterior mean.
    Bs,
}

impl DecoderKind {
    pub fn denoiser(self, cfg: &SystemConfig, soft_alpha: f64) -> Denoiser {
        match self {
            Self::Soft => Denoiser::SoftThreshold { alpha: soft_alpha },
            Self::Rbs => Denoiser::BernoulliMmse { power: cfg.power, p: cfg.activity() },
            Self::Bs => Denoiser::BlockMmse { power: cfg.power, bits: cfg.bits },
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Soft => "soft",
            Self::Rbs => "rbs",
            Self::Bs => "bs",
        }
    }
}

impl std::fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The three concrete denoisers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Denoiser {
    SoftThreshold { alpha: f64 },
    BernoulliMmse { power: f64, p: f64 },
    BlockMmse { power: f64, bits: u32 },
}

fn check_tau2(tau2: f64) -> Result<()> {
    if tau2.is_finite() && tau2 > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidVariance(tau2))
    }
}

fn check_blocks(len: usize, block_len: usize) -> Result<()> {
    if !len.is_multiple_of(block_len) {
        return Err(Error::DimensionMismatch {
            what: "vector length (multiple of block length)",
            expected: (len / block_len + 1) * block_len,
            found: len,
        });
    }
    Ok(())
}

#[inline]
fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Posterior probability that an entry is active given `v`.
#[inline]
fn bernoulli_activity(v: f64, tau2: f64, power: f64, p: f64) -> f64 {
    if p >= 1.0 {
        return 1.0;
    }
    let amp = power.sqrt();
    let llr = (2.0 * v * amp - power) / (2.0 * tau2);
    logistic(llr + (p / (1.0 - p)).ln())
}

/// `E{X | X + tau Z = v}` under the scaled Bernoulli prior:
/// `sqrt(P) p T / (p T + 1 - p)` with `T = exp((2 v sqrt(P) - P) / (2 tau^2))`.
pub fn bernoulli_mmse_apply(v: f64, tau2: f64, power: f64, p: f64) -> Result<f64> {
    check_tau2(tau2)?;
    Ok(power.sqrt() * bernoulli_activity(v, tau2, power, p))
}

/// Derivative of [`bernoulli_mmse_apply`] in `v`: `(P / tau^2) s (1 - s)`,
/// where `s` is the posterior activity.
#[inline]
fn bernoulli_slope(v: f64, tau2: f64, power: f64, p: f64) -> f64 {
    let s = bernoulli_activity(v, tau2, power, p);
    power / tau2 * s * (1.0 - s)
}

pub fn bernoulli_mmse_divergence(v: &[f64], tau2: f64, power: f64, p: f64) -> Result<f64> {
    check_tau2(tau2)?;
    if v.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = v.iter().map(|&vi| bernoulli_slope(vi, tau2, power, p)).sum();
    Ok(total / v.len() as f64)
}

/// Writes softmax weights of logits `sqrt(P) v_k / tau^2` into `out` and
/// returns nothing; weights sum to one.
#[inline]
fn block_weights(v: &[f64], tau2: f64, power: f64, out: &mut [f64]) {
    let scale = power.sqrt() / tau2;
    let max = v.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(v) {
        let e = (scale * (x - max)).exp();
        *o = e;
        sum += e;
    }
    let inv = 1.0 / sum;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

/// Block posterior mean `sqrt(P) softmax_k(sqrt(P) v_k / tau^2)` for one block.
pub fn block_mmse_apply(v: &[f64], tau2: f64, power: f64, bits: u32) -> Result<Vec<f64>> {
    check_tau2(tau2)?;
    let block_len = 1usize << bits;
    if v.len() != block_len {
        return Err(Error::DimensionMismatch { what: "block length", expected: block_len, found: v.len() });
    }
    let mut out = vec![0.0; block_len];
    block_weights(v, tau2, power, &mut out);
    let amp = power.sqrt();
    out.iter_mut().for_each(|o| *o *= amp);
    Ok(out)
}

/// `(1/N) sum_u tr J_u` with `tr J_u = (P / tau^2) (1 - sum_k s_k^2)`.
pub fn block_mmse_divergence(v: &[f64], tau2: f64, power: f64, bits: u32) -> Result<f64> {
    check_tau2(tau2)?;
    let block_len = 1usize << bits;
    check_blocks(v.len(), block_len)?;
    if v.is_empty() {
        return Ok(0.0);
    }
    let mut weights = vec![0.0; block_len];
    let mut total = 0.0;
    for block in v.chunks_exact(block_len) {
        block_weights(block, tau2, power, &mut weights);
        let concentration: f64 = weights.iter().map(|s| s * s).sum();
        total += 1.0 - concentration;
    }
    Ok(power / tau2 * total / v.len() as f64)
}

/// `sign(v) max(|v| - alpha tau, 0)` elementwise.
pub fn soft_threshold_apply(v: &[f64], tau2: f64, alpha: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; v.len()];
    Denoiser::SoftThreshold { alpha }.apply(v, tau2, &mut out)?;
    Ok(out)
}

/// Fraction of entries above the threshold.
pub fn soft_threshold_divergence(v: &[f64], tau2: f64, alpha: f64) -> Result<f64> {
    Denoiser::SoftThreshold { alpha }.divergence(v, tau2)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("soft-threshold alpha must be positive, got {alpha}")))
    }
}

impl Denoise for Denoiser {
    fn block_len(&self) -> usize {
        match *self {
            Self::BlockMmse { bits, .. } => 1usize << bits,
            _ => 1,
        }
    }

    fn apply(&self, v: &[f64], tau2: f64, out: &mut [f64]) -> Result<()> {
        check_tau2(tau2)?;
        if out.len() != v.len() {
            return Err(Error::DimensionMismatch { what: "denoiser output", expected: v.len(), found: out.len() });
        }
        match *self {
            Self::SoftThreshold { alpha } => {
                check_alpha(alpha)?;
                let threshold = alpha * tau2.sqrt();
                for (o, &x) in out.iter_mut().zip(v) {
                    let mag = x.abs() - threshold;
                    *o = if mag > 0.0 { mag.copysign(x) } else { 0.0 };
                }
            }
            Self::BernoulliMmse { power, p } => {
                let amp = power.sqrt();
                for (o, &x) in out.iter_mut().zip(v) {
                    *o = amp * bernoulli_activity(x, tau2, power, p);
                }
            }
            Self::BlockMmse { power, bits } => {
                let block_len = 1usize << bits;
                check_blocks(v.len(), block_len)?;
                let amp = power.sqrt();
                for (ob, vb) in out.chunks_exact_mut(block_len).zip(v.chunks_exact(block_len)) {
                    block_weights(vb, tau2, power, ob);
                    ob.iter_mut().for_each(|o| *o *= amp);
                }
            }
        }
        Ok(())
    }

    fn divergence(&self, v: &[f64], tau2: f64) -> Result<f64> {
        check_tau2(tau2)?;
        match *self {
            Self::SoftThreshold { alpha } => {
                check_alpha(alpha)?;
                if v.is_empty() {
                    return Ok(0.0);
                }
                let threshold = alpha * tau2.sqrt();
                let active = v.iter().filter(|x| x.abs() > threshold).count();
                Ok(active as f64 / v.len() as f64)
            }
            Self::BernoulliMmse { power, p } => bernoulli_mmse_divergence(v, tau2, power, p),
            Self::BlockMmse { power, bits } => block_mmse_divergence(v, tau2, power, bits),
        }
    }
}

/// Neumaier-compensated sum.
#[derive(Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Posterior mean of a finite-support prior observed in Gaussian noise,
/// by direct enumeration. `support[j]` is a point of length `dim` with prior
/// mass `mass[j]`.
fn enumerate_posterior_mean(v: &[f64], tau2: f64, support: &[Vec<f64>], mass: &[f64]) -> Vec<f64> {
    let log_w: Vec<f64> = support
        .iter()
        .zip(mass)
        .map(|(s, &m)| {
            let dist: f64 = s.iter().zip(v).map(|(a, b)| (b - a) * (b - a)).sum();
            m.ln() - dist / (2.0 * tau2)
        })
        .collect();
    let max = log_w.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let mut norm = CompensatedSum::default();
    w.iter().for_each(|&x| norm.add(x));
    let norm = norm.total();
    (0..v.len())
        .map(|i| {
            let mut acc = CompensatedSum::default();
            for (s, &wj) in support.iter().zip(&w) {
                acc.add(wj * s[i]);
            }
            acc.total() / norm
        })
        .collect()
}

/// Brute-force `E{X | X + tau Z = v}` for either prior kind.
///
/// The separable prior is applied entrywise; the block prior expects `v` to be
/// a whole number of blocks with at most `2^8` entries per block.
pub fn posterior_mean_oracle(prior: &PriorSpec, v: &[f64], tau2: f64) -> Result<Vec<f64>> {
    check_tau2(tau2)?;
    prior.validate()?;
    match *prior {
        PriorSpec::ScaledBernoulli { power, p } => {
            let support = [vec![0.0], vec![power.sqrt()]];
            let mass = [1.0 - p, p];
            // drop the null point when p == 1 so ln(0) never enters
            let (support, mass): (&[Vec<f64>], &[f64]) =
                if p >= 1.0 { (&support[1..], &mass[1..]) } else { (&support, &mass) };
            Ok(v.iter().map(|&vi| enumerate_posterior_mean(&[vi], tau2, support, mass)[0]).collect())
        }
        PriorSpec::BlockOneHot { bits, power } => {
            if bits > 8 {
                return Err(Error::UnsupportedPrior(format!(
                    "oracle enumerates at most 2^8 support points, got 2^{bits}"
                )));
            }
            let block_len = 1usize << bits;
            check_blocks(v.len(), block_len)?;
            let amp = power.sqrt();
            let support: Vec<Vec<f64>> = (0..block_len)
                .map(|k| {
                    let mut e = vec![0.0; block_len];
                    e[k] = amp;
                    e
                })
                .collect();
            let mass = vec![1.0 / block_len as f64; block_len];
            Ok(v.chunks_exact(block_len)
                .flat_map(|block| enumerate_posterior_mean(block, tau2, &support, &mass))
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_from_seed, standard_normal};
    use rand::Rng;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    /// Central-difference trace of the Jacobian of `d` at `v`, divided by N.
    fn fd_divergence(d: &Denoiser, v: &[f64], tau2: f64, h: f64) -> f64 {
        let n = v.len();
        let mut trace = 0.0;
        let mut plus = v.to_vec();
        let mut minus = v.to_vec();
        let mut out_p = vec![0.0; n];
        let mut out_m = vec![0.0; n];
        for i in 0..n {
            plus[i] += h;
            minus[i] -= h;
            d.apply(&plus, tau2, &mut out_p).unwrap();
            d.apply(&minus, tau2, &mut out_m).unwrap();
            trace += (out_p[i] - out_m[i]) / (2.0 * h);
            plus[i] = v[i];
            minus[i] = v[i];
        }
        trace / n as f64
    }

    /// Posterior mean of the two-point prior by adaptive Simpson quadrature of
    /// `int x f(v|x) dF(x)`; the prior is discrete so the integral collapses to
    /// a two-term ratio, evaluated here from the Gaussian density directly.
    fn two_point_quadrature_mean(v: f64, tau2: f64, power: f64, p: f64) -> f64 {
        let density = |x: f64| (-(v - x) * (v - x) / (2.0 * tau2)).exp() / (2.0 * std::f64::consts::PI * tau2).sqrt();
        let amp = power.sqrt();
        let num = p * amp * density(amp);
        let den = p * density(amp) + (1.0 - p) * density(0.0);
        num / den
    }

    #[test]
    fn bernoulli_degenerate_prior() {
        for v in [-3.0, 0.0, 0.7, 5.0] {
            assert_eq!(bernoulli_mmse_apply(v, 0.3, 4.0, 1.0).unwrap(), 2.0);
        }
        assert_eq!(bernoulli_mmse_divergence(&[0.1, 2.0], 0.3, 4.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn bernoulli_midpoint() {
        let (power, p) = (2.25f64, 0.2);
        let v = power.sqrt() / 2.0;
        let out = bernoulli_mmse_apply(v, 0.7, power, p).unwrap();
        assert!(rel_err(out, power.sqrt() * p) < 1e-14);
    }

    #[test]
    fn bernoulli_matches_quadrature_oracle() {
        let expected = two_point_quadrature_mean(0.3, 0.25, 1.0, 0.5);
        // frozen from the oracle above: 1 / (1 + exp(0.8))
        assert!(rel_err(expected, 0.310_025_518_872_388_7) < 1e-12);
        let got = bernoulli_mmse_apply(0.3, 0.25, 1.0, 0.5).unwrap();
        assert!(rel_err(got, expected) < 1e-12);
    }

    #[test]
    fn invalid_variance_rejected() {
        assert!(matches!(bernoulli_mmse_apply(0.1, 0.0, 1.0, 0.5), Err(Error::InvalidVariance(_))));
        assert!(block_mmse_apply(&[0.0, 1.0], -1.0, 1.0, 1).is_err());
        assert!(soft_threshold_apply(&[1.0], f64::NAN, 1.0).is_err());
        assert!(block_mmse_divergence(&[0.0; 3], 1.0, 1.0, 1).is_err());
        assert!(block_mmse_apply(&[0.0; 3], 1.0, 1.0, 1).is_err());
    }

    #[test]
    fn bernoulli_divergence_finite_difference() {
        let d = Denoiser::BernoulliMmse { power: 1.0, p: 0.5 };
        let fd = fd_divergence(&d, &[0.3], 0.25, 1e-6);
        let exact = d.divergence(&[0.3], 0.25).unwrap();
        assert!(rel_err(exact, fd) < 1e-5, "{exact} vs {fd}");
    }

    #[test]
    fn bernoulli_divergence_large_variance_limit() {
        let (p, tau2) = (0.3, 1e6);
        let div = bernoulli_mmse_divergence(&[0.4], tau2, 1.0, p).unwrap();
        let limit = p * (1.0 - p) / tau2;
        assert!(rel_err(div, limit) < 0.01);
    }

    #[test]
    fn block_low_noise_concentrates() {
        let out = block_mmse_apply(&[0.0, 1.0, 0.0, 0.0], 1e-8, 1.0, 2).unwrap();
        for (k, o) in out.iter().enumerate() {
            let target = if k == 1 { 1.0 } else { 0.0 };
            assert!((o - target).abs() < 1e-6);
        }
    }

    #[test]
    fn block_zero_input_is_uniform() {
        let out = block_mmse_apply(&[0.0; 8], 0.3, 4.0, 3).unwrap();
        for o in out {
            assert!((o - 2.0 / 8.0).abs() < 1e-15);
        }
    }

    #[test]
    fn block_two_point_example() {
        // posterior weight of e_1: exp(-||v - e1||^2 / 2t) / (sum over e1, e2)
        let (v0, v1, t) = (0.8f64, 0.1f64, 0.5f64);
        let d1 = (v0 - 1.0).powi(2) + v1.powi(2);
        let d2 = v0.powi(2) + (v1 - 1.0).powi(2);
        let w1 = (-d1 / (2.0 * t)).exp();
        let w2 = (-d2 / (2.0 * t)).exp();
        let expected = [w1 / (w1 + w2), w2 / (w1 + w2)];
        let out = block_mmse_apply(&[v0, v1], t, 1.0, 1).unwrap();
        for (o, e) in out.iter().zip(expected) {
            assert!(rel_err(*o, e) < 1e-13);
        }
    }

    #[test]
    fn block_divergence_at_uniform_point() {
        let div = block_mmse_divergence(&[0.0; 4], 1.0, 1.0, 2).unwrap();
        // trace 0.75 over N = 4 entries
        assert!((div * 4.0 - 0.75).abs() < 1e-14);
        let d = Denoiser::BlockMmse { power: 1.0, bits: 2 };
        let fd = fd_divergence(&d, &[0.0; 4], 1.0, 1e-5);
        assert!(rel_err(div, fd) < 1e-6);
    }

    #[test]
    fn block_divergence_saturates() {
        let div = block_mmse_divergence(&[1.0, 0.0, 0.0, 0.0], 1e-8, 1.0, 2).unwrap();
        assert!(div.abs() < 1e-12);
    }

    /// Divergence written as the two-sum expression over unnormalized
    /// Gaussian weights, before simplification.
    fn block_trace_two_term(v: &[f64], tau2: f64, power: f64) -> f64 {
        let amp = power.sqrt();
        let l = v.len();
        let dist = |k: usize| -> f64 {
            (0..l)
                .map(|i| {
                    let e = if i == k { amp } else { 0.0 };
                    (v[i] - e).powi(2)
                })
                .sum()
        };
        let w: Vec<f64> = (0..l).map(|k| (-dist(k) / (2.0 * tau2)).exp()).collect();
        let z: f64 = w.iter().sum();
        let first: f64 = (0..l).map(|k| (amp - v[k]) / tau2 * w[k]).sum::<f64>() / z;
        let second: f64 = (0..l)
            .map(|k| {
                w[k] * (0..l)
                    .map(|m| {
                        let delta = if k == m { amp } else { 0.0 };
                        (delta - v[k]) / tau2 * w[m]
                    })
                    .sum::<f64>()
            })
            .sum::<f64>()
            / (z * z);
        amp * (first - second)
    }

    #[test]
    fn block_divergence_matches_unsimplified_form_and_finite_differences() {
        let mut rng = rng_from_seed(17);
        let (bits, tau2, power) = (3u32, 0.4, 2.0);
        let v: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..2.0)).collect();
        let d = Denoiser::BlockMmse { power, bits };
        let div = d.divergence(&v, tau2).unwrap();
        let fd = fd_divergence(&d, &v, tau2, 1e-6);
        assert!(rel_err(div, fd) < 1e-5, "{div} vs {fd}");
        let two_term = block_trace_two_term(&v, tau2, power) / 8.0;
        assert!(rel_err(div, two_term) < 1e-10, "{div} vs {two_term}");
    }

    #[test]
    fn soft_threshold_examples() {
        let t = 1.3 * 0.5f64.sqrt();
        assert_eq!(soft_threshold_apply(&[t, -t], 0.5, 1.3).unwrap(), vec![0.0, 0.0]);
        assert_eq!(soft_threshold_apply(&[0.0], 0.5, 1.3).unwrap(), vec![0.0]);
        assert_eq!(soft_threshold_apply(&[3.0, -3.0], 1.0, 1.0).unwrap(), vec![2.0, -2.0]);

        assert_eq!(soft_threshold_divergence(&[0.0; 5], 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(soft_threshold_divergence(&[2.0, -2.0], 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(soft_threshold_divergence(&[2.0, 0.1, -5.0, 0.3], 1.0, 1.0).unwrap(), 0.5);
    }

    #[test]
    fn oracle_returns_support_point_at_low_noise() {
        let prior = PriorSpec::block_one_hot(2, 9.0).unwrap();
        let out = posterior_mean_oracle(&prior, &[0.0, 0.0, 3.0, 0.0], 1e-6).unwrap();
        assert_eq!(out, vec![0.0, 0.0, 3.0, 0.0]);
        let prior = PriorSpec::scaled_bernoulli(9.0, 0.1).unwrap();
        let out = posterior_mean_oracle(&prior, &[0.0, 3.0], 1e-6).unwrap();
        assert_eq!(out, vec![0.0, 3.0]);
    }

    #[test]
    fn oracle_rejects_large_blocks() {
        let prior = PriorSpec::block_one_hot(9, 1.0).unwrap();
        assert!(matches!(posterior_mean_oracle(&prior, &vec![0.0; 512], 1.0), Err(Error::UnsupportedPrior(_))));
    }

    #[test]
    fn bernoulli_matches_oracle_on_random_points() {
        let mut rng = rng_from_seed(1);
        for _ in 0..1000 {
            let power = rng.random_range(0.1f64..20.0);
            let p = rng.random_range(0.001..0.999);
            let tau2 = rng.random_range(0.05..4.0) * power;
            let v = power.sqrt() * rng.random_range(-1.5..2.5);
            let prior = PriorSpec::scaled_bernoulli(power, p).unwrap();
            let oracle = posterior_mean_oracle(&prior, &[v], tau2).unwrap()[0];
            let got = bernoulli_mmse_apply(v, tau2, power, p).unwrap();
            assert!(rel_err(got, oracle) <= 1e-10, "{got} vs {oracle}");
        }
    }

    #[test]
    fn block_matches_oracle_on_random_blocks() {
        let mut rng = rng_from_seed(2);
        for _ in 0..1000 {
            let bits = rng.random_range(1..=6u32);
            let l = 1usize << bits;
            let power = rng.random_range(0.1f64..20.0);
            let tau2 = rng.random_range(0.05..4.0) * power;
            let amp = power.sqrt();
            let hot = rng.random_range(0..l);
            let v: Vec<f64> = (0..l)
                .map(|k| {
                    let base = if k == hot { amp } else { 0.0 };
                    base + tau2.sqrt() * standard_normal(&mut rng)
                })
                .collect();
            let prior = PriorSpec::block_one_hot(bits, power).unwrap();
            let oracle = posterior_mean_oracle(&prior, &v, tau2).unwrap();
            let got = block_mmse_apply(&v, tau2, power, bits).unwrap();
            for (g, o) in got.iter().zip(&oracle) {
                assert!(rel_err(*g, *o) <= 1e-10, "{g} vs {o}");
            }
        }
    }

    #[test]
    fn block_output_range_and_sum() {
        let mut rng = rng_from_seed(3);
        for _ in 0..200 {
            let v: Vec<f64> = (0..16).map(|_| 3.0 * standard_normal(&mut rng)).collect();
            let out = block_mmse_apply(&v, 0.5, 4.0, 4).unwrap();
            let sum: f64 = out.iter().sum();
            assert!((sum - 2.0).abs() < 1e-12);
            assert!(out.iter().all(|&o| (0.0..=2.0).contains(&o)));
        }
    }

    #[test]
    fn bernoulli_is_increasing_and_bounded() {
        let mut prev = f64::NEG_INFINITY;
        for i in 0..400 {
            let v = -2.0 + i as f64 * 0.01;
            let out = bernoulli_mmse_apply(v, 0.2, 1.0, 1.0 / 16.0).unwrap();
            assert!(out > prev);
            assert!(out > 0.0 && out < 1.0);
            prev = out;
        }
    }

    #[test]
    fn denoisers_are_lipschitz_on_a_grid() {
        let denoisers = [Denoiser::SoftThreshold { alpha: 1.1 }, Denoiser::BernoulliMmse { power: 2.0, p: 0.1 }];
        for d in denoisers {
            let tau2 = 0.3;
            let grid: Vec<f64> = (0..2000).map(|i| -4.0 + i as f64 * 0.004).collect();
            let mut out = vec![0.0; grid.len()];
            d.apply(&grid, tau2, &mut out).unwrap();
            let bound = match d {
                Denoiser::BernoulliMmse { power, .. } => power / tau2 / 4.0,
                _ => 1.0,
            };
            for w in 1..grid.len() {
                let slope = (out[w] - out[w - 1]).abs() / (grid[w] - grid[w - 1]);
                assert!(slope <= bound + 1e-9, "{d:?}: slope {slope}");
            }
        }
    }

    #[test]
    fn all_divergences_match_finite_differences_at_random_points() {
        let mut rng = rng_from_seed(4);
        for _ in 0..100 {
            let tau2 = rng.random_range(0.1..2.0);
            let power = rng.random_range(0.5..4.0);
            let v: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..2.5)).collect();
            for d in [Denoiser::BernoulliMmse { power, p: 0.125 }, Denoiser::BlockMmse { power, bits: 3 }] {
                let exact = d.divergence(&v, tau2).unwrap();
                let fd = fd_divergence(&d, &v, tau2, 1e-6);
                assert!(rel_err(exact, fd) <= 1e-5, "{d:?}: {exact} vs {fd}");
            }
            // soft threshold: keep the points away from the kink
            let alpha = 1.0;
            let thr = alpha * tau2.sqrt();
            let v_soft: Vec<f64> = v.iter().map(|x| if (x.abs() - thr).abs() < 1e-3 { x + 0.01 } else { *x }).collect();
            let d = Denoiser::SoftThreshold { alpha };
            let exact = d.divergence(&v_soft, tau2).unwrap();
            let fd = fd_divergence(&d, &v_soft, tau2, 1e-6);
            assert!((exact - fd).abs() <= 1e-5 * exact.max(1e-3), "{exact} vs {fd}");
        }
    }

    #[test]
    fn mmse_denoisers_beat_soft_threshold() {
        // v = X + tau Z with X from the true one-hot prior
        let (bits, power, tau2) = (4u32, 4.0f64, 1.0f64);
        let l = 1usize << bits;
        let blocks = 100_000 / l;
        let mut rng = rng_from_seed(5);
        let mut x = vec![0.0; blocks * l];
        let mut v = vec![0.0; blocks * l];
        for b in 0..blocks {
            let hot = rng.random_range(0..l);
            x[b * l + hot] = power.sqrt();
            for i in 0..l {
                v[b * l + i] = x[b * l + i] + tau2.sqrt() * standard_normal(&mut rng);
            }
        }
        let sq_errs = |d: &Denoiser| -> Vec<f64> {
            let mut out = vec![0.0; v.len()];
            d.apply(&v, tau2, &mut out).unwrap();
            out.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).collect()
        };
        let stats = |e: &[f64]| {
            let n = e.len() as f64;
            let mean = e.iter().sum::<f64>() / n;
            let var = e.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (mean, (var / n).sqrt())
        };
        let p = 1.0 / l as f64;
        let mmse = [
            stats(&sq_errs(&Denoiser::BernoulliMmse { power, p })),
            stats(&sq_errs(&Denoiser::BlockMmse { power, bits })),
        ];
        for i in 0..=125 {
            let alpha = 0.5 + 0.02 * i as f64;
            let (soft_mean, soft_se) = stats(&sq_errs(&Denoiser::SoftThreshold { alpha }));
            for (mean, se) in mmse {
                let spread = 3.0 * (se * se + soft_se * soft_se).sqrt();
                assert!(mean <= soft_mean + spread, "alpha {alpha}: {mean} vs {soft_mean}");
            }
        }
        // block posterior uses strictly more information
        assert!(mmse[1].0 < mmse[0].0);
    }
}
