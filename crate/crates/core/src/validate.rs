//! Oracle and invariant checks behind the `validate` subcommand.

use rand::Rng;
use serde::Serialize;

use crate::denoise::{bernoulli_mmse_apply, block_mmse_apply, posterior_mean_oracle, Denoise, Denoiser, PriorSpec};
use crate::error::Result;
use crate::quadrature::GaussHermite;
use crate::rng::{derive_seed, rng_from_seed, standard_normal, Stream};
use crate::se::{se_init, se_step_separable, QuadratureSpec};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }
}

/// Largest relative error of the two MMSE denoisers against brute-force
/// enumeration over `points` random inputs each: `(separable, block)`.
pub fn mmse_oracle_errors(points: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = rng_from_seed(derive_seed(seed, 0, Stream::Auxiliary));
    let mut sep = 0.0f64;
    for _ in 0..points {
        let power: f64 = rng.random_range(0.1..20.0);
        let p = rng.random_range(0.001..0.999);
        let tau2 = rng.random_range(0.05..4.0) * power;
        let v = power.sqrt() * rng.random_range(-1.5..2.5);
        let oracle = posterior_mean_oracle(&PriorSpec::scaled_bernoulli(power, p)?, &[v], tau2)?[0];
        sep = sep.max(rel_err(bernoulli_mmse_apply(v, tau2, power, p)?, oracle));
    }
    let mut rng = rng_from_seed(derive_seed(seed, 1, Stream::Auxiliary));
    let mut blk = 0.0f64;
    for _ in 0..points {
        let bits = rng.random_range(1..=8u32);
        let l = 1usize << bits;
        let power: f64 = rng.random_range(0.1..20.0);
        let tau2 = rng.random_range(0.05..4.0) * power;
        let hot = rng.random_range(0..l);
        let v: Vec<f64> = (0..l)
            .map(|k| {
                let base = if k == hot { power.sqrt() } else { 0.0 };
                base + tau2.sqrt() * standard_normal(&mut rng)
            })
            .collect();
        let oracle = posterior_mean_oracle(&PriorSpec::block_one_hot(bits, power)?, &v, tau2)?;
        let got = block_mmse_apply(&v, tau2, power, bits)?;
        for (g, o) in got.iter().zip(&oracle) {
            blk = blk.max(rel_err(*g, *o));
        }
    }
    Ok((sep, blk))
}

/// Central-difference Jacobian trace divided by the length.
pub fn finite_difference_divergence(d: &dyn Denoise, v: &[f64], tau2: f64, h: f64) -> Result<f64> {
    let n = v.len();
    let mut trace = 0.0;
    let mut plus = v.to_vec();
    let mut minus = v.to_vec();
    let mut out_p = vec![0.0; n];
    let mut out_m = vec![0.0; n];
    for i in 0..n {
        plus[i] += h;
        minus[i] -= h;
        d.apply(&plus, tau2, &mut out_p)?;
        d.apply(&minus, tau2, &mut out_m)?;
        trace += (out_p[i] - out_m[i]) / (2.0 * h);
        plus[i] = v[i];
        minus[i] = v[i];
    }
    Ok(trace / n as f64)
}

/// Largest relative error between analytic and finite-difference divergences
/// at `points` random inputs: `[soft, separable MMSE, block MMSE]`. Soft
/// threshold inputs are moved off the kink set.
pub fn divergence_errors(points: usize, seed: u64) -> Result<[f64; 3]> {
    let mut rng = rng_from_seed(derive_seed(seed, 2, Stream::Auxiliary));
    let mut worst = [0.0f64; 3];
    for _ in 0..points {
        let tau2: f64 = rng.random_range(0.1..2.0);
        let power = rng.random_range(0.5..4.0);
        let alpha = rng.random_range(0.5..2.0);
        let v: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..2.5)).collect();
        let thr = alpha * tau2.sqrt();
        let v_soft: Vec<f64> = v.iter().map(|x| if (x.abs() - thr).abs() < 1e-3 { x + 0.01 } else { *x }).collect();
        let cases: [(Denoiser, &[f64]); 3] = [
            (Denoiser::SoftThreshold { alpha }, &v_soft),
            (Denoiser::BernoulliMmse { power, p: 1.0 / 16.0 }, &v),
            (Denoiser::BlockMmse { power, bits: 4 }, &v),
        ];
        for (slot, (d, input)) in worst.iter_mut().zip(cases) {
            let exact = d.divergence(input, tau2)?;
            let fd = finite_difference_divergence(&d, input, tau2, 1e-6)?;
            let err = if exact == 0.0 { fd.abs() } else { rel_err(fd, exact) };
            *slot = slot.max(err);
        }
    }
    Ok(worst)
}

/// One separable step by 61-node quadrature and by `samples` Monte Carlo
/// draws: `(quadrature, monte carlo, standard error)`.
pub fn quadrature_vs_monte_carlo(samples: usize, seed: u64) -> Result<(f64, f64, f64)> {
    let (beta, p, power, noise) = (1.0 / 16.0, 1.0 / 16.0, 1.0, 0.1);
    let prior = PriorSpec::scaled_bernoulli(power, p)?;
    let d = Denoiser::BernoulliMmse { power, p };
    let tau2 = se_init(&prior, beta, noise);
    let gh = se_step_separable(tau2, &prior, &d, beta, noise, &QuadratureSpec::gauss_hermite(61))?;
    let mc = se_step_separable(tau2, &prior, &d, beta, noise, &QuadratureSpec::monte_carlo(samples, seed))?;
    Ok((gh.value, mc.value, mc.std_error))
}

/// The full suite with its pass thresholds.
pub fn run_all(seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let (sep, blk) = mmse_oracle_errors(1000, seed)?;
    out.push(Check {
        name: "separable MMSE vs enumeration oracle".into(),
        passed: sep <= 1e-10,
        detail: format!("max rel err {sep:.3e} over 1000 points (limit 1e-10)"),
    });
    out.push(Check {
        name: "block MMSE vs enumeration oracle".into(),
        passed: blk <= 1e-10,
        detail: format!("max rel err {blk:.3e} over 1000 blocks (limit 1e-10)"),
    });
    let div = divergence_errors(100, seed)?;
    for (name, err) in ["soft threshold", "separable MMSE", "block MMSE"].iter().zip(div) {
        out.push(Check {
            name: format!("{name} divergence vs finite differences"),
            passed: err <= 1e-5,
            detail: format!("max rel err {err:.3e} over 100 points (limit 1e-5)"),
        });
    }
    let (gh, mc, se) = quadrature_vs_monte_carlo(1_000_000, seed)?;
    out.push(Check {
        name: "state evolution quadrature vs Monte Carlo".into(),
        passed: (gh - mc).abs() <= 3.0 * se,
        detail: format!("quadrature {gh:.8}, Monte Carlo {mc:.8} +- {se:.2e}"),
    });
    let q = GaussHermite::new(61)?;
    let m4 = q.expect(|z| z.powi(4));
    out.push(Check {
        name: "Gauss-Hermite moments".into(),
        passed: (q.expect(|_| 1.0) - 1.0).abs() < 1e-12 && (m4 - 3.0).abs() < 1e-11,
        detail: format!("E Z^4 = {m4:.15}"),
    });
    let init = se_init(&PriorSpec::scaled_bernoulli(1.0, 1.0 / 256.0)?, 8.0 / 256.0, 0.5);
    out.push(Check {
        name: "state evolution initial value".into(),
        passed: (init - 0.625).abs() < 1e-15,
        detail: format!("K=8, n=8, P=1, noise 0.5 gives {init}"),
    });
    Ok(out)
}
