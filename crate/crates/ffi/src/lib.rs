//! C ABI over the `ampmud` simulator.
//!
//! Every fallible function returns an [`AmpmudStatus`] and writes results
//! through out-pointers. On failure [`ampmud_last_error_message`] describes
//! the error for the calling thread. Handles are opaque and owned by the
//! caller until passed to the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ampmud::harness::{
    analytical_trajectory, parse_spec, rate_search, run_trial, sweep_ebn0, ExperimentSpec, FrontierRow, MatrixPolicy,
    MatrixStorage, PointStats, Sweep, SystemTemplate, TrialPlan,
};
use ampmud::{AmpRunConfig, DecoderKind, Denoise, Denoiser, Error, SeTrajectory, SystemConfig};

pub const AMPMUD_DECODER_SOFT: u32 = 0;
pub const AMPMUD_DECODER_RBS: u32 = 1;
pub const AMPMUD_DECODER_BS: u32 = 2;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmpmudStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    NumericalDivergence = 4,
    Resource = 5,
    Io = 6,
    Panic = 7,
}

/// A validated experiment spec.
pub struct AmpmudSpec(ExperimentSpec);

/// Rows of an Eb/N0 sweep.
pub struct AmpmudSweep(Vec<PointStats>);

/// Frontier rows of a rate search.
pub struct AmpmudFrontier(Vec<FrontierRow>);

/// A state-evolution trajectory.
pub struct AmpmudSe(SeTrajectory);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AmpmudPointStats {
    pub decoder: u32,
    pub ebn0_db: f64,
    pub rate: f64,
    pub channel_uses: usize,
    pub trials: usize,
    pub diverged: usize,
    pub block_errors: u64,
    pub decisions: u64,
    pub bler: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub mean_iterations: f64,
    pub stopped_early: bool,
}

/// `rate`, `channel_uses` and `ci_hi` are NaN / 0 / NaN when infeasible.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AmpmudFrontierRow {
    pub decoder: u32,
    pub ebn0_db: f64,
    pub target_pe: f64,
    pub feasible: bool,
    pub rate: f64,
    pub channel_uses: usize,
    pub ci_hi: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AmpmudTrialOutcome {
    pub block_errors: usize,
    pub devices: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// One operating point for single trials and state evolution.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AmpmudSystem {
    pub devices: usize,
    pub bits: u32,
    pub rate: f64,
    pub ebn0_db: f64,
    pub noise_var: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Fail(AmpmudStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidConfig(_) | Error::UnsupportedPrior(_) => AmpmudStatus::InvalidConfig,
            Error::NumericalDivergence { .. } | Error::Precision { .. } => AmpmudStatus::NumericalDivergence,
            Error::Resource { .. } => AmpmudStatus::Resource,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::MalformedMatrix(_) => AmpmudStatus::Io,
            _ => AmpmudStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(AmpmudStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(AmpmudStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AmpmudStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AmpmudStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            AmpmudStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn decoder_kind(code: u32) -> Result<DecoderKind, Fail> {
    match code {
        AMPMUD_DECODER_SOFT => Ok(DecoderKind::Soft),
        AMPMUD_DECODER_RBS => Ok(DecoderKind::Rbs),
        AMPMUD_DECODER_BS => Ok(DecoderKind::Bs),
        other => Err(invalid(format!("unknown decoder code {other}"))),
    }
}

fn decoder_code(kind: DecoderKind) -> u32 {
    match kind {
        DecoderKind::Soft => AMPMUD_DECODER_SOFT,
        DecoderKind::Rbs => AMPMUD_DECODER_RBS,
        DecoderKind::Bs => AMPMUD_DECODER_BS,
    }
}

fn resolve_system(s: &AmpmudSystem) -> Result<SystemConfig, Fail> {
    let template =
        SystemTemplate { devices: s.devices, bits: s.bits, rate: s.rate, ebn0_db: s.ebn0_db, noise_var: s.noise_var };
    Ok(template.resolve(s.ebn0_db, s.rate)?)
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn ampmud_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn ampmud_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must be null or a pointer returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ampmud_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses and validates an experiment spec (or manifest) from JSON.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ampmud_spec_from_json(json: *const c_char, out: *mut *mut AmpmudSpec) -> AmpmudStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json).to_str().map_err(|e| invalid(format!("json is not UTF-8: {e}")))?;
        let spec = parse_spec(text).map_err(|e| Fail(AmpmudStatus::InvalidConfig, e.to_string()))?;
        let problems = spec.problems();
        if !problems.is_empty() {
            return Err(Fail(AmpmudStatus::InvalidConfig, problems.join("; ")));
        }
        write_out(out, Box::into_raw(Box::new(AmpmudSpec(spec))), "out")
    })
}

/// Serializes a spec to pretty JSON. Free the result with
/// [`ampmud_string_free`].
///
/// # Safety
/// `spec` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ampmud_spec_to_json(spec: *const AmpmudSpec, out: *mut *mut c_char) -> AmpmudStatus {
    guard(|| {
        let spec = deref(spec, "spec")?;
        let text = spec.0.to_json()?;
        let c = CString::new(text).map_err(|e| invalid(e.to_string()))?;
        write_out(out, c.into_raw(), "out")
    })
}

/// # Safety
/// `spec` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ampmud_spec_set_seed(spec: *mut AmpmudSpec, seed: u64) -> AmpmudStatus {
    guard(|| {
        let spec = spec.as_mut().ok_or_else(|| null("spec"))?;
        spec.0.master_seed = seed;
        Ok(())
    })
}

/// # Safety
/// `spec` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ampmud_spec_set_trials(spec: *mut AmpmudSpec, trials: usize) -> AmpmudStatus {
    guard(|| {
        let spec = spec.as_mut().ok_or_else(|| null("spec"))?;
        if trials == 0 {
            return Err(invalid("trials must be >= 1"));
        }
        spec.0.trials = trials;
        Ok(())
    })
}

/// # Safety
/// `spec` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ampmud_spec_free(spec: *mut AmpmudSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Runs an Eb/N0 sweep. The spec must hold an `EbN0Grid` sweep.
///
/// # Safety
/// `spec` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ampmud_sweep_run(spec: *const AmpmudSpec, out: *mut *mut AmpmudSweep) -> AmpmudStatus {
    guard(|| {
        let spec = deref(spec, "spec")?;
        let result = sweep_ebn0(&spec.0)?;
        write_out(out, Box::into_raw(Box::new(AmpmudSweep(result.rows))), "out")
    })
}

/// # Safety
/// `sweep` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ampmud_sweep_len(sweep: *const AmpmudSweep) -> usize {
    sweep.as_ref().map_or(0, |s| s.0.len())
}

/// # Safety
/// `sweep` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ampmud_sweep_row(
    sweep: *const AmpmudSweep,
    index: usize,
    out: *mut AmpmudPointStats,
) -> AmpmudStatus {
    guard(|| {
        let sweep = deref(sweep, "sweep")?;
        let r =
            sweep.0.get(index).ok_or_else(|| invalid(format!("row {index} out of range ({} rows)", sweep.0.len())))?;
        let row = AmpmudPointStats {
            decoder: decoder_code(r.decoder),
            ebn0_db: r.ebn0_db,
            rate: r.rate,
            channel_uses: r.channel_uses,
            trials: r.trials,
            diverged: r.diverged,
            block_errors: r.block_errors,
            decisions: r.decisions,
            bler: r.bler,
            ci_lo: r.ci_lo,
            ci_hi: r.ci_hi,
            mean_iterations: r.mean_iterations,
            stopped_early: r.stopped_early,
        };
        write_out(out, row, "out")
    })
}

/// # Safety
/// `sweep` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ampmud_sweep_free(sweep: *mut AmpmudSweep) {
    if !sweep.is_null() {
        drop(Box::from_raw(sweep));
    }
}

/// Runs a rate search. The spec must hold a `RateSearch` sweep.
///
/// # Safety
/// `spec` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ampmud_frontier_run(spec: *const AmpmudSpec, out: *mut *mut AmpmudFrontier) -> AmpmudStatus {
    guard(|| {
        let spec = deref(spec, "spec")?;
        let result = rate_search(&spec.0)?;
        write_out(out, Box::into_raw(Box::new(AmpmudFrontier(result.frontier))), "out")
    })
}

/// # Safety
/// `frontier` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ampmud_frontier_len(frontier: *const AmpmudFrontier) -> usize {
    frontier.as_ref().map_or(0, |f| f.0.len())
}

/// # Safety
/// `frontier` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ampmud_frontier_row(
    frontier: *const AmpmudFrontier,
    index: usize,
    out: *mut AmpmudFrontierRow,
) -> AmpmudStatus {
    guard(|| {
        let frontier = deref(frontier, "frontier")?;
        let r = frontier
            .0
            .get(index)
            .ok_or_else(|| invalid(format!("row {index} out of range ({} rows)", frontier.0.len())))?;
        let row = AmpmudFrontierRow {
            decoder: decoder_code(r.decoder),
            ebn0_db: r.ebn0_db,
            target_pe: r.target_pe,
            feasible: r.feasible(),
            rate: r.rate.unwrap_or(f64::NAN),
            channel_uses: r.channel_uses.unwrap_or(0),
            ci_hi: r.ci_hi.unwrap_or(f64::NAN),
        };
        write_out(out, row, "out")
    })
}

/// # Safety
/// `frontier` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ampmud_frontier_free(frontier: *mut AmpmudFrontier) {
    if !frontier.is_null() {
        drop(Box::from_raw(frontier));
    }
}

/// State evolution of `decoder` at `system` over `iterations` steps. `seed`
/// drives the Monte Carlo used by the block decoder; `system.devices` is
/// ignored.
///
/// # Safety
/// `system` must be readable; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ampmud_se_run(
    system: *const AmpmudSystem,
    decoder: u32,
    soft_alpha: f64,
    iterations: usize,
    seed: u64,
    out: *mut *mut AmpmudSe,
) -> AmpmudStatus {
    guard(|| {
        let mut s = *deref(system, "system")?;
        s.devices = s.devices.max(1);
        let cfg = resolve_system(&s)?;
        let kind = decoder_kind(decoder)?;
        if !(soft_alpha.is_finite() && soft_alpha > 0.0) {
            return Err(invalid("soft_alpha must be positive"));
        }
        let traj = analytical_trajectory(&kind.denoiser(&cfg, soft_alpha), &cfg, iterations, seed)?;
        write_out(out, Box::into_raw(Box::new(AmpmudSe(traj))), "out")
    })
}

/// Number of points, `iterations + 1`.
///
/// # Safety
/// `se` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ampmud_se_len(se: *const AmpmudSe) -> usize {
    se.as_ref().map_or(0, |s| s.0.tau2.len())
}

/// `tau_t^2` and the multiuser efficiency at step `t`.
///
/// # Safety
/// `se` must be a live handle; `tau2` and `xi` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ampmud_se_point(se: *const AmpmudSe, t: usize, tau2: *mut f64, xi: *mut f64) -> AmpmudStatus {
    guard(|| {
        let se = deref(se, "se")?;
        let v =
            *se.0.tau2.get(t).ok_or_else(|| invalid(format!("t = {t} out of range ({} points)", se.0.tau2.len())))?;
        write_out(tau2, v, "tau2")?;
        write_out(xi, se.0.mue[t], "xi")
    })
}

/// # Safety
/// `se` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ampmud_se_free(se: *mut AmpmudSe) {
    if !se.is_null() {
        drop(Box::from_raw(se));
    }
}

/// Runs trial `trial` of the seeded ensemble at `system`: fresh dense
/// codebook, messages and noise derived from `master_seed`.
///
/// # Safety
/// `system` must be readable; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ampmud_trial_run(
    system: *const AmpmudSystem,
    decoder: u32,
    soft_alpha: f64,
    max_iterations: usize,
    master_seed: u64,
    trial: u64,
    out: *mut AmpmudTrialOutcome,
) -> AmpmudStatus {
    guard(|| {
        let s = *deref(system, "system")?;
        let cfg = resolve_system(&s)?;
        let kind = decoder_kind(decoder)?;
        let spec = ExperimentSpec {
            system: SystemTemplate {
                devices: s.devices,
                bits: s.bits,
                rate: s.rate,
                ebn0_db: s.ebn0_db,
                noise_var: s.noise_var,
            },
            decoders: vec![kind],
            soft_alpha,
            sweep: Sweep::EbN0Grid { ebn0_db: vec![s.ebn0_db] },
            trials: 1,
            master_seed,
            matrix_policy: MatrixPolicy::FreshPerTrial,
            storage: MatrixStorage::Dense,
            amp: AmpRunConfig { max_iterations, ..AmpRunConfig::default() },
            memory_budget_bytes: ampmud::model::DEFAULT_MEMORY_BUDGET,
            early_stop: false,
        };
        let problems = spec.problems();
        if !problems.is_empty() {
            return Err(Fail(AmpmudStatus::InvalidConfig, problems.join("; ")));
        }
        let plan = TrialPlan::new(&spec, cfg, kind, spec.amp)?;
        let r = run_trial(&plan, trial)?;
        let outcome = AmpmudTrialOutcome {
            block_errors: r.block_errors,
            devices: r.devices,
            iterations: r.iterations,
            converged: r.converged,
        };
        write_out(out, outcome, "out")
    })
}

/// Applies a denoiser to `len` entries of `v` and reports its divergence.
/// `bits` sets the block length `2^bits` of the block decoder and the
/// activity `2^-bits` of the separable one; `len` must be a multiple of the
/// block length for the block decoder.
///
/// # Safety
/// `v` and `out` must point to `len` doubles; `divergence` must be writable
/// or null.
#[no_mangle]
pub unsafe extern "C" fn ampmud_denoise(
    decoder: u32,
    power: f64,
    bits: u32,
    soft_alpha: f64,
    v: *const f64,
    len: usize,
    tau2: f64,
    out: *mut f64,
    divergence: *mut f64,
) -> AmpmudStatus {
    guard(|| {
        if v.is_null() || out.is_null() {
            return Err(null("v or out"));
        }
        if bits == 0 || bits > ampmud::model::MAX_BITS {
            return Err(invalid(format!("bits must be in 1..={}", ampmud::model::MAX_BITS)));
        }
        let d = match decoder_kind(decoder)? {
            DecoderKind::Soft => Denoiser::SoftThreshold { alpha: soft_alpha },
            DecoderKind::Rbs => Denoiser::BernoulliMmse { power, p: (-(bits as f64)).exp2() },
            DecoderKind::Bs => Denoiser::BlockMmse { power, bits },
        };
        let input = std::slice::from_raw_parts(v, len);
        let output = std::slice::from_raw_parts_mut(out, len);
        d.apply(input, tau2, output)?;
        if !divergence.is_null() {
            divergence.write(d.divergence(input, tau2)?);
        }
        Ok(())
    })
}
