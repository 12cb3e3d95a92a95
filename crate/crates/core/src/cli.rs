//! Command-line front end.
//!
//! Flags override values from `--config`. Without a config file every
//! required field must come from flags; missing ones are listed together.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::amp::AmpRunConfig;
use crate::denoise::{DecoderKind, DEFAULT_SOFT_ALPHA};
use crate::error::Error;
use crate::harness::{
    analytical_trajectory, load_spec, mue_trajectory_experiment, rate_search, sweep_ebn0, write_frontier_csv,
    write_sweep_csv, ExperimentSpec, Manifest, MatrixPolicy, MatrixStorage, Sweep, SystemTemplate,
};
use crate::model::SystemConfig;
use crate::validate;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_CONFIG: i32 = 65;

const CONVENTIONS: &str = "\
Conventions:
  Eb/N0 = P / (2 K sigma^2) with noise variance sigma^2 = 1 unless the config
  sets system.noise_var. P is the per-device transmit power, K the bits per
  packet. Rates R are bits per channel use per device; n = round(K / R) and the
  realized rate K / n is reported.

CSV schemas:
  simulate (simulate.csv), sweep (sweep.csv), frontier points (points.csv):
    decoder,ebn0_db,rate,channel_uses,trials,diverged,block_errors,decisions,
    bler,ci_lo,ci_hi,mean_iterations,stopped_early
  frontier (frontier.csv):
    decoder,ebn0_db,target_pe,rate,channel_uses,ci_hi,feasible
  mue-fig2 (one mue_<decoder>_ebn0_<dB>_R_<rate>.csv per curve):
    t,xi_empirical_mean,xi_empirical_std,xi_analytical
  se (se.csv):
    trial_id,t,tau2_hat,mse,mue_hat

Confidence bounds are Wilson 95% intervals. Every run with --out writes
manifest.json beside its CSVs; pass it back through --config to reproduce.

Exit codes: 0 success, 1 runtime error, 2 infeasible or divergence-dominated
result, 64 usage error, 65 invalid configuration.";

#[derive(Debug, Parser)]
#[command(name = "ampmud", version, about = "AMP multiuser detection simulator", after_help = CONVENTIONS)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// BLER of one decoder at one operating point.
    Simulate(Common),
    /// BLER over an Eb/N0 grid.
    Sweep(Common),
    /// Largest feasible rate per decoder and Eb/N0.
    Frontier(Common),
    /// State-evolution trajectory only.
    Se(Common),
    /// Empirical and analytical multiuser efficiency per iteration.
    #[command(name = "mue-fig2")]
    MueFig2(Common),
    /// Oracle and invariant checks.
    Validate(Common),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Experiment spec or manifest (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub decoder: Vec<DecoderKind>,
    #[arg(long = "ebn0-db", value_delimiter = ',', allow_hyphen_values = true)]
    pub ebn0_db: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub rate: Vec<f64>,
    #[arg(long)]
    pub devices: Option<usize>,
    #[arg(long)]
    pub bits: Option<u32>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; CSVs go to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long = "max-iters")]
    pub max_iters: Option<usize>,
    /// Soft-threshold multiplier.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Frontier target block error probability.
    #[arg(long = "target-pe")]
    pub target_pe: Option<f64>,
    /// Iterations for se and mue-fig2.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Frontier: abandon a rate once its BLER lower bound exceeds the target.
    #[arg(long = "early-stop")]
    pub early_stop: bool,
    #[arg(long, value_parser = parse_storage)]
    pub storage: Option<MatrixStorage>,
    #[arg(long = "matrix-policy", value_parser = parse_policy)]
    pub matrix_policy: Option<MatrixPolicy>,
}

fn parse_storage(s: &str) -> Result<MatrixStorage, String> {
    match s {
        "dense" => Ok(MatrixStorage::Dense),
        "implicit" => Ok(MatrixStorage::Implicit),
        _ => Err("expected dense or implicit".into()),
    }
}

fn parse_policy(s: &str) -> Result<MatrixPolicy, String> {
    match s {
        "fresh" => Ok(MatrixPolicy::FreshPerTrial),
        "fixed" => Ok(MatrixPolicy::FixedAcrossTrials),
        _ => Err("expected fresh or fixed".into()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Simulate,
    Sweep,
    Frontier,
    Se,
    Mue,
}

/// Values gathered from the config file and flags before assembly.
#[derive(Default)]
struct Draft {
    devices: Option<usize>,
    bits: Option<u32>,
    rates: Vec<f64>,
    ebn0: Vec<f64>,
    noise_var: Option<f64>,
    decoders: Vec<DecoderKind>,
    alpha: Option<f64>,
    trials: Option<usize>,
    seed: Option<u64>,
    target_pe: Option<f64>,
    iterations: Option<usize>,
    policy: MatrixPolicy,
    storage: MatrixStorage,
    amp: AmpRunConfig,
    budget: Option<u64>,
    early_stop: bool,
}

impl Draft {
    fn from_spec(spec: ExperimentSpec) -> Self {
        let s = spec.system;
        let mut d = Draft {
            devices: Some(s.devices),
            bits: Some(s.bits),
            rates: vec![s.rate],
            ebn0: vec![s.ebn0_db],
            noise_var: Some(s.noise_var),
            decoders: spec.decoders,
            alpha: Some(spec.soft_alpha),
            trials: Some(spec.trials),
            seed: Some(spec.master_seed),
            policy: spec.matrix_policy,
            storage: spec.storage,
            amp: spec.amp,
            budget: Some(spec.memory_budget_bytes),
            early_stop: spec.early_stop,
            ..Default::default()
        };
        match spec.sweep {
            Sweep::EbN0Grid { ebn0_db } => d.ebn0 = ebn0_db,
            Sweep::RateSearch { target_pe, ebn0_db, rates } => {
                d.target_pe = Some(target_pe);
                d.ebn0 = ebn0_db;
                d.rates = rates;
            }
            Sweep::Trajectory { ebn0_db, rates, iterations } => {
                d.ebn0 = ebn0_db;
                d.rates = rates;
                d.iterations = Some(iterations);
            }
        }
        d
    }

    fn apply_flags(&mut self, c: &Common) {
        if !c.decoder.is_empty() {
            self.decoders = c.decoder.clone();
        }
        if !c.ebn0_db.is_empty() {
            self.ebn0 = c.ebn0_db.clone();
        }
        if !c.rate.is_empty() {
            self.rates = c.rate.clone();
        }
        self.devices = c.devices.or(self.devices);
        self.bits = c.bits.or(self.bits);
        self.trials = c.trials.or(self.trials);
        self.seed = c.seed.or(self.seed);
        self.alpha = c.alpha.or(self.alpha);
        self.target_pe = c.target_pe.or(self.target_pe);
        self.iterations = c.iterations.or(self.iterations);
        if let Some(m) = c.max_iters {
            self.amp.max_iterations = m;
        }
        self.early_stop |= c.early_stop;
        self.storage = c.storage.unwrap_or(self.storage);
        self.policy = c.matrix_policy.unwrap_or(self.policy);
    }

    /// Assembles the spec for `kind`, or every missing or conflicting field.
    fn build(self, kind: Kind) -> Result<ExperimentSpec, Vec<String>> {
        let mut missing = Vec::new();
        let need = |name: &str, ok: bool, missing: &mut Vec<String>| {
            if !ok {
                missing.push(format!("{name}: required (flag or config)"));
            }
        };
        let needs_trials = kind != Kind::Se;
        need("--devices / system.devices", self.devices.is_some() || !needs_trials, &mut missing);
        need("--bits / system.bits", self.bits.is_some(), &mut missing);
        need("--rate / system.rate", !self.rates.is_empty(), &mut missing);
        need("--ebn0-db / system.ebn0_db", !self.ebn0.is_empty(), &mut missing);
        need("--decoder / decoders", !self.decoders.is_empty(), &mut missing);
        if needs_trials {
            need("--trials / trials", self.trials.is_some(), &mut missing);
            need("--seed / master_seed", self.seed.is_some(), &mut missing);
        }
        match kind {
            Kind::Simulate => {
                if self.decoders.len() > 1 {
                    missing.push("--decoder: simulate takes exactly one decoder".into());
                }
                if self.ebn0.len() > 1 {
                    missing.push("--ebn0-db: simulate takes exactly one value".into());
                }
            }
            Kind::Sweep | Kind::Se => {
                if self.rates.len() > 1 {
                    missing.push("--rate: exactly one rate expected".into());
                }
            }
            Kind::Frontier => need("--target-pe / sweep.target_pe", self.target_pe.is_some(), &mut missing),
            Kind::Mue => {}
        }
        if kind == Kind::Se && self.ebn0.len() > 1 {
            missing.push("--ebn0-db: se takes exactly one value".into());
        }
        if !missing.is_empty() {
            return Err(missing);
        }
        let iterations = self.iterations.unwrap_or(self.amp.max_iterations);
        let mut amp = self.amp;
        if kind == Kind::Se {
            amp.max_iterations = iterations;
        }
        let sweep = match kind {
            Kind::Simulate | Kind::Sweep | Kind::Se => Sweep::EbN0Grid { ebn0_db: self.ebn0.clone() },
            Kind::Frontier => Sweep::RateSearch {
                target_pe: self.target_pe.unwrap_or_default(),
                ebn0_db: self.ebn0.clone(),
                rates: self.rates.clone(),
            },
            Kind::Mue => Sweep::Trajectory { ebn0_db: self.ebn0.clone(), rates: self.rates.clone(), iterations },
        };
        let spec = ExperimentSpec {
            system: SystemTemplate {
                devices: self.devices.unwrap_or(1),
                bits: self.bits.unwrap_or_default(),
                rate: self.rates[0],
                ebn0_db: self.ebn0[0],
                noise_var: self.noise_var.unwrap_or(1.0),
            },
            decoders: self.decoders,
            soft_alpha: self.alpha.unwrap_or(DEFAULT_SOFT_ALPHA),
            sweep,
            trials: self.trials.unwrap_or(1),
            master_seed: self.seed.unwrap_or(0),
            matrix_policy: self.policy,
            storage: self.storage,
            amp,
            memory_budget_bytes: self.budget.unwrap_or(crate::model::DEFAULT_MEMORY_BUDGET),
            early_stop: self.early_stop,
        };
        let problems = spec.problems();
        if problems.is_empty() {
            Ok(spec)
        } else {
            Err(problems)
        }
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn parse_and_dispatch<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(Failure::Config(report)) => {
            let _ = writeln!(err, "invalid configuration:");
            for line in report {
                let _ = writeln!(err, "  {line}");
            }
            EXIT_CONFIG
        }
        Err(Failure::Runtime(e)) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_FAILURE
        }
    }
}

enum Failure {
    Config(Vec<String>),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(m) => Failure::Config(vec![m]),
            other => Failure::Runtime(other),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn resolve(common: &Common, kind: Kind) -> Result<ExperimentSpec, Failure> {
    let mut draft = match &common.config {
        Some(path) => {
            let spec = load_spec(path).map_err(|e| Failure::Config(vec![format!("{}: {e}", path.display())]))?;
            Draft::from_spec(spec)
        }
        None => Draft::default(),
    };
    draft.apply_flags(common);
    draft.build(kind).map_err(Failure::Config)
}

fn command_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

fn open_out(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn emit_convention(err: &mut dyn Write, spec: &ExperimentSpec) -> Result<(), Failure> {
    writeln!(err, "# Eb/N0 = P/(2 K sigma^2), sigma^2 = {}, K = {}", spec.system.noise_var, spec.system.bits)?;
    Ok(())
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Failure> {
    match cmd {
        Command::Simulate(c) => run_sweep(&c, Kind::Simulate, "simulate", out, err),
        Command::Sweep(c) => run_sweep(&c, Kind::Sweep, "sweep", out, err),
        Command::Frontier(c) => run_frontier(&c, out, err),
        Command::Se(c) => run_se_cmd(&c, out, err),
        Command::MueFig2(c) => run_mue(&c, out, err),
        Command::Validate(c) => run_validate(&c, out),
    }
}

fn run_sweep(c: &Common, kind: Kind, name: &str, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Failure> {
    let spec = resolve(c, kind)?;
    emit_convention(err, &spec)?;
    let result = sweep_ebn0(&spec)?;
    match &c.out {
        Some(dir) => {
            open_out(dir)?;
            let file = format!("{name}.csv");
            write_sweep_csv(&result.rows, std::fs::File::create(dir.join(&file))?)?;
            Manifest::new(&command_line(), &spec, vec![file], result.timings).write(dir)?;
        }
        None => write_sweep_csv(&result.rows, &mut *out)?,
    }
    Ok(if result.rows.iter().any(|r| r.diverged_dominated()) { EXIT_INFEASIBLE } else { EXIT_OK })
}

fn run_frontier(c: &Common, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Failure> {
    let spec = resolve(c, Kind::Frontier)?;
    emit_convention(err, &spec)?;
    let result = rate_search(&spec)?;
    match &c.out {
        Some(dir) => {
            open_out(dir)?;
            write_frontier_csv(&result.frontier, std::fs::File::create(dir.join("frontier.csv"))?)?;
            write_sweep_csv(&result.points.rows, std::fs::File::create(dir.join("points.csv"))?)?;
            Manifest::new(
                &command_line(),
                &spec,
                vec!["frontier.csv".into(), "points.csv".into()],
                result.points.timings,
            )
            .write(dir)?;
        }
        None => write_frontier_csv(&result.frontier, &mut *out)?,
    }
    Ok(if result.frontier.iter().all(|r| r.feasible()) { EXIT_OK } else { EXIT_INFEASIBLE })
}

fn run_se_cmd(c: &Common, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Failure> {
    let spec = resolve(c, Kind::Se)?;
    emit_convention(err, &spec)?;
    let s = &spec.system;
    let iterations = spec.amp.max_iterations;
    let cfg: SystemConfig = s.resolve(s.ebn0_db, s.rate)?;
    let mut csvs = Vec::new();
    for &decoder in &spec.decoders {
        let denoiser = decoder.denoiser(&cfg, spec.soft_alpha);
        let traj = analytical_trajectory(&denoiser, &cfg, iterations, spec.master_seed)?;
        writeln!(
            out,
            "# decoder {decoder}, K = {}, n = {}, R = {}, Eb/N0 = {} dB",
            cfg.bits,
            cfg.channel_uses,
            cfg.rate(),
            s.ebn0_db
        )?;
        writeln!(out, "{:>4} {:>16} {:>12}", "t", "tau2", "xi")?;
        for (t, (tau2, xi)) in traj.tau2.iter().zip(&traj.mue).enumerate() {
            writeln!(out, "{t:>4} {tau2:>16.8e} {xi:>12.8}")?;
        }
        csvs.push(traj);
    }
    if let Some(dir) = &c.out {
        open_out(dir)?;
        let mut f = std::fs::File::create(dir.join("se.csv"))?;
        for (i, traj) in csvs.iter().enumerate() {
            traj.write_csv(&mut f, i == 0)?;
        }
        Manifest::new(&command_line(), &spec, vec!["se.csv".into()], Vec::new()).write(dir)?;
    }
    Ok(EXIT_OK)
}

fn run_mue(c: &Common, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Failure> {
    let spec = resolve(c, Kind::Mue)?;
    emit_convention(err, &spec)?;
    let (curves, timings) = mue_trajectory_experiment(&spec)?;
    match &c.out {
        Some(dir) => {
            open_out(dir)?;
            let mut names = Vec::new();
            for curve in &curves {
                let name = curve.file_name();
                curve.write_csv(std::fs::File::create(dir.join(&name))?)?;
                names.push(name);
            }
            Manifest::new(&command_line(), &spec, names, timings).write(dir)?;
        }
        None => {
            for curve in &curves {
                writeln!(out, "# {}", curve.file_name())?;
                curve.write_csv(&mut *out)?;
            }
        }
    }
    Ok(if curves.iter().any(|c| 2 * c.diverged > c.trials) { EXIT_INFEASIBLE } else { EXIT_OK })
}

fn run_validate(c: &Common, out: &mut dyn Write) -> Result<i32, Failure> {
    let checks = validate::run_all(c.seed.unwrap_or(0))?;
    for check in &checks {
        let tag = if check.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{tag} {}: {}", check.name, check.detail)?;
    }
    Ok(if checks.iter().all(|c| c.passed) { EXIT_OK } else { EXIT_FAILURE })
}
