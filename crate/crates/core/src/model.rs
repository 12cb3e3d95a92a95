//! Gaussian multiple-access channel with one-hot short-packet coding.
//!
//! `D` devices each send `K` bits by activating one of `2^K` codebook columns.
//! Stacking all codebooks gives the sensing matrix `C` (`M x N`, `M = nD`,
//! `N = 2^K D`) and the received vector is `y = C x + w`, where `x` is block
//! one-hot with amplitude `sqrt(P_I)`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, SimRng};

/// Largest supported packet size in bits. Blocks have `2^K` entries.
pub const MAX_BITS: u32 = 16;

/// Default ceiling on the bytes a dense sensing matrix may occupy (4 GiB).
pub const DEFAULT_MEMORY_BUDGET: u64 = 4 << 30;

/// G-MAC parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Number of devices `D`.
    pub devices: usize,
    /// Bits per packet `K`.
    pub bits: u32,
    /// Channel uses per device `n`.
    pub channel_uses: usize,
    /// Transmit power `P_I` (linear).
    pub power: f64,
    /// Noise variance `sigma_w^2`.
    pub noise_var: f64,
}

impl SystemConfig {
    pub fn new(devices: usize, bits: u32, channel_uses: usize, power: f64, noise_var: f64) -> Result<Self> {
        let cfg = Self { devices, bits, channel_uses, power, noise_var };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Builds a config from a target spectral efficiency. The channel uses per
    /// device are `round(K / R)` (at least one); the realized rate is
    /// [`SystemConfig::rate`].
    pub fn from_rate(devices: usize, bits: u32, rate: f64, power: f64, noise_var: f64) -> Result<Self> {
        Self::new(devices, bits, channel_uses_for_rate(bits, rate)?, power, noise_var)
    }

    /// Builds a config at a given Eb/N0 (dB), see [`power_for_ebn0_db`].
    pub fn at_ebn0_db(devices: usize, bits: u32, channel_uses: usize, ebn0_db: f64, noise_var: f64) -> Result<Self> {
        Self::new(devices, bits, channel_uses, power_for_ebn0_db(ebn0_db, bits, noise_var), noise_var)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.devices == 0 {
            problems.push("devices must be >= 1".to_string());
        }
        if self.bits == 0 || self.bits > MAX_BITS {
            problems.push(format!("bits must be in 1..={MAX_BITS}"));
        }
        if self.channel_uses == 0 {
            problems.push("channel_uses must be >= 1".to_string());
        }
        if !(self.power.is_finite() && self.power > 0.0) {
            problems.push(format!("power must be positive, got {}", self.power));
        }
        if !(self.noise_var.is_finite() && self.noise_var > 0.0) {
            problems.push(format!("noise_var must be positive, got {}", self.noise_var));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }

    /// Block length `2^K`.
    pub fn block_len(&self) -> usize {
        1usize << self.bits
    }

    /// Number of measurements `M = nD`.
    pub fn m(&self) -> usize {
        self.channel_uses * self.devices
    }

    /// Signal length `N = 2^K D`.
    pub fn n(&self) -> usize {
        self.block_len() * self.devices
    }

    /// Undersampling ratio `M / N = n / 2^K`.
    pub fn beta(&self) -> f64 {
        self.channel_uses as f64 / self.block_len() as f64
    }

    /// Spectral efficiency `DK / M = K / n` in bits per channel use.
    pub fn rate(&self) -> f64 {
        self.bits as f64 / self.channel_uses as f64
    }

    /// Activity probability of a single entry, `2^-K`.
    pub fn activity(&self) -> f64 {
        1.0 / self.block_len() as f64
    }

    pub fn amplitude(&self) -> f64 {
        self.power.sqrt()
    }

    pub fn ebn0_db(&self) -> f64 {
        ebn0_db_for_power(self.power, self.bits, self.noise_var)
    }
}

/// `n = round(K / R)`, clamped to at least one channel use.
pub fn channel_uses_for_rate(bits: u32, rate: f64) -> Result<usize> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::InvalidConfig(format!("rate must be positive, got {rate}")));
    }
    Ok(((bits as f64 / rate).round() as usize).max(1))
}

/// Transmit power for a given Eb/N0 under `Eb/N0 = P_I / (2 K sigma_w^2)`.
///
/// A codeword has unit expected squared norm, so it delivers energy `P_I` for
/// `K` bits, and real AWGN of variance `sigma_w^2` has `N0 = 2 sigma_w^2`.
pub fn power_for_ebn0_db(ebn0_db: f64, bits: u32, noise_var: f64) -> f64 {
    2.0 * bits as f64 * noise_var * 10f64.powf(ebn0_db / 10.0)
}

pub fn ebn0_db_for_power(power: f64, bits: u32, noise_var: f64) -> f64 {
    10.0 * (power / (2.0 * bits as f64 * noise_var)).log10()
}

/// A linear map `R^N -> R^M` with the statistics of the random codebook.
pub trait SensingOperator: Send + Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    /// `out = C x`.
    fn apply(&self, x: &[f64], out: &mut [f64]);
    /// `out = C^T r`.
    fn apply_transpose(&self, r: &[f64], out: &mut [f64]);

    /// `r = y - C x + memory r_prev` followed by `g = C^T r`. Implementations
    /// may fuse both into one sweep over the rows; the result must equal the
    /// two separate products bit for bit.
    fn residual_and_correlation(
        &self,
        x: &[f64],
        y: &[f64],
        memory: f64,
        r_prev: &[f64],
        r: &mut [f64],
        g: &mut [f64],
    ) {
        self.apply(x, r);
        for ((ri, yi), prev) in r.iter_mut().zip(y).zip(r_prev) {
            *ri = yi - *ri + memory * prev;
        }
        self.apply_transpose(r, g);
    }
}

/// Row-by-row fused residual and correlation shared by the concrete matrices.
#[allow(clippy::too_many_arguments)]
fn fused_rows<'a>(
    rows: impl Iterator<Item = &'a [f64]>,
    x: &[f64],
    y: &[f64],
    memory: f64,
    r_prev: &[f64],
    r: &mut [f64],
    g: &mut [f64],
) {
    g.fill(0.0);
    for (i, row) in rows.enumerate() {
        let ri = y[i] - dot(row, x) + memory * r_prev[i];
        r[i] = ri;
        axpy(ri, row, g);
    }
}

/// Dense sensing matrix, row-major, entries `N(0, 1/M)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix {
    rows: usize,
    cols: usize,
    seed: u64,
    data: Vec<f64>,
}

fn fill_row(seed: u64, row: usize, scale: f64, out: &mut [f64]) {
    let mut rng: SimRng = rng::rng_from_seed(rng::row_seed(seed, row as u64));
    rng::fill_normal(&mut rng, scale, out);
}

fn check_budget(rows: usize, cols: usize, budget_bytes: u64) -> Result<()> {
    let required = rows as u128 * cols as u128 * std::mem::size_of::<f64>() as u128;
    if required > budget_bytes as u128 {
        return Err(Error::Resource { required_bytes: required, budget_bytes });
    }
    Ok(())
}

impl SensingMatrix {
    /// Samples an `rows x cols` matrix. Row `i` is drawn from its own generator
    /// seeded with `row_seed(seed, i)`.
    pub fn sample(rows: usize, cols: usize, seed: u64, budget_bytes: u64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidConfig("sensing matrix needs at least one row and one column".into()));
        }
        check_budget(rows, cols, budget_bytes)?;
        let scale = 1.0 / (rows as f64).sqrt();
        let mut data = vec![0.0; rows * cols];
        for (i, row) in data.chunks_exact_mut(cols).enumerate() {
            fill_row(seed, i, scale, row);
        }
        Ok(Self { rows, cols, seed, data })
    }

    /// Redraws every entry in place from `seed`; identical to a fresh
    /// [`SensingMatrix::sample`] of the same shape without reallocating.
    pub fn resample(&mut self, seed: u64) {
        let scale = 1.0 / (self.rows as f64).sqrt();
        for (i, row) in self.data.chunks_exact_mut(self.cols).enumerate() {
            fill_row(seed, i, scale, row);
        }
        self.seed = seed;
    }

    /// Wraps explicit row-major entries. Used for fixtures and test seams.
    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>, seed: u64) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch { what: "matrix entries", expected: rows * cols, found: data.len() });
        }
        Ok(Self { rows, cols, seed, data })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Writes the fixture format: magic `AMPC`, `u32` rows, `u32` cols,
    /// `u64` seed, then `rows * cols` little-endian `f64` in row-major order.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let rows = u32::try_from(self.rows).map_err(|_| Error::MalformedMatrix("row count exceeds u32".into()))?;
        let cols = u32::try_from(self.cols).map_err(|_| Error::MalformedMatrix("column count exceeds u32".into()))?;
        w.write_all(b"AMPC")?;
        w.write_all(&rows.to_le_bytes())?;
        w.write_all(&cols.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"AMPC" {
            return Err(Error::MalformedMatrix(format!("bad magic {magic:?}")));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let rows = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let cols = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8)?;
        let seed = u64::from_le_bytes(b8);
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            r.read_exact(&mut b8)?;
            data.push(f64::from_le_bytes(b8));
        }
        let mut tail = [0u8; 1];
        if r.read(&mut tail)? != 0 {
            return Err(Error::MalformedMatrix("trailing bytes after body".into()));
        }
        Self::from_rows(rows, cols, data, seed)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ta.iter().zip(tb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl SensingOperator for SensingMatrix {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.cols);
        assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o = dot(row, x);
        }
    }

    fn apply_transpose(&self, r: &[f64], out: &mut [f64]) {
        assert_eq!(r.len(), self.rows);
        assert_eq!(out.len(), self.cols);
        out.fill(0.0);
        for (&ri, row) in r.iter().zip(self.data.chunks_exact(self.cols)) {
            axpy(ri, row, out);
        }
    }

    fn residual_and_correlation(
        &self,
        x: &[f64],
        y: &[f64],
        memory: f64,
        r_prev: &[f64],
        r: &mut [f64],
        g: &mut [f64],
    ) {
        assert_eq!((x.len(), g.len()), (self.cols, self.cols));
        assert_eq!((y.len(), r_prev.len(), r.len()), (self.rows, self.rows, self.rows));
        fused_rows(self.data.chunks_exact(self.cols), x, y, memory, r_prev, r, g);
    }
}

/// Sensing matrix that is never stored: each product regenerates the rows
/// from their seeds. Entries are bitwise identical to
/// [`SensingMatrix::sample`] with the same seed, at the cost of one Gaussian
/// draw per entry per product.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImplicitSensingMatrix {
    rows: usize,
    cols: usize,
    seed: u64,
}

impl ImplicitSensingMatrix {
    pub fn new(rows: usize, cols: usize, seed: u64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidConfig("sensing matrix needs at least one row and one column".into()));
        }
        Ok(Self { rows, cols, seed })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn scale(&self) -> f64 {
        1.0 / (self.rows as f64).sqrt()
    }
}

impl SensingOperator for ImplicitSensingMatrix {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.cols);
        assert_eq!(out.len(), self.rows);
        let mut row = vec![0.0; self.cols];
        for (i, o) in out.iter_mut().enumerate() {
            fill_row(self.seed, i, self.scale(), &mut row);
            *o = dot(&row, x);
        }
    }

    fn apply_transpose(&self, r: &[f64], out: &mut [f64]) {
        assert_eq!(r.len(), self.rows);
        assert_eq!(out.len(), self.cols);
        out.fill(0.0);
        let mut row = vec![0.0; self.cols];
        for (i, &ri) in r.iter().enumerate() {
            fill_row(self.seed, i, self.scale(), &mut row);
            axpy(ri, &row, out);
        }
    }

    fn residual_and_correlation(
        &self,
        x: &[f64],
        y: &[f64],
        memory: f64,
        r_prev: &[f64],
        r: &mut [f64],
        g: &mut [f64],
    ) {
        assert_eq!((x.len(), g.len()), (self.cols, self.cols));
        assert_eq!((y.len(), r_prev.len(), r.len()), (self.rows, self.rows, self.rows));
        g.fill(0.0);
        let mut row = vec![0.0; self.cols];
        for i in 0..self.rows {
            fill_row(self.seed, i, self.scale(), &mut row);
            let ri = y[i] - dot(&row, x) + memory * r_prev[i];
            r[i] = ri;
            axpy(ri, &row, g);
        }
    }
}

/// Samples the `M x N` codebook for `cfg` under the default memory budget.
pub fn sample_sensing_matrix(cfg: &SystemConfig, seed: u64) -> Result<SensingMatrix> {
    SensingMatrix::sample(cfg.m(), cfg.n(), seed, DEFAULT_MEMORY_BUDGET)
}

/// Per-device message indices, each in `[0, 2^K)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageVector(Vec<u32>);

impl MessageVector {
    pub fn new(messages: Vec<u32>, bits: u32) -> Result<Self> {
        let limit = 1u32 << bits;
        if let Some((device, &value)) = messages.iter().enumerate().find(|(_, &m)| m >= limit) {
            return Err(Error::InvalidMessage { device, value, limit });
        }
        Ok(Self(messages))
    }

    /// Draws `D` uniform messages.
    pub fn random(cfg: &SystemConfig, seed: u64) -> Self {
        use rand::Rng;
        let mut rng = rng::rng_from_seed(seed);
        let limit = 1u32 << cfg.bits;
        Self((0..cfg.devices).map(|_| rng.random_range(0..limit)).collect())
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Block one-hot transmit vector of length `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSignal {
    values: Vec<f64>,
    block_len: usize,
}

impl SparseSignal {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn blocks(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.block_len)
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn zeros(cfg: &SystemConfig) -> Self {
        Self { values: vec![0.0; cfg.n()], block_len: cfg.block_len() }
    }
}

/// Places `sqrt(P_I)` at index `messages[q]` of block `q`.
pub fn encode(messages: &MessageVector, cfg: &SystemConfig) -> Result<SparseSignal> {
    if messages.len() != cfg.devices {
        return Err(Error::DimensionMismatch { what: "message vector", expected: cfg.devices, found: messages.len() });
    }
    let block_len = cfg.block_len();
    let amplitude = cfg.amplitude();
    let mut values = vec![0.0; cfg.n()];
    for (device, &m) in messages.as_slice().iter().enumerate() {
        if m as usize >= block_len {
            return Err(Error::InvalidMessage { device, value: m, limit: block_len as u32 });
        }
        values[device * block_len + m as usize] = amplitude;
    }
    Ok(SparseSignal { values, block_len })
}

/// Received vector, optionally with the transmitted signal kept for scoring.
#[derive(Debug, Clone)]
pub struct Observation {
    pub y: Vec<f64>,
    pub truth: Option<SparseSignal>,
}

/// `y = C x + w` with `w ~ N(0, noise_var I)` drawn from `seed`.
pub fn channel(c: &dyn SensingOperator, x: &SparseSignal, noise_var: f64, seed: u64) -> Result<Observation> {
    if x.values.len() != c.cols() {
        return Err(Error::DimensionMismatch { what: "signal length", expected: c.cols(), found: x.values.len() });
    }
    if !(noise_var.is_finite() && noise_var >= 0.0) {
        return Err(Error::InvalidVariance(noise_var));
    }
    let mut y = vec![0.0; c.rows()];
    c.apply(&x.values, &mut y);
    if noise_var > 0.0 {
        let sd = noise_var.sqrt();
        let mut rng = rng::rng_from_seed(seed);
        for yi in y.iter_mut() {
            *yi += sd * rng::standard_normal(&mut rng);
        }
    }
    Ok(Observation { y, truth: Some(x.clone()) })
}

/// Per-block argmax; ties go to the lowest index.
pub fn decode_hard(estimate: &[f64], cfg: &SystemConfig) -> MessageVector {
    let block_len = cfg.block_len();
    assert_eq!(estimate.len(), cfg.n(), "estimate must have length N");
    MessageVector(
        estimate
            .chunks_exact(block_len)
            .map(|block| {
                let mut best = 0usize;
                for (k, &v) in block.iter().enumerate().skip(1) {
                    if v > block[best] {
                        best = k;
                    }
                }
                best as u32
            })
            .collect(),
    )
}

/// Number of devices whose message was decoded wrongly.
pub fn block_errors(decoded: &MessageVector, truth: &MessageVector) -> Result<usize> {
    if decoded.len() != truth.len() {
        return Err(Error::DimensionMismatch { what: "decoded messages", expected: truth.len(), found: decoded.len() });
    }
    Ok(decoded.0.iter().zip(&truth.0).filter(|(a, b)| a != b).count())
}

/// Fraction of devices decoded wrongly.
pub fn block_error_rate(decoded: &MessageVector, truth: &MessageVector) -> Result<f64> {
    let errors = block_errors(decoded, truth)?;
    if truth.is_empty() {
        return Ok(0.0);
    }
    Ok(errors as f64 / truth.len() as f64)
}
