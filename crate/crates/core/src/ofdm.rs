//! Constellation mapping, pilot/data frame layout and CP-OFDM (de)modulation.
//!
//! A frame is two OFDM blocks sent back to back: a pilot block (comb pilots
//! with known filler on the remaining subcarriers) followed by a data block
//! carrying `N * bits_per_symbol` payload bits. Each block is prefixed by a
//! cyclic prefix, so a serialized frame is always `2 * (N + N_cp)` samples.
//!
//! Bit labels are Gray coded. QPSK maps the pair `(b1, b0)` to
//! `((1 - 2 b1) + j (1 - 2 b0)) / sqrt(2)`. 16QAM uses `(b3, b2)` for the
//! in-phase level and `(b1, b0)` for the quadrature level with the level
//! order `00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3`, scaled by `1/sqrt(10)`.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::numerics::{dft_in_place, RngStream};

/// Seed of the pilot sequence shared by transmitter and receiver.
pub const PILOT_SEED: u64 = 0x5049_4c4f_5453;
/// Seed of the filler symbols on non-pilot subcarriers of the pilot block.
pub const FILLER_SEED: u64 = 0x4649_4c4c_4552;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modulation {
    #[serde(rename = "qpsk")]
    Qpsk,
    #[serde(rename = "16qam")]
    Qam16,
}

impl Modulation {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            Modulation::Qpsk => 2,
            Modulation::Qam16 => 4,
        }
    }

    pub fn constellation(self) -> Constellation {
        Constellation::new(self)
    }
}

impl fmt::Display for Modulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modulation::Qpsk => write!(f, "qpsk"),
            Modulation::Qam16 => write!(f, "16qam"),
        }
    }
}

impl FromStr for Modulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "qpsk" => Ok(Modulation::Qpsk),
            "16qam" | "qam16" => Ok(Modulation::Qam16),
            other => Err(invalid(format!("unknown modulation '{other}'"))),
        }
    }
}

/// Gray-labelled constellation. `points[label]` is the symbol whose bit
/// pattern, read MSB first, equals `label`.
#[derive(Clone, Debug, PartialEq)]
pub struct Constellation {
    modulation: Modulation,
    points: Vec<Complex64>,
}

const QAM16_LEVELS: [f64; 4] = [-3.0, -1.0, 3.0, 1.0]; // indexed by the 2-bit label 00, 01, 10, 11

impl Constellation {
    pub fn new(modulation: Modulation) -> Self {
        let points = match modulation {
            Modulation::Qpsk => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                (0..4u8)
                    .map(|label| {
                        let b1 = f64::from(label >> 1);
                        let b0 = f64::from(label & 1);
                        Complex64::new((1.0 - 2.0 * b1) * s, (1.0 - 2.0 * b0) * s)
                    })
                    .collect()
            }
            Modulation::Qam16 => {
                let s = 1.0 / 10f64.sqrt();
                (0..16usize)
                    .map(|label| {
                        Complex64::new(QAM16_LEVELS[label >> 2] * s, QAM16_LEVELS[label & 3] * s)
                    })
                    .collect()
            }
        };
        Self { modulation, points }
    }

    pub fn modulation(&self) -> Modulation {
        self.modulation
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.modulation.bits_per_symbol()
    }

    /// Bits of `label`, MSB first.
    pub fn label_bits(&self, label: usize) -> Vec<u8> {
        let b = self.bits_per_symbol();
        (0..b).rev().map(|i| ((label >> i) & 1) as u8).collect()
    }

    /// Index of the nearest point to `y`; ties go to the lowest index.
    pub fn nearest(&self, y: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (y - p).norm_sqr();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }

    pub fn average_energy(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / self.points.len() as f64
    }
}

fn check_bits(bits: &[u8]) -> Result<()> {
    match bits.iter().find(|&&b| b > 1) {
        Some(b) => Err(invalid(format!("bit values must be 0 or 1, found {b}"))),
        None => Ok(()),
    }
}

/// Map bits (MSB-first groups of `bits_per_symbol`) to constellation points.
pub fn map_bits(bits: &[u8], modulation: Modulation) -> Result<Vec<Complex64>> {
    let b = modulation.bits_per_symbol();
    if bits.len() % b != 0 {
        return Err(invalid(format!(
            "{} bits cannot be split into {b}-bit symbols",
            bits.len()
        )));
    }
    check_bits(bits)?;
    let c = Constellation::new(modulation);
    Ok(bits
        .chunks(b)
        .map(|chunk| {
            let label = chunk.iter().fold(0usize, |acc, &bit| (acc << 1) | bit as usize);
            c.points[label]
        })
        .collect())
}

/// Hard-decision demapping to the nearest constellation point.
pub fn demap_symbols(symbols: &[Complex64], modulation: Modulation) -> Vec<u8> {
    let c = Constellation::new(modulation);
    symbols
        .iter()
        .flat_map(|&y| c.label_bits(c.nearest(y)))
        .collect()
}

/// Static link parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfdmConfig {
    /// Subcarrier count `N` (power of two).
    pub subcarriers: usize,
    /// Cyclic prefix length `N_cp` in samples; zero disables the prefix.
    pub cp_len: usize,
    /// Number of comb pilots in the pilot block; must divide `N`.
    pub pilot_count: usize,
    pub modulation: Modulation,
    /// OFDM symbol duration `T` in seconds. Informational only.
    pub symbol_duration: f64,
}

fn default_symbol_duration() -> f64 {
    4.0e-6
}

impl Default for OfdmConfig {
    fn default() -> Self {
        Self {
            subcarriers: 64,
            cp_len: 16,
            pilot_count: 8,
            modulation: Modulation::Qpsk,
            symbol_duration: default_symbol_duration(),
        }
    }
}

impl OfdmConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.subcarriers;
        if n < 2 || !n.is_power_of_two() || n > crate::numerics::MAX_DFT_LEN {
            return Err(invalid(format!("subcarrier count {n} must be a power of two")));
        }
        if self.cp_len >= n {
            return Err(invalid(format!("cyclic prefix {} must be shorter than N = {n}", self.cp_len)));
        }
        if self.pilot_count == 0 || self.pilot_count > n || n % self.pilot_count != 0 {
            return Err(invalid(format!(
                "pilot count {} must divide N = {n}",
                self.pilot_count
            )));
        }
        if !(self.symbol_duration > 0.0) {
            return Err(invalid("symbol duration must be positive"));
        }
        Ok(())
    }

    /// `N_T = N + N_cp`.
    pub fn samples_per_block(&self) -> usize {
        self.subcarriers + self.cp_len
    }

    /// Serialized frame length, `2 * N_T`.
    pub fn frame_len(&self) -> usize {
        2 * self.samples_per_block()
    }

    /// `T_s = T / N_T`.
    pub fn sample_period(&self) -> f64 {
        self.symbol_duration / self.samples_per_block() as f64
    }

    pub fn bits_per_frame(&self) -> usize {
        self.subcarriers * self.modulation.bits_per_symbol()
    }

    /// Comb pilot positions `{0, N/P, 2N/P, ...}`.
    pub fn pilot_positions(&self) -> Vec<usize> {
        let step = self.subcarriers / self.pilot_count;
        (0..self.pilot_count).map(|j| j * step).collect()
    }
}

fn random_qpsk(seed: u64, len: usize) -> Vec<Complex64> {
    let mut rng = RngStream::new(seed, 0);
    let bits = rng.bits(2 * len);
    map_bits(&bits, Modulation::Qpsk).expect("even bit count")
}

/// Fixed pseudo-random QPSK pilot sequence of length `len`.
pub fn pilot_sequence(len: usize) -> Vec<Complex64> {
    random_qpsk(PILOT_SEED, len)
}

/// Known unit-energy symbols placed on non-pilot subcarriers of the pilot block.
pub fn filler_symbols(len: usize) -> Vec<Complex64> {
    random_qpsk(FILLER_SEED, len)
}

/// Frequency-domain pilot block for `config` built from `pilots`.
pub fn pilot_block(pilots: &[Complex64], config: &OfdmConfig) -> Result<Vec<Complex64>> {
    config.validate()?;
    if pilots.len() < config.pilot_count {
        return Err(invalid(format!(
            "pilot sequence has {} symbols, {} needed",
            pilots.len(),
            config.pilot_count
        )));
    }
    let mut block = filler_symbols(config.subcarriers);
    for (j, k) in config.pilot_positions().into_iter().enumerate() {
        block[k] = pilots[j];
    }
    Ok(block)
}

/// The pilot block every receiver assumes: [`pilot_sequence`] on the comb,
/// [`filler_symbols`] elsewhere.
pub fn reference_pilot_block(config: &OfdmConfig) -> Result<Vec<Complex64>> {
    pilot_block(&pilot_sequence(config.subcarriers), config)
}

/// One pilot block and one data block in the frequency domain, plus the
/// payload bits they carry.
#[derive(Clone, Debug, PartialEq)]
pub struct OfdmFrame {
    pub pilot_block_freq: Vec<Complex64>,
    pub data_block_freq: Vec<Complex64>,
    pub data_bits: Vec<u8>,
    pub pilot_positions: Vec<usize>,
}

impl OfdmFrame {
    /// Time-domain samples of both blocks, CP included.
    pub fn serialize(&self, config: &OfdmConfig) -> Result<Vec<Complex64>> {
        let mut out = ofdm_modulate(&self.pilot_block_freq, config)?;
        out.extend(ofdm_modulate(&self.data_block_freq, config)?);
        Ok(out)
    }
}

pub fn build_frame(data_bits: &[u8], pilots: &[Complex64], config: &OfdmConfig) -> Result<OfdmFrame> {
    config.validate()?;
    check_len(config.bits_per_frame(), data_bits.len())?;
    let data_block_freq = map_bits(data_bits, config.modulation)?;
    Ok(OfdmFrame {
        pilot_block_freq: pilot_block(pilots, config)?,
        data_block_freq,
        data_bits: data_bits.to_vec(),
        pilot_positions: config.pilot_positions(),
    })
}

/// `d = A^I D`, then prepend the last `N_cp` samples.
pub fn ofdm_modulate(block_freq: &[Complex64], config: &OfdmConfig) -> Result<Vec<Complex64>> {
    let n = config.subcarriers;
    check_len(n, block_freq.len())?;
    let mut d = block_freq.to_vec();
    dft_in_place(&mut d, true)?;
    let mut out = Vec::with_capacity(n + config.cp_len);
    out.extend_from_slice(&d[n - config.cp_len..]);
    out.extend_from_slice(&d);
    Ok(out)
}

/// Drop the CP and apply the forward unitary transform.
pub fn ofdm_demodulate(y: &[Complex64], config: &OfdmConfig) -> Result<Vec<Complex64>> {
    check_len(config.samples_per_block(), y.len())?;
    let mut out = y[config.cp_len..].to_vec();
    dft_in_place(&mut out, false)?;
    Ok(out)
}

/// Received blocks after CP removal and FFT.
#[derive(Clone, Debug, PartialEq)]
pub struct ReceivedBlocks {
    pub pilot: Vec<Complex64>,
    pub data: Vec<Complex64>,
}

/// Split a serialized frame and demodulate both blocks.
pub fn demodulate_frame(rx: &[Complex64], config: &OfdmConfig) -> Result<ReceivedBlocks> {
    check_len(config.frame_len(), rx.len())?;
    let nt = config.samples_per_block();
    Ok(ReceivedBlocks {
        pilot: ofdm_demodulate(&rx[..nt], config)?,
        data: ofdm_demodulate(&rx[nt..], config)?,
    })
}

/// One row of the constellation golden-vector file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldenVector {
    pub bit_string: String,
    pub modulation: Modulation,
    pub re: f64,
    pub im: f64,
}

pub fn golden_vectors() -> Vec<GoldenVector> {
    [Modulation::Qpsk, Modulation::Qam16]
        .into_iter()
        .flat_map(|m| {
            let c = Constellation::new(m);
            (0..c.points.len())
                .map(|label| {
                    let bit_string: String =
                        c.label_bits(label).iter().map(|b| char::from(b'0' + b)).collect();
                    GoldenVector {
                        bit_string,
                        modulation: m,
                        re: c.points[label].re,
                        im: c.points[label].im,
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

pub fn write_golden_csv(path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in golden_vectors() {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn read_golden_csv(path: &Path) -> Result<Vec<GoldenVector>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
