//! Paired Monte Carlo bit error rate evaluation.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline::{ClassicalReceiver, EstimationMethod, GenieInfo};
use crate::error::{invalid, Result};
use crate::harness::sim::{LinkModel, SimFrame};
use crate::neural::ModelBank;
use crate::numerics::RngStream;

const EVAL_STREAM: u64 = 0x4556_414c;
/// Frames simulated and handed to the detectors at a time.
const CHUNK_FRAMES: usize = 256;

/// Receivers the harness knows how to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DetectorKind {
    #[serde(rename = "LS")]
    Ls,
    #[serde(rename = "MMSE")]
    Mmse,
    #[serde(rename = "DDLSD")]
    Ddlsd,
    #[serde(rename = "ORACLE")]
    Oracle,
}

impl DetectorKind {
    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Ls => "LS",
            DetectorKind::Mmse => "MMSE",
            DetectorKind::Ddlsd => "DDLSD",
            DetectorKind::Oracle => "ORACLE",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DetectorKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LS" => Ok(DetectorKind::Ls),
            "MMSE" => Ok(DetectorKind::Mmse),
            "DDLSD" => Ok(DetectorKind::Ddlsd),
            "ORACLE" => Ok(DetectorKind::Oracle),
            _ => Err(invalid(format!("unknown detector {s:?}"))),
        }
    }
}

/// A receiver that turns simulated frames into hard bit decisions.
pub trait BitDetector: Sync {
    fn name(&self) -> String;
    fn detect(&self, frames: &[SimFrame]) -> Result<Vec<Vec<u8>>>;
}

/// LS, MMSE or oracle-CSI estimation followed by ML detection. MMSE is
/// given the true noise variance and power-delay profile.
#[derive(Clone, Debug)]
pub struct ClassicalDetector {
    receiver: ClassicalReceiver,
    method: EstimationMethod,
}

impl ClassicalDetector {
    pub fn new(link: &LinkModel, method: EstimationMethod) -> Result<Self> {
        Ok(Self {
            receiver: ClassicalReceiver::new(link.config(), link.pdp())?,
            method,
        })
    }
}

impl BitDetector for ClassicalDetector {
    fn name(&self) -> String {
        match self.method {
            EstimationMethod::Ls => "LS",
            EstimationMethod::Mmse => "MMSE",
            EstimationMethod::Oracle => "ORACLE",
        }
        .into()
    }

    fn detect(&self, frames: &[SimFrame]) -> Result<Vec<Vec<u8>>> {
        frames
            .par_iter()
            .map(|f| {
                let genie = GenieInfo {
                    noise_variance: f.noise_variance,
                    true_response: Some(&f.response),
                };
                self.receiver.receive_blocks(&f.blocks, self.method, &genie)
            })
            .collect()
    }
}

impl BitDetector for ModelBank {
    fn name(&self) -> String {
        "DDLSD".into()
    }

    fn detect(&self, frames: &[SimFrame]) -> Result<Vec<Vec<u8>>> {
        let blocks: Vec<_> = frames.iter().map(|f| f.blocks.clone()).collect();
        ModelBank::detect(self, &blocks)
    }
}

/// Statistics at one SNR point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BerRecord {
    pub snr_db: f64,
    pub total_bits: u64,
    pub bit_errors: u64,
    pub ber_bit: f64,
    pub n_groups: u64,
    pub exact_matches: u64,
    pub p_ber_eq13: f64,
    pub stderr: f64,
    #[serde(default)]
    pub wall_time_s: f64,
    /// Hex SHA-256 over the digests of every evaluated frame, in order.
    #[serde(default)]
    pub frame_digest: String,
}

impl BerRecord {
    fn new(snr_db: f64, total_bits: u64, bit_errors: u64, n_groups: u64, exact_matches: u64) -> Self {
        let ber = if total_bits == 0 { 0.0 } else { bit_errors as f64 / total_bits as f64 };
        let p_eq13 = if n_groups == 0 { 0.0 } else { 1.0 - exact_matches as f64 / n_groups as f64 };
        Self {
            snr_db,
            total_bits,
            bit_errors,
            ber_bit: ber,
            n_groups,
            exact_matches,
            p_ber_eq13: p_eq13,
            stderr: binomial_stderr(ber, total_bits),
            wall_time_s: 0.0,
            frame_digest: String::new(),
        }
    }
}

/// `sqrt(p (1 - p) / n)`.
pub fn binomial_stderr(p: f64, n: u64) -> f64 {
    if n == 0 {
        0.0
    } else {
        (p * (1.0 - p) / n as f64).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BerCurve {
    pub spec_name: String,
    pub detector: String,
    pub seed: u64,
    pub records: Vec<BerRecord>,
}

impl BerCurve {
    pub fn snrs(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.snr_db).collect()
    }

    pub fn bers(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.ber_bit).collect()
    }

    pub fn ber_at(&self, snr_db: f64) -> Option<f64> {
        self.records.iter().find(|r| r.snr_db == snr_db).map(|r| r.ber_bit)
    }
}

/// What to simulate for an evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalPlan {
    pub spec_name: String,
    pub snr_grid_db: Vec<f64>,
    pub frames_per_point: usize,
    pub seed: u64,
    /// Bits per exact-match group.
    pub group_bits: usize,
}

impl EvalPlan {
    pub fn validate(&self, bits_per_frame: usize) -> Result<()> {
        if self.snr_grid_db.is_empty() {
            return Err(invalid("SNR grid is empty"));
        }
        if self.snr_grid_db.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("SNR grid must be strictly increasing"));
        }
        if self.snr_grid_db.iter().any(|v| v.is_nan()) {
            return Err(invalid("SNR grid contains NaN"));
        }
        if self.frames_per_point == 0 {
            return Err(invalid("frames_per_point must be at least 1"));
        }
        if self.group_bits == 0 || bits_per_frame % self.group_bits != 0 {
            return Err(invalid("group size must divide the data bits of a frame"));
        }
        Ok(())
    }

    /// Random stream for frame `frame` of SNR point `point`.
    pub fn frame_rng(&self, point: usize, frame: usize) -> RngStream {
        RngStream::new(self.seed, EVAL_STREAM).substream2(point as u64, frame as u64)
    }
}

fn count(detected: &[u8], sent: &[u8], group_bits: usize) -> Result<(u64, u64)> {
    if detected.len() != sent.len() {
        return Err(invalid(format!(
            "detector returned {} bits for a {}-bit frame",
            detected.len(),
            sent.len()
        )));
    }
    let errors = detected.iter().zip(sent).filter(|(a, b)| a != b).count() as u64;
    let exact = detected
        .chunks(group_bits)
        .zip(sent.chunks(group_bits))
        .filter(|(a, b)| a == b)
        .count() as u64;
    Ok((errors, exact))
}

/// Evaluate every detector on the same frames: at each SNR point the frame
/// sequence depends only on the plan's seed, point index and frame index.
pub fn evaluate_ber(detectors: &[&dyn BitDetector], link: &LinkModel, plan: &EvalPlan) -> Result<Vec<BerCurve>> {
    let bits_per_frame = link.config().bits_per_frame();
    plan.validate(bits_per_frame)?;
    if detectors.is_empty() {
        return Err(invalid("no detectors to evaluate"));
    }
    let groups_per_frame = (bits_per_frame / plan.group_bits) as u64;
    let mut curves: Vec<BerCurve> = detectors
        .iter()
        .map(|d| BerCurve {
            spec_name: plan.spec_name.clone(),
            detector: d.name(),
            seed: plan.seed,
            records: Vec::with_capacity(plan.snr_grid_db.len()),
        })
        .collect();

    for (point, &snr) in plan.snr_grid_db.iter().enumerate() {
        let mut errors = vec![0u64; detectors.len()];
        let mut exact = vec![0u64; detectors.len()];
        let mut elapsed = vec![0f64; detectors.len()];
        let mut digest = Sha256::new();
        let mut start = 0;
        while start < plan.frames_per_point {
            let end = (start + CHUNK_FRAMES).min(plan.frames_per_point);
            let frames = (start..end)
                .into_par_iter()
                .map(|i| link.simulate(snr, &plan.frame_rng(point, i)))
                .collect::<Result<Vec<_>>>()?;
            for f in &frames {
                digest.update(f.digest());
            }
            for (d, det) in detectors.iter().enumerate() {
                let t0 = Instant::now();
                let decided = det.detect(&frames)?;
                elapsed[d] += t0.elapsed().as_secs_f64();
                if decided.len() != frames.len() {
                    return Err(invalid(format!("{} returned the wrong number of frames", det.name())));
                }
                for (bits, f) in decided.iter().zip(&frames) {
                    let (e, x) = count(bits, &f.bits, plan.group_bits)?;
                    errors[d] += e;
                    exact[d] += x;
                }
            }
            start = end;
        }
        let digest = hex(&digest.finalize());
        let frames = plan.frames_per_point as u64;
        for (d, curve) in curves.iter_mut().enumerate() {
            let mut rec = BerRecord::new(
                snr,
                frames * bits_per_frame as u64,
                errors[d],
                frames * groups_per_frame,
                exact[d],
            );
            rec.wall_time_s = elapsed[d];
            rec.frame_digest = digest.clone();
            curve.records.push(rec);
        }
    }
    Ok(curves)
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub const CSV_COLUMNS: [&str; 11] = [
    "spec_name",
    "detector",
    "snr_db",
    "total_bits",
    "bit_errors",
    "ber_bit",
    "n_groups",
    "exact_matches",
    "p_ber_eq13",
    "stderr",
    "seed",
];

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    spec_name: String,
    detector: String,
    snr_db: f64,
    total_bits: u64,
    bit_errors: u64,
    ber_bit: f64,
    n_groups: u64,
    exact_matches: u64,
    p_ber_eq13: f64,
    stderr: f64,
    seed: u64,
}

/// Write curves as CSV rows in curve order, one row per SNR point.
pub fn write_curves_csv<W: Write>(curves: &[BerCurve], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for c in curves {
        for r in &c.records {
            w.serialize(CsvRow {
                spec_name: c.spec_name.clone(),
                detector: c.detector.clone(),
                snr_db: r.snr_db,
                total_bits: r.total_bits,
                bit_errors: r.bit_errors,
                ber_bit: r.ber_bit,
                n_groups: r.n_groups,
                exact_matches: r.exact_matches,
                p_ber_eq13: r.p_ber_eq13,
                stderr: r.stderr,
                seed: c.seed,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn curves_to_csv(curves: &[BerCurve]) -> Result<String> {
    let mut buf = Vec::new();
    write_curves_csv(curves, &mut buf)?;
    String::from_utf8(buf).map_err(|e| invalid(e.to_string()))
}

/// Parse CSV written by [`write_curves_csv`], grouping rows by spec and
/// detector in order of first appearance.
pub fn read_curves_csv<R: Read>(input: R) -> Result<Vec<BerCurve>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_COLUMNS {
        return Err(invalid(format!("unexpected CSV header {header:?}")));
    }
    let mut curves: Vec<BerCurve> = Vec::new();
    for row in r.deserialize() {
        let row: CsvRow = row?;
        let rec = BerRecord {
            snr_db: row.snr_db,
            total_bits: row.total_bits,
            bit_errors: row.bit_errors,
            ber_bit: row.ber_bit,
            n_groups: row.n_groups,
            exact_matches: row.exact_matches,
            p_ber_eq13: row.p_ber_eq13,
            stderr: row.stderr,
            wall_time_s: 0.0,
            frame_digest: String::new(),
        };
        match curves
            .iter_mut()
            .find(|c| c.spec_name == row.spec_name && c.detector == row.detector)
        {
            Some(c) => c.records.push(rec),
            None => curves.push(BerCurve {
                spec_name: row.spec_name,
                detector: row.detector,
                seed: row.seed,
                records: vec![rec],
            }),
        }
    }
    Ok(curves)
}
