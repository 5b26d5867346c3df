//! SNR-at-threshold tables from BER curves.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::harness::eval::BerCurve;

pub const REPORT_THRESHOLDS: [f64; 3] = [1e-1, 1e-2, 1e-3];

/// SNR at which a curve first falls to a threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Crossing {
    At(f64),
    /// Never reached on the grid; carries the grid's last SNR.
    Beyond(f64),
}

impl Crossing {
    pub fn snr(self) -> Option<f64> {
        match self {
            Crossing::At(v) => Some(v),
            Crossing::Beyond(_) => None,
        }
    }
}

impl fmt::Display for Crossing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Crossing::At(v) => write!(f, "{v:.2}dB"),
            Crossing::Beyond(v) => write!(f, "{v}dB+"),
        }
    }
}

/// First crossing of `threshold`, interpolating linearly in `log10(ber)`
/// between neighbouring grid points.
pub fn crossing_snr(snrs: &[f64], bers: &[f64], threshold: f64) -> Result<Crossing> {
    if snrs.is_empty() || snrs.len() != bers.len() {
        return Err(invalid("SNR and BER lists must be non-empty and equally long"));
    }
    if !(threshold > 0.0) {
        return Err(invalid("threshold must be positive"));
    }
    for i in 0..snrs.len() {
        if bers[i] <= threshold {
            if i == 0 || bers[i] == threshold {
                return Ok(Crossing::At(snrs[i]));
            }
            let (b0, b1) = (bers[i - 1], bers[i]);
            if b1 <= 0.0 {
                // log10(0) is unbounded; fall back to linear interpolation in BER.
                let t = (b0 - threshold) / (b0 - b1);
                return Ok(Crossing::At(snrs[i - 1] + t * (snrs[i] - snrs[i - 1])));
            }
            let t = (b0.log10() - threshold.log10()) / (b0.log10() - b1.log10());
            return Ok(Crossing::At(snrs[i - 1] + t * (snrs[i] - snrs[i - 1])));
        }
    }
    Ok(Crossing::Beyond(*snrs.last().expect("non-empty")))
}

/// SNR intervals over which BER rises.
pub fn non_monotone_segments(snrs: &[f64], bers: &[f64]) -> Vec<(f64, f64)> {
    snrs.windows(2)
        .zip(bers.windows(2))
        .filter(|(_, b)| b[1] > b[0])
        .map(|(s, _)| (s[0], s[1]))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub spec_name: String,
    pub detector: String,
    pub crossings: Vec<Crossing>,
    pub non_monotone: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub thresholds: Vec<f64>,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn row(&self, spec_name: &str, detector: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.spec_name == spec_name && r.detector == detector)
    }

    /// Plain-text table with a warning line per non-monotone curve.
    pub fn render(&self) -> String {
        let mut header = vec!["spec".to_owned(), "detector".to_owned()];
        header.extend(self.thresholds.iter().map(|t| format!("BER {t:e}")));
        let mut table = vec![header];
        for r in &self.rows {
            let mut line = vec![r.spec_name.clone(), r.detector.clone()];
            line.extend(r.crossings.iter().map(|c| c.to_string()));
            table.push(line);
        }
        let widths: Vec<usize> = (0..table[0].len())
            .map(|c| table.iter().map(|row| row[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &table {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:<w$}"))
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        for r in &self.rows {
            for (a, b) in &r.non_monotone {
                out.push_str(&format!(
                    "warning: {} {} BER rises between {a} and {b} dB\n",
                    r.spec_name, r.detector
                ));
            }
        }
        out
    }
}

/// Crossing table at the standard thresholds. All curves must share a grid.
pub fn report(curves: &[BerCurve]) -> Result<Report> {
    report_at(curves, &REPORT_THRESHOLDS)
}

pub fn report_at(curves: &[BerCurve], thresholds: &[f64]) -> Result<Report> {
    let first = curves.first().ok_or_else(|| invalid("no curves to report"))?;
    let grid = first.snrs();
    let mut rows = Vec::with_capacity(curves.len());
    for c in curves {
        if c.snrs() != grid {
            return Err(invalid(format!(
                "{} {} uses a different SNR grid",
                c.spec_name, c.detector
            )));
        }
        let bers = c.bers();
        rows.push(ReportRow {
            spec_name: c.spec_name.clone(),
            detector: c.detector.clone(),
            crossings: thresholds
                .iter()
                .map(|&t| crossing_snr(&grid, &bers, t))
                .collect::<Result<_>>()?,
            non_monotone: non_monotone_segments(&grid, &bers),
        });
    }
    Ok(Report {
        thresholds: thresholds.to_vec(),
        rows,
    })
}
