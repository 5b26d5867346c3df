//! Declarative experiment specs and the sweep runner.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline::EstimationMethod;
use crate::channel::{ChannelMode, ChannelSpec};
use crate::error::{invalid, Result};
use crate::harness::eval::{curves_to_csv, evaluate_ber, hex, BerCurve, BitDetector, ClassicalDetector, DetectorKind, EvalPlan};
use crate::harness::sim::{generate_dataset, LinkModel, TrainingSnr};
use crate::neural::{train_bank, DetectorConfig, FeatureMap, FrameExamples, ModelBank, TrainConfig, TrainedDetector};
use crate::numerics::RngStream;
use crate::ofdm::{Modulation, OfdmConfig, ReceivedBlocks};
use crate::Complex64;

const DATASET_STREAM: u64 = 0x5452_4149_4e;

pub const RESULTS_FILE: &str = "results.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PLOT_FILE: &str = "plot_results.py";
pub const PARTIAL_FILE: &str = "PARTIAL";

/// How the LSTM detector is trained for an experiment. The default budget
/// (10 epochs, rate drop after 6) trains in about a minute on one core.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSpec {
    /// Frames simulated for training and validation together (split 4:1).
    pub frames: usize,
    pub snr_db: TrainingSnr,
    pub detector: DetectorConfig,
    pub config: TrainConfig,
}

impl Default for TrainingSpec {
    fn default() -> Self {
        Self {
            frames: 10_000,
            snr_db: TrainingSnr::default(),
            detector: DetectorConfig::default(),
            config: TrainConfig {
                max_epochs: 10,
                lr_drop_period: 6,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub config: OfdmConfig,
    pub channel: ChannelSpec,
    pub channel_mode: ChannelMode,
    pub detectors: Vec<DetectorKind>,
    pub snr_grid_db: Vec<f64>,
    pub frames_per_point: usize,
    pub train: TrainingSpec,
    pub seed: u64,
}

pub fn default_snr_grid() -> Vec<f64> {
    (0..=8).map(|i| 2.5 * i as f64).collect()
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            name: "custom".into(),
            config: OfdmConfig::default(),
            channel: ChannelSpec::default(),
            channel_mode: ChannelMode::LinearOverFrame,
            detectors: vec![DetectorKind::Ls, DetectorKind::Mmse, DetectorKind::Ddlsd],
            snr_grid_db: default_snr_grid(),
            frames_per_point: 5000,
            train: TrainingSpec::default(),
            seed: 2024,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(invalid("experiment name is empty"));
        }
        self.config.validate()?;
        self.channel.profile()?;
        if self.detectors.is_empty() {
            return Err(invalid("no detectors listed"));
        }
        if self.snr_grid_db.is_empty() || self.snr_grid_db.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("snr_grid_db must be non-empty and strictly increasing"));
        }
        if self.snr_grid_db.iter().any(|v| !v.is_finite()) {
            return Err(invalid("snr_grid_db must be finite"));
        }
        if self.frames_per_point == 0 {
            return Err(invalid("frames_per_point must be at least 1"));
        }
        if self.detectors.contains(&DetectorKind::Ddlsd) {
            if self.train.frames < 5 {
                return Err(invalid("training needs at least 5 frames"));
            }
            self.train.snr_db.validate()?;
            self.train.config.validate()?;
            FeatureMap::new(&self.config, &self.train.detector)?;
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn link(&self) -> Result<LinkModel> {
        LinkModel::new(&self.config, &self.channel, self.channel_mode)
    }

    /// Bits per exact-match group in the evaluation.
    pub fn group_bits(&self) -> Result<usize> {
        Ok(FeatureMap::new(&self.config, &self.train.detector)?.group_bits())
    }

    /// Identifies a trained detector: everything that influences training.
    pub fn training_key(&self) -> String {
        let ident = serde_json::json!({
            "config": self.config,
            "channel": self.channel,
            "channel_mode": self.channel_mode,
            "train": self.train,
            "seed": self.seed,
        });
        hex(&Sha256::digest(ident.to_string().as_bytes()))[..16].to_owned()
    }

    pub fn eval_plan(&self) -> Result<EvalPlan> {
        Ok(EvalPlan {
            spec_name: self.name.clone(),
            snr_grid_db: self.snr_grid_db.clone(),
            frames_per_point: self.frames_per_point,
            seed: self.seed,
            group_bits: self.group_bits()?,
        })
    }
}

/// Simulate the training and validation frames described by `spec`.
pub fn build_dataset(spec: &ExperimentSpec) -> Result<(FrameExamples, FrameExamples)> {
    let link = spec.link()?;
    let map = FeatureMap::new(&spec.config, &spec.train.detector)?;
    let rng = RngStream::new(spec.seed, DATASET_STREAM);
    generate_dataset(&link, &map, &spec.train.snr_db, spec.train.frames, &rng)
}

/// Train on prepared sets with the settings of `spec`.
pub fn train_on(spec: &ExperimentSpec, train_set: &FrameExamples, val_set: &FrameExamples) -> Result<TrainedDetector> {
    let (bank, history) = train_bank(train_set, val_set, &spec.train.config)?;
    Ok(TrainedDetector {
        bank,
        train: spec.train.config.clone(),
        train_snr_db: spec.train.snr_db.fixed(),
        history,
    })
}

/// Train the LSTM detector described by `spec`.
pub fn train_detector(spec: &ExperimentSpec) -> Result<TrainedDetector> {
    let (train_set, val_set) = build_dataset(spec)?;
    train_on(spec, &train_set, &val_set)
}

pub const DATASET_VERSION: u32 = 1;

/// One stored frame: demodulated blocks and the bits they carry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    /// Bits as a string of `0` and `1`.
    pub bits: String,
    pub pilot: Vec<Complex64>,
    pub data: Vec<Complex64>,
}

/// On-disk dataset: the spec that generated it plus every frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub version: u32,
    pub spec: ExperimentSpec,
    pub train: Vec<FrameRecord>,
    pub val: Vec<FrameRecord>,
}

fn records(set: &FrameExamples) -> Vec<FrameRecord> {
    set.frames()
        .iter()
        .zip(set.bits())
        .map(|(f, b)| FrameRecord {
            bits: b.iter().map(|&v| if v == 1 { '1' } else { '0' }).collect(),
            pilot: f.pilot.clone(),
            data: f.data.clone(),
        })
        .collect()
}

impl DatasetFile {
    pub fn new(spec: &ExperimentSpec, train_set: &FrameExamples, val_set: &FrameExamples) -> Self {
        Self {
            version: DATASET_VERSION,
            spec: spec.clone(),
            train: records(train_set),
            val: records(val_set),
        }
    }

    pub fn to_sets(&self) -> Result<(FrameExamples, FrameExamples)> {
        if self.version != DATASET_VERSION {
            return Err(invalid(format!("unsupported dataset version {}", self.version)));
        }
        let map = FeatureMap::new(&self.spec.config, &self.spec.train.detector)?;
        let load = |recs: &[FrameRecord]| -> Result<FrameExamples> {
            let mut set = FrameExamples::new(map.clone());
            for r in recs {
                let bits = r
                    .bits
                    .chars()
                    .map(|c| match c {
                        '0' => Ok(0),
                        '1' => Ok(1),
                        other => Err(invalid(format!("bad bit character {other:?}"))),
                    })
                    .collect::<Result<Vec<u8>>>()?;
                set.push(
                    ReceivedBlocks {
                        pilot: r.pilot.clone(),
                        data: r.data.clone(),
                    },
                    bits,
                )?;
            }
            Ok(set)
        };
        Ok((load(&self.train)?, load(&self.val)?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Trained detectors keyed by [`ExperimentSpec::training_key`], optionally
/// mirrored to a directory of checkpoints.
#[derive(Debug, Default)]
pub struct TrainingCache {
    dir: Option<PathBuf>,
    models: BTreeMap<String, TrainedDetector>,
}

impl TrainingCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn with_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            models: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("ddlsd-{key}.json")))
    }

    pub fn get_or_train(&mut self, spec: &ExperimentSpec) -> Result<&TrainedDetector> {
        let key = spec.training_key();
        if !self.models.contains_key(&key) {
            let loaded = match self.path(&key) {
                Some(p) if p.exists() => Some(TrainedDetector::load(&p)?),
                _ => None,
            };
            let det = match loaded {
                Some(d) => d,
                None => {
                    let d = train_detector(spec)?;
                    if let Some(p) = self.path(&key) {
                        fs::create_dir_all(p.parent().expect("cache file has a parent"))?;
                        d.save(&p)?;
                    }
                    d
                }
            };
            self.models.insert(key.clone(), det);
        }
        Ok(&self.models[&key])
    }
}

/// Evaluate one spec, training (or fetching) the LSTM detector if listed.
pub fn evaluate_spec(spec: &ExperimentSpec, cache: &mut TrainingCache) -> Result<Vec<BerCurve>> {
    spec.validate()?;
    let bank = if spec.detectors.contains(&DetectorKind::Ddlsd) {
        Some(cache.get_or_train(spec)?.bank.clone())
    } else {
        None
    };
    evaluate_with_bank(spec, bank.as_ref())
}

/// Evaluate one spec using an already trained model bank for the LSTM detector.
pub fn evaluate_with_bank(spec: &ExperimentSpec, bank: Option<&ModelBank>) -> Result<Vec<BerCurve>> {
    spec.validate()?;
    let link = spec.link()?;
    if let Some(b) = bank {
        if b.map().ofdm() != &spec.config {
            return Err(invalid("model was trained for a different OFDM configuration"));
        }
    }
    let mut classical = Vec::new();
    for kind in &spec.detectors {
        let method = match kind {
            DetectorKind::Ls => EstimationMethod::Ls,
            DetectorKind::Mmse => EstimationMethod::Mmse,
            DetectorKind::Oracle => EstimationMethod::Oracle,
            DetectorKind::Ddlsd => continue,
        };
        classical.push((*kind, ClassicalDetector::new(&link, method)?));
    }
    let mut detectors: Vec<&dyn BitDetector> = Vec::new();
    for kind in &spec.detectors {
        match kind {
            DetectorKind::Ddlsd => {
                detectors.push(bank.ok_or_else(|| invalid("DDLSD listed but no trained model given"))?)
            }
            k => detectors.push(&classical.iter().find(|(c, _)| c == k).expect("built above").1),
        }
    }
    evaluate_ber(&detectors, &link, &spec.eval_plan()?)
}

/// Built-in experiment name and its per-configuration specs.
pub fn builtin_names() -> [&'static str; 3] {
    ["fig3_pilots", "fig4_cp", "fig5_mod"]
}

pub fn builtin_suite(name: &str) -> Result<Vec<ExperimentSpec>> {
    let base = ExperimentSpec::default();
    let variant = |suffix: &str, config: OfdmConfig| ExperimentSpec {
        name: format!("{name}/{suffix}"),
        config,
        ..base.clone()
    };
    let cfg = OfdmConfig::default();
    Ok(match name {
        "fig3_pilots" => vec![
            variant("p8", OfdmConfig { pilot_count: 8, ..cfg.clone() }),
            variant("p64", OfdmConfig { pilot_count: 64, ..cfg }),
        ],
        "fig4_cp" => vec![
            variant("cp0", OfdmConfig { cp_len: 0, ..cfg.clone() }),
            variant("cp16", OfdmConfig { cp_len: 16, ..cfg }),
        ],
        "fig5_mod" => vec![
            variant("qpsk", OfdmConfig { modulation: Modulation::Qpsk, ..cfg.clone() }),
            variant("16qam", OfdmConfig { modulation: Modulation::Qam16, ..cfg }),
        ],
        other => {
            return Err(invalid(format!(
                "unknown experiment {other:?}; built-ins are {}",
                builtin_names().join(", ")
            )))
        }
    })
}

/// Manifest written next to the results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub suite: String,
    pub code_version: String,
    pub specs: Vec<ExperimentSpec>,
    pub training_keys: BTreeMap<String, String>,
    pub curves: Vec<BerCurve>,
}

/// Files produced by [`run_experiment`].
#[derive(Clone, Debug)]
pub struct ResultBundle {
    pub dir: PathBuf,
    pub csv_path: PathBuf,
    pub manifest_path: PathBuf,
    pub plot_path: PathBuf,
    pub curves: Vec<BerCurve>,
}

pub(crate) fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Run every spec of a suite and write CSV, manifest and plot script into
/// `out_dir`. On failure a `PARTIAL` marker describes what went wrong.
pub fn run_experiment(
    suite: &str,
    specs: &[ExperimentSpec],
    out_dir: &Path,
    cache: &mut TrainingCache,
) -> Result<ResultBundle> {
    fs::create_dir_all(out_dir)?;
    let marker = out_dir.join(PARTIAL_FILE);
    if marker.exists() {
        fs::remove_file(&marker)?;
    }
    let mut curves = Vec::new();
    let outcome = (|| -> Result<()> {
        if specs.is_empty() {
            return Err(invalid("suite has no specs"));
        }
        for spec in specs {
            spec.validate()?;
        }
        for spec in specs {
            curves.extend(evaluate_spec(spec, cache)?);
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        let msg = format!(
            "run of {suite:?} aborted after {} completed curves: {e}\n",
            curves.len()
        );
        fs::write(&marker, msg)?;
        if !curves.is_empty() {
            write_atomic(&out_dir.join("results.partial.csv"), curves_to_csv(&curves)?.as_bytes())?;
        }
        return Err(e);
    }

    let training_keys = specs
        .iter()
        .filter(|s| s.detectors.contains(&DetectorKind::Ddlsd))
        .map(|s| (s.name.clone(), s.training_key()))
        .collect();
    let manifest = Manifest {
        suite: suite.to_owned(),
        code_version: env!("CARGO_PKG_VERSION").to_owned(),
        specs: specs.to_vec(),
        training_keys,
        curves: curves.clone(),
    };
    let bundle = ResultBundle {
        dir: out_dir.to_owned(),
        csv_path: out_dir.join(RESULTS_FILE),
        manifest_path: out_dir.join(MANIFEST_FILE),
        plot_path: out_dir.join(PLOT_FILE),
        curves,
    };
    write_atomic(&bundle.csv_path, curves_to_csv(&bundle.curves)?.as_bytes())?;
    write_atomic(&bundle.manifest_path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    write_atomic(&bundle.plot_path, plot_script(suite).as_bytes())?;
    Ok(bundle)
}

/// A matplotlib script that draws one BER panel per spec from the CSV.
pub fn plot_script(suite: &str) -> String {
    format!(
        r#"#!/usr/bin/env python3
# BER curves for {suite}. Usage: python3 {PLOT_FILE} [{RESULTS_FILE}]
import csv
import sys
from collections import defaultdict

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "{RESULTS_FILE}"
curves = defaultdict(lambda: ([], []))
with open(path) as f:
    for row in csv.DictReader(f):
        x, y = curves[(row["spec_name"], row["detector"])]
        x.append(float(row["snr_db"]))
        y.append(max(float(row["ber_bit"]), 1e-7))

specs = sorted({{s for s, _ in curves}})
fig, axes = plt.subplots(1, len(specs), figsize=(5 * len(specs), 4), squeeze=False)
for ax, spec in zip(axes[0], specs):
    for (s, det), (x, y) in sorted(curves.items()):
        if s == spec:
            ax.semilogy(x, y, marker="o", label=det)
    ax.set_title(spec)
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel("BER")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
fig.tight_layout()
fig.savefig("{suite}.png", dpi=150)
"#
    )
}
