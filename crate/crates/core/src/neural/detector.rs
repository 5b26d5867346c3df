//! Feature extraction, model banks and bit prediction for the LSTM receiver.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Result};
use crate::neural::lstm::{forward_batch, Layout, LstmParams};
use crate::neural::optim::TrainConfig;
use crate::neural::train::{train, ExampleSource, TrainingExample, TrainingHistory};
use crate::numerics::splitmix64;
use crate::ofdm::{demodulate_frame, reference_pilot_block, OfdmConfig, ReceivedBlocks};

/// Rows per forward pass when detecting many frames at once.
const DETECT_BATCH_ROWS: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sharing {
    /// One set of weights serves every group.
    Tied,
    /// An independent model per group.
    PerGroup,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Bits predicted by one model evaluation; `None` means one subcarrier.
    pub group_bits: Option<usize>,
    pub sharing: Sharing,
    /// Derotate the pilot block by the known pilots and rotate both blocks so
    /// the group's first subcarrier comes first.
    pub align: bool,
    pub layout: Layout,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            group_bits: None,
            sharing: Sharing::Tied,
            align: true,
            layout: Layout::default(),
        }
    }
}

impl DetectorConfig {
    /// Raw received blocks as features, independent 16-bit group models.
    pub fn grouped(group_bits: usize) -> Self {
        Self {
            group_bits: Some(group_bits),
            sharing: Sharing::PerGroup,
            align: false,
            layout: Layout::default(),
        }
    }
}

/// Maps received blocks to per-group feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    ofdm: OfdmConfig,
    detector: DetectorConfig,
    group_bits: usize,
    n_groups: usize,
    derotate: Vec<Complex64>,
}

impl FeatureMap {
    pub fn new(ofdm: &OfdmConfig, detector: &DetectorConfig) -> Result<Self> {
        ofdm.validate()?;
        let bps = ofdm.modulation.bits_per_symbol();
        let group_bits = detector.group_bits.unwrap_or(bps);
        let total = ofdm.bits_per_frame();
        if group_bits == 0 || total % group_bits != 0 {
            return Err(invalid(format!("group size {group_bits} does not divide {total} data bits")));
        }
        if detector.align && group_bits % bps != 0 {
            return Err(invalid("aligned features need groups made of whole subcarriers"));
        }
        let n_groups = total / group_bits;
        if detector.sharing == Sharing::Tied && !detector.align && n_groups > 1 {
            return Err(invalid("a tied model needs aligned features to tell groups apart"));
        }
        if detector.layout.input_len() != 4 * ofdm.subcarriers {
            return Err(invalid(format!(
                "layout {}x{} does not cover {} features",
                detector.layout.timesteps,
                detector.layout.features,
                4 * ofdm.subcarriers
            )));
        }
        let derotate = reference_pilot_block(ofdm)?
            .iter()
            .map(|p| p.conj() / p.norm_sqr())
            .collect();
        Ok(Self {
            ofdm: ofdm.clone(),
            detector: detector.clone(),
            group_bits,
            n_groups,
            derotate,
        })
    }

    pub fn ofdm(&self) -> &OfdmConfig {
        &self.ofdm
    }

    pub fn detector(&self) -> &DetectorConfig {
        &self.detector
    }

    pub fn layout(&self) -> Layout {
        self.detector.layout
    }

    pub fn group_bits(&self) -> usize {
        self.group_bits
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn input_len(&self) -> usize {
        4 * self.ofdm.subcarriers
    }

    /// Number of distinct models a bank needs.
    pub fn n_models(&self) -> usize {
        match self.detector.sharing {
            Sharing::Tied => 1,
            Sharing::PerGroup => self.n_groups,
        }
    }

    /// Write the features of `group` into `out`: real/imaginary interleaved
    /// pilot block followed by the data block.
    pub fn fill(&self, blocks: &ReceivedBlocks, group: usize, out: &mut [f64]) {
        let n = self.ofdm.subcarriers;
        let shift = if self.detector.align {
            group * self.group_bits / self.ofdm.modulation.bits_per_symbol()
        } else {
            0
        };
        for j in 0..n {
            let k = (j + shift) % n;
            let p = if self.detector.align {
                blocks.pilot[k] * self.derotate[k]
            } else {
                blocks.pilot[k]
            };
            let d = blocks.data[k];
            out[2 * j] = p.re;
            out[2 * j + 1] = p.im;
            out[2 * n + 2 * j] = d.re;
            out[2 * n + 2 * j + 1] = d.im;
        }
    }

    pub fn example(&self, blocks: &ReceivedBlocks, bits: &[u8], group: usize) -> Result<TrainingExample> {
        check_len(self.ofdm.subcarriers, blocks.pilot.len())?;
        check_len(self.ofdm.subcarriers, blocks.data.len())?;
        check_len(self.ofdm.bits_per_frame(), bits.len())?;
        if group >= self.n_groups {
            return Err(invalid(format!("group {group} out of range")));
        }
        let mut features = vec![0.0; self.input_len()];
        self.fill(blocks, group, &mut features);
        Ok(TrainingExample {
            features,
            labels: bits[group * self.group_bits..(group + 1) * self.group_bits].to_vec(),
            group_index: group,
        })
    }
}

/// Demodulated frames with their transmitted bits.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameExamples {
    map: FeatureMap,
    frames: Vec<ReceivedBlocks>,
    bits: Vec<Vec<u8>>,
}

impl FrameExamples {
    pub fn new(map: FeatureMap) -> Self {
        Self {
            map,
            frames: Vec::new(),
            bits: Vec::new(),
        }
    }

    pub fn push(&mut self, blocks: ReceivedBlocks, bits: Vec<u8>) -> Result<()> {
        let n = self.map.ofdm.subcarriers;
        check_len(n, blocks.pilot.len())?;
        check_len(n, blocks.data.len())?;
        check_len(self.map.ofdm.bits_per_frame(), bits.len())?;
        if bits.iter().any(|&b| b > 1) {
            return Err(invalid("bits must be 0 or 1"));
        }
        self.frames.push(blocks);
        self.bits.push(bits);
        Ok(())
    }

    pub fn map(&self) -> &FeatureMap {
        &self.map
    }

    pub fn frames(&self) -> &[ReceivedBlocks] {
        &self.frames
    }

    pub fn bits(&self) -> &[Vec<u8>] {
        &self.bits
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    /// Examples of a single group, for per-group models.
    pub fn group(&self, group: usize) -> GroupExamples<'_> {
        GroupExamples { data: self, group }
    }

    pub fn example(&self, index: usize) -> Result<TrainingExample> {
        let g = self.map.n_groups;
        let frame = index / g;
        if frame >= self.frames.len() {
            return Err(invalid(format!("example {index} out of range")));
        }
        self.map.example(&self.frames[frame], &self.bits[frame], index % g)
    }
}

fn fill_labels(bits: &[u8], group: usize, group_bits: usize, labels: &mut [f64]) {
    for (d, &b) in labels.iter_mut().zip(&bits[group * group_bits..(group + 1) * group_bits]) {
        *d = f64::from(b);
    }
}

impl ExampleSource for FrameExamples {
    fn len(&self) -> usize {
        self.frames.len() * self.map.n_groups
    }

    fn input_len(&self) -> usize {
        self.map.input_len()
    }

    fn outputs(&self) -> usize {
        self.map.group_bits
    }

    fn fill(&self, index: usize, features: &mut [f64], labels: &mut [f64]) {
        let g = self.map.n_groups;
        let (frame, group) = (index / g, index % g);
        self.map.fill(&self.frames[frame], group, features);
        fill_labels(&self.bits[frame], group, self.map.group_bits, labels);
    }
}

/// One group's slice of a [`FrameExamples`] set.
#[derive(Clone, Copy, Debug)]
pub struct GroupExamples<'a> {
    data: &'a FrameExamples,
    group: usize,
}

impl ExampleSource for GroupExamples<'_> {
    fn len(&self) -> usize {
        self.data.frames.len()
    }

    fn input_len(&self) -> usize {
        self.data.map.input_len()
    }

    fn outputs(&self) -> usize {
        self.data.map.group_bits
    }

    fn fill(&self, index: usize, features: &mut [f64], labels: &mut [f64]) {
        self.data.map.fill(&self.data.frames[index], self.group, features);
        fill_labels(&self.data.bits[index], self.group, self.data.map.group_bits, labels);
    }
}

/// Trained models plus the feature map they expect.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBank {
    map: FeatureMap,
    models: Vec<LstmParams>,
}

impl ModelBank {
    pub fn new(map: FeatureMap, models: Vec<LstmParams>) -> Result<Self> {
        if models.len() != map.n_models() {
            return Err(invalid(format!(
                "bank has {} models, {} groups need {}",
                models.len(),
                map.n_groups(),
                map.n_models()
            )));
        }
        for m in &models {
            if m.input() != map.layout().features || m.outputs() != map.group_bits() {
                return Err(invalid("model shape does not match the feature map"));
            }
            m.check_finite()?;
        }
        Ok(Self { map, models })
    }

    pub fn map(&self) -> &FeatureMap {
        &self.map
    }

    pub fn models(&self) -> &[LstmParams] {
        &self.models
    }

    pub fn model(&self, group: usize) -> Result<&LstmParams> {
        let idx = match self.map.detector.sharing {
            Sharing::Tied => 0,
            Sharing::PerGroup => group,
        };
        self.models
            .get(idx)
            .filter(|_| group < self.map.n_groups)
            .ok_or_else(|| invalid(format!("no model for group {group}")))
    }

    pub fn fingerprint(&self) -> u64 {
        self.models.iter().fold(self.models.len() as u64, |h, m| splitmix64(h ^ m.fingerprint()))
    }

    /// Output probabilities of every group for each frame.
    pub fn probabilities(&self, frames: &[ReceivedBlocks]) -> Result<Vec<Vec<f64>>> {
        let g = self.map.n_groups;
        let p = self.map.group_bits;
        let len = self.map.input_len();
        for f in frames {
            check_len(self.map.ofdm.subcarriers, f.pilot.len())?;
            check_len(self.map.ofdm.subcarriers, f.data.len())?;
        }
        let mut out = vec![vec![0.0; g * p]; frames.len()];
        match self.map.detector.sharing {
            Sharing::Tied => {
                let per_chunk = (DETECT_BATCH_ROWS / g).max(1);
                for (c, chunk) in frames.chunks(per_chunk).enumerate() {
                    let mut x = Array2::zeros((chunk.len() * g, len));
                    for (fi, f) in chunk.iter().enumerate() {
                        for group in 0..g {
                            let row = x.row_mut(fi * g + group).into_slice().expect("contiguous row");
                            self.map.fill(f, group, row);
                        }
                    }
                    let probs = forward_batch(x.view(), &self.models[0], self.map.layout())?.probs;
                    for (fi, dst) in out[c * per_chunk..c * per_chunk + chunk.len()].iter_mut().enumerate() {
                        for group in 0..g {
                            dst[group * p..(group + 1) * p]
                                .iter_mut()
                                .zip(probs.row(fi * g + group))
                                .for_each(|(d, s)| *d = *s);
                        }
                    }
                }
            }
            Sharing::PerGroup => {
                for (c, chunk) in frames.chunks(DETECT_BATCH_ROWS).enumerate() {
                    let mut x = Array2::zeros((chunk.len(), len));
                    for group in 0..g {
                        for (fi, f) in chunk.iter().enumerate() {
                            self.map.fill(f, group, x.row_mut(fi).into_slice().expect("contiguous row"));
                        }
                        let probs = forward_batch(x.view(), self.model(group)?, self.map.layout())?.probs;
                        for (fi, dst) in out[c * DETECT_BATCH_ROWS..c * DETECT_BATCH_ROWS + chunk.len()]
                            .iter_mut()
                            .enumerate()
                        {
                            dst[group * p..(group + 1) * p]
                                .iter_mut()
                                .zip(probs.row(fi))
                                .for_each(|(d, s)| *d = *s);
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Hard decisions for each frame; probabilities of exactly 0.5 give 0.
    pub fn detect(&self, frames: &[ReceivedBlocks]) -> Result<Vec<Vec<u8>>> {
        Ok(self
            .probabilities(frames)?
            .into_iter()
            .map(|probs| probs.into_iter().map(|v| u8::from(v > 0.5)).collect())
            .collect())
    }
}

/// Demodulate a received frame and detect its data bits.
pub fn predict_bits(frame_rx_time: &[Complex64], bank: &ModelBank) -> Result<Vec<u8>> {
    let blocks = demodulate_frame(frame_rx_time, bank.map().ofdm())?;
    Ok(bank.detect(std::slice::from_ref(&blocks))?.remove(0))
}

/// Train the models a feature map calls for.
pub fn train_bank(
    train_set: &FrameExamples,
    val_set: &FrameExamples,
    cfg: &TrainConfig,
) -> Result<(ModelBank, Vec<TrainingHistory>)> {
    if train_set.map() != val_set.map() {
        return Err(invalid("training and validation sets use different feature maps"));
    }
    let map = train_set.map().clone();
    let layout = map.layout();
    let mut models = Vec::new();
    let mut histories = Vec::new();
    match map.detector().sharing {
        Sharing::Tied => {
            let (m, h) = train(train_set, val_set, cfg, layout)?;
            models.push(m);
            histories.push(h);
        }
        Sharing::PerGroup => {
            for g in 0..map.n_groups() {
                let group_cfg = TrainConfig {
                    seed: splitmix64(cfg.seed ^ (g as u64 + 1)),
                    ..cfg.clone()
                };
                let (m, h) = train(&train_set.group(g), &val_set.group(g), &group_cfg, layout)?;
                models.push(m);
                histories.push(h);
            }
        }
    }
    Ok((ModelBank::new(map, models)?, histories))
}
