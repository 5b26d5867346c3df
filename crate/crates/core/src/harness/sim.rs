//! End-to-end frame simulation and training datasets.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{
    add_noise, convolve, draw_channel, frequency_response, ChannelMode, ChannelRealization, ChannelSpec, NoiseSpec,
    PowerDelayProfile,
};
use crate::error::{invalid, Result};
use crate::neural::{FeatureMap, FrameExamples};
use crate::numerics::RngStream;
use crate::ofdm::{build_frame, demodulate_frame, pilot_sequence, OfdmConfig, ReceivedBlocks};

const BITS_TAG: u64 = 0;
const CHANNEL_TAG: u64 = 1;
const NOISE_TAG: u64 = 2;
const SNR_TAG: u64 = 3;

/// Transmitter, channel and receiver front end for one configuration.
#[derive(Clone, Debug)]
pub struct LinkModel {
    config: OfdmConfig,
    channel: ChannelSpec,
    pdp: PowerDelayProfile,
    mode: ChannelMode,
    pilots: Vec<Complex64>,
    fixed: Option<ChannelRealization>,
}

/// Everything produced by one simulated frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SimFrame {
    pub bits: Vec<u8>,
    pub rx: Vec<Complex64>,
    pub blocks: ReceivedBlocks,
    pub channel: ChannelRealization,
    /// Per-subcarrier gains of the drawn channel.
    pub response: Vec<Complex64>,
    pub noise_variance: f64,
    pub snr_db: f64,
}

impl SimFrame {
    /// SHA-256 over the bits and received samples.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(&self.bits);
        for s in &self.rx {
            h.update(s.re.to_le_bytes());
            h.update(s.im.to_le_bytes());
        }
        h.finalize().into()
    }
}

impl LinkModel {
    pub fn new(config: &OfdmConfig, channel: &ChannelSpec, mode: ChannelMode) -> Result<Self> {
        config.validate()?;
        let pdp = channel.profile()?;
        if pdp.max_delay() >= config.subcarriers {
            return Err(invalid("channel delay spread must be shorter than a block"));
        }
        Ok(Self {
            config: config.clone(),
            channel: channel.clone(),
            pdp,
            mode,
            pilots: pilot_sequence(config.pilot_count),
            fixed: None,
        })
    }

    /// Use the same channel for every frame instead of random draws.
    pub fn with_fixed_channel(mut self, channel: ChannelRealization) -> Result<Self> {
        if channel.taps.is_empty() || channel.max_delay() >= self.config.subcarriers {
            return Err(invalid("fixed channel must have between 1 and N taps"));
        }
        self.fixed = Some(channel);
        Ok(self)
    }

    pub fn config(&self) -> &OfdmConfig {
        &self.config
    }

    pub fn channel(&self) -> &ChannelSpec {
        &self.channel
    }

    pub fn pdp(&self) -> &PowerDelayProfile {
        &self.pdp
    }

    pub fn mode(&self) -> ChannelMode {
        self.mode
    }

    /// Simulate one frame; an infinite `snr_db` is noiseless.
    pub fn simulate(&self, snr_db: f64, rng: &RngStream) -> Result<SimFrame> {
        let bits = rng.substream(BITS_TAG).bits(self.config.bits_per_frame());
        let channel = match &self.fixed {
            Some(h) => h.clone(),
            None => draw_channel(&self.pdp, &mut rng.substream(CHANNEL_TAG)),
        };
        self.transmit(bits, channel, snr_db, &mut rng.substream(NOISE_TAG))
    }

    /// Send `bits` over a given channel.
    pub fn transmit(
        &self,
        bits: Vec<u8>,
        channel: ChannelRealization,
        snr_db: f64,
        noise_rng: &mut RngStream,
    ) -> Result<SimFrame> {
        let n = self.config.subcarriers;
        let tx = build_frame(&bits, &self.pilots, &self.config)?.serialize(&self.config)?;
        let mut rx = convolve(&tx, &channel, self.mode, self.block_len())?;
        let noise = NoiseSpec::from_received_power(snr_db, self.useful_power(&rx))?;
        add_noise(&mut rx, &noise, noise_rng)?;
        let blocks = demodulate_frame(&rx, &self.config)?;
        Ok(SimFrame {
            response: frequency_response(&channel, n)?,
            bits,
            rx,
            blocks,
            channel,
            noise_variance: noise.noise_variance,
            snr_db,
        })
    }

    /// Mean power of the received samples the receiver keeps after dropping
    /// each block's cyclic prefix.
    fn useful_power(&self, rx: &[Complex64]) -> f64 {
        let cp = self.config.cp_len;
        let kept: Vec<Complex64> = rx
            .chunks(self.config.samples_per_block())
            .flat_map(|block| block[cp..].iter().copied())
            .collect();
        crate::numerics::mean_power(&kept)
    }

    fn block_len(&self) -> usize {
        match self.mode {
            ChannelMode::CyclicPerBlock => self.config.samples_per_block(),
            ChannelMode::LinearOverFrame => self.config.subcarriers,
        }
    }
}

/// SNR used when generating training frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrainingSnr {
    Fixed(f64),
    /// Each frame draws one of these values uniformly.
    Mixed(Vec<f64>),
}

impl Default for TrainingSnr {
    fn default() -> Self {
        TrainingSnr::Fixed(20.0)
    }
}

impl TrainingSnr {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            TrainingSnr::Fixed(v) => v.is_finite(),
            TrainingSnr::Mixed(v) => !v.is_empty() && v.iter().all(|x| x.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid("training SNR must be finite (and non-empty when mixed)"))
        }
    }

    fn pick(&self, rng: &RngStream) -> f64 {
        match self {
            TrainingSnr::Fixed(v) => *v,
            TrainingSnr::Mixed(v) => v[rng.substream(SNR_TAG).next_index(v.len())],
        }
    }

    pub fn fixed(&self) -> Option<f64> {
        match self {
            TrainingSnr::Fixed(v) => Some(*v),
            TrainingSnr::Mixed(_) => None,
        }
    }
}

/// Number of training frames out of `n_frames` under the 4:1 split.
pub fn train_split(n_frames: usize) -> usize {
    n_frames * 4 / 5
}

/// Simulate `n_frames` frames and split them 4:1 into training and
/// validation sets, in generation order.
pub fn generate_dataset(
    link: &LinkModel,
    map: &FeatureMap,
    snr: &TrainingSnr,
    n_frames: usize,
    rng: &RngStream,
) -> Result<(FrameExamples, FrameExamples)> {
    if n_frames < 5 {
        return Err(invalid("a dataset needs at least 5 frames"));
    }
    snr.validate()?;
    if map.ofdm() != link.config() {
        return Err(invalid("feature map and link use different OFDM configurations"));
    }
    let n_train = train_split(n_frames);
    let mut train = FrameExamples::new(map.clone());
    let mut val = FrameExamples::new(map.clone());
    for i in 0..n_frames {
        let frame_rng = rng.substream(i as u64);
        let frame = link.simulate(snr.pick(&frame_rng), &frame_rng)?;
        let dst = if i < n_train { &mut train } else { &mut val };
        dst.push(frame.blocks, frame.bits)?;
    }
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{DetectorConfig, ExampleSource};

    fn link() -> LinkModel {
        LinkModel::new(&OfdmConfig::default(), &ChannelSpec::default(), ChannelMode::LinearOverFrame).unwrap()
    }

    #[test]
    fn split_and_group_counts() {
        assert_eq!(train_split(10_000), 8000);
        let map = FeatureMap::new(&OfdmConfig::default(), &DetectorConfig::grouped(16)).unwrap();
        let (tr, va) = generate_dataset(&link(), &map, &TrainingSnr::Fixed(20.0), 10, &RngStream::new(1, 0)).unwrap();
        assert_eq!((tr.n_frames(), va.n_frames()), (8, 2));
        assert_eq!(tr.len(), 64);
        assert_eq!(tr.outputs(), 16);
        assert!(generate_dataset(&link(), &map, &TrainingSnr::Fixed(20.0), 4, &RngStream::new(1, 0)).is_err());
    }

    #[test]
    fn datasets_are_deterministic() {
        let map = FeatureMap::new(&OfdmConfig::default(), &DetectorConfig::default()).unwrap();
        let snr = TrainingSnr::Mixed(vec![5.0, 10.0, 20.0]);
        let a = generate_dataset(&link(), &map, &snr, 12, &RngStream::new(9, 0)).unwrap();
        let b = generate_dataset(&link(), &map, &snr, 12, &RngStream::new(9, 0)).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&link(), &map, &snr, 12, &RngStream::new(10, 0)).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn frame_is_reproducible_and_calibrated() {
        let l = link();
        let f = l.simulate(10.0, &RngStream::new(3, 3)).unwrap();
        assert_eq!(f, l.simulate(10.0, &RngStream::new(3, 3)).unwrap());
        assert_eq!(f.digest(), l.simulate(10.0, &RngStream::new(3, 3)).unwrap().digest());
        assert_ne!(f.digest(), l.simulate(10.0, &RngStream::new(3, 4)).unwrap().digest());
        assert_eq!(f.rx.len(), 160);
        assert!(f.noise_variance > 0.0);
        assert_eq!(l.simulate(f64::INFINITY, &RngStream::new(3, 3)).unwrap().noise_variance, 0.0);

        let awgn = link().with_fixed_channel(ChannelRealization::identity()).unwrap();
        let g = awgn.simulate(f64::INFINITY, &RngStream::new(3, 3)).unwrap();
        assert_eq!(g.channel, ChannelRealization::identity());
        assert!(g.response.iter().all(|h| (h - Complex64::new(1.0, 0.0)).norm() < 1e-15));
        // Unit-energy symbols through a unitary transform: the kept samples carry unit power.
        let n = awgn.simulate(10.0, &RngStream::new(3, 5)).unwrap();
        assert!((n.noise_variance - 0.1).abs() < 1e-12);
    }

    #[test]
    fn training_snr_json() {
        assert_eq!(serde_json::from_str::<TrainingSnr>("20").unwrap(), TrainingSnr::Fixed(20.0));
        assert_eq!(
            serde_json::from_str::<TrainingSnr>("[0, 10]").unwrap(),
            TrainingSnr::Mixed(vec![0.0, 10.0])
        );
        assert!(TrainingSnr::Mixed(vec![]).validate().is_err());
    }
}
