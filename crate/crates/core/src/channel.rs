//! Tapped-delay-line Rayleigh channel with AWGN.
//!
//! The default profile is exponential, `var[m] ∝ exp(-m / tau)` with
//! `tau = 2` samples and `C_h = 15`, normalized to unit energy. It stands in
//! for a standardized clustered channel model, which would need parameters
//! we do not have.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numerics::{mean_power, sample_complex_gaussian, RngStream};

/// Per-tap total complex variances, normalized so they sum to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerDelayProfile {
    tap_variances: Vec<f64>,
}

impl PowerDelayProfile {
    /// Normalize arbitrary nonnegative tap powers.
    pub fn from_taps(taps: &[f64]) -> Result<Self> {
        if taps.is_empty() {
            return Err(invalid("power-delay profile needs at least one tap"));
        }
        if taps.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid("tap variances must be finite and nonnegative"));
        }
        let total: f64 = taps.iter().sum();
        if total <= 0.0 {
            return Err(invalid("power-delay profile has zero total power"));
        }
        Ok(Self {
            tap_variances: taps.iter().map(|v| v / total).collect(),
        })
    }

    pub fn exponential(tau: f64, max_delay: usize) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(invalid(format!("exponential decay constant must be positive, got {tau}")));
        }
        let taps: Vec<f64> = (0..=max_delay).map(|m| (-(m as f64) / tau).exp()).collect();
        Self::from_taps(&taps)
    }

    pub fn flat() -> Self {
        Self {
            tap_variances: vec![1.0],
        }
    }

    pub fn tap_variances(&self) -> &[f64] {
        &self.tap_variances
    }

    /// Maximum delay `C_h` in samples.
    pub fn max_delay(&self) -> usize {
        self.tap_variances.len() - 1
    }

    /// Frequency correlation `R[k, l] = sum_m var_m exp(-j 2 pi (k - l) m / n)`.
    pub fn frequency_correlation(&self, k: usize, l: usize, n: usize) -> Complex64 {
        let d = k as f64 - l as f64;
        self.tap_variances
            .iter()
            .enumerate()
            .map(|(m, &v)| {
                Complex64::from_polar(v, -2.0 * std::f64::consts::PI * d * m as f64 / n as f64)
            })
            .sum()
    }
}

impl Default for PowerDelayProfile {
    fn default() -> Self {
        ChannelSpec::default().profile().expect("default profile is valid")
    }
}

/// Channel configuration as it appears in experiment config files: either an
/// explicit list of tap variances or a parametric exponential profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum ChannelSpec {
    Exponential {
        profile: ExponentialTag,
        tau: f64,
        c_h: usize,
    },
    Taps { taps: Vec<f64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExponentialTag {
    Exponential,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        ChannelSpec::Exponential {
            profile: ExponentialTag::Exponential,
            tau: 2.0,
            c_h: 15,
        }
    }
}

impl ChannelSpec {
    pub fn exponential(tau: f64, c_h: usize) -> Self {
        ChannelSpec::Exponential {
            profile: ExponentialTag::Exponential,
            tau,
            c_h,
        }
    }

    pub fn profile(&self) -> Result<PowerDelayProfile> {
        match self {
            ChannelSpec::Exponential { tau, c_h, .. } => PowerDelayProfile::exponential(*tau, *c_h),
            ChannelSpec::Taps { taps } => PowerDelayProfile::from_taps(taps),
        }
    }
}

/// One block-fading draw of the tap gains.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    pub taps: Vec<Complex64>,
}

impl ChannelRealization {
    pub fn identity() -> Self {
        Self {
            taps: vec![Complex64::new(1.0, 0.0)],
        }
    }

    pub fn max_delay(&self) -> usize {
        self.taps.len() - 1
    }
}

/// AWGN level, stored as total complex variance per sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub snr_db: f64,
    pub noise_variance: f64,
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        Self {
            snr_db: f64::INFINITY,
            noise_variance: 0.0,
        }
    }

    pub fn from_received_power(snr_db: f64, received_power: f64) -> Result<Self> {
        if !(received_power > 0.0) {
            return Err(invalid("cannot calibrate noise against zero signal power"));
        }
        Ok(Self {
            snr_db,
            noise_variance: received_power / 10f64.powf(snr_db / 10.0),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    /// Circular convolution applied to every `block_len` chunk independently.
    CyclicPerBlock,
    /// Linear convolution over the whole serialized frame, zero state before it.
    LinearOverFrame,
}

pub fn draw_channel(pdp: &PowerDelayProfile, rng: &mut RngStream) -> ChannelRealization {
    let taps = pdp
        .tap_variances
        .iter()
        .map(|&v| sample_complex_gaussian(rng, v).expect("profile variances are nonnegative"))
        .collect();
    ChannelRealization { taps }
}

/// Noiseless channel output. `block_len` is the cyclic block length `N`;
/// in linear mode it only bounds the channel length.
pub fn convolve(
    tx: &[Complex64],
    h: &ChannelRealization,
    mode: ChannelMode,
    block_len: usize,
) -> Result<Vec<Complex64>> {
    if h.taps.is_empty() {
        return Err(invalid("channel realization has no taps"));
    }
    if h.max_delay() >= block_len {
        return Err(invalid(format!(
            "channel delay {} must be below block length {block_len}",
            h.max_delay()
        )));
    }
    let mut out = vec![Complex64::new(0.0, 0.0); tx.len()];
    match mode {
        ChannelMode::CyclicPerBlock => {
            if tx.len() % block_len != 0 {
                return Err(invalid(format!(
                    "cyclic mode needs a multiple of {block_len} samples, got {}",
                    tx.len()
                )));
            }
            for (block, dst) in tx.chunks(block_len).zip(out.chunks_mut(block_len)) {
                for (n, y) in dst.iter_mut().enumerate() {
                    for (m, g) in h.taps.iter().enumerate() {
                        *y += g * block[(n + block_len - m) % block_len];
                    }
                }
            }
        }
        ChannelMode::LinearOverFrame => {
            for (n, y) in out.iter_mut().enumerate() {
                for (m, g) in h.taps.iter().enumerate().take(n + 1) {
                    *y += g * tx[n - m];
                }
            }
        }
    }
    Ok(out)
}

/// Add i.i.d. CN(0, noise_variance) samples in place.
pub fn add_noise(samples: &mut [Complex64], noise: &NoiseSpec, rng: &mut RngStream) -> Result<()> {
    if noise.noise_variance == 0.0 {
        return Ok(());
    }
    for s in samples.iter_mut() {
        *s += sample_complex_gaussian(rng, noise.noise_variance)?;
    }
    Ok(())
}

/// Channel convolution followed by AWGN.
pub fn apply_channel(
    tx: &[Complex64],
    h: &ChannelRealization,
    noise: &NoiseSpec,
    rng: &mut RngStream,
    mode: ChannelMode,
    block_len: usize,
) -> Result<Vec<Complex64>> {
    let mut y = convolve(tx, h, mode, block_len)?;
    add_noise(&mut y, noise, rng)?;
    Ok(y)
}

/// Unnormalized DFT of the zero-padded taps, `H_k = sum_m h_m exp(-j 2 pi k m / N)`.
pub fn frequency_response(h: &ChannelRealization, n: usize) -> Result<Vec<Complex64>> {
    if h.max_delay() >= n {
        return Err(invalid(format!("channel delay {} must be below N = {n}", h.max_delay())));
    }
    Ok((0..n)
        .map(|k| {
            h.taps
                .iter()
                .enumerate()
                .map(|(m, g)| {
                    g * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * (k * m % n) as f64 / n as f64)
                })
                .sum()
        })
        .collect())
}

/// Noise level for `snr_db` measured against the average received power
/// (post-channel, pre-noise) of this particular transmission.
pub fn calibrate_noise(
    snr_db: f64,
    tx: &[Complex64],
    h: &ChannelRealization,
    mode: ChannelMode,
    block_len: usize,
) -> Result<NoiseSpec> {
    let rx = convolve(tx, h, mode, block_len)?;
    NoiseSpec::from_received_power(snr_db, mean_power(&rx))
}
