//! Classical receiver: pilot-based LS or LMMSE channel estimation followed by
//! coherent maximum-likelihood detection on each subcarrier.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::PowerDelayProfile;
use crate::error::{check_len, invalid, Error, Result};
use crate::numerics::interpolate_frequency;
use crate::ofdm::{demodulate_frame, reference_pilot_block, Constellation, OfdmConfig, ReceivedBlocks};

/// Systems whose regularized condition number exceeds this are rejected.
pub const MAX_CONDITION: f64 = 1e15;
/// Relative ridge added to the LMMSE system so the noiseless limit stays solvable.
pub const MMSE_RIDGE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EstimationMethod {
    Ls,
    Mmse,
    Oracle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelEstimate {
    pub h_hat: Vec<Complex64>,
    pub method: EstimationMethod,
    pub noise_variance_used: Option<f64>,
    pub condition_number: Option<f64>,
}

impl ChannelEstimate {
    pub fn oracle(h: Vec<Complex64>) -> Self {
        Self {
            h_hat: h,
            method: EstimationMethod::Oracle,
            noise_variance_used: None,
            condition_number: None,
        }
    }
}

fn raw_pilot_estimates(
    y_pilot_block: &[Complex64],
    known_pilots: &[Complex64],
    positions: &[usize],
) -> Result<Vec<Complex64>> {
    check_len(positions.len(), known_pilots.len())?;
    positions
        .iter()
        .zip(known_pilots)
        .map(|(&k, &p)| {
            if p.norm_sqr() == 0.0 {
                return Err(invalid(format!("pilot symbol at subcarrier {k} is zero")));
            }
            let y = y_pilot_block
                .get(k)
                .ok_or_else(|| invalid(format!("pilot position {k} out of range")))?;
            Ok(y / p)
        })
        .collect()
}

/// `H_k = Y_k / D_k` on the pilots, cyclic linear interpolation elsewhere.
pub fn ls_estimate(
    y_pilot_block: &[Complex64],
    known_pilots: &[Complex64],
    positions: &[usize],
    n: usize,
) -> Result<ChannelEstimate> {
    check_len(n, y_pilot_block.len())?;
    let raw = raw_pilot_estimates(y_pilot_block, known_pilots, positions)?;
    Ok(ChannelEstimate {
        h_hat: interpolate_frequency(positions, &raw, n)?,
        method: EstimationMethod::Ls,
        noise_variance_used: None,
        condition_number: None,
    })
}

/// Frequency-domain LMMSE smoother with correlation taken from the profile.
///
/// `H = R_hp (R_pp + s Λ)^-1 H_ls`, with `Λ = diag(1/|D_k|^2)` the LS noise
/// scaling on each pilot. The pilot-side system is whitened by `Λ^{-1/2}` and
/// eigendecomposed once, so each call is a couple of matrix-vector products.
#[derive(Clone, Debug)]
pub struct MmseEstimator {
    n: usize,
    positions: Vec<usize>,
    pilots: Vec<Complex64>,
    /// Eigenvalues of `Λ^{-1/2} R_pp Λ^{-1/2}`.
    eigenvalues: Vec<f64>,
    /// `R_hp Λ^{-1/2} U`, N x P.
    output_map: DMatrix<Complex64>,
    /// `U^H Λ^{-1/2}`, P x P.
    input_map: DMatrix<Complex64>,
    ridge: f64,
}

impl MmseEstimator {
    pub fn new(
        pdp: &PowerDelayProfile,
        known_pilots: &[Complex64],
        positions: &[usize],
        n: usize,
    ) -> Result<Self> {
        check_len(positions.len(), known_pilots.len())?;
        if positions.is_empty() || positions.iter().any(|&k| k >= n) {
            return Err(invalid("pilot positions must be non-empty and inside [0, N)"));
        }
        if known_pilots.iter().any(|p| p.norm_sqr() == 0.0) {
            return Err(invalid("pilot symbols must be nonzero"));
        }
        if pdp.max_delay() >= n {
            return Err(invalid("channel delay spread exceeds block length"));
        }
        let p = positions.len();
        let corr: Vec<Complex64> = (0..n).map(|d| pdp.frequency_correlation(d, 0, n)).collect();
        let r = |k: usize, l: usize| corr[(k + n - l) % n];
        // Λ^{-1/2} = diag(|D_k|)
        let scale: Vec<f64> = known_pilots.iter().map(|p| p.norm()).collect();

        let whitened = DMatrix::from_fn(p, p, |i, j| {
            r(positions[i], positions[j]) * (scale[i] * scale[j])
        });
        let eig = SymmetricEigen::new(whitened);
        let u = eig.eigenvectors;
        let eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();

        let r_hp = DMatrix::from_fn(n, p, |k, j| r(k, positions[j]) * scale[j]);
        let output_map = r_hp * &u;
        let input_map = DMatrix::from_fn(p, p, |i, j| u[(j, i)].conj() * scale[j]);
        let mean_eig = eigenvalues.iter().sum::<f64>() / p as f64;

        Ok(Self {
            n,
            positions: positions.to_vec(),
            pilots: known_pilots.to_vec(),
            eigenvalues,
            output_map,
            input_map,
            ridge: MMSE_RIDGE * mean_eig.max(f64::MIN_POSITIVE),
        })
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    /// Condition number of the regularized, whitened pilot system.
    pub fn condition_number(&self, noise_variance: f64) -> f64 {
        let s = noise_variance + self.ridge;
        let max = self.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        (max + s) / (min.max(0.0) + s)
    }

    pub fn estimate(&self, y_pilot_block: &[Complex64], noise_variance: f64) -> Result<ChannelEstimate> {
        check_len(self.n, y_pilot_block.len())?;
        if !(noise_variance >= 0.0) {
            return Err(invalid(format!("noise variance must be nonnegative, got {noise_variance}")));
        }
        let condition = self.condition_number(noise_variance);
        if !condition.is_finite() || condition > MAX_CONDITION {
            return Err(Error::Singular { condition });
        }
        let raw = raw_pilot_estimates(y_pilot_block, &self.pilots, &self.positions)?;
        let s = noise_variance + self.ridge;
        let mut z = &self.input_map * DVector::from_vec(raw);
        for (zi, &lam) in z.iter_mut().zip(&self.eigenvalues) {
            *zi /= lam.max(0.0) + s;
        }
        let h = &self.output_map * z;
        Ok(ChannelEstimate {
            h_hat: h.iter().copied().collect(),
            method: EstimationMethod::Mmse,
            noise_variance_used: Some(noise_variance),
            condition_number: Some(condition),
        })
    }
}

pub fn mmse_estimate(
    y_pilot_block: &[Complex64],
    known_pilots: &[Complex64],
    positions: &[usize],
    pdp: &PowerDelayProfile,
    noise_variance: f64,
    n: usize,
) -> Result<ChannelEstimate> {
    MmseEstimator::new(pdp, known_pilots, positions, n)?.estimate(y_pilot_block, noise_variance)
}

/// Per-subcarrier minimizer of `|Y_k - H_k c|^2` over the constellation.
/// Because `H` is diagonal this is the joint minimizer of `||Y - H D||^2`.
pub fn mld_detect_indices(y: &[Complex64], h_hat: &[Complex64], constellation: &Constellation) -> Result<Vec<usize>> {
    check_len(y.len(), h_hat.len())?;
    Ok(y.iter()
        .zip(h_hat)
        .map(|(&yk, &hk)| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, &c) in constellation.points().iter().enumerate() {
                let d = (yk - hk * c).norm_sqr();
                if d < best_d {
                    best = i;
                    best_d = d;
                }
            }
            best
        })
        .collect())
}

pub fn mld_detect(y: &[Complex64], estimate: &ChannelEstimate, constellation: &Constellation) -> Result<Vec<Complex64>> {
    let idx = mld_detect_indices(y, &estimate.h_hat, constellation)?;
    Ok(idx.into_iter().map(|i| constellation.points()[i]).collect())
}

/// Zero-forcing equalizer `Y_k / H_k` (zero where `H_k == 0`). Diagnostics only;
/// detection goes through [`mld_detect`].
pub fn zf_equalize(y: &[Complex64], h_hat: &[Complex64]) -> Result<Vec<Complex64>> {
    check_len(y.len(), h_hat.len())?;
    Ok(y.iter()
        .zip(h_hat)
        .map(|(yk, hk)| if hk.norm_sqr() == 0.0 { Complex64::new(0.0, 0.0) } else { yk / hk })
        .collect())
}

/// Side information a receiver may use beyond the received samples.
#[derive(Clone, Copy, Debug, Default)]
pub struct GenieInfo<'a> {
    /// Noise variance handed to the LMMSE estimator.
    pub noise_variance: f64,
    /// True frequency response, required for [`EstimationMethod::Oracle`].
    pub true_response: Option<&'a [Complex64]>,
}

/// Complete LS / MMSE / oracle receive chain for one link configuration.
#[derive(Clone, Debug)]
pub struct ClassicalReceiver {
    config: OfdmConfig,
    constellation: Constellation,
    pilots: Vec<Complex64>,
    positions: Vec<usize>,
    mmse: MmseEstimator,
}

impl ClassicalReceiver {
    pub fn new(config: &OfdmConfig, pdp: &PowerDelayProfile) -> Result<Self> {
        config.validate()?;
        let block = reference_pilot_block(config)?;
        let positions = config.pilot_positions();
        let pilots: Vec<Complex64> = positions.iter().map(|&k| block[k]).collect();
        let mmse = MmseEstimator::new(pdp, &pilots, &positions, config.subcarriers)?;
        Ok(Self {
            config: config.clone(),
            constellation: config.modulation.constellation(),
            pilots,
            positions,
            mmse,
        })
    }

    pub fn config(&self) -> &OfdmConfig {
        &self.config
    }

    pub fn estimate(&self, y_pilot_block: &[Complex64], method: EstimationMethod, genie: &GenieInfo) -> Result<ChannelEstimate> {
        match method {
            EstimationMethod::Ls => ls_estimate(y_pilot_block, &self.pilots, &self.positions, self.config.subcarriers),
            EstimationMethod::Mmse => self.mmse.estimate(y_pilot_block, genie.noise_variance),
            EstimationMethod::Oracle => {
                let h = genie
                    .true_response
                    .ok_or_else(|| invalid("oracle estimation needs the true frequency response"))?;
                check_len(self.config.subcarriers, h.len())?;
                Ok(ChannelEstimate::oracle(h.to_vec()))
            }
        }
    }

    /// Demodulate both blocks, estimate from the pilot block, detect and demap the data block.
    pub fn receive(&self, frame_rx_time: &[Complex64], method: EstimationMethod, genie: &GenieInfo) -> Result<Vec<u8>> {
        let blocks = demodulate_frame(frame_rx_time, &self.config)?;
        self.receive_blocks(&blocks, method, genie)
    }

    /// Same as [`ClassicalReceiver::receive`] on already demodulated blocks.
    pub fn receive_blocks(&self, blocks: &ReceivedBlocks, method: EstimationMethod, genie: &GenieInfo) -> Result<Vec<u8>> {
        let est = self.estimate(&blocks.pilot, method, genie)?;
        let idx = mld_detect_indices(&blocks.data, &est.h_hat, &self.constellation)?;
        Ok(idx.into_iter().flat_map(|i| self.constellation.label_bits(i)).collect())
    }
}

pub fn classical_receive(
    frame_rx_time: &[Complex64],
    config: &OfdmConfig,
    pdp: &PowerDelayProfile,
    method: EstimationMethod,
    genie: &GenieInfo,
) -> Result<Vec<u8>> {
    ClassicalReceiver::new(config, pdp)?.receive(frame_rx_time, method, genie)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{draw_channel, frequency_response, ChannelRealization};
    use crate::numerics::{complex_gaussian_vec, RngStream};
    use crate::ofdm::{Modulation, pilot_sequence};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn max_err(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn ls_noiseless_full_pilots_is_exact() {
        let mut rng = RngStream::new(1, 0);
        let h = frequency_response(&draw_channel(&PowerDelayProfile::default(), &mut rng), 64).unwrap();
        let pilots = pilot_sequence(64);
        let y: Vec<Complex64> = h.iter().zip(&pilots).map(|(a, b)| a * b).collect();
        let pos: Vec<usize> = (0..64).collect();
        let est = ls_estimate(&y, &pilots, &pos, 64).unwrap();
        assert!(max_err(&est.h_hat, &h) < 1e-10);
    }

    #[test]
    fn ls_flat_channel_comb() {
        let pilots = pilot_sequence(8);
        let pos: Vec<usize> = (0..64).step_by(8).collect();
        let mut y = vec![c(0.3, -0.2); 64];
        for (j, &k) in pos.iter().enumerate() {
            y[k] = pilots[j];
        }
        let est = ls_estimate(&y, &pilots, &pos, 64).unwrap();
        assert!(est.h_hat.iter().all(|v| (v - c(1.0, 0.0)).norm() < 1e-10));
    }

    #[test]
    fn ls_rejects_zero_pilot() {
        let y = vec![c(1.0, 0.0); 4];
        assert!(ls_estimate(&y, &[c(1.0, 0.0), c(0.0, 0.0)], &[0, 2], 4).is_err());
    }

    #[test]
    fn ls_error_variance_matches_noise() {
        let mut rng = RngStream::new(2, 2);
        let pilots = vec![c(1.0, 0.0); 64];
        let pos: Vec<usize> = (0..64).collect();
        let v = 0.05;
        let trials = 100_000 / 64 + 1;
        let mut acc = 0.0;
        let mut count = 0usize;
        for _ in 0..trials {
            let h = complex_gaussian_vec(&mut rng, 64, 1.0).unwrap();
            let e = complex_gaussian_vec(&mut rng, 64, v).unwrap();
            let y: Vec<Complex64> = h.iter().zip(&e).map(|(a, b)| a + b).collect();
            let est = ls_estimate(&y, &pilots, &pos, 64).unwrap();
            acc += est.h_hat.iter().zip(&h).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
            count += 64;
        }
        let mse = acc / count as f64;
        assert!((mse / v - 1.0).abs() < 0.05, "mse {mse}");
    }

    #[test]
    fn mmse_noiseless_limit_equals_ls() {
        let pdp = PowerDelayProfile::default();
        let mut rng = RngStream::new(3, 3);
        let pilots = pilot_sequence(64);
        let pos: Vec<usize> = (0..64).collect();
        for _ in 0..20 {
            let h = frequency_response(&draw_channel(&pdp, &mut rng), 64).unwrap();
            let y: Vec<Complex64> = h.iter().zip(&pilots).map(|(a, b)| a * b).collect();
            let ls = ls_estimate(&y, &pilots, &pos, 64).unwrap();
            let mmse = mmse_estimate(&y, &pilots, &pos, &pdp, 0.0, 64).unwrap();
            assert!(max_err(&ls.h_hat, &mmse.h_hat) < 1e-8);
            assert!(mmse.condition_number.unwrap() < MAX_CONDITION);
        }
    }

    #[test]
    fn mmse_shrinks_with_large_noise() {
        let pdp = PowerDelayProfile::default();
        let pilots = pilot_sequence(8);
        let pos: Vec<usize> = (0..64).step_by(8).collect();
        let y = vec![c(1.0, 1.0); 64];
        let mut last = f64::INFINITY;
        for nv in [1.0, 1e3, 1e6, 1e9] {
            let est = mmse_estimate(&y, &pilots, &pos, &pdp, nv, 64).unwrap();
            let norm = est.h_hat.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            assert!(norm < last);
            last = norm;
        }
        assert!(last < 1e-6);
    }

    #[test]
    fn mmse_rejects_bad_inputs() {
        let pdp = PowerDelayProfile::default();
        let pilots = pilot_sequence(8);
        let pos: Vec<usize> = (0..64).step_by(8).collect();
        let y = vec![c(1.0, 0.0); 64];
        assert!(mmse_estimate(&y, &pilots, &pos, &pdp, -1.0, 64).is_err());
        let mut zero = pilots.clone();
        zero[2] = c(0.0, 0.0);
        assert!(mmse_estimate(&y, &zero, &pos, &pdp, 0.1, 64).is_err());
        assert!(matches!(
            mmse_estimate(&y, &pilots, &pos, &pdp, f64::NAN, 64),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn mmse_singular_system_reported() {
        let pdp = PowerDelayProfile::default();
        let pilots = pilot_sequence(64);
        let pos: Vec<usize> = (0..64).collect();
        let mut est = MmseEstimator::new(&pdp, &pilots, &pos, 64).unwrap();
        est.ridge = 0.0;
        let y = vec![c(1.0, 0.0); 64];
        match est.estimate(&y, 0.0) {
            Err(Error::Singular { condition }) => assert!(condition > MAX_CONDITION),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn mmse_beats_ls_at_10db() {
        let pdp = PowerDelayProfile::default();
        let mut rng = RngStream::new(10, 10);
        let pilots = pilot_sequence(64);
        let pos: Vec<usize> = (0..64).collect();
        let est = MmseEstimator::new(&pdp, &pilots, &pos, 64).unwrap();
        let nv = 0.1;
        let (mut ls_se, mut mmse_se) = (0.0, 0.0);
        for _ in 0..10_000 {
            let h = frequency_response(&draw_channel(&pdp, &mut rng), 64).unwrap();
            let e = complex_gaussian_vec(&mut rng, 64, nv).unwrap();
            let y: Vec<Complex64> = (0..64).map(|k| h[k] * pilots[k] + e[k]).collect();
            let ls = ls_estimate(&y, &pilots, &pos, 64).unwrap();
            let mm = est.estimate(&y, nv).unwrap();
            ls_se += ls.h_hat.iter().zip(&h).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
            mmse_se += mm.h_hat.iter().zip(&h).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
        }
        assert!(mmse_se < ls_se, "mmse {mmse_se} vs ls {ls_se}");
    }

    #[test]
    fn mld_exact_points_and_ties() {
        for m in [Modulation::Qpsk, Modulation::Qam16] {
            let cst = m.constellation();
            let y = cst.points().to_vec();
            let est = ChannelEstimate::oracle(vec![c(1.0, 0.0); y.len()]);
            assert_eq!(mld_detect(&y, &est, &cst).unwrap(), y);
        }
        let cst = Modulation::Qam16.constellation();
        let est = ChannelEstimate::oracle(vec![c(1.0, 0.0), c(0.0, 0.0)]);
        let out = mld_detect_indices(&[c(0.9, 0.9), c(5.0, -2.0)], &est.h_hat, &cst).unwrap();
        assert_eq!(out[1], 0);
    }

    #[test]
    fn mld_matches_joint_search_on_pairs() {
        let mut rng = RngStream::new(6, 6);
        for m in [Modulation::Qpsk, Modulation::Qam16] {
            let cst = m.constellation();
            let pts = cst.points();
            for _ in 0..200 {
                let y = complex_gaussian_vec(&mut rng, 2, 1.0).unwrap();
                let h = complex_gaussian_vec(&mut rng, 2, 1.0).unwrap();
                let sep = mld_detect_indices(&y, &h, &cst).unwrap();
                let mut best = (0, 0);
                let mut best_d = f64::INFINITY;
                for a in 0..pts.len() {
                    for b in 0..pts.len() {
                        let d = (y[0] - h[0] * pts[a]).norm_sqr() + (y[1] - h[1] * pts[b]).norm_sqr();
                        if d < best_d {
                            best_d = d;
                            best = (a, b);
                        }
                    }
                }
                assert_eq!((sep[0], sep[1]), best);
            }
        }
    }

    #[test]
    fn zf_handles_zero_gain() {
        let out = zf_equalize(&[c(2.0, 0.0), c(1.0, 1.0)], &[c(2.0, 0.0), c(0.0, 0.0)]).unwrap();
        assert_eq!(out, vec![c(1.0, 0.0), c(0.0, 0.0)]);
    }

    #[test]
    fn identity_channel_round_trip() {
        let cfg = OfdmConfig::default();
        let mut rng = RngStream::new(12, 0);
        let bits = rng.bits(cfg.bits_per_frame());
        let frame = crate::ofdm::build_frame(&bits, &pilot_sequence(64), &cfg).unwrap();
        let rx = frame.serialize(&cfg).unwrap();
        let rcv = ClassicalReceiver::new(&cfg, &PowerDelayProfile::default()).unwrap();
        let genie = GenieInfo { noise_variance: 0.0, true_response: None };
        assert_eq!(rcv.receive(&rx, EstimationMethod::Ls, &genie).unwrap(), bits);
        assert_eq!(rcv.receive(&rx, EstimationMethod::Mmse, &genie).unwrap(), bits);
        assert!(rcv.receive(&rx, EstimationMethod::Oracle, &genie).is_err());
        let h = frequency_response(&ChannelRealization::identity(), 64).unwrap();
        let genie = GenieInfo { noise_variance: 0.0, true_response: Some(&h) };
        assert_eq!(rcv.receive(&rx, EstimationMethod::Oracle, &genie).unwrap(), bits);
    }
}
