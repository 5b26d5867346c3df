//! Complex baseband helpers: unitary FFT, seeded complex-Gaussian sampling
//! and cyclic frequency-axis interpolation.

use std::cell::RefCell;

use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;

use crate::error::{invalid, Error, Result};

/// Largest transform size supported by [`dft`].
pub const MAX_DFT_LEN: usize = 4096;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Unitary DFT (`inverse = false`) or its inverse, both scaled by `1/sqrt(N)`.
pub fn dft(x: &[Complex64], inverse: bool) -> Result<Vec<Complex64>> {
    let mut out = x.to_vec();
    dft_in_place(&mut out, inverse)?;
    Ok(out)
}

/// In-place variant of [`dft`].
pub fn dft_in_place(x: &mut [Complex64], inverse: bool) -> Result<()> {
    let n = x.len();
    if n == 0 || !n.is_power_of_two() || n > MAX_DFT_LEN {
        return Err(Error::NotPowerOfTwo(n));
    }
    let fft = PLANNER.with(|p| {
        let mut planner = p.borrow_mut();
        if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        }
    });
    fft.process(x);
    let scale = 1.0 / (n as f64).sqrt();
    for v in x.iter_mut() {
        *v *= scale;
    }
    Ok(())
}

/// Sum of squared magnitudes.
pub fn energy(x: &[Complex64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum()
}

/// Euclidean norm.
pub fn l2_norm(x: &[Complex64]) -> f64 {
    energy(x).sqrt()
}

/// Mean power `(1/len) * sum |x|^2`; zero for an empty slice.
pub fn mean_power(x: &[Complex64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        energy(x) / x.len() as f64
    }
}

/// A seeded, splittable random stream.
///
/// Equal `(seed, stream_id)` pairs reproduce the same sequence bit for bit;
/// distinct stream ids select independent ChaCha keystreams.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Derive an independent child stream keyed by `tag`. Does not advance `self`.
    pub fn substream(&self, tag: u64) -> RngStream {
        let id = splitmix64(self.stream_id ^ splitmix64(tag.wrapping_add(0x9e37_79b9_7f4a_7c15)));
        RngStream::new(self.seed, id)
    }

    /// Child stream keyed by a pair of indices (e.g. SNR point and frame).
    pub fn substream2(&self, a: u64, b: u64) -> RngStream {
        self.substream(a).substream(b)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform index in `0..n`; `n` must be positive.
    pub fn next_index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn bit(&mut self) -> u8 {
        (self.rng.next_u32() & 1) as u8
    }

    pub fn bits(&mut self, n: usize) -> Vec<u8> {
        (0..n).map(|_| self.bit()).collect()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draw from CN(0, total_variance): real and imaginary parts are independent
/// with variance `total_variance / 2` each.
pub fn sample_complex_gaussian(rng: &mut RngStream, total_variance: f64) -> Result<Complex64> {
    if !(total_variance >= 0.0) || !total_variance.is_finite() {
        return Err(invalid(format!(
            "complex Gaussian variance must be finite and nonnegative, got {total_variance}"
        )));
    }
    let sd = (total_variance / 2.0).sqrt();
    let re = rng.standard_normal();
    let im = rng.standard_normal();
    Ok(Complex64::new(re * sd, im * sd))
}

/// Fill `n` samples of CN(0, total_variance).
pub fn complex_gaussian_vec(
    rng: &mut RngStream,
    n: usize,
    total_variance: f64,
) -> Result<Vec<Complex64>> {
    (0..n)
        .map(|_| sample_complex_gaussian(rng, total_variance))
        .collect()
}

/// Extend samples known at `positions` to all `n` subcarriers.
///
/// Real and imaginary parts are interpolated linearly and independently. The
/// subcarrier axis is cyclic, so indices past the last position blend back
/// toward the first one.
pub fn interpolate_frequency(
    positions: &[usize],
    values: &[Complex64],
    n: usize,
) -> Result<Vec<Complex64>> {
    if positions.is_empty() {
        return Err(invalid("interpolation needs at least one known position"));
    }
    if positions.len() != values.len() {
        return Err(Error::LengthMismatch {
            expected: positions.len(),
            actual: values.len(),
        });
    }
    for w in positions.windows(2) {
        if w[1] <= w[0] {
            return Err(invalid(format!(
                "positions must be strictly increasing (found {} then {})",
                w[0], w[1]
            )));
        }
    }
    if let Some(&last) = positions.last() {
        if last >= n {
            return Err(invalid(format!("position {last} outside [0, {n})")));
        }
    }

    let mut out = vec![Complex64::new(0.0, 0.0); n];
    let p = positions.len();
    for j in 0..p {
        let start = positions[j];
        let (end, end_val) = if j + 1 < p {
            (positions[j + 1], values[j + 1])
        } else {
            (positions[0] + n, values[0])
        };
        let span = (end - start) as f64;
        for k in start..end {
            let t = (k - start) as f64 / span;
            out[k % n] = values[j] * (1.0 - t) + end_val * t;
        }
    }
    Ok(out)
}
