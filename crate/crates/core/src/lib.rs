//! OFDM link-level simulator with classical and LSTM-based signal detection.
//!
//! Modules, bottom-up:
//! - [`numerics`]: unitary FFT, seeded complex-Gaussian streams, frequency interpolation
//! - [`ofdm`]: Gray constellations, pilot/data frames, CP-OFDM modulation
//! - [`channel`]: tapped-delay-line Rayleigh channel and AWGN calibration
//! - [`baseline`]: LS / LMMSE estimation with maximum-likelihood detection
//! - [`neural`]: LSTM detector, BPTT gradients, optimizers and training
//! - [`harness`]: datasets, Monte Carlo BER, experiment sweeps and reports

pub mod baseline;
pub mod channel;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod neural;
pub mod ofdm;

pub use error::{Error, Result};
pub use num_complex::Complex64;
