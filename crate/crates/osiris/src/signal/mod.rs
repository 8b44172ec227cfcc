//! Complex-baseband DSP primitives: buffers, FFT/IFFT, Zadoff-Chu
//! sequences, and OFDM symbol (de)modulation.
//!
//! Conventions, fixed once for the whole crate:
//! - forward DFT is unnormalized, the inverse applies `1/N`;
//! - frequency grids are stored FFT-shifted with DC at index `N/2`;
//! - the composite band runs at 122.88 Msps (4096 bins x 30 kHz).

mod fft;
mod ofdm;
mod zc;

pub use fft::{fft, fft_vec, fftshift, ifft, ifft_vec, ifftshift};
pub use ofdm::{ofdm_demodulate, ofdm_modulate, OfdmConfig};
pub use zc::zadoff_chu;

use num_complex::Complex64;

use crate::{Error, Result};

/// Composite-band sample rate shared by every synthesized buffer.
pub const COMPOSITE_RATE_HZ: f64 = 122.88e6;

/// A finite sequence of complex baseband samples at a stated sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct IQBuffer {
    samples: Vec<Complex64>,
    sample_rate_hz: f64,
}

impl IQBuffer {
    /// Validates non-emptiness, a positive rate, and sample finiteness.
    pub fn new(samples: Vec<Complex64>, sample_rate_hz: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidParameter("empty sample buffer".into()));
        }
        if !(sample_rate_hz > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if let Some(idx) = samples.iter().position(|s| !s.re.is_finite() || !s.im.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite sample at index {idx}"
            )));
        }
        Ok(Self { samples, sample_rate_hz })
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean per-sample power.
    pub fn mean_power(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }
}

pub(crate) fn is_power_of_two(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buffer_rejects_empty_and_nonfinite() {
        assert!(IQBuffer::new(vec![], 1.0).is_err());
        assert!(IQBuffer::new(vec![Complex64::new(f64::NAN, 0.0)], 1.0).is_err());
        assert!(IQBuffer::new(vec![Complex64::new(1.0, 0.0)], 0.0).is_err());
        assert!(IQBuffer::new(vec![Complex64::new(1.0, 0.0)], 1.0).is_ok());
    }

    #[test]
    fn mean_power_of_unit_samples_is_one() {
        let buf = IQBuffer::new(vec![Complex64::new(0.0, 1.0); 16], 1.0).unwrap();
        assert!((buf.mean_power() - 1.0).abs() < 1e-15);
    }
}
