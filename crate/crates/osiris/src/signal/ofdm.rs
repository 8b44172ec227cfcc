//! OFDM symbol modulation and demodulation with cyclic prefix.

use num_complex::Complex64;

use super::{fft_vec, fftshift, ifft_vec, ifftshift, is_power_of_two, IQBuffer};
use crate::{Error, Result};

/// Geometry of one OFDM symbol. The emitted sample rate is
/// `fft_size * scs_hz`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfdmConfig {
    pub fft_size: usize,
    pub cp_len: usize,
    pub scs_hz: f64,
}

impl OfdmConfig {
    pub fn new(fft_size: usize, cp_len: usize, scs_hz: f64) -> Result<Self> {
        if !is_power_of_two(fft_size) {
            return Err(Error::InvalidParameter(format!(
                "FFT size must be a power of two, got {fft_size}"
            )));
        }
        if !(scs_hz > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "subcarrier spacing must be positive, got {scs_hz}"
            )));
        }
        Ok(Self { fft_size, cp_len, scs_hz })
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.fft_size as f64 * self.scs_hz
    }

    pub fn symbol_len(&self) -> usize {
        self.fft_size + self.cp_len
    }
}

/// Modulate one FFT-shifted grid (DC at `fft_size/2`) into a time-domain
/// symbol with cyclic prefix.
///
/// Uses the crate's `1/N` inverse convention, so the symbol's total power is
/// the grid power divided by `fft_size` (Parseval), and a DC-only grid of
/// amplitude 1 yields the constant `1/fft_size`.
pub fn ofdm_modulate(grid: &[Complex64], cfg: &OfdmConfig) -> Result<IQBuffer> {
    if grid.len() != cfg.fft_size {
        return Err(Error::InvalidParameter(format!(
            "grid length {} does not match FFT size {}",
            grid.len(),
            cfg.fft_size
        )));
    }
    let body = ifft_vec(&ifftshift(grid))?;
    let mut samples = Vec::with_capacity(cfg.symbol_len());
    samples.extend_from_slice(&body[cfg.fft_size - cfg.cp_len..]);
    samples.extend_from_slice(&body);
    IQBuffer::new(samples, cfg.sample_rate_hz())
}

/// Drop the cyclic prefix, transform the body, and return the FFT-shifted grid.
pub fn ofdm_demodulate(x: &IQBuffer, cfg: &OfdmConfig) -> Result<Vec<Complex64>> {
    if x.len() < cfg.symbol_len() {
        return Err(Error::InvalidParameter(format!(
            "buffer of {} samples shorter than symbol length {}",
            x.len(),
            cfg.symbol_len()
        )));
    }
    let body = &x.samples()[cfg.cp_len..cfg.cp_len + cfg.fft_size];
    Ok(fftshift(&fft_vec(body)?))
}
