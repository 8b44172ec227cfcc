//! Power-of-two FFT/IFFT wrappers with the crate's fixed normalization:
//! unnormalized forward, `1/N` inverse.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{is_power_of_two, IQBuffer};
use crate::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

fn check_len(len: usize) -> Result<()> {
    if !is_power_of_two(len) {
        return Err(Error::InvalidParameter(format!(
            "FFT length must be a power of two, got {len}"
        )));
    }
    Ok(())
}

/// Unnormalized forward DFT of a power-of-two-length vector.
pub fn fft_vec(x: &[Complex64]) -> Result<Vec<Complex64>> {
    check_len(x.len())?;
    let mut buf = x.to_vec();
    plan(buf.len(), false).process(&mut buf);
    Ok(buf)
}

/// Inverse DFT scaled by `1/N`, so `ifft_vec(fft_vec(x)) == x`.
pub fn ifft_vec(x: &[Complex64]) -> Result<Vec<Complex64>> {
    check_len(x.len())?;
    let mut buf = x.to_vec();
    plan(buf.len(), true).process(&mut buf);
    let scale = 1.0 / buf.len() as f64;
    for v in &mut buf {
        *v *= scale;
    }
    Ok(buf)
}

/// Forward DFT of a buffer; the sample rate is carried through unchanged.
pub fn fft(x: &IQBuffer) -> Result<IQBuffer> {
    IQBuffer::new(fft_vec(x.samples())?, x.sample_rate_hz())
}

/// Inverse DFT (with `1/N`) of a buffer.
pub fn ifft(x: &IQBuffer) -> Result<IQBuffer> {
    IQBuffer::new(ifft_vec(x.samples())?, x.sample_rate_hz())
}

/// Rotate a spectrum so DC moves from index 0 to index `N/2`.
pub fn fftshift(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    let half = n.div_ceil(2);
    let mut out = Vec::with_capacity(n);
    out.extend_from_slice(&x[half..]);
    out.extend_from_slice(&x[..half]);
    out
}

/// Inverse of [`fftshift`]: DC moves from index `N/2` back to index 0.
pub fn ifftshift(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    let half = n / 2;
    let mut out = Vec::with_capacity(n);
    out.extend_from_slice(&x[half..]);
    out.extend_from_slice(&x[..half]);
    out
}
