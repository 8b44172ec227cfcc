//! Zadoff-Chu sequence generation.

use num_complex::Complex64;
use std::f64::consts::PI;

use super::IQBuffer;
use crate::{Error, Result};

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    if n % 2 == 0 {
        return n == 2;
    }
    let mut d = 3u64;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 2;
    }
    true
}

/// Generate a root-`root` Zadoff-Chu sequence of prime length `n_zc`,
/// cyclically extended to `out_len` samples.
///
/// Sample `n < n_zc` is `exp(-i*pi*root*n*(n+1)/n_zc)`; samples beyond repeat
/// cyclically. The phase index is reduced modulo `2*n_zc` in exact integer
/// arithmetic, so every sample is unit magnitude to machine precision and the
/// off-peak cyclic autocorrelation vanishes.
pub fn zadoff_chu(root: u64, n_zc: u64, out_len: usize) -> Result<IQBuffer> {
    if root == 0 {
        return Err(Error::InvalidParameter("ZC root must be positive".into()));
    }
    if !is_prime(n_zc) {
        return Err(Error::InvalidParameter(format!(
            "ZC length {n_zc} is not prime"
        )));
    }
    if gcd(root, n_zc) != 1 {
        return Err(Error::InvalidParameter(format!(
            "ZC root {root} and length {n_zc} are not coprime"
        )));
    }
    if (out_len as u64) < n_zc {
        return Err(Error::InvalidParameter(format!(
            "output length {out_len} shorter than base length {n_zc}"
        )));
    }

    let modulus = 2 * n_zc as u128;
    let base: Vec<Complex64> = (0..n_zc)
        .map(|n| {
            let idx = (root as u128 * n as u128 * (n as u128 + 1)) % modulus;
            let phase = -PI * idx as f64 / n_zc as f64;
            Complex64::new(phase.cos(), phase.sin())
        })
        .collect();

    let samples: Vec<Complex64> = (0..out_len).map(|n| base[n % n_zc as usize]).collect();
    // Code-domain sequence; the nominal rate only satisfies the buffer contract.
    IQBuffer::new(samples, 1.0)
}
