//! Flat row-major tensors over a generic scalar.
//!
//! Production paths run on `f32`; the finite-difference gradient tests
//! instantiate the same code at `f64`.

use num_complex::Complex32;
use num_traits::Float;

use crate::{Error, Result};

/// Scalar element type for all network math.
pub trait Scalar: Float + Send + Sync + std::fmt::Debug + 'static {
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense tensor: `dims` with row-major `data`, `product(dims) == data.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Self { dims: dims.to_vec(), data: vec![T::zero(); n] }
    }

    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() || dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!(
                "dims {:?} incompatible with {} elements",
                dims,
                data.len()
            )));
        }
        Ok(Self { dims: dims.to_vec(), data })
    }

    /// `[2, L]` tensor with row 0 = I and row 1 = Q.
    pub fn from_complex_f32(samples: &[Complex32]) -> Self {
        let l = samples.len();
        let mut data = Vec::with_capacity(2 * l);
        data.extend(samples.iter().map(|c| T::from_f64(c.re as f64)));
        data.extend(samples.iter().map(|c| T::from_f64(c.im as f64)));
        Self { dims: vec![2, l], data }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Standardize an `[2, L]` I/Q tensor in place: subtract the complex mean
    /// and scale to unit average power. An all-zero tensor stays zero.
    pub fn standardize_iq(&mut self) {
        assert_eq!(self.dims.len(), 2);
        assert_eq!(self.dims[0], 2);
        let l = self.dims[1];
        let lf = T::from_f64(l as f64);
        let (re, im) = self.data.split_at_mut(l);
        let mu_re = re.iter().fold(T::zero(), |a, &v| a + v) / lf;
        let mu_im = im.iter().fold(T::zero(), |a, &v| a + v) / lf;
        let mut power = T::zero();
        for i in 0..l {
            re[i] = re[i] - mu_re;
            im[i] = im[i] - mu_im;
            power = power + re[i] * re[i] + im[i] * im[i];
        }
        power = power / lf;
        if power > T::zero() {
            let scale = T::one() / power.sqrt();
            for v in re.iter_mut().chain(im.iter_mut()) {
                *v = *v * scale;
            }
        }
    }
}

impl Tensor<f32> {
    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| v as f64).collect(),
        }
    }
}
