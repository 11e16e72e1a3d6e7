//! Dense row-major tensors and the reverse-mode autodiff tape.

mod kernels;
mod tape;

pub use kernels::{resize_bilinear, resize_nearest};
pub use tape::{Tape, Var};

use crate::error::{fmt_shape, Result};
use crate::scalar::Scalar;
use crate::shape_err;
use alloc::vec;
use alloc::vec::Vec;

/// A dense row-major tensor. Rank 0 (empty shape) holds a single scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E> {
    shape: Vec<usize>,
    data: Vec<E>,
    /// Whether gradients should flow to this tensor when it is registered
    /// on a [`Tape`] as a leaf.
    pub requires_grad: bool,
}

impl<E: Scalar> Tensor<E> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![E::ZERO; numel_of(shape)],
            requires_grad: false,
        }
    }

    pub fn full(shape: &[usize], value: E) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel_of(shape)],
            requires_grad: false,
        }
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(value: E) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
            requires_grad: false,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Result<Self> {
        if numel_of(shape) != data.len() {
            return Err(shape_err!(
                "from_vec: shape {} implies {} elements, got {}",
                fmt_shape(shape),
                numel_of(shape),
                data.len()
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    /// Marks the tensor as a gradient leaf (builder style).
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    /// Converts the element type, e.g. `f32` weights to `f64` for checking.
    pub fn cast<F: Scalar>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| F::from_f64(v.to_f64())).collect(),
            requires_grad: self.requires_grad,
        }
    }

    /// Largest absolute elementwise difference; `None` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor<E>) -> Option<f64> {
        if self.shape != other.shape {
            return None;
        }
        let mut m = 0.0f64;
        for (a, b) in self.data.iter().zip(&other.data) {
            let d = (a.to_f64() - b.to_f64()).abs();
            if d > m {
                m = d;
            }
        }
        Some(m)
    }
}

/// Number of elements implied by a shape (1 for rank 0).
pub fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Integer square root (floor).
pub fn isqrt(n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let mut r = libm::sqrt(n as f64) as usize;
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    while r * r > n {
        r -= 1;
    }
    r
}

/// Row-major strides of a shape.
pub fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_has_rank_zero_and_one_element() {
        let t = Tensor::scalar(3.5f64);
        assert!(t.shape().is_empty());
        assert_eq!(t.numel(), 1);
        assert_eq!(t.data()[0], 3.5);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        let err = Tensor::from_vec(&[2, 3], vec![1.0f32; 5]).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("[2, 3]"), "message should name the shape: {msg}");
    }

    #[test]
    fn strides_are_row_major() {
        assert_eq!(strides_of(&[2, 3, 4]), vec![12, 4, 1]);
        assert_eq!(strides_of(&[5]), vec![1]);
        assert!(strides_of(&[]).is_empty());
    }

    #[test]
    fn cast_round_trips_values() {
        let t = Tensor::from_vec(&[3], vec![0.5f32, -1.25, 2.0]).unwrap();
        let d = t.cast::<f64>();
        assert_eq!(d.data(), &[0.5f64, -1.25, 2.0]);
    }
}
