//! Floating-point abstraction used by the tensor engine.
//!
//! The whole model is generic over [`Scalar`] so the same code path runs in
//! `f32` for training and in `f64` for finite-difference gradient checks.
//! Transcendentals are routed through `libm` in `f64` precision for both
//! element types; this keeps results identical across platforms (no libc or
//! hardware-intrinsic variance) at negligible cost relative to the matmuls.

use core::fmt::{Debug, Display};
use core::iter::Sum;
use core::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

/// Element type of tensors: `f32` or `f64`.
pub trait Scalar:
    Copy
    + PartialOrd
    + PartialEq
    + Debug
    + Display
    + Default
    + Sum
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    fn from_usize(n: usize) -> Self {
        Self::from_f64(n as f64)
    }

    fn exp(self) -> Self {
        Self::from_f64(libm::exp(self.to_f64()))
    }
    fn ln(self) -> Self {
        Self::from_f64(libm::log(self.to_f64()))
    }
    /// `ln(1 + x)`, accurate near zero.
    fn ln_1p(self) -> Self {
        Self::from_f64(libm::log1p(self.to_f64()))
    }
    fn sqrt(self) -> Self {
        Self::from_f64(libm::sqrt(self.to_f64()))
    }
    fn erf(self) -> Self {
        Self::from_f64(libm::erf(self.to_f64()))
    }
    fn abs(self) -> Self {
        if self < Self::ZERO {
            -self
        } else {
            self
        }
    }
    fn max(self, other: Self) -> Self {
        if self < other {
            other
        } else {
            self
        }
    }
    fn min(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }
    fn is_finite(self) -> bool {
        self.to_f64().is_finite()
    }

    /// Numerically stable logistic sigmoid.
    fn sigmoid(self) -> Self {
        let x = self.to_f64();
        let y = if x >= 0.0 {
            1.0 / (1.0 + libm::exp(-x))
        } else {
            let e = libm::exp(x);
            e / (1.0 + e)
        };
        Self::from_f64(y)
    }

    /// Exact Gaussian-error-function GELU: `x * Phi(x)`.
    fn gelu(self) -> Self {
        let x = self.to_f64();
        let phi = 0.5 * (1.0 + libm::erf(x / core::f64::consts::SQRT_2));
        Self::from_f64(x * phi)
    }

    /// Derivative of [`Scalar::gelu`]: `Phi(x) + x * phi(x)`.
    fn gelu_grad(self) -> Self {
        let x = self.to_f64();
        let phi_cdf = 0.5 * (1.0 + libm::erf(x / core::f64::consts::SQRT_2));
        let pdf = libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * core::f64::consts::PI);
        Self::from_f64(phi_cdf + x * pdf)
    }
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_matches_reference_points() {
        // Reference values for the exact (erf-based) GELU.
        let cases: &[(f64, f64)] = &[
            (0.0, 0.0),
            (1.0, 0.841344746068543),
            (-1.0, -0.15865525393145707),
            (2.0, 1.9544997361036416),
        ];
        for &(x, want) in cases {
            let got = x.gelu();
            assert!((got - want).abs() < 1e-12, "gelu({x}) = {got}, want {want}");
        }
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert!(1e3f64.sigmoid() > 0.999999);
        assert!((-1e3f64).sigmoid() < 1e-6);
        assert!(((-1e3f64).sigmoid()).is_finite());
        assert!((0.0f64.sigmoid() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn f32_transcendentals_round_through_f64() {
        let x: f32 = 0.7;
        assert_eq!(Scalar::exp(x), libm::exp(0.7f32 as f64) as f32);
        assert_eq!(Scalar::erf(x), libm::erf(0.7f32 as f64) as f32);
    }

    #[test]
    fn gelu_grad_matches_finite_difference() {
        let h = 1e-6;
        for &x in &[-2.0f64, -0.5, 0.0, 0.3, 1.7] {
            let fd = ((x + h).gelu() - (x - h).gelu()) / (2.0 * h);
            let an = x.gelu_grad();
            assert!((fd - an).abs() < 1e-8, "x={x}: fd={fd} analytic={an}");
        }
    }
}
