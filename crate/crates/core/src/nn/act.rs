use crate::error::Result;

use super::{Scalar, Tensor};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044715;

/// Tanh approximation of GELU.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let x64 = x.as_f64();
    let inner = SQRT_2_OVER_PI * (x64 + GELU_CUBIC * x64 * x64 * x64);
    T::from_f64_lossy(0.5 * x64 * (1.0 + inner.tanh()))
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let x = x.as_f64();
    let inner = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = inner.tanh();
    let d_inner = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    T::from_f64_lossy(0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner)
}

pub fn gelu_fwd<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu)
}

pub fn gelu_bwd<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    x.zip_map(grad_out, |v, g| gelu_grad(v) * g)
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn sigmoid_fwd<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid)
}

/// Backward through a sigmoid given its forward *output*.
pub fn sigmoid_bwd<T: Scalar>(y: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    y.zip_map(grad_out, |s, g| s * (T::one() - s) * g)
}
