//! Convolution and transposed convolution.
//!
//! Both directions share one index relation between a "large" plane and a
//! "small" plane: `large[q * stride - pad + tap] <-> small[q]`. For a forward
//! convolution the input is large and the output small; a transposed
//! convolution swaps the roles, which is what makes the pair adjoint.
//! Kernels lower to im2col/col2im plus a GEMM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Scalar, Tensor};

/// How out-of-range taps of the large plane are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PaddingMode {
    #[default]
    Zeros,
    /// Clamp to the nearest edge pixel. A constant plane stays constant.
    Replicate,
}

/// Weight record shared by forward and transposed convolutions.
///
/// Forward weights are `[Cout, Cin, k, k]`; transposed weights are
/// `[Cin, Cout, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
    pub stride: usize,
    pub padding: usize,
    pub padding_mode: PaddingMode,
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub grad_x: Tensor<T>,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Vec<T>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(weight: Tensor<T>, bias: Vec<T>, stride: usize, padding: usize) -> Result<Self> {
        let p = Self {
            weight,
            bias,
            stride,
            padding,
            padding_mode: PaddingMode::Zeros,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_mode(mut self, mode: PaddingMode) -> Self {
        self.padding_mode = mode;
        self
    }

    pub fn kernel(&self) -> usize {
        self.weight.height()
    }

    fn validate(&self) -> Result<()> {
        let [_, _, kh, kw] = self.weight.shape();
        if kh != kw {
            return Err(Error::InvalidShape(format!("non-square kernel {kh}x{kw}")));
        }
        if self.stride == 0 {
            return Err(Error::InvalidShape("stride must be at least 1".into()));
        }
        if kh == 1 && self.padding != 0 {
            return Err(Error::InvalidShape("1x1 kernels take no padding".into()));
        }
        Ok(())
    }

    fn check_bias(&self, len: usize) -> Result<()> {
        if self.bias.len() != len {
            return Err(Error::Shape(format!(
                "bias has {} entries, expected {len}",
                self.bias.len()
            )));
        }
        Ok(())
    }
}

/// Output extent of a forward convolution.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let span = (input + 2 * padding)
        .checked_sub(kernel)
        .ok_or_else(|| Error::Shape(format!("kernel {kernel} larger than padded input {input}+2*{padding}")))?;
    if stride == 0 || span % stride != 0 {
        return Err(Error::Shape(format!(
            "non-integral output extent: ({input} + 2*{padding} - {kernel}) / {stride}"
        )));
    }
    Ok(span / stride + 1)
}

/// Output extent of a transposed convolution: `(H - 1) * stride - 2 * pad + k`.
pub fn convt_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let out = (input as isize - 1) * stride as isize - 2 * padding as isize + kernel as isize;
    if out < 1 {
        return Err(Error::Shape(format!(
            "transposed convolution output extent {out} < 1"
        )));
    }
    Ok(out as usize)
}

#[derive(Debug, Clone, Copy)]
struct Geom {
    k: usize,
    stride: usize,
    pad: usize,
    mode: PaddingMode,
    large: (usize, usize),
    small: (usize, usize),
}

impl Geom {
    /// Maps a small-plane coordinate plus tap onto the large plane, or `None`
    /// when it lands in zero padding.
    #[inline]
    fn source(&self, q: usize, tap: usize, extent: usize) -> Option<usize> {
        let pos = (q * self.stride + tap) as isize - self.pad as isize;
        if pos >= 0 && (pos as usize) < extent {
            return Some(pos as usize);
        }
        match self.mode {
            PaddingMode::Zeros => None,
            PaddingMode::Replicate => Some(pos.clamp(0, extent as isize - 1) as usize),
        }
    }

    fn cols_per_channel(&self) -> usize {
        self.k * self.k
    }

    fn small_len(&self) -> usize {
        self.small.0 * self.small.1
    }
}

/// Gathers `cols[(c, ky, kx), (sy, sx)] = large[c, sy*s - p + ky, sx*s - p + kx]`.
fn im2col<T: Scalar>(large: &[T], channels: usize, g: &Geom, cols: &mut [T]) {
    let (lh, lw) = g.large;
    let (sh, sw) = g.small;
    let plen = sh * sw;
    for c in 0..channels {
        let plane = &large[c * lh * lw..(c + 1) * lh * lw];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * plen..(row + 1) * plen];
                for sy in 0..sh {
                    let line = &mut dst[sy * sw..(sy + 1) * sw];
                    match g.source(sy, ky, lh) {
                        None => line.fill(T::zero()),
                        Some(ly) => {
                            let src = &plane[ly * lw..(ly + 1) * lw];
                            for (sx, out) in line.iter_mut().enumerate() {
                                *out = match g.source(sx, kx, lw) {
                                    Some(lx) => src[lx],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back onto the large plane.
fn col2im<T: Scalar>(cols: &[T], channels: usize, g: &Geom, large: &mut [T]) {
    let (lh, lw) = g.large;
    let (sh, sw) = g.small;
    let plen = sh * sw;
    for c in 0..channels {
        let plane = &mut large[c * lh * lw..(c + 1) * lh * lw];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * plen..(row + 1) * plen];
                for sy in 0..sh {
                    let Some(ly) = g.source(sy, ky, lh) else {
                        continue;
                    };
                    let dst = &mut plane[ly * lw..(ly + 1) * lw];
                    for (sx, &v) in src[sy * sw..(sy + 1) * sw].iter().enumerate() {
                        if let Some(lx) = g.source(sx, kx, lw) {
                            dst[lx] += v;
                        }
                    }
                }
            }
        }
    }
}

fn add_bias<T: Scalar>(sample: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in sample.chunks_exact_mut(plane).zip(bias) {
        for v in chunk {
            *v += b;
        }
    }
}

fn accumulate_bias_grad<T: Scalar>(grad: &[T], plane: usize, out: &mut [T]) {
    for (chunk, acc) in grad.chunks_exact(plane).zip(out.iter_mut()) {
        *acc += chunk.iter().copied().sum::<T>();
    }
}

struct ConvPlan {
    n: usize,
    cin: usize,
    cout: usize,
    geom: Geom,
    /// 1x1, stride 1, no padding: columns are the input itself.
    direct: bool,
}

fn plan_conv<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<ConvPlan> {
    p.validate()?;
    let [n, cin, h, w] = x.shape();
    let [cout, wcin, k, _] = p.weight.shape();
    if cin != wcin {
        return Err(Error::Shape(format!(
            "conv expects {wcin} input channels, got {cin}"
        )));
    }
    p.check_bias(cout)?;
    let ho = conv_output_size(h, k, p.stride, p.padding)?;
    let wo = conv_output_size(w, k, p.stride, p.padding)?;
    Ok(ConvPlan {
        n,
        cin,
        cout,
        geom: Geom {
            k,
            stride: p.stride,
            pad: p.padding,
            mode: p.padding_mode,
            large: (h, w),
            small: (ho, wo),
        },
        direct: k == 1 && p.stride == 1 && p.padding == 0,
    })
}

pub fn conv2d_fwd<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let plan = plan_conv(x, p)?;
    let g = plan.geom;
    let (kk, plen) = (plan.cin * g.cols_per_channel(), g.small_len());
    let mut y = Tensor::zeros([plan.n, plan.cout, g.small.0, g.small.1])?;
    let mut cols = if plan.direct { Vec::new() } else { vec![T::zero(); kk * plen] };
    for b in 0..plan.n {
        let cols_ref: &[T] = if plan.direct {
            x.sample(b)
        } else {
            im2col(x.sample(b), plan.cin, &g, &mut cols);
            &cols
        };
        let out = y.sample_mut(b);
        T::gemm(plan.cout, kk, plen, T::one(), p.weight.data(), false, cols_ref, false, T::zero(), out);
        add_bias(out, &p.bias, plen);
    }
    Ok(y)
}

pub fn conv2d_bwd<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>, grad_out: &Tensor<T>) -> Result<ConvGrads<T>> {
    let plan = plan_conv(x, p)?;
    let g = plan.geom;
    let expected = [plan.n, plan.cout, g.small.0, g.small.1];
    if grad_out.shape() != expected {
        return Err(Error::Shape(format!(
            "conv grad_out {:?}, expected {expected:?}",
            grad_out.shape()
        )));
    }
    let (kk, plen) = (plan.cin * g.cols_per_channel(), g.small_len());
    let mut grad_x = Tensor::zeros(x.shape())?;
    let mut grad_weight = Tensor::zeros(p.weight.shape())?;
    let mut grad_bias = vec![T::zero(); plan.cout];
    let mut cols = if plan.direct { Vec::new() } else { vec![T::zero(); kk * plen] };
    let mut grad_cols = cols.clone();
    for b in 0..plan.n {
        let gy = grad_out.sample(b);
        let cols_ref: &[T] = if plan.direct {
            x.sample(b)
        } else {
            im2col(x.sample(b), plan.cin, &g, &mut cols);
            &cols
        };
        T::gemm(plan.cout, plen, kk, T::one(), gy, false, cols_ref, true, T::one(), grad_weight.data_mut());
        accumulate_bias_grad(gy, plen, &mut grad_bias);
        if plan.direct {
            T::gemm(kk, plan.cout, plen, T::one(), p.weight.data(), true, gy, false, T::zero(), grad_x.sample_mut(b));
        } else {
            T::gemm(kk, plan.cout, plen, T::one(), p.weight.data(), true, gy, false, T::zero(), &mut grad_cols);
            col2im(&grad_cols, plan.cin, &g, grad_x.sample_mut(b));
        }
    }
    Ok(ConvGrads {
        grad_x,
        grad_weight,
        grad_bias,
    })
}

fn plan_convt<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<ConvPlan> {
    p.validate()?;
    let [n, cin, h, w] = x.shape();
    let [wcin, cout, k, _] = p.weight.shape();
    if cin != wcin {
        return Err(Error::Shape(format!(
            "transposed conv expects {wcin} input channels, got {cin}"
        )));
    }
    p.check_bias(cout)?;
    let ho = convt_output_size(h, k, p.stride, p.padding)?;
    let wo = convt_output_size(w, k, p.stride, p.padding)?;
    Ok(ConvPlan {
        n,
        cin,
        cout,
        geom: Geom {
            k,
            stride: p.stride,
            pad: p.padding,
            mode: p.padding_mode,
            large: (ho, wo),
            small: (h, w),
        },
        direct: k == 1 && p.stride == 1 && p.padding == 0,
    })
}

pub fn convt2d_fwd<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let plan = plan_convt(x, p)?;
    let g = plan.geom;
    let (kk, plen) = (plan.cout * g.cols_per_channel(), g.small_len());
    let mut y = Tensor::zeros([plan.n, plan.cout, g.large.0, g.large.1])?;
    let mut cols = vec![T::zero(); kk * plen];
    for b in 0..plan.n {
        let out = y.sample_mut(b);
        if plan.direct {
            T::gemm(kk, plan.cin, plen, T::one(), p.weight.data(), true, x.sample(b), false, T::zero(), out);
        } else {
            T::gemm(kk, plan.cin, plen, T::one(), p.weight.data(), true, x.sample(b), false, T::zero(), &mut cols);
            col2im(&cols, plan.cout, &g, out);
        }
        add_bias(out, &p.bias, g.large.0 * g.large.1);
    }
    Ok(y)
}

pub fn convt2d_bwd<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>, grad_out: &Tensor<T>) -> Result<ConvGrads<T>> {
    let plan = plan_convt(x, p)?;
    let g = plan.geom;
    let expected = [plan.n, plan.cout, g.large.0, g.large.1];
    if grad_out.shape() != expected {
        return Err(Error::Shape(format!(
            "transposed conv grad_out {:?}, expected {expected:?}",
            grad_out.shape()
        )));
    }
    let (kk, plen) = (plan.cout * g.cols_per_channel(), g.small_len());
    let mut grad_x = Tensor::zeros(x.shape())?;
    let mut grad_weight = Tensor::zeros(p.weight.shape())?;
    let mut grad_bias = vec![T::zero(); plan.cout];
    let mut grad_cols = if plan.direct { Vec::new() } else { vec![T::zero(); kk * plen] };
    for b in 0..plan.n {
        let gy = grad_out.sample(b);
        accumulate_bias_grad(gy, g.large.0 * g.large.1, &mut grad_bias);
        let cols_ref: &[T] = if plan.direct {
            gy
        } else {
            im2col(gy, plan.cout, &g, &mut grad_cols);
            &grad_cols
        };
        T::gemm(plan.cin, kk, plen, T::one(), p.weight.data(), false, cols_ref, false, T::zero(), grad_x.sample_mut(b));
        T::gemm(plan.cin, plen, kk, T::one(), x.sample(b), false, cols_ref, true, T::one(), grad_weight.data_mut());
    }
    Ok(ConvGrads {
        grad_x,
        grad_weight,
        grad_bias,
    })
}
