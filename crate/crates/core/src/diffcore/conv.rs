//! Valid-padding 2-D cross-correlation via im2col, plus its adjoint.

use super::scalar::gemm_rm;
use super::{Real, Tensor};
use crate::error::{dim_err, Result};

/// Geometry of a batched convolution `N×C×H×W ⊛ Co×C×k×k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    /// `input` is `C×H×W` (treated as a batch of one) or `N×C×H×W`.
    pub fn new(input: &[usize], kernel: &[usize], stride: usize) -> Result<Self> {
        let (n, c_in, h, w) = match *input {
            [c, h, w] => (1, c, h, w),
            [n, c, h, w] => (n, c, h, w),
            _ => return Err(dim_err!("conv2d input must be 3-D or 4-D, got {:?}", input)),
        };
        let [c_out, kc, kh, kw] = *kernel else {
            return Err(dim_err!("conv2d kernel must be 4-D, got {:?}", kernel));
        };
        if kc != c_in || kh != kw {
            return Err(dim_err!(
                "conv2d kernel {:?} incompatible with input {:?}",
                kernel,
                input
            ));
        }
        if stride == 0 {
            return Err(dim_err!("conv2d stride must be positive"));
        }
        if kh > h || kw > w {
            return Err(dim_err!(
                "conv2d kernel {:?} larger than input {:?}",
                kernel,
                input
            ));
        }
        Ok(Self {
            n,
            c_in,
            h,
            w,
            c_out,
            k: kh,
            stride,
            ho: (h - kh) / stride + 1,
            wo: (w - kw) / stride + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    pub fn out_pixels(&self) -> usize {
        self.n * self.ho * self.wo
    }

    pub fn input_len(&self) -> usize {
        self.n * self.c_in * self.h * self.w
    }
}

/// Unfolds receptive fields into a `(C·k·k) × (N·Ho·Wo)` matrix.
pub(crate) fn im2col<T: Real>(g: &ConvGeom, input: &[T]) -> Vec<T> {
    let cols_n = g.out_pixels();
    let mut cols = vec![T::zero(); g.patch_len() * cols_n];
    let plane = g.ho * g.wo;
    for c in 0..g.c_in {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * cols_n..(row + 1) * cols_n];
                for b in 0..g.n {
                    let src = &input[(b * g.c_in + c) * g.h * g.w..];
                    for oy in 0..g.ho {
                        let iy = oy * g.stride + ki;
                        let d = &mut dst[b * plane + oy * g.wo..b * plane + (oy + 1) * g.wo];
                        for (ox, v) in d.iter_mut().enumerate() {
                            *v = src[iy * g.w + ox * g.stride + kj];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters-adds columns back into an input-shaped buffer.
pub(crate) fn col2im<T: Real>(g: &ConvGeom, cols: &[T], out: &mut [T]) {
    let cols_n = g.out_pixels();
    let plane = g.ho * g.wo;
    for c in 0..g.c_in {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * cols_n..(row + 1) * cols_n];
                for b in 0..g.n {
                    let dst = &mut out[(b * g.c_in + c) * g.h * g.w..];
                    for oy in 0..g.ho {
                        let iy = oy * g.stride + ki;
                        let s = &src[b * plane + oy * g.wo..b * plane + (oy + 1) * g.wo];
                        for (ox, &v) in s.iter().enumerate() {
                            dst[iy * g.w + ox * g.stride + kj] += v;
                        }
                    }
                }
            }
        }
    }
}

/// `Co × (N·P)` channel-major buffer to `N × Co × P` layout.
pub(crate) fn channel_major_to_batch<T: Real>(src: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * c * p];
    for ch in 0..c {
        for b in 0..n {
            out[(b * c + ch) * p..(b * c + ch + 1) * p]
                .copy_from_slice(&src[ch * n * p + b * p..ch * n * p + (b + 1) * p]);
        }
    }
    out
}

/// Inverse of [`channel_major_to_batch`].
pub(crate) fn batch_to_channel_major<T: Real>(src: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * c * p];
    for ch in 0..c {
        for b in 0..n {
            out[ch * n * p + b * p..ch * n * p + (b + 1) * p]
                .copy_from_slice(&src[(b * c + ch) * p..(b * c + ch + 1) * p]);
        }
    }
    out
}

pub(crate) fn conv_forward<T: Real>(g: &ConvGeom, input: &[T], kernel: &[T]) -> Vec<T> {
    conv_forward_cols(g, &im2col(g, input), kernel)
}

/// Forward pass from precomputed [`im2col`] columns.
pub(crate) fn conv_forward_cols<T: Real>(g: &ConvGeom, cols: &[T], kernel: &[T]) -> Vec<T> {
    let mut out_cm = vec![T::zero(); g.c_out * g.out_pixels()];
    gemm_rm(
        g.c_out,
        g.patch_len(),
        g.out_pixels(),
        kernel,
        false,
        cols,
        false,
        &mut out_cm,
        false,
    );
    channel_major_to_batch(&out_cm, g.n, g.c_out, g.ho * g.wo)
}

/// Adjoint for an upstream gradient in `N×Co×Ho×Wo` layout, from the forward
/// [`im2col`] columns; the kernel gradient is computed
/// only when `cols` is given, the input gradient only when `want_input`.
pub(crate) fn conv_backward_cols<T: Real>(
    g: &ConvGeom,
    cols: Option<&[T]>,
    kernel: &[T],
    grad_out: &[T],
    want_input: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let g_cm = batch_to_channel_major(grad_out, g.n, g.c_out, g.ho * g.wo);
    let gk = cols.map(|cols| {
        let mut gk = vec![T::zero(); g.c_out * g.patch_len()];
        gemm_rm(g.c_out, g.out_pixels(), g.patch_len(), &g_cm, false, cols, true, &mut gk, false);
        gk
    });
    if !want_input {
        return (None, gk);
    }
    let mut gcols = vec![T::zero(); g.patch_len() * g.out_pixels()];
    gemm_rm(
        g.patch_len(),
        g.c_out,
        g.out_pixels(),
        kernel,
        true,
        &g_cm,
        false,
        &mut gcols,
        false,
    );
    let mut gin = vec![T::zero(); g.input_len()];
    col2im(g, &gcols, &mut gin);
    (Some(gin), gk)
}

/// Valid (no padding) cross-correlation of a `C×H×W` or `N×C×H×W` input with
/// `Co×C×k×k` kernels.
pub fn conv2d<T: Real>(input: &Tensor<T>, kernels: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    let g = ConvGeom::new(input.shape(), kernels.shape(), stride)?;
    let out = conv_forward(&g, input.data(), kernels.data());
    let shape: Vec<usize> = if input.shape().len() == 3 {
        vec![g.c_out, g.ho, g.wo]
    } else {
        vec![g.n, g.c_out, g.ho, g.wo]
    };
    Tensor::new(&shape, out)?.check_finite("conv2d")
}
