//! Raw compute kernels shared by the tape operations.
//!
//! Images are channels-last (`[h, w, c]`, row-major). Convolution weights are
//! stored as a `[k*k*c_in, c_out]` matrix whose row index is
//! `(ky*k + kx)*c_in + ci`, which lets forward passes run as
//! im2col + matmul. Transposed convolution is the adjoint of a reference
//! convolution taken over its *output* geometry, so the three routines
//! below ([`conv_fwd`], [`conv_dx`], [`conv_dw`]) cover both layer kinds in
//! both directions.

use super::Scalar;
use crate::error::{OlrError, Result};
use crate::tensor::layers::Padding;

/// Geometry of one convolution: shapes, stride and resolved zero-padding.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ConvGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    /// Geometry for a forward convolution over `[in_h, in_w, in_c]`.
    ///
    /// `same` keeps `ceil(n / stride)` spatial outputs with zero padding
    /// split top/left-light; `valid` uses no padding and requires the input
    /// to cover the kernel.
    pub fn conv(
        in_h: usize,
        in_w: usize,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if k == 0 || stride == 0 {
            return Err(OlrError::Shape(format!(
                "conv kernel and stride must be positive (k={k}, stride={stride})"
            )));
        }
        let (out_h, out_w, pad_top, pad_left) = match padding {
            Padding::Same => {
                let out_h = in_h.div_ceil(stride);
                let out_w = in_w.div_ceil(stride);
                let pad_h = ((out_h - 1) * stride + k).saturating_sub(in_h);
                let pad_w = ((out_w - 1) * stride + k).saturating_sub(in_w);
                (out_h, out_w, pad_h / 2, pad_w / 2)
            }
            Padding::Valid => {
                if in_h < k || in_w < k {
                    return Err(OlrError::Shape(format!(
                        "valid convolution kernel {k} exceeds input {in_h}x{in_w}"
                    )));
                }
                ((in_h - k) / stride + 1, (in_w - k) / stride + 1, 0, 0)
            }
        };
        Ok(ConvGeom { in_h, in_w, in_c, out_h, out_w, out_c, k, stride, pad_top, pad_left })
    }

    /// Reference-convolution geometry for a transposed convolution that maps
    /// `[in_h, in_w, in_c]` up to the returned `(out_h, out_w)`. The adjoint
    /// of the reference conv *is* the transposed conv forward pass; `same`
    /// produces `n * stride` outputs (the doubled sizes of a stride-2 stack).
    pub fn conv_transpose(
        in_h: usize,
        in_w: usize,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let (out_h, out_w) = match padding {
            Padding::Same => (in_h * stride, in_w * stride),
            Padding::Valid => ((in_h - 1) * stride + k, (in_w - 1) * stride + k),
        };
        // Reference conv runs out -> in, so its channel roles are swapped.
        let geom = ConvGeom::conv(out_h, out_w, out_c, in_c, k, stride, padding)?;
        debug_assert_eq!((geom.out_h, geom.out_w), (in_h, in_w));
        Ok(geom)
    }

    pub fn patch_len(&self) -> usize {
        self.k * self.k * self.in_c
    }

    pub fn out_positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// `out += a @ b` with `a: [m, kd]`, `b: [kd, n]`, `out: [m, n]`.
pub(crate) fn matmul_acc<S: Scalar>(a: &[S], b: &[S], m: usize, kd: usize, n: usize, out: &mut [S]) {
    debug_assert_eq!(a.len(), m * kd);
    debug_assert_eq!(b.len(), kd * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * kd..(i + 1) * kd];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av == S::zero() {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o = *o + av * bv;
            }
        }
    }
}

/// `out += a^T @ b` with `a: [m, kd]`, `b: [m, n]`, `out: [kd, n]`.
pub(crate) fn matmul_tn_acc<S: Scalar>(
    a: &[S],
    b: &[S],
    m: usize,
    kd: usize,
    n: usize,
    out: &mut [S],
) {
    debug_assert_eq!(a.len(), m * kd);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), kd * n);
    for i in 0..m {
        let arow = &a[i * kd..(i + 1) * kd];
        let brow = &b[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av == S::zero() {
                continue;
            }
            let orow = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o = *o + av * bv;
            }
        }
    }
}

/// `out += a @ b^T` with `a: [m, kd]`, `b: [n, kd]`, `out: [m, n]`.
pub(crate) fn matmul_nt_acc<S: Scalar>(
    a: &[S],
    b: &[S],
    m: usize,
    kd: usize,
    n: usize,
    out: &mut [S],
) {
    debug_assert_eq!(a.len(), m * kd);
    debug_assert_eq!(b.len(), n * kd);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * kd..(i + 1) * kd];
        let orow = &mut out[i * n..(i + 1) * n];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b[j * kd..(j + 1) * kd];
            let mut acc = S::zero();
            for (&av, &bv) in arow.iter().zip(brow.iter()) {
                acc = acc + av * bv;
            }
            *o = *o + acc;
        }
    }
}

/// Extract padded patches: `[out_positions, k*k*in_c]`.
pub(crate) fn im2col<S: Scalar>(x: &[S], g: &ConvGeom) -> Vec<S> {
    debug_assert_eq!(x.len(), g.in_h * g.in_w * g.in_c);
    let mut cols = vec![S::zero(); g.out_positions() * g.patch_len()];
    let row_stride = g.in_w * g.in_c;
    let seg = g.k * g.in_c;
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = (oy * g.out_w + ox) * g.patch_len();
            let iy0 = (oy * g.stride) as isize - g.pad_top as isize;
            let ix0 = (ox * g.stride) as isize - g.pad_left as isize;
            for ky in 0..g.k {
                let iy = iy0 + ky as isize;
                if iy < 0 || iy >= g.in_h as isize {
                    continue;
                }
                let dst0 = row + ky * seg;
                // Clip the horizontal span to the valid input range.
                let kx_lo = (-ix0).max(0) as usize;
                let kx_hi = ((g.in_w as isize - ix0).max(0) as usize).min(g.k);
                if kx_lo >= kx_hi {
                    continue;
                }
                let src0 = iy as usize * row_stride + (ix0 + kx_lo as isize) as usize * g.in_c;
                let len = (kx_hi - kx_lo) * g.in_c;
                cols[dst0 + kx_lo * g.in_c..dst0 + kx_lo * g.in_c + len]
                    .copy_from_slice(&x[src0..src0 + len]);
            }
        }
    }
    cols
}

/// Scatter-add patches back into an input-shaped buffer (adjoint of im2col).
pub(crate) fn col2im_acc<S: Scalar>(cols: &[S], g: &ConvGeom, dx: &mut [S]) {
    debug_assert_eq!(cols.len(), g.out_positions() * g.patch_len());
    debug_assert_eq!(dx.len(), g.in_h * g.in_w * g.in_c);
    let row_stride = g.in_w * g.in_c;
    let seg = g.k * g.in_c;
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = (oy * g.out_w + ox) * g.patch_len();
            let iy0 = (oy * g.stride) as isize - g.pad_top as isize;
            let ix0 = (ox * g.stride) as isize - g.pad_left as isize;
            for ky in 0..g.k {
                let iy = iy0 + ky as isize;
                if iy < 0 || iy >= g.in_h as isize {
                    continue;
                }
                let src0 = row + ky * seg;
                let kx_lo = (-ix0).max(0) as usize;
                let kx_hi = ((g.in_w as isize - ix0).max(0) as usize).min(g.k);
                if kx_lo >= kx_hi {
                    continue;
                }
                let dst0 = iy as usize * row_stride + (ix0 + kx_lo as isize) as usize * g.in_c;
                let len = (kx_hi - kx_lo) * g.in_c;
                for (d, &s) in dx[dst0..dst0 + len]
                    .iter_mut()
                    .zip(cols[src0 + kx_lo * g.in_c..src0 + kx_lo * g.in_c + len].iter())
                {
                    *d = *d + s;
                }
            }
        }
    }
}

/// Forward convolution. Returns `(output, im2col cache)` so the backward
/// pass can reuse the patch matrix.
pub(crate) fn conv_fwd<S: Scalar>(x: &[S], w: &[S], bias: &[S], g: &ConvGeom) -> (Vec<S>, Vec<S>) {
    debug_assert_eq!(w.len(), g.patch_len() * g.out_c);
    debug_assert_eq!(bias.len(), g.out_c);
    let cols = im2col(x, g);
    let mut y = Vec::with_capacity(g.out_positions() * g.out_c);
    for _ in 0..g.out_positions() {
        y.extend_from_slice(bias);
    }
    matmul_acc(&cols, w, g.out_positions(), g.patch_len(), g.out_c, &mut y);
    (y, cols)
}

/// Gradient of a convolution w.r.t. its input: `col2im(dy @ w^T)`.
pub(crate) fn conv_dx<S: Scalar>(dy: &[S], w: &[S], g: &ConvGeom) -> Vec<S> {
    debug_assert_eq!(dy.len(), g.out_positions() * g.out_c);
    let mut dcols = vec![S::zero(); g.out_positions() * g.patch_len()];
    matmul_nt_acc(dy, w, g.out_positions(), g.out_c, g.patch_len(), &mut dcols);
    let mut dx = vec![S::zero(); g.in_h * g.in_w * g.in_c];
    col2im_acc(&dcols, g, &mut dx);
    dx
}

/// Gradient of a convolution w.r.t. weights and bias given the cached
/// patch matrix of the forward input.
pub(crate) fn conv_dw<S: Scalar>(cols: &[S], dy: &[S], g: &ConvGeom) -> (Vec<S>, Vec<S>) {
    let mut dw = vec![S::zero(); g.patch_len() * g.out_c];
    matmul_tn_acc(cols, dy, g.out_positions(), g.patch_len(), g.out_c, &mut dw);
    let mut db = vec![S::zero(); g.out_c];
    for row in dy.chunks_exact(g.out_c) {
        for (d, &v) in db.iter_mut().zip(row.iter()) {
            *d = *d + v;
        }
    }
    (dw, db)
}

/// Pooling geometry (square window, per-channel).
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct PoolGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl PoolGeom {
    pub fn new(
        in_h: usize,
        in_w: usize,
        c: usize,
        k: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let g = ConvGeom::conv(in_h, in_w, c, c, k, stride, padding)?;
        Ok(PoolGeom {
            in_h,
            in_w,
            c,
            out_h: g.out_h,
            out_w: g.out_w,
            k,
            stride,
            pad_top: g.pad_top,
            pad_left: g.pad_left,
        })
    }

    fn window(&self, oy: usize, ox: usize) -> (usize, usize, usize, usize) {
        let iy0 = (oy * self.stride) as isize - self.pad_top as isize;
        let ix0 = (ox * self.stride) as isize - self.pad_left as isize;
        let y_lo = iy0.max(0) as usize;
        let x_lo = ix0.max(0) as usize;
        let y_hi = ((iy0 + self.k as isize).min(self.in_h as isize)) as usize;
        let x_hi = ((ix0 + self.k as isize).min(self.in_w as isize)) as usize;
        (y_lo, y_hi, x_lo, x_hi)
    }
}

/// Average pooling; zero padding counts toward the window average.
pub(crate) fn avg_pool_fwd<S: Scalar>(x: &[S], g: &PoolGeom) -> Vec<S> {
    let inv = S::one() / S::from_f64((g.k * g.k) as f64);
    let mut y = vec![S::zero(); g.out_h * g.out_w * g.c];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let (y_lo, y_hi, x_lo, x_hi) = g.window(oy, ox);
            let out = &mut y[(oy * g.out_w + ox) * g.c..(oy * g.out_w + ox + 1) * g.c];
            for iy in y_lo..y_hi {
                for ix in x_lo..x_hi {
                    let src = &x[(iy * g.in_w + ix) * g.c..(iy * g.in_w + ix + 1) * g.c];
                    for (o, &v) in out.iter_mut().zip(src.iter()) {
                        *o = *o + v;
                    }
                }
            }
            for o in out.iter_mut() {
                *o = *o * inv;
            }
        }
    }
    y
}

pub(crate) fn avg_pool_bwd<S: Scalar>(dy: &[S], g: &PoolGeom) -> Vec<S> {
    let inv = S::one() / S::from_f64((g.k * g.k) as f64);
    let mut dx = vec![S::zero(); g.in_h * g.in_w * g.c];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let (y_lo, y_hi, x_lo, x_hi) = g.window(oy, ox);
            let grad = &dy[(oy * g.out_w + ox) * g.c..(oy * g.out_w + ox + 1) * g.c];
            for iy in y_lo..y_hi {
                for ix in x_lo..x_hi {
                    let dst = &mut dx[(iy * g.in_w + ix) * g.c..(iy * g.in_w + ix + 1) * g.c];
                    for (d, &v) in dst.iter_mut().zip(grad.iter()) {
                        *d = *d + v * inv;
                    }
                }
            }
        }
    }
    dx
}

/// Max pooling. Returns `(output, argmax)` with one flat input index per
/// output element; ties resolve to the first maximum in scan order.
pub(crate) fn max_pool_fwd<S: Scalar>(x: &[S], g: &PoolGeom) -> (Vec<S>, Vec<u32>) {
    let n_out = g.out_h * g.out_w * g.c;
    let mut y = vec![S::zero(); n_out];
    let mut arg = vec![0u32; n_out];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let (y_lo, y_hi, x_lo, x_hi) = g.window(oy, ox);
            debug_assert!(y_lo < y_hi && x_lo < x_hi, "pool window fully outside input");
            for c in 0..g.c {
                let mut best = S::neg_infinity();
                let mut best_idx = 0u32;
                for iy in y_lo..y_hi {
                    for ix in x_lo..x_hi {
                        let idx = (iy * g.in_w + ix) * g.c + c;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx as u32;
                        }
                    }
                }
                let o = (oy * g.out_w + ox) * g.c + c;
                y[o] = best;
                arg[o] = best_idx;
            }
        }
    }
    (y, arg)
}

pub(crate) fn max_pool_bwd<S: Scalar>(dy: &[S], arg: &[u32], in_len: usize) -> Vec<S> {
    let mut dx = vec![S::zero(); in_len];
    for (&g, &a) in dy.iter().zip(arg.iter()) {
        dx[a as usize] = dx[a as usize] + g;
    }
    dx
}
