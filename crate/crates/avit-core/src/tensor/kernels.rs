//! Raw numeric kernels shared by forward and backward passes.
//!
//! All loops run in a fixed order so floating-point results are
//! bit-identical across runs.

use crate::scalar::Scalar;
use alloc::vec;
use alloc::vec::Vec;

/// `out[m,n] += a[m,k] · b[k,n]`
pub fn gemm_nn<E: Scalar>(m: usize, k: usize, n: usize, a: &[E], b: &[E], out: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,n] += a[m,k] · b[n,k]ᵀ`
pub fn gemm_nt<E: Scalar>(m: usize, k: usize, n: usize, a: &[E], b: &[E], out: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = E::ZERO;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            out[i * n + j] += acc;
        }
    }
}

/// `out[m,n] += a[r,m]ᵀ · b[r,n]`
pub fn gemm_tn<E: Scalar>(r: usize, m: usize, n: usize, a: &[E], b: &[E], out: &mut [E]) {
    debug_assert_eq!(a.len(), r * m);
    debug_assert_eq!(b.len(), r * n);
    debug_assert_eq!(out.len(), m * n);
    for p in 0..r {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// Output spatial size of a convolution/pooling axis, or `None` when the
/// window does not fit.
pub fn conv_out_size(n: usize, k: usize, stride: usize, pad: usize, dil: usize) -> Option<usize> {
    let span = dil * (k - 1) + 1;
    let padded = n + 2 * pad;
    if padded < span {
        return None;
    }
    Some((padded - span) / stride + 1)
}

/// Unfolds one image `x[cin,h,w]` into `cols[cin·kh·kw, ho·wo]`, with
/// out-of-range taps written as zero.
#[allow(clippy::too_many_arguments)]
pub fn im2col<E: Scalar>(
    x: &[E],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    dil: usize,
    ho: usize,
    wo: usize,
    cols: &mut [E],
) {
    debug_assert_eq!(cols.len(), cin * kh * kw * ho * wo);
    let mut row = 0usize;
    for c in 0..cin {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let out_row = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                row += 1;
                for oy in 0..ho {
                    let iy = (oy * stride + ky * dil) as isize - pad as isize;
                    let dst = &mut out_row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        for d in dst.iter_mut() {
                            *d = E::ZERO;
                        }
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx * dil) as isize - pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            E::ZERO
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` gradients back into one image gradient `dx[cin,h,w]`
/// (inverse of [`im2col`]).
#[allow(clippy::too_many_arguments)]
pub fn col2im_add<E: Scalar>(
    cols: &[E],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    dil: usize,
    ho: usize,
    wo: usize,
    dx: &mut [E],
) {
    let mut row = 0usize;
    for c in 0..cin {
        let plane = &mut dx[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let col_row = &cols[row * ho * wo..(row + 1) * ho * wo];
                row += 1;
                for oy in 0..ho {
                    let iy = (oy * stride + ky * dil) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src = &col_row[oy * wo..(oy + 1) * wo];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * stride + kx * dil) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// One endpoint pair + blend weight for separable interpolation.
#[derive(Debug, Clone, Copy)]
pub struct Lerp {
    pub i0: usize,
    pub i1: usize,
    pub t: f64,
}

/// Sampling table for resizing an axis of `n_in` elements to `n_out`, using
/// the half-pixel ("align_corners = false") convention: the source
/// coordinate of output `o` is `(o + 0.5)·n_in/n_out − 0.5`, clamped to the
/// valid range.
pub fn bilinear_axis(n_in: usize, n_out: usize) -> Vec<Lerp> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let s = (o as f64 + 0.5) * scale - 0.5;
            let f = libm::floor(s);
            let t = s - f;
            let i0 = f as isize;
            let i1 = i0 + 1;
            let clamp = |i: isize| i.clamp(0, n_in as isize - 1) as usize;
            Lerp {
                i0: clamp(i0),
                i1: clamp(i1),
                t,
            }
        })
        .collect()
}

/// Nearest-neighbour sampling table under the same half-pixel convention.
pub fn nearest_axis(n_in: usize, n_out: usize) -> Vec<usize> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let s = (o as f64 + 0.5) * scale;
            let i = libm::floor(s) as isize;
            i.clamp(0, n_in as isize - 1) as usize
        })
        .collect()
}

/// Resizes a `[c, h, w]` plane stack bilinearly to `[c, oh, ow]`.
pub fn resize_bilinear<E: Scalar>(x: &[E], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<E> {
    let ys = bilinear_axis(h, oh);
    let xs = bilinear_axis(w, ow);
    let mut out = vec![E::ZERO; c * oh * ow];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for (oy, ly) in ys.iter().enumerate() {
            let ty = E::from_f64(ly.t);
            let one_m_ty = E::ONE - ty;
            let r0 = &plane[ly.i0 * w..ly.i0 * w + w];
            let r1 = &plane[ly.i1 * w..ly.i1 * w + w];
            for (ox, lx) in xs.iter().enumerate() {
                let tx = E::from_f64(lx.t);
                let top = r0[lx.i0] * (E::ONE - tx) + r0[lx.i1] * tx;
                let bot = r1[lx.i0] * (E::ONE - tx) + r1[lx.i1] * tx;
                dst[oy * ow + ox] = top * one_m_ty + bot * ty;
            }
        }
    }
    out
}

/// Resizes a `[c, h, w]` plane stack with nearest-neighbour sampling.
pub fn resize_nearest<E: Scalar>(x: &[E], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<E> {
    let ys = nearest_axis(h, oh);
    let xs = nearest_axis(w, ow);
    let mut out = vec![E::ZERO; c * oh * ow];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for (oy, &sy) in ys.iter().enumerate() {
            let src_row = &plane[sy * w..sy * w + w];
            for (ox, &sx) in xs.iter().enumerate() {
                dst[oy * ow + ox] = src_row[sx];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_nn_hand_case() {
        // [[1,2],[3,4]] · [[5,6],[7,8]] = [[19,22],[43,50]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut out = [0.0f64; 4];
        gemm_nn(2, 2, 2, &a, &b, &mut out);
        assert_eq!(out, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn gemm_nt_matches_explicit_transpose() {
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0f64, 0.5, -1.0, 2.0, 0.0, 3.0]; // 2x3, used as b^T (3x2)
        let mut nt = [0.0f64; 4];
        gemm_nt(2, 3, 2, &a, &b, &mut nt);
        let bt = [1.0f64, 2.0, 0.5, 0.0, -1.0, 3.0]; // 3x2
        let mut nn = [0.0f64; 4];
        gemm_nn(2, 3, 2, &a, &bt, &mut nn);
        assert_eq!(nt, nn);
    }

    #[test]
    fn gemm_tn_matches_explicit_transpose() {
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]; // 3x2 read as a^T (2x3)
        let b = [2.0f64, -1.0, 0.0, 1.0, 1.0, 1.0]; // 3x2
        let mut tn = [0.0f64; 4];
        gemm_tn(3, 2, 2, &a, &b, &mut tn);
        let at = [1.0f64, 3.0, 5.0, 2.0, 4.0, 6.0]; // 2x3
        let mut nn = [0.0f64; 4];
        gemm_nn(2, 3, 2, &at, &b, &mut nn);
        assert_eq!(tn, nn);
    }

    #[test]
    fn conv_out_size_formula() {
        // 5x5 input, kernel 3, dilation 2, no padding -> effective field 5 -> 1x1.
        assert_eq!(conv_out_size(5, 3, 1, 0, 2), Some(1));
        assert_eq!(conv_out_size(224, 7, 2, 3, 1), Some(112));
        assert_eq!(conv_out_size(112, 3, 2, 1, 1), Some(56));
        assert_eq!(conv_out_size(2, 3, 1, 0, 1), None);
    }

    #[test]
    fn im2col_col2im_round_trip_accumulates_multiplicity() {
        // For stride == kernel and no padding, every element appears exactly
        // once, so col2im(im2col(x)) == x.
        let x: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let mut cols = vec![0.0f64; 4 * 4];
        im2col(&x, 1, 4, 4, 2, 2, 2, 0, 1, 2, 2, &mut cols);
        let mut back = vec![0.0f64; 16];
        col2im_add(&cols, 1, 4, 4, 2, 2, 2, 0, 1, 2, 2, &mut back);
        assert_eq!(back, x);
    }

    #[test]
    fn bilinear_axis_factor_two_weights() {
        // n_in=2 -> n_out=4 must produce the classic [0, 0.25, 0.75, 1] blend
        // against endpoints when applied to values [0, 1].
        let table = bilinear_axis(2, 4);
        let vals = [0.0f64, 1.0];
        let row: Vec<f64> = table
            .iter()
            .map(|l| vals[l.i0] * (1.0 - l.t) + vals[l.i1] * l.t)
            .collect();
        for (got, want) in row.iter().zip([0.0, 0.25, 0.75, 1.0]) {
            assert!((got - want).abs() < 1e-12, "{row:?}");
        }
    }

    #[test]
    fn resize_identity_when_sizes_match() {
        let x: Vec<f32> = (0..12).map(|v| v as f32).collect();
        assert_eq!(resize_bilinear(&x, 3, 2, 2, 2, 2), x);
        assert_eq!(resize_nearest(&x, 3, 2, 2, 2, 2), x);
    }

    #[test]
    fn resize_nearest_keeps_values_binary() {
        let x = vec![0.0f32, 1.0, 1.0, 0.0];
        let out = resize_nearest(&x, 1, 2, 2, 5, 5);
        assert!(out.iter().all(|&v| v == 0.0 || v == 1.0));
    }
}
