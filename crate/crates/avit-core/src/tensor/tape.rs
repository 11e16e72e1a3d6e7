//! Reverse-mode autodiff on a linear tape.
//!
//! Every operation appends one node holding its output value and enough
//! saved context to run its backward rule. Nodes are topologically ordered
//! by construction (inputs always precede outputs), and [`Tape::backward`]
//! walks the nodes in strict reverse creation order exactly once,
//! accumulating gradients with `+=` across fan-out.
//!
//! Leaves borrow their tensors from the caller, so registering a large
//! parameter set costs nothing; gradients are read back from the tape after
//! `backward` and applied to parameters by the optimizer.

use super::kernels;
use super::{numel_of, strides_of, Tensor};
use crate::error::{fmt_shape, Result};
use crate::scalar::Scalar;
use crate::{contract_err, shape_err};
use alloc::vec;
use alloc::vec::Vec;

/// BatchNorm running-statistics momentum: `r ← (1−m)·r + m·batch`.
pub const BN_MOMENTUM: f64 = 0.1;
/// BatchNorm variance epsilon.
pub const BN_EPS: f64 = 1e-5;

/// Handle to a value on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Slot<'a, E: Scalar> {
    Owned(Tensor<E>),
    Borrowed(&'a Tensor<E>),
}

impl<'a, E: Scalar> Slot<'a, E> {
    fn get(&self) -> &Tensor<E> {
        match self {
            Slot::Owned(t) => t,
            Slot::Borrowed(t) => t,
        }
    }
}

enum Op<E: Scalar> {
    Leaf,
    Add(usize, usize),
    /// `out = a + b` where `b`'s shape is a suffix of `a`'s.
    AddBcast(usize, usize),
    /// `out` repeats `x` over extra leading dimensions.
    Expand(usize),
    Mul(usize, usize),
    Div(usize, usize),
    /// `out = x·mul + add` with scalar constants.
    Affine {
        x: usize,
        mul: E,
    },
    Matmul {
        a: usize,
        b: usize,
        transpose_b: bool,
    },
    /// `y = x·wᵀ + b` with `w: [out, in]` applied to the last dimension.
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        stride: usize,
        pad: usize,
        dil: usize,
    },
    MaxPool2d {
        x: usize,
        argmax: Vec<u32>,
    },
    GlobalAvgPool(usize),
    UpsampleBilinear {
        x: usize,
        factor: usize,
    },
    PadReplicate {
        x: usize,
        pad: usize,
    },
    /// `[B,C,H,W] → [B, (H/p)·(W/p), C·p²]`, channel-major within a patch.
    PatchExtract {
        x: usize,
        p: usize,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        mean: Vec<E>,
        invstd: Vec<E>,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        mean: Vec<E>,
        invstd: Vec<E>,
        training: bool,
    },
    Softmax(usize),
    Gelu(usize),
    Sigmoid(usize),
    Relu(usize),
    Erf(usize),
    Concat {
        xs: Vec<usize>,
        axis: usize,
    },
    Slice {
        x: usize,
        axis: usize,
        start: usize,
    },
    Reshape(usize),
    Permute {
        x: usize,
        perm: Vec<usize>,
    },
    Sum(usize),
    Mean(usize),
    /// Mean over elements of `max(x,0) − x·y + ln(1+e^{−|x|})`.
    BceWithLogits {
        x: usize,
        y: usize,
    },
}

/// Reverse-mode tape. `'p` is the lifetime of borrowed leaf tensors.
pub struct Tape<'p, E: Scalar> {
    slots: Vec<Slot<'p, E>>,
    ops: Vec<Op<E>>,
    requires: Vec<bool>,
    grads: Vec<Option<Vec<E>>>,
}

impl<'p, E: Scalar> Default for Tape<'p, E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, E: Scalar> Tape<'p, E> {
    pub fn new() -> Self {
        Tape {
            slots: Vec::new(),
            ops: Vec::new(),
            requires: Vec::new(),
            grads: Vec::new(),
        }
    }

    /// Registers a borrowed tensor; gradients flow to it iff
    /// `tensor.requires_grad`.
    pub fn leaf(&mut self, t: &'p Tensor<E>) -> Var {
        let req = t.requires_grad;
        self.slots.push(Slot::Borrowed(t));
        self.ops.push(Op::Leaf);
        self.requires.push(req);
        self.grads.push(None);
        Var(self.slots.len() - 1)
    }

    /// Registers an owned constant (no gradient).
    pub fn constant(&mut self, t: Tensor<E>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.slots[v.0].get().shape()
    }

    pub fn data(&self, v: Var) -> &[E] {
        self.slots[v.0].get().data()
    }

    pub fn numel(&self, v: Var) -> usize {
        self.slots[v.0].get().numel()
    }

    /// Copies a value off the tape.
    pub fn detach(&self, v: Var) -> Tensor<E> {
        let mut t = self.slots[v.0].get().clone();
        t.requires_grad = false;
        t
    }

    /// Gradient of the last `backward` call w.r.t. `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<&[E]> {
        self.grads[v.0].as_deref()
    }

    /// Removes and returns the gradient buffer for `v`.
    pub fn take_grad(&mut self, v: Var) -> Option<Vec<E>> {
        self.grads[v.0].take()
    }

    fn push(&mut self, t: Tensor<E>, op: Op<E>, requires: bool) -> Var {
        #[cfg(debug_assertions)]
        {
            for &v in t.data() {
                assert!(v.is_finite(), "tape op produced a non-finite value");
            }
        }
        self.slots.push(Slot::Owned(t));
        self.ops.push(op);
        self.requires.push(requires);
        self.grads.push(None);
        Var(self.slots.len() - 1)
    }

    fn req(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    // ---------------------------------------------------------------- ops

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err!(
                "add: operand shapes {} and {} differ",
                fmt_shape(sa),
                fmt_shape(sb)
            ));
        }
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let t = Tensor {
            shape: sa.to_vec(),
            data,
            requires_grad: false,
        };
        let req = self.req(a) || self.req(b);
        Ok(self.push(t, Op::Add(a.0, b.0), req))
    }

    /// `a + b` where `b`'s shape is a suffix of `a`'s (e.g. a bias add).
    pub fn add_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || &sa[sa.len() - sb.len()..] != sb {
            return Err(shape_err!(
                "add_bcast: shape {} is not a suffix of {}",
                fmt_shape(sb),
                fmt_shape(sa)
            ));
        }
        let bn = numel_of(sb).max(1);
        let bd = self.data(b);
        let data = self
            .data(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bd[i % bn])
            .collect();
        let t = Tensor {
            shape: sa.to_vec(),
            data,
            requires_grad: false,
        };
        let req = self.req(a) || self.req(b);
        Ok(self.push(t, Op::AddBcast(a.0, b.0), req))
    }

    /// Repeats `x` across extra leading dimensions: the output shape is
    /// `leading ++ x.shape`.
    pub fn expand(&mut self, x: Var, leading: &[usize]) -> Result<Var> {
        if leading.iter().any(|&d| d == 0) {
            return Err(shape_err!(
                "expand: leading dims {} contain zero",
                fmt_shape(leading)
            ));
        }
        let sx = self.shape(x);
        let mut shape = leading.to_vec();
        shape.extend_from_slice(sx);
        let reps = numel_of(leading);
        let xd = self.data(x);
        let mut data = Vec::with_capacity(xd.len() * reps);
        for _ in 0..reps {
            data.extend_from_slice(xd);
        }
        let t = Tensor {
            shape,
            data,
            requires_grad: false,
        };
        let req = self.req(x);
        Ok(self.push(t, Op::Expand(x.0), req))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err!(
                "mul: operand shapes {} and {} differ",
                fmt_shape(sa),
                fmt_shape(sb)
            ));
        }
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let t = Tensor {
            shape: sa.to_vec(),
            data,
            requires_grad: false,
        };
        let req = self.req(a) || self.req(b);
        Ok(self.push(t, Op::Mul(a.0, b.0), req))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err!(
                "div: operand shapes {} and {} differ",
                fmt_shape(sa),
                fmt_shape(sb)
            ));
        }
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x / y)
            .collect();
        let t = Tensor {
            shape: sa.to_vec(),
            data,
            requires_grad: false,
        };
        let req = self.req(a) || self.req(b);
        Ok(self.push(t, Op::Div(a.0, b.0), req))
    }

    /// `x·mul + add` with scalar constants.
    pub fn affine(&mut self, x: Var, mul: E, add: E) -> Var {
        let data = self.data(x).iter().map(|&v| v * mul + add).collect();
        let t = Tensor {
            shape: self.shape(x).to_vec(),
            data,
            requires_grad: false,
        };
        let req = self.req(x);
        self.push(t, Op::Affine { x: x.0, mul }, req)
    }

    pub fn scale(&mut self, x: Var, s: E) -> Var {
        self.affine(x, s, E::ZERO)
    }

    /// Batched matrix product. `a` is `[batch.., m, k]`; `b` is either
    /// `[batch.., k, n]` with identical batch dims or a rank-2 `[k, n]`
    /// broadcast over the batch (`[.., n, k]` when `transpose_b`).
    pub fn matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(shape_err!(
                "matmul: operands must have rank >= 2, got {} and {}",
                fmt_shape(&sa),
                fmt_shape(&sb)
            ));
        }
        let (m, ka) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = if transpose_b {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        if ka != kb {
            return Err(shape_err!(
                "matmul: inner dimensions disagree between {} and {}{}",
                fmt_shape(&sa),
                fmt_shape(&sb),
                if transpose_b { " (rhs transposed)" } else { "" }
            ));
        }
        let batch = &sa[..sa.len() - 2];
        let b_batched = sb.len() > 2;
        if b_batched && &sb[..sb.len() - 2] != batch {
            return Err(shape_err!(
                "matmul: batch dimensions disagree between {} and {}",
                fmt_shape(&sa),
                fmt_shape(&sb)
            ));
        }
        let nb = numel_of(batch);
        let mut shape = batch.to_vec();
        shape.push(m);
        shape.push(n);
        let mut data = vec![E::ZERO; nb * m * n];
        {
            let ad = self.data(a);
            let bd = self.data(b);
            for i in 0..nb {
                let a_s = &ad[i * m * ka..(i + 1) * m * ka];
                let b_s = if b_batched {
                    &bd[i * ka * n..(i + 1) * ka * n]
                } else {
                    bd
                };
                let o_s = &mut data[i * m * n..(i + 1) * m * n];
                if transpose_b {
                    kernels::gemm_nt(m, ka, n, a_s, b_s, o_s);
                } else {
                    kernels::gemm_nn(m, ka, n, a_s, b_s, o_s);
                }
            }
        }
        let t = Tensor {
            shape,
            data,
            requires_grad: false,
        };
        let req = self.req(a) || self.req(b);
        Ok(self.push(
            t,
            Op::Matmul {
                a: a.0,
                b: b.0,
                transpose_b,
            },
            req,
        ))
    }

    /// Fully connected layer on the last dimension: `y = x·wᵀ + b` with
    /// `w: [out, in]` and optional `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.is_empty() || sw.len() != 2 {
            return Err(shape_err!(
                "linear: expected x rank >= 1 and w rank 2, got {} and {}",
                fmt_shape(&sx),
                fmt_shape(&sw)
            ));
        }
        let (out_dim, in_dim) = (sw[0], sw[1]);
        if *sx.last().unwrap() != in_dim {
            return Err(shape_err!(
                "linear: x shape {} incompatible with w shape {}",
                fmt_shape(&sx),
                fmt_shape(&sw)
            ));
        }
        if let Some(bias) = b {
            let sb = self.shape(bias);
            if sb != [out_dim] {
                return Err(shape_err!(
                    "linear: bias shape {} does not match w shape {}",
                    fmt_shape(sb),
                    fmt_shape(&sw)
                ));
            }
        }
        let rows = numel_of(&sx) / in_dim;
        let mut data = vec![E::ZERO; rows * out_dim];
        kernels::gemm_nt(rows, in_dim, out_dim, self.data(x), self.data(w), &mut data);
        if let Some(bias) = b {
            let bd = self.data(bias);
            for r in 0..rows {
                let row = &mut data[r * out_dim..(r + 1) * out_dim];
                for (o, &bv) in row.iter_mut().zip(bd) {
                    *o += bv;
                }
            }
        }
        let mut shape = sx.clone();
        *shape.last_mut().unwrap() = out_dim;
        let t = Tensor {
            shape,
            data,
            requires_grad: false,
        };
        let req = self.req(x) || self.req(w) || b.map(|v| self.req(v)).unwrap_or(false);
        Ok(self.push(
            t,
            Op::Linear {
                x: x.0,
                w: w.0,
                b: b.map(|v| v.0),
            },
            req,
        ))
    }

    /// 2-D cross-correlation over `x: [B, Cin, H, W]` with
    /// `w: [Cout, Cin, kh, kw]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        dil: usize,
    ) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 {
            return Err(shape_err!(
                "conv2d: expected rank-4 input and weight, got {} and {}",
                fmt_shape(&sx),
                fmt_shape(&sw)
            ));
        }
        if stride == 0 || dil == 0 {
            return Err(shape_err!("conv2d: stride and dilation must be >= 1"));
        }
        let (bsz, cin, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (cout, wcin, kh, kw) = (sw[0], sw[1], sw[2], sw[3]);
        if cin != wcin {
            return Err(shape_err!(
                "conv2d: input channels of {} do not match weight {}",
                fmt_shape(&sx),
                fmt_shape(&sw)
            ));
        }
        let (ho, wo) = match (
            kernels::conv_out_size(h, kh, stride, pad, dil),
            kernels::conv_out_size(wd, kw, stride, pad, dil),
        ) {
            (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
            _ => {
                return Err(shape_err!(
                    "conv2d: non-positive output size for input {} with kernel {}, stride {stride}, padding {pad}, dilation {dil}",
                    fmt_shape(&sx),
                    fmt_shape(&sw)
                ))
            }
        };
        if let Some(bias) = b {
            let sb = self.shape(bias);
            if sb != [cout] {
                return Err(shape_err!(
                    "conv2d: bias shape {} does not match weight {}",
                    fmt_shape(sb),
                    fmt_shape(&sw)
                ));
            }
        }
        let k = cin * kh * kw;
        let mut cols = vec![E::ZERO; k * ho * wo];
        let mut data = vec![E::ZERO; bsz * cout * ho * wo];
        {
            let xd = self.data(x);
            let wdat = self.data(w);
            for bi in 0..bsz {
                kernels::im2col(
                    &xd[bi * cin * h * wd..(bi + 1) * cin * h * wd],
                    cin,
                    h,
                    wd,
                    kh,
                    kw,
                    stride,
                    pad,
                    dil,
                    ho,
                    wo,
                    &mut cols,
                );
                kernels::gemm_nn(
                    cout,
                    k,
                    ho * wo,
                    wdat,
                    &cols,
                    &mut data[bi * cout * ho * wo..(bi + 1) * cout * ho * wo],
                );
            }
            if let Some(bias) = b {
                let bd = self.data(bias);
                for bi in 0..bsz {
                    for (c, &bv) in bd.iter().enumerate() {
                        let off = (bi * cout + c) * ho * wo;
                        for o in &mut data[off..off + ho * wo] {
                            *o += bv;
                        }
                    }
                }
            }
        }
        let t = Tensor {
            shape: vec![bsz, cout, ho, wo],
            data,
            requires_grad: false,
        };
        let req = self.req(x) || self.req(w) || b.map(|v| self.req(v)).unwrap_or(false);
        Ok(self.push(
            t,
            Op::Conv2d {
                x: x.0,
                w: w.0,
                b: b.map(|v| v.0),
                stride,
                pad,
                dil,
            },
            req,
        ))
    }

    /// Max pooling; padded positions never win. Ties go to the first
    /// position in scan order.
    pub fn maxpool2d(&mut self, x: Var, k: usize, stride: usize, pad: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 4 {
            return Err(shape_err!(
                "maxpool2d: expected rank-4 input, got {}",
                fmt_shape(&sx)
            ));
        }
        let (bsz, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let (ho, wo) = match (
            kernels::conv_out_size(h, k, stride, pad, 1),
            kernels::conv_out_size(w, k, stride, pad, 1),
        ) {
            (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
            _ => {
                return Err(shape_err!(
                    "maxpool2d: non-positive output size for input {} with kernel {k}",
                    fmt_shape(&sx)
                ))
            }
        };
        let mut data = vec![E::ZERO; bsz * c * ho * wo];
        let mut argmax = vec![0u32; bsz * c * ho * wo];
        {
            let xd = self.data(x);
            for bc in 0..bsz * c {
                let plane = &xd[bc * h * w..(bc + 1) * h * w];
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut best: Option<(E, u32)> = None;
                        for ky in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let idx = iy as usize * w + ix as usize;
                                let v = plane[idx];
                                match best {
                                    Some((bv, _)) if !(v > bv) => {}
                                    _ => best = Some((v, idx as u32)),
                                }
                            }
                        }
                        let (v, idx) = best.ok_or_else(|| {
                            shape_err!(
                                "maxpool2d: window at ({oy},{ox}) covers no input of {}",
                                fmt_shape(&sx)
                            )
                        })?;
                        data[bc * ho * wo + oy * wo + ox] = v;
                        argmax[bc * ho * wo + oy * wo + ox] = idx;
                    }
                }
            }
        }
        let t = Tensor {
            shape: vec![bsz, c, ho, wo],
            data,
            requires_grad: false,
        };
        let req = self.req(x);
        Ok(self.push(t, Op::MaxPool2d { x: x.0, argmax }, req))
    }

    /// Spatial mean of `[B, C, H, W]` into `[B, C, 1, 1]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 4 {
            return Err(shape_err!(
                "global_avg_pool: expected rank-4 input, got {}",
                fmt_shape(&sx)
            ));
        }
        let (bsz, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let inv = E::from_usize(h * w);
        let xd = self.data(x);
        let mut data = vec![E::ZERO; bsz * c];
        for (bc, o) in data.iter_mut().enumerate() {
            let plane = &xd[bc * h * w..(bc + 1) * h * w];
            let mut acc = E::ZERO;
            for &v in plane {
                acc += v;
            }
            *o = acc / inv;
        }
        let t = Tensor {
            shape: vec![bsz, c, 1, 1],
            data,
            requires_grad: false,
        };
        let req = self.req(x);
        Ok(self.push(t, Op::GlobalAvgPool(x.0), req))
    }

    /// Bilinear upsampling by an integer factor, half-pixel convention.
    pub fn upsample_bilinear(&mut self, x: Var, factor: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 4 {
            return Err(shape_err!(
                "upsample_bilinear: expected rank-4 input, got {}",
                fmt_shape(&sx)
            ));
        }
        if factor == 0 {
            return Err(shape_err!("upsample_bilinear: factor must be >= 1"));
        }
        let (bsz, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let (oh, ow) = (h * factor, w * factor);
        let data = kernels::resize_bilinear(self.data(x), bsz * c, h, w, oh, ow);
        let t = Tensor {
            shape: vec![bsz, c, oh, ow],
            data,
            requires_grad: false,
        };
        let req = self.req(x);
        Ok(self.push(t, Op::UpsampleBilinear { x: x.0, factor }, req))
    }

    /// Replicate (edge) padding of `[B, C, H, W]` by `pad` pixels on every
    /// spatial side. Unlike zero padding, this preserves spatially constant
    /// inputs under convolution.
    pub fn pad_replicate(&mut self, x: Var, pad: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 4 {
            return Err(shape_err!(
                "pad_replicate: expected rank-4 input, got {}",
                fmt_shape(&sx)
            ));
        }
        if pad == 0 {
            return Ok(x);
        }
        let (bsz, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let (oh, ow) = (h + 2 * pad, w + 2 * pad);
        let xd = self.data(x);
        let mut data = vec![E::ZERO; bsz * c * oh * ow];
        for bc in 0..bsz * c {
            let src = &xd[bc * h * w..(bc + 1) * h * w];
            let dst = &mut data[bc * oh * ow..(bc + 1) * oh * ow];
            for oy in 0..oh {
                let iy = oy.saturating_sub(pad).min(h - 1);
                for ox in 0..ow {
                    let ix = ox.saturating_sub(pad).min(w - 1);
                    dst[oy * ow + ox] = src[iy * w + ix];
                }
            }
        }
        let t = Tensor {
            shape: vec![bsz, c, oh, ow],
            data,
            requires_grad: false,
        };
        let req = self.req(x);
        Ok(self.push(t, Op::PadReplicate { x: x.0, pad }, req))
    }

    /// Splits `[B, C, H, W]` into non-overlapping `p × p` patches flattened
    /// channel-major: output `[B, N, C·p²]` with patches in row-major grid
    /// order and element `(c·p + py)·p + px` inside each patch row.
    pub fn patch_extract(&mut self, x: Var, p: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 4 {
            return Err(shape_err!(
                "patch_extract: expected rank-4 input, got {}",
                fmt_shape(&sx)
            ));
        }
        let (bsz, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        if p == 0 || h % p != 0 || w % p != 0 {
            return Err(shape_err!(
                "patch_extract: spatial dims of {} not divisible by patch size {p}",
                fmt_shape(&sx)
            ));
        }
        let (gh, gw) = (h / p, w / p);
        let n = gh * gw;
        let pk = c * p * p;
        let xd = self.data(x);
        let mut data = vec![E::ZERO; bsz * n * pk];
        for bi in 0..bsz {
            for ty in 0..gh {
                for tx in 0..gw {
                    let t = ty * gw + tx;
                    let dst = &mut data[(bi * n + t) * pk..(bi * n + t + 1) * pk];
                    for ch in 0..c {
                        for py in 0..p {
                            let src_off = ((bi * c + ch) * h + ty * p + py) * w + tx * p;
                            let dst_off = (ch * p + py) * p;
                            dst[dst_off..dst_off + p].copy_from_slice(&xd[src_off..src_off + p]);
                        }
                    }
                }
            }
        }
        let t = Tensor {
            shape: vec![bsz, n, pk],
            data,
            requires_grad: false,
        };
        let req = self.req(x);
        Ok(self.push(t, Op::PatchExtract { x: x.0, p }, req))
    }

    /// Per-row normalization over the last dimension:
    /// `(x−μ)/√(σ²+eps)·γ+β` with biased variance.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let d = *sx.last().ok_or_else(|| {
            shape_err!("layer_norm: input must have rank >= 1, got {}", fmt_shape(&sx))
        })?;
        let (sg, sb) = (self.shape(gamma), self.shape(beta));
        if sg != [d] || sb != [d] {
            return Err(shape_err!(
                "layer_norm: gamma {} / beta {} do not match last dim of {}",
                fmt_shape(sg),
                fmt_shape(sb),
                fmt_shape(&sx)
            ));
        }
        let rows = numel_of(&sx) / d;
        let inv_d = E::from_usize(d);
        let eps_e = E::from_f64(eps);
        let xd = self.data(x);
        let gd = self.data(gamma);
        let bd = self.data(beta);
        let mut data = vec![E::ZERO; rows * d];
        let mut means = Vec::with_capacity(rows);
        let mut invstds = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mut mean = E::ZERO;
            for &v in row {
                mean += v;
            }
            mean /= inv_d;
            let mut var = E::ZERO;
            for &v in row {
                let c = v - mean;
                var += c * c;
            }
            var /= inv_d;
            let invstd = E::ONE / (var + eps_e).sqrt();
            means.push(mean);
            invstds.push(invstd);
            let dst = &mut data[r * d..(r + 1) * d];
            for i in 0..d {
                dst[i] = (row[i] - mean) * invstd * gd[i] + bd[i];
            }
        }
        let t = Tensor {
            shape: sx,
            data,
            requires_grad: false,
        };
        let req = self.req(x) || self.req(gamma) || self.req(beta);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                mean: means,
                invstd: invstds,
            },
            req,
        ))
    }

    /// BatchNorm over `[B, C, H, W]`, normalizing each channel.
    ///
    /// Training mode normalizes with batch statistics (biased variance) and
    /// updates `running_mean`/`running_var` in place with momentum
    /// [`BN_MOMENTUM`]; the running variance tracks the same biased batch
    /// variance used for normalization, so once the running statistics
    /// converge to a batch's statistics, training-mode and eval-mode outputs
    /// coincide. Eval mode normalizes with the running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &mut Tensor<E>,
        running_var: &mut Tensor<E>,
        training: bool,
    ) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 4 {
            return Err(shape_err!(
                "batch_norm: expected rank-4 input, got {}",
                fmt_shape(&sx)
            ));
        }
        let (bsz, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        for (name, s) in [
            ("gamma", self.shape(gamma)),
            ("beta", self.shape(beta)),
            ("running_mean", running_mean.shape()),
            ("running_var", running_var.shape()),
        ] {
            if s != [c] {
                return Err(shape_err!(
                    "batch_norm: {name} shape {} does not match channels of {}",
                    fmt_shape(s),
                    fmt_shape(&sx)
                ));
            }
        }
        let n = bsz * h * w;
        let plane = h * w;
        let eps = E::from_f64(BN_EPS);
        let xd = self.data(x);
        let (mut means, mut invstds) = (vec![E::ZERO; c], vec![E::ZERO; c]);
        if training {
            let inv_n = E::from_usize(n);
            for ch in 0..c {
                let mut mean = E::ZERO;
                for bi in 0..bsz {
                    let off = (bi * c + ch) * plane;
                    for &v in &xd[off..off + plane] {
                        mean += v;
                    }
                }
                mean /= inv_n;
                let mut var = E::ZERO;
                for bi in 0..bsz {
                    let off = (bi * c + ch) * plane;
                    for &v in &xd[off..off + plane] {
                        let d = v - mean;
                        var += d * d;
                    }
                }
                var /= inv_n;
                means[ch] = mean;
                invstds[ch] = E::ONE / (var + eps).sqrt();
                let mom = E::from_f64(BN_MOMENTUM);
                let keep = E::ONE - mom;
                running_mean.data_mut()[ch] = keep * running_mean.data()[ch] + mom * mean;
                running_var.data_mut()[ch] = keep * running_var.data()[ch] + mom * var;
            }
        } else {
            for ch in 0..c {
                means[ch] = running_mean.data()[ch];
                invstds[ch] = E::ONE / (running_var.data()[ch] + eps).sqrt();
            }
        }
        let gd = self.data(gamma);
        let bd = self.data(beta);
        let mut data = vec![E::ZERO; xd.len()];
        for bi in 0..bsz {
            for ch in 0..c {
                let off = (bi * c + ch) * plane;
                let (m, inv, g, b) = (means[ch], invstds[ch], gd[ch], bd[ch]);
                for i in off..off + plane {
                    data[i] = (xd[i] - m) * inv * g + b;
                }
            }
        }
        let t = Tensor {
            shape: sx,
            data,
            requires_grad: false,
        };
        let req = self.req(x) || self.req(gamma) || self.req(beta);
        Ok(self.push(
            t,
            Op::BatchNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                mean: means,
                invstd: invstds,
                training,
            },
            req,
        ))
    }

    /// Softmax over the last dimension, computed with max-subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let d = *sx.last().ok_or_else(|| {
            shape_err!("softmax: input must have rank >= 1, got {}", fmt_shape(&sx))
        })?;
        let rows = numel_of(&sx) / d;
        let xd = self.data(x);
        let mut data = vec![E::ZERO; xd.len()];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mut m = row[0];
            for &v in row {
                m = m.max(v);
            }
            let dst = &mut data[r * d..(r + 1) * d];
            let mut sum = E::ZERO;
            for i in 0..d {
                let e = (row[i] - m).exp();
                dst[i] = e;
                sum += e;
            }
            for v in dst.iter_mut() {
                *v /= sum;
            }
        }
        let t = Tensor {
            shape: sx,
            data,
            requires_grad: false,
        };
        let req = self.req(x);
        Ok(self.push(t, Op::Softmax(x.0), req))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let data = self.data(x).iter().map(|&v| v.gelu()).collect();
        let t = Tensor {
            shape: self.shape(x).to_vec(),
            data,
            requires_grad: false,
        };
        let req = self.req(x);
        self.push(t, Op::Gelu(x.0), req)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let data = self.data(x).iter().map(|&v| v.sigmoid()).collect();
        let t = Tensor {
            shape: self.shape(x).to_vec(),
            data,
            requires_grad: false,
        };
        let req = self.req(x);
        self.push(t, Op::Sigmoid(x.0), req)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data = self
            .data(x)
            .iter()
            .map(|&v| if v > E::ZERO { v } else { E::ZERO })
            .collect();
        let t = Tensor {
            shape: self.shape(x).to_vec(),
            data,
            requires_grad: false,
        };
        let req = self.req(x);
        self.push(t, Op::Relu(x.0), req)
    }

    pub fn erf(&mut self, x: Var) -> Var {
        let data = self.data(x).iter().map(|&v| v.erf()).collect();
        let t = Tensor {
            shape: self.shape(x).to_vec(),
            data,
            requires_grad: false,
        };
        let req = self.req(x);
        self.push(t, Op::Erf(x.0), req)
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(shape_err!("concat: no inputs"));
        }
        let first = self.shape(xs[0]).to_vec();
        if axis >= first.len() {
            return Err(shape_err!(
                "concat: axis {axis} out of range for shape {}",
                fmt_shape(&first)
            ));
        }
        let mut axis_total = 0usize;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(shape_err!(
                    "concat: shape {} incompatible with {} on axis {axis}",
                    fmt_shape(s),
                    fmt_shape(&first)
                ));
            }
            axis_total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = axis_total;
        let outer = numel_of(&first[..axis]);
        let inner = numel_of(&first[axis + 1..]);
        let mut data = vec![E::ZERO; outer * axis_total * inner];
        let mut dst_off = 0usize;
        for &v in xs {
            let s_axis = self.shape(v)[axis];
            let block = s_axis * inner;
            let src = self.data(v);
            for o in 0..outer {
                let dst = &mut data[(o * axis_total * inner) + dst_off..];
                dst[..block].copy_from_slice(&src[o * block..(o + 1) * block]);
            }
            dst_off += block;
        }
        let t = Tensor {
            shape,
            data,
            requires_grad: false,
        };
        let req = xs.iter().any(|&v| self.req(v));
        Ok(self.push(
            t,
            Op::Concat {
                xs: xs.iter().map(|v| v.0).collect(),
                axis,
            },
            req,
        ))
    }

    /// Contiguous slice `start..start+len` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() || start + len > sx[axis] || len == 0 {
            return Err(shape_err!(
                "slice: range {start}..{} invalid on axis {axis} of {}",
                start + len,
                fmt_shape(&sx)
            ));
        }
        let outer = numel_of(&sx[..axis]);
        let inner = numel_of(&sx[axis + 1..]);
        let mut shape = sx.clone();
        shape[axis] = len;
        let src = self.data(x);
        let mut data = vec![E::ZERO; outer * len * inner];
        for o in 0..outer {
            let src_off = (o * sx[axis] + start) * inner;
            let dst_off = o * len * inner;
            data[dst_off..dst_off + len * inner]
                .copy_from_slice(&src[src_off..src_off + len * inner]);
        }
        let t = Tensor {
            shape,
            data,
            requires_grad: false,
        };
        let req = self.req(x);
        Ok(self.push(
            t,
            Op::Slice {
                x: x.0,
                axis,
                start,
            },
            req,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let sx = self.shape(x);
        if numel_of(shape) != numel_of(sx) {
            return Err(shape_err!(
                "reshape: cannot view {} as {}",
                fmt_shape(sx),
                fmt_shape(shape)
            ));
        }
        let t = Tensor {
            shape: shape.to_vec(),
            data: self.data(x).to_vec(),
            requires_grad: false,
        };
        let req = self.req(x);
        Ok(self.push(t, Op::Reshape(x.0), req))
    }

    /// Reorders dimensions: output dim `j` is input dim `perm[j]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let mut seen = vec![false; sx.len()];
        if perm.len() != sx.len() || perm.iter().any(|&p| p >= sx.len() || core::mem::replace(&mut seen[p], true)) {
            return Err(shape_err!(
                "permute: {:?} is not a permutation of dims of {}",
                perm,
                fmt_shape(&sx)
            ));
        }
        let shape: Vec<usize> = perm.iter().map(|&p| sx[p]).collect();
        let in_strides = strides_of(&sx);
        let out_strides = strides_of(&shape);
        let src = self.data(x);
        let mut data = vec![E::ZERO; src.len()];
        for (o, dst) in data.iter_mut().enumerate() {
            let mut rem = o;
            let mut src_idx = 0usize;
            for (j, &os) in out_strides.iter().enumerate() {
                let c = rem / os;
                rem %= os;
                src_idx += c * in_strides[perm[j]];
            }
            *dst = src[src_idx];
        }
        let t = Tensor {
            shape,
            data,
            requires_grad: false,
        };
        let req = self.req(x);
        Ok(self.push(
            t,
            Op::Permute {
                x: x.0,
                perm: perm.to_vec(),
            },
            req,
        ))
    }

    /// Sum of all elements (rank-0 result).
    pub fn sum(&mut self, x: Var) -> Var {
        let mut acc = E::ZERO;
        for &v in self.data(x) {
            acc += v;
        }
        let req = self.req(x);
        self.push(Tensor::scalar(acc), Op::Sum(x.0), req)
    }

    /// Mean of all elements (rank-0 result).
    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.numel(x);
        let mut acc = E::ZERO;
        for &v in self.data(x) {
            acc += v;
        }
        acc /= E::from_usize(n);
        let req = self.req(x);
        self.push(Tensor::scalar(acc), Op::Mean(x.0), req)
    }

    /// Numerically stable binary cross-entropy with logits, averaged over
    /// all elements: `mean(max(x,0) − x·y + ln(1+e^{−|x|}))`.
    pub fn bce_with_logits_mean(&mut self, logits: Var, targets: Var) -> Result<Var> {
        let (sx, sy) = (self.shape(logits), self.shape(targets));
        if sx != sy {
            return Err(shape_err!(
                "bce_with_logits: logits {} and targets {} differ",
                fmt_shape(sx),
                fmt_shape(sy)
            ));
        }
        let n = E::from_usize(self.numel(logits).max(1));
        let mut acc = E::ZERO;
        for (&x, &y) in self.data(logits).iter().zip(self.data(targets)) {
            acc += x.max(E::ZERO) - x * y + (-x.abs()).exp().ln_1p();
        }
        acc /= n;
        let req = self.req(logits) || self.req(targets);
        Ok(self.push(
            Tensor::scalar(acc),
            Op::BceWithLogits {
                x: logits.0,
                y: targets.0,
            },
            req,
        ))
    }

    // ----------------------------------------------------------- backward

    /// Accumulates `∂loss/∂v` into the gradient buffer of every node with
    /// `requires_grad` reachability, traversing in reverse creation order.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.numel(loss) != 1 || !self.shape(loss).is_empty() {
            return Err(contract_err!(
                "backward: loss must be a rank-0 scalar, got shape {}",
                fmt_shape(self.shape(loss))
            ));
        }
        if !self.requires[loss.0] {
            return Err(contract_err!(
                "backward: loss does not depend on any tensor with requires_grad"
            ));
        }
        self.grads[loss.0] = Some(vec![E::ONE]);

        let Tape {
            slots,
            ops,
            requires,
            grads,
        } = self;

        for i in (0..ops.len()).rev() {
            if !requires[i] {
                continue;
            }
            let Some(g) = core::mem::take(&mut grads[i]) else {
                continue;
            };
            backprop_one(slots, ops, requires, grads, i, &g);
            grads[i] = Some(g);
        }
        Ok(())
    }
}

/// Gets (allocating if needed) the gradient buffer for slot `j`, or `None`
/// when gradients do not flow there.
fn acc_buf<'g, E: Scalar>(
    slots: &[Slot<'_, E>],
    requires: &[bool],
    grads: &'g mut [Option<Vec<E>>],
    j: usize,
) -> Option<&'g mut [E]> {
    if !requires[j] {
        return None;
    }
    let n = slots[j].get().numel();
    Some(grads[j].get_or_insert_with(|| vec![E::ZERO; n]))
}

#[allow(clippy::too_many_lines)]
fn backprop_one<E: Scalar>(
    slots: &[Slot<'_, E>],
    ops: &[Op<E>],
    requires: &[bool],
    grads: &mut [Option<Vec<E>>],
    i: usize,
    g: &[E],
) {
    let val = |j: usize| slots[j].get();
    match &ops[i] {
        Op::Leaf => {}
        Op::Add(a, b) => {
            for &j in &[*a, *b] {
                if let Some(dst) = acc_buf(slots, requires, grads, j) {
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
            }
        }
        Op::AddBcast(a, b) => {
            if let Some(dst) = acc_buf(slots, requires, grads, *a) {
                for (d, &gv) in dst.iter_mut().zip(g) {
                    *d += gv;
                }
            }
            if let Some(dst) = acc_buf(slots, requires, grads, *b) {
                let bn = dst.len();
                for (idx, &gv) in g.iter().enumerate() {
                    dst[idx % bn] += gv;
                }
            }
        }
        Op::Expand(x) => {
            if let Some(dst) = acc_buf(slots, requires, grads, *x) {
                let xn = dst.len();
                for (idx, &gv) in g.iter().enumerate() {
                    dst[idx % xn] += gv;
                }
            }
        }
        Op::Mul(a, b) => {
            let (ad, bd) = (val(*a).data(), val(*b).data());
            if let Some(dst) = acc_buf(slots, requires, grads, *a) {
                for ((d, &gv), &bv) in dst.iter_mut().zip(g).zip(bd) {
                    *d += gv * bv;
                }
            }
            if let Some(dst) = acc_buf(slots, requires, grads, *b) {
                for ((d, &gv), &av) in dst.iter_mut().zip(g).zip(ad) {
                    *d += gv * av;
                }
            }
        }
        Op::Div(a, b) => {
            let (ad, bd) = (val(*a).data(), val(*b).data());
            if let Some(dst) = acc_buf(slots, requires, grads, *a) {
                for ((d, &gv), &bv) in dst.iter_mut().zip(g).zip(bd) {
                    *d += gv / bv;
                }
            }
            if let Some(dst) = acc_buf(slots, requires, grads, *b) {
                for (idx, (d, &gv)) in dst.iter_mut().zip(g).enumerate() {
                    *d -= gv * ad[idx] / (bd[idx] * bd[idx]);
                }
            }
        }
        Op::Affine { x, mul } => {
            if let Some(dst) = acc_buf(slots, requires, grads, *x) {
                for (d, &gv) in dst.iter_mut().zip(g) {
                    *d += gv * *mul;
                }
            }
        }
        Op::Matmul { a, b, transpose_b } => {
            let (ta, tb) = (val(*a), val(*b));
            let (sa, sb) = (ta.shape(), tb.shape());
            let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
            let n = if *transpose_b {
                sb[sb.len() - 2]
            } else {
                sb[sb.len() - 1]
            };
            let nb = numel_of(&sa[..sa.len() - 2]);
            let b_batched = sb.len() > 2;
            let (ad, bd) = (ta.data(), tb.data());
            if requires[*a] {
                let dst = acc_buf(slots, requires, grads, *a).unwrap();
                for bi in 0..nb {
                    let g_s = &g[bi * m * n..(bi + 1) * m * n];
                    let b_s = if b_batched {
                        &bd[bi * k * n..(bi + 1) * k * n]
                    } else {
                        bd
                    };
                    let d_s = &mut dst[bi * m * k..(bi + 1) * m * k];
                    if *transpose_b {
                        // da += g·b, b: [n,k]
                        kernels::gemm_nn(m, n, k, g_s, b_s, d_s);
                    } else {
                        // da += g·bᵀ, b: [k,n]
                        kernels::gemm_nt(m, n, k, g_s, b_s, d_s);
                    }
                }
            }
            if requires[*b] {
                let dst = acc_buf(slots, requires, grads, *b).unwrap();
                for bi in 0..nb {
                    let g_s = &g[bi * m * n..(bi + 1) * m * n];
                    let a_s = &ad[bi * m * k..(bi + 1) * m * k];
                    let d_s = if b_batched {
                        &mut dst[bi * k * n..(bi + 1) * k * n]
                    } else {
                        &mut dst[..]
                    };
                    if *transpose_b {
                        // db[n,k] += gᵀ·a
                        kernels::gemm_tn(m, n, k, g_s, a_s, d_s);
                    } else {
                        // db[k,n] += aᵀ·g
                        kernels::gemm_tn(m, k, n, a_s, g_s, d_s);
                    }
                }
            }
        }
        Op::Linear { x, w, b } => {
            let (tx, tw) = (val(*x), val(*w));
            let in_dim = tw.shape()[1];
            let out_dim = tw.shape()[0];
            let rows = tx.numel() / in_dim;
            if requires[*x] {
                let dst = acc_buf(slots, requires, grads, *x).unwrap();
                kernels::gemm_nn(rows, out_dim, in_dim, g, tw.data(), dst);
            }
            if requires[*w] {
                let dst = acc_buf(slots, requires, grads, *w).unwrap();
                kernels::gemm_tn(rows, out_dim, in_dim, g, tx.data(), dst);
            }
            if let Some(bj) = b {
                if let Some(dst) = acc_buf(slots, requires, grads, *bj) {
                    for r in 0..rows {
                        let row = &g[r * out_dim..(r + 1) * out_dim];
                        for (d, &gv) in dst.iter_mut().zip(row) {
                            *d += gv;
                        }
                    }
                }
            }
        }
        Op::Conv2d {
            x,
            w,
            b,
            stride,
            pad,
            dil,
        } => {
            let (tx, tw) = (val(*x), val(*w));
            let (sx, sw) = (tx.shape(), tw.shape());
            let (bsz, cin, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
            let (cout, _, kh, kw) = (sw[0], sw[1], sw[2], sw[3]);
            let ho = kernels::conv_out_size(h, kh, *stride, *pad, *dil).unwrap();
            let wo = kernels::conv_out_size(wd, kw, *stride, *pad, *dil).unwrap();
            let k = cin * kh * kw;
            let need_dx = requires[*x];
            let need_dw = requires[*w];
            if need_dx || need_dw {
                let mut cols = vec![E::ZERO; k * ho * wo];
                let mut dcols = vec![E::ZERO; k * ho * wo];
                let xd = tx.data();
                let wdat = tw.data();
                for bi in 0..bsz {
                    let g_s = &g[bi * cout * ho * wo..(bi + 1) * cout * ho * wo];
                    if need_dw {
                        kernels::im2col(
                            &xd[bi * cin * h * wd..(bi + 1) * cin * h * wd],
                            cin,
                            h,
                            wd,
                            kh,
                            kw,
                            *stride,
                            *pad,
                            *dil,
                            ho,
                            wo,
                            &mut cols,
                        );
                        let dst = acc_buf(slots, requires, grads, *w).unwrap();
                        kernels::gemm_nt(cout, ho * wo, k, g_s, &cols, dst);
                    }
                    if need_dx {
                        for v in dcols.iter_mut() {
                            *v = E::ZERO;
                        }
                        kernels::gemm_tn(cout, k, ho * wo, wdat, g_s, &mut dcols);
                        let dst = acc_buf(slots, requires, grads, *x).unwrap();
                        kernels::col2im_add(
                            &dcols,
                            cin,
                            h,
                            wd,
                            kh,
                            kw,
                            *stride,
                            *pad,
                            *dil,
                            ho,
                            wo,
                            &mut dst[bi * cin * h * wd..(bi + 1) * cin * h * wd],
                        );
                    }
                }
            }
            if let Some(bj) = b {
                if let Some(dst) = acc_buf(slots, requires, grads, *bj) {
                    for bi in 0..bsz {
                        for (c, d) in dst.iter_mut().enumerate() {
                            let off = (bi * cout + c) * ho * wo;
                            for &gv in &g[off..off + ho * wo] {
                                *d += gv;
                            }
                        }
                    }
                }
            }
        }
        Op::MaxPool2d { x, argmax, .. } => {
            let plane = {
                let s = val(*x).shape();
                s[2] * s[3]
            };
            let out_plane = g.len() / (val(*x).shape()[0] * val(*x).shape()[1]);
            if let Some(dst) = acc_buf(slots, requires, grads, *x) {
                for (o, (&gv, &am)) in g.iter().zip(argmax).enumerate() {
                    let bc = o / out_plane;
                    dst[bc * plane + am as usize] += gv;
                }
            }
        }
        Op::GlobalAvgPool(x) => {
            let s = val(*x).shape();
            let plane = s[2] * s[3];
            let inv = E::ONE / E::from_usize(plane);
            if let Some(dst) = acc_buf(slots, requires, grads, *x) {
                for (bc, &gv) in g.iter().enumerate() {
                    let share = gv * inv;
                    for d in &mut dst[bc * plane..(bc + 1) * plane] {
                        *d += share;
                    }
                }
            }
        }
        Op::UpsampleBilinear { x, factor } => {
            let s = val(*x).shape();
            let (bc, h, w) = (s[0] * s[1], s[2], s[3]);
            let (oh, ow) = (h * factor, w * factor);
            let ys = kernels::bilinear_axis(h, oh);
            let xs = kernels::bilinear_axis(w, ow);
            if let Some(dst) = acc_buf(slots, requires, grads, *x) {
                for p in 0..bc {
                    let g_plane = &g[p * oh * ow..(p + 1) * oh * ow];
                    let d_plane = &mut dst[p * h * w..(p + 1) * h * w];
                    for (oy, ly) in ys.iter().enumerate() {
                        let ty = E::from_f64(ly.t);
                        for (ox, lx) in xs.iter().enumerate() {
                            let tx = E::from_f64(lx.t);
                            let gv = g_plane[oy * ow + ox];
                            d_plane[ly.i0 * w + lx.i0] += gv * (E::ONE - ty) * (E::ONE - tx);
                            d_plane[ly.i0 * w + lx.i1] += gv * (E::ONE - ty) * tx;
                            d_plane[ly.i1 * w + lx.i0] += gv * ty * (E::ONE - tx);
                            d_plane[ly.i1 * w + lx.i1] += gv * ty * tx;
                        }
                    }
                }
            }
        }
        Op::PadReplicate { x, pad } => {
            let s = val(*x).shape();
            let (bc, h, w) = (s[0] * s[1], s[2], s[3]);
            let (oh, ow) = (h + 2 * pad, w + 2 * pad);
            if let Some(dst) = acc_buf(slots, requires, grads, *x) {
                for p in 0..bc {
                    let g_plane = &g[p * oh * ow..(p + 1) * oh * ow];
                    let d_plane = &mut dst[p * h * w..(p + 1) * h * w];
                    for oy in 0..oh {
                        let iy = oy.saturating_sub(*pad).min(h - 1);
                        for ox in 0..ow {
                            let ix = ox.saturating_sub(*pad).min(w - 1);
                            d_plane[iy * w + ix] += g_plane[oy * ow + ox];
                        }
                    }
                }
            }
        }
        Op::PatchExtract { x, p } => {
            let s = val(*x).shape();
            let (bsz, c, h, w) = (s[0], s[1], s[2], s[3]);
            let (gh, gw) = (h / p, w / p);
            let n = gh * gw;
            let pk = c * p * p;
            if let Some(dst) = acc_buf(slots, requires, grads, *x) {
                for bi in 0..bsz {
                    for ty in 0..gh {
                        for tx in 0..gw {
                            let t = ty * gw + tx;
                            let src = &g[(bi * n + t) * pk..(bi * n + t + 1) * pk];
                            for ch in 0..c {
                                for py in 0..*p {
                                    let dst_off = ((bi * c + ch) * h + ty * p + py) * w + tx * p;
                                    let src_off = (ch * p + py) * p;
                                    for px in 0..*p {
                                        dst[dst_off + px] += src[src_off + px];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            mean,
            invstd,
        } => {
            let tx = val(*x);
            let d = *tx.shape().last().unwrap();
            let rows = tx.numel() / d;
            let xd = tx.data();
            let gd = val(*gamma).data();
            let inv_d = E::from_usize(d);
            if requires[*x] {
                let dst = acc_buf(slots, requires, grads, *x).unwrap();
                for r in 0..rows {
                    let (m, inv) = (mean[r], invstd[r]);
                    let row_x = &xd[r * d..(r + 1) * d];
                    let row_g = &g[r * d..(r + 1) * d];
                    let mut s1 = E::ZERO;
                    let mut s2 = E::ZERO;
                    for i in 0..d {
                        let dxh = row_g[i] * gd[i];
                        let xh = (row_x[i] - m) * inv;
                        s1 += dxh;
                        s2 += dxh * xh;
                    }
                    s1 /= inv_d;
                    s2 /= inv_d;
                    let dst_row = &mut dst[r * d..(r + 1) * d];
                    for i in 0..d {
                        let dxh = row_g[i] * gd[i];
                        let xh = (row_x[i] - m) * inv;
                        dst_row[i] += inv * (dxh - s1 - xh * s2);
                    }
                }
            }
            if let Some(dst) = acc_buf(slots, requires, grads, *gamma) {
                for r in 0..rows {
                    let (m, inv) = (mean[r], invstd[r]);
                    for i in 0..d {
                        let xh = (xd[r * d + i] - m) * inv;
                        dst[i] += g[r * d + i] * xh;
                    }
                }
            }
            if let Some(dst) = acc_buf(slots, requires, grads, *beta) {
                for r in 0..rows {
                    for i in 0..d {
                        dst[i] += g[r * d + i];
                    }
                }
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            mean,
            invstd,
            training,
        } => {
            let tx = val(*x);
            let s = tx.shape();
            let (bsz, c, plane) = (s[0], s[1], s[2] * s[3]);
            let n = bsz * plane;
            let xd = tx.data();
            let gd = val(*gamma).data();
            // Per-channel sums of g and g·x̂ feed dγ/dβ and the
            // batch-statistic coupling terms.
            let mut s_g = vec![E::ZERO; c];
            let mut s_gx = vec![E::ZERO; c];
            for bi in 0..bsz {
                for ch in 0..c {
                    let off = (bi * c + ch) * plane;
                    let (m, inv) = (mean[ch], invstd[ch]);
                    let mut a0 = E::ZERO;
                    let mut a1 = E::ZERO;
                    for idx in off..off + plane {
                        let gv = g[idx];
                        a0 += gv;
                        a1 += gv * (xd[idx] - m) * inv;
                    }
                    s_g[ch] += a0;
                    s_gx[ch] += a1;
                }
            }
            if requires[*x] {
                let dst = acc_buf(slots, requires, grads, *x).unwrap();
                let inv_n = E::ONE / E::from_usize(n);
                for bi in 0..bsz {
                    for ch in 0..c {
                        let off = (bi * c + ch) * plane;
                        let (m, inv, ga) = (mean[ch], invstd[ch], gd[ch]);
                        if *training {
                            let mg = s_g[ch] * inv_n;
                            let mgx = s_gx[ch] * inv_n;
                            for idx in off..off + plane {
                                let xh = (xd[idx] - m) * inv;
                                dst[idx] += ga * inv * (g[idx] - mg - xh * mgx);
                            }
                        } else {
                            for idx in off..off + plane {
                                dst[idx] += g[idx] * ga * inv;
                            }
                        }
                    }
                }
            }
            if let Some(dst) = acc_buf(slots, requires, grads, *gamma) {
                for (d, &v) in dst.iter_mut().zip(&s_gx) {
                    *d += v;
                }
            }
            if let Some(dst) = acc_buf(slots, requires, grads, *beta) {
                for (d, &v) in dst.iter_mut().zip(&s_g) {
                    *d += v;
                }
            }
        }
        Op::Softmax(x) => {
            let ty = val(i);
            let d = *ty.shape().last().unwrap();
            let rows = ty.numel() / d;
            let yd = ty.data();
            if let Some(dst) = acc_buf(slots, requires, grads, *x) {
                for r in 0..rows {
                    let row_y = &yd[r * d..(r + 1) * d];
                    let row_g = &g[r * d..(r + 1) * d];
                    let mut dot = E::ZERO;
                    for i2 in 0..d {
                        dot += row_g[i2] * row_y[i2];
                    }
                    let dst_row = &mut dst[r * d..(r + 1) * d];
                    for i2 in 0..d {
                        dst_row[i2] += row_y[i2] * (row_g[i2] - dot);
                    }
                }
            }
        }
        Op::Gelu(x) => {
            let xd = val(*x).data();
            if let Some(dst) = acc_buf(slots, requires, grads, *x) {
                for (idx, (d, &gv)) in dst.iter_mut().zip(g).enumerate() {
                    *d += gv * xd[idx].gelu_grad();
                }
            }
        }
        Op::Sigmoid(x) => {
            let yd = val(i).data();
            if let Some(dst) = acc_buf(slots, requires, grads, *x) {
                for (idx, (d, &gv)) in dst.iter_mut().zip(g).enumerate() {
                    let y = yd[idx];
                    *d += gv * y * (E::ONE - y);
                }
            }
        }
        Op::Relu(x) => {
            let xd = val(*x).data();
            if let Some(dst) = acc_buf(slots, requires, grads, *x) {
                for (idx, (d, &gv)) in dst.iter_mut().zip(g).enumerate() {
                    if xd[idx] > E::ZERO {
                        *d += gv;
                    }
                }
            }
        }
        Op::Erf(x) => {
            let two_over_sqrt_pi = E::from_f64(2.0 / libm::sqrt(core::f64::consts::PI));
            let xd = val(*x).data();
            if let Some(dst) = acc_buf(slots, requires, grads, *x) {
                for (idx, (d, &gv)) in dst.iter_mut().zip(g).enumerate() {
                    let v = xd[idx];
                    *d += gv * two_over_sqrt_pi * (-(v * v)).exp();
                }
            }
        }
        Op::Concat { xs, axis } => {
            let out_shape = val(i).shape().to_vec();
            let outer = numel_of(&out_shape[..*axis]);
            let inner = numel_of(&out_shape[*axis + 1..]);
            let total_axis = out_shape[*axis];
            let mut src_off = 0usize;
            for &xj in xs {
                let s_axis = val(xj).shape()[*axis];
                let block = s_axis * inner;
                if let Some(dst) = acc_buf(slots, requires, grads, xj) {
                    for o in 0..outer {
                        let src = &g[o * total_axis * inner + src_off..];
                        for (d, &gv) in dst[o * block..(o + 1) * block].iter_mut().zip(&src[..block]) {
                            *d += gv;
                        }
                    }
                }
                src_off += block;
            }
        }
        Op::Slice { x, axis, start } => {
            let sx = val(*x).shape().to_vec();
            let out_shape = val(i).shape().to_vec();
            let outer = numel_of(&sx[..*axis]);
            let inner = numel_of(&sx[*axis + 1..]);
            let len = out_shape[*axis];
            if let Some(dst) = acc_buf(slots, requires, grads, *x) {
                for o in 0..outer {
                    let dst_off = (o * sx[*axis] + start) * inner;
                    let src_off = o * len * inner;
                    for (d, &gv) in dst[dst_off..dst_off + len * inner]
                        .iter_mut()
                        .zip(&g[src_off..src_off + len * inner])
                    {
                        *d += gv;
                    }
                }
            }
        }
        Op::Reshape(x) => {
            if let Some(dst) = acc_buf(slots, requires, grads, *x) {
                for (d, &gv) in dst.iter_mut().zip(g) {
                    *d += gv;
                }
            }
        }
        Op::Permute { x, perm } => {
            let sx = val(*x).shape().to_vec();
            let out_shape = val(i).shape().to_vec();
            let in_strides = strides_of(&sx);
            let out_strides = strides_of(&out_shape);
            if let Some(dst) = acc_buf(slots, requires, grads, *x) {
                for (o, &gv) in g.iter().enumerate() {
                    let mut rem = o;
                    let mut src_idx = 0usize;
                    for (j, &os) in out_strides.iter().enumerate() {
                        let cidx = rem / os;
                        rem %= os;
                        src_idx += cidx * in_strides[perm[j]];
                    }
                    dst[src_idx] += gv;
                }
            }
        }
        Op::Sum(x) => {
            let gv = g[0];
            if let Some(dst) = acc_buf(slots, requires, grads, *x) {
                for d in dst.iter_mut() {
                    *d += gv;
                }
            }
        }
        Op::Mean(x) => {
            let n = val(*x).numel();
            let share = g[0] / E::from_usize(n);
            if let Some(dst) = acc_buf(slots, requires, grads, *x) {
                for d in dst.iter_mut() {
                    *d += share;
                }
            }
        }
        Op::BceWithLogits { x, y } => {
            let (xd, yd) = (val(*x).data(), val(*y).data());
            let n = E::from_usize(xd.len().max(1));
            let gv = g[0];
            if let Some(dst) = acc_buf(slots, requires, grads, *x) {
                for (idx, d) in dst.iter_mut().enumerate() {
                    *d += gv * (xd[idx].sigmoid() - yd[idx]) / n;
                }
            }
            if let Some(dst) = acc_buf(slots, requires, grads, *y) {
                for (idx, d) in dst.iter_mut().enumerate() {
                    *d += gv * (-xd[idx]) / n;
                }
            }
        }
    }
}
