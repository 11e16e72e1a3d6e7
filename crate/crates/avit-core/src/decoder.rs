//! Lightweight segmentation decoder: ASPP context module plus a 3-conv
//! projection head.
//!
//! `decode` runs ASPP over the ViT feature map `V: [B, D, h, w]`, bilinearly
//! upsamples the result to stride 4, optionally concatenates the prompt
//! features `T: [B, 64, H/4, W/4]`, applies the head (two 3×3 convs with
//! ReLU, then a 1×1 conv to a single logit channel), and upsamples ×4 to
//! the input resolution.
//!
//! All spatial (3×3 and dilated) convolutions use replicate edge padding, so
//! spatially constant inputs stay constant through the whole decoder.

use crate::error::Result;
use crate::tensor::{Tape, Var};
use crate::{config_err, shape_err, Scalar};
use alloc::vec::Vec;

/// Channel width of every ASPP branch and of the fused output.
pub const ASPP_CHANNELS: usize = 256;
/// Dilation rates of the three atrous branches.
pub const ASPP_DILATIONS: [usize; 3] = [6, 12, 18];

/// `(weight, bias)` pairs for the five ASPP branches and the fusion conv.
#[derive(Debug, Clone, Copy)]
pub struct AsppVars {
    /// 1×1 conv `D→256`.
    pub b0: (Var, Var),
    /// 3×3 convs `D→256`, dilations [`ASPP_DILATIONS`], padding = dilation.
    pub b1: (Var, Var),
    pub b2: (Var, Var),
    pub b3: (Var, Var),
    /// 1×1 conv `D→256` applied to the global average pool.
    pub pool: (Var, Var),
    /// 1×1 fusion conv `5·256→256`.
    pub fuse: (Var, Var),
}

#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    /// 3×3 conv `(256+64)→256` (or `256→256` without a prompt path).
    pub conv1: (Var, Var),
    /// 3×3 conv `256→256`.
    pub conv2: (Var, Var),
    /// 1×1 conv `256→1` producing logits.
    pub conv3: (Var, Var),
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderVars {
    pub aspp: AsppVars,
    pub head: HeadVars,
}

/// Broadcasts `[B, C, 1, 1]` to `[B, C, h, w]`.
fn broadcast_spatial<E: Scalar>(
    tape: &mut Tape<'_, E>,
    x: Var,
    h: usize,
    w: usize,
) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let bc = s[0] * s[1];
    let flat = tape.reshape(x, &[bc])?;
    let tiled = tape.expand(flat, &[h * w])?; // [h·w, B·C]
    let swapped = tape.permute(tiled, &[1, 0])?; // [B·C, h·w]
    tape.reshape(swapped, &[s[0], s[1], h, w])
}

/// Conv with replicate edge padding (`pad` pixels each side).
fn conv_replicate<E: Scalar>(
    tape: &mut Tape<'_, E>,
    x: Var,
    w: Var,
    b: Var,
    pad: usize,
    dil: usize,
) -> Result<Var> {
    let padded = tape.pad_replicate(x, pad)?;
    tape.conv2d(padded, w, Some(b), 1, 0, dil)
}

/// ASPP: five parallel context branches concatenated and fused to
/// [`ASPP_CHANNELS`] channels; ReLU after every conv. Spatial size is
/// preserved.
pub fn aspp_forward<E: Scalar>(tape: &mut Tape<'_, E>, v: Var, vars: &AsppVars) -> Result<Var> {
    let s = tape.shape(v).to_vec();
    let (h, w) = (s[2], s[3]);
    let mut branches = Vec::with_capacity(5);

    let c0 = tape.conv2d(v, vars.b0.0, Some(vars.b0.1), 1, 0, 1)?;
    branches.push(tape.relu(c0));
    for (&dil, &pair) in ASPP_DILATIONS.iter().zip([&vars.b1, &vars.b2, &vars.b3]) {
        let c = conv_replicate(tape, v, pair.0, pair.1, dil, dil)?;
        branches.push(tape.relu(c));
    }
    let pooled = tape.global_avg_pool(v)?;
    let pc = tape.conv2d(pooled, vars.pool.0, Some(vars.pool.1), 1, 0, 1)?;
    let pa = tape.relu(pc);
    branches.push(broadcast_spatial(tape, pa, h, w)?);

    let stacked = tape.concat(&branches, 1)?;
    let fused = tape.conv2d(stacked, vars.fuse.0, Some(vars.fuse.1), 1, 0, 1)?;
    Ok(tape.relu(fused))
}

/// Full decode: ASPP on `V`, upsample to stride 4 (`up_factor = P/4`),
/// concatenate `T` when present, run the head, and upsample ×4 to the input
/// resolution. Returns logits `[B, 1, H, W]`.
pub fn decode<E: Scalar>(
    tape: &mut Tape<'_, E>,
    v: Var,
    t: Option<Var>,
    vars: &DecoderVars,
    up_factor: usize,
) -> Result<Var> {
    if up_factor == 0 {
        return Err(config_err!("decode: upsample factor must be >= 1"));
    }
    let ctx = aspp_forward(tape, v, &vars.aspp)?;
    let v_hat = if up_factor == 1 {
        ctx
    } else {
        tape.upsample_bilinear(ctx, up_factor)?
    };
    let head_in = match t {
        Some(t) => {
            let (sv, st) = (tape.shape(v_hat).to_vec(), tape.shape(t).to_vec());
            if sv[2] != st[2] || sv[3] != st[3] {
                return Err(shape_err!(
                    "decode: upsampled features are {}x{} but prompt features are {}x{}",
                    sv[2],
                    sv[3],
                    st[2],
                    st[3]
                ));
            }
            tape.concat(&[v_hat, t], 1)?
        }
        None => v_hat,
    };
    let c1 = conv_replicate(tape, head_in, vars.head.conv1.0, vars.head.conv1.1, 1, 1)?;
    let a1 = tape.relu(c1);
    let c2 = conv_replicate(tape, a1, vars.head.conv2.0, vars.head.conv2.1, 1, 1)?;
    let a2 = tape.relu(c2);
    let logits = tape.conv2d(a2, vars.head.conv3.0, Some(vars.head.conv3.1), 1, 0, 1)?;
    tape.upsample_bilinear(logits, 4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::Tensor;
    use alloc::vec::Vec;

    fn rand_conv(rng: &mut Rng, cout: usize, cin: usize, k: usize) -> (Tensor<f64>, Tensor<f64>) {
        let std = libm::sqrt(2.0 / (cin * k * k) as f64);
        let data: Vec<f64> = (0..cout * cin * k * k).map(|_| rng.normal() * std).collect();
        (
            Tensor::from_vec(&[cout, cin, k, k], data).unwrap(),
            Tensor::zeros(&[cout]),
        )
    }

    struct Owned {
        tensors: Vec<(Tensor<f64>, Tensor<f64>)>,
    }

    /// Conv shapes for (aspp b0, b1, b2, b3, pool, fuse, conv1, conv2, conv3).
    fn owned_vars(seed: u64, d: usize, with_prompt: bool, zero_all: bool) -> Owned {
        let mut rng = Rng::seed_from(seed);
        let c = ASPP_CHANNELS;
        let head_in = if with_prompt { c + 64 } else { c };
        let shapes = [
            (c, d, 1),
            (c, d, 3),
            (c, d, 3),
            (c, d, 3),
            (c, d, 1),
            (c, 5 * c, 1),
            (c, head_in, 3),
            (c, c, 3),
            (1, c, 1),
        ];
        let tensors = shapes
            .iter()
            .map(|&(cout, cin, k)| {
                if zero_all {
                    (
                        Tensor::zeros(&[cout, cin, k, k]),
                        Tensor::zeros(&[cout]),
                    )
                } else {
                    rand_conv(&mut rng, cout, cin, k)
                }
            })
            .collect();
        Owned { tensors }
    }

    fn register<'a>(tape: &mut Tape<'a, f64>, o: &'a Owned) -> DecoderVars {
        let mut pairs = o
            .tensors
            .iter()
            .map(|(w, b)| (tape.leaf(w), tape.leaf(b)));
        let mut next = || pairs.next().unwrap();
        DecoderVars {
            aspp: AsppVars {
                b0: next(),
                b1: next(),
                b2: next(),
                b3: next(),
                pool: next(),
                fuse: next(),
            },
            head: HeadVars {
                conv1: next(),
                conv2: next(),
                conv3: next(),
            },
        }
    }

    #[test]
    fn aspp_preserves_shape_and_widens_to_256() {
        let owned = owned_vars(1, 8, true, false);
        let mut rng = Rng::seed_from(2);
        let data: Vec<f64> = (0..8 * 36).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let v = Tensor::from_vec(&[1, 8, 6, 6], data).unwrap();
        let mut tape = Tape::new();
        let vars = register(&mut tape, &owned);
        let vv = tape.leaf(&v);
        let out = aspp_forward(&mut tape, vv, &vars.aspp).unwrap();
        assert_eq!(tape.shape(out), &[1, ASPP_CHANNELS, 6, 6]);
    }

    #[test]
    fn aspp_constant_input_gives_constant_output() {
        let owned = owned_vars(3, 4, true, false);
        let v = Tensor::full(&[1, 4, 7, 7], 0.37f64);
        let mut tape = Tape::new();
        let vars = register(&mut tape, &owned);
        let vv = tape.leaf(&v);
        let out = aspp_forward(&mut tape, vv, &vars.aspp).unwrap();
        let d = tape.data(out);
        for ch in 0..ASPP_CHANNELS {
            let plane = &d[ch * 49..(ch + 1) * 49];
            let first = plane[0];
            for &p in plane {
                assert!(
                    (p - first).abs() < 1e-12,
                    "channel {ch} not constant: {p} vs {first}"
                );
            }
        }
    }

    #[test]
    fn aspp_zero_input_zero_biases_gives_zero() {
        let owned = owned_vars(4, 4, true, false); // random weights, zero biases
        let v = Tensor::zeros(&[1, 4, 6, 6]);
        let mut tape = Tape::new();
        let vars = register(&mut tape, &owned);
        let vv = tape.leaf(&v);
        let out = aspp_forward(&mut tape, vv, &vars.aspp).unwrap();
        assert!(tape.data(out).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn decode_shapes_with_matching_strides() {
        // Toy geometry (patch 4): V and T are both at stride 4, factor 1.
        let owned = owned_vars(5, 8, true, false);
        let mut rng = Rng::seed_from(6);
        let vd: Vec<f64> = (0..8 * 64).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let td: Vec<f64> = (0..64 * 64).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let v = Tensor::from_vec(&[1, 8, 8, 8], vd).unwrap();
        let t = Tensor::from_vec(&[1, 64, 8, 8], td).unwrap();
        let mut tape = Tape::new();
        let vars = register(&mut tape, &owned);
        let vv = tape.leaf(&v);
        let vt = tape.leaf(&t);
        let logits = decode(&mut tape, vv, Some(vt), &vars, 1).unwrap();
        assert_eq!(tape.shape(logits), &[1, 1, 32, 32]);
    }

    #[test]
    fn decode_shapes_with_four_x_upsample() {
        // Patch-16 geometry: V at stride 16, T at stride 4, factor 4.
        let owned = owned_vars(7, 8, true, false);
        let mut rng = Rng::seed_from(8);
        let vd: Vec<f64> = (0..8 * 4).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let td: Vec<f64> = (0..64 * 64).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let v = Tensor::from_vec(&[1, 8, 2, 2], vd).unwrap();
        let t = Tensor::from_vec(&[1, 64, 8, 8], td).unwrap();
        let mut tape = Tape::new();
        let vars = register(&mut tape, &owned);
        let vv = tape.leaf(&v);
        let vt = tape.leaf(&t);
        let logits = decode(&mut tape, vv, Some(vt), &vars, 4).unwrap();
        assert_eq!(tape.shape(logits), &[1, 1, 32, 32]);
    }

    #[test]
    fn decode_without_prompt_path() {
        let owned = owned_vars(9, 8, false, false);
        let mut rng = Rng::seed_from(10);
        let vd: Vec<f64> = (0..8 * 64).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let v = Tensor::from_vec(&[1, 8, 8, 8], vd).unwrap();
        let mut tape = Tape::new();
        let vars = register(&mut tape, &owned);
        let vv = tape.leaf(&v);
        let logits = decode(&mut tape, vv, None, &vars, 1).unwrap();
        assert_eq!(tape.shape(logits), &[1, 1, 32, 32]);
    }

    #[test]
    fn decode_spatial_mismatch_names_both_sizes() {
        let owned = owned_vars(11, 8, true, false);
        let v = Tensor::zeros(&[1, 8, 8, 8]);
        let t = Tensor::zeros(&[1, 64, 6, 6]);
        let mut tape = Tape::new();
        let vars = register(&mut tape, &owned);
        let vv = tape.leaf(&v);
        let vt = tape.leaf(&t);
        let err = decode(&mut tape, vv, Some(vt), &vars, 1).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("8x8") && msg.contains("6x6"), "{msg}");
    }

    #[test]
    fn zero_inputs_and_biases_give_zero_logits() {
        let owned = owned_vars(12, 8, true, false); // zero biases by construction
        let v = Tensor::zeros(&[1, 8, 8, 8]);
        let t = Tensor::zeros(&[1, 64, 8, 8]);
        let mut tape = Tape::new();
        let vars = register(&mut tape, &owned);
        let vv = tape.leaf(&v);
        let vt = tape.leaf(&t);
        let logits = decode(&mut tape, vv, Some(vt), &vars, 1).unwrap();
        assert!(tape.data(logits).iter().all(|&x| x == 0.0));
        // sigmoid of the zero logits is 0.5 everywhere
        let probs = tape.sigmoid(logits);
        assert!(tape.data(probs).iter().all(|&p| p == 0.5));
    }

    #[test]
    fn constant_inputs_give_constant_logit_map() {
        let owned = owned_vars(13, 4, true, false);
        let v = Tensor::full(&[1, 4, 8, 8], 0.21f64);
        let t = Tensor::full(&[1, 64, 8, 8], -0.4f64);
        let mut tape = Tape::new();
        let vars = register(&mut tape, &owned);
        let vv = tape.leaf(&v);
        let vt = tape.leaf(&t);
        let logits = decode(&mut tape, vv, Some(vt), &vars, 1).unwrap();
        let d = tape.data(logits);
        let first = d[0];
        for &x in d {
            assert!((x - first).abs() < 1e-10, "{x} vs {first}");
        }
    }

    #[test]
    fn gradient_flows_to_both_feature_paths() {
        let owned = owned_vars(14, 4, true, false);
        let mut rng = Rng::seed_from(15);
        let vd: Vec<f64> = (0..4 * 16).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let td: Vec<f64> = (0..64 * 16).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let v = Tensor::from_vec(&[1, 4, 4, 4], vd).unwrap().with_grad();
        let t = Tensor::from_vec(&[1, 64, 4, 4], td).unwrap().with_grad();
        let mut owned_grad = Owned {
            tensors: owned.tensors,
        };
        for (w, b) in &mut owned_grad.tensors {
            w.requires_grad = true;
            b.requires_grad = true;
        }
        let mut tape = Tape::new();
        let vars = register(&mut tape, &owned_grad);
        let vv = tape.leaf(&v);
        let vt = tape.leaf(&t);
        let logits = decode(&mut tape, vv, Some(vt), &vars, 1).unwrap();
        let sq = tape.mul(logits, logits).unwrap();
        let loss = tape.mean(sq);
        tape.backward(loss).unwrap();
        let nonzero = |g: &[f64]| g.iter().any(|&x| x != 0.0);
        assert!(nonzero(tape.grad(vv).unwrap()), "no gradient on V");
        assert!(nonzero(tape.grad(vt).unwrap()), "no gradient on T");
        assert!(nonzero(tape.grad(vars.aspp.b0.0).unwrap()), "no gradient on ASPP");
        assert!(
            nonzero(tape.grad(vars.head.conv1.0).unwrap()),
            "no gradient on head conv1"
        );
    }
}
