//! Plain ViT encoder with optional residual adapters.
//!
//! The backbone splits the image into non-overlapping patches, projects
//! them to `D`-dimensional embeddings, prepends a learnable class token,
//! adds learned position embeddings, and runs `depth` pre-LN transformer
//! layers. The class token is then removed and the tokens are reshaped to a
//! 2-D feature map `V: [B, D, H/P, W/P]`.
//!
//! With adapters enabled, each layer becomes
//! `z' = Adapter(MSA(LN(z))) + z` and `z_out = Adapter(MLP(LN(z'))) + z'`,
//! where `Adapter(u) = GELU(u · W_down) · W_up` with no biases. Since a
//! zero `W_up` makes the adapter output identically zero, a freshly
//! initialized adapted layer is the identity map.

use crate::error::Result;
use crate::tensor::{Tape, Var};
use crate::{config_err, Scalar};
use alloc::vec::Vec;

/// LayerNorm epsilon used throughout the backbone.
pub const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneCfg {
    pub image_size: usize,
    pub patch: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    /// Adapter bottleneck ratio `r` (hidden width is `dim / r`).
    pub adapter_ratio: usize,
    pub adapters_enabled: bool,
}

impl BackboneCfg {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.patch == 0 || self.dim == 0 || self.heads == 0 {
            return Err(config_err!("backbone: sizes must be positive"));
        }
        if self.image_size % self.patch != 0 {
            return Err(config_err!(
                "backbone: image size {} not divisible by patch size {}",
                self.image_size,
                self.patch
            ));
        }
        if self.dim % self.heads != 0 {
            return Err(config_err!(
                "backbone: embed dim {} not divisible by {} heads",
                self.dim,
                self.heads
            ));
        }
        if self.adapters_enabled {
            if self.adapter_ratio == 0 || self.dim % self.adapter_ratio != 0 {
                return Err(config_err!(
                    "backbone: embed dim {} not divisible by adapter ratio {}",
                    self.dim,
                    self.adapter_ratio
                ));
            }
        }
        Ok(())
    }

    /// Patch-grid side length `H/P`.
    pub fn grid(&self) -> usize {
        self.image_size / self.patch
    }

    /// Number of patch tokens `N = (H/P)²`.
    pub fn tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

/// Adapter weights: `down: [D, D/r]`, `up: [D/r, D]` (math orientation —
/// the adapter multiplies on the right, `u · W_down`).
#[derive(Debug, Clone, Copy)]
pub struct AdapterVars {
    pub down: Var,
    pub up: Var,
}

/// `(weight, bias)` or `(gamma, beta)` pairs for one transformer layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub ln1: (Var, Var),
    /// Packed projection `[3D, D]` producing Q, K, V in that order.
    pub qkv: (Var, Var),
    pub proj: (Var, Var),
    pub ln2: (Var, Var),
    pub fc1: (Var, Var),
    pub fc2: (Var, Var),
    pub adapter_msa: Option<AdapterVars>,
    pub adapter_mlp: Option<AdapterVars>,
}

#[derive(Debug, Clone)]
pub struct BackboneVars {
    /// Patch projection: weight `[D, 3P²]`, bias `[D]`.
    pub patch_embed: (Var, Var),
    /// `[1, D]`.
    pub class_token: Var,
    /// `[N+1, D]`.
    pub pos_embed: Var,
    pub layers: Vec<LayerVars>,
    pub ln_final: (Var, Var),
}

/// Patch tokens: `[B, 3, H, W] → [B, N, D]` (channel-major patch flatten,
/// raster grid order).
pub fn patch_embed_forward<E: Scalar>(
    tape: &mut Tape<'_, E>,
    image: Var,
    weight: Var,
    bias: Var,
    patch: usize,
) -> Result<Var> {
    let patches = tape.patch_extract(image, patch)?;
    tape.linear(patches, weight, Some(bias))
}

/// Prepends the class token and adds position embeddings:
/// `z₀[0] = class + pos[0]`, `z₀[i] = x[i−1] + pos[i]`.
pub fn prepend_and_position<E: Scalar>(
    tape: &mut Tape<'_, E>,
    x: Var,
    class_token: Var,
    pos_embed: Var,
) -> Result<Var> {
    let b = tape.shape(x)[0];
    let cls = tape.expand(class_token, &[b])?; // [B, 1, D]
    let tokens = tape.concat(&[cls, x], 1)?;
    tape.add_bcast(tokens, pos_embed)
}

/// Multi-head self-attention on `[B, S, D]`: per head of width `d = D/heads`,
/// `softmax(QKᵀ/√d)·V`, heads concatenated, then a linear projection.
pub fn msa_forward<E: Scalar>(
    tape: &mut Tape<'_, E>,
    z: Var,
    layer: &LayerVars,
    heads: usize,
) -> Result<Var> {
    let shape = tape.shape(z).to_vec();
    let (b, s, d) = (shape[0], shape[1], shape[2]);
    if d % heads != 0 {
        return Err(config_err!("msa: dim {d} not divisible by {heads} heads"));
    }
    let hd = d / heads;
    let qkv = tape.linear(z, layer.qkv.0, Some(layer.qkv.1))?; // [B, S, 3D]
    let mut split = Vec::with_capacity(3);
    for i in 0..3 {
        let part = tape.slice(qkv, 2, i * d, d)?; // [B, S, D]
        let grouped = tape.reshape(part, &[b, s, heads, hd])?;
        split.push(tape.permute(grouped, &[0, 2, 1, 3])?); // [B, h, S, hd]
    }
    let (q, k, v) = (split[0], split[1], split[2]);
    let scores = tape.matmul(q, k, true)?; // [B, h, S, S]
    let scaled = tape.scale(scores, E::from_f64(1.0 / libm::sqrt(hd as f64)));
    let attn = tape.softmax(scaled)?;
    let ctx = tape.matmul(attn, v, false)?; // [B, h, S, hd]
    let merged = tape.permute(ctx, &[0, 2, 1, 3])?; // [B, S, h, hd]
    let flat = tape.reshape(merged, &[b, s, d])?;
    tape.linear(flat, layer.proj.0, Some(layer.proj.1))
}

/// `GELU(u · W_down) · W_up` — no biases, no internal skip connection.
pub fn adapter_forward<E: Scalar>(
    tape: &mut Tape<'_, E>,
    u: Var,
    adapter: &AdapterVars,
) -> Result<Var> {
    let down = tape.matmul(u, adapter.down, false)?;
    let act = tape.gelu(down);
    tape.matmul(act, adapter.up, false)
}

fn mlp_forward<E: Scalar>(tape: &mut Tape<'_, E>, z: Var, layer: &LayerVars) -> Result<Var> {
    let h = tape.linear(z, layer.fc1.0, Some(layer.fc1.1))?;
    let a = tape.gelu(h);
    tape.linear(a, layer.fc2.0, Some(layer.fc2.1))
}

/// One pre-LN transformer layer, with or without adapters (see module docs).
pub fn transformer_layer_forward<E: Scalar>(
    tape: &mut Tape<'_, E>,
    z_prev: Var,
    layer: &LayerVars,
    heads: usize,
    adapters_enabled: bool,
) -> Result<Var> {
    if adapters_enabled && (layer.adapter_msa.is_none() || layer.adapter_mlp.is_none()) {
        return Err(config_err!(
            "transformer layer: adapters enabled but layer has no adapter weights"
        ));
    }
    let normed = tape.layer_norm(z_prev, layer.ln1.0, layer.ln1.1, LN_EPS)?;
    let mut attn_out = msa_forward(tape, normed, layer, heads)?;
    if adapters_enabled {
        attn_out = adapter_forward(tape, attn_out, layer.adapter_msa.as_ref().unwrap())?;
    }
    let z_mid = tape.add(attn_out, z_prev)?;

    let normed2 = tape.layer_norm(z_mid, layer.ln2.0, layer.ln2.1, LN_EPS)?;
    let mut mlp_out = mlp_forward(tape, normed2, layer)?;
    if adapters_enabled {
        mlp_out = adapter_forward(tape, mlp_out, layer.adapter_mlp.as_ref().unwrap())?;
    }
    tape.add(mlp_out, z_mid)
}

/// Drops the class token and reshapes `[B, N+1, D] → [B, D, g, g]` where
/// `g = √N`, inverting the patch raster order.
pub fn extract_feature_map<E: Scalar>(tape: &mut Tape<'_, E>, z: Var) -> Result<Var> {
    let shape = tape.shape(z).to_vec();
    let (b, s, d) = (shape[0], shape[1], shape[2]);
    let n = s - 1;
    let g = crate::tensor::isqrt(n);
    if g * g != n {
        return Err(config_err!(
            "feature map: token count {n} is not a perfect square"
        ));
    }
    let tokens = tape.slice(z, 1, 1, n)?; // drop class token
    let swapped = tape.permute(tokens, &[0, 2, 1])?; // [B, D, N]
    tape.reshape(swapped, &[b, d, g, g])
}

/// Full backbone: returns `V: [B, D, g, g]` and the per-layer token states
/// `[z₀, z₁, …, z_L]` (before the final LayerNorm).
pub fn forward<E: Scalar>(
    tape: &mut Tape<'_, E>,
    image: Var,
    vars: &BackboneVars,
    cfg: &BackboneCfg,
) -> Result<(Var, Vec<Var>)> {
    cfg.validate()?;
    let x = patch_embed_forward(tape, image, vars.patch_embed.0, vars.patch_embed.1, cfg.patch)?;
    let mut z = prepend_and_position(tape, x, vars.class_token, vars.pos_embed)?;
    let mut states = Vec::with_capacity(cfg.depth + 1);
    states.push(z);
    for layer in &vars.layers {
        z = transformer_layer_forward(tape, z, layer, cfg.heads, cfg.adapters_enabled)?;
        states.push(z);
    }
    let normed = tape.layer_norm(z, vars.ln_final.0, vars.ln_final.1, LN_EPS)?;
    let v = extract_feature_map(tape, normed)?;
    Ok((v, states))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::{Tape, Tensor};
    use alloc::vec;
    use alloc::vec::Vec;

    fn cfg_toy() -> BackboneCfg {
        BackboneCfg {
            image_size: 32,
            patch: 4,
            dim: 32,
            depth: 2,
            heads: 4,
            adapter_ratio: 4,
            adapters_enabled: true,
        }
    }

    #[test]
    fn token_counts_match_formula() {
        let vit_b = BackboneCfg {
            image_size: 224,
            patch: 16,
            dim: 768,
            depth: 12,
            heads: 12,
            adapter_ratio: 4,
            adapters_enabled: true,
        };
        assert_eq!(vit_b.tokens(), 196);
        assert_eq!(vit_b.grid(), 14);
        assert_eq!(cfg_toy().tokens(), 64);
        assert!(vit_b.validate().is_ok());
        let bad = BackboneCfg {
            image_size: 225,
            ..vit_b
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_image_zero_bias_gives_zero_embeddings() {
        let img = Tensor::<f64>::zeros(&[1, 3, 8, 8]);
        let w = Tensor::<f64>::zeros(&[5, 3 * 16]);
        let b = Tensor::<f64>::zeros(&[5]);
        let mut tape = Tape::new();
        let vi = tape.leaf(&img);
        let vw = tape.leaf(&w);
        let vb = tape.leaf(&b);
        let x = patch_embed_forward(&mut tape, vi, vw, vb, 4).unwrap();
        assert_eq!(tape.shape(x), &[1, 4, 5]);
        assert!(tape.data(x).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prepend_and_position_layout() {
        let d = 3;
        let x = Tensor::from_vec(&[1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let cls = Tensor::from_vec(&[1, 3], vec![10.0, 20.0, 30.0]).unwrap();
        let pos = Tensor::from_vec(
            &[3, 3],
            vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
        )
        .unwrap();
        let mut tape = Tape::new();
        let vx = tape.leaf(&x);
        let vc = tape.leaf(&cls);
        let vp = tape.leaf(&pos);
        let z0 = prepend_and_position(&mut tape, vx, vc, vp).unwrap();
        assert_eq!(tape.shape(z0), &[1, 3, d]);
        let got = tape.data(z0);
        // z0[0] = class + pos[0]
        assert_eq!(&got[0..3], &[10.1, 20.2, 30.3]);
        // z0[1] = x[0] + pos[1]
        assert!((got[3] - 1.4).abs() < 1e-12);
        assert!((got[8] - 6.9).abs() < 1e-12);
    }

    /// Builds owned random tensors for a layer and registers them as
    /// constants; returns the vars.
    fn make_layer(
        tape: &mut Tape<'_, f64>,
        rng: &mut Rng,
        d: usize,
        with_adapters: bool,
        r: usize,
    ) -> LayerVars {
        let mut rand = |shape: &[usize], scale: f64| {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| rng.uniform_in(-scale, scale)).collect();
            Tensor::from_vec(shape, data).unwrap()
        };
        let ln1 = (
            Tensor::full(&[d], 1.0),
            Tensor::zeros(&[d]),
        );
        let ln2 = (Tensor::full(&[d], 1.0), Tensor::zeros(&[d]));
        let qkv = (rand(&[3 * d, d], 0.2), rand(&[3 * d], 0.1));
        let proj = (rand(&[d, d], 0.2), rand(&[d], 0.1));
        let fc1 = (rand(&[4 * d, d], 0.2), rand(&[4 * d], 0.1));
        let fc2 = (rand(&[d, 4 * d], 0.2), rand(&[d], 0.1));
        let adapters = if with_adapters {
            let down = rand(&[d, d / r], 0.3);
            let up = rand(&[d / r, d], 0.3);
            let down2 = rand(&[d, d / r], 0.3);
            let up2 = rand(&[d / r, d], 0.3);
            Some((
                AdapterVars {
                    down: tape.constant(down),
                    up: tape.constant(up),
                },
                AdapterVars {
                    down: tape.constant(down2),
                    up: tape.constant(up2),
                },
            ))
        } else {
            None
        };
        LayerVars {
            ln1: (tape.constant(ln1.0), tape.constant(ln1.1)),
            qkv: (tape.constant(qkv.0), tape.constant(qkv.1)),
            proj: (tape.constant(proj.0), tape.constant(proj.1)),
            ln2: (tape.constant(ln2.0), tape.constant(ln2.1)),
            fc1: (tape.constant(fc1.0), tape.constant(fc1.1)),
            fc2: (tape.constant(fc2.0), tape.constant(fc2.1)),
            adapter_msa: adapters.as_ref().map(|a| a.0),
            adapter_mlp: adapters.as_ref().map(|a| a.1),
        }
    }

    #[test]
    fn msa_singleton_sequence_is_projected_value() {
        let mut rng = Rng::seed_from(5);
        let mut tape = Tape::new();
        let layer = make_layer(&mut tape, &mut rng, 4, false, 4);
        let z = Tensor::from_vec(&[1, 1, 4], vec![0.3, -0.2, 0.8, 0.1]).unwrap();
        let vz = tape.constant(z);
        let out = msa_forward(&mut tape, vz, &layer, 2).unwrap();
        // With one token, softmax weight is 1 and output = proj(v).
        let qkv = tape.linear(vz, layer.qkv.0, Some(layer.qkv.1)).unwrap();
        let v_only = tape.slice(qkv, 2, 8, 4).unwrap();
        let expect = tape
            .linear(v_only, layer.proj.0, Some(layer.proj.1))
            .unwrap();
        let (a, b) = (tape.data(out).to_vec(), tape.data(expect).to_vec());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn msa_identical_tokens_give_identical_outputs() {
        let mut rng = Rng::seed_from(6);
        let mut tape = Tape::new();
        let layer = make_layer(&mut tape, &mut rng, 8, false, 4);
        let row: Vec<f64> = (0..8).map(|i| 0.1 * i as f64 - 0.3).collect();
        let mut data = Vec::new();
        for _ in 0..3 {
            data.extend_from_slice(&row);
        }
        let z = Tensor::from_vec(&[1, 3, 8], data).unwrap();
        let vz = tape.constant(z);
        let out = msa_forward(&mut tape, vz, &layer, 2).unwrap();
        let d = tape.data(out);
        for t in 1..3 {
            for i in 0..8 {
                assert!((d[t * 8 + i] - d[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn msa_two_token_hand_case() {
        // One head, d=2, Q=K=V=z via stacked identity qkv, identity proj.
        let mut tape = Tape::new();
        let mut qkv_w = vec![0.0f64; 6 * 2];
        // rows 0..2 -> Q = I, rows 2..4 -> K = I, rows 4..6 -> V = I
        for blk in 0..3 {
            qkv_w[(blk * 2) * 2] = 1.0;
            qkv_w[(blk * 2 + 1) * 2 + 1] = 1.0;
        }
        let layer = LayerVars {
            ln1: (
                tape.constant(Tensor::full(&[2], 1.0)),
                tape.constant(Tensor::zeros(&[2])),
            ),
            qkv: (
                tape.constant(Tensor::from_vec(&[6, 2], qkv_w).unwrap()),
                tape.constant(Tensor::zeros(&[6])),
            ),
            proj: (
                tape.constant(Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap()),
                tape.constant(Tensor::zeros(&[2])),
            ),
            ln2: (
                tape.constant(Tensor::full(&[2], 1.0)),
                tape.constant(Tensor::zeros(&[2])),
            ),
            fc1: (
                tape.constant(Tensor::zeros(&[8, 2])),
                tape.constant(Tensor::zeros(&[8])),
            ),
            fc2: (
                tape.constant(Tensor::zeros(&[2, 8])),
                tape.constant(Tensor::zeros(&[2])),
            ),
            adapter_msa: None,
            adapter_mlp: None,
        };
        let z = Tensor::from_vec(&[1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let vz = tape.constant(z);
        let out = msa_forward(&mut tape, vz, &layer, 1).unwrap();
        // scores/√2 = [[1,0],[0,1]]/√2; per row softmax: p = e^s/(e^s+1) with s=1/√2.
        let s = 1.0 / 2.0f64.sqrt();
        let p = s.exp() / (s.exp() + 1.0);
        // row 0: p·[1,0] + (1−p)·[0,1] = [p, 1−p]; row 1 mirrored.
        let d = tape.data(out);
        assert!((d[0] - p).abs() < 1e-12);
        assert!((d[1] - (1.0 - p)).abs() < 1e-12);
        assert!((d[2] - (1.0 - p)).abs() < 1e-12);
        assert!((d[3] - p).abs() < 1e-12);
    }

    #[test]
    fn plain_layer_with_zero_weights_is_identity() {
        let mut tape = Tape::new();
        let d = 4;
        let zero_pair = |tape: &mut Tape<'_, f64>, s1: &[usize], s2: &[usize]| {
            (
                tape.constant(Tensor::zeros(s1)),
                tape.constant(Tensor::zeros(s2)),
            )
        };
        let layer = LayerVars {
            ln1: zero_pair(&mut tape, &[d], &[d]),
            qkv: zero_pair(&mut tape, &[3 * d, d], &[3 * d]),
            proj: zero_pair(&mut tape, &[d, d], &[d]),
            ln2: zero_pair(&mut tape, &[d], &[d]),
            fc1: zero_pair(&mut tape, &[4 * d, d], &[4 * d]),
            fc2: zero_pair(&mut tape, &[d, 4 * d], &[d]),
            adapter_msa: None,
            adapter_mlp: None,
        };
        let z = Tensor::from_vec(&[1, 3, 4], (0..12).map(|i| i as f64 * 0.25 - 1.0).collect())
            .unwrap();
        let vz = tape.constant(z.clone());
        let out = transformer_layer_forward(&mut tape, vz, &layer, 2, false).unwrap();
        assert_eq!(tape.data(out), z.data());
    }

    #[test]
    fn adapter_formula_and_zero_cases() {
        let mut tape = Tape::new();
        // zero input -> zero output
        let down = tape.constant(Tensor::full(&[4, 2], 0.7));
        let up = tape.constant(Tensor::full(&[2, 4], -0.3));
        let a = AdapterVars { down, up };
        let z = tape.constant(Tensor::zeros(&[1, 2, 4]));
        let out = adapter_forward(&mut tape, z, &a).unwrap();
        assert!(tape.data(out).iter().all(|&v| v == 0.0));
        // W_up = 0 -> zero output for any input
        let up0 = tape.constant(Tensor::zeros(&[2, 4]));
        let a0 = AdapterVars { down, up: up0 };
        let x = tape.constant(Tensor::from_vec(&[1, 1, 4], vec![0.9, -2.0, 3.0, 0.4]).unwrap());
        let out0 = adapter_forward(&mut tape, x, &a0).unwrap();
        assert!(tape.data(out0).iter().all(|&v| v == 0.0));
        // hand case: D=4, r=2, input e0 -> GELU(first row of W_down)·W_up
        let wd = Tensor::from_vec(
            &[4, 2],
            vec![0.5, -1.0, 9.0, 9.0, 9.0, 9.0, 9.0, 9.0],
        )
        .unwrap();
        let wu = Tensor::from_vec(&[2, 4], vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 0.0, 2.0]).unwrap();
        let vd = tape.constant(wd);
        let vu = tape.constant(wu);
        let e0 = tape.constant(Tensor::from_vec(&[1, 1, 4], vec![1.0, 0.0, 0.0, 0.0]).unwrap());
        let h = adapter_forward(&mut tape, e0, &AdapterVars { down: vd, up: vu }).unwrap();
        let g0 = Scalar::gelu(0.5f64);
        let g1 = Scalar::gelu(-1.0f64);
        let want = [
            g0 * 1.0 + g1 * -1.0,
            g0 * 2.0 + g1 * 0.5,
            g0 * 3.0,
            g0 * 4.0 + g1 * 2.0,
        ];
        for (got, w) in tape.data(h).iter().zip(want) {
            assert!((got - w).abs() < 1e-12);
        }
    }

    #[test]
    fn adapted_layer_with_zero_up_is_identity_map() {
        let mut rng = Rng::seed_from(8);
        let mut tape = Tape::new();
        let mut layer = make_layer(&mut tape, &mut rng, 8, true, 4);
        // zero both W_up matrices
        let zero_up = tape.constant(Tensor::zeros(&[2, 8]));
        layer.adapter_msa = Some(AdapterVars {
            down: layer.adapter_msa.unwrap().down,
            up: zero_up,
        });
        layer.adapter_mlp = Some(AdapterVars {
            down: layer.adapter_mlp.unwrap().down,
            up: zero_up,
        });
        let data: Vec<f64> = (0..24).map(|i| (i as f64 * 0.37).sin()).collect();
        let z = Tensor::from_vec(&[1, 3, 8], data).unwrap();
        let vz = tape.constant(z.clone());
        let out = transformer_layer_forward(&mut tape, vz, &layer, 2, true).unwrap();
        assert_eq!(tape.data(out), z.data());
    }

    #[test]
    fn adapters_enabled_without_weights_is_config_error() {
        let mut rng = Rng::seed_from(9);
        let mut tape = Tape::new();
        let layer = make_layer(&mut tape, &mut rng, 8, false, 4);
        let z = tape.constant(Tensor::zeros(&[1, 2, 8]));
        let err = transformer_layer_forward(&mut tape, z, &layer, 2, true).unwrap_err();
        assert!(alloc::format!("{err}").contains("adapter"));
    }

    #[test]
    fn extract_feature_map_inverts_patch_raster() {
        // Identity patch embedding: D = 3·P², weight = I, zero class/pos.
        let p = 2;
        let d = 3 * p * p;
        let mut rng = Rng::seed_from(10);
        let img_data: Vec<f64> = (0..3 * 4 * 4).map(|_| rng.uniform()).collect();
        let img = Tensor::from_vec(&[1, 3, 4, 4], img_data).unwrap();
        let mut eye = vec![0.0; d * d];
        for i in 0..d {
            eye[i * d + i] = 1.0;
        }
        let mut tape = Tape::new();
        let vi = tape.leaf(&img);
        let w = tape.constant(Tensor::from_vec(&[d, d], eye).unwrap());
        let b = tape.constant(Tensor::zeros(&[d]));
        let cls = tape.constant(Tensor::zeros(&[1, d]));
        let pos = tape.constant(Tensor::zeros(&[5, d]));
        let x = patch_embed_forward(&mut tape, vi, w, b, p).unwrap();
        let z0 = prepend_and_position(&mut tape, x, cls, pos).unwrap();
        let v = extract_feature_map(&mut tape, z0).unwrap();
        assert_eq!(tape.shape(v), &[1, d, 2, 2]);
        // V[0, c, ty, tx] must equal patch (ty,tx)'s c-th flattened element.
        let patches = tape.patch_extract(vi, p).unwrap();
        let pd = tape.data(patches).to_vec();
        let vd = tape.data(v).to_vec();
        for ty in 0..2 {
            for tx in 0..2 {
                let t = ty * 2 + tx;
                for c in 0..d {
                    let got = vd[c * 4 + ty * 2 + tx];
                    let want = pd[t * d + c];
                    assert_eq!(got, want, "c={c} t={t}");
                }
            }
        }
    }

    #[test]
    fn msa_is_permutation_equivariant_without_positions() {
        let mut rng = Rng::seed_from(12);
        let mut tape = Tape::new();
        let layer = make_layer(&mut tape, &mut rng, 8, false, 4);
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..8).map(|_| rng.uniform_in(-1.0, 1.0)).collect())
            .collect();
        let fwd = |tape: &mut Tape<'_, f64>, order: [usize; 3]| -> Vec<f64> {
            let mut data = Vec::new();
            for &i in &order {
                data.extend_from_slice(&rows[i]);
            }
            let z = tape.constant(Tensor::from_vec(&[1, 3, 8], data).unwrap());
            let out = msa_forward(tape, z, &layer, 2).unwrap();
            tape.data(out).to_vec()
        };
        let a = fwd(&mut tape, [0, 1, 2]);
        let b = fwd(&mut tape, [2, 0, 1]);
        // output row for token i must be identical wherever the token sits
        for i in 0..8 {
            assert!((a[i] - b[8 + i]).abs() < 1e-12); // token 0
            assert!((a[8 + i] - b[16 + i]).abs() < 1e-12); // token 1
            assert!((a[16 + i] - b[i]).abs() < 1e-12); // token 2
        }
    }

    #[test]
    fn full_backbone_shapes_and_state_count() {
        let cfg = cfg_toy();
        let mut rng = Rng::seed_from(14);
        let mut tape = Tape::new();
        let d = cfg.dim;
        let n = cfg.tokens();
        let mut rand = |shape: &[usize], s: f64| {
            let count: usize = shape.iter().product();
            let data: Vec<f64> = (0..count).map(|_| rng.uniform_in(-s, s)).collect();
            Tensor::from_vec(shape, data).unwrap()
        };
        let patch_w = tape.constant(rand(&[d, 3 * cfg.patch * cfg.patch], 0.1));
        let patch_b = tape.constant(Tensor::zeros(&[d]));
        let cls = tape.constant(rand(&[1, d], 0.1));
        let pos = tape.constant(rand(&[n + 1, d], 0.1));
        let lnf = (
            tape.constant(Tensor::full(&[d], 1.0)),
            tape.constant(Tensor::zeros(&[d])),
        );
        let mut rng2 = Rng::seed_from(15);
        let layers: Vec<LayerVars> = (0..cfg.depth)
            .map(|_| make_layer(&mut tape, &mut rng2, d, true, cfg.adapter_ratio))
            .collect();
        let vars = BackboneVars {
            patch_embed: (patch_w, patch_b),
            class_token: cls,
            pos_embed: pos,
            layers,
            ln_final: lnf,
        };
        let img = tape.constant(rand(&[2, 3, 32, 32], 0.5));
        let (v, states) = forward(&mut tape, img, &vars, &cfg).unwrap();
        assert_eq!(tape.shape(v), &[2, d, 8, 8]);
        assert_eq!(states.len(), cfg.depth + 1);
        assert_eq!(tape.shape(states[0]), &[2, n + 1, d]);
    }
}
