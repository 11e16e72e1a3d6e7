//! Finite-difference validation of the full model's gradients.
//!
//! Complements the primitive-op sweep in the core crate: this one builds a
//! 64-bit toy model, runs the real training loss on a small synthetic batch,
//! and probes randomly chosen coordinates of every trainable tensor with
//! central differences, reporting the worst relative error per parameter
//! group (backbone, adapters, prompt, decoder).

use crate::error::Result;
use crate::synthetic::{self, RawPair};
use avit_core::model::{Model, ModelCfg};
use avit_core::rng::Rng;
use avit_core::tensor::{Tape, Tensor};
use avit_core::train::combined_loss;

/// Central-difference step; matches the primitive-op suite.
pub const FD_STEP: f64 = 1e-5;
/// Pass threshold on the relative error.
pub const FD_TOLERANCE: f64 = 1e-4;

const STREAM_PROBE: u64 = 3;
const STREAM_JITTER: u64 = 6;

/// Worst-case probe result for one parameter group.
#[derive(Debug, Clone)]
pub struct GroupReport {
    pub group: &'static str,
    pub tensors: usize,
    pub probes: usize,
    pub max_rel_err: f64,
}

impl GroupReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < FD_TOLERANCE
    }
}

fn group_of(name: &str) -> &'static str {
    if name.contains(".adapter_") {
        "adapters"
    } else if name.starts_with("backbone.") {
        "backbone"
    } else if name.starts_with("prompt.") {
        "prompt"
    } else {
        "decoder"
    }
}

/// Replaces all-zero trainable weight matrices (adapter up-projections, the
/// zero-initialized final head conv) with small random values. At the pristine
/// initialization those zeros cut the backward chain, so most gradients are
/// identically zero and probing there would verify nothing.
fn jitter_structural_zeros(model: &mut Model<f64>, seed: u64) {
    let mut rng = Rng::derive_indexed(seed, &[STREAM_JITTER]);
    let (params, specs) = model.params_and_specs_mut();
    for (t, s) in params.iter_mut().zip(specs) {
        if !s.trainable || s.shape.len() < 2 {
            continue;
        }
        if t.data().iter().all(|&v| v == 0.0) {
            for v in t.data_mut() {
                *v = rng.uniform_in(-0.05, 0.05);
            }
        }
    }
}

/// Stacks raster pairs into f64 image/mask batch tensors (no resizing; the
/// rasters are generated at the model's input size).
fn raster_batch(pairs: &[RawPair], size: usize) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let b = pairs.len();
    let mut images = Vec::with_capacity(b * 3 * size * size);
    let mut masks = Vec::with_capacity(b * size * size);
    for p in pairs {
        for c in 0..3 {
            images.extend(
                p.image
                    .pixels
                    .chunks_exact(3)
                    .map(|px| px[c] as f64 / 255.0),
            );
        }
        masks.extend(
            p.mask
                .pixels
                .iter()
                .map(|&v| if v >= 128 { 1.0 } else { 0.0 }),
        );
    }
    Ok((
        Tensor::from_vec(&[b, 3, size, size], images)?,
        Tensor::from_vec(&[b, 1, size, size], masks)?,
    ))
}

/// Evaluation-mode combined loss of the current parameters on the batch.
fn eval_loss(model: &mut Model<f64>, images: &Tensor<f64>, masks: &Tensor<f64>) -> Result<f64> {
    let mut tape = Tape::new();
    let out = model.forward_on(&mut tape, images, false)?;
    let mask_var = tape.constant(masks.clone());
    let loss = combined_loss(&mut tape, out.logits, mask_var)?;
    Ok(tape.data(loss)[0])
}

/// Probes `probes_per_tensor` random coordinates of every trainable tensor
/// against the analytic gradient of the evaluation-mode combined loss.
pub fn model_group_errors(
    cfg: &ModelCfg,
    seed: u64,
    probes_per_tensor: usize,
) -> Result<Vec<GroupReport>> {
    cfg.validate()?;
    let mut model = Model::<f64>::build(cfg.clone(), seed)?;
    jitter_structural_zeros(&mut model, seed);
    let pairs = synthetic::generate(2, cfg.image_size, seed, synthetic::Profile::Normal)?;
    let (images, masks) = raster_batch(&pairs, cfg.image_size)?;

    // One analytic backward pass over the whole model.
    let n_params = model.params().len();
    let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(n_params);
    let loss0;
    {
        let mut tape = Tape::new();
        let out = model.forward_on(&mut tape, &images, false)?;
        let mask_var = tape.constant(masks.clone());
        let loss = combined_loss(&mut tape, out.logits, mask_var)?;
        tape.backward(loss)?;
        loss0 = tape.data(loss)[0];
        for i in 0..n_params {
            grads.push(tape.take_grad(out.param_vars[i]));
        }
    }
    if !loss0.is_finite() {
        return Err(crate::input_err!("loss is not finite at the probe point"));
    }

    let mut reports: Vec<GroupReport> = ["backbone", "adapters", "prompt", "decoder"]
        .into_iter()
        .map(|group| GroupReport {
            group,
            tensors: 0,
            probes: 0,
            max_rel_err: 0.0,
        })
        .collect();

    let trainable: Vec<usize> = (0..n_params)
        .filter(|&i| model.specs()[i].trainable)
        .collect();
    for &i in &trainable {
        let name = model.specs()[i].name.clone();
        let group = group_of(&name);
        let analytic = grads[i]
            .as_ref()
            .ok_or_else(|| crate::input_err!("no gradient recorded for `{name}`"))?
            .clone();
        let numel = model.params()[i].numel();
        let mut rng = Rng::derive_indexed(seed, &[STREAM_PROBE, i as u64]);
        let slot = reports
            .iter_mut()
            .position(|r| r.group == group)
            .expect("group table is exhaustive");
        reports[slot].tensors += 1;
        for _ in 0..probes_per_tensor.min(numel) {
            let j = rng.below(numel);
            let orig = model.params()[i].data()[j];
            model.params_mut()[i].data_mut()[j] = orig + FD_STEP;
            let plus = eval_loss(&mut model, &images, &masks)?;
            model.params_mut()[i].data_mut()[j] = orig - FD_STEP;
            let minus = eval_loss(&mut model, &images, &masks)?;
            model.params_mut()[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let rel = (analytic[j] - numeric).abs() / analytic[j].abs().max(1.0);
            let r = &mut reports[slot];
            r.probes += 1;
            if rel > r.max_rel_err {
                r.max_rel_err = rel;
            }
        }
    }
    // Keep only groups that exist in this variant.
    reports.retain(|r| r.tensors > 0);
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use avit_core::model::Variant;

    #[test]
    fn toy_model_groups_pass_with_a_light_probe_budget() {
        let cfg = ModelCfg::toy(Variant::Avit);
        let reports = model_group_errors(&cfg, 11, 1).unwrap();
        let groups: Vec<&str> = reports.iter().map(|r| r.group).collect();
        assert_eq!(groups, ["backbone", "adapters", "prompt", "decoder"]);
        for r in &reports {
            assert!(r.passed(), "{}: max rel err {}", r.group, r.max_rel_err);
            assert!(r.probes >= r.tensors.min(1));
        }
    }

    #[test]
    fn base_variant_has_no_adapter_or_prompt_groups() {
        let cfg = ModelCfg::toy(Variant::Base);
        let reports = model_group_errors(&cfg, 4, 1).unwrap();
        let groups: Vec<&str> = reports.iter().map(|r| r.group).collect();
        assert_eq!(groups, ["backbone", "decoder"]);
        for r in &reports {
            assert!(r.passed(), "{}: max rel err {}", r.group, r.max_rel_err);
        }
    }
}
