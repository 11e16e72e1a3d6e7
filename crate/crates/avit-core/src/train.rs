//! Segmentation training: losses, the AdamW optimizer, the stepped learning
//! rate schedule, and a deterministic epoch loop with best-checkpoint
//! selection on validation Dice.

use crate::augment;
use crate::data::{self, Sample};
use crate::error::Result;
use crate::metrics::{self, SegMetrics};
use crate::model::{Model, ParamSpec};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};
use crate::{config_err, contract_err, Scalar};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// Domain tags separating the RNG streams drawn from one global seed.
const STREAM_SHUFFLE: u64 = 1;
const STREAM_AUGMENT: u64 = 2;

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Soft Dice loss over the whole batch, with a smoothing term of 1 in both
/// numerator and denominator:
/// `1 - (2·Σ σ(x)·m + 1) / (Σ σ(x) + Σ m + 1)`.
///
/// All sums run jointly over every element of the batch, so one mini-batch
/// contributes a single Dice term rather than a mean of per-sample terms.
pub fn dice_loss<E: Scalar>(tape: &mut Tape<'_, E>, logits: Var, mask: Var) -> Result<Var> {
    if tape.shape(logits) != tape.shape(mask) {
        return Err(crate::shape_err!(
            "dice_loss: logits {} vs mask {}",
            crate::error::fmt_shape(tape.shape(logits)),
            crate::error::fmt_shape(tape.shape(mask))
        ));
    }
    let prob = tape.sigmoid(logits);
    let inter = tape.mul(prob, mask)?;
    let s_inter = tape.sum(inter);
    let s_prob = tape.sum(prob);
    let s_mask = tape.sum(mask);
    let num = tape.affine(s_inter, E::from_f64(2.0), E::from_f64(1.0));
    let den_sum = tape.add(s_prob, s_mask)?;
    let den = tape.affine(den_sum, E::from_f64(1.0), E::from_f64(1.0));
    let ratio = tape.div(num, den)?;
    Ok(tape.affine(ratio, E::from_f64(-1.0), E::from_f64(1.0)))
}

/// Mean binary cross-entropy on logits (numerically stable softplus form).
pub fn bce_loss<E: Scalar>(tape: &mut Tape<'_, E>, logits: Var, mask: Var) -> Result<Var> {
    tape.bce_with_logits_mean(logits, mask)
}

/// Equal-weight combination `0.5·Dice + 0.5·BCE`.
pub fn combined_loss<E: Scalar>(tape: &mut Tape<'_, E>, logits: Var, mask: Var) -> Result<Var> {
    let dice = dice_loss(tape, logits, mask)?;
    let bce = bce_loss(tape, logits, mask)?;
    let half_dice = tape.scale(dice, E::from_f64(0.5));
    let half_bce = tape.scale(bce, E::from_f64(0.5));
    tape.add(half_dice, half_bce)
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// AdamW with decoupled weight decay.
///
/// First/second moments are allocated only for trainable parameters; frozen
/// parameters are never read or written by [`AdamW::step`]. Weight decay is
/// applied multiplicatively (`p ← p·(1 − lr·wd)`) and only to parameters whose
/// spec has `decay = true`.
pub struct AdamW<E: Scalar> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Option<Vec<E>>>,
    v: Vec<Option<Vec<E>>>,
}

impl<E: Scalar> AdamW<E> {
    /// Standard hyperparameters: β = (0.9, 0.999), ε = 1e-8, decay 0.01.
    pub fn new(specs: &[ParamSpec]) -> Self {
        Self::with_decay(specs, 0.01)
    }

    pub fn with_decay(specs: &[ParamSpec], weight_decay: f64) -> Self {
        let m = specs
            .iter()
            .map(|s| s.trainable.then(|| vec![E::from_f64(0.0); s.numel()]))
            .collect::<Vec<_>>();
        let v = m.clone();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m,
            v,
        }
    }

    /// Number of update steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one bias-corrected update at learning rate `lr`.
    ///
    /// `grads` is aligned with `params`/`specs`; every trainable parameter
    /// must have a gradient (a missing one is a contract error), and frozen
    /// parameters are skipped whether or not a gradient is present.
    pub fn step(
        &mut self,
        params: &mut [Tensor<E>],
        specs: &[ParamSpec],
        grads: &[Option<Vec<E>>],
        lr: f64,
    ) -> Result<()> {
        if params.len() != specs.len() || grads.len() != specs.len() || self.m.len() != specs.len()
        {
            return Err(contract_err!(
                "adamw: params/specs/grads/moments disagree in length ({}/{}/{}/{})",
                params.len(),
                specs.len(),
                grads.len(),
                self.m.len()
            ));
        }
        self.t += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for (i, spec) in specs.iter().enumerate() {
            if !spec.trainable {
                continue;
            }
            let g = grads[i].as_ref().ok_or_else(|| {
                contract_err!("adamw: missing gradient for trainable parameter `{}`", spec.name)
            })?;
            let p = params[i].data_mut();
            if g.len() != p.len() {
                return Err(contract_err!(
                    "adamw: gradient for `{}` has {} elements, parameter has {}",
                    spec.name,
                    g.len(),
                    p.len()
                ));
            }
            let m = self.m[i].as_mut().expect("trainable moments allocated");
            let v = self.v[i].as_mut().expect("trainable moments allocated");
            let keep = if spec.decay {
                1.0 - lr * self.weight_decay
            } else {
                1.0
            };
            for j in 0..p.len() {
                let gj = g[j].to_f64();
                let mj = self.beta1 * m[j].to_f64() + (1.0 - self.beta1) * gj;
                let vj = self.beta2 * v[j].to_f64() + (1.0 - self.beta2) * gj * gj;
                m[j] = E::from_f64(mj);
                v[j] = E::from_f64(vj);
                let update = (mj / bc1) / (libm::sqrt(vj / bc2) + self.eps);
                p[j] = E::from_f64(p[j].to_f64() * keep - lr * update);
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Schedule and run configuration
// ---------------------------------------------------------------------------

/// Training hyperparameters. Defaults match the reference recipe: 200 epochs,
/// batch 16, initial learning rate 1e-4 halved every 50 epochs, augmentation
/// on, weight decay 0.01.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_step: usize,
    pub lr_gamma: f64,
    pub weight_decay: f64,
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 16,
            lr0: 1e-4,
            lr_step: 50,
            lr_gamma: 0.5,
            weight_decay: 0.01,
            augment: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(config_err!("train: epochs must be positive"));
        }
        if self.batch_size == 0 {
            return Err(config_err!("train: batch_size must be positive"));
        }
        if self.lr_step == 0 {
            return Err(config_err!("train: lr_step must be positive"));
        }
        if !(self.lr0 > 0.0) || !(self.lr_gamma > 0.0) {
            return Err(config_err!("train: lr0 and lr_gamma must be positive"));
        }
        Ok(())
    }
}

/// Stepped schedule: `lr0 · gamma^⌊epoch / step⌋`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * libm::pow(cfg.lr_gamma, (epoch / cfg.lr_step) as f64)
}

// ---------------------------------------------------------------------------
// Epoch loop
// ---------------------------------------------------------------------------

/// One line of the training report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_dice: f64,
    pub val_iou: f64,
}

/// Outcome of a full run: the per-epoch curve plus a snapshot of the model
/// (parameters and BN buffers) at the epoch with the best validation Dice.
pub struct TrainReport<E: Scalar> {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_dice: f64,
    pub best_state: Vec<(String, Tensor<E>)>,
}

/// Mean validation metrics together with the per-sample rows behind them.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub mean: SegMetrics,
    pub per_sample: Vec<SegMetrics>,
}

/// Eval-mode metrics over a dataset, processed in mini-batches.
pub fn evaluate<E: Scalar>(
    model: &mut Model<E>,
    data: &[Sample<E>],
    batch_size: usize,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(config_err!("evaluate: dataset is empty"));
    }
    if batch_size == 0 {
        return Err(config_err!("evaluate: batch_size must be positive"));
    }
    let mut rows = Vec::with_capacity(data.len());
    for chunk in data.chunks(batch_size) {
        let refs: Vec<&Sample<E>> = chunk.iter().collect();
        let (images, masks) = data::stack(&refs)?;
        let logits = model.infer_logits(&images)?;
        rows.extend(metrics::per_sample(&logits, &masks)?);
    }
    Ok(EvalReport {
        mean: metrics::mean(&rows),
        per_sample: rows,
    })
}

/// Runs the full training loop.
///
/// Each epoch visits the training set once in a seeded shuffled order, in
/// mini-batches of `cfg.batch_size`. Per-sample augmentation draws from a
/// stream keyed by `(seed, epoch, sample index)`, so a run is a pure function
/// of its inputs. After each epoch the model is scored on `val` in eval mode;
/// the snapshot with the highest validation Dice (earliest epoch on ties) is
/// returned alongside the per-epoch records.
pub fn train_loop<E: Scalar>(
    model: &mut Model<E>,
    train: &[Sample<E>],
    val: &[Sample<E>],
    cfg: &TrainConfig,
) -> Result<TrainReport<E>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(config_err!("train: training dataset is empty"));
    }
    if val.is_empty() {
        return Err(config_err!("train: validation dataset is empty"));
    }

    let mut opt = AdamW::with_decay(model.specs(), cfg.weight_decay);
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best_epoch = 0usize;
    let mut best_val_dice = f64::NEG_INFINITY;
    let mut best_state: Vec<(String, Tensor<E>)> = Vec::new();

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);

        let mut order: Vec<usize> = (0..train.len()).collect();
        Rng::derive_indexed(cfg.seed, &[STREAM_SHUFFLE, epoch as u64]).shuffle(&mut order);

        let mut loss_sum = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let batch_samples: Vec<Sample<E>> = batch
                .iter()
                .map(|&idx| {
                    if cfg.augment {
                        let mut rng = Rng::derive_indexed(
                            cfg.seed,
                            &[STREAM_AUGMENT, epoch as u64, idx as u64],
                        );
                        let params = augment::sample(&mut rng);
                        augment::apply(&train[idx], &params, &mut rng)
                    } else {
                        train[idx].clone()
                    }
                })
                .collect();
            let refs: Vec<&Sample<E>> = batch_samples.iter().collect();
            let (images, masks) = data::stack(&refs)?;

            let mut tape = Tape::new();
            let out = model.forward_on(&mut tape, &images, true)?;
            let masks_v = tape.constant(masks);
            let loss = combined_loss(&mut tape, out.logits, masks_v)?;
            loss_sum += tape.data(loss)[0].to_f64() * batch.len() as f64;
            tape.backward(loss)?;
            let grads: Vec<Option<Vec<E>>> = out
                .param_vars
                .iter()
                .map(|&v| tape.take_grad(v))
                .collect();
            drop(tape);

            let (params, specs) = model.params_and_specs_mut();
            opt.step(params, specs, &grads, lr)?;
        }
        let train_loss = loss_sum / train.len() as f64;

        let eval = evaluate(model, val, cfg.batch_size)?;
        records.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_dice: eval.mean.dice,
            val_iou: eval.mean.iou,
        });
        if eval.mean.dice > best_val_dice {
            best_val_dice = eval.mean.dice;
            best_epoch = epoch;
            best_state = model
                .tensor_entries()
                .into_iter()
                .map(|(name, t)| (name, t.clone()))
                .collect();
        }
    }

    Ok(TrainReport {
        records,
        best_epoch,
        best_val_dice,
        best_state,
    })
}
