//! Finite-difference verification of tape gradients.
//!
//! Analytic gradients from [`Tape::backward`] are compared against central
//! differences `(f(x+h) − f(x−h)) / 2h` in `f64`. The reported figure for a
//! tensor element with analytic gradient `a` and numeric estimate `n` is
//! `|a − n| / max(1, |a|)`, and a check returns the worst element.

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};
use crate::{config_err, contract_err};
use alloc::vec;
use alloc::vec::Vec;

/// Step size used by the per-op suite.
pub const OP_H: f64 = 1e-4;
/// Relative-error tolerance for the per-op suite.
pub const OP_TOL: f64 = 1e-4;

/// Result row of [`op_suite`].
#[derive(Debug, Clone)]
pub struct OpCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
}

fn eval_loss<F>(f: &mut F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: FnMut(&mut Tape<'_, f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let loss = f(&mut tape, &vars)?;
    if tape.numel(loss) != 1 {
        return Err(contract_err!("finite-diff: loss must be scalar"));
    }
    Ok(tape.data(loss)[0])
}

/// Checks every element of every input. `f` must build a scalar loss from
/// the given leaves and be deterministic in them.
pub fn finite_diff_check<F>(mut f: F, inputs: &mut [Tensor<f64>], h: f64) -> Result<f64>
where
    F: FnMut(&mut Tape<'_, f64>, &[Var]) -> Result<Var>,
{
    let saved: Vec<bool> = inputs.iter().map(|t| t.requires_grad).collect();
    let analytic = analytic_grads(&mut f, inputs)?;
    let mut worst = 0.0f64;
    for ti in 0..inputs.len() {
        for ei in 0..inputs[ti].numel() {
            let rel = probe(&mut f, inputs, &analytic, ti, ei, h)?;
            worst = worst.max(rel);
        }
    }
    for (t, flag) in inputs.iter_mut().zip(saved) {
        t.requires_grad = flag;
    }
    Ok(worst)
}

/// Like [`finite_diff_check`] but probes only `per_tensor` seeded-random
/// elements of each input — for large parameter sets.
pub fn finite_diff_check_sampled<F>(
    mut f: F,
    inputs: &mut [Tensor<f64>],
    h: f64,
    per_tensor: usize,
    seed: u64,
) -> Result<f64>
where
    F: FnMut(&mut Tape<'_, f64>, &[Var]) -> Result<Var>,
{
    let saved: Vec<bool> = inputs.iter().map(|t| t.requires_grad).collect();
    let analytic = analytic_grads(&mut f, inputs)?;
    let mut rng = Rng::seed_from(seed);
    let mut worst = 0.0f64;
    for ti in 0..inputs.len() {
        let n = inputs[ti].numel();
        for _ in 0..per_tensor.min(n) {
            let ei = rng.below(n);
            let rel = probe(&mut f, inputs, &analytic, ti, ei, h)?;
            worst = worst.max(rel);
        }
    }
    for (t, flag) in inputs.iter_mut().zip(saved) {
        t.requires_grad = flag;
    }
    Ok(worst)
}

fn analytic_grads<F>(f: &mut F, inputs: &mut [Tensor<f64>]) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&mut Tape<'_, f64>, &[Var]) -> Result<Var>,
{
    for t in inputs.iter_mut() {
        t.requires_grad = true;
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let grads = vars
        .iter()
        .zip(inputs.iter())
        .map(|(&v, t)| {
            tape.grad(v)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();
    drop(tape);
    // Numeric probes don't need gradient bookkeeping.
    for t in inputs.iter_mut() {
        t.requires_grad = false;
    }
    Ok(grads)
}

fn probe<F>(
    f: &mut F,
    inputs: &mut [Tensor<f64>],
    analytic: &[Vec<f64>],
    ti: usize,
    ei: usize,
    h: f64,
) -> Result<f64>
where
    F: FnMut(&mut Tape<'_, f64>, &[Var]) -> Result<Var>,
{
    let orig = inputs[ti].data()[ei];
    inputs[ti].data_mut()[ei] = orig + h;
    let lp = eval_loss(f, inputs)?;
    inputs[ti].data_mut()[ei] = orig - h;
    let lm = eval_loss(f, inputs)?;
    inputs[ti].data_mut()[ei] = orig;
    let numeric = (lp - lm) / (2.0 * h);
    let a = analytic[ti][ei];
    Ok((a - numeric).abs() / a.abs().max(1.0))
}

fn rand_tensor(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = crate::tensor::numel_of(shape);
    let data: Vec<f64> = (0..n).map(|_| rng.uniform_in(lo, hi)).collect();
    Tensor::from_vec(shape, data).expect("rand_tensor shape")
}

/// Values bounded away from zero (for ReLU kinks and divisions):
/// magnitude in `[0.1, 1)`, random sign.
fn rand_tensor_away_from_zero(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n = crate::tensor::numel_of(shape);
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let m = rng.uniform_in(0.1, 1.0);
            if rng.bernoulli(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data).expect("rand_tensor shape")
}

/// Pairwise-distinct values (keeps max-pool argmaxes stable under ±h).
fn distinct_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n = crate::tensor::numel_of(shape);
    let mut vals: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut vals);
    let data: Vec<f64> = vals.into_iter().map(|v| v as f64 * 0.05 - 0.4).collect();
    Tensor::from_vec(shape, data).expect("distinct_tensor shape")
}

/// Runs finite-difference checks for every differentiable tape op, using
/// `trials` seeded random inputs per op, and returns the worst relative
/// error seen for each.
pub fn op_suite(trials: usize, h: f64, seed: u64) -> Result<Vec<OpCheck>> {
    if trials == 0 {
        return Err(config_err!("op_suite: trials must be >= 1"));
    }
    let mut out = Vec::new();
    let mut push = |name: &'static str, err: f64| {
        out.push(OpCheck {
            name,
            max_rel_err: err,
        })
    };

    // To decorrelate per-op streams, each op derives its own generator.
    let stream = |name: &str| Rng::derive(seed, name);

    {
        let mut rng = stream("add");
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let mut inputs = [
                rand_tensor(&mut rng, &[2, 3], -1.0, 1.0),
                rand_tensor(&mut rng, &[2, 3], -1.0, 1.0),
            ];
            let e = finite_diff_check(
                |t, v| {
                    let s = t.add(v[0], v[1])?;
                    let sq = t.mul(s, s)?;
                    Ok(t.sum(sq))
                },
                &mut inputs,
                h,
            )?;
            worst = worst.max(e);
        }
        push("add", worst);
    }
    {
        let mut rng = stream("add_bcast");
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let mut inputs = [
                rand_tensor(&mut rng, &[2, 2, 3], -1.0, 1.0),
                rand_tensor(&mut rng, &[3], -1.0, 1.0),
            ];
            let e = finite_diff_check(
                |t, v| {
                    let s = t.add_bcast(v[0], v[1])?;
                    let sq = t.mul(s, s)?;
                    Ok(t.sum(sq))
                },
                &mut inputs,
                h,
            )?;
            worst = worst.max(e);
        }
        push("add_bcast", worst);
    }
    {
        let mut rng = stream("expand");
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let c = rand_tensor(&mut rng, &[4, 2], -1.0, 1.0);
            let mut inputs = [rand_tensor(&mut rng, &[2], -1.0, 1.0)];
            let e = finite_diff_check(
                |t, v| {
                    let ex = t.expand(v[0], &[4])?;
                    let cv = t.constant(c.clone());
                    let m = t.mul(ex, cv)?;
                    let sq = t.mul(m, m)?;
                    Ok(t.sum(sq))
                },
                &mut inputs,
                h,
            )?;
            worst = worst.max(e);
        }
        push("expand", worst);
    }
    {
        let mut rng = stream("mul");
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let mut inputs = [
                rand_tensor(&mut rng, &[3, 2], -1.0, 1.0),
                rand_tensor(&mut rng, &[3, 2], -1.0, 1.0),
            ];
            let e = finite_diff_check(
                |t, v| {
                    let m = t.mul(v[0], v[1])?;
                    Ok(t.sum(m))
                },
                &mut inputs,
                h,
            )?;
            worst = worst.max(e);
        }
        push("mul", worst);
    }
    {
        let mut rng = stream("div");
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let mut inputs = [
                rand_tensor(&mut rng, &[3, 2], -1.0, 1.0),
                rand_tensor_away_from_zero(&mut rng, &[3, 2]),
            ];
            let e = finite_diff_check(
                |t, v| {
                    let d = t.div(v[0], v[1])?;
                    Ok(t.sum(d))
                },
                &mut inputs,
                h,
            )?;
            worst = worst.max(e);
        }
        push("div", worst);
    }
    {
        let mut rng = stream("affine");
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let mut inputs = [rand_tensor(&mut rng, &[5], -1.0, 1.0)];
            let e = finite_diff_check(
                |t, v| {
                    let a = t.affine(v[0], 1.7, -0.3);
                    let sq = t.mul(a, a)?;
                    Ok(t.sum(sq))
                },
                &mut inputs,
                h,
            )?;
            worst = worst.max(e);
        }
        push("affine", worst);
    }
    {
        let mut rng = stream("matmul");
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let mut inputs = [
                rand_tensor(&mut rng, &[2, 3, 4], -1.0, 1.0),
                rand_tensor(&mut rng, &[2, 4, 2], -1.0, 1.0),
            ];
            let e = finite_diff_check(
                |t, v| {
                    let m = t.matmul(v[0], v[1], false)?;
                    let sq = t.mul(m, m)?;
                    Ok(t.sum(sq))
                },
                &mut inputs,
                h,
            )?;
            worst = worst.max(e);
        }
        push("matmul", worst);
    }
    {
        let mut rng = stream("matmul_t");
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let mut inputs = [
                rand_tensor(&mut rng, &[2, 3, 4], -1.0, 1.0),
                rand_tensor(&mut rng, &[2, 5, 4], -1.0, 1.0),
            ];
            let e = finite_diff_check(
                |t, v| {
                    let m = t.matmul(v[0], v[1], true)?;
                    let sq = t.mul(m, m)?;
                    Ok(t.sum(sq))
                },
                &mut inputs,
                h,
            )?;
            worst = worst.max(e);
        }
        push("matmul_t", worst);
    }
    {
        let mut rng = stream("matmul_bcast");
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let mut inputs = [
                rand_tensor(&mut rng, &[3, 2, 4], -1.0, 1.0),
                rand_tensor(&mut rng, &[4, 3], -1.0, 1.0),
            ];
            let e = finite_diff_check(
                |t, v| {
                    let m = t.matmul(v[0], v[1], false)?;
                    let sq = t.mul(m, m)?;
                    Ok(t.sum(sq))
                },
                &mut inputs,
                h,
            )?;
            worst = worst.max(e);
        }
        push("matmul_bcast", worst);
    }
    {
        let mut rng = stream("linear");
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let mut inputs = [
                rand_tensor(&mut rng, &[2, 3, 4], -1.0, 1.0),
                rand_tensor(&mut rng, &[5, 4], -1.0, 1.0),
                rand_tensor(&mut rng, &[5], -1.0, 1.0),
            ];
            let e = finite_diff_check(
                |t, v| {
                    let y = t.linear(v[0], v[1], Some(v[2]))?;
                    let sq = t.mul(y, y)?;
                    Ok(t.sum(sq))
                },
                &mut inputs,
                h,
            )?;
            worst = worst.max(e);
        }
        push("linear", worst);
    }
    {
        let mut rng = stream("conv2d");
        let mut worst = 0.0f64;
        for trial in 0..trials {
            let (stride, pad, dil) = match trial % 3 {
                0 => (1, 1, 1),
                1 => (2, 1, 1),
                _ => (1, 2, 2),
            };
            let mut inputs = [
                rand_tensor(&mut rng, &[1, 2, 5, 5], -1.0, 1.0),
                rand_tensor(&mut rng, &[3, 2, 3, 3], -1.0, 1.0),
                rand_tensor(&mut rng, &[3], -1.0, 1.0),
            ];
            let e = finite_diff_check(
                |t, v| {
                    let y = t.conv2d(v[0], v[1], Some(v[2]), stride, pad, dil)?;
                    let sq = t.mul(y, y)?;
                    Ok(t.sum(sq))
                },
                &mut inputs,
                h,
            )?;
            worst = worst.max(e);
        }
        push("conv2d", worst);
    }
    {
        let mut rng = stream("maxpool2d");
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let mut inputs = [distinct_tensor(&mut rng, &[1, 2, 6, 6])];
            let e = finite_diff_check(
                |t, v| {
                    let y = t.maxpool2d(v[0], 3, 2, 1)?;
                    let sq = t.mul(y, y)?;
                    Ok(t.sum(sq))
                },
                &mut inputs,
                h,
            )?;
            worst = worst.max(e);
        }
        push("maxpool2d", worst);
    }
    {
        let mut rng = stream("global_avg_pool");
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let mut inputs = [rand_tensor(&mut rng, &[2, 3, 4, 4], -1.0, 1.0)];
            let e = finite_diff_check(
                |t, v| {
                    let y = t.global_avg_pool(v[0])?;
                    let sq = t.mul(y, y)?;
                    Ok(t.sum(sq))
                },
                &mut inputs,
                h,
            )?;
            worst = worst.max(e);
        }
        push("global_avg_pool", worst);
    }
    {
        let mut rng = stream("upsample_bilinear");
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let mut inputs = [rand_tensor(&mut rng, &[1, 2, 3, 3], -1.0, 1.0)];
            let e = finite_diff_check(
                |t, v| {
                    let y = t.upsample_bilinear(v[0], 2)?;
                    let sq = t.mul(y, y)?;
                    Ok(t.sum(sq))
                },
                &mut inputs,
                h,
            )?;
            worst = worst.max(e);
        }
        push("upsample_bilinear", worst);
    }
    {
        let mut rng = stream("pad_replicate");
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let c = rand_tensor(&mut rng, &[1, 2, 7, 7], -1.0, 1.0);
            let mut inputs = [rand_tensor(&mut rng, &[1, 2, 3, 3], -1.0, 1.0)];
            let e = finite_diff_check(
                |t, v| {
                    let y = t.pad_replicate(v[0], 2)?;
                    let cv = t.constant(c.clone());
                    let m = t.mul(y, cv)?;
                    let sq = t.mul(m, m)?;
                    Ok(t.sum(sq))
                },
                &mut inputs,
                h,
            )?;
            worst = worst.max(e);
        }
        push("pad_replicate", worst);
    }
    {
        let mut rng = stream("patch_extract");
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let c = rand_tensor(&mut rng, &[1, 4, 8], -1.0, 1.0);
            let mut inputs = [rand_tensor(&mut rng, &[1, 2, 4, 4], -1.0, 1.0)];
            let e = finite_diff_check(
                |t, v| {
                    let y = t.patch_extract(v[0], 2)?;
                    let cv = t.constant(c.clone());
                    let m = t.mul(y, cv)?;
                    let sq = t.mul(m, m)?;
                    Ok(t.sum(sq))
                },
                &mut inputs,
                h,
            )?;
            worst = worst.max(e);
        }
        push("patch_extract", worst);
    }
    {
        let mut rng = stream("layer_norm");
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let mut inputs = [
                rand_tensor(&mut rng, &[3, 5], -1.0, 1.0),
                rand_tensor(&mut rng, &[5], 0.5, 1.5),
                rand_tensor(&mut rng, &[5], -0.5, 0.5),
            ];
            let e = finite_diff_check(
                |t, v| {
                    let y = t.layer_norm(v[0], v[1], v[2], 1e-6)?;
                    let sq = t.mul(y, y)?;
                    Ok(t.sum(sq))
                },
                &mut inputs,
                h,
            )?;
            worst = worst.max(e);
        }
        push("layer_norm", worst);
    }
    {
        let mut rng = stream("batch_norm_train");
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let mut inputs = [
                rand_tensor(&mut rng, &[2, 3, 2, 2], -1.0, 1.0),
                rand_tensor(&mut rng, &[3], 0.5, 1.5),
                rand_tensor(&mut rng, &[3], -0.5, 0.5),
            ];
            let e = finite_diff_check(
                |t, v| {
                    // Fresh running buffers per call: the loss must not
                    // depend on state mutated by previous evaluations.
                    let mut rm = Tensor::zeros(&[3]);
                    let mut rv = Tensor::full(&[3], 1.0);
                    let y = t.batch_norm(v[0], v[1], v[2], &mut rm, &mut rv, true)?;
                    let sq = t.mul(y, y)?;
                    Ok(t.sum(sq))
                },
                &mut inputs,
                h,
            )?;
            worst = worst.max(e);
        }
        push("batch_norm_train", worst);
    }
    {
        let mut rng = stream("batch_norm_eval");
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let rm0 = rand_tensor(&mut rng, &[3], -0.5, 0.5);
            let rv0 = rand_tensor(&mut rng, &[3], 0.5, 1.5);
            let mut inputs = [
                rand_tensor(&mut rng, &[2, 3, 2, 2], -1.0, 1.0),
                rand_tensor(&mut rng, &[3], 0.5, 1.5),
                rand_tensor(&mut rng, &[3], -0.5, 0.5),
            ];
            let e = finite_diff_check(
                |t, v| {
                    let mut rm = rm0.clone();
                    let mut rv = rv0.clone();
                    let y = t.batch_norm(v[0], v[1], v[2], &mut rm, &mut rv, false)?;
                    let sq = t.mul(y, y)?;
                    Ok(t.sum(sq))
                },
                &mut inputs,
                h,
            )?;
            worst = worst.max(e);
        }
        push("batch_norm_eval", worst);
    }
    {
        let mut rng = stream("softmax");
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let c = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
            let mut inputs = [rand_tensor(&mut rng, &[3, 4], -2.0, 2.0)];
            let e = finite_diff_check(
                |t, v| {
                    let y = t.softmax(v[0])?;
                    let cv = t.constant(c.clone());
                    let m = t.mul(y, cv)?;
                    Ok(t.sum(m))
                },
                &mut inputs,
                h,
            )?;
            worst = worst.max(e);
        }
        push("softmax", worst);
    }
    {
        let mut rng = stream("gelu");
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let mut inputs = [rand_tensor(&mut rng, &[8], -2.0, 2.0)];
            let e = finite_diff_check(
                |t, v| {
                    let y = t.gelu(v[0]);
                    Ok(t.sum(y))
                },
                &mut inputs,
                h,
            )?;
            worst = worst.max(e);
        }
        push("gelu", worst);
    }
    {
        let mut rng = stream("sigmoid");
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let mut inputs = [rand_tensor(&mut rng, &[8], -3.0, 3.0)];
            let e = finite_diff_check(
                |t, v| {
                    let y = t.sigmoid(v[0]);
                    let sq = t.mul(y, y)?;
                    Ok(t.sum(sq))
                },
                &mut inputs,
                h,
            )?;
            worst = worst.max(e);
        }
        push("sigmoid", worst);
    }
    {
        let mut rng = stream("relu");
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let mut inputs = [rand_tensor_away_from_zero(&mut rng, &[10])];
            let e = finite_diff_check(
                |t, v| {
                    let y = t.relu(v[0]);
                    let sq = t.mul(y, y)?;
                    Ok(t.sum(sq))
                },
                &mut inputs,
                h,
            )?;
            worst = worst.max(e);
        }
        push("relu", worst);
    }
    {
        let mut rng = stream("erf");
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let mut inputs = [rand_tensor(&mut rng, &[8], -2.0, 2.0)];
            let e = finite_diff_check(
                |t, v| {
                    let y = t.erf(v[0]);
                    let sq = t.mul(y, y)?;
                    Ok(t.sum(sq))
                },
                &mut inputs,
                h,
            )?;
            worst = worst.max(e);
        }
        push("erf", worst);
    }
    {
        let mut rng = stream("concat_slice");
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let mut inputs = [
                rand_tensor(&mut rng, &[2, 2, 3], -1.0, 1.0),
                rand_tensor(&mut rng, &[2, 3, 3], -1.0, 1.0),
            ];
            let e = finite_diff_check(
                |t, v| {
                    let y = t.concat(&[v[0], v[1]], 1)?;
                    let s = t.slice(y, 1, 1, 3)?;
                    let sq = t.mul(s, s)?;
                    Ok(t.sum(sq))
                },
                &mut inputs,
                h,
            )?;
            worst = worst.max(e);
        }
        push("concat_slice", worst);
    }
    {
        let mut rng = stream("reshape_permute");
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let c = rand_tensor(&mut rng, &[4, 3, 2], -1.0, 1.0);
            let mut inputs = [rand_tensor(&mut rng, &[2, 3, 4], -1.0, 1.0)];
            let e = finite_diff_check(
                |t, v| {
                    let p = t.permute(v[0], &[2, 1, 0])?;
                    let r = t.reshape(p, &[4, 3, 2])?;
                    let cv = t.constant(c.clone());
                    let m = t.mul(r, cv)?;
                    let sq = t.mul(m, m)?;
                    Ok(t.sum(sq))
                },
                &mut inputs,
                h,
            )?;
            worst = worst.max(e);
        }
        push("reshape_permute", worst);
    }
    {
        let mut rng = stream("mean");
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let mut inputs = [rand_tensor(&mut rng, &[3, 3], -1.0, 1.0)];
            let e = finite_diff_check(
                |t, v| {
                    let sq = t.mul(v[0], v[0])?;
                    Ok(t.mean(sq))
                },
                &mut inputs,
                h,
            )?;
            worst = worst.max(e);
        }
        push("mean", worst);
    }
    {
        let mut rng = stream("bce_with_logits");
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let mut inputs = [
                rand_tensor(&mut rng, &[2, 6], -3.0, 3.0),
                rand_tensor(&mut rng, &[2, 6], 0.05, 0.95),
            ];
            let e = finite_diff_check(
                |t, v| t.bce_with_logits_mean(v[0], v[1]),
                &mut inputs,
                h,
            )?;
            worst = worst.max(e);
        }
        push("bce_with_logits", worst);
    }

    Ok(out)
}
