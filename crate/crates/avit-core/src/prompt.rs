//! Prompt generator: the first stage of a ResNet-34.
//!
//! A small CNN that runs in parallel with the ViT backbone and produces a
//! shallow feature map `T: [B, 64, H/4, W/4]` that the decoder concatenates
//! with the upsampled ViT features. Structure:
//!
//! * stem: 7×7 conv (stride 2, pad 3, 3→64, no bias) → BatchNorm → ReLU →
//!   3×3 max-pool (stride 2, pad 1)
//! * three basic residual blocks, each `ReLU(BN(conv) → ReLU → BN(conv) + x)`
//!   with 3×3 stride-1 convs (64→64, no bias)
//!
//! Exactly 7 convolutions and 7 BatchNorms in total.

use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};
use crate::{config_err, Scalar};
use alloc::vec::Vec;

pub const PROMPT_CHANNELS: usize = 64;
pub const PROMPT_BLOCKS: usize = 3;
/// Total BatchNorm layers: one in the stem plus two per block.
pub const PROMPT_BN_COUNT: usize = 1 + 2 * PROMPT_BLOCKS;

#[derive(Debug, Clone, Copy)]
pub struct BnVars {
    pub gamma: Var,
    pub beta: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub conv1: Var,
    pub bn1: BnVars,
    pub conv2: Var,
    pub bn2: BnVars,
}

#[derive(Debug, Clone)]
pub struct PromptVars {
    /// `[64, 3, 7, 7]`, no bias.
    pub stem_conv: Var,
    pub stem_bn: BnVars,
    pub blocks: Vec<BlockVars>,
}

/// Mutable running statistics for one BatchNorm layer.
pub struct BnState<'b, E: Scalar> {
    pub mean: &'b mut Tensor<E>,
    pub var: &'b mut Tensor<E>,
}

/// Runs the prompt generator. `states` must hold [`PROMPT_BN_COUNT`] entries
/// in order: stem, then `bn1, bn2` for each block.
pub fn prompt_forward<E: Scalar>(
    tape: &mut Tape<'_, E>,
    image: Var,
    vars: &PromptVars,
    states: &mut [BnState<'_, E>],
    training: bool,
) -> Result<Var> {
    if vars.blocks.len() != PROMPT_BLOCKS {
        return Err(config_err!(
            "prompt: expected {} blocks, got {}",
            PROMPT_BLOCKS,
            vars.blocks.len()
        ));
    }
    if states.len() != PROMPT_BN_COUNT {
        return Err(config_err!(
            "prompt: expected {} batch-norm states, got {}",
            PROMPT_BN_COUNT,
            states.len()
        ));
    }
    let mut states = states.iter_mut();
    let mut bn = |tape: &mut Tape<'_, E>, x: Var, v: &BnVars| -> Result<Var> {
        let st = states.next().expect("state count checked above");
        tape.batch_norm(x, v.gamma, v.beta, st.mean, st.var, training)
    };

    let c = tape.conv2d(image, vars.stem_conv, None, 2, 3, 1)?;
    let n = bn(tape, c, &vars.stem_bn)?;
    let a = tape.relu(n);
    let mut x = tape.maxpool2d(a, 3, 2, 1)?;

    for block in &vars.blocks {
        let c1 = tape.conv2d(x, block.conv1, None, 1, 1, 1)?;
        let n1 = bn(tape, c1, &block.bn1)?;
        let a1 = tape.relu(n1);
        let c2 = tape.conv2d(a1, block.conv2, None, 1, 1, 1)?;
        let n2 = bn(tape, c2, &block.bn2)?;
        let summed = tape.add(n2, x)?;
        x = tape.relu(summed);
    }
    Ok(x)
}
