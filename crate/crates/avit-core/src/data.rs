//! Sample and mini-batch containers for segmentation data.

use crate::error::{fmt_shape, Result};
use crate::scalar::Scalar;
use crate::shape_err;
use crate::tensor::Tensor;
use alloc::vec::Vec;

/// One image/mask pair. The image is `[3, H, W]` with values in `[0, 1]`;
/// the mask is `[1, H, W]` with values in `{0, 1}`.
#[derive(Debug, Clone)]
pub struct Sample<E: Scalar> {
    pub image: Tensor<E>,
    pub mask: Tensor<E>,
}

impl<E: Scalar> Sample<E> {
    pub fn new(image: Tensor<E>, mask: Tensor<E>) -> Result<Self> {
        let si = image.shape();
        let sm = mask.shape();
        if si.len() != 3 || si[0] != 3 {
            return Err(shape_err!(
                "sample: image must be [3, H, W], got {}",
                fmt_shape(si)
            ));
        }
        if sm.len() != 3 || sm[0] != 1 || sm[1..] != si[1..] {
            return Err(shape_err!(
                "sample: mask {} does not match image {}",
                fmt_shape(sm),
                fmt_shape(si)
            ));
        }
        Ok(Sample { image, mask })
    }

    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }
}

/// Stacks samples (all the same size) into `[B, 3, H, W]` images and
/// `[B, 1, H, W]` masks.
pub fn stack<E: Scalar>(samples: &[&Sample<E>]) -> Result<(Tensor<E>, Tensor<E>)> {
    let first = samples
        .first()
        .ok_or_else(|| shape_err!("stack: empty batch"))?;
    let (h, w) = (first.height(), first.width());
    let b = samples.len();
    let mut images = Vec::with_capacity(b * 3 * h * w);
    let mut masks = Vec::with_capacity(b * h * w);
    for s in samples {
        if s.height() != h || s.width() != w {
            return Err(shape_err!(
                "stack: sample size {}x{} differs from {}x{}",
                s.height(),
                s.width(),
                h,
                w
            ));
        }
        images.extend_from_slice(s.image.data());
        masks.extend_from_slice(s.mask.data());
    }
    Ok((
        Tensor::from_vec(&[b, 3, h, w], images)?,
        Tensor::from_vec(&[b, 1, h, w], masks)?,
    ))
}
