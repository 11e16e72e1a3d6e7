//! Directory-based dataset loading.
//!
//! A dataset directory holds pairs `<id>.ppm` (P6 RGB image) and
//! `<id>_mask.pgm` (P5 mask). Images are scaled to `[0, 1]` and bilinearly
//! resized to the configured square size; masks are binarized at 128 first
//! and then nearest-resized, so they stay strictly binary.

use crate::error::Result;
use crate::input_err;
use crate::netpbm::{self, RawImage};
use avit_core::data::Sample;
use avit_core::tensor::{resize_bilinear, resize_nearest, Tensor};
use std::path::Path;

/// A loaded sample together with its dataset id (the image's file stem).
#[derive(Debug, Clone)]
pub struct NamedSample {
    pub id: String,
    pub sample: Sample<f32>,
}

/// Converts a decoded RGB image + mask pair into a training sample at
/// `image_size`².
pub fn decode_pair(id: &str, image: &RawImage, mask: &RawImage, image_size: usize) -> Result<Sample<f32>> {
    if image.channels != 3 {
        return Err(input_err!("image `{id}` is not RGB (P6)"));
    }
    if mask.channels != 1 {
        return Err(input_err!("mask for `{id}` is not grayscale (P5)"));
    }
    if (mask.height, mask.width) != (image.height, image.width) {
        return Err(input_err!(
            "mask for `{id}` is {}x{} but image is {}x{}",
            mask.width,
            mask.height,
            image.width,
            image.height
        ));
    }
    let (h, w) = (image.height, image.width);

    // Interleaved u8 → planar [3,H,W] floats in [0,1].
    let mut planes = vec![0f32; 3 * h * w];
    for (i, px) in image.pixels.chunks_exact(3).enumerate() {
        for c in 0..3 {
            planes[c * h * w + i] = px[c] as f32 / 255.0;
        }
    }
    // Binarize at 128 before any resampling.
    let mask_plane: Vec<f32> = mask
        .pixels
        .iter()
        .map(|&v| if v >= 128 { 1.0 } else { 0.0 })
        .collect();

    let s = image_size;
    let (planes, mask_plane) = if (h, w) == (s, s) {
        (planes, mask_plane)
    } else {
        (
            resize_bilinear(&planes, 3, h, w, s, s),
            resize_nearest(&mask_plane, 1, h, w, s, s),
        )
    };
    Ok(Sample::new(
        Tensor::from_vec(&[3, s, s], planes)?,
        Tensor::from_vec(&[1, s, s], mask_plane)?,
    )?)
}

/// Loads every `<id>.ppm` / `<id>_mask.pgm` pair under `dir`, sorted by id.
/// An image without its mask is an input error; an empty directory is an
/// empty dataset (callers that need data error out themselves).
pub fn load_dataset(dir: &Path, image_size: usize) -> Result<Vec<NamedSample>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(stem) = name.strip_suffix(".ppm") {
            ids.push(stem.to_string());
        }
    }
    ids.sort();

    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let image_path = dir.join(format!("{id}.ppm"));
        let mask_path = dir.join(format!("{id}_mask.pgm"));
        if !mask_path.exists() {
            return Err(input_err!("missing mask for image `{id}`"));
        }
        let image = netpbm::read(&image_path)?;
        let mask = netpbm::read(&mask_path)?;
        let sample = decode_pair(&id, &image, &mask, image_size)?;
        out.push(NamedSample { id, sample });
    }
    Ok(out)
}

/// Strips the ids, keeping the samples (training APIs take plain samples).
pub fn plain(samples: &[NamedSample]) -> Vec<Sample<f32>> {
    samples.iter().map(|s| s.sample.clone()).collect()
}
