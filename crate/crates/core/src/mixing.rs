//! Pairwise sample interpolation: PatchMix, plus Mixup and CutMix baselines.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{ImageTensor, LabelVector};
use crate::error::{Error, Result};
use crate::masks::PatchMask;
use crate::math;

/// An interpolated training sample.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedSample {
    pub image: ImageTensor,
    /// Soft image-level target `λ·e_i + (1−λ)·e_j`.
    pub image_label: LabelVector,
    /// One hard label per patch, row-major. `None` for mixes whose regions do
    /// not line up with the patch grid (Mixup, CutMix).
    pub patch_labels: Option<Vec<usize>>,
    pub lambda: f64,
}

impl MixedSample {
    /// An unmixed sample: `λ = 1`, every patch labelled `y`.
    pub fn plain(image: ImageTensor, y: usize, class_count: usize, grid: usize) -> Result<Self> {
        Ok(MixedSample {
            image,
            image_label: LabelVector::one_hot(y, class_count)?,
            patch_labels: Some(alloc::vec![y; grid * grid]),
            lambda: 1.0,
        })
    }
}

fn check_same_dims(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::config(alloc::format!(
            "image dimensions differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// `x̃ = M ⊙ x_i + (1−M) ⊙ x_j` with `λ` = the mask's mixing ratio and patch
/// `n` labelled `y_i` where bit `n` is set, `y_j` otherwise.
pub fn patchmix(
    x_i: &ImageTensor,
    y_i: usize,
    x_j: &ImageTensor,
    y_j: usize,
    mask: &PatchMask,
    class_count: usize,
) -> Result<MixedSample> {
    check_same_dims(x_i, x_j)?;
    let (w, h, ch) = x_i.dims();
    let pixels = mask.expand(w, h)?;
    let lambda = mask.mixing_ratio();
    let image_label = LabelVector::mixed(y_i, y_j, lambda, class_count)?;

    let mut image = x_j.clone();
    let out = image.data_mut();
    let src = x_i.data();
    for (p, &bit) in pixels.bits().iter().enumerate() {
        if bit {
            out[p * ch..(p + 1) * ch].copy_from_slice(&src[p * ch..(p + 1) * ch]);
        }
    }
    let patch_labels = mask.bits().iter().map(|&b| if b { y_i } else { y_j }).collect();
    Ok(MixedSample { image, image_label, patch_labels: Some(patch_labels), lambda })
}

/// Convex blend `λ·x_i + (1−λ)·x_j`.
pub fn mixup(
    x_i: &ImageTensor,
    y_i: usize,
    x_j: &ImageTensor,
    y_j: usize,
    lambda: f64,
    class_count: usize,
) -> Result<MixedSample> {
    check_same_dims(x_i, x_j)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::config(alloc::format!("mixup ratio {lambda} outside [0, 1]")));
    }
    let image_label = LabelVector::mixed(y_i, y_j, lambda, class_count)?;
    let mut image = x_i.clone();
    for (o, &b) in image.data_mut().iter_mut().zip(x_j.data()) {
        *o = (lambda * f64::from(*o) + (1.0 - lambda) * f64::from(b)) as f32;
    }
    Ok(MixedSample { image, image_label, patch_labels: None, lambda })
}

/// Top-left corner `(col, row)` of a CutMix rectangle. The centre is drawn
/// from a Gaussian at the image centre with standard deviation a quarter of
/// each dimension, then clamped so the rectangle stays inside the image.
pub fn cutmix_region<R: Rng + ?Sized>(
    width: usize,
    height: usize,
    region_w: usize,
    region_h: usize,
    rng: &mut R,
) -> Result<(usize, usize)> {
    if region_w > width || region_h > height {
        return Err(Error::config(alloc::format!(
            "cut region {region_w}x{region_h} larger than image {width}x{height}"
        )));
    }
    let mut axis = |extent: usize, region: usize| {
        let mean = extent as f64 / 2.0;
        let centre = Normal::new(mean, extent as f64 / 4.0).expect("positive std").sample(rng);
        let half = region as f64 / 2.0;
        let centre = centre.clamp(half, extent as f64 - half);
        let start = math::round(centre - half).clamp(0.0, (extent - region) as f64);
        start as usize
    };
    let x0 = axis(width, region_w);
    let y0 = axis(height, region_h);
    Ok((x0, y0))
}

/// Pastes a `region_w×region_h` rectangle of `x_j` into `x_i`;
/// `λ = 1 − area/(W·H)`.
#[allow(clippy::too_many_arguments)]
pub fn cutmix<R: Rng + ?Sized>(
    x_i: &ImageTensor,
    y_i: usize,
    x_j: &ImageTensor,
    y_j: usize,
    rng: &mut R,
    region_w: usize,
    region_h: usize,
    class_count: usize,
) -> Result<MixedSample> {
    check_same_dims(x_i, x_j)?;
    let (w, h, ch) = x_i.dims();
    let (x0, y0) = cutmix_region(w, h, region_w, region_h, rng)?;
    let lambda = 1.0 - (region_w * region_h) as f64 / (w * h) as f64;
    let image_label = LabelVector::mixed(y_i, y_j, lambda, class_count)?;

    let mut image = x_i.clone();
    let out = image.data_mut();
    let src = x_j.data();
    for r in y0..y0 + region_h {
        let start = (r * w + x0) * ch;
        let end = start + region_w * ch;
        out[start..end].copy_from_slice(&src[start..end]);
    }
    Ok(MixedSample { image, image_label, patch_labels: None, lambda })
}
