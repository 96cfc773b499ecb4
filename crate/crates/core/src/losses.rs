//! Image-level, patch-level and combined cross-entropy losses.

use alloc::vec::Vec;

use crate::data::LabelVector;
use crate::error::{Error, Result};
use crate::math;

/// Raw model outputs for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutputs {
    /// `P²×C` logits, row-major patch order matching [`crate::PatchMask`].
    pub patch_logits: Vec<f64>,
    /// `C` logits from the global head.
    pub image_logits: Vec<f64>,
}

impl ModelOutputs {
    pub fn class_count(&self) -> usize {
        self.image_logits.len()
    }

    pub fn patch_count(&self) -> usize {
        self.patch_logits.len() / self.image_logits.len().max(1)
    }

    pub fn patch_row(&self, n: usize) -> &[f64] {
        let c = self.class_count();
        &self.patch_logits[n * c..(n + 1) * c]
    }
}

/// Which terms of the combined loss are active.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LossMode {
    #[default]
    Both,
    ImageOnly,
    PatchOnly,
}

impl LossMode {
    pub fn uses_image(self) -> bool {
        matches!(self, LossMode::Both | LossMode::ImageOnly)
    }

    pub fn uses_patches(self) -> bool {
        matches!(self, LossMode::Both | LossMode::PatchOnly)
    }

    /// Weights `(w_O, w_P)` such that the loss is `w_O·L_O + w_P·L_P`.
    pub fn weights(self, grid: usize) -> (f64, f64) {
        let p2 = (grid * grid) as f64;
        match self {
            LossMode::Both => (0.5, 0.5 / p2),
            LossMode::ImageOnly => (1.0, 0.0),
            LossMode::PatchOnly => (0.0, 1.0 / p2),
        }
    }

    /// Combines the two terms. Single-term modes use that term alone, with
    /// `L_P` still scaled by `1/P²`.
    pub fn combine(self, image_loss: f64, patch_loss: f64, grid: usize) -> f64 {
        match self {
            LossMode::Both => total_loss(image_loss, patch_loss, grid),
            LossMode::ImageOnly => image_loss,
            LossMode::PatchOnly => patch_loss / (grid * grid) as f64,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::Both => "both",
            LossMode::ImageOnly => "image_only",
            LossMode::PatchOnly => "patch_only",
        }
    }
}

impl core::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(LossMode::Both),
            "image_only" => Ok(LossMode::ImageOnly),
            "patch_only" => Ok(LossMode::PatchOnly),
            other => Err(Error::config(alloc::format!("unknown loss mode {other:?}"))),
        }
    }
}

fn check_finite(logits: &[f64]) -> Result<()> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite logit"));
    }
    Ok(())
}

/// `log Σ exp(z)`, max-shifted.
pub(crate) fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| math::exp(z - max)).sum();
    max + math::ln(sum)
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Result<LabelVector> {
    if logits.is_empty() {
        return Err(Error::config("softmax of an empty vector"));
    }
    check_finite(logits)?;
    Ok(LabelVector::from_softmax(softmax_raw(logits)))
}

pub(crate) fn softmax_raw(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| math::exp(z - max)).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// `L_O = −Σ ỹ_c log ŷ_c`, via log-sum-exp.
pub fn image_loss(image_logits: &[f64], target: &LabelVector) -> Result<f64> {
    if image_logits.len() != target.class_count() {
        return Err(Error::config(alloc::format!(
            "{} logits for a {}-class target",
            image_logits.len(),
            target.class_count()
        )));
    }
    check_finite(image_logits)?;
    let lse = log_sum_exp(image_logits);
    Ok(target
        .probs()
        .iter()
        .zip(image_logits)
        .filter(|(&p, _)| p != 0.0)
        .map(|(&p, &z)| p * (lse - z))
        .sum())
}

fn patch_class_count(patch_logits: &[f64], patch_labels: &[usize]) -> Result<usize> {
    if patch_labels.is_empty() || patch_logits.len() % patch_labels.len() != 0 {
        return Err(Error::config(alloc::format!(
            "{} patch logits do not split into {} patches",
            patch_logits.len(),
            patch_labels.len()
        )));
    }
    let c = patch_logits.len() / patch_labels.len();
    if c == 0 {
        return Err(Error::config("patch logits have zero classes"));
    }
    if let Some(bad) = patch_labels.iter().find(|&&l| l >= c) {
        return Err(Error::config(alloc::format!("patch label {bad} out of range for {c} classes")));
    }
    Ok(c)
}

/// `L_P`: the *sum* over patches of one-hot cross-entropy.
pub fn patch_loss(patch_logits: &[f64], patch_labels: &[usize]) -> Result<f64> {
    let c = patch_class_count(patch_logits, patch_labels)?;
    check_finite(patch_logits)?;
    Ok(patch_labels
        .iter()
        .enumerate()
        .map(|(n, &y)| {
            let row = &patch_logits[n * c..(n + 1) * c];
            log_sum_exp(row) - row[y]
        })
        .sum())
}

/// `L_T = (L_O + L_P/P²) / 2`.
pub fn total_loss(image_loss: f64, patch_loss: f64, grid: usize) -> f64 {
    (image_loss + patch_loss / (grid * grid) as f64) / 2.0
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Fraction of patches whose argmax matches the label.
pub fn patch_accuracy(patch_logits: &[f64], patch_labels: &[usize]) -> Result<f64> {
    let c = patch_class_count(patch_logits, patch_labels)?;
    let correct = patch_labels
        .iter()
        .enumerate()
        .filter(|(n, &y)| argmax(&patch_logits[n * c..(n + 1) * c]) == y)
        .count();
    Ok(correct as f64 / patch_labels.len() as f64)
}
