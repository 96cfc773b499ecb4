//! Training loops for the reference model.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{self, LossMode};
use crate::masks::PatchMask;
use crate::mixing::{self, MixedSample};
use crate::model::{cosine_lr, ReferenceModel, SgdNesterov};
use crate::rng::{tags, SeededRng};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Beta shape for random mask cells.
    pub alpha: f64,
    /// Patches per side (`P`).
    pub grid: usize,
    pub eta_min: f64,
    pub loss_mode: LossMode,
    /// Probability that a pair is mixed rather than passed through unmixed.
    pub mix_probability: f64,
    /// Hidden width `D` of the reference model.
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 100,
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 0.0005,
            alpha: 1.0,
            grid: 4,
            eta_min: 0.0,
            loss_mode: LossMode::Both,
            mix_probability: 1.0,
            hidden: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.grid == 0 || self.hidden == 0 {
            return Err(Error::config("epochs, batch_size, grid and hidden must be positive"));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::config("alpha must be positive"));
        }
        if !(0.0..=1.0).contains(&self.mix_probability) {
            return Err(Error::config("mix_probability must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::config("momentum must lie in [0, 1) and weight_decay be >= 0"));
        }
        if !(self.lr0 > 0.0) || !(self.eta_min >= 0.0) || self.eta_min > self.lr0 {
            return Err(Error::config("need 0 <= eta_min <= lr0 and lr0 > 0"));
        }
        Ok(())
    }

    /// Learning rate for `epoch`: `lr0` at the first epoch, `eta_min` at the last.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        cosine_lr(epoch, self.epochs.saturating_sub(1), self.lr0, self.eta_min)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_top1: f64,
    pub val_patch_acc: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    /// Image-head top-1 accuracy.
    pub top1: f64,
    /// Patch-head accuracy with every patch labelled by the image class.
    pub patch_acc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ReferenceModel,
    pub metrics: Vec<EpochMetrics>,
    /// Total per-sample `L_P` evaluations during training.
    pub patch_loss_evaluations: usize,
}

/// Accuracy of `model` on unmixed samples. NaN for an empty dataset.
pub fn evaluate(model: &ReferenceModel, data: &Dataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Ok(Evaluation { top1: f64::NAN, patch_acc: f64::NAN });
    }
    let n_patches = model.grid() * model.grid();
    let (mut correct, mut patch_sum) = (0usize, 0.0);
    for (image, &y) in data.images().iter().zip(data.labels()) {
        let out = model.forward(image)?;
        correct += usize::from(losses::argmax(&out.image_logits) == y);
        patch_sum += losses::patch_accuracy(&out.patch_logits, &alloc::vec![y; n_patches])?;
    }
    let n = data.len() as f64;
    Ok(Evaluation { top1: correct as f64 / n, patch_acc: patch_sum / n })
}

/// Image-head top-1 accuracy on `data`.
pub fn top1_accuracy(model: &ReferenceModel, data: &Dataset) -> Result<f64> {
    Ok(evaluate(model, data)?.top1)
}

/// Shuffled index chunks for one epoch.
pub(crate) fn epoch_batches(n: usize, batch_size: usize, rng: &mut SeededRng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Random PatchMix over one chunk of indices: each sample is paired with a
/// partner from a random permutation of the chunk and mixed under a fresh
/// random mask (or passed through unmixed with probability
/// `1 − mix_probability`).
pub(crate) fn random_patchmix_batch(
    data: &Dataset,
    chunk: &[usize],
    grid: usize,
    alpha: f64,
    mix_probability: f64,
    rng: &mut SeededRng,
) -> Result<Vec<MixedSample>> {
    let mut partner: Vec<usize> = chunk.to_vec();
    partner.shuffle(rng);
    let c = data.class_count();
    chunk
        .iter()
        .zip(&partner)
        .map(|(&i, &j)| {
            if rng.random::<f64>() < mix_probability {
                let mask = PatchMask::sample_random(grid, alpha, rng)?;
                mixing::patchmix(data.image(i), data.label(i), data.image(j), data.label(j), &mask, c)
            } else {
                MixedSample::plain(data.image(i).clone(), data.label(i), c, grid)
            }
        })
        .collect()
}

/// Shared SGD loop. `next_batch(epoch, batch)` yields the samples of each
/// batch, `None` ending the epoch.
pub(crate) fn run_training<F>(
    mut model: ReferenceModel,
    val: &Dataset,
    cfg: &TrainConfig,
    mode: LossMode,
    mut next_batch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(usize, usize) -> Result<Option<Vec<MixedSample>>>,
{
    let mut opt = SgdNesterov::new(&model, cfg.momentum, cfg.weight_decay);
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut patch_loss_evaluations = 0;
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate(epoch);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        while let Some(batch) = next_batch(epoch, batches)? {
            let at = |e: Error| match e {
                Error::Numeric(m) => Error::numeric(alloc::format!("{m} at epoch {epoch}, batch {batches}")),
                other => other,
            };
            let grads = model.backward(&batch, mode).map_err(at)?;
            opt.step(&mut model, &grads.params, lr).map_err(at)?;
            patch_loss_evaluations += grads.patch_loss_evaluations;
            loss_sum += grads.loss;
            batches += 1;
        }
        let eval = evaluate(&model, val)?;
        metrics.push(EpochMetrics {
            epoch,
            lr,
            train_loss: if batches > 0 { loss_sum / batches as f64 } else { f64::NAN },
            val_top1: eval.top1,
            val_patch_acc: eval.patch_acc,
        });
    }
    Ok(TrainOutcome { model, metrics, patch_loss_evaluations })
}

/// Random PatchMix training of a fresh reference model.
pub fn train_random_patchmix(train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    train.check_compatible(val)?;
    if train.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let mut init_rng = SeededRng::new(cfg.seed, &[tags::MODEL_INIT]);
    let model = ReferenceModel::for_dataset(train, cfg.grid, cfg.hidden, &mut init_rng)?;
    let root = SeededRng::new(cfg.seed, &[tags::TRAIN]);

    let mut plan: Vec<Vec<usize>> = Vec::new();
    run_training(model, val, cfg, cfg.loss_mode, |epoch, b| {
        let epoch_rng = root.child(epoch as u64);
        if b == 0 {
            plan = epoch_batches(train.len(), cfg.batch_size, &mut epoch_rng.child(u64::MAX));
        }
        let Some(chunk) = plan.get(b) else { return Ok(None) };
        let mut rng = epoch_rng.child(b as u64);
        random_patchmix_batch(train, chunk, cfg.grid, cfg.alpha, cfg.mix_probability, &mut rng).map(Some)
    })
}
