//! Guided PatchMix: sampling from searched `(pair, mask)` configurations and
//! the phase-4 training loop over original, randomly mixed and guided
//! samples.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evolution::{ClassPairIndex, Individual};
use crate::losses::LossMode;
use crate::masks::PatchMask;
use crate::mixing::{self, MixedSample};
use crate::model::ReferenceModel;
use crate::rng::{tags, SeededRng};
use crate::train::{self, TrainConfig, TrainOutcome};

/// A guided sample together with where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidedSample {
    pub sample: MixedSample,
    pub slot: usize,
    pub pair: (usize, usize),
    /// Dataset indices of the first and second source image.
    pub sources: (usize, usize),
}

/// Draws `count` samples: each picks an active slot uniformly, one image
/// from each class of the pair, and mixes them with that slot's mask.
pub fn generate_guided_set(
    ind: &Individual,
    train: &Dataset,
    count: usize,
    rng: &mut SeededRng,
) -> Result<Vec<GuidedSample>> {
    let pairs = ClassPairIndex::new(train.class_count());
    if ind.head().len() != pairs.len() {
        return Err(Error::config("individual and dataset disagree on the class count"));
    }
    let active: Vec<usize> = ind.active_slots().collect();
    if active.is_empty() {
        return Err(Error::config("individual has no active class pairs"));
    }
    let by_class = train.indices_by_class();
    for &slot in &active {
        let (i, j) = pairs.pair(slot);
        for c in [i, j] {
            if by_class[c].is_empty() {
                return Err(Error::config(alloc::format!("class {c} has no training samples")));
            }
        }
    }
    (0..count)
        .map(|_| {
            let slot = active[rng.random_range(0..active.len())];
            let (ci, cj) = pairs.pair(slot);
            let a = by_class[ci][rng.random_range(0..by_class[ci].len())];
            let b = by_class[cj][rng.random_range(0..by_class[cj].len())];
            let sample =
                mixing::patchmix(train.image(a), ci, train.image(b), cj, ind.mask(slot), train.class_count())?;
            Ok(GuidedSample { sample, slot, pair: (ci, cj), sources: (a, b) })
        })
        .collect()
}

/// Relative share of original : random-mixed : guided samples per batch.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BatchRatio {
    pub original: f64,
    pub random: f64,
    pub guided: f64,
}

impl Default for BatchRatio {
    fn default() -> Self {
        BatchRatio { original: 1.0, random: 1.0, guided: 1.0 }
    }
}

impl BatchRatio {
    pub fn new(original: f64, random: f64, guided: f64) -> Result<Self> {
        let r = BatchRatio { original, random, guided };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.original, self.random, self.guided];
        if parts.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::config("batch ratio components must be finite and non-negative"));
        }
        if parts.iter().all(|&p| p == 0.0) {
            return Err(Error::config("batch ratio components cannot all be zero"));
        }
        Ok(())
    }

    /// Per-batch counts `(original, random, guided)`; the random and guided
    /// shares are floored and the remainder goes to the originals.
    pub fn split(&self, batch: usize) -> (usize, usize, usize) {
        let total = self.original + self.random + self.guided;
        let random = libm::floor(batch as f64 * self.random / total) as usize;
        let guided = libm::floor(batch as f64 * self.guided / total) as usize;
        (batch - random - guided, random, guided)
    }

    /// Probability that a mixed sample comes from the guided plan rather
    /// than random mixing.
    pub fn guided_weight(&self) -> f64 {
        let mixed = self.random + self.guided;
        if mixed == 0.0 {
            0.0
        } else {
            self.guided / mixed
        }
    }
}

/// The searched configuration used for guided training.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidedPlan {
    pub best_individual: Individual,
    pub sampling_weight: f64,
}

impl GuidedPlan {
    pub fn new(best_individual: Individual, sampling_weight: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&sampling_weight) {
            return Err(Error::config("sampling_weight must lie in [0, 1]"));
        }
        Ok(GuidedPlan { best_individual, sampling_weight })
    }
}

/// Builds phase-4 batches. Originals stream through a per-epoch shuffle of
/// the training set; random-mixed samples are redrawn every batch; guided
/// samples are drawn uniformly from the fixed guided set.
pub struct GuidedBatchComposer<'a> {
    train: &'a Dataset,
    guided: &'a [GuidedSample],
    counts: (usize, usize, usize),
    grid: usize,
    alpha: f64,
    root: SeededRng,
    order: Vec<usize>,
    cursor: usize,
}

impl<'a> GuidedBatchComposer<'a> {
    pub fn new(
        train: &'a Dataset,
        guided: &'a [GuidedSample],
        ratio: BatchRatio,
        batch_size: usize,
        grid: usize,
        alpha: f64,
        seed: u64,
    ) -> Result<Self> {
        ratio.validate()?;
        let counts = ratio.split(batch_size);
        if counts.2 > 0 && guided.is_empty() {
            return Err(Error::config("guided share requested but the guided set is empty"));
        }
        if counts.0 == 0 && counts.1 == 0 && counts.2 == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        Ok(GuidedBatchComposer {
            train,
            guided,
            counts,
            grid,
            alpha,
            root: SeededRng::new(seed, &[tags::GUIDED_TRAIN]),
            order: Vec::new(),
            cursor: 0,
        })
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        self.counts
    }

    /// Batches per epoch: enough to pass over the training set once at the
    /// overall batch size.
    pub fn batches_per_epoch(&self) -> usize {
        let batch = self.counts.0 + self.counts.1 + self.counts.2;
        self.train.len().div_ceil(batch)
    }

    /// Batch `b` of `epoch`. Deterministic in `(seed, epoch, b)` as long as
    /// batches of an epoch are requested in order.
    pub fn batch(&mut self, epoch: usize, b: usize) -> Result<Vec<MixedSample>> {
        let epoch_rng = self.root.child(epoch as u64);
        if b == 0 {
            self.order = (0..self.train.len()).collect();
            self.order.shuffle(&mut epoch_rng.child(u64::MAX));
            self.cursor = 0;
        }
        let mut rng = epoch_rng.child(b as u64);
        let (n_orig, n_rand, n_guided) = self.counts;
        let c = self.train.class_count();
        let mut out = Vec::with_capacity(n_orig + n_rand + n_guided);
        for _ in 0..n_orig {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut rng);
                self.cursor = 0;
            }
            let i = self.order[self.cursor];
            self.cursor += 1;
            out.push(MixedSample::plain(self.train.image(i).clone(), self.train.label(i), c, self.grid)?);
        }
        for _ in 0..n_rand {
            let i = rng.random_range(0..self.train.len());
            let j = rng.random_range(0..self.train.len());
            let mask = PatchMask::sample_random(self.grid, self.alpha, &mut rng)?;
            out.push(mixing::patchmix(
                self.train.image(i),
                self.train.label(i),
                self.train.image(j),
                self.train.label(j),
                &mask,
                c,
            )?);
        }
        for _ in 0..n_guided {
            out.push(self.guided[rng.random_range(0..self.guided.len())].sample.clone());
        }
        Ok(out)
    }
}

/// Phase 4: trains a fresh model on composed batches, minimising `L_O` only.
pub fn train_guided(
    train: &Dataset,
    val: &Dataset,
    guided: &[GuidedSample],
    ratio: BatchRatio,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    train.check_compatible(val)?;
    if train.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let mut init_rng = SeededRng::new(cfg.seed, &[tags::MODEL_INIT, 4]);
    let model = ReferenceModel::for_dataset(train, cfg.grid, cfg.hidden, &mut init_rng)?;
    let mut composer =
        GuidedBatchComposer::new(train, guided, ratio, cfg.batch_size, cfg.grid, cfg.alpha, cfg.seed)?;
    let per_epoch = composer.batches_per_epoch();
    train::run_training(model, val, cfg, LossMode::ImageOnly, |epoch, b| {
        if b >= per_epoch {
            return Ok(None);
        }
        composer.batch(epoch, b).map(Some)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_shapes;
    use crate::evolution::{random_individual, GenomeSpec, SearchConfig};

    fn pair_individual(classes: usize, pair: (usize, usize), mask: PatchMask) -> Individual {
        let pairs = ClassPairIndex::new(classes);
        let mut head = alloc::vec![false; pairs.len()];
        head[pairs.index(pair.0, pair.1)] = true;
        Individual::new(head, alloc::vec![mask; pairs.len()]).unwrap()
    }

    #[test]
    fn guided_set_examples() {
        let train = synth_shapes(3, 16, 5, 1).unwrap();
        let half = PatchMask::from_rows(&[&[1, 1, 0, 0], &[1, 1, 0, 0], &[0, 0, 1, 1], &[0, 0, 1, 1]]).unwrap();
        let ind = pair_individual(3, (0, 1), half);
        let mut rng = SeededRng::new(2, &[]);
        assert!(generate_guided_set(&ind, &train, 0, &mut rng).unwrap().is_empty());
        let set = generate_guided_set(&ind, &train, 20, &mut rng).unwrap();
        assert_eq!(set.len(), 20);
        for g in &set {
            assert_eq!(g.sample.image_label.probs(), &[0.5, 0.5, 0.0]);
            assert_eq!(g.pair, (0, 1));
            assert_eq!(train.label(g.sources.0), 0);
            assert_eq!(train.label(g.sources.1), 1);
        }
        let again = generate_guided_set(&ind, &train, 20, &mut SeededRng::new(2, &[])).unwrap();
        let first = generate_guided_set(&ind, &train, 20, &mut SeededRng::new(2, &[])).unwrap();
        assert_eq!(again, first);
    }

    #[test]
    fn guided_set_only_uses_active_slots() {
        let train = synth_shapes(4, 16, 3, 1).unwrap();
        let cfg = SearchConfig { max_active: Some(3), ..SearchConfig::default() };
        let spec = GenomeSpec::new(&cfg, 4, 4).unwrap();
        let mut rng = SeededRng::new(9, &[]);
        let ind = random_individual(&spec, &mut rng);
        for g in generate_guided_set(&ind, &train, 50, &mut rng).unwrap() {
            assert!(ind.is_active(g.slot));
            assert_eq!(g.sample.lambda, ind.mask(g.slot).mixing_ratio());
            let support: Vec<usize> = g
                .sample
                .image_label
                .probs()
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(c, _)| c)
                .collect();
            assert!(support.iter().all(|&c| c == g.pair.0 || c == g.pair.1));
        }
    }

    #[test]
    fn guided_set_rejects_empty_head() {
        let train = synth_shapes(3, 16, 2, 1).unwrap();
        let ind = Individual::new(alloc::vec![false; 6], alloc::vec![PatchMask::ones(4); 6]).unwrap();
        assert!(matches!(
            generate_guided_set(&ind, &train, 4, &mut SeededRng::new(0, &[])),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn ratio_split_examples() {
        let even = BatchRatio::default();
        assert_eq!(even.split(99), (33, 33, 33));
        assert_eq!(even.split(100), (34, 33, 33));
        assert_eq!(BatchRatio::new(1.0, 0.0, 0.0).unwrap().split(100), (100, 0, 0));
        assert!(BatchRatio::new(0.0, 0.0, 0.0).is_err());
        assert!(BatchRatio::new(-1.0, 1.0, 0.0).is_err());
        assert_eq!(even.guided_weight(), 0.5);
    }

    #[test]
    fn composer_batches_follow_ratio() {
        let train = synth_shapes(3, 16, 10, 1).unwrap();
        let ind = pair_individual(3, (1, 2), PatchMask::ones(4));
        let guided = generate_guided_set(&ind, &train, 8, &mut SeededRng::new(1, &[])).unwrap();
        let mut comp =
            GuidedBatchComposer::new(&train, &guided, BatchRatio::default(), 10, 4, 1.0, 3).unwrap();
        assert_eq!(comp.counts(), (4, 3, 3));
        assert_eq!(comp.batches_per_epoch(), 3);
        let batch = comp.batch(0, 0).unwrap();
        assert_eq!(batch.len(), 10);
        assert!(batch[..4].iter().all(|s| s.lambda == 1.0));
        for s in &batch[7..] {
            assert!(guided.iter().any(|g| g.sample == *s));
        }

        let mut plain =
            GuidedBatchComposer::new(&train, &[], BatchRatio::new(1.0, 0.0, 0.0).unwrap(), 10, 4, 1.0, 3)
                .unwrap();
        assert!(plain.batch(0, 0).unwrap().iter().all(|s| s.lambda == 1.0));
        assert!(GuidedBatchComposer::new(&train, &[], BatchRatio::default(), 10, 4, 1.0, 3).is_err());
    }

    #[test]
    fn phase_four_never_touches_patch_loss() {
        let train = synth_shapes(3, 16, 8, 1).unwrap();
        let val = synth_shapes(3, 16, 2, 2).unwrap();
        let ind = pair_individual(3, (0, 2), PatchMask::uniform(4, &mut SeededRng::new(0, &[])));
        let guided = generate_guided_set(&ind, &train, 24, &mut SeededRng::new(1, &[])).unwrap();
        let cfg = TrainConfig { epochs: 2, batch_size: 12, hidden: 8, ..TrainConfig::default() };
        let out = train_guided(&train, &val, &guided, BatchRatio::default(), &cfg).unwrap();
        assert_eq!(out.patch_loss_evaluations, 0);
        assert_eq!(out.metrics.len(), 2);
        let again = train_guided(&train, &val, &guided, BatchRatio::default(), &cfg).unwrap();
        assert_eq!(out.model, again.model);
    }
}
