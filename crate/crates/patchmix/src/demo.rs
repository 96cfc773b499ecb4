//! Decision boundaries of a small classifier trained on the three-cluster
//! toy problem under different interpolation schemes.
//!
//! Each sample is a pair of features. Mask-based methods mix at feature
//! level: a mask is two bits, one per feature, so the possible masks are
//! `0|0`, `1|0`, `0|1` and `1|1`.

use std::fmt::Write as _;
use std::str::FromStr;

use patchmix_core::data::toy_2d_three_class;
use patchmix_core::evolution::run_search;
use patchmix_core::guided::BatchRatio;
use patchmix_core::losses::{argmax, image_loss};
use patchmix_core::mixing::{cutmix, mixup, MixedSample};
use patchmix_core::model::SgdNesterov;
use patchmix_core::rng::tags;
use patchmix_core::{ClassPairIndex, Dataset, ImageTensor, Individual, LabelVector, LossMode, ReferenceModel, SearchConfig, SeededRng};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DemoMethod {
    None,
    Mixup,
    Cutmix,
    Patchmix,
    Guided,
}

impl DemoMethod {
    pub const ALL: [DemoMethod; 5] =
        [DemoMethod::None, DemoMethod::Mixup, DemoMethod::Cutmix, DemoMethod::Patchmix, DemoMethod::Guided];

    pub fn as_str(self) -> &'static str {
        match self {
            DemoMethod::None => "none",
            DemoMethod::Mixup => "mixup",
            DemoMethod::Cutmix => "cutmix",
            DemoMethod::Patchmix => "patchmix",
            DemoMethod::Guided => "guided",
        }
    }
}

impl FromStr for DemoMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DemoMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown method {s:?}; expected none, mixup, cutmix, patchmix or guided")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoConfig {
    pub samples_per_class: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Grid cells per side of the output.
    pub resolution: usize,
    pub seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            samples_per_class: 100,
            hidden: 32,
            epochs: 150,
            batch_size: 30,
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 0.0005,
            resolution: 200,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoGrid {
    pub method: DemoMethod,
    /// `(x, y, predicted class)`, rows of constant `y`, `x` varying fastest.
    pub cells: Vec<(f64, f64, usize)>,
    pub data: Dataset,
    /// Pairs and feature masks used by the guided method.
    pub guided_plan: Option<Individual>,
}

impl DemoGrid {
    pub fn classes_present(&self) -> Vec<usize> {
        let mut seen: Vec<usize> = self.cells.iter().map(|c| c.2).collect();
        seen.sort_unstable();
        seen.dedup();
        seen
    }

    pub fn csv(&self) -> String {
        let mut out = String::with_capacity(self.cells.len() * 24);
        out.push_str("x,y,class\n");
        for (x, y, c) in &self.cells {
            let _ = writeln!(out, "{x},{y},{c}");
        }
        out
    }
}

fn features(image: &ImageTensor) -> [f64; 2] {
    [f64::from(image.get(0, 0, 0)), f64::from(image.get(0, 1, 0))]
}

fn feature_image(f: [f64; 2]) -> ImageTensor {
    ImageTensor::from_fn(2, 1, 1, |_, c, _| f[c])
}

/// Feature-level PatchMix: feature `k` comes from `a` where `bits[k]` is set.
fn feature_mix(data: &Dataset, a: usize, b: usize, bits: [bool; 2]) -> Result<MixedSample> {
    let (fa, fb) = (features(data.image(a)), features(data.image(b)));
    let mixed = [if bits[0] { fa[0] } else { fb[0] }, if bits[1] { fa[1] } else { fb[1] }];
    let lambda = bits.iter().filter(|&&x| x).count() as f64 / 2.0;
    Ok(MixedSample {
        image: feature_image(mixed),
        image_label: LabelVector::mixed(data.label(a), data.label(b), lambda, data.class_count())?,
        patch_labels: None,
        lambda,
    })
}

/// The feature bits of a searched `2×2` mask: its first row.
fn slot_bits(ind: &Individual, slot: usize) -> [bool; 2] {
    let m = ind.mask(slot);
    [m.get(0, 0), m.get(0, 1)]
}

fn random_bits(rng: &mut SeededRng, beta: &Beta<f64>) -> [bool; 2] {
    [beta.sample(rng).round() >= 1.0, beta.sample(rng).round() >= 1.0]
}

fn guided_sample(data: &Dataset, plan: &Individual, by_class: &[Vec<usize>], rng: &mut SeededRng) -> Result<MixedSample> {
    let pairs = ClassPairIndex::new(data.class_count());
    let active: Vec<usize> = plan.active_slots().collect();
    let slot = active[rng.random_range(0..active.len())];
    let (ci, cj) = pairs.pair(slot);
    let a = by_class[ci][rng.random_range(0..by_class[ci].len())];
    let b = by_class[cj][rng.random_range(0..by_class[cj].len())];
    feature_mix(data, a, b, slot_bits(plan, slot))
}

fn train_demo(data: &Dataset, method: DemoMethod, plan: Option<&Individual>, cfg: &DemoConfig) -> Result<ReferenceModel> {
    let c = data.class_count();
    let mut model = ReferenceModel::for_dataset(data, 1, cfg.hidden, &mut SeededRng::new(cfg.seed, &[tags::DEMO, 2]))?;
    let mut opt = SgdNesterov::new(&model, cfg.momentum, cfg.weight_decay);
    let beta = Beta::new(1.0, 1.0).expect("valid shape");
    let by_class = data.indices_by_class();
    let root = SeededRng::new(cfg.seed, &[tags::DEMO, 3]);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = patchmix_core::model::cosine_lr(epoch, cfg.epochs.saturating_sub(1), cfg.lr0, 0.0);
        let mut rng = root.child(epoch as u64);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut partner = chunk.to_vec();
            partner.shuffle(&mut rng);
            let (n_orig, n_rand, _) = match method {
                DemoMethod::Guided => BatchRatio::default().split(chunk.len()),
                _ => (0, chunk.len(), 0),
            };
            let mut batch = Vec::with_capacity(chunk.len());
            for (k, (&i, &j)) in chunk.iter().zip(&partner).enumerate() {
                let sample = match method {
                    DemoMethod::None => MixedSample::plain(data.image(i).clone(), data.label(i), c, 1)?,
                    DemoMethod::Mixup => {
                        mixup(data.image(i), data.label(i), data.image(j), data.label(j), beta.sample(&mut rng), c)?
                    }
                    DemoMethod::Cutmix => {
                        cutmix(data.image(i), data.label(i), data.image(j), data.label(j), &mut rng, 1, 1, c)?
                    }
                    DemoMethod::Patchmix => feature_mix(data, i, j, random_bits(&mut rng, &beta))?,
                    DemoMethod::Guided => {
                        if k < n_orig {
                            MixedSample::plain(data.image(i).clone(), data.label(i), c, 1)?
                        } else if k < n_orig + n_rand {
                            feature_mix(data, i, j, random_bits(&mut rng, &beta))?
                        } else {
                            guided_sample(data, plan.expect("guided plan"), &by_class, &mut rng)?
                        }
                    }
                };
                batch.push(sample);
            }
            let grads = model.backward(&batch, LossMode::ImageOnly)?;
            opt.step(&mut model, &grads.params, lr)?;
        }
    }
    Ok(model)
}

/// Searches `(pair, feature mask)` configurations whose mixes a model
/// trained with random feature masks finds hardest (highest `L_O`).
fn search_demo_plan(data: &Dataset, cfg: &DemoConfig) -> Result<Individual> {
    let f_t = train_demo(data, DemoMethod::Patchmix, None, cfg)?;
    let by_class = data.indices_by_class();
    let pairs = ClassPairIndex::new(data.class_count());
    let samples = 32;
    let fitness = |ind: &Individual, generation: usize| -> patchmix_core::Result<f64> {
        let (mut total, mut n) = (0.0, 0usize);
        for slot in ind.active_slots() {
            let (ci, cj) = pairs.pair(slot);
            let mut rng = SeededRng::new(cfg.seed, &[tags::DEMO, 4, generation as u64, slot as u64]);
            for _ in 0..samples {
                let a = by_class[ci][rng.random_range(0..by_class[ci].len())];
                let b = by_class[cj][rng.random_range(0..by_class[cj].len())];
                let s = feature_mix(data, a, b, slot_bits(ind, slot)).map_err(|e| match e {
                    Error::Core(e) => e,
                    other => patchmix_core::Error::Config(other.to_string()),
                })?;
                let out = f_t.forward(&s.image)?;
                total += image_loss(&out.image_logits, &s.image_label)?;
                n += 1;
            }
        }
        Ok(if n == 0 { f64::INFINITY } else { -total / n as f64 })
    };
    let search = SearchConfig {
        population_size: 40,
        generations: 15,
        max_active: Some(3),
        seed: cfg.seed,
        ..SearchConfig::default()
    };
    Ok(run_search(&search, data.class_count(), 2, &fitness)?.best)
}

pub fn boundary_demo(method: DemoMethod, cfg: &DemoConfig) -> Result<DemoGrid> {
    if cfg.resolution < 2 || cfg.epochs == 0 || cfg.batch_size == 0 || cfg.hidden == 0 {
        return Err(Error::config("resolution must be at least 2 and epochs, batch_size, hidden positive"));
    }
    let data = toy_2d_three_class(cfg.samples_per_class, cfg.seed)?;
    let plan = match method {
        DemoMethod::Guided => Some(search_demo_plan(&data, cfg)?),
        _ => None,
    };
    let model = train_demo(&data, method, plan.as_ref(), cfg)?;

    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for image in data.images() {
        let f = features(image);
        for k in 0..2 {
            lo[k] = lo[k].min(f[k]);
            hi[k] = hi[k].max(f[k]);
        }
    }
    let n = cfg.resolution;
    let at = |k: usize, i: usize| lo[k] + (hi[k] - lo[k]) * i as f64 / (n - 1) as f64;
    let mut cells = Vec::with_capacity(n * n);
    for r in 0..n {
        let y = at(1, r);
        for c in 0..n {
            let x = at(0, c);
            let out = model.forward_pixels((2, 1, 1), &[x, y])?;
            cells.push((x, y, argmax(&out.image_logits)));
        }
    }
    Ok(DemoGrid { method, cells, data, guided_plan: plan })
}

/// Class means of the toy data.
pub fn centroids(data: &Dataset) -> Vec<[f64; 2]> {
    data.indices_by_class()
        .iter()
        .map(|members| {
            let mut m = [0.0; 2];
            for &i in members {
                let f = features(data.image(i));
                m[0] += f[0];
                m[1] += f[1];
            }
            [m[0] / members.len() as f64, m[1] / members.len() as f64]
        })
        .collect()
}

/// Fraction of grid cells whose prediction is the nearest class mean.
pub fn nearest_centroid_agreement(grid: &DemoGrid) -> f64 {
    let cents = centroids(&grid.data);
    let agree = grid
        .cells
        .iter()
        .filter(|&&(x, y, class)| {
            let d = |m: &[f64; 2]| (m[0] - x).powi(2) + (m[1] - y).powi(2);
            let nearest = (0..cents.len()).min_by(|&a, &b| d(&cents[a]).total_cmp(&d(&cents[b]))).unwrap();
            nearest == class
        })
        .count();
    agree as f64 / grid.cells.len() as f64
}
