//! Finite-difference checks of the hand-written backward pass.

use patchmix_core::losses::{image_loss, patch_loss, LossMode};
use patchmix_core::mixing::{patchmix, MixedSample};
use patchmix_core::{ImageTensor, PatchMask, ReferenceModel, SeededRng};
use rand::Rng;

const H: f64 = 1e-4;
// FD noise floor: loss is O(1) in f64, so absolute error below ~1e-9 is noise
const FLOOR: f64 = 1e-6;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// Loss of one sample recomputed from the loss definitions.
fn sample_loss(model: &ReferenceModel, dims: (usize, usize, usize), px: &[f64], s: &MixedSample, mode: LossMode) -> f64 {
    let out = model.forward_pixels(dims, px).unwrap();
    let p2 = (model.grid() * model.grid()) as f64;
    let lo = image_loss(&out.image_logits, &s.image_label).unwrap();
    let lp = patch_loss(&out.patch_logits, s.patch_labels.as_ref().unwrap()).unwrap();
    match mode {
        LossMode::Both => (lo + lp / p2) / 2.0,
        LossMode::ImageOnly => lo,
        LossMode::PatchOnly => lp / p2,
    }
}

fn batch_loss(model: &ReferenceModel, batch: &[MixedSample], mode: LossMode) -> f64 {
    batch
        .iter()
        .map(|s| sample_loss(model, s.image.dims(), &s.image.to_f64(), s, mode))
        .sum::<f64>()
        / batch.len() as f64
}

fn setup(seed: u64) -> (ReferenceModel, Vec<MixedSample>) {
    let mut rng = SeededRng::new(seed, &[77]);
    let (grid, classes, hidden) = (2, 3, 6);
    let mut model = ReferenceModel::new(grid, classes, hidden, 4 * 4 * 3, &mut rng).unwrap();
    for b in [1, 3, 5] {
        for v in model.params_mut().blocks_mut()[b].iter_mut() {
            *v = rng.random_range(-0.3..0.3);
        }
    }
    let batch = (0..3)
        .map(|_| {
            let a = ImageTensor::from_fn(8, 8, 3, |_, _, _| rng.random::<f64>());
            let b = ImageTensor::from_fn(8, 8, 3, |_, _, _| rng.random::<f64>());
            let mask = PatchMask::uniform(grid, &mut rng);
            let (yi, yj) = (rng.random_range(0..classes), rng.random_range(0..classes));
            patchmix(&a, yi, &b, yj, &mask, classes).unwrap()
        })
        .collect();
    (model, batch)
}

#[test]
fn parameter_and_input_gradients_match_central_differences() {
    let modes = [LossMode::Both, LossMode::ImageOnly, LossMode::PatchOnly];
    let mut worst: f64 = 0.0;
    for probe in 0..50u64 {
        let (model, batch) = setup(probe);
        let mode = modes[probe as usize % 3];
        let grads = model.backward(&batch, mode).unwrap();
        let mut rng = SeededRng::new(probe, &[78]);
        let err = if probe % 5 == 4 {
            // input probe on one sample's own loss
            let s = rng.random_range(0..batch.len());
            let sample = &batch[s];
            let dims = sample.image.dims();
            let px = sample.image.to_f64();
            let k = rng.random_range(0..px.len());
            let (mut up, mut dn) = (px.clone(), px.clone());
            up[k] += H;
            dn[k] -= H;
            let num = (sample_loss(&model, dims, &up, sample, mode) - sample_loss(&model, dims, &dn, sample, mode)) / (2.0 * H);
            rel_err(grads.inputs[s][k], num)
        } else {
            let block = probe as usize % 6;
            let len = model.params().blocks()[block].len();
            let k = rng.random_range(0..len);
            let mut up = model.clone();
            up.params_mut().blocks_mut()[block][k] += H;
            let mut dn = model.clone();
            dn.params_mut().blocks_mut()[block][k] -= H;
            let num = (batch_loss(&up, &batch, mode) - batch_loss(&dn, &batch, mode)) / (2.0 * H);
            rel_err(grads.params.blocks()[block][k], num)
        };
        worst = worst.max(err);
    }
    eprintln!("max relative error {worst:.3e}");
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn every_gradient_entry_matches_on_a_small_model() {
    let (model, batch) = setup(1234);
    let grads = model.backward(&batch, LossMode::Both).unwrap();
    for block in 0..6 {
        for k in 0..model.params().blocks()[block].len() {
            let mut up = model.clone();
            up.params_mut().blocks_mut()[block][k] += H;
            let mut dn = model.clone();
            dn.params_mut().blocks_mut()[block][k] -= H;
            let num = (batch_loss(&up, &batch, LossMode::Both) - batch_loss(&dn, &batch, LossMode::Both)) / (2.0 * H);
            let err = rel_err(grads.params.blocks()[block][k], num);
            assert!(err < 1e-4, "block {block} entry {k}: relative error {err}");
        }
    }
    let loss = batch_loss(&model, &batch, LossMode::Both);
    assert!((grads.loss - loss).abs() < 1e-12);
}
