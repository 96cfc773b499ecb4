//! A small patch classifier with hand-written gradients.
//!
//! Every `(H/P)×(W/P)` patch is flattened and passed through a shared ReLU
//! encoder. Each patch feature feeds a shared patch head; the mean of the
//! patch features feeds the image head.
//!
//! ```text
//! f_n            = relu(W_embedᵀ · vec(patch_n) + b_embed)
//! patch_logits_n = W_patchᵀ · f_n + b_patch
//! image_logits   = W_imgᵀ · mean_n(f_n) + b_img
//! ```

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{clamp_unit, Dataset, ImageTensor, LabelVector};
use crate::error::{Error, Result};
use crate::losses::{self, LossMode, ModelOutputs};
use crate::math;
use crate::mixing::MixedSample;

/// Anything that produces patch and image logits for an image.
pub trait PatchPredictor {
    fn grid_size(&self) -> usize;
    fn class_count(&self) -> usize;
    fn predict(&self, image: &ImageTensor) -> Result<ModelOutputs>;
}

/// Parameter blocks, also used for gradients and optimizer velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    /// `patch_pixels × D`, indexed `[i·D + d]`.
    pub w_embed: Vec<f64>,
    pub b_embed: Vec<f64>,
    /// `D × C`, indexed `[d·C + c]`.
    pub w_patch: Vec<f64>,
    pub b_patch: Vec<f64>,
    /// `D × C`, indexed `[d·C + c]`.
    pub w_img: Vec<f64>,
    pub b_img: Vec<f64>,
}

impl Parameters {
    pub const BLOCK_NAMES: [&'static str; 6] =
        ["w_embed", "b_embed", "w_patch", "b_patch", "w_img", "b_img"];

    pub fn zeros(patch_pixels: usize, hidden: usize, classes: usize) -> Self {
        Parameters {
            w_embed: alloc::vec![0.0; patch_pixels * hidden],
            b_embed: alloc::vec![0.0; hidden],
            w_patch: alloc::vec![0.0; hidden * classes],
            b_patch: alloc::vec![0.0; classes],
            w_img: alloc::vec![0.0; hidden * classes],
            b_img: alloc::vec![0.0; classes],
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for b in out.blocks_mut() {
            b.fill(0.0);
        }
        out
    }

    /// Blocks in declaration order.
    pub fn blocks(&self) -> [&[f64]; 6] {
        [&self.w_embed, &self.b_embed, &self.w_patch, &self.b_patch, &self.w_img, &self.b_img]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 6] {
        [
            &mut self.w_embed,
            &mut self.b_embed,
            &mut self.w_patch,
            &mut self.b_patch,
            &mut self.w_img,
            &mut self.b_img,
        ]
    }

    /// Whether block `i` holds weights (subject to weight decay) or biases.
    pub fn is_weight_block(i: usize) -> bool {
        i % 2 == 0
    }

    pub fn len(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn norm(&self) -> f64 {
        math::sqrt(self.blocks().iter().flat_map(|b| b.iter()).map(|v| v * v).sum())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceModel {
    grid: usize,
    classes: usize,
    hidden: usize,
    patch_pixels: usize,
    params: Parameters,
}

/// Intermediate values of one forward pass.
struct Trace {
    patches: Vec<f64>,
    pre: Vec<f64>,
    feats: Vec<f64>,
    mean_feat: Vec<f64>,
    outputs: ModelOutputs,
}

/// Result of [`ReferenceModel::backward`].
#[derive(Clone, Debug)]
pub struct BatchGradients {
    /// Gradient of the batch-mean loss.
    pub params: Parameters,
    /// Per-sample gradient of that sample's own loss w.r.t. its pixels,
    /// laid out like [`ImageTensor::data`].
    pub inputs: Vec<Vec<f64>>,
    /// Batch-mean loss.
    pub loss: f64,
    /// How many per-sample `L_P` terms were evaluated.
    pub patch_loss_evaluations: usize,
}

impl ReferenceModel {
    /// He-initialised weights (`std = sqrt(2/fan_in)`), zero biases.
    pub fn new<R: Rng + ?Sized>(
        grid: usize,
        classes: usize,
        hidden: usize,
        patch_pixels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut model = Self::zeros(grid, classes, hidden, patch_pixels)?;
        let embed = Normal::new(0.0, math::sqrt(2.0 / patch_pixels as f64)).expect("std > 0");
        let head = Normal::new(0.0, math::sqrt(2.0 / hidden as f64)).expect("std > 0");
        for v in &mut model.params.w_embed {
            *v = embed.sample(rng);
        }
        for v in &mut model.params.w_patch {
            *v = head.sample(rng);
        }
        for v in &mut model.params.w_img {
            *v = head.sample(rng);
        }
        Ok(model)
    }

    pub fn zeros(grid: usize, classes: usize, hidden: usize, patch_pixels: usize) -> Result<Self> {
        if grid == 0 || classes == 0 || hidden == 0 || patch_pixels == 0 {
            return Err(Error::config("model dimensions must all be positive"));
        }
        Ok(ReferenceModel {
            grid,
            classes,
            hidden,
            patch_pixels,
            params: Parameters::zeros(patch_pixels, hidden, classes),
        })
    }

    pub fn from_parameters(
        grid: usize,
        classes: usize,
        hidden: usize,
        patch_pixels: usize,
        params: Parameters,
    ) -> Result<Self> {
        let expected = Self::zeros(grid, classes, hidden, patch_pixels)?;
        let shapes_match = expected
            .params
            .blocks()
            .iter()
            .zip(params.blocks())
            .all(|(a, b)| a.len() == b.len());
        if !shapes_match {
            return Err(Error::config("parameter block sizes do not match model dimensions"));
        }
        if !params.is_finite() {
            return Err(Error::numeric("non-finite parameter"));
        }
        Ok(ReferenceModel { params, ..expected })
    }

    /// Patch pixel count for `(W, H, C_in)` images split into a `grid×grid` grid.
    pub fn patch_pixels_for(dims: (usize, usize, usize), grid: usize) -> Result<usize> {
        let (w, h, c) = dims;
        if grid == 0 || w % grid != 0 || h % grid != 0 {
            return Err(Error::config(alloc::format!(
                "image {w}x{h} is not divisible into a {grid}x{grid} grid"
            )));
        }
        Ok((w / grid) * (h / grid) * c)
    }

    /// A freshly initialised model sized for `dataset`.
    pub fn for_dataset<R: Rng + ?Sized>(
        dataset: &Dataset,
        grid: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let dims = dataset.dims().ok_or_else(|| Error::config("dataset is empty"))?;
        let pp = Self::patch_pixels_for(dims, grid)?;
        Self::new(grid, dataset.class_count(), hidden, pp, rng)
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn patch_pixels(&self) -> usize {
        self.patch_pixels
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    fn check_dims(&self, dims: (usize, usize, usize), len: usize) -> Result<()> {
        let pp = Self::patch_pixels_for(dims, self.grid)?;
        if pp != self.patch_pixels || len != dims.0 * dims.1 * dims.2 {
            return Err(Error::config(alloc::format!(
                "image {dims:?} gives {pp} pixels per patch, model expects {}",
                self.patch_pixels
            )));
        }
        Ok(())
    }

    /// Pixel index in the image layout of element `k` of `vec(patch_n)`.
    /// Patch vectors are ordered (row, column, channel) within the patch.
    fn pixel_index(&self, dims: (usize, usize, usize), n: usize, k: usize) -> usize {
        let (w, h, ch) = dims;
        let (pw, ph) = (w / self.grid, h / self.grid);
        let (pr, pc) = (n / self.grid, n % self.grid);
        let channel = k % ch;
        let cc = (k / ch) % pw;
        let rr = k / (ch * pw);
        ((pr * ph + rr) * w + pc * pw + cc) * ch + channel
    }

    fn trace(&self, dims: (usize, usize, usize), pixels: &[f64]) -> Result<Trace> {
        self.check_dims(dims, pixels.len())?;
        let (pp, d, c) = (self.patch_pixels, self.hidden, self.classes);
        let n_patches = self.grid * self.grid;
        let p = &self.params;

        let mut patches = Vec::with_capacity(n_patches * pp);
        for n in 0..n_patches {
            for k in 0..pp {
                patches.push(pixels[self.pixel_index(dims, n, k)]);
            }
        }

        let mut pre = alloc::vec![0.0; n_patches * d];
        for n in 0..n_patches {
            let z = &mut pre[n * d..(n + 1) * d];
            z.copy_from_slice(&p.b_embed);
            for (i, &x) in patches[n * pp..(n + 1) * pp].iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                for (zd, &w) in z.iter_mut().zip(&p.w_embed[i * d..(i + 1) * d]) {
                    *zd += w * x;
                }
            }
        }
        let feats: Vec<f64> = pre.iter().map(|&z| if z > 0.0 { z } else { 0.0 }).collect();

        let mut mean_feat = alloc::vec![0.0; d];
        for n in 0..n_patches {
            for (m, &f) in mean_feat.iter_mut().zip(&feats[n * d..(n + 1) * d]) {
                *m += f;
            }
        }
        for m in &mut mean_feat {
            *m /= n_patches as f64;
        }

        let mut patch_logits = Vec::with_capacity(n_patches * c);
        for n in 0..n_patches {
            let mut row = p.b_patch.clone();
            for (di, &f) in feats[n * d..(n + 1) * d].iter().enumerate() {
                for (r, &w) in row.iter_mut().zip(&p.w_patch[di * c..(di + 1) * c]) {
                    *r += w * f;
                }
            }
            patch_logits.extend_from_slice(&row);
        }
        let mut image_logits = p.b_img.clone();
        for (di, &f) in mean_feat.iter().enumerate() {
            for (r, &w) in image_logits.iter_mut().zip(&p.w_img[di * c..(di + 1) * c]) {
                *r += w * f;
            }
        }

        Ok(Trace {
            patches,
            pre,
            feats,
            mean_feat,
            outputs: ModelOutputs { patch_logits, image_logits },
        })
    }

    pub fn forward(&self, image: &ImageTensor) -> Result<ModelOutputs> {
        Ok(self.trace(image.dims(), &image.to_f64())?.outputs)
    }

    /// Forward pass over raw `f64` pixels laid out like [`ImageTensor::data`].
    pub fn forward_pixels(&self, dims: (usize, usize, usize), pixels: &[f64]) -> Result<ModelOutputs> {
        Ok(self.trace(dims, pixels)?.outputs)
    }

    /// Image-head class prediction.
    pub fn classify(&self, image: &ImageTensor) -> Result<usize> {
        Ok(losses::argmax(&self.forward(image)?.image_logits))
    }

    /// Accumulates gradients of `w_O·L_O + w_P·L_P` for one sample into
    /// `grads` (scaled by `scale`) and returns `(loss, input gradient)`.
    #[allow(clippy::too_many_arguments)]
    fn backward_one(
        &self,
        dims: (usize, usize, usize),
        pixels: &[f64],
        target: &LabelVector,
        patch_labels: Option<&[usize]>,
        mode: LossMode,
        scale: f64,
        grads: &mut Parameters,
    ) -> Result<(f64, Vec<f64>)> {
        let (pp, d, c) = (self.patch_pixels, self.hidden, self.classes);
        let n_patches = self.grid * self.grid;
        if target.class_count() != c {
            return Err(Error::config(alloc::format!(
                "target has {} classes, model has {c}",
                target.class_count()
            )));
        }
        let t = self.trace(dims, pixels)?;
        let (wo, wp) = mode.weights(self.grid);
        let p = &self.params;

        let mut loss = 0.0;
        let mut g_img = alloc::vec![0.0; c];
        if wo != 0.0 {
            let lo = losses::image_loss(&t.outputs.image_logits, target)?;
            loss += wo * lo;
            let probs = losses::softmax_raw(&t.outputs.image_logits);
            for ((g, &q), &y) in g_img.iter_mut().zip(&probs).zip(target.probs()) {
                *g = wo * (q - y);
            }
        }
        let mut g_patch = alloc::vec![0.0; n_patches * c];
        if wp != 0.0 {
            let labels = patch_labels.ok_or_else(|| {
                Error::config("patch-level loss requested for a sample without patch labels")
            })?;
            if labels.len() != n_patches {
                return Err(Error::config(alloc::format!(
                    "{} patch labels for {n_patches} patches",
                    labels.len()
                )));
            }
            let lp = losses::patch_loss(&t.outputs.patch_logits, labels)?;
            loss += wp * lp;
            for (n, &y) in labels.iter().enumerate() {
                let probs = losses::softmax_raw(&t.outputs.patch_logits[n * c..(n + 1) * c]);
                for (k, q) in probs.into_iter().enumerate() {
                    g_patch[n * c + k] = wp * (q - if k == y { 1.0 } else { 0.0 });
                }
            }
        }
        if !loss.is_finite() {
            return Err(Error::numeric(alloc::format!("non-finite loss {loss}")));
        }

        // image head
        let mut d_mean = alloc::vec![0.0; d];
        for di in 0..d {
            let row = &p.w_img[di * c..(di + 1) * c];
            let mut acc = 0.0;
            for k in 0..c {
                grads.w_img[di * c + k] += scale * t.mean_feat[di] * g_img[k];
                acc += row[k] * g_img[k];
            }
            d_mean[di] = acc / n_patches as f64;
        }
        for (b, g) in grads.b_img.iter_mut().zip(&g_img) {
            *b += scale * g;
        }

        let mut input_grad = alloc::vec![0.0; pixels.len()];
        let mut dz = alloc::vec![0.0; d];
        for n in 0..n_patches {
            let gn = &g_patch[n * c..(n + 1) * c];
            let fnv = &t.feats[n * d..(n + 1) * d];
            for (b, g) in grads.b_patch.iter_mut().zip(gn) {
                *b += scale * g;
            }
            for di in 0..d {
                let row = &p.w_patch[di * c..(di + 1) * c];
                let mut acc = d_mean[di];
                for k in 0..c {
                    grads.w_patch[di * c + k] += scale * fnv[di] * gn[k];
                    acc += row[k] * gn[k];
                }
                dz[di] = if t.pre[n * d + di] > 0.0 { acc } else { 0.0 };
            }
            for (b, g) in grads.b_embed.iter_mut().zip(&dz) {
                *b += scale * g;
            }
            let v = &t.patches[n * pp..(n + 1) * pp];
            for i in 0..pp {
                let wrow = &p.w_embed[i * d..(i + 1) * d];
                let grow = &mut grads.w_embed[i * d..(i + 1) * d];
                let mut acc = 0.0;
                for di in 0..d {
                    grow[di] += scale * v[i] * dz[di];
                    acc += wrow[di] * dz[di];
                }
                input_grad[self.pixel_index(dims, n, i)] += acc;
            }
        }
        Ok((loss, input_grad))
    }

    /// Gradients of the batch-mean loss under `mode`, plus per-sample input
    /// gradients.
    pub fn backward(&self, batch: &[MixedSample], mode: LossMode) -> Result<BatchGradients> {
        if batch.is_empty() {
            return Err(Error::config("empty batch"));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut grads = self.params.zeros_like();
        let mut inputs = Vec::with_capacity(batch.len());
        let mut loss = 0.0;
        for (idx, s) in batch.iter().enumerate() {
            let (l, g) = self
                .backward_one(
                    s.image.dims(),
                    &s.image.to_f64(),
                    &s.image_label,
                    s.patch_labels.as_deref(),
                    mode,
                    scale,
                    &mut grads,
                )
                .map_err(|e| match e {
                    Error::Numeric(m) => Error::numeric(alloc::format!(
                        "{m} (sample {idx}, lambda {}, loss mode {})",
                        s.lambda,
                        mode.as_str()
                    )),
                    other => other,
                })?;
            loss += l * scale;
            inputs.push(g);
        }
        let patch_loss_evaluations = if mode.uses_patches() { batch.len() } else { 0 };
        Ok(BatchGradients { params: grads, inputs, loss, patch_loss_evaluations })
    }

    /// `∂L_O/∂x` against a one-hot label, over raw pixels.
    pub fn image_loss_input_gradient(
        &self,
        dims: (usize, usize, usize),
        pixels: &[f64],
        label: usize,
    ) -> Result<Vec<f64>> {
        let target = LabelVector::one_hot(label, self.classes)?;
        let mut scratch = self.params.zeros_like();
        let (_, g) =
            self.backward_one(dims, pixels, &target, None, LossMode::ImageOnly, 0.0, &mut scratch)?;
        Ok(g)
    }
}

impl PatchPredictor for ReferenceModel {
    fn grid_size(&self) -> usize {
        self.grid
    }

    fn class_count(&self) -> usize {
        self.classes
    }

    fn predict(&self, image: &ImageTensor) -> Result<ModelOutputs> {
        self.forward(image)
    }
}

/// `η_min + (η_0 − η_min)·(1 + cos(π·epoch/total))/2`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr0: f64, eta_min: f64) -> f64 {
    if total_epochs == 0 {
        return lr0;
    }
    if epoch >= total_epochs {
        return eta_min;
    }
    let t = epoch as f64 / total_epochs as f64;
    eta_min + (lr0 - eta_min) * (1.0 + math::cos(core::f64::consts::PI * t)) / 2.0
}

/// SGD with Nesterov momentum and decoupled-from-bias weight decay:
///
/// ```text
/// g' = g + wd·w   (weight blocks only)
/// v  = μ·v + g'
/// w  = w − lr·(g' + μ·v)
/// ```
#[derive(Clone, Debug)]
pub struct SgdNesterov {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Parameters,
}

impl SgdNesterov {
    pub fn new(model: &ReferenceModel, momentum: f64, weight_decay: f64) -> Self {
        SgdNesterov { momentum, weight_decay, velocity: model.params.zeros_like() }
    }

    pub fn velocity(&self) -> &Parameters {
        &self.velocity
    }

    pub fn step(&mut self, model: &mut ReferenceModel, grads: &Parameters, lr: f64) -> Result<()> {
        let (mu, wd) = (self.momentum, self.weight_decay);
        let params = model.params.blocks_mut();
        let vel = self.velocity.blocks_mut();
        for (i, ((w, v), g)) in params.into_iter().zip(vel).zip(grads.blocks()).enumerate() {
            if w.len() != g.len() {
                return Err(Error::config("gradient shape does not match parameters"));
            }
            let decay = if Parameters::is_weight_block(i) { wd } else { 0.0 };
            for ((wk, vk), &gk) in w.iter_mut().zip(v.iter_mut()).zip(g) {
                let g2 = gk + decay * *wk;
                *vk = mu * *vk + g2;
                *wk -= lr * (g2 + mu * *vk);
            }
        }
        if !model.params.is_finite() {
            return Err(Error::numeric("parameters became non-finite after SGD step"));
        }
        Ok(())
    }
}

/// FGSM: `clamp(x + ε·sign(∂L_O/∂x), 0, 1)` against the one-hot `label`.
/// The per-pixel change never exceeds `ε`.
pub fn fgsm_attack(
    model: &ReferenceModel,
    image: &ImageTensor,
    label: usize,
    epsilon: f64,
) -> Result<ImageTensor> {
    if !(epsilon >= 0.0) {
        return Err(Error::config(alloc::format!("epsilon {epsilon} must be non-negative")));
    }
    if epsilon == 0.0 {
        return Ok(image.clone());
    }
    let pixels = image.to_f64();
    let grad = model.image_loss_input_gradient(image.dims(), &pixels, label)?;
    let mut out = image.clone();
    for ((o, &x), &g) in out.data_mut().iter_mut().zip(&pixels).zip(&grad) {
        let step = if g > 0.0 {
            epsilon
        } else if g < 0.0 {
            -epsilon
        } else {
            0.0
        };
        let mut adv = clamp_unit(x + step);
        // rounding to f32 may overshoot the budget by an ulp; pull back toward x
        if (f64::from(adv) - x).abs() > epsilon {
            adv = if f64::from(adv) > x {
                f32::from_bits(adv.to_bits() - 1)
            } else {
                f32::from_bits(adv.to_bits() + 1)
            };
        }
        *o = adv;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn image(w: usize, h: usize, c: usize, seed: u64) -> ImageTensor {
        let mut rng = SeededRng::new(seed, &[]);
        ImageTensor::from_fn(w, h, c, |_, _, _| rng.random::<f64>())
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = ReferenceModel::zeros(2, 4, 3, 4 * 4 * 3 / 4).unwrap();
        let out = m.forward(&image(4, 4, 3, 1)).unwrap();
        assert!(out.image_logits.iter().all(|&z| z == 0.0));
        assert!(out.patch_logits.iter().all(|&z| z == 0.0));
        assert_eq!(out.patch_logits.len(), 4 * 4);
        let probs = losses::softmax(&out.image_logits).unwrap();
        assert!(probs.probs().iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn patch_permutation_equivariance() {
        let mut rng = SeededRng::new(4, &[]);
        let m = ReferenceModel::new(2, 3, 8, 2 * 2, &mut rng).unwrap();
        let x = image(4, 4, 1, 2);
        // swap patch 0 (rows 0-1, cols 0-1) with patch 3 (rows 2-3, cols 2-3)
        let swapped = ImageTensor::from_fn(4, 4, 1, |r, c, ch| {
            let (r2, c2) = if (r < 2) == (c < 2) { ((r + 2) % 4, (c + 2) % 4) } else { (r, c) };
            f64::from(x.get(r2, c2, ch))
        });
        let a = m.forward(&x).unwrap();
        let b = m.forward(&swapped).unwrap();
        assert_eq!(a.patch_row(0), b.patch_row(3));
        assert_eq!(a.patch_row(3), b.patch_row(0));
        assert_eq!(a.patch_row(1), b.patch_row(1));
        for (p, q) in a.image_logits.iter().zip(&b.image_logits) {
            assert!((p - q).abs() < 1e-12);
        }
        assert_eq!(m.forward(&x).unwrap(), a);
    }

    #[test]
    fn forward_rejects_wrong_dims() {
        let m = ReferenceModel::zeros(4, 3, 4, 4 * 4 * 3).unwrap();
        assert!(matches!(m.forward(&image(30, 32, 3, 0)), Err(Error::Config(_))));
        assert!(matches!(m.forward(&image(32, 32, 3, 0)), Err(Error::Config(_))));
        assert!(m.forward(&image(16, 16, 3, 0)).is_ok());
    }

    #[test]
    fn duplicated_batch_same_mean_gradient() {
        let mut rng = SeededRng::new(9, &[]);
        let m = ReferenceModel::new(2, 3, 6, 4, &mut rng).unwrap();
        let batch: Vec<MixedSample> = (0..3)
            .map(|i| MixedSample::plain(image(4, 4, 1, 10 + i), i as usize, 3, 2).unwrap())
            .collect();
        let mut doubled = batch.clone();
        doubled.extend(batch.iter().cloned());
        let g1 = m.backward(&batch, LossMode::Both).unwrap();
        let g2 = m.backward(&doubled, LossMode::Both).unwrap();
        for (a, b) in g1.params.blocks().iter().zip(g2.params.blocks()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        assert!((g1.loss - g2.loss).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_model_has_tiny_gradient() {
        let mut m = ReferenceModel::zeros(2, 3, 4, 4).unwrap();
        m.params_mut().b_embed.fill(1.0);
        m.params_mut().b_img[1] = 30.0;
        m.params_mut().b_patch[1] = 30.0;
        let batch = [MixedSample::plain(image(4, 4, 1, 3), 1, 3, 2).unwrap()];
        let g = m.backward(&batch, LossMode::Both).unwrap();
        assert!(g.params.norm() < 1e-6, "norm {}", g.params.norm());
    }

    #[test]
    fn patch_mode_requires_patch_labels() {
        let m = ReferenceModel::zeros(2, 2, 2, 4).unwrap();
        let mut s = MixedSample::plain(image(4, 4, 1, 3), 1, 2, 2).unwrap();
        s.patch_labels = None;
        assert!(m.backward(core::slice::from_ref(&s), LossMode::ImageOnly).is_ok());
        assert!(matches!(
            m.backward(core::slice::from_ref(&s), LossMode::Both),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_lr(0, 60, 0.1, 0.0), 0.1);
        assert_eq!(cosine_lr(60, 60, 0.1, 0.0), 0.0);
        assert!((cosine_lr(30, 60, 0.1, 0.02) - 0.06).abs() < 1e-15);
    }

    #[test]
    fn sgd_examples() {
        let mut rng = SeededRng::new(1, &[]);
        let model = ReferenceModel::new(1, 2, 2, 1, &mut rng).unwrap();
        let mut grads = model.params().zeros_like();
        for b in grads.blocks_mut() {
            for (i, v) in b.iter_mut().enumerate() {
                *v = 0.1 * (i as f64 + 1.0);
            }
        }

        // vanilla SGD
        let mut m = model.clone();
        SgdNesterov::new(&m, 0.0, 0.0).step(&mut m, &grads, 0.5).unwrap();
        for ((w, w0), g) in m.params().blocks().iter().zip(model.params().blocks()).zip(grads.blocks()) {
            for ((a, b), c) in w.iter().zip(w0.iter()).zip(g.iter()) {
                assert!((a - (b - 0.5 * c)).abs() < 1e-15);
            }
        }

        // fixed point
        let mut m = model.clone();
        SgdNesterov::new(&m, 0.9, 0.0).step(&mut m, &model.params().zeros_like(), 0.5).unwrap();
        assert_eq!(m, model);

        // velocity after two steps on a constant gradient
        let mut m = model.clone();
        let mut opt = SgdNesterov::new(&m, 0.9, 0.0);
        opt.step(&mut m, &grads, 0.01).unwrap();
        opt.step(&mut m, &grads, 0.01).unwrap();
        for (v, g) in opt.velocity().blocks().iter().zip(grads.blocks()) {
            for (a, b) in v.iter().zip(g.iter()) {
                assert!((a - 1.9 * b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn weight_decay_skips_biases() {
        let mut m = ReferenceModel::zeros(1, 2, 2, 1).unwrap();
        m.params_mut().w_embed.fill(1.0);
        m.params_mut().b_embed.fill(1.0);
        let zero = m.params().zeros_like();
        SgdNesterov::new(&m, 0.0, 0.5).step(&mut m, &zero, 1.0).unwrap();
        assert!(m.params().w_embed.iter().all(|&w| w == 0.5));
        assert!(m.params().b_embed.iter().all(|&b| b == 1.0));
    }

    #[test]
    fn fgsm_budget_and_identity() {
        let mut rng = SeededRng::new(2, &[]);
        let m = ReferenceModel::new(2, 3, 5, 4 * 3, &mut rng).unwrap();
        let x = image(4, 4, 3, 8);
        assert_eq!(fgsm_attack(&m, &x, 1, 0.0).unwrap(), x);
        for eps in [0.01, 0.1, 0.2, 0.3, 0.7] {
            let adv = fgsm_attack(&m, &x, 1, eps).unwrap();
            for (a, b) in adv.data().iter().zip(x.data()) {
                assert!((f64::from(*a) - f64::from(*b)).abs() <= eps);
                assert!((0.0..=1.0).contains(a));
            }
        }
        assert!(fgsm_attack(&m, &x, 1, -0.1).is_err());
    }
}
