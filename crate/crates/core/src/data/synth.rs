//! Seeded synthetic datasets for desk-scale runs.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, ImageTensor, Split};
use crate::error::{Error, Result};
use crate::math;
use crate::rng::{tags, SeededRng};

/// Per-pixel noise standard deviation for [`synth_shapes`].
const PIXEL_NOISE: f64 = 0.06;
/// Per-image brightness jitter for [`synth_shapes`].
const BRIGHTNESS_JITTER: f64 = 0.04;

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h - math::floor(h)) * 6.0;
    let sector = math::floor(h6);
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as u32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Full-image textured classes: class `k` gets its own hue and stripe
/// orientation/period, so every patch region carries the class signal.
///
/// Samples are interleaved by class (`0, 1, …, C−1, 0, 1, …`).
pub fn synth_shapes(
    class_count: usize,
    image_size: usize,
    samples_per_class: usize,
    seed: u64,
) -> Result<Dataset> {
    if image_size % 4 != 0 || image_size < 16 {
        return Err(Error::config(alloc::format!(
            "image_size {image_size} must be a multiple of 4 and at least 16"
        )));
    }
    if !(2..=16).contains(&class_count) {
        return Err(Error::config(alloc::format!(
            "class_count {class_count} must lie in [2, 16]"
        )));
    }
    let noise = Normal::new(0.0, PIXEL_NOISE).expect("valid std");
    let jitter = Normal::new(0.0, BRIGHTNESS_JITTER).expect("valid std");
    let root = SeededRng::new(seed, &[tags::SYNTH]);

    let mut images = Vec::with_capacity(class_count * samples_per_class);
    let mut labels = Vec::with_capacity(class_count * samples_per_class);
    for s in 0..samples_per_class {
        for k in 0..class_count {
            let mut rng = root.child(s as u64).child(k as u64);
            let color = hsv_to_rgb(k as f64 / class_count as f64, 0.75, 0.85);
            let theta = PI * k as f64 / class_count as f64;
            let period = 3.0 + (k % 3) as f64 * 2.0;
            let freq = 2.0 * PI / period;
            let phase = rng.random::<f64>() * 2.0 * PI;
            let brightness = jitter.sample(&mut rng);
            let (ct, st) = (math::cos(theta), math::sin(theta));
            let image = ImageTensor::from_fn(image_size, image_size, 3, |r, c, ch| {
                let stripe = 0.5 + 0.5 * math::sin(freq * (c as f64 * ct + r as f64 * st) + phase);
                0.65 * color[ch] + 0.25 * stripe + brightness + noise.sample(&mut rng)
            });
            images.push(image);
            labels.push(k);
        }
    }
    Dataset::new(images, labels, class_count, Split::Train)
}

/// Cluster centres of the three-class toy problem, roughly an equilateral
/// triangle inside the unit square.
pub const TOY_CENTERS: [[f64; 2]; 3] = [[0.25, 0.25], [0.75, 0.25], [0.5, 0.68]];
/// Standard deviation of each toy cluster.
pub const TOY_STD: f64 = 0.05;

/// Three Gaussian clusters in 2-D, stored as `2×1×1` images (width 2,
/// height 1) so the mixing code applies unchanged.
pub fn toy_2d_three_class(samples_per_class: usize, seed: u64) -> Result<Dataset> {
    if samples_per_class == 0 {
        return Err(Error::config("samples_per_class must be at least 1"));
    }
    let noise = Normal::new(0.0, TOY_STD).expect("valid std");
    let mut rng = SeededRng::new(seed, &[tags::SYNTH, 2]);
    let mut images = Vec::with_capacity(3 * samples_per_class);
    let mut labels = Vec::with_capacity(3 * samples_per_class);
    for _ in 0..samples_per_class {
        for (k, center) in TOY_CENTERS.iter().enumerate() {
            let x = center[0] + noise.sample(&mut rng);
            let y = center[1] + noise.sample(&mut rng);
            images.push(ImageTensor::from_fn(2, 1, 1, |_, c, _| if c == 0 { x } else { y }));
            labels.push(k);
        }
    }
    Dataset::new(images, labels, 3, Split::Train)
}
