//! Images, labels and datasets shared by every other module.

use alloc::vec::Vec;

use crate::error::{Error, Result};

mod synth;

pub use synth::{synth_shapes, toy_2d_three_class};

/// `W×H×C_in` image with values in `[0, 1]`, stored row-major as
/// `(row, column, channel)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::config(alloc::format!(
                "image data has {} values, expected {}x{}x{} = {}",
                data.len(),
                width,
                height,
                channels,
                width * height * channels
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::config(alloc::format!(
                "image value {} at index {} is outside [0, 1]",
                data[pos],
                pos
            )));
        }
        Ok(ImageTensor { width, height, channels, data })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        ImageTensor {
            width,
            height,
            channels,
            data: alloc::vec![0.0; width * height * channels],
        }
    }

    /// Builds an image from `f(row, col, channel)`, clamping into `[0, 1]`.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(clamp_unit(f(r, c, ch)));
                }
            }
        }
        ImageTensor { width, height, channels, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.width + col) * self.channels + channel
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[self.index(row, col, channel)]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

pub(crate) fn clamp_unit(v: f64) -> f32 {
    let v = v as f32;
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Probability vector over `C` classes.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVector {
    probs: Vec<f64>,
}

impl LabelVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::config("label vector needs at least one class"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::config("label entries must be finite and non-negative"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(alloc::format!("label entries sum to {sum}, not 1")));
        }
        Ok(LabelVector { probs })
    }

    pub fn one_hot(class: usize, class_count: usize) -> Result<Self> {
        if class >= class_count {
            return Err(Error::config(alloc::format!(
                "class {class} out of range for {class_count} classes"
            )));
        }
        let mut probs = alloc::vec![0.0; class_count];
        probs[class] = 1.0;
        Ok(LabelVector { probs })
    }

    /// `λ·e_i + (1−λ)·e_j`.
    pub fn mixed(y_i: usize, y_j: usize, lambda: f64, class_count: usize) -> Result<Self> {
        if y_i >= class_count || y_j >= class_count {
            return Err(Error::config(alloc::format!(
                "classes ({y_i}, {y_j}) out of range for {class_count} classes"
            )));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::config(alloc::format!("mixing ratio {lambda} outside [0, 1]")));
        }
        let mut probs = alloc::vec![0.0; class_count];
        probs[y_i] += lambda;
        probs[y_j] += 1.0 - lambda;
        Ok(LabelVector { probs })
    }

    pub(crate) fn from_softmax(probs: Vec<f64>) -> Self {
        LabelVector { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn class_count(&self) -> usize {
        self.probs.len()
    }

    /// The class index if this label is one-hot.
    pub fn hard_class(&self) -> Option<usize> {
        let pos = self.probs.iter().position(|&p| p == 1.0)?;
        self.probs
            .iter()
            .enumerate()
            .all(|(i, &p)| i == pos || p == 0.0)
            .then_some(pos)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
}

/// Labeled image collection. All images share one shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Vec<ImageTensor>,
    labels: Vec<usize>,
    class_count: usize,
    split: Split,
}

impl Dataset {
    pub fn new(
        images: Vec<ImageTensor>,
        labels: Vec<usize>,
        class_count: usize,
        split: Split,
    ) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::config(alloc::format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if class_count == 0 {
            return Err(Error::config("class_count must be positive"));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::config(alloc::format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        if let Some(first) = images.first() {
            let dims = first.dims();
            if images.iter().any(|im| im.dims() != dims) {
                return Err(Error::config("all images in a dataset must share dimensions"));
            }
        }
        Ok(Dataset { images, labels, class_count, split })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[ImageTensor] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &ImageTensor {
        &self.images[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// `(W, H, C_in)` of the images, `None` when empty.
    pub fn dims(&self) -> Option<(usize, usize, usize)> {
        self.images.first().map(ImageTensor::dims)
    }

    /// Sample indices grouped by class.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = alloc::vec![Vec::new(); self.class_count];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            split: self.split,
        }
    }

    /// Checks that `other` can be used alongside `self` (train/val pairing).
    pub fn check_compatible(&self, other: &Dataset) -> Result<()> {
        if self.class_count != other.class_count {
            return Err(Error::config(alloc::format!(
                "class counts differ: {} vs {}",
                self.class_count,
                other.class_count
            )));
        }
        match (self.dims(), other.dims()) {
            (Some(a), Some(b)) if a != b => Err(Error::config(alloc::format!(
                "image dimensions differ: {a:?} vs {b:?}"
            ))),
            _ => Ok(()),
        }
    }
}
