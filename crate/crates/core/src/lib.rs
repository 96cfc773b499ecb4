//! Grid-mask pairwise image interpolation with patch-level supervision.
//!
//! This crate holds the allocation-only algorithmic core:
//!
//! * [`masks`]: `P×P` binary patch masks and their pixel expansion.
//! * [`mixing`]: PatchMix composition plus the Mixup and CutMix baselines.
//! * [`losses`]: image-level, patch-level and combined losses.
//! * [`model`]: a small hand-differentiated patch classifier, SGD with
//!   Nesterov momentum, cosine annealing, FGSM.
//! * [`train`]: the Random PatchMix training loop.
//! * [`evolution`]: genetic search over class-pair masks.
//! * [`guided`]: guided sample generation and phase-4 batch composition.
//!
//! Everything that touches the filesystem lives in the `patchmix` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod evolution;
pub mod guided;
pub mod losses;
pub mod masks;
mod math;
pub mod mixing;
pub mod model;
pub mod rng;
pub mod train;

pub use data::{Dataset, ImageTensor, LabelVector, Split};
pub use error::{Error, Result};
pub use evolution::{ClassPairIndex, Individual, Objective, SearchConfig};
pub use losses::{LossMode, ModelOutputs};
pub use masks::{PatchMask, PixelMask};
pub use mixing::MixedSample;
pub use model::{Parameters, PatchPredictor, ReferenceModel};
pub use rng::SeededRng;
pub use train::TrainConfig;
