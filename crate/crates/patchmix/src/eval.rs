//! Clean and FGSM-attacked accuracy.

use std::fmt::Write as _;

use patchmix_core::model::fgsm_attack;
use patchmix_core::train::top1_accuracy;
use patchmix_core::{Dataset, ReferenceModel};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// The perturbation sizes of the standard robustness table.
pub const DEFAULT_EPSILONS: [f64; 3] = [0.1, 0.2, 0.3];

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub clean_top1: f64,
    /// `(ε, adversarial top-1)` in the order requested.
    pub attacks: Vec<(f64, f64)>,
}

pub fn check_model_fits(model: &ReferenceModel, ds: &Dataset) -> Result<()> {
    if model.classes() != ds.class_count() {
        return Err(Error::config(format!(
            "model predicts {} classes, dataset has {}",
            model.classes(),
            ds.class_count()
        )));
    }
    if let Some(dims) = ds.dims() {
        let pp = ReferenceModel::patch_pixels_for(dims, model.grid())?;
        if pp != model.patch_pixels() {
            return Err(Error::config(format!(
                "model expects {} pixels per patch, dataset images give {pp}",
                model.patch_pixels()
            )));
        }
    }
    Ok(())
}

/// Top-1 accuracy on FGSM perturbations of every sample.
pub fn adversarial_top1(model: &ReferenceModel, ds: &Dataset, epsilon: f64) -> Result<f64> {
    if ds.is_empty() {
        return Ok(f64::NAN);
    }
    let hits: Vec<bool> = (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let adv = fgsm_attack(model, ds.image(i), ds.label(i), epsilon)?;
            Ok(model.classify(&adv)? == ds.label(i))
        })
        .collect::<patchmix_core::Result<_>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / ds.len() as f64)
}

pub fn evaluate_model(model: &ReferenceModel, ds: &Dataset, epsilons: &[f64]) -> Result<EvalReport> {
    check_model_fits(model, ds)?;
    let clean_top1 = top1_accuracy(model, ds)?;
    let attacks = epsilons
        .iter()
        .map(|&eps| Ok((eps, adversarial_top1(model, ds, eps)?)))
        .collect::<Result<_>>()?;
    Ok(EvalReport { clean_top1, attacks })
}

pub fn report_csv(report: &EvalReport) -> String {
    let mut out = format!("attack,epsilon,top1\nnone,0,{}\n", report.clean_top1);
    for (eps, acc) in &report.attacks {
        let _ = writeln!(out, "fgsm,{eps},{acc}");
    }
    out
}
