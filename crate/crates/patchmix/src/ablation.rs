//! Loss-term × grid-size ablation grid.

use std::fmt::Write as _;

use patchmix_core::train::train_random_patchmix;
use patchmix_core::{Dataset, LossMode, TrainConfig};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const ABLATION_MODES: [LossMode; 3] = [LossMode::Both, LossMode::ImageOnly, LossMode::PatchOnly];
pub const ABLATION_GRIDS: [usize; 3] = [2, 4, 8];

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub loss_mode: LossMode,
    pub grid: usize,
    pub val_top1: f64,
    pub val_patch_acc: f64,
    pub final_train_loss: f64,
}

/// Trains one Random PatchMix model per (loss mode, grid) cell. Rows come
/// back in mode-major order whatever the thread count.
pub fn run_ablation(train: &Dataset, val: &Dataset, base: &TrainConfig, threads: usize) -> Result<Vec<AblationRow>> {
    let cells: Vec<(LossMode, usize)> =
        ABLATION_MODES.iter().flat_map(|&m| ABLATION_GRIDS.iter().map(move |&g| (m, g))).collect();
    let run = |&(loss_mode, grid): &(LossMode, usize)| -> Result<AblationRow> {
        let cfg = TrainConfig { loss_mode, grid, ..base.clone() };
        let out = train_random_patchmix(train, val, &cfg)?;
        let last = out.metrics.last().expect("at least one epoch");
        Ok(AblationRow {
            loss_mode,
            grid,
            val_top1: last.val_top1,
            val_patch_acc: last.val_patch_acc,
            final_train_loss: last.train_loss,
        })
    };
    if threads <= 1 {
        return cells.iter().map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("cannot start {threads} worker threads: {e}")))?;
    let rows: Vec<Result<AblationRow>> = pool.install(|| cells.par_iter().map(run).collect());
    rows.into_iter().collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("loss_mode,grid,val_top1,val_patch_acc,final_train_loss\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.loss_mode.as_str(),
            r.grid,
            r.val_top1,
            r.val_patch_acc,
            r.final_train_loss
        );
    }
    out
}
