//! The four-phase guided workflow and its run directory.

use std::path::PathBuf;

use log::info;
use patchmix_core::evolution::{evaluate_fitness, run_search, SearchOutcome};
use patchmix_core::guided::{generate_guided_set, train_guided, GuidedSample};
use patchmix_core::mixing::patchmix;
use patchmix_core::rng::tags;
use patchmix_core::train::{evaluate, train_random_patchmix, TrainOutcome};
use patchmix_core::{ClassPairIndex, Dataset, Individual, ReferenceModel, SearchConfig, SeededRng};
use rand::seq::SliceRandom;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::formats;
use crate::parallel::ParallelFitness;

/// File layout of a run directory.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        RunPaths { dir: dir.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.dir.join("config.toml")
    }
    pub fn f_t(&self) -> PathBuf {
        self.dir.join("f_t.pmxm")
    }
    pub fn f_t_metrics(&self) -> PathBuf {
        self.dir.join("f_t_metrics.csv")
    }
    pub fn history(&self) -> PathBuf {
        self.dir.join("search_history.csv")
    }
    pub fn best_individual(&self) -> PathBuf {
        self.dir.join("best_individual.txt")
    }
    pub fn population(&self) -> PathBuf {
        self.dir.join("population.txt")
    }
    pub fn manifest(&self) -> PathBuf {
        self.dir.join("guided_manifest.csv")
    }
    pub fn f_o(&self) -> PathBuf {
        self.dir.join("f_o.pmxm")
    }
    pub fn f_o_metrics(&self) -> PathBuf {
        self.dir.join("f_o_metrics.csv")
    }
    pub fn summary(&self) -> PathBuf {
        self.dir.join("summary.csv")
    }
}

/// Writes the config snapshot. The output directory is recorded as `.`
/// so the snapshot resolves to the directory it lives in.
pub fn write_snapshot(cfg: &RunConfig, paths: &RunPaths) -> Result<()> {
    let snapshot = RunConfig { output_dir: PathBuf::from("."), ..cfg.clone() };
    formats::write_bytes(&paths.config(), snapshot.to_toml().as_bytes())
}

/// Stratified subset: `⌈fraction·n_c⌉` (at least one) samples per class.
pub fn stratified_subset(ds: &Dataset, fraction: f64, seed: u64) -> Dataset {
    let mut rng = SeededRng::new(seed, &[tags::VAL_SUBSET]);
    let mut chosen = Vec::new();
    for mut members in ds.indices_by_class() {
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let take = ((fraction * members.len() as f64).ceil() as usize).clamp(1, members.len());
        chosen.extend_from_slice(&members[..take]);
    }
    chosen.sort_unstable();
    ds.subset(&chosen)
}

/// Phase 1: Random PatchMix training of the fitness model `f_T`.
pub fn train_fitness_model(cfg: &RunConfig, train: &Dataset, val: &Dataset, paths: &RunPaths) -> Result<TrainOutcome> {
    let out = train_random_patchmix(train, val, &cfg.train)?;
    formats::save_model(&out.model, &paths.f_t())?;
    formats::write_bytes(&paths.f_t_metrics(), formats::metrics_csv(&out.metrics).as_bytes())?;
    Ok(out)
}

/// Phase 2: genetic search scored by `f_T` on a validation subset.
pub fn search_masks(cfg: &RunConfig, f_t: &ReferenceModel, val: &Dataset, paths: &RunPaths) -> Result<SearchOutcome> {
    let subset = stratified_subset(val, cfg.search.val_fraction, cfg.search.seed);
    let search = &cfg.search;
    let fitness = ParallelFitness::new(
        |ind: &Individual, generation: usize| evaluate_fitness(ind, f_t, &subset, search, generation),
        cfg.threads,
    )?;
    let outcome = run_search(search, val.class_count(), f_t.grid(), &fitness)?;
    write_search(search, val.class_count(), f_t.grid(), &outcome, paths)?;
    Ok(outcome)
}

pub fn write_search(search: &SearchConfig, classes: usize, grid: usize, outcome: &SearchOutcome, paths: &RunPaths) -> Result<()> {
    let n = search.max_active_for(classes);
    formats::write_bytes(&paths.history(), formats::history_csv(&outcome.history).as_bytes())?;
    formats::write_bytes(
        &paths.best_individual(),
        formats::individual_to_text(&outcome.best, classes, grid, n).as_bytes(),
    )?;
    formats::write_bytes(
        &paths.population(),
        formats::population_to_text(&outcome.population, classes, grid, n).as_bytes(),
    )
}

/// Phase 3: materialises the guided set from the best individual.
pub fn generate_guided(cfg: &RunConfig, best: &Individual, train: &Dataset, paths: &RunPaths) -> Result<Vec<GuidedSample>> {
    let count = cfg.guided.guided_set_size.unwrap_or(train.len());
    let mut rng = SeededRng::new(cfg.train.seed, &[tags::GUIDED_SET]);
    let guided = generate_guided_set(best, train, count, &mut rng)?;
    formats::write_bytes(&paths.manifest(), formats::manifest_csv(&guided).as_bytes())?;
    Ok(guided)
}

/// Rebuilds guided samples from a manifest and the individual it was drawn from.
pub fn guided_from_manifest(best: &Individual, train: &Dataset, rows: &[(usize, usize, usize)]) -> Result<Vec<GuidedSample>> {
    let pairs = ClassPairIndex::new(train.class_count());
    rows.iter()
        .map(|&(slot, a, b)| {
            if slot >= pairs.len() || !best.is_active(slot) {
                return Err(Error::format(format!("manifest slot {slot} is not active in the individual")));
            }
            if a >= train.len() || b >= train.len() {
                return Err(Error::format(format!("manifest source index out of range: ({a}, {b})")));
            }
            let (ci, cj) = pairs.pair(slot);
            if train.label(a) != ci || train.label(b) != cj {
                return Err(Error::format(format!("manifest sources ({a}, {b}) do not belong to pair ({ci},{cj})")));
            }
            let sample = patchmix(train.image(a), ci, train.image(b), cj, best.mask(slot), train.class_count())?;
            Ok(GuidedSample { sample, slot, pair: (ci, cj), sources: (a, b) })
        })
        .collect()
}

/// Phase 4: trains `f_O` on original, random-mixed and guided samples.
pub fn train_final_model(
    cfg: &RunConfig,
    train: &Dataset,
    val: &Dataset,
    guided: &[GuidedSample],
    paths: &RunPaths,
) -> Result<TrainOutcome> {
    let out = train_guided(train, val, guided, cfg.guided.ratio, &cfg.train)?;
    formats::save_model(&out.model, &paths.f_o())?;
    formats::write_bytes(&paths.f_o_metrics(), formats::metrics_csv(&out.metrics).as_bytes())?;
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct PipelineReport {
    /// Phase 1 was skipped because `f_t.pmxm` already existed.
    pub resumed: bool,
    pub f_t_val_top1: f64,
    pub f_o_val_top1: f64,
    pub best: Individual,
    pub generations_run: usize,
    pub patch_loss_evaluations_phase4: usize,
}

/// Runs all four phases into `cfg.output_dir`. An existing `f_t.pmxm`
/// there is reused instead of retraining.
pub fn run_pipeline(cfg: &RunConfig, train: &Dataset, val: &Dataset) -> Result<PipelineReport> {
    cfg.validate()?;
    let paths = RunPaths::new(&cfg.output_dir);
    write_snapshot(cfg, &paths)?;

    let f_t_path = paths.f_t();
    let (f_t, resumed) = if f_t_path.is_file() {
        info!("skipping phase 1: found existing {}", f_t_path.display());
        let model = formats::load_model(&f_t_path).map_err(|e| e.in_phase("phase 1 (resume)"))?;
        (model, true)
    } else {
        info!("phase 1: training f_T with Random PatchMix for {} epochs", cfg.train.epochs);
        let out = train_fitness_model(cfg, train, val, &paths).map_err(|e| e.in_phase("phase 1 (random PatchMix)"))?;
        (out.model, false)
    };
    let f_t_val_top1 = evaluate(&f_t, val).map_err(|e| Error::from(e).in_phase("phase 1 (evaluation)"))?.top1;
    info!("f_T val top-1 {f_t_val_top1:.4}");

    info!("phase 2: genetic search, population {}, up to {} generations", cfg.search.population_size, cfg.search.generations);
    let search = search_masks(cfg, &f_t, val, &paths).map_err(|e| e.in_phase("phase 2 (search)"))?;
    let pairs = ClassPairIndex::new(val.class_count());
    info!(
        "best fitness {} with pairs {}",
        search.best.fitness().unwrap_or(f64::INFINITY),
        patchmix_core::evolution::format_pairs(&search.best.active_pairs(&pairs))
    );

    info!("phase 3: generating guided samples");
    let guided = generate_guided(cfg, &search.best, train, &paths).map_err(|e| e.in_phase("phase 3 (guided set)"))?;

    info!("phase 4: training f_O on {} guided samples plus original and random mixes", guided.len());
    let f_o = train_final_model(cfg, train, val, &guided, &paths).map_err(|e| e.in_phase("phase 4 (guided training)"))?;
    let f_o_val_top1 = f_o.metrics.last().map_or(f64::NAN, |m| m.val_top1);
    info!("f_O val top-1 {f_o_val_top1:.4}");

    let summary = format!(
        "key,value\nf_t_val_top1,{f_t_val_top1}\nf_o_val_top1,{f_o_val_top1}\nbest_fitness,{}\ngenerations_run,{}\n",
        search.best.fitness().unwrap_or(f64::INFINITY),
        search.history.len() - 1
    );
    formats::write_bytes(&paths.summary(), summary.as_bytes())?;

    Ok(PipelineReport {
        resumed,
        f_t_val_top1,
        f_o_val_top1,
        best: search.best,
        generations_run: search.history.len() - 1,
        patch_loss_evaluations_phase4: f_o.patch_loss_evaluations,
    })
}
