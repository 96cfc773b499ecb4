//! Genetic search over class-pair activations and per-pair patch masks.
//!
//! A genome has a *head* of `C·(C+1)/2` activation flags, one per unordered
//! class pair, and a *tail* of one [`PatchMask`] per pair slot. At most `N`
//! slots may be active. Scores are minimised: lower is fitter.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses;
use crate::masks::PatchMask;
use crate::mixing;
use crate::model::PatchPredictor;
use crate::rng::{tags, SeededRng};

/// Row-major upper-triangular enumeration of unordered class pairs
/// `(i, j)`, `i ≤ j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassPairIndex {
    classes: usize,
}

impl ClassPairIndex {
    pub fn new(classes: usize) -> Self {
        ClassPairIndex { classes }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.classes * (self.classes + 1) / 2
    }

    pub fn is_empty(&self) -> bool {
        self.classes == 0
    }

    /// Slot index of `(i, j)`; order of the arguments does not matter.
    pub fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        assert!(j < self.classes, "class {j} out of range");
        // rows before i hold C + (C-1) + ... + (C-i+1) slots
        i * self.classes - i * (i.saturating_sub(1)) / 2 + (j - i)
    }

    pub fn pair(&self, k: usize) -> (usize, usize) {
        assert!(k < self.len(), "pair slot {k} out of range");
        let mut rest = k;
        for i in 0..self.classes {
            let row = self.classes - i;
            if rest < row {
                return (i, i + rest);
            }
            rest -= row;
        }
        unreachable!()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.classes).flat_map(move |i| (i..self.classes).map(move |j| (i, j)))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Objective {
    /// Challenging configurations: low patch accuracy is fit.
    #[default]
    MinPatchAcc,
    MaxPatchAcc,
    #[cfg_attr(feature = "serde", serde(rename = "min_lp"))]
    MinLp,
    #[cfg_attr(feature = "serde", serde(rename = "max_lp"))]
    MaxLp,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::MinPatchAcc => "min_patch_acc",
            Objective::MaxPatchAcc => "max_patch_acc",
            Objective::MinLp => "min_lp",
            Objective::MaxLp => "max_lp",
        }
    }
}

impl core::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min_patch_acc" => Ok(Objective::MinPatchAcc),
            "max_patch_acc" => Ok(Objective::MaxPatchAcc),
            "min_lp" => Ok(Objective::MinLp),
            "max_lp" => Ok(Objective::MaxLp),
            other => Err(Error::config(alloc::format!("unknown objective {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SearchConfig {
    pub population_size: usize,
    pub generations: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub tournament_size: usize,
    /// Maximum number of active pairs `N`; `None` means the class count.
    pub max_active: Option<usize>,
    pub force_same_class: bool,
    pub objective: Objective,
    /// Validation image pairs drawn per active pair (`S`).
    pub pairs_per_combo: usize,
    /// Fraction of the validation set used for fitness.
    pub val_fraction: f64,
    /// Generations without improvement before stopping early.
    pub patience: usize,
    pub seed: u64,
}

/// Generation count used in the original large-scale runs; the default here
/// is the desk-scale 60.
pub const FULL_SCALE_GENERATIONS: usize = 250;

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            population_size: 500,
            generations: 60,
            crossover_prob: 0.5,
            mutation_prob: 0.3,
            tournament_size: 3,
            max_active: None,
            force_same_class: false,
            objective: Objective::MinPatchAcc,
            pairs_per_combo: 32,
            val_fraction: 0.25,
            patience: 50,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.crossover_prob) || !(0.0..=1.0).contains(&self.mutation_prob) {
            return Err(Error::config("crossover_prob and mutation_prob must lie in [0, 1]"));
        }
        if self.tournament_size < 2 {
            return Err(Error::config("tournament_size must be at least 2"));
        }
        if self.population_size == 0 {
            return Err(Error::config("population_size must be positive"));
        }
        if self.pairs_per_combo == 0 {
            return Err(Error::config("pairs_per_combo must be positive"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction <= 1.0) {
            return Err(Error::config("val_fraction must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn max_active_for(&self, classes: usize) -> usize {
        self.max_active.unwrap_or(classes)
    }
}

/// Shape and constraints shared by every genome in one search.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GenomeSpec {
    pub pairs: ClassPairIndex,
    pub grid: usize,
    pub max_active: usize,
    pub force_same_class: bool,
}

impl GenomeSpec {
    pub fn new(cfg: &SearchConfig, classes: usize, grid: usize) -> Result<Self> {
        let pairs = ClassPairIndex::new(classes);
        let max_active = cfg.max_active_for(classes);
        if classes == 0 || grid == 0 {
            return Err(Error::config("class count and grid size must be positive"));
        }
        if max_active > pairs.len() {
            return Err(Error::config(alloc::format!(
                "N = {max_active} exceeds the {} available class pairs",
                pairs.len()
            )));
        }
        if cfg.force_same_class && max_active < classes {
            return Err(Error::config(alloc::format!(
                "N = {max_active} cannot hold the {classes} forced same-class pairs"
            )));
        }
        Ok(GenomeSpec { pairs, grid, max_active, force_same_class: cfg.force_same_class })
    }

    fn is_forced(&self, slot: usize) -> bool {
        if !self.force_same_class {
            return false;
        }
        let (i, j) = self.pairs.pair(slot);
        i == j
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Individual {
    head: Vec<bool>,
    masks: Vec<PatchMask>,
    fitness: Option<f64>,
}

impl Individual {
    pub fn new(head: Vec<bool>, masks: Vec<PatchMask>) -> Result<Self> {
        if head.len() != masks.len() {
            return Err(Error::config(alloc::format!(
                "{} head flags but {} masks",
                head.len(),
                masks.len()
            )));
        }
        if let Some(first) = masks.first() {
            if masks.iter().any(|m| m.grid_size() != first.grid_size()) {
                return Err(Error::config("all masks of an individual must share a grid size"));
            }
        }
        Ok(Individual { head, masks, fitness: None })
    }

    pub fn head(&self) -> &[bool] {
        &self.head
    }

    pub fn masks(&self) -> &[PatchMask] {
        &self.masks
    }

    pub fn mask(&self, slot: usize) -> &PatchMask {
        &self.masks[slot]
    }

    pub fn is_active(&self, slot: usize) -> bool {
        self.head[slot]
    }

    pub fn active_slots(&self) -> impl Iterator<Item = usize> + '_ {
        self.head.iter().enumerate().filter(|(_, &a)| a).map(|(k, _)| k)
    }

    pub fn active_count(&self) -> usize {
        self.head.iter().filter(|&&a| a).count()
    }

    pub fn fitness(&self) -> Option<f64> {
        self.fitness
    }

    pub fn set_fitness(&mut self, score: f64) {
        self.fitness = Some(score);
    }

    pub fn invalidate(&mut self) {
        self.fitness = None;
    }

    /// Equality of head and tail, ignoring the cached fitness.
    pub fn same_genome(&self, other: &Individual) -> bool {
        self.head == other.head && self.masks == other.masks
    }

    /// Active pairs as class tuples.
    pub fn active_pairs(&self, pairs: &ClassPairIndex) -> Vec<(usize, usize)> {
        self.active_slots().map(|k| pairs.pair(k)).collect()
    }

    pub fn set_active(&mut self, slot: usize, active: bool) {
        self.head[slot] = active;
        self.fitness = None;
    }

    pub fn set_mask(&mut self, slot: usize, mask: PatchMask) {
        self.masks[slot] = mask;
        self.fitness = None;
    }
}

/// Random population: each individual activates `N` pairs (forced
/// same-class slots first, when enabled) and draws uniform bits for every
/// mask slot.
pub fn init_population(
    cfg: &SearchConfig,
    classes: usize,
    grid: usize,
    rng: &mut SeededRng,
) -> Result<Vec<Individual>> {
    cfg.validate()?;
    let spec = GenomeSpec::new(cfg, classes, grid)?;
    Ok((0..cfg.population_size).map(|_| random_individual(&spec, rng)).collect())
}

pub fn random_individual<R: Rng + ?Sized>(spec: &GenomeSpec, rng: &mut R) -> Individual {
    let slots = spec.pairs.len();
    let mut head = alloc::vec![false; slots];
    let free: Vec<usize> = (0..slots).filter(|&k| !spec.is_forced(k)).collect();
    let forced = slots - free.len();
    for (k, h) in head.iter_mut().enumerate() {
        *h = spec.is_forced(k);
    }
    let want = spec.max_active.saturating_sub(forced).min(free.len());
    for pick in index::sample(rng, free.len(), want) {
        head[free[pick]] = true;
    }
    let masks = (0..slots).map(|_| PatchMask::uniform(spec.grid, rng)).collect();
    Individual { head, masks, fitness: None }
}

/// Forces same-class slots on (when enabled) and deactivates random
/// non-forced slots until at most `N` are active.
pub fn repair<R: Rng + ?Sized>(ind: &mut Individual, spec: &GenomeSpec, rng: &mut R) {
    for k in 0..ind.head.len() {
        if spec.is_forced(k) && !ind.head[k] {
            ind.head[k] = true;
            ind.fitness = None;
        }
    }
    let active = ind.active_count();
    if active > spec.max_active {
        let removable: Vec<usize> = ind.active_slots().filter(|&k| !spec.is_forced(k)).collect();
        for pick in index::sample(rng, removable.len(), active - spec.max_active) {
            ind.head[removable[pick]] = false;
        }
        ind.fitness = None;
    }
}

/// Mask crossover copies the left `⌊P/2⌋` columns from one parent and the
/// rest from the other; heads use one-point crossover followed by
/// [`repair`].
pub fn crossover<R: Rng + ?Sized>(
    a: &Individual,
    b: &Individual,
    spec: &GenomeSpec,
    rng: &mut R,
) -> (Individual, Individual) {
    let slots = a.head.len();
    let cut = if slots >= 2 { rng.random_range(1..slots) } else { 0 };
    let mut h1 = a.head[..cut].to_vec();
    h1.extend_from_slice(&b.head[cut..]);
    let mut h2 = b.head[..cut].to_vec();
    h2.extend_from_slice(&a.head[cut..]);

    let split = spec.grid / 2;
    let mut m1 = Vec::with_capacity(slots);
    let mut m2 = Vec::with_capacity(slots);
    for (ma, mb) in a.masks.iter().zip(&b.masks) {
        let (mut x, mut y) = (ma.clone(), mb.clone());
        for r in 0..spec.grid {
            for c in split..spec.grid {
                x.set(r, c, mb.get(r, c));
                y.set(r, c, ma.get(r, c));
            }
        }
        m1.push(x);
        m2.push(y);
    }
    let mut o1 = Individual { head: h1, masks: m1, fitness: None };
    let mut o2 = Individual { head: h2, masks: m2, fitness: None };
    repair(&mut o1, spec, rng);
    repair(&mut o2, spec, rng);
    (o1, o2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MutationOp {
    /// Invert every bit of every active mask.
    FlipTails,
    /// Transpose every active mask.
    Transpose,
    /// Re-draw which non-forced slots are active, keeping the count.
    FlipHeads,
    /// Flip each bit of each active mask with probability
    /// [`RANDOM_TAILS_FLIP_PROB`].
    RandomTails,
}

pub const RANDOM_TAILS_FLIP_PROB: f64 = 0.1;

impl MutationOp {
    pub const ALL: [MutationOp; 4] =
        [MutationOp::FlipTails, MutationOp::Transpose, MutationOp::FlipHeads, MutationOp::RandomTails];
}

pub fn apply_mutation<R: Rng + ?Sized>(
    ind: &mut Individual,
    op: MutationOp,
    spec: &GenomeSpec,
    rng: &mut R,
) {
    let active: Vec<usize> = ind.active_slots().collect();
    match op {
        MutationOp::FlipTails => {
            for k in active {
                ind.masks[k] = ind.masks[k].complement();
            }
        }
        MutationOp::Transpose => {
            for k in active {
                ind.masks[k] = ind.masks[k].transpose();
            }
        }
        MutationOp::FlipHeads => {
            let free: Vec<usize> = (0..ind.head.len()).filter(|&k| !spec.is_forced(k)).collect();
            let count = free.iter().filter(|&&k| ind.head[k]).count();
            for &k in &free {
                ind.head[k] = false;
            }
            for pick in index::sample(rng, free.len(), count) {
                ind.head[free[pick]] = true;
            }
        }
        MutationOp::RandomTails => {
            for k in active {
                for bit in ind.masks[k].bits_mut() {
                    if rng.random_bool(RANDOM_TAILS_FLIP_PROB) {
                        *bit = !*bit;
                    }
                }
            }
        }
    }
    ind.fitness = None;
    repair(ind, spec, rng);
}

/// Applies one uniformly chosen mutation operator and returns it.
pub fn mutate<R: Rng + ?Sized>(ind: &mut Individual, spec: &GenomeSpec, rng: &mut R) -> MutationOp {
    let op = MutationOp::ALL[rng.random_range(0..MutationOp::ALL.len())];
    apply_mutation(ind, op, spec, rng);
    op
}

/// `k` uniform draws with replacement; the lowest score wins, ties going to
/// the earliest draw. Returns the population index.
pub fn tournament_select<R: Rng + ?Sized>(population: &[Individual], k: usize, rng: &mut R) -> Result<usize> {
    if population.is_empty() {
        return Err(Error::config("tournament on an empty population"));
    }
    let mut best: Option<(usize, f64)> = None;
    for _ in 0..k.max(1) {
        let i = rng.random_range(0..population.len());
        let score = population[i]
            .fitness
            .ok_or_else(|| Error::config(alloc::format!("individual {i} has no cached fitness")))?;
        if best.is_none_or(|(_, s)| score < s) {
            best = Some((i, score));
        }
    }
    Ok(best.expect("at least one draw").0)
}

/// Scores an individual for a given generation. Lower is fitter.
pub trait Fitness {
    fn score(&self, individual: &Individual, generation: usize) -> Result<f64>;

    /// Scores `(population index, individual)` pairs; results follow input order.
    fn score_batch(&self, generation: usize, batch: &[(usize, &Individual)]) -> Result<Vec<f64>> {
        batch
            .iter()
            .map(|&(idx, ind)| {
                self.score(ind, generation).map_err(|e| wrap_fitness_error(e, generation, idx))
            })
            .collect()
    }
}

pub fn wrap_fitness_error(e: Error, generation: usize, individual: usize) -> Error {
    match e {
        e @ Error::Fitness { .. } => e,
        other => Error::Fitness { generation, individual, message: alloc::format!("{other}") },
    }
}

impl<F> Fitness for F
where
    F: Fn(&Individual, usize) -> Result<f64>,
{
    fn score(&self, individual: &Individual, generation: usize) -> Result<f64> {
        self(individual, generation)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationRecord {
    pub generation: usize,
    /// Best-ever score (hall of fame) after this generation.
    pub best: f64,
    /// Mean of the finite scores in the population.
    pub mean: f64,
    /// Active pairs of the best-ever individual.
    pub best_active_pairs: Vec<(usize, usize)>,
    /// Number of individuals with each pair slot active.
    pub census: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub best: Individual,
    pub history: Vec<GenerationRecord>,
    pub population: Vec<Individual>,
}

fn evaluate_invalid<F: Fitness + ?Sized>(
    population: &mut [Individual],
    generation: usize,
    fitness: &F,
) -> Result<()> {
    let pending: Vec<(usize, &Individual)> =
        population.iter().enumerate().filter(|(_, ind)| ind.fitness.is_none()).collect();
    if pending.is_empty() {
        return Ok(());
    }
    let indices: Vec<usize> = pending.iter().map(|(i, _)| *i).collect();
    let scores = fitness.score_batch(generation, &pending)?;
    if scores.len() != indices.len() {
        return Err(Error::config("fitness returned the wrong number of scores"));
    }
    for (i, s) in indices.into_iter().zip(scores) {
        if s.is_nan() {
            return Err(Error::Fitness { generation, individual: i, message: "NaN score".into() });
        }
        population[i].fitness = Some(s);
    }
    Ok(())
}

/// Index of the fittest individual; ties go to the lowest index.
fn best_index(population: &[Individual]) -> usize {
    let mut best = 0;
    for (i, ind) in population.iter().enumerate() {
        if ind.fitness.unwrap_or(f64::INFINITY) < population[best].fitness.unwrap_or(f64::INFINITY) {
            best = i;
        }
    }
    best
}

/// Index of the least fit individual; ties go to the highest index.
fn worst_index(population: &[Individual]) -> usize {
    let mut worst = 0;
    for (i, ind) in population.iter().enumerate() {
        if ind.fitness.unwrap_or(f64::INFINITY) >= population[worst].fitness.unwrap_or(f64::INFINITY) {
            worst = i;
        }
    }
    worst
}

fn record(generation: usize, population: &[Individual], best: &Individual, spec: &GenomeSpec) -> GenerationRecord {
    let finite: Vec<f64> = population.iter().filter_map(|i| i.fitness).filter(|s| s.is_finite()).collect();
    let mean = if finite.is_empty() { f64::NAN } else { finite.iter().sum::<f64>() / finite.len() as f64 };
    let mut census = alloc::vec![0usize; spec.pairs.len()];
    for ind in population {
        for k in ind.active_slots() {
            census[k] += 1;
        }
    }
    GenerationRecord {
        generation,
        best: best.fitness.unwrap_or(f64::INFINITY),
        mean,
        best_active_pairs: best.active_pairs(&spec.pairs),
        census,
    }
}

/// Generational GA: tournament selection, pairwise crossover with
/// probability `crossover_prob`, mutation with probability `mutation_prob`,
/// re-evaluation of changed offspring and a hall of fame of one that is
/// always kept in the population. Stops after `generations` generations or
/// `patience` generations without improvement of the best score.
pub fn run_search<F: Fitness + ?Sized>(
    cfg: &SearchConfig,
    classes: usize,
    grid: usize,
    fitness: &F,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    let spec = GenomeSpec::new(cfg, classes, grid)?;
    let mut init_rng = SeededRng::new(cfg.seed, &[tags::SEARCH_INIT]);
    let mut population = init_population(cfg, classes, grid, &mut init_rng)?;
    evaluate_invalid(&mut population, 0, fitness)?;

    let mut hall = population[best_index(&population)].clone();
    let mut history = alloc::vec![record(0, &population, &hall, &spec)];
    let mut stale = 0usize;

    for generation in 1..=cfg.generations {
        let mut rng = SeededRng::new(cfg.seed, &[tags::SEARCH_GENERATION, generation as u64]);
        let mut offspring = Vec::with_capacity(population.len());
        for _ in 0..population.len() {
            let i = tournament_select(&population, cfg.tournament_size, &mut rng)?;
            offspring.push(population[i].clone());
        }
        for i in (1..offspring.len()).step_by(2) {
            if rng.random_bool(cfg.crossover_prob) {
                let (a, b) = crossover(&offspring[i - 1], &offspring[i], &spec, &mut rng);
                offspring[i - 1] = a;
                offspring[i] = b;
            }
        }
        for ind in &mut offspring {
            if rng.random_bool(cfg.mutation_prob) {
                mutate(ind, &spec, &mut rng);
            }
        }
        evaluate_invalid(&mut offspring, generation, fitness)?;

        let hall_score = hall.fitness.unwrap_or(f64::INFINITY);
        let top = best_index(&offspring);
        let top_score = offspring[top].fitness.unwrap_or(f64::INFINITY);
        if top_score < hall_score {
            hall = offspring[top].clone();
            stale = 0;
        } else {
            stale += 1;
            if !offspring.iter().any(|o| o.same_genome(&hall)) {
                let w = worst_index(&offspring);
                offspring[w] = hall.clone();
            }
        }
        population = offspring;
        history.push(record(generation, &population, &hall, &spec));
        if stale >= cfg.patience {
            break;
        }
    }
    Ok(SearchOutcome { best: hall, history, population })
}

/// Training-free fitness: mixes `S` validation pairs per active class pair
/// with the individual's mask and scores the frozen model's patch-level
/// predictions. Image pairs come from a stream keyed by generation and pair
/// slot, so every individual in a generation sees the same raw pairs.
pub fn evaluate_fitness<M: PatchPredictor + ?Sized>(
    ind: &Individual,
    model: &M,
    val: &Dataset,
    cfg: &SearchConfig,
    generation: usize,
) -> Result<f64> {
    let classes = val.class_count();
    let pairs = ClassPairIndex::new(classes);
    if ind.head.len() != pairs.len() {
        return Err(Error::config(alloc::format!(
            "individual has {} pair slots, dataset needs {}",
            ind.head.len(),
            pairs.len()
        )));
    }
    if model.class_count() != classes {
        return Err(Error::config("model and validation set disagree on class count"));
    }
    let by_class = val.indices_by_class();
    let (mut total, mut count) = (0.0, 0usize);
    for slot in ind.active_slots() {
        let (ci, cj) = pairs.pair(slot);
        let mask = &ind.masks[slot];
        if mask.grid_size() != model.grid_size() {
            return Err(Error::config(alloc::format!(
                "mask grid {} does not match model grid {}",
                mask.grid_size(),
                model.grid_size()
            )));
        }
        for c in [ci, cj] {
            if by_class[c].is_empty() {
                return Err(Error::config(alloc::format!("class {c} has no validation samples")));
            }
        }
        let mut rng = SeededRng::new(cfg.seed, &[tags::FITNESS, generation as u64, slot as u64]);
        for _ in 0..cfg.pairs_per_combo {
            let a = by_class[ci][rng.random_range(0..by_class[ci].len())];
            let b = by_class[cj][rng.random_range(0..by_class[cj].len())];
            let mixed = mixing::patchmix(val.image(a), ci, val.image(b), cj, mask, classes)?;
            let labels = mixed.patch_labels.as_deref().expect("patchmix sets patch labels");
            let out = model.predict(&mixed.image)?;
            total += match cfg.objective {
                Objective::MinPatchAcc | Objective::MaxPatchAcc => {
                    losses::patch_accuracy(&out.patch_logits, labels)?
                }
                Objective::MinLp | Objective::MaxLp => losses::patch_loss(&out.patch_logits, labels)?,
            };
            count += 1;
        }
    }
    if count == 0 {
        return Ok(f64::INFINITY);
    }
    let mean = total / count as f64;
    Ok(match cfg.objective {
        Objective::MinPatchAcc | Objective::MinLp => mean,
        Objective::MaxPatchAcc | Objective::MaxLp => -mean,
    })
}

/// `"(i,j);(k,l)"` rendering of a pair list.
pub fn format_pairs(pairs: &[(usize, usize)]) -> String {
    let mut out = String::new();
    for (n, (i, j)) in pairs.iter().enumerate() {
        if n > 0 {
            out.push(';');
        }
        out.push_str(&alloc::format!("({i},{j})"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ImageTensor, Split};
    use crate::losses::ModelOutputs;

    fn spec(classes: usize, grid: usize, n: Option<usize>, force: bool) -> GenomeSpec {
        let cfg = SearchConfig { max_active: n, force_same_class: force, ..SearchConfig::default() };
        GenomeSpec::new(&cfg, classes, grid).unwrap()
    }

    #[test]
    fn pair_index_is_bijective() {
        for c in 1..8 {
            let idx = ClassPairIndex::new(c);
            assert_eq!(idx.len(), c * (c + 1) / 2);
            for (k, (i, j)) in idx.iter().enumerate() {
                assert_eq!(idx.pair(k), (i, j));
                assert_eq!(idx.index(i, j), k);
                assert_eq!(idx.index(j, i), k);
            }
        }
        assert_eq!(ClassPairIndex::new(3).pair(3), (1, 1));
    }

    #[test]
    fn population_respects_head_constraints() {
        let cfg = SearchConfig { population_size: 500, seed: 4, ..SearchConfig::default() };
        let pop = init_population(&cfg, 5, 4, &mut SeededRng::new(4, &[])).unwrap();
        assert_eq!(pop.len(), 500);
        assert!(pop.iter().all(|i| i.active_count() == 5 && i.masks().len() == 15));
        let again = init_population(&cfg, 5, 4, &mut SeededRng::new(4, &[])).unwrap();
        assert_eq!(pop, again);

        let forced = SearchConfig { force_same_class: true, max_active: Some(7), ..cfg.clone() };
        let pop = init_population(&forced, 5, 4, &mut SeededRng::new(4, &[])).unwrap();
        let pairs = ClassPairIndex::new(5);
        for ind in &pop {
            assert_eq!(ind.active_count(), 7);
            for c in 0..5 {
                assert!(ind.is_active(pairs.index(c, c)));
            }
        }

        let too_many = SearchConfig { max_active: Some(16), ..cfg.clone() };
        assert!(matches!(init_population(&too_many, 5, 4, &mut SeededRng::new(0, &[])), Err(Error::Config(_))));
    }

    #[test]
    fn config_validation() {
        let bad = SearchConfig { tournament_size: 1, ..SearchConfig::default() };
        assert!(bad.validate().is_err());
        let bad = SearchConfig { mutation_prob: 1.1, ..SearchConfig::default() };
        assert!(bad.validate().is_err());
        let d = SearchConfig::default();
        assert_eq!((d.population_size, d.crossover_prob, d.mutation_prob, d.tournament_size), (500, 0.5, 0.3, 3));
    }

    #[test]
    fn crossover_splits_columns() {
        let s = spec(2, 4, None, false);
        let a = Individual::new(alloc::vec![true, false, true], alloc::vec![PatchMask::ones(4); 3]).unwrap();
        let b = Individual::new(alloc::vec![true, false, true], alloc::vec![PatchMask::zeros(4); 3]).unwrap();
        let (o1, o2) = crossover(&a, &b, &s, &mut SeededRng::new(1, &[]));
        for m in o1.masks() {
            for r in 0..4 {
                for c in 0..4 {
                    assert_eq!(m.get(r, c), c < 2);
                }
            }
        }
        for m in o2.masks() {
            for r in 0..4 {
                for c in 0..4 {
                    assert_eq!(m.get(r, c), c >= 2);
                }
            }
        }
        let (s1, s2) = crossover(&a, &a, &s, &mut SeededRng::new(2, &[]));
        assert!(s1.same_genome(&a) && s2.same_genome(&a));
        assert_eq!(s1.fitness(), None);
    }

    #[test]
    fn odd_grid_split_keeps_left_part_smaller() {
        let s = spec(1, 3, None, false);
        let a = Individual::new(alloc::vec![true], alloc::vec![PatchMask::ones(3)]).unwrap();
        let b = Individual::new(alloc::vec![true], alloc::vec![PatchMask::zeros(3)]).unwrap();
        let (o1, _) = crossover(&a, &b, &s, &mut SeededRng::new(1, &[]));
        assert_eq!(o1.mask(0).popcount(), 3);
        assert!(o1.mask(0).get(2, 0) && !o1.mask(0).get(2, 1));
    }

    #[test]
    fn crossover_heads_respect_limit() {
        let s = spec(4, 2, Some(3), false);
        let mut rng = SeededRng::new(8, &[]);
        for _ in 0..500 {
            let mut a = random_individual(&s, &mut rng);
            let mut b = random_individual(&s, &mut rng);
            // push both over the limit before recombining
            for k in 0..10 {
                if rng.random_bool(0.7) {
                    a.set_active(k, true);
                }
                if rng.random_bool(0.7) {
                    b.set_active(k, true);
                }
            }
            let (o1, o2) = crossover(&a, &b, &s, &mut rng);
            assert!(o1.active_count() <= 3 && o2.active_count() <= 3);
        }
    }

    #[test]
    fn mutation_operators() {
        let s = spec(3, 4, None, false);
        let mut rng = SeededRng::new(3, &[]);
        let ind = random_individual(&s, &mut rng);

        for op in [MutationOp::FlipTails, MutationOp::Transpose] {
            let mut m = ind.clone();
            apply_mutation(&mut m, op, &s, &mut rng);
            assert!(!m.same_genome(&ind) || ind.active_count() == 0);
            apply_mutation(&mut m, op, &s, &mut rng);
            assert!(m.same_genome(&ind), "{op:?} is not an involution");
        }

        let mut one = Individual::new(alloc::vec![true], alloc::vec![PatchMask::zeros(4)]).unwrap();
        let mut m = PatchMask::zeros(4);
        m.set(0, 1, true);
        one.set_mask(0, m);
        apply_mutation(&mut one, MutationOp::Transpose, &spec(1, 4, None, false), &mut rng);
        assert!(one.mask(0).get(1, 0) && one.mask(0).popcount() == 1);

        let mut fh = ind.clone();
        apply_mutation(&mut fh, MutationOp::FlipHeads, &s, &mut rng);
        assert_eq!(fh.active_count(), ind.active_count());
        assert_eq!(fh.masks(), ind.masks());

        let mut rt = ind.clone();
        apply_mutation(&mut rt, MutationOp::RandomTails, &s, &mut rng);
        assert_eq!(rt.head(), ind.head());
        for k in 0..ind.head().len() {
            if !ind.is_active(k) {
                assert_eq!(rt.mask(k), ind.mask(k));
            }
        }
    }

    #[test]
    fn flip_heads_keeps_forced_slots() {
        let s = spec(3, 2, Some(4), true);
        let mut rng = SeededRng::new(5, &[]);
        for _ in 0..100 {
            let mut ind = random_individual(&s, &mut rng);
            mutate(&mut ind, &s, &mut rng);
            let pairs = ClassPairIndex::new(3);
            for c in 0..3 {
                assert!(ind.is_active(pairs.index(c, c)));
            }
            assert!(ind.active_count() <= 4);
        }
    }

    #[test]
    fn repair_examples() {
        let s = spec(4, 2, Some(3), false);
        let mut rng = SeededRng::new(6, &[]);
        let mut over = random_individual(&s, &mut rng);
        for k in 0..6 {
            over.set_active(k, true);
        }
        assert_eq!(over.active_count(), 6);
        repair(&mut over, &s, &mut rng);
        assert_eq!(over.active_count(), 3);

        let mut ok = random_individual(&s, &mut rng);
        ok.set_fitness(0.5);
        let before = ok.clone();
        repair(&mut ok, &s, &mut rng);
        assert_eq!(ok, before);

        let forced = spec(3, 2, Some(3), true);
        let mut ind = Individual::new(alloc::vec![false; 6], alloc::vec![PatchMask::zeros(2); 6]).unwrap();
        ind.set_active(1, true);
        repair(&mut ind, &forced, &mut rng);
        let pairs = ClassPairIndex::new(3);
        assert!((0..3).all(|c| ind.is_active(pairs.index(c, c))));
        assert_eq!(ind.active_count(), 3);
    }

    fn scored(scores: &[f64]) -> Vec<Individual> {
        scores
            .iter()
            .map(|&s| {
                let mut i = Individual::new(alloc::vec![true], alloc::vec![PatchMask::zeros(1)]).unwrap();
                i.set_fitness(s);
                i
            })
            .collect()
    }

    #[test]
    fn tournament_examples() {
        let mut rng = SeededRng::new(1, &[]);
        assert_eq!(tournament_select(&scored(&[0.4]), 3, &mut rng).unwrap(), 0);
        assert!(tournament_select(&[], 3, &mut rng).is_err());
        let unscored = alloc::vec![Individual::new(alloc::vec![true], alloc::vec![PatchMask::zeros(1)]).unwrap()];
        assert!(tournament_select(&unscored, 3, &mut rng).is_err());

        let pop = scored(&[0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.0]);
        let a: Vec<usize> =
            (0..50).map(|_| tournament_select(&pop, 3, &mut SeededRng::new(2, &[])).unwrap()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn tournament_best_wins_often() {
        // Oracle: P(best drawn at least once in 3 draws from 10) = 1 − 0.9³ = 0.271;
        // simulate that directly and compare with the selector.
        let pop = scored(&[0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.0]);
        let mut rng = SeededRng::new(77, &[]);
        let trials = 10_000;
        let wins = (0..trials).filter(|_| tournament_select(&pop, 3, &mut rng).unwrap() == 9).count();
        let mut oracle_rng = SeededRng::new(78, &[]);
        let oracle = (0..trials)
            .filter(|_| (0..3).any(|_| oracle_rng.random_range(0..10) == 9))
            .count();
        let (p, q) = (wins as f64 / trials as f64, oracle as f64 / trials as f64);
        assert!((p - q).abs() < 0.03, "selector {p} vs oracle {q}");
        // k = population size with replacement still misses the best sometimes
        let full = (0..trials)
            .filter(|_| tournament_select(&pop, 10, &mut rng).unwrap() == 9)
            .count() as f64
            / trials as f64;
        assert!(full < 1.0 && full > 0.6, "k=10 win rate {full}");
    }

    struct ConstantPatchModel {
        grid: usize,
        classes: usize,
        predicted: Option<usize>,
    }

    impl PatchPredictor for ConstantPatchModel {
        fn grid_size(&self) -> usize {
            self.grid
        }
        fn class_count(&self) -> usize {
            self.classes
        }
        fn predict(&self, image: &ImageTensor) -> Result<ModelOutputs> {
            // class encoded in each patch's first pixel when `predicted` is None
            let n = self.grid * self.grid;
            let mut patch_logits = alloc::vec![0.0; n * self.classes];
            let ph = image.height() / self.grid;
            let pw = image.width() / self.grid;
            for p in 0..n {
                let class = self.predicted.unwrap_or_else(|| {
                    let v = image.get((p / self.grid) * ph, (p % self.grid) * pw, 0);
                    (v * 10.0).round() as usize
                });
                patch_logits[p * self.classes + class] = 5.0;
            }
            Ok(ModelOutputs { patch_logits, image_logits: alloc::vec![0.0; self.classes] })
        }
    }

    fn coded_val(classes: usize, per_class: usize) -> Dataset {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..per_class {
            for c in 0..classes {
                images.push(ImageTensor::from_fn(8, 8, 1, |_, _, _| c as f64 / 10.0));
                labels.push(c);
            }
        }
        Dataset::new(images, labels, classes, Split::Validation).unwrap()
    }

    #[test]
    fn fitness_with_perfect_stub_is_maximally_unfit() {
        let val = coded_val(3, 4);
        let model = ConstantPatchModel { grid: 4, classes: 3, predicted: None };
        let cfg = SearchConfig { pairs_per_combo: 5, ..SearchConfig::default() };
        let s = GenomeSpec::new(&cfg, 3, 4).unwrap();
        let mut rng = SeededRng::new(0, &[]);
        for _ in 0..10 {
            let ind = random_individual(&s, &mut rng);
            assert_eq!(evaluate_fitness(&ind, &model, &val, &cfg, 3).unwrap(), 1.0);
        }
    }

    #[test]
    fn fitness_tracks_mask_bits() {
        // The stub always predicts class 0, so patch n is correct exactly when
        // it came from the first image (mask bit 1) of pair (0, 1).
        let val = coded_val(2, 3);
        let model = ConstantPatchModel { grid: 4, classes: 2, predicted: Some(0) };
        let cfg = SearchConfig { pairs_per_combo: 7, ..SearchConfig::default() };
        let slot = ClassPairIndex::new(2).index(0, 1);
        let mk = |mask: PatchMask| {
            let mut head = alloc::vec![false; 3];
            head[slot] = true;
            Individual::new(head, alloc::vec![mask; 3]).unwrap()
        };
        assert_eq!(evaluate_fitness(&mk(PatchMask::ones(4)), &model, &val, &cfg, 0).unwrap(), 1.0);
        assert_eq!(evaluate_fitness(&mk(PatchMask::zeros(4)), &model, &val, &cfg, 0).unwrap(), 0.0);
        let mut five = PatchMask::zeros(4);
        for c in 0..4 {
            five.set(0, c, true);
        }
        five.set(3, 3, true);
        assert_eq!(evaluate_fitness(&mk(five.clone()), &model, &val, &cfg, 0).unwrap(), 5.0 / 16.0);
        let max_cfg = SearchConfig { objective: Objective::MaxPatchAcc, ..cfg.clone() };
        assert_eq!(evaluate_fitness(&mk(five.clone()), &model, &val, &max_cfg, 0).unwrap(), -5.0 / 16.0);

        let ind = mk(five);
        assert_eq!(
            evaluate_fitness(&ind, &model, &val, &cfg, 9).unwrap(),
            evaluate_fitness(&ind, &model, &val, &cfg, 9).unwrap()
        );
    }

    #[test]
    fn fitness_requires_every_active_class() {
        let val = coded_val(3, 2);
        let missing = val.subset(&[0, 1, 3, 4]);
        let model = ConstantPatchModel { grid: 4, classes: 3, predicted: Some(0) };
        let cfg = SearchConfig::default();
        let pairs = ClassPairIndex::new(3);
        let mut head = alloc::vec![false; 6];
        head[pairs.index(1, 2)] = true;
        let ind = Individual::new(head, alloc::vec![PatchMask::ones(4); 6]).unwrap();
        let err = evaluate_fitness(&ind, &model, &missing, &cfg, 0).unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("class 2")), "{err}");
    }

    #[test]
    fn search_history_is_monotone_and_deterministic() {
        let cfg = SearchConfig { population_size: 30, generations: 15, seed: 3, ..SearchConfig::default() };
        let target = PatchMask::from_rows(&[&[1, 0, 1, 1], &[0, 0, 1, 0], &[1, 1, 1, 0], &[0, 1, 0, 0]]).unwrap();
        let fit = |ind: &Individual, _g: usize| -> Result<f64> {
            let k = ind.active_slots().next();
            Ok(k.map_or(17.0, |k| ind.mask(k).hamming(&target) as f64))
        };
        let a = run_search(&cfg, 1, 4, &fit).unwrap();
        let b = run_search(&cfg, 1, 4, &fit).unwrap();
        assert_eq!(a.history, b.history);
        assert!(a.best.same_genome(&b.best));
        assert!(a.history.windows(2).all(|w| w[1].best <= w[0].best));
        assert_eq!(a.history.len(), 16);
    }

    #[test]
    fn search_reports_failing_individual() {
        let cfg = SearchConfig { population_size: 8, generations: 3, ..SearchConfig::default() };
        let fit = |_: &Individual, g: usize| -> Result<f64> {
            if g == 2 {
                Err(Error::numeric("boom"))
            } else {
                Ok(1.0)
            }
        };
        match run_search(&cfg, 2, 2, &fit) {
            Err(Error::Fitness { generation: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
