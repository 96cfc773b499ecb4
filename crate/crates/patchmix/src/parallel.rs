//! Thread-pool fitness evaluation.

use patchmix_core::evolution::{wrap_fitness_error, Fitness};
use patchmix_core::Individual;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Evaluates a generation's pending individuals on a private rayon pool.
/// Scores are collected in input order, so the search outcome does not
/// depend on the thread count.
pub struct ParallelFitness<F> {
    inner: F,
    pool: Option<rayon::ThreadPool>,
}

impl<F: Fitness + Sync> ParallelFitness<F> {
    /// `threads <= 1` evaluates on the calling thread.
    pub fn new(inner: F, threads: usize) -> Result<Self> {
        let pool = if threads > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::config(format!("cannot start {threads} worker threads: {e}")))?;
            Some(pool)
        } else {
            None
        };
        Ok(ParallelFitness { inner, pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.as_ref().map_or(1, rayon::ThreadPool::current_num_threads)
    }
}

impl<F: Fitness + Sync> Fitness for ParallelFitness<F> {
    fn score(&self, individual: &Individual, generation: usize) -> patchmix_core::Result<f64> {
        self.inner.score(individual, generation)
    }

    fn score_batch(&self, generation: usize, batch: &[(usize, &Individual)]) -> patchmix_core::Result<Vec<f64>> {
        let Some(pool) = &self.pool else {
            return self.inner.score_batch(generation, batch);
        };
        let scores: Vec<_> = pool.install(|| {
            batch.par_iter().map(|&(idx, ind)| (idx, self.inner.score(ind, generation))).collect()
        });
        // report the lowest failing index, whichever worker hit it first
        scores
            .into_iter()
            .map(|(idx, s)| s.map_err(|e| wrap_fitness_error(e, generation, idx)))
            .collect()
    }
}
