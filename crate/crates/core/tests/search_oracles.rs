//! Genetic search against brute-force optima.

use patchmix_core::evolution::run_search;
use patchmix_core::{Individual, PatchMask, Result, SearchConfig, SeededRng};
use rand::Rng;

fn mask_from_index(grid: usize, index: usize) -> PatchMask {
    PatchMask::new(grid, (0..grid * grid).map(|b| index >> b & 1 == 1).collect()).unwrap()
}

fn mask_index(mask: &PatchMask) -> usize {
    mask.bits().iter().enumerate().map(|(b, &v)| usize::from(v) << b).sum()
}

fn single_pair_cfg(population_size: usize, generations: usize, seed: u64) -> SearchConfig {
    SearchConfig { population_size, generations, max_active: Some(1), seed, ..SearchConfig::default() }
}

#[test]
fn hamming_target_is_found() {
    let mut target_rng = SeededRng::new(99, &[]);
    let target = PatchMask::uniform(4, &mut target_rng);
    let fitness = |ind: &Individual, _: usize| -> Result<f64> {
        Ok(if ind.active_count() == 0 { f64::INFINITY } else { ind.mask(0).hamming(&target) as f64 })
    };
    // brute force: the target is the unique zero of the fitness
    let zeros = (0..1usize << 16).filter(|&i| mask_from_index(4, i).hamming(&target) == 0).count();
    assert_eq!(zeros, 1);

    let mut found = 0;
    for seed in 0..20 {
        let out = run_search(&single_pair_cfg(100, 60, seed), 1, 4, &fitness).unwrap();
        for w in out.history.windows(2) {
            assert!(w[1].best <= w[0].best);
        }
        if out.best.fitness() == Some(0.0) {
            assert_eq!(out.best.mask(0), &target);
            found += 1;
        }
    }
    eprintln!("hamming target found in {found}/20 runs");
    assert!(found >= 19);
}

#[test]
fn two_by_two_search_matches_enumeration() {
    let mut hits = 0;
    for seed in 0..20u64 {
        let mut table_rng = SeededRng::new(seed, &[5]);
        let table: Vec<f64> = (0..16).map(|_| table_rng.random::<f64>()).collect();
        let optimum = (0..16).min_by(|&a, &b| table[a].total_cmp(&table[b])).unwrap();
        let fitness = |ind: &Individual, _: usize| -> Result<f64> {
            Ok(if ind.active_count() == 0 { f64::INFINITY } else { table[mask_index(ind.mask(0))] })
        };
        let out = run_search(&single_pair_cfg(16, 60, seed), 1, 2, &fitness).unwrap();
        hits += usize::from(mask_index(out.best.mask(0)) == optimum);
    }
    eprintln!("2x2 optimum recovered in {hits}/20 runs");
    assert!(hits >= 19);
}
