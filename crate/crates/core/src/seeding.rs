//! Seed splitting for multi-run experiments.
//!
//! Run `r`, trajectory `t` of an experiment with master seed `S` draws from
//! `Xoshiro256++` seeded with `S ^ r` (expanded through SplitMix64 by
//! `seed_from_u64`) and then advanced by `t` calls to `jump()`, each of which
//! skips 2^128 outputs. Trajectories of one run therefore live on disjoint
//! subsequences of a single stream, and distinct runs start from distinct
//! seeds.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

/// Generator type used throughout the simulation code.
pub type SimRng = Xoshiro256PlusPlus;

/// Seed of run `run` under master seed `master`.
pub fn run_seed(master: u64, run: u64) -> u64 {
    master ^ run
}

/// Generator for trajectory `trajectory` of run `run`.
pub fn trajectory_rng(master: u64, run: u64, trajectory: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(run_seed(master, run));
    for _ in 0..trajectory {
        rng.jump();
    }
    rng
}

/// Generators for trajectories `0..q` of one run.
pub fn run_rngs(master: u64, run: u64, q: usize) -> Vec<SimRng> {
    let mut rng = SimRng::seed_from_u64(run_seed(master, run));
    let mut out = Vec::with_capacity(q);
    for _ in 0..q {
        out.push(rng.clone());
        rng.jump();
    }
    out
}
