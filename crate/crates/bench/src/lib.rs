//! Shared fixtures for the benchmarks.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgame_core::energy::{EnergyFile, EnergyModel};
use sgame_core::game::random;
use sgame_core::lp::{LinearProgram, Sense};
use sgame_core::{Dims, GameSpec, Policy};

pub fn game(dims: Dims, seed: u64) -> GameSpec {
    random::game(&mut ChaCha8Rng::seed_from_u64(seed), dims, 0.8, 1.0)
}

pub fn mf_game(dims: Dims, seed: u64) -> GameSpec {
    random::mf_game(&mut ChaCha8Rng::seed_from_u64(seed), dims, 0.6, 1.0, 0.3)
}

pub fn policy(n_states: usize, n_actions: usize, seed: u64) -> Policy {
    random::policy(&mut ChaCha8Rng::seed_from_u64(seed), n_states, n_actions)
}

/// Feasible bounded LP with `n` variables and `m` mixed rows.
pub fn lp(n: usize, m: usize, seed: u64) -> LinearProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
    let mut lp = LinearProgram::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
    lp.upper = x0.iter().map(|x| x + rng.random_range(0.5..2.0)).collect();
    for i in 0..m {
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ax: f64 = a.iter().zip(&x0).map(|(p, q)| p * q).sum();
        match i % 3 {
            0 => lp.add_row(a, Sense::Le, ax + 0.5),
            1 => lp.add_row(a, Sense::Ge, ax - 0.5),
            _ => lp.add_row(a, Sense::Eq, ax),
        };
    }
    lp
}

pub fn grid_file() -> EnergyFile {
    EnergyFile::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/grid_3bus.toml")).expect("bundled grid file")
}

pub fn energy_model() -> EnergyModel {
    EnergyModel::from_file(&grid_file()).expect("bundled grid file is valid")
}
