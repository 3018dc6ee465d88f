//! Seeded random streams.
//!
//! Every generator in the crate draws from ChaCha8, seeded by expanding a
//! `u64` seed with `SeedableRng::seed_from_u64` (PCG32 expansion) and then
//! selecting a 64-bit stream id. Distinct stream ids give independent
//! sequences for the same seed, so each consumer (data, weights, shuffling,
//! probe splits) owns its own stream and adding draws to one never shifts
//! another.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SeededRng = ChaCha8Rng;

/// Stream ids used by the library.
pub mod stream {
    pub const DATA: u64 = 1;
    pub const LABEL_WEIGHTS: u64 = 2;
    pub const NET_INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const PROBE: u64 = 5;
    pub const TARGET_SAMPLE: u64 = 6;
    pub const RANDOM_BASELINE: u64 = 7;
}

pub fn seeded(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Matrix of iid standard normal entries, filled row by row.
pub fn normal_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let data: Vec<f64> = (0..rows * cols).map(|_| standard_normal(rng)).collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

/// Matrix of iid Uniform[0, 1) entries, filled row by row.
pub fn uniform_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.random::<f64>()).collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

/// Fisher-Yates permutation of `0..n`.
pub fn permutation(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
