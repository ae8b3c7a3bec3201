//! Shared inputs for the criterion benchmarks in `benches/`.

use memometer::Dataset;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// `n` samples uniform in `[-1, 1]^dim`.
pub fn uniform_dataset(n: usize, dim: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0f32..1.0) as f64).collect())
        .collect();
    Dataset::from_rows(&rows).expect("rows are well formed")
}

/// Standard normal `rows × cols` matrix.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}
