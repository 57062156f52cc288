//! Fixtures shared by the benchmarks in `benches/`.

use magdrop_core::{seeded_stream, Tensor};
use rand::Rng;

/// `[rows, cols]` tensor with entries uniform in `[-1, 1)`.
pub fn random_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = seeded_stream(seed, 0);
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches data")
}

/// Batch of `n` pseudo-images in `[0, 1)` with labels cycling over 10 classes.
pub fn image_batch(n: usize, pixels: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let mut rng = seeded_stream(seed, 1);
    let data = (0..n * pixels).map(|_| rng.random::<f64>()).collect();
    (
        Tensor::new(vec![n, pixels], data).expect("shape matches data"),
        (0..n).map(|i| i % 10).collect(),
    )
}
