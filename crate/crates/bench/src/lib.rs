//! Fixtures shared by the kernel benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxelrec::Tensor;

/// Uniform `[-1, 1)` tensor from a fixed seed.
pub fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// A batch of `n` random 32x32 RGB images in `[0, 1)`.
pub fn images(n: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[n, 3, 32, 32], |_| rng.gen_range(0.0..1.0))
}
