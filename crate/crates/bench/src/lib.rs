//! Shared inputs for the criterion benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use salnet_core::Tensor;

/// Uniform `[-1, 1)` values from a fixed seed.
pub fn random(shape: [usize; 4], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

/// Saliency-like map in `[0, 1)` and a binary mask of the same shape.
pub fn map_and_mask(h: usize, w: usize, seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = Tensor::from_fn([1, 1, h, w], |_, _, _, _| rng.gen::<f32>());
    let g = Tensor::from_fn([1, 1, h, w], |_, _, _, _| if rng.gen_bool(0.3) { 1.0 } else { 0.0 });
    (s, g)
}
