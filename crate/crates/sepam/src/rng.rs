//! Per-trial random streams and order-fixed parallel reduction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Independent stream `index` of the generator seeded by `seed`.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Runs `f(i, rng_i)` for i in 0..n in parallel and returns results in index order.
pub fn par_trials<T: Send>(
    n: usize,
    seed: u64,
    f: impl Fn(usize, &mut ChaCha8Rng) -> T + Sync,
) -> Vec<T> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i as u64);
            f(i, &mut rng)
        })
        .collect()
}
