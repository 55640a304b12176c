//! Reproducible random substreams.
//!
//! Every randomized computation derives its generator from a user seed and a
//! partition index, so results do not depend on how many threads ran them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Independent ChaCha8 stream number `index` under `seed`.
pub fn substream(seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Splits `total` items into `parts` contiguous ranges of near-equal size.
pub fn partition(total: u64, parts: u64) -> Vec<std::ops::Range<u64>> {
    let parts = parts.max(1);
    let base = total / parts;
    let extra = total % parts;
    let mut start = 0;
    (0..parts)
        .map(|i| {
            let len = base + u64::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}
