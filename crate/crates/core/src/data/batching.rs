use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Shuffles `items` with a generator keyed by `(seed, epoch)` and chunks
/// them into batches of `batch_size`, keeping the final partial batch.
pub fn make_batches<T>(items: &[T], batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<&T>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    if items.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    Ok(order
        .chunks(batch_size)
        .map(|c| c.iter().map(|&i| &items[i]).collect())
        .collect())
}
