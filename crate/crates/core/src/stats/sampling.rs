use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adr::AdrEvent;
use crate::error::{Error, Result};

/// Uniform sample of `n` events without replacement, in input order.
pub fn sample_for_validation(events: &[AdrEvent], n: usize, seed: u64) -> Result<Vec<AdrEvent>> {
    if n > events.len() {
        return Err(Error::SampleTooLarge {
            requested: n,
            population: events.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, events.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| events[i].clone()).collect())
}
