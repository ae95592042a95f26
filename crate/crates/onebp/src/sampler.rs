//! Uniform random negative sampling against a user's train adjacency.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::InteractionDataset;
use crate::error::{Error, Result};

/// One training sample: a user, one interacted item, and the drawn negatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeDraw {
    pub user: u32,
    pub positive: u32,
    pub negatives: Vec<u32>,
}

/// Draws `n` distinct items uniformly from the user's uninteracted items.
///
/// Rejection sampling against the train adjacency; when the uninteracted pool
/// is smaller than 2n the complement is enumerated and shuffled instead, which
/// keeps the expected cost O(n) for sparse users.
pub fn sample_negatives(
    train: &InteractionDataset,
    user: u32,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<u32>> {
    let num_items = train.num_items() as u32;
    let interacted = train.items_of(user);
    let pool = num_items as usize - interacted.len();
    if n == 0 || n > pool {
        return Err(Error::CannotSample {
            user,
            requested: n,
            available: pool,
        });
    }

    if pool < 2 * n {
        let mut complement: Vec<u32> = (0..num_items)
            .filter(|i| interacted.binary_search(i).is_err())
            .collect();
        complement.shuffle(rng);
        complement.truncate(n);
        return Ok(complement);
    }

    let mut picked = Vec::with_capacity(n);
    while picked.len() < n {
        let candidate = rng.random_range(0..num_items);
        if interacted.binary_search(&candidate).is_ok() || picked.contains(&candidate) {
            continue;
        }
        picked.push(candidate);
    }
    Ok(picked)
}
