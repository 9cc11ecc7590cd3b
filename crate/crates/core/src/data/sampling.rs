use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Seeded, platform-independent generator used throughout the crate.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws `count` items uniformly from `1..=item_count` with replacement,
/// rejecting anything in `exclude`. Index 0 (padding) is never drawn.
pub fn sample_negatives<R: Rng + ?Sized>(
    rng: &mut R,
    item_count: usize,
    exclude: &[u32],
    count: usize,
) -> Result<Vec<u32>> {
    if count == 0 {
        return Err(Error::Precondition(
            "negative sample count must be >= 1".into(),
        ));
    }
    let excluded_in_range = {
        let mut ex: Vec<u32> = exclude
            .iter()
            .copied()
            .filter(|&e| e >= 1 && e as usize <= item_count)
            .collect();
        ex.sort_unstable();
        ex.dedup();
        ex.len()
    };
    if item_count <= excluded_in_range {
        return Err(Error::Precondition(format!(
            "cannot sample negatives: {item_count} items, {excluded_in_range} excluded"
        )));
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let candidate = rng.random_range(1..=item_count as u32);
        if !exclude.contains(&candidate) {
            out.push(candidate);
        }
    }
    Ok(out)
}
