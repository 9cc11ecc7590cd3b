use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{seeded_rng, InteractionLog, RawInteraction};
use crate::error::{Error, Result};

/// Users walk a fixed item cycle `1 → 2 → … → cycle → 1` from a random start.
/// Every transition is deterministic; only start offsets, lengths and the
/// day gaps between events are random.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CyclicConfig {
    pub users: usize,
    pub cycle: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for CyclicConfig {
    fn default() -> Self {
        CyclicConfig {
            users: 500,
            cycle: 50,
            min_len: 12,
            max_len: 24,
            seed: 0,
        }
    }
}

const DAY: i64 = 86_400;

pub fn cyclic_dataset(config: &CyclicConfig) -> Result<InteractionLog> {
    if config.users == 0 || config.cycle < 2 {
        return Err(Error::Config(
            "cyclic dataset needs >= 1 user and a cycle of >= 2 items".into(),
        ));
    }
    if config.min_len < 3 || config.max_len < config.min_len {
        return Err(Error::Config(format!(
            "cyclic lengths must satisfy 3 <= min_len <= max_len, got {}..={}",
            config.min_len, config.max_len
        )));
    }
    let mut rng = seeded_rng(config.seed);
    let users = (0..config.users)
        .map(|u| {
            let start = rng.random_range(0..config.cycle);
            let len = rng.random_range(config.min_len..=config.max_len);
            let mut t = 1_000_000_000 + rng.random_range(0..365) * DAY;
            (0..len)
                .map(|k| {
                    if k > 0 {
                        t += rng.random_range(0..=7) * DAY + rng.random_range(0..DAY);
                    }
                    RawInteraction {
                        user_id: u as u32 + 1,
                        item_id: ((start + k) % config.cycle) as u32 + 1,
                        rating: 5.0,
                        timestamp: t,
                    }
                })
                .collect()
        })
        .collect();
    Ok(InteractionLog {
        users,
        item_count: config.cycle,
    })
}
