//! Interaction logs, leave-one-out splits and negative sampling.

mod movielens;
mod sampling;
mod sequences;
pub mod split_file;
mod synthetic;

use serde::{Deserialize, Serialize};

pub use movielens::{parse_movielens, parse_movielens_str, DEFAULT_MIN_INTERACTIONS};
pub use sampling::{sample_negatives, seeded_rng, SeededRng};
pub use sequences::{
    build_sequences, EvalExample, InteractionSequence, SplitDataset, TrainExample,
};
pub use synthetic::{cyclic_dataset, CyclicConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawInteraction {
    pub user_id: u32,
    pub item_id: u32,
    pub rating: f32,
    pub timestamp: i64,
}

/// Per-user chronological event lists with item ids dense in `1..=item_count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionLog {
    pub users: Vec<Vec<RawInteraction>>,
    pub item_count: usize,
}

impl InteractionLog {
    pub fn interaction_count(&self) -> usize {
        self.users.iter().map(Vec::len).sum()
    }
}
