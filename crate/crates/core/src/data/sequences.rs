use serde::{Deserialize, Serialize};

use crate::data::{InteractionLog, RawInteraction};
use crate::error::{Error, Result};

/// One user's most recent interactions, left-aligned and padded with item 0
/// up to the fixed length `n`. Padding slots repeat the last real timestamp.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionSequence {
    pub user_id: u32,
    pub items: Vec<u32>,
    pub timestamps: Vec<i64>,
    pub true_length: usize,
}

impl InteractionSequence {
    /// Packs `events` (at most `n`) into a padded sequence.
    pub fn from_events(user_id: u32, events: &[RawInteraction], n: usize) -> Self {
        debug_assert!(events.len() <= n && !events.is_empty());
        let mut items = vec![0; n];
        let last_ts = events.last().map_or(0, |e| e.timestamp);
        let mut timestamps = vec![last_ts; n];
        for (k, e) in events.iter().enumerate() {
            items[k] = e.item_id;
            timestamps[k] = e.timestamp;
        }
        InteractionSequence {
            user_id,
            items,
            timestamps,
            true_length: events.len(),
        }
    }

    pub fn n(&self) -> usize {
        self.items.len()
    }
}

/// A training sequence with its shifted next-item targets (0 where padded).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainExample {
    pub input: InteractionSequence,
    pub targets: Vec<u32>,
}

/// A held-out prediction: rank `target` after reading `input`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalExample {
    pub input: InteractionSequence,
    pub target: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub n: usize,
    pub item_count: usize,
    pub user_count: usize,
    pub train: Vec<TrainExample>,
    pub validation: Vec<EvalExample>,
    pub test: Vec<EvalExample>,
}

fn tail(events: &[RawInteraction], k: usize) -> &[RawInteraction] {
    &events[events.len().saturating_sub(k)..]
}

/// Leave-one-out split: the final interaction is the test target, the
/// second-to-last the validation target, and training reads every earlier
/// prefix. Each split keeps the most recent `n` inputs.
pub fn build_sequences(log: &InteractionLog, n: usize) -> Result<SplitDataset> {
    if n < 2 {
        return Err(Error::Config(format!(
            "max sequence length must be >= 2, got {n}"
        )));
    }
    let mut train = Vec::with_capacity(log.users.len());
    let mut validation = Vec::with_capacity(log.users.len());
    let mut test = Vec::with_capacity(log.users.len());
    for events in &log.users {
        let len = events.len();
        let user_id = events.first().map_or(0, |e| e.user_id);
        if len < 3 {
            return Err(Error::Precondition(format!(
                "user {user_id} has {len} interactions; leave-one-out needs at least 3"
            )));
        }
        // inputs: up to n items ending at position len-3; targets shifted by one,
        // the last of which is the validation item.
        let window = tail(&events[..len - 1], n + 1);
        let input = InteractionSequence::from_events(user_id, &window[..window.len() - 1], n);
        let mut targets = vec![0; n];
        for (k, e) in window[1..].iter().enumerate() {
            targets[k] = e.item_id;
        }
        train.push(TrainExample { input, targets });

        validation.push(EvalExample {
            input: InteractionSequence::from_events(user_id, tail(&events[..len - 2], n), n),
            target: events[len - 2].item_id,
        });
        test.push(EvalExample {
            input: InteractionSequence::from_events(user_id, tail(&events[..len - 1], n), n),
            target: events[len - 1].item_id,
        });
    }
    Ok(SplitDataset {
        n,
        item_count: log.item_count,
        user_count: log.users.len(),
        train,
        validation,
        test,
    })
}

impl SplitDataset {
    /// Mean non-padded length of the test inputs.
    pub fn average_length(&self) -> f64 {
        if self.test.is_empty() {
            return 0.0;
        }
        self.test
            .iter()
            .map(|e| e.input.true_length as f64)
            .sum::<f64>()
            / self.test.len() as f64
    }
}
