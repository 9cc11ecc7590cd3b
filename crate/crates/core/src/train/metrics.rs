use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::EvalExample;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::Real;

/// How scores equal to the target's are ranked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TiePolicy {
    /// Only strictly greater scores rank ahead of the target.
    Optimistic,
    /// Every other item with an equal score ranks ahead of the target.
    Pessimistic,
}

/// 1-based rank of `target` in `scores`. `-inf` entries (padding) never rank
/// ahead.
pub fn rank_of_target(scores: &[Real], target: usize, policy: TiePolicy) -> Result<usize> {
    let st = *scores.get(target).ok_or(Error::IndexOutOfRange {
        what: "score row",
        index: target,
        len: scores.len(),
    })?;
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(k, &s)| match policy {
            TiePolicy::Optimistic => s > st,
            TiePolicy::Pessimistic => k != target && s >= st,
        })
        .count();
    Ok(1 + ahead)
}

/// Ranking metrics averaged over users.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "ndcg@10")]
    pub ndcg10: Real,
    #[serde(rename = "ndcg@50")]
    pub ndcg50: Real,
    #[serde(rename = "hr@1")]
    pub hr1: Real,
    #[serde(rename = "hr@10")]
    pub hr10: Real,
    #[serde(rename = "hr@50")]
    pub hr50: Real,
    pub mrr: Real,
    pub users: usize,
    pub epoch: usize,
    pub loss: Real,
    pub wall_seconds: f64,
}

impl MetricsReport {
    /// Averages per-user metrics over 1-based `ranks`.
    pub fn from_ranks(ranks: &[usize]) -> Self {
        let mut r = MetricsReport {
            users: ranks.len(),
            ..Default::default()
        };
        if ranks.is_empty() {
            return r;
        }
        for &rank in ranks {
            let rk = rank as Real;
            let ndcg = 1.0 / (1.0 + rk).log2();
            if rank <= 10 {
                r.ndcg10 += ndcg;
                r.hr10 += 1.0;
            }
            if rank <= 50 {
                r.ndcg50 += ndcg;
                r.hr50 += 1.0;
            }
            if rank == 1 {
                r.hr1 += 1.0;
            }
            r.mrr += 1.0 / rk;
        }
        let u = ranks.len() as Real;
        for v in [
            &mut r.ndcg10,
            &mut r.ndcg50,
            &mut r.hr1,
            &mut r.hr10,
            &mut r.hr50,
            &mut r.mrr,
        ] {
            *v /= u;
        }
        r
    }
}

/// Full-ranking evaluation: every user's target is ranked against all items
/// after the last real position. Users are scored in parallel; the reduction
/// runs in input order.
pub fn evaluate(model: &Model, examples: &[EvalExample]) -> Result<MetricsReport> {
    let start = std::time::Instant::now();
    for e in examples {
        if e.target == 0 || e.target as usize > model.config.item_count {
            return Err(Error::IndexOutOfRange {
                what: "evaluation target",
                index: e.target as usize,
                len: model.config.item_count + 1,
            });
        }
    }
    let ranks = examples
        .par_iter()
        .map(|e| {
            rank_of_target(
                &model.score_next(&e.input)?,
                e.target as usize,
                TiePolicy::Optimistic,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = MetricsReport::from_ranks(&ranks);
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}
