//! Map-switch and bias-function sweeps run with one shared seed.

use serde::{Deserialize, Serialize};

use crate::bias::BiasKind;
use crate::data::SplitDataset;
use crate::error::{Error, Result};
use crate::mixer::{MixerConfig, MixerMode};
use crate::model::{Model, ModelConfig};
use crate::train::{fit, MetricsReport, TrainConfig};

pub const CSV_HEADER: &str =
    "row,mode,bias_kind,qk,positional,temporal,epochs,best_epoch,first_loss,last_loss,diverged,val_ndcg@10,ndcg@10,ndcg@50,hr@1,hr@10,hr@50,mrr";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub model: ModelConfig,
}

/// Names of the map-switch rows in sweep order.
pub const MAP_ROWS: [&str; 4] = ["full", "no_qk", "no_positional", "no_temporal"];

/// Full model (query-key, positional and temporal channels) and one row with
/// each map removed. Removing query-key yields the attention-free mixer.
pub fn map_rows(base: &ModelConfig) -> Vec<AblationRow> {
    let heads = base.mixer.heads.max(1);
    let full = MixerConfig {
        scale_by_n: base.mixer.scale_by_n,
        ..MixerConfig::qk_channels(heads)
    };
    let variants = [
        full,
        MixerConfig {
            scale_by_n: base.mixer.scale_by_n,
            ..MixerConfig::aftm()
        },
        MixerConfig {
            use_positional_map: false,
            ..full
        },
        MixerConfig {
            use_temporal_map: false,
            ..full
        },
    ];
    MAP_ROWS
        .iter()
        .zip(variants)
        .map(|(name, mixer)| AblationRow {
            name: name.to_string(),
            model: ModelConfig {
                mixer,
                ..base.clone()
            },
        })
        .collect()
}

/// One row per temporal bias function on top of `base`.
pub fn function_rows(base: &ModelConfig, kinds: &[BiasKind]) -> Vec<AblationRow> {
    kinds
        .iter()
        .map(|&kind| {
            let mut model = base.clone();
            model.bias.kind = kind;
            AblationRow {
                name: kind.name().to_string(),
                model,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub row: String,
    pub mode: MixerMode,
    pub bias_kind: BiasKind,
    pub use_qk: bool,
    pub use_positional: bool,
    pub use_temporal: bool,
    pub epochs: usize,
    pub best_epoch: usize,
    pub first_loss: f64,
    pub last_loss: f64,
    /// Non-finite loss, or a final training loss above the first epoch's.
    pub diverged: bool,
    pub validation: MetricsReport,
    pub test: MetricsReport,
}

/// Trains every row from the same seeds, one after another.
pub fn run_ablation(
    rows: &[AblationRow],
    data: &SplitDataset,
    train: &TrainConfig,
    mut progress: impl FnMut(&str, &MetricsReport),
) -> Result<Vec<AblationResult>> {
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let mut model = Model::new(row.model.clone())?;
        let m = &row.model.mixer;
        let mut result = AblationResult {
            row: row.name.clone(),
            mode: m.mode,
            bias_kind: row.model.bias.kind,
            use_qk: m.has_qk(),
            use_positional: m.use_positional_map,
            use_temporal: m.use_temporal_map,
            epochs: 0,
            best_epoch: 0,
            first_loss: f64::NAN,
            last_loss: f64::NAN,
            diverged: true,
            validation: MetricsReport::default(),
            test: MetricsReport::default(),
        };
        match fit(&mut model, data, train, None, |r| progress(&row.name, r)) {
            Ok(fitted) => {
                let losses: Vec<f64> = fitted.history.iter().map(|r| r.loss as f64).collect();
                result.epochs = losses.len();
                result.best_epoch = fitted.best_epoch;
                result.first_loss = losses[0];
                result.last_loss = *losses.last().unwrap_or(&f64::NAN);
                result.diverged =
                    losses.iter().any(|l| !l.is_finite()) || result.last_loss > result.first_loss;
                result.validation = fitted.best_validation;
                result.test = fitted.test;
            }
            Err(Error::NonFinite(_)) => {}
            Err(e) => return Err(e),
        }
        out.push(result);
    }
    Ok(out)
}

pub fn ablation_csv(results: &[AblationResult]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in results {
        let mode = serde_json::to_value(r.mode)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default();
        s.push_str(&format!(
            "{},{mode},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.row,
            r.bias_kind,
            r.use_qk,
            r.use_positional,
            r.use_temporal,
            r.epochs,
            r.best_epoch,
            r.first_loss,
            r.last_loss,
            r.diverged,
            r.validation.ndcg10,
            r.test.ndcg10,
            r.test.ndcg50,
            r.test.hr1,
            r.test.hr10,
            r.test.hr50,
            r.test.mrr
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_rows_switch_one_map_each() {
        let rows = map_rows(&ModelConfig::default());
        let flags: Vec<(bool, bool, bool)> = rows
            .iter()
            .map(|r| {
                (
                    r.model.mixer.has_qk(),
                    r.model.mixer.use_positional_map,
                    r.model.mixer.use_temporal_map,
                )
            })
            .collect();
        assert_eq!(
            flags,
            [
                (true, true, true),
                (false, true, true),
                (true, false, true),
                (true, true, false)
            ]
        );
        assert_eq!(rows[1].model.mixer.mode, MixerMode::Aftm);
    }

    #[test]
    fn function_rows_cover_requested_kinds() {
        let rows = function_rows(&ModelConfig::default(), &BiasKind::ALL);
        assert_eq!(rows.len(), 9);
        assert!(rows
            .iter()
            .zip(BiasKind::ALL)
            .all(|(r, k)| r.model.bias.kind == k));
    }
}
