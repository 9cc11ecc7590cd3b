use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sample_negatives, seeded_rng, SeededRng, SplitDataset, TrainExample};
use crate::error::{Error, Result};
use crate::model::{sequence_loss, Model, EMBEDDING};
use crate::numerics::{checkpoint, Gradients, Real, SoftmaxRow, Tape};
use crate::train::metrics::{evaluate, MetricsReport};
use crate::train::optimizer::{OptimConfig, OptimizerState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation NDCG@10 improvement before stopping.
    pub patience: usize,
    /// Seeds shuffling and negative sampling.
    pub seed: u64,
    pub optim: OptimConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            max_epochs: 200,
            patience: 10,
            seed: 0,
            optim: OptimConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config(
                "batch_size, max_epochs and patience must be >= 1".into(),
            ));
        }
        self.optim.validate()
    }

    pub fn steps_per_epoch(&self, users: usize) -> usize {
        users.div_ceil(self.batch_size)
    }
}

/// Softmax rows of one sequence: every non-padded target with its negatives.
fn rows_for(
    ex: &TrainExample,
    item_count: usize,
    n_neg: usize,
    rng: &mut SeededRng,
) -> Result<Vec<SoftmaxRow>> {
    ex.targets
        .iter()
        .enumerate()
        .filter(|&(_, &t)| t != 0)
        .map(|(position, &t)| {
            let mut candidates = Vec::with_capacity(n_neg + 1);
            candidates.push(t as usize);
            candidates.extend(
                sample_negatives(rng, item_count, &[t], n_neg)?
                    .into_iter()
                    .map(|v| v as usize),
            );
            Ok(SoftmaxRow {
                position,
                candidates,
            })
        })
        .collect()
}

fn diagnostics(model: &Model, opt: &OptimizerState, batch: usize, user: u32) -> String {
    let worst = model
        .params
        .iter()
        .map(|(name, p)| {
            (
                name,
                p.value
                    .data()
                    .iter()
                    .fold(0.0 as Real, |m, v| m.max(v.abs())),
            )
        })
        .fold(("", 0.0 as Real), |a, b| {
            if b.1 > a.1 || b.1.is_nan() {
                b
            } else {
                a
            }
        });
    format!(
        "loss at step {} (batch {batch}, user {user}, lr {:.3e}); largest |param| {} = {:.3e}",
        opt.step,
        opt.current_lr(),
        worst.0,
        worst.1
    )
}

/// One shuffled pass over `data`. Negatives are drawn sequentially from `rng`
/// before each batch; per-sequence gradients are computed in parallel and
/// merged in batch order, so the result depends only on the seed. Returns the
/// mean loss over all target positions.
pub fn train_epoch(
    model: &mut Model,
    data: &[TrainExample],
    opt: &mut OptimizerState,
    batch_size: usize,
    rng: &mut SeededRng,
) -> Result<Real> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let (item_count, n_neg) = (model.config.item_count, model.config.n_neg);
    let mut total_loss = 0.0;
    let mut total_rows = 0usize;
    for (b, chunk) in order.chunks(batch_size).enumerate() {
        let mut work = Vec::with_capacity(chunk.len());
        for &i in chunk {
            let rows = rows_for(&data[i], item_count, n_neg, rng)?;
            if !rows.is_empty() {
                work.push((&data[i], rows));
            }
        }
        let batch_rows: usize = work.iter().map(|(_, r)| r.len()).sum();
        if batch_rows == 0 {
            continue;
        }
        let params = &model.params;
        let config = &model.config;
        let results: Vec<Result<(Real, usize, Gradients, u32)>> = work
            .into_par_iter()
            .map(|(ex, rows)| {
                let count = rows.len();
                let weight = count as Real / batch_rows as Real;
                let mut tape = Tape::new();
                let loss = sequence_loss(&mut tape, params, config, &ex.input, rows)?;
                let value = tape.value(loss).item();
                let mut grads = tape.backward(loss)?;
                grads.scale(weight);
                Ok((value, count, grads, ex.input.user_id))
            })
            .collect();
        let mut merged = Gradients::default();
        for r in results {
            let (value, count, grads, user) = r?;
            if !value.is_finite() {
                return Err(Error::NonFinite(diagnostics(model, opt, b, user)));
            }
            total_loss += value * count as Real;
            total_rows += count;
            merged.merge(grads)?;
        }
        model.params.zero_grads();
        model.params.accumulate(&merged)?;
        // padding embedding stays fixed at zero
        model.params.get_mut(EMBEDDING)?.grad.row_mut(0).fill(0.0);
        opt.apply(&mut model.params)?;
    }
    Ok(total_loss / total_rows.max(1) as Real)
}

/// Per-epoch record written to `metrics.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct EpochLine<'a> {
    split: &'a str,
    #[serde(flatten)]
    metrics: MetricsReport,
}

/// Paths written by [`fit`] under a run directory.
#[derive(Debug, Clone)]
pub struct RunFiles {
    pub dir: PathBuf,
}

impl RunFiles {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(RunFiles { dir })
    }

    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.jsonl")
    }

    pub fn summary(&self) -> PathBuf {
        self.dir.join("summary.csv")
    }

    pub fn checkpoint(&self, epoch: usize) -> PathBuf {
        self.dir.join(format!("epoch{epoch}.fxb"))
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Validation metrics per epoch, with `loss` holding the training loss.
    pub history: Vec<MetricsReport>,
    pub best_epoch: usize,
    pub best_validation: MetricsReport,
    /// Test metrics of the restored best parameters.
    pub test: MetricsReport,
    pub checkpoint: Option<PathBuf>,
}

/// Trains with early stopping on validation NDCG@10, restores the best
/// parameters and evaluates the test split. With `run` set, appends one JSON
/// line per epoch, checkpoints each improvement as `epoch{k}.fxb` and writes
/// `summary.csv`. `progress` sees each epoch's validation report.
pub fn fit(
    model: &mut Model,
    data: &SplitDataset,
    config: &TrainConfig,
    run: Option<&RunFiles>,
    mut progress: impl FnMut(&MetricsReport),
) -> Result<FitOutcome> {
    config.validate()?;
    if data.item_count != model.config.item_count || data.n != model.config.n {
        return Err(Error::Config(format!(
            "dataset (items {}, n {}) does not match model (items {}, n {})",
            data.item_count, data.n, model.config.item_count, model.config.n
        )));
    }
    let total_steps = (config.max_epochs * config.steps_per_epoch(data.train.len())) as u64;
    let mut opt = OptimizerState::new(&model.params, config.optim, total_steps)?;
    let mut rng = seeded_rng(config.seed);
    let mut jsonl = match run {
        Some(r) => Some(BufWriter::new(File::create(r.metrics())?)),
        None => None,
    };

    let mut history = Vec::new();
    let mut best: Option<(usize, MetricsReport, crate::numerics::ParamStore)> = None;
    let mut checkpoint_path = None;
    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        let loss = train_epoch(model, &data.train, &mut opt, config.batch_size, &mut rng)?;
        let mut report = evaluate(model, &data.validation)?;
        report.epoch = epoch;
        report.loss = loss;
        report.wall_seconds = start.elapsed().as_secs_f64();
        if let Some(w) = jsonl.as_mut() {
            serde_json::to_writer(
                &mut *w,
                &EpochLine {
                    split: "validation",
                    metrics: report,
                },
            )?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        progress(&report);
        history.push(report);
        let improved = best
            .as_ref()
            .is_none_or(|(_, b, _)| report.ndcg10 > b.ndcg10);
        if improved {
            if let Some(r) = run {
                let path = r.checkpoint(epoch);
                checkpoint::save(&model.params, &path)?;
                checkpoint_path = Some(path);
            }
            best = Some((epoch, report, model.params.clone()));
        } else if epoch - best.as_ref().map_or(0, |b| b.0) >= config.patience {
            break;
        }
    }
    let (best_epoch, best_validation, params) = best.ok_or(Error::EmptyDataset)?;
    model.params = params;
    let mut test = evaluate(model, &data.test)?;
    test.epoch = best_epoch;
    test.loss = best_validation.loss;

    if let Some(r) = run {
        if let Some(w) = jsonl.as_mut() {
            serde_json::to_writer(
                &mut *w,
                &EpochLine {
                    split: "test",
                    metrics: test,
                },
            )?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        let mut csv = String::from("split,epoch,ndcg@10,ndcg@50,hr@1,hr@10,hr@50,mrr,loss,users\n");
        for (split, m) in [("validation", &best_validation), ("test", &test)] {
            csv.push_str(&format!(
                "{split},{},{},{},{},{},{},{},{},{}\n",
                m.epoch, m.ndcg10, m.ndcg50, m.hr1, m.hr10, m.hr50, m.mrr, m.loss, m.users
            ));
        }
        std::fs::write(r.summary(), csv)?;
    }
    Ok(FitOutcome {
        history,
        best_epoch,
        best_validation,
        test,
        checkpoint: checkpoint_path,
    })
}

/// Loads a checkpoint into a model of `config`.
pub fn load_model(config: crate::model::ModelConfig, path: &Path) -> Result<Model> {
    Model::from_params(config, checkpoint::load(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_sequences, cyclic_dataset, CyclicConfig};
    use crate::mixer::MixerConfig;
    use crate::model::ModelConfig;

    fn setup() -> (Model, SplitDataset) {
        let log = cyclic_dataset(&CyclicConfig {
            users: 40,
            cycle: 12,
            min_len: 6,
            max_len: 10,
            seed: 3,
        })
        .unwrap();
        let data = build_sequences(&log, 8).unwrap();
        let cfg = ModelConfig {
            item_count: data.item_count,
            n: 8,
            d: 8,
            d_ffn: 8,
            layers: 1,
            n_neg: 4,
            mixer: MixerConfig::aftm(),
            ..Default::default()
        };
        (Model::new(cfg).unwrap(), data)
    }

    #[test]
    fn zero_learning_rate_leaves_params_bit_identical() {
        let (mut model, data) = setup();
        let before = model.params.clone();
        let optim = OptimConfig {
            lr: 0.0,
            ..Default::default()
        };
        let mut opt = OptimizerState::new(&model.params, optim, 10).unwrap();
        train_epoch(&mut model, &data.train, &mut opt, 8, &mut seeded_rng(1)).unwrap();
        for ((_, a), (_, b)) in before.iter().zip(model.params.iter()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn same_seed_same_losses() {
        let run = || {
            let (mut model, data) = setup();
            let mut opt = OptimizerState::new(&model.params, OptimConfig::default(), 30).unwrap();
            let mut rng = seeded_rng(9);
            (0..3)
                .map(|_| train_epoch(&mut model, &data.train, &mut opt, 8, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn padding_row_stays_zero() {
        let (mut model, data) = setup();
        let mut opt = OptimizerState::new(&model.params, OptimConfig::default(), 5).unwrap();
        train_epoch(&mut model, &data.train, &mut opt, 8, &mut seeded_rng(2)).unwrap();
        assert!(model
            .params
            .value(EMBEDDING)
            .unwrap()
            .row(0)
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn empty_training_set_rejected() {
        let (mut model, _) = setup();
        let mut opt = OptimizerState::new(&model.params, OptimConfig::default(), 5).unwrap();
        assert!(train_epoch(&mut model, &[], &mut opt, 8, &mut seeded_rng(0)).is_err());
    }

    #[test]
    fn evaluation_is_pure_and_checkpoint_roundtrip_reproduces_metrics() {
        let (mut model, data) = setup();
        let cfg = TrainConfig {
            batch_size: 8,
            max_epochs: 2,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let run = RunFiles::new(dir.path()).unwrap();
        let out = fit(&mut model, &data, &cfg, Some(&run), |_| {}).unwrap();
        let sum = model.params.checksum();
        let again = evaluate(&model, &data.test).unwrap();
        assert_eq!(sum, model.params.checksum());

        let path = out.checkpoint.unwrap();
        let loaded = load_model(model.config.clone(), &path).unwrap();
        let back = evaluate(&loaded, &data.test).unwrap();
        assert_eq!(
            (back.ndcg10, back.hr10, back.mrr),
            (again.ndcg10, again.hr10, again.mrr)
        );
        assert_eq!((out.test.ndcg10, out.test.mrr), (again.ndcg10, again.mrr));

        let lines = std::fs::read_to_string(run.metrics()).unwrap();
        assert_eq!(lines.lines().count(), out.history.len() + 1);
        let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
        assert_eq!(first["split"], "validation");
        assert!(first["ndcg@10"].is_number());
        let summary = std::fs::read_to_string(run.summary()).unwrap();
        assert!(summary.starts_with("split,epoch,ndcg@10"));
        assert_eq!(summary.lines().count(), 3);
    }

    #[test]
    fn mismatched_dataset_rejected() {
        let (mut model, mut data) = setup();
        data.item_count += 1;
        assert!(matches!(
            fit(&mut model, &data, &TrainConfig::default(), None, |_| {}),
            Err(Error::Config(_))
        ));
    }
}
