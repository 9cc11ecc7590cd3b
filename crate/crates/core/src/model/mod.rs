//! Embeddings, the mixer block, stacking, scoring and the sampled-softmax loss.
//!
//! Block `l` computes
//!
//! ```text
//! M   = mixer(RMSNorm(X), B, Bᵗ)
//! H   = X + M·W_down
//! out = H + (SiLU(RMSNorm(H)·W_g) ⊙ RMSNorm(H)·W_1)·W_2
//! ```
//!
//! Parameter names: `emb.E`, `emb.P`, and per block `block{l}.norm.g`,
//! `block{l}.aftm.W_u` / `W_v` (or `block{l}.attn.*`), `block{l}.rab.pos`,
//! `block{l}.frab.{kind}.{key}`, `block{l}.mffn.{W_down, norm.g, W_g, W_1, W_2}`.

mod complexity;
mod config;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::bias::{positional_on_tape, temporal_on_tape, BiasFunctionSpec, TemporalBias};
use crate::data::{seeded_rng, InteractionSequence};
use crate::error::{Error, Result};
use crate::mixer::{mixer_forward, register_mixer_params, MixerMaps};
use crate::numerics::kernels::{self, log_sum_exp};
use crate::numerics::{ParamStore, Real, SoftmaxRow, Tape, Tensor, Var};

pub use complexity::{flop_count, FlopTerms};
pub use config::{BiasConfig, ModelConfig};

pub const EMBEDDING: &str = "emb.E";
pub const POSITIONS: &str = "emb.P";

fn normal<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Result<Tensor> {
    let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
    Ok(Tensor::from_fn(rows, cols, |_, _| dist.sample(rng) as Real))
}

/// Inserts the parameters of block `l`.
pub fn register_block_params<R: Rng + ?Sized>(
    store: &mut ParamStore,
    l: usize,
    config: &ModelConfig,
    rng: &mut R,
) -> Result<()> {
    let (d, f, std) = (config.d, config.d_ffn, config.init_std);
    let p = format!("block{l}");
    store.insert(format!("{p}.norm.g"), Tensor::filled(1, d, 1.0), true)?;
    register_mixer_params(store, &p, &config.mixer, d, std, rng)?;
    if config.mixer.use_positional_map {
        store.insert(
            format!("{p}.rab.pos"),
            Tensor::filled(1, config.d_rab(), 1.0),
            true,
        )?;
    }
    if config.mixer.use_temporal_map {
        let spec = BiasFunctionSpec::init(
            config.bias.kind,
            config.bias.softplus_exponent,
            config.bias.max_bucket,
            rng,
        );
        spec.register(store, &format!("{p}.frab"))?;
    }
    let width = config.mixer.output_width(d);
    store.insert(
        format!("{p}.mffn.W_down"),
        normal(width, d, std, rng)?,
        true,
    )?;
    store.insert(format!("{p}.mffn.norm.g"), Tensor::filled(1, d, 1.0), true)?;
    store.insert(format!("{p}.mffn.W_g"), normal(d, f, std, rng)?, true)?;
    store.insert(format!("{p}.mffn.W_1"), normal(d, f, std, rng)?, true)?;
    store.insert(format!("{p}.mffn.W_2"), normal(f, d, std, rng)?, true)?;
    Ok(())
}

/// One block on an `n×d` input with the sequence's timestamps.
pub fn block_forward<'p>(
    tape: &mut Tape<'p>,
    store: &'p ParamStore,
    l: usize,
    config: &ModelConfig,
    x: Var,
    timestamps: &[i64],
) -> Result<Var> {
    let p = format!("block{l}");
    let n = tape.value(x).rows();
    if timestamps.len() != n {
        return Err(Error::shape(
            "block timestamps",
            (n, 1),
            (timestamps.len(), 1),
        ));
    }
    let g = tape.param(store, &format!("{p}.norm.g"))?;
    let xn = tape.rmsnorm(x, g)?;
    let maps = MixerMaps {
        positional: if config.mixer.use_positional_map {
            Some(positional_on_tape(tape, store, &format!("{p}.rab.pos"), n)?)
        } else {
            None
        },
        temporal: if config.mixer.use_temporal_map {
            let bias = TemporalBias {
                kind: config.bias.kind,
                softplus_exponent: config.bias.softplus_exponent,
                time_scale: config.bias.time_scale,
            };
            Some(temporal_on_tape(
                tape,
                store,
                &format!("{p}.frab"),
                &bias,
                timestamps,
            )?)
        } else {
            None
        },
    };
    let m = mixer_forward(tape, store, &p, &config.mixer, xn, &maps)?;
    let w_down = tape.param(store, &format!("{p}.mffn.W_down"))?;
    let md = tape.matmul(m, w_down)?;
    let h = tape.add(x, md)?;
    let g2 = tape.param(store, &format!("{p}.mffn.norm.g"))?;
    let hn = tape.rmsnorm(h, g2)?;
    let (w_g, w_1, w_2) = (
        tape.param(store, &format!("{p}.mffn.W_g"))?,
        tape.param(store, &format!("{p}.mffn.W_1"))?,
        tape.param(store, &format!("{p}.mffn.W_2"))?,
    );
    let gate = tape.matmul(hn, w_g)?;
    let gate = tape.silu(gate)?;
    let lin = tape.matmul(hn, w_1)?;
    let inner = tape.mul(gate, lin)?;
    let ffn = tape.matmul(inner, w_2)?;
    tape.add(h, ffn)
}

/// Row `k` is `E[item_k] + P[k]` for real positions and zero for padding.
pub fn embed<'p>(
    tape: &mut Tape<'p>,
    store: &'p ParamStore,
    seq: &InteractionSequence,
) -> Result<Var> {
    let e = tape.param(store, EMBEDDING)?;
    let p = tape.param(store, POSITIONS)?;
    let (items, d) = tape.value(e).shape();
    let n = seq.n();
    if tape.value(p).rows() != n {
        return Err(Error::shape(
            "embed positions",
            tape.value(p).shape(),
            (n, d),
        ));
    }
    let mut index = Vec::with_capacity(n);
    for &i in &seq.items {
        if i as usize >= items {
            return Err(Error::IndexOutOfRange {
                what: "item embedding",
                index: i as usize,
                len: items,
            });
        }
        index.push(i as usize);
    }
    let rows = tape.gather_rows(e, index)?;
    let mask = tape.constant(Tensor::from_fn(n, d, |k, _| {
        if k < seq.true_length {
            1.0
        } else {
            0.0
        }
    }))?;
    let pos = tape.mul(p, mask)?;
    tape.add(rows, pos)
}

/// `X_final · Eᵀ`: row `j` scores every item (column 0 is padding).
pub fn predict_scores(x_final: &Tensor, embedding: &Tensor) -> Result<Tensor> {
    kernels::matmul_bt(x_final, embedding)
}

/// `−log(exp(s⁺) / (exp(s⁺) + Σ exp(s⁻)))`.
pub fn sampled_softmax_loss(positive: Real, negatives: &[Real]) -> Result<Real> {
    if negatives.is_empty() {
        return Err(Error::Precondition(
            "sampled softmax needs N >= 1 negatives".into(),
        ));
    }
    if !positive.is_finite() || negatives.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("sampled softmax score".into()));
    }
    let mut all = Vec::with_capacity(negatives.len() + 1);
    all.push(positive);
    all.extend_from_slice(negatives);
    Ok(log_sum_exp(&all) - positive)
}

/// A model: its configuration and parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    /// Fresh parameters drawn from `config.seed`. `E` row 0 starts at zero;
    /// norm gains start at one.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(config.seed);
        let mut params = ParamStore::new();
        let mut e = normal(config.item_count + 1, config.d, config.init_std, &mut rng)?;
        e.row_mut(0).fill(0.0);
        params.insert(EMBEDDING, e, true)?;
        params.insert(
            POSITIONS,
            normal(config.n, config.d, config.init_std, &mut rng)?,
            true,
        )?;
        for l in 0..config.layers {
            register_block_params(&mut params, l, &config, &mut rng)?;
        }
        Ok(Model { config, params })
    }

    /// Wraps loaded parameters after checking names and shapes against a
    /// fresh model of the same configuration.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let reference = Model::new(config.clone())?;
        let expect: Vec<(&str, (usize, usize))> = reference
            .params
            .iter()
            .map(|(n, p)| (n, p.value.shape()))
            .collect();
        let got: Vec<(&str, (usize, usize))> =
            params.iter().map(|(n, p)| (n, p.value.shape())).collect();
        if expect != got {
            return Err(Error::Config(
                "checkpoint parameters do not match the model configuration".into(),
            ));
        }
        Ok(Model { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, p)| p.value.len()).sum()
    }

    /// Final hidden states for one sequence.
    pub fn forward<'p>(&'p self, tape: &mut Tape<'p>, seq: &InteractionSequence) -> Result<Var> {
        forward_with(tape, &self.params, &self.config, seq)
    }

    /// Next-item scores after the last real position. Entry 0 (padding) is
    /// `-inf`.
    pub fn score_next(&self, seq: &InteractionSequence) -> Result<Vec<Real>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, seq)?;
        let last = seq
            .true_length
            .checked_sub(1)
            .ok_or(Error::Precondition("empty sequence".into()))?;
        let row = Tensor::from_vec(1, self.config.d, tape.value(out).row(last).to_vec())?;
        let mut scores = predict_scores(&row, self.params.value(EMBEDDING)?)?.into_vec();
        scores[0] = Real::NEG_INFINITY;
        Ok(scores)
    }
}

/// [`Model::forward`] over an arbitrary store, as needed by gradient checks.
pub fn forward_with<'p>(
    tape: &mut Tape<'p>,
    store: &'p ParamStore,
    config: &ModelConfig,
    seq: &InteractionSequence,
) -> Result<Var> {
    if seq.n() != config.n {
        return Err(Error::shape("sequence length", (seq.n(), 1), (config.n, 1)));
    }
    let mut x = embed(tape, store, seq)?;
    for l in 0..config.layers {
        x = block_forward(tape, store, l, config, x, &seq.timestamps)?;
    }
    Ok(x)
}

/// Mean sampled-softmax loss of one sequence over `rows`, each holding the
/// position, the positive item and its negatives.
pub fn sequence_loss<'p>(
    tape: &mut Tape<'p>,
    store: &'p ParamStore,
    config: &ModelConfig,
    seq: &InteractionSequence,
    rows: Vec<SoftmaxRow>,
) -> Result<Var> {
    let hidden = forward_with(tape, store, config, seq)?;
    let e = tape.param(store, EMBEDDING)?;
    tape.sampled_softmax(hidden, e, rows)
}
