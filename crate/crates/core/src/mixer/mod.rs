//! Token mixers: the attention-free mixer and the query-key baselines.
//!
//! Every mixer maps a normalized `n×d` input to an `n×width` output `M`; the
//! block's down-projection takes `M` back to `d`. Bias maps enter as `n×n`
//! matrices that are zero above the diagonal.
//!
//! | mode          | output width | maps                                       |
//! |---------------|--------------|--------------------------------------------|
//! | `aftm`        | 2d           | `U ⊙ [B·V, Bᵗ·V]`                          |
//! | `qk_channels` | 3d           | `U ⊙ [A·V, B·V, Bᵗ·V]`, `A` from `QKᵀ`     |
//! | `qk_summed`   | d            | `[A_h·V_h]_h`, `A_h` from `QKᵀ + B + Bᵗ`   |
//!
//! With `scale_by_n` every map is multiplied by `1/n`. A disabled map
//! contributes a zero channel (or a zero summand) and costs no multiplies.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Real, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixerMode {
    Aftm,
    QkChannels,
    QkSummed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixerConfig {
    pub mode: MixerMode,
    pub use_qk_map: bool,
    pub use_positional_map: bool,
    pub use_temporal_map: bool,
    pub heads: usize,
    pub scale_by_n: bool,
}

impl Default for MixerConfig {
    fn default() -> Self {
        MixerConfig::aftm()
    }
}

impl MixerConfig {
    pub fn aftm() -> Self {
        MixerConfig {
            mode: MixerMode::Aftm,
            use_qk_map: false,
            use_positional_map: true,
            use_temporal_map: true,
            heads: 1,
            scale_by_n: true,
        }
    }

    /// Three-channel query-key baseline with all maps on.
    pub fn qk_channels(heads: usize) -> Self {
        MixerConfig {
            mode: MixerMode::QkChannels,
            use_qk_map: true,
            heads,
            ..MixerConfig::aftm()
        }
    }

    /// Single-map baseline `SiLU(QKᵀ + B + Bᵗ)`.
    pub fn qk_summed(heads: usize) -> Self {
        MixerConfig {
            mode: MixerMode::QkSummed,
            ..MixerConfig::qk_channels(heads)
        }
    }

    pub fn has_qk(&self) -> bool {
        self.mode != MixerMode::Aftm && self.use_qk_map
    }

    pub fn output_width(&self, d: usize) -> usize {
        match self.mode {
            MixerMode::Aftm => 2 * d,
            MixerMode::QkChannels => 3 * d,
            MixerMode::QkSummed => d,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.mode == MixerMode::Aftm && self.use_qk_map {
            return Err(Error::Config(
                "aftm mode has no query-key map; set use_qk_map = false".into(),
            ));
        }
        if !(self.use_qk_map || self.use_positional_map || self.use_temporal_map) {
            return Err(Error::Config(
                "at least one attention map must be enabled".into(),
            ));
        }
        if self.mode != MixerMode::Aftm && (self.heads == 0 || !d.is_multiple_of(self.heads)) {
            return Err(Error::Config(format!(
                "heads ({}) must divide d ({d})",
                self.heads
            )));
        }
        Ok(())
    }

    fn param_group(&self) -> &'static str {
        match self.mode {
            MixerMode::Aftm => "aftm",
            MixerMode::QkChannels | MixerMode::QkSummed => "attn",
        }
    }

    /// Parameter names and shapes under `prefix`.
    pub fn param_layout(&self, prefix: &str, d: usize) -> Vec<(String, (usize, usize))> {
        let g = format!("{prefix}.{}", self.param_group());
        let mut out = Vec::new();
        if self.has_qk() {
            out.push((format!("{g}.W_q"), (d, d)));
            out.push((format!("{g}.W_k"), (d, d)));
        }
        out.push((format!("{g}.W_v"), (d, d)));
        if self.mode != MixerMode::QkSummed {
            out.push((format!("{g}.W_u"), (d, self.output_width(d))));
        }
        out
    }
}

/// Inserts normal(0, `std`) mixer weights.
pub fn register_mixer_params<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    config: &MixerConfig,
    d: usize,
    std: f64,
    rng: &mut R,
) -> Result<()> {
    let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
    for (name, (r, c)) in config.param_layout(prefix, d) {
        store.insert(
            name,
            Tensor::from_fn(r, c, |_, _| dist.sample(rng) as Real),
            true,
        )?;
    }
    Ok(())
}

/// Bias maps fed to a mixer. `None` means the map is switched off.
#[derive(Debug, Clone, Copy, Default)]
pub struct MixerMaps {
    pub positional: Option<Var>,
    pub temporal: Option<Var>,
}

fn map_times_v(tape: &mut Tape<'_>, map: Var, v: Var, scale: Real) -> Result<Var> {
    let mv = tape.matmul(map, v)?;
    if scale == 1.0 {
        Ok(mv)
    } else {
        tape.scale(mv, scale)
    }
}

/// Per-head `mask(SiLU(Q_h K_hᵀ/√d_h + S))·scale · V_h`, concatenated.
fn attention_heads(
    tape: &mut Tape<'_>,
    q: Option<(Var, Var)>,
    shared: Option<Var>,
    v: Var,
    heads: usize,
    scale: Real,
) -> Result<Var> {
    let (n, d) = tape.value(v).shape();
    let dh = d / heads;
    let inv_sqrt = 1.0 / (dh as Real).sqrt();
    // without Q/K every head sees the same map
    let shared_attn = match (q, shared) {
        (None, Some(s)) => Some(tape.silu_causal(s, scale)?),
        (None, None) => return tape.constant(Tensor::zeros(n, d)),
        _ => None,
    };
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let vh = if heads == 1 {
            v
        } else {
            tape.slice_cols(v, h * dh, dh)?
        };
        let attn = match (q, shared_attn) {
            (_, Some(a)) => a,
            (Some((q, k)), None) => {
                let (qh, kh) = if heads == 1 {
                    (q, k)
                } else {
                    (
                        tape.slice_cols(q, h * dh, dh)?,
                        tape.slice_cols(k, h * dh, dh)?,
                    )
                };
                let s = tape.matmul_bt(qh, kh)?;
                let mut s = tape.scale(s, inv_sqrt)?;
                if let Some(extra) = shared {
                    s = tape.add(s, extra)?;
                }
                tape.silu_causal(s, scale)?
            }
            (None, None) => unreachable!(),
        };
        outs.push(tape.matmul(attn, vh)?);
    }
    if heads == 1 {
        Ok(outs[0])
    } else {
        tape.concat_cols(&outs)
    }
}

/// Runs the configured mixer on `x` (already normalized). Returns `M`.
pub fn mixer_forward<'p>(
    tape: &mut Tape<'p>,
    store: &'p ParamStore,
    prefix: &str,
    config: &MixerConfig,
    x: Var,
    maps: &MixerMaps,
) -> Result<Var> {
    let (n, d) = tape.value(x).shape();
    for m in [maps.positional, maps.temporal].into_iter().flatten() {
        if tape.value(m).shape() != (n, n) {
            return Err(Error::shape(
                "mixer bias map",
                tape.value(m).shape(),
                (n, n),
            ));
        }
    }
    let g = format!("{prefix}.{}", config.param_group());
    let scale = if config.scale_by_n {
        1.0 / n as Real
    } else {
        1.0
    };
    let positional = maps.positional.filter(|_| config.use_positional_map);
    let temporal = maps.temporal.filter(|_| config.use_temporal_map);

    let w_v = tape.param(store, &format!("{g}.W_v"))?;
    let xv = tape.matmul(x, w_v)?;
    let v = tape.silu(xv)?;
    let qk = if config.has_qk() {
        let w_q = tape.param(store, &format!("{g}.W_q"))?;
        let w_k = tape.param(store, &format!("{g}.W_k"))?;
        Some((tape.matmul(x, w_q)?, tape.matmul(x, w_k)?))
    } else {
        None
    };

    if config.mode == MixerMode::QkSummed {
        let shared = match (positional, temporal) {
            (Some(b), Some(bt)) => Some(tape.add(b, bt)?),
            (b, bt) => b.or(bt),
        };
        return attention_heads(tape, qk, shared, v, config.heads, scale);
    }

    let mut channels = Vec::with_capacity(3);
    if config.mode == MixerMode::QkChannels {
        channels.push(match qk {
            Some(_) => attention_heads(tape, qk, None, v, config.heads, scale)?,
            None => tape.constant(Tensor::zeros(n, d))?,
        });
    }
    for map in [positional, temporal] {
        channels.push(match map {
            Some(m) => map_times_v(tape, m, v, scale)?,
            None => tape.constant(Tensor::zeros(n, d))?,
        });
    }
    let w_u = tape.param(store, &format!("{g}.W_u"))?;
    let xu = tape.matmul(x, w_u)?;
    let u = tape.silu(xu)?;
    let cat = tape.concat_cols(&channels)?;
    tape.mul(u, cat)
}

/// `U ⊙ concat(B·V, Bᵗ·V)` with `U = SiLU(X W_u)`, `V = SiLU(X W_v)`.
pub fn aftm_forward<'p>(
    tape: &mut Tape<'p>,
    store: &'p ParamStore,
    prefix: &str,
    config: &MixerConfig,
    x: Var,
    maps: &MixerMaps,
) -> Result<Var> {
    if config.mode != MixerMode::Aftm {
        return Err(Error::Config("aftm_forward needs mode = aftm".into()));
    }
    mixer_forward(tape, store, prefix, config, x, maps)
}

/// Query-key attention followed by the output projection `w_o` (`width×d`).
pub fn qk_attention_forward<'p>(
    tape: &mut Tape<'p>,
    store: &'p ParamStore,
    prefix: &str,
    config: &MixerConfig,
    x: Var,
    maps: &MixerMaps,
    w_o: Var,
) -> Result<Var> {
    if config.mode == MixerMode::Aftm {
        return Err(Error::Config(
            "qk_attention_forward needs a query-key mode".into(),
        ));
    }
    let m = mixer_forward(tape, store, prefix, config, x, maps)?;
    tape.matmul(m, w_o)
}
