use serde::{Deserialize, Serialize};

use crate::bias::BiasKind;
use crate::data::seeded_rng;
use crate::error::Result;
use crate::mixer::MixerConfig;
use crate::model::{block_forward, register_block_params, BiasConfig, ModelConfig};
use crate::numerics::{counters, ParamStore, Real, Tape, Tensor};

/// Multiply counts of one block forward, split into the leading terms
/// `nd2·n·d² + n2d·n²·d + ffn·n·d_ffn·d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlopTerms {
    pub nd2: Real,
    pub n2d: Real,
    pub ffn: Real,
    /// Multiplies counted at the requested `(n, d, d_ffn)`.
    pub total: u64,
    /// Whether the three terms reproduce `total` with no remainder.
    pub exact: bool,
}

impl FlopTerms {
    /// Coefficients of the mixer and its projections (the `nd²` and `n²d`
    /// terms) summed, e.g. `5 + 2` for the attention-free block.
    pub fn mixer_sum(&self) -> Real {
        self.nd2 + self.n2d
    }
}

fn block_multiplies(mixer: &MixerConfig, n: usize, d: usize, d_ffn: usize) -> Result<u64> {
    let config = ModelConfig {
        item_count: 1,
        n,
        d,
        d_ffn,
        layers: 1,
        mixer: *mixer,
        bias: BiasConfig {
            kind: BiasKind::Pow,
            ..BiasConfig::default()
        },
        ..ModelConfig::default()
    };
    let mut rng = seeded_rng(0);
    let mut store = ParamStore::new();
    register_block_params(&mut store, 0, &config, &mut rng)?;
    let x = Tensor::from_fn(n, d, |i, j| ((i * 7 + j * 3) % 11) as Real * 0.1 - 0.5);
    let timestamps: Vec<i64> = (0..n as i64).map(|k| k * 3_600).collect();
    let (out, counts) = counters::measure(|| -> Result<()> {
        let mut tape = Tape::new();
        let xv = tape.constant(x)?;
        block_forward(&mut tape, &store, 0, &config, xv, &timestamps)?;
        Ok(())
    });
    out?;
    Ok(counts.multiplies)
}

/// Counts one block's multiplies at `(n, d, d_ffn)`, `(2n, d, d_ffn)` and
/// `(n, d, 2d_ffn)` and solves for the three leading coefficients.
pub fn flop_count(mixer: &MixerConfig, n: usize, d: usize, d_ffn: usize) -> Result<FlopTerms> {
    let t1 = block_multiplies(mixer, n, d, d_ffn)? as i128;
    let t2 = block_multiplies(mixer, 2 * n, d, d_ffn)? as i128;
    let t3 = block_multiplies(mixer, n, d, 2 * d_ffn)? as i128;
    let (ni, di, fi) = (n as i128, d as i128, d_ffn as i128);
    // T(2n) − 2T(n) = 2·β·n²d ; T(2f) − T(f) = γ·n·f·d
    let beta_num = t2 - 2 * t1;
    let beta_den = 2 * ni * ni * di;
    let gamma_num = t3 - t1;
    let gamma_den = ni * fi * di;
    let alpha_num = t1 * beta_den * gamma_den
        - beta_num * ni * ni * di * gamma_den
        - gamma_num * ni * fi * di * beta_den;
    let alpha_den = ni * di * di * beta_den * gamma_den;
    let exact =
        beta_num % beta_den == 0 && gamma_num % gamma_den == 0 && alpha_num % alpha_den == 0;
    Ok(FlopTerms {
        nd2: alpha_num as Real / alpha_den as Real,
        n2d: beta_num as Real / beta_den as Real,
        ffn: gamma_num as Real / gamma_den as Real,
        total: t1 as u64,
        exact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attention_free_block_terms() {
        let t = flop_count(&MixerConfig::aftm(), 16, 8, 8).unwrap();
        assert!(t.exact);
        assert_eq!((t.nd2, t.n2d, t.ffn), (5.0, 2.0, 3.0));
    }

    #[test]
    fn three_channel_baseline_terms() {
        let t = flop_count(&MixerConfig::qk_channels(2), 16, 8, 8).unwrap();
        assert!(t.exact);
        assert_eq!((t.nd2, t.n2d, t.ffn), (9.0, 4.0, 3.0));
    }

    #[test]
    fn summed_baseline_terms() {
        let t = flop_count(&MixerConfig::qk_summed(2), 16, 8, 8).unwrap();
        assert!(t.exact);
        assert_eq!((t.nd2, t.n2d, t.ffn), (4.0, 2.0, 3.0));
    }
}
