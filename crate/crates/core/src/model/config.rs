use serde::{Deserialize, Serialize};

use crate::bias::{param_layout, BiasKind, DEFAULT_MAX_BUCKET, DEFAULT_TIME_SCALE};
use crate::error::{Error, Result};
use crate::mixer::{MixerConfig, MixerMode};
use crate::numerics::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiasConfig {
    pub kind: BiasKind,
    /// Pow exponent stored raw and passed through softplus.
    pub softplus_exponent: bool,
    /// Seconds per unit of elapsed time.
    pub time_scale: Real,
    /// Temporal bucket count for the `bucket` kind.
    pub max_bucket: usize,
    /// Positional table length; `None` means `n`.
    pub d_rab: Option<usize>,
}

impl Default for BiasConfig {
    fn default() -> Self {
        BiasConfig {
            kind: BiasKind::Pow,
            softplus_exponent: true,
            time_scale: DEFAULT_TIME_SCALE,
            max_bucket: DEFAULT_MAX_BUCKET,
            d_rab: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Number of real items; `0` in a config file means "take it from the
    /// dataset".
    pub item_count: usize,
    pub n: usize,
    pub d: usize,
    pub layers: usize,
    pub d_ffn: usize,
    pub n_neg: usize,
    pub mixer: MixerConfig,
    pub bias: BiasConfig,
    /// Standard deviation of the normal initializer.
    pub init_std: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            item_count: 0,
            n: 200,
            d: 50,
            layers: 2,
            d_ffn: 50,
            n_neg: 128,
            mixer: MixerConfig::aftm(),
            bias: BiasConfig::default(),
            init_std: 0.02,
            seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn d_rab(&self) -> usize {
        self.bias.d_rab.unwrap_or(self.n)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.item_count == 0 {
            return fail("item_count must be >= 1".into());
        }
        if self.n < 2 {
            return fail(format!("n must be >= 2, got {}", self.n));
        }
        if self.d == 0 || self.layers == 0 {
            return fail("d and layers must be >= 1".into());
        }
        if self.d_ffn < self.d {
            return fail(format!("d_ffn ({}) must be >= d ({})", self.d_ffn, self.d));
        }
        if self.n_neg == 0 {
            return fail("n_neg must be >= 1".into());
        }
        if self.d_rab() == 0 || self.bias.max_bucket == 0 {
            return fail("d_rab and max_bucket must be >= 1".into());
        }
        if !self.bias.time_scale.is_finite() || self.bias.time_scale <= 0.0 {
            return fail("time_scale must be > 0".into());
        }
        if !self.init_std.is_finite() || self.init_std <= 0.0 {
            return fail("init_std must be > 0".into());
        }
        self.mixer.validate(self.d)
    }

    fn temporal_param_count(&self) -> usize {
        param_layout(self.bias.kind, self.bias.max_bucket)
            .iter()
            .map(|(_, (r, c))| r * c)
            .sum()
    }

    /// Closed-form trainable-parameter count.
    pub fn expected_param_count(&self) -> usize {
        let (d, f) = (self.d, self.d_ffn);
        let width = self.mixer.output_width(d);
        let mut block = d * d; // W_v
        if self.mixer.has_qk() {
            block += 2 * d * d;
        }
        if self.mixer.mode != MixerMode::QkSummed {
            block += d * width; // W_u
        }
        block += width * d; // W_down
        block += 3 * d * f; // W_g, W_1, W_2
        block += 2 * d; // norm gains
        if self.mixer.use_positional_map {
            block += self.d_rab();
        }
        if self.mixer.use_temporal_map {
            block += self.temporal_param_count();
        }
        (self.item_count + 1) * d + self.n * d + self.layers * block
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_roundtrip_and_defaults() {
        let cfg = ModelConfig {
            item_count: 10,
            ..Default::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ModelConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: ModelConfig =
            serde_json::from_str(r#"{"n": 16, "bias": {"kind": "exp"}}"#).unwrap();
        assert_eq!(partial.n, 16);
        assert_eq!(partial.bias.kind, BiasKind::Exp);
        assert!(serde_json::from_str::<ModelConfig>(r#"{"dd": 3}"#).is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let ok = ModelConfig {
            item_count: 10,
            ..Default::default()
        };
        assert!(ok.validate().is_ok());
        for bad in [
            ModelConfig {
                d_ffn: 10,
                ..ok.clone()
            },
            ModelConfig {
                n_neg: 0,
                ..ok.clone()
            },
            ModelConfig {
                layers: 0,
                ..ok.clone()
            },
            ModelConfig {
                item_count: 0,
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn aftm_count_matches_closed_form() {
        let cfg = ModelConfig {
            item_count: 100,
            n: 20,
            d: 8,
            d_ffn: 16,
            layers: 3,
            ..Default::default()
        };
        let (d, f, n) = (8, 16, 20);
        let per_block = 2 * d * d + d * d + 2 * d * d + 2 * d * f + f * d + 2 * d + 2 + n;
        assert_eq!(cfg.expected_param_count(), 101 * d + n * d + 3 * per_block);
    }
}
