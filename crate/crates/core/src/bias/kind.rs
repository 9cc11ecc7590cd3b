use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Temporal bias function family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasKind {
    Linear,
    Log,
    Exp,
    Sin,
    Pow,
    Mixed,
    Nn,
    Zero,
    Bucket,
}

impl BiasKind {
    pub const ALL: [BiasKind; 9] = [
        BiasKind::Linear,
        BiasKind::Log,
        BiasKind::Exp,
        BiasKind::Sin,
        BiasKind::Pow,
        BiasKind::Mixed,
        BiasKind::Nn,
        BiasKind::Zero,
        BiasKind::Bucket,
    ];

    /// The single-formula kinds averaged by [`BiasKind::Mixed`].
    pub const CLOSED_FORMS: [BiasKind; 5] = [
        BiasKind::Linear,
        BiasKind::Log,
        BiasKind::Exp,
        BiasKind::Sin,
        BiasKind::Pow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BiasKind::Linear => "linear",
            BiasKind::Log => "log",
            BiasKind::Exp => "exp",
            BiasKind::Sin => "sin",
            BiasKind::Pow => "pow",
            BiasKind::Mixed => "mixed",
            BiasKind::Nn => "nn",
            BiasKind::Zero => "zero",
            BiasKind::Bucket => "bucket",
        }
    }

    /// Scalar parameter keys of a closed-form kind.
    pub fn scalar_keys(self) -> &'static [&'static str] {
        match self {
            BiasKind::Linear | BiasKind::Exp | BiasKind::Pow => &["a", "b"],
            BiasKind::Log => &["a", "b", "c"],
            BiasKind::Sin => &["a", "b", "c", "d"],
            _ => &[],
        }
    }

    /// Whether building this kind's matrix reads a learnable table by index.
    pub fn gathers(self) -> bool {
        self == BiasKind::Bucket
    }
}

impl fmt::Display for BiasKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BiasKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let kind = match s.trim().to_ascii_lowercase().as_str() {
            "linear" | "lin" => BiasKind::Linear,
            "log" => BiasKind::Log,
            "exp" => BiasKind::Exp,
            "sin" => BiasKind::Sin,
            "pow" | "power" => BiasKind::Pow,
            "mixed" | "mix" => BiasKind::Mixed,
            "nn" | "mlp" => BiasKind::Nn,
            "zero" => BiasKind::Zero,
            "bucket" => BiasKind::Bucket,
            _ => return Err(Error::UnknownKind(s.to_string())),
        };
        Ok(kind)
    }
}
