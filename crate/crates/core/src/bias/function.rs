use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::bias::BiasKind;
use crate::error::{Error, Result};
use crate::numerics::kernels::{silu, softplus, softplus_inverse};
use crate::numerics::{ParamStore, Real, Tensor};

/// Hidden width of the `nn` kind's MLP (1 → 16 → 16 → 1).
pub const MLP_WIDTH: usize = 16;
/// Seconds per model time unit.
pub const DEFAULT_TIME_SCALE: Real = 86_400.0;
/// Number of temporal buckets.
pub const DEFAULT_MAX_BUCKET: usize = 128;

/// A temporal bias function: its kind plus raw parameter values keyed by
/// name. Scalars are `1×1` tensors. `mixed` prefixes each member's keys with
/// the member name (`pow.a`); `nn` uses `W1, b1, W2, b2, W3, b3`; `bucket`
/// uses a `1×max_bucket` table `beta`.
///
/// With `softplus_exponent` set, the stored pow `b` is a raw value and the
/// exponent is `softplus(b)`, which is always positive.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasFunctionSpec {
    pub kind: BiasKind,
    pub params: IndexMap<String, Tensor>,
    pub softplus_exponent: bool,
}

fn member_key(member: BiasKind, key: &str, mixed: bool) -> String {
    if mixed {
        format!("{member}.{key}")
    } else {
        key.to_string()
    }
}

/// Parameter keys and shapes of a kind.
pub fn param_layout(kind: BiasKind, max_bucket: usize) -> Vec<(String, (usize, usize))> {
    let closed = |member: BiasKind, mixed: bool| {
        member
            .scalar_keys()
            .iter()
            .map(move |k| (member_key(member, k, mixed), (1, 1)))
    };
    match kind {
        BiasKind::Mixed => BiasKind::CLOSED_FORMS
            .iter()
            .flat_map(|&m| closed(m, true))
            .collect(),
        BiasKind::Nn => vec![
            ("W1".into(), (1, MLP_WIDTH)),
            ("b1".into(), (1, MLP_WIDTH)),
            ("W2".into(), (MLP_WIDTH, MLP_WIDTH)),
            ("b2".into(), (1, MLP_WIDTH)),
            ("W3".into(), (MLP_WIDTH, 1)),
            ("b3".into(), (1, 1)),
        ],
        BiasKind::Zero => vec![],
        BiasKind::Bucket => vec![("beta".into(), (1, max_bucket))],
        k => closed(k, false).collect(),
    }
}

fn closed_form_init(member: BiasKind, softplus_exponent: bool) -> Vec<(&'static str, Real)> {
    match member {
        BiasKind::Linear => vec![("a", 0.0), ("b", 1.0)],
        BiasKind::Log => vec![("a", 1.0), ("b", 0.0), ("c", 0.0)],
        BiasKind::Exp => vec![("a", 1.0), ("b", 0.0)],
        BiasKind::Sin => vec![
            ("a", 1.0),
            ("b", std::f64::consts::FRAC_PI_2 as Real),
            ("c", 1.0),
            ("d", 0.0),
        ],
        BiasKind::Pow => {
            let b = if softplus_exponent {
                softplus_inverse(1.0)
            } else {
                1.0
            };
            vec![("a", 1.0), ("b", b)]
        }
        _ => unreachable!("not a closed form"),
    }
}

impl BiasFunctionSpec {
    /// Default initialization. Closed forms start at a decaying or constant
    /// curve with value 1 at `x = 0` where the formula allows; pow starts at
    /// `a = 1, b = 1`. MLP weights are drawn from `rng`.
    pub fn init<R: Rng + ?Sized>(
        kind: BiasKind,
        softplus_exponent: bool,
        max_bucket: usize,
        rng: &mut R,
    ) -> Self {
        let mut params = IndexMap::new();
        let put_closed = |member: BiasKind, mixed: bool, params: &mut IndexMap<String, Tensor>| {
            for (k, v) in closed_form_init(member, softplus_exponent) {
                params.insert(member_key(member, k, mixed), Tensor::scalar(v));
            }
        };
        match kind {
            BiasKind::Mixed => {
                for m in BiasKind::CLOSED_FORMS {
                    put_closed(m, true, &mut params);
                }
            }
            BiasKind::Nn => {
                let mut normal = |rows: usize, cols: usize, std: f64| {
                    let dist = Normal::new(0.0, std).expect("positive std");
                    Tensor::from_fn(rows, cols, |_, _| dist.sample(rng) as Real)
                };
                let w = MLP_WIDTH;
                params.insert("W1".into(), normal(1, w, 1.0));
                params.insert("b1".into(), Tensor::zeros(1, w));
                params.insert("W2".into(), normal(w, w, 1.0 / (w as f64).sqrt()));
                params.insert("b2".into(), Tensor::zeros(1, w));
                params.insert("W3".into(), normal(w, 1, 1.0 / (w as f64).sqrt()));
                params.insert("b3".into(), Tensor::zeros(1, 1));
            }
            BiasKind::Zero => {}
            BiasKind::Bucket => {
                params.insert("beta".into(), Tensor::filled(1, max_bucket, 1.0));
            }
            k => put_closed(k, false, &mut params),
        }
        BiasFunctionSpec {
            kind,
            params,
            softplus_exponent,
        }
    }

    /// A closed-form (or zero) spec from literal values. The exponent of pow
    /// is taken as given.
    pub fn closed(kind: BiasKind, values: &[(&str, Real)]) -> Result<Self> {
        let spec = BiasFunctionSpec {
            kind,
            params: values
                .iter()
                .map(|&(k, v)| (k.to_string(), Tensor::scalar(v)))
                .collect(),
            softplus_exponent: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn max_bucket(&self) -> usize {
        self.params
            .get("beta")
            .map_or(DEFAULT_MAX_BUCKET, Tensor::cols)
    }

    pub fn scalar(&self, key: &str) -> Result<Real> {
        let t = self
            .params
            .get(key)
            .ok_or_else(|| Error::UnknownParam(format!("{}.{key}", self.kind)))?;
        if t.shape() != (1, 1) {
            return Err(Error::shape("bias scalar", t.shape(), (1, 1)));
        }
        Ok(t.item())
    }

    /// Checks keys, shapes, finiteness and exponent positivity.
    pub fn validate(&self) -> Result<()> {
        let layout = param_layout(self.kind, self.max_bucket());
        if layout.len() != self.params.len() {
            return Err(Error::Config(format!(
                "{} bias expects parameters {:?}, got {:?}",
                self.kind,
                layout.iter().map(|(k, _)| k.as_str()).collect::<Vec<_>>(),
                self.params.keys().collect::<Vec<_>>()
            )));
        }
        for (key, shape) in &layout {
            let t = self
                .params
                .get(key)
                .ok_or_else(|| Error::UnknownParam(format!("{}.{key}", self.kind)))?;
            if t.shape() != *shape {
                return Err(Error::shape("bias parameter", t.shape(), *shape));
            }
            t.ensure_finite(key)?;
        }
        let pow_b = match self.kind {
            BiasKind::Pow => Some("b"),
            BiasKind::Mixed => Some("pow.b"),
            _ => None,
        };
        if let (false, Some(key)) = (self.softplus_exponent, pow_b) {
            if self.scalar(key)? <= 0.0 {
                return Err(Error::Config("pow exponent b must be > 0".into()));
            }
        }
        Ok(())
    }

    fn pow_exponent(&self, raw: Real) -> Real {
        if self.softplus_exponent {
            softplus(raw)
        } else {
            raw
        }
    }

    fn closed_form(&self, member: BiasKind, mixed: bool, x: Real) -> Result<Real> {
        let p = |k: &str| self.scalar(&member_key(member, k, mixed));
        let v = match member {
            BiasKind::Linear => p("a")? * x + p("b")?,
            BiasKind::Log => p("a")? * (1.0 + p("b")?.exp() * x).ln() + p("c")?,
            BiasKind::Exp => p("a")? * (-p("b")?.exp() * x).exp(),
            BiasKind::Sin => p("c")? * (p("a")? * x + p("b")?).sin() + p("d")?,
            BiasKind::Pow => p("a")? * (1.0 + x).powf(-self.pow_exponent(p("b")?)),
            _ => unreachable!("not a closed form"),
        };
        Ok(v)
    }

    fn mlp(&self, x: Real) -> Result<Real> {
        let get = |k: &str| {
            self.params
                .get(k)
                .ok_or_else(|| Error::UnknownParam(format!("nn.{k}")))
        };
        let (w1, b1, w2, b2, w3, b3) = (
            get("W1")?,
            get("b1")?,
            get("W2")?,
            get("b2")?,
            get("W3")?,
            get("b3")?,
        );
        let h1: Vec<Real> = (0..MLP_WIDTH)
            .map(|k| (w1.get(0, k) * x + b1.get(0, k)).sin())
            .collect();
        let mut out = b3.item();
        for j in 0..MLP_WIDTH {
            let mut z = b2.get(0, j);
            for (k, &h) in h1.iter().enumerate() {
                z += h * w2.get(k, j);
            }
            out += silu(z) * w3.get(j, 0);
        }
        Ok(out)
    }

    /// Writes every parameter into `store` as `{prefix}.{kind}.{key}`.
    pub fn register(&self, store: &mut ParamStore, prefix: &str) -> Result<()> {
        self.validate()?;
        for (key, t) in &self.params {
            store.insert(format!("{prefix}.{}.{key}", self.kind), t.clone(), true)?;
        }
        Ok(())
    }

    /// Reads a spec back from `store`.
    pub fn from_store(
        store: &ParamStore,
        prefix: &str,
        kind: BiasKind,
        softplus_exponent: bool,
        max_bucket: usize,
    ) -> Result<Self> {
        let mut params = IndexMap::new();
        for (key, _) in param_layout(kind, max_bucket) {
            let value = store.value(&format!("{prefix}.{kind}.{key}"))?.clone();
            params.insert(key, value);
        }
        let spec = BiasFunctionSpec {
            kind,
            params,
            softplus_exponent,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Evaluates `f(x)` for elapsed time `x ≥ 0` (model time units).
pub fn eval_bias_function(spec: &BiasFunctionSpec, x: Real) -> Result<Real> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::Precondition(format!(
            "bias function argument must be finite and >= 0, got {x}"
        )));
    }
    let v = match spec.kind {
        BiasKind::Mixed => {
            let mut total = 0.0;
            for m in BiasKind::CLOSED_FORMS {
                total += spec.closed_form(m, true, x)?;
            }
            total / BiasKind::CLOSED_FORMS.len() as Real
        }
        BiasKind::Nn => spec.mlp(x)?,
        BiasKind::Zero => 0.0,
        BiasKind::Bucket => {
            let beta = spec
                .params
                .get("beta")
                .ok_or_else(|| Error::UnknownParam("bucket.beta".into()))?;
            beta.data()[temporal_bucket_of(x, beta.cols())]
        }
        k => spec.closed_form(k, false, x)?,
    };
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("{} bias at x = {x}", spec.kind)));
    }
    Ok(v)
}

/// `floor(log2(1 + x))` clamped to `[0, max_bucket − 1]`.
pub fn temporal_bucket_of(x: Real, max_bucket: usize) -> usize {
    let b = (1.0 + x.max(0.0)).log2().floor();
    (b as usize).min(max_bucket.saturating_sub(1))
}
