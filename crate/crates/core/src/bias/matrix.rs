use serde::{Deserialize, Serialize};

use crate::bias::function::temporal_bucket_of;
use crate::bias::{BiasFunctionSpec, BiasKind, MLP_WIDTH};
use crate::error::{Error, Result};
use crate::numerics::kernels::{silu, softplus};
use crate::numerics::{counters, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Positional,
    Temporal,
}

/// An `n×n` causal bias map. Entries with `j > i` are exactly 0.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasMatrix {
    pub n: usize,
    pub values: Tensor,
    pub kind: MapKind,
}

impl BiasMatrix {
    pub fn is_causal(&self) -> bool {
        (0..self.n).all(|i| (i + 1..self.n).all(|j| self.values.get(i, j) == 0.0))
    }
}

/// Learnable bucket weights. Positional tables index by relative distance;
/// temporal tables by `floor(log2(1 + Δ/time_scale))`. The last bucket
/// absorbs everything beyond it.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketTable {
    pub beta: Vec<Real>,
    pub time_scale: Real,
}

impl BucketTable {
    pub fn new(beta: Vec<Real>, time_scale: Real) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::Config(
                "bucket table needs at least one entry".into(),
            ));
        }
        check_time_scale(time_scale)?;
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("bucket table".into()));
        }
        Ok(BucketTable { beta, time_scale })
    }
}

fn check_time_scale(time_scale: Real) -> Result<()> {
    if !time_scale.is_finite() || time_scale <= 0.0 {
        return Err(Error::Config(format!(
            "time_scale must be > 0, got {time_scale}"
        )));
    }
    Ok(())
}

/// Elapsed time `max(0, (t_i − t_j)/time_scale)` on and below the diagonal,
/// 0 above it.
pub fn elapsed_matrix(timestamps: &[i64], time_scale: Real) -> Result<Tensor> {
    check_time_scale(time_scale)?;
    let n = timestamps.len();
    let mut out = Tensor::zeros(n, n);
    for (i, &ti) in timestamps.iter().enumerate() {
        let row = out.row_mut(i);
        for (j, &tj) in timestamps[..=i].iter().enumerate() {
            row[j] = elapsed(ti, tj, time_scale);
        }
    }
    Ok(out)
}

#[inline]
pub(crate) fn elapsed(ti: i64, tj: i64, time_scale: Real) -> Real {
    ((ti - tj) as Real / time_scale).max(0.0)
}

fn fill_causal(timestamps: &[i64], time_scale: Real, f: impl Fn(Real) -> Real) -> Tensor {
    let n = timestamps.len();
    let mut out = Tensor::zeros(n, n);
    for (i, &ti) in timestamps.iter().enumerate() {
        let row = &mut out.row_mut(i)[..=i];
        for (v, &tj) in row.iter_mut().zip(timestamps) {
            *v = f(elapsed(ti, tj, time_scale));
        }
    }
    out
}

/// Functional temporal bias: `value[i,j] = f(Δ_ij)` for `j ≤ i`. Every kind
/// except `bucket` is pure arithmetic on Δ with no indexed reads.
pub fn frab_matrix(
    timestamps: &[i64],
    spec: &BiasFunctionSpec,
    time_scale: Real,
) -> Result<BiasMatrix> {
    check_time_scale(time_scale)?;
    spec.validate()?;
    let p = |k: &str| spec.scalar(k);
    let pow_b = |raw: Real| {
        if spec.softplus_exponent {
            softplus(raw)
        } else {
            raw
        }
    };
    let values = match spec.kind {
        BiasKind::Linear => {
            let (a, b) = (p("a")?, p("b")?);
            fill_causal(timestamps, time_scale, |x| a * x + b)
        }
        BiasKind::Log => {
            let (a, eb, c) = (p("a")?, p("b")?.exp(), p("c")?);
            fill_causal(timestamps, time_scale, |x| a * (eb * x).ln_1p() + c)
        }
        BiasKind::Exp => {
            let (a, eb) = (p("a")?, p("b")?.exp());
            fill_causal(timestamps, time_scale, |x| a * (-eb * x).exp())
        }
        BiasKind::Sin => {
            let (a, b, c, d) = (p("a")?, p("b")?, p("c")?, p("d")?);
            fill_causal(timestamps, time_scale, |x| c * (a * x + b).sin() + d)
        }
        BiasKind::Pow => {
            let (a, b) = (p("a")?, pow_b(p("b")?));
            // exp(−b·ln(1+x)) is ~10% cheaper than powf with the same result to
            // a few ulps; 1+x ≥ 1 so ln needs no ln_1p.
            fill_causal(timestamps, time_scale, |x| a * (-b * (1.0 + x).ln()).exp())
        }
        BiasKind::Mixed => {
            let lin = (p("linear.a")?, p("linear.b")?);
            let log = (p("log.a")?, p("log.b")?.exp(), p("log.c")?);
            let exp = (p("exp.a")?, p("exp.b")?.exp());
            let sin = (p("sin.a")?, p("sin.b")?, p("sin.c")?, p("sin.d")?);
            let pow = (p("pow.a")?, pow_b(p("pow.b")?));
            fill_causal(timestamps, time_scale, |x| {
                let l = x.ln_1p();
                (lin.0 * x
                    + lin.1
                    + log.0 * (log.1 * x).ln_1p()
                    + log.2
                    + exp.0 * (-exp.1 * x).exp()
                    + sin.2 * (sin.0 * x + sin.1).sin()
                    + sin.3
                    + pow.0 * (-pow.1 * l).exp())
                    / 5.0
            })
        }
        BiasKind::Nn => {
            let w = |k: &str| &spec.params[k];
            let (w1, b1, w2, b2, w3, b3) =
                (w("W1"), w("b1"), w("W2"), w("b2"), w("W3"), w("b3").item());
            fill_causal(timestamps, time_scale, |x| {
                let mut h1 = [0.0; MLP_WIDTH];
                for (k, h) in h1.iter_mut().enumerate() {
                    *h = (w1.data()[k] * x + b1.data()[k]).sin();
                }
                let mut out = b3;
                for j in 0..MLP_WIDTH {
                    let mut z = b2.data()[j];
                    for (k, &h) in h1.iter().enumerate() {
                        z += h * w2.get(k, j);
                    }
                    out += silu(z) * w3.data()[j];
                }
                out
            })
        }
        BiasKind::Zero => Tensor::zeros(timestamps.len(), timestamps.len()),
        BiasKind::Bucket => {
            let table = BucketTable::new(spec.params["beta"].data().to_vec(), time_scale)?;
            return bucketed_rab_temporal(timestamps, &table);
        }
    };
    // pow, exp and sin are bounded by their finite amplitude parameters
    if !matches!(
        spec.kind,
        BiasKind::Pow | BiasKind::Exp | BiasKind::Sin | BiasKind::Zero
    ) {
        values.ensure_finite("frab_matrix")?;
    }
    Ok(BiasMatrix {
        n: timestamps.len(),
        values,
        kind: MapKind::Temporal,
    })
}

/// Relative-position bias `β[min(i − j, d_rab − 1)]` for `j ≤ i`.
pub fn bucketed_rab_positional(n: usize, table: &BucketTable) -> Result<BiasMatrix> {
    let last = table.beta.len() - 1;
    let mut values = Tensor::zeros(n, n);
    for i in 0..n {
        let row = values.row_mut(i);
        for (j, v) in row[..=i].iter_mut().enumerate() {
            *v = table.beta[(i - j).min(last)];
        }
    }
    counters::record_gathers((n * (n + 1) / 2) as u64);
    Ok(BiasMatrix {
        n,
        values,
        kind: MapKind::Positional,
    })
}

/// Log-bucketed temporal bias. Bucket indices are materialized first, then
/// gathered from the table, one data-dependent read per kept entry.
pub fn bucketed_rab_temporal(timestamps: &[i64], table: &BucketTable) -> Result<BiasMatrix> {
    check_time_scale(table.time_scale)?;
    let n = timestamps.len();
    let max_bucket = table.beta.len();
    let mut index = Vec::with_capacity(n * (n + 1) / 2);
    for (i, &ti) in timestamps.iter().enumerate() {
        for &tj in &timestamps[..=i] {
            index.push(temporal_bucket_of(elapsed(ti, tj, table.time_scale), max_bucket) as u32);
        }
    }
    let mut values = Tensor::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for v in values.row_mut(i)[..=i].iter_mut() {
            *v = table.beta[index[k] as usize];
            k += 1;
        }
    }
    counters::record_gathers(index.len() as u64);
    Ok(BiasMatrix {
        n,
        values,
        kind: MapKind::Temporal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bias::eval_bias_function;
    use crate::data::seeded_rng;
    use rand::Rng;

    fn random_timestamps<R: Rng>(rng: &mut R, n: usize) -> Vec<i64> {
        let mut t = rng.random_range(0..1_000_000_000i64);
        (0..n)
            .map(|_| {
                t += rng.random_range(0..5 * 86_400);
                t
            })
            .collect()
    }

    fn oracle(timestamps: &[i64], spec: &BiasFunctionSpec, time_scale: Real) -> Tensor {
        let n = timestamps.len();
        let mut out = Tensor::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if j <= i {
                    let x = ((timestamps[i] - timestamps[j]) as Real / time_scale).max(0.0);
                    out.set(i, j, eval_bias_function(spec, x).unwrap());
                }
            }
        }
        out
    }

    #[test]
    fn pow_equal_timestamps_gives_ones() {
        let spec = BiasFunctionSpec::closed(BiasKind::Pow, &[("a", 1.0), ("b", 1.0)]).unwrap();
        let m = frab_matrix(&[50; 6], &spec, 86_400.0).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(m.values.get(i, j), if j <= i { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn zero_kind_gives_zero_matrix() {
        let spec = BiasFunctionSpec::closed(BiasKind::Zero, &[]).unwrap();
        let m = frab_matrix(&[1, 5, 9], &spec, 1.0).unwrap();
        assert!(m.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn every_kind_matches_loop_oracle() {
        let mut rng = seeded_rng(11);
        for kind in BiasKind::ALL {
            for _ in 0..5 {
                let n = rng.random_range(1..=24);
                let ts = random_timestamps(&mut rng, n);
                let spec = BiasFunctionSpec::init(kind, true, 16, &mut rng);
                let fast = frab_matrix(&ts, &spec, 86_400.0).unwrap();
                assert!(fast.is_causal());
                let slow = oracle(&ts, &spec, 86_400.0);
                assert!(fast.values.max_abs_diff(&slow) <= 1e-12, "{kind}");
            }
        }
    }

    #[test]
    fn positional_direct_indexing() {
        let table = BucketTable::new(vec![1.0, 2.0, 3.0], 1.0).unwrap();
        let m = bucketed_rab_positional(3, &table).unwrap();
        assert_eq!(m.values.row(2), &[3.0, 2.0, 1.0]);
        assert!(m.is_causal());
        let zeros = BucketTable::new(vec![0.0; 3], 1.0).unwrap();
        assert!(bucketed_rab_positional(3, &zeros)
            .unwrap()
            .values
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn positional_clamps_far_distances() {
        let table = BucketTable::new(vec![5.0, 4.0], 1.0).unwrap();
        let m = bucketed_rab_positional(4, &table).unwrap();
        assert_eq!(m.values.row(3), &[4.0, 4.0, 4.0, 5.0]);
    }

    #[test]
    fn temporal_buckets_and_gather_count() {
        let beta: Vec<Real> = (0..128).map(|k| k as Real).collect();
        let table = BucketTable::new(beta, 10.0).unwrap();
        let ((), before) = counters::measure(|| ());
        assert_eq!(before.gathers, 0);
        let (m, counts) = counters::measure(|| bucketed_rab_temporal(&[0, 0, 70], &table).unwrap());
        assert_eq!(counts.gathers, 6);
        // Δ/time_scale = 7 -> bucket 3
        assert_eq!(m.values.row(2), &[3.0, 3.0, 0.0]);
        assert_eq!(m.values.get(1, 0), 0.0);
    }

    #[test]
    fn frab_closed_forms_do_not_gather() {
        let mut rng = seeded_rng(2);
        let ts = random_timestamps(&mut rng, 64);
        for kind in BiasKind::ALL.into_iter().filter(|k| !k.gathers()) {
            let spec = BiasFunctionSpec::init(kind, true, 128, &mut rng);
            let (_, counts) = counters::measure(|| frab_matrix(&ts, &spec, 86_400.0).unwrap());
            assert_eq!(counts.gathers, 0, "{kind}");
        }
    }

    #[test]
    fn bad_time_scale_rejected() {
        let spec = BiasFunctionSpec::closed(BiasKind::Zero, &[]).unwrap();
        assert!(frab_matrix(&[1, 2], &spec, 0.0).is_err());
    }
}
