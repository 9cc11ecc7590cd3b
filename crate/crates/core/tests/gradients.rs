//! Reverse-mode gradients of every tape op against central differences on
//! random shapes up to 8×8.

use proptest::prelude::*;
use rand::Rng;
use seqrec_core::data::seeded_rng;
use seqrec_core::numerics::{
    grad_check_with_floor, round_off_floor, GradCheckReport, ParamStore, Real, SoftmaxRow, Tape,
    Tensor, Var,
};
use seqrec_core::Result;

const TOL: Real = 1e-5;
const H: Real = 1e-5;

fn random(rows: usize, cols: usize, lo: Real, hi: Real, seed: u64) -> Tensor {
    let mut rng = seeded_rng(seed);
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

fn store(params: &[(&str, Tensor)]) -> ParamStore {
    let mut s = ParamStore::new();
    for (name, t) in params {
        s.insert(*name, t.clone(), true).unwrap();
    }
    s
}

/// `Σ W ⊙ out` with fixed, uneven weights. `|W| ≥ 0.4` keeps true gradients
/// away from zero, where central differences are pure round-off.
fn weighted_sum(tape: &mut Tape<'_>, out: Var) -> Result<Var> {
    let (r, c) = tape.value(out).shape();
    let w = tape.constant(Tensor::from_fn(r, c, |i, j| {
        let w = 0.4 + ((i * 7 + j * 3) % 5) as Real * 0.25;
        if (i + j) % 2 == 0 {
            w
        } else {
            -w
        }
    }))?;
    let prod = tape.mul(out, w)?;
    tape.sum_all(prod)
}

/// Runs the checker with a floor matched to the loss's own round-off, so
/// entries whose true gradient is zero are judged against the noise of
/// `(L(θ+h) − L(θ−h)) / 2h` rather than a fixed 1e-6.
fn check_loss<F>(mut params: ParamStore, loss: F) -> GradCheckReport
where
    F: for<'p> Fn(&mut Tape<'p>, &'p ParamStore) -> Result<Var>,
{
    let value = {
        let mut tape = Tape::new();
        let out = loss(&mut tape, &params).unwrap();
        tape.value(out).item()
    };
    let report = grad_check_with_floor(&mut params, H, round_off_floor(value, H), loss).unwrap();
    assert!(report.skipped.is_empty());
    report
}

fn check<F>(params: ParamStore, build: F) -> Real
where
    F: for<'p> Fn(&mut Tape<'p>, &'p ParamStore) -> Result<Var>,
{
    check_loss(params, |tape, store| {
        let out = build(tape, store)?;
        weighted_sum(tape, out)
    })
    .max_rel_error
}

macro_rules! unary {
    ($name:ident, $op:ident, $lo:expr, $hi:expr) => {
        proptest! {
            #[test]
            fn $name(r in 1usize..=8, c in 1usize..=8, seed in any::<u64>()) {
                let s = store(&[("x", random(r, c, $lo, $hi, seed))]);
                let err = check(s, |t, s| {
                    let x = t.param(s, "x")?;
                    t.$op(x)
                });
                prop_assert!(err < TOL, "{}", err);
            }
        }
    };
}

unary!(silu_op, silu, -3.0, 3.0);
unary!(sigmoid_op, sigmoid, -3.0, 3.0);
unary!(softplus_op, softplus, -3.0, 3.0);
unary!(exp_op, exp, -2.0, 2.0);
unary!(ln_op, ln, 0.3, 3.0);
unary!(sin_op, sin, -3.0, 3.0);

proptest! {
    #[test]
    fn matmul_op(r in 1usize..=8, k in 1usize..=8, c in 1usize..=8, seed in any::<u64>()) {
        let s = store(&[("a", random(r, k, -1.0, 1.0, seed)), ("b", random(k, c, -1.0, 1.0, seed ^ 1))]);
        let err = check(s, |t, s| {
            let (a, b) = (t.param(s, "a")?, t.param(s, "b")?);
            t.matmul(a, b)
        });
        prop_assert!(err < TOL, "{}", err);
    }

    #[test]
    fn matmul_bt_op(r in 1usize..=8, k in 1usize..=8, c in 1usize..=8, seed in any::<u64>()) {
        let s = store(&[("a", random(r, k, -1.0, 1.0, seed)), ("b", random(c, k, -1.0, 1.0, seed ^ 1))]);
        let err = check(s, |t, s| {
            let (a, b) = (t.param(s, "a")?, t.param(s, "b")?);
            t.matmul_bt(a, b)
        });
        prop_assert!(err < TOL, "{}", err);
    }

    #[test]
    fn add_and_mul_ops(r in 1usize..=8, c in 1usize..=8, seed in any::<u64>()) {
        let s = store(&[("a", random(r, c, -1.0, 1.0, seed)), ("b", random(r, c, -1.0, 1.0, seed ^ 1))]);
        let err = check(s, |t, s| {
            let (a, b) = (t.param(s, "a")?, t.param(s, "b")?);
            let p = t.mul(a, b)?;
            let q = t.add(p, a)?;
            t.scale(q, -1.7)
        });
        prop_assert!(err < TOL, "{}", err);
    }

    #[test]
    fn scalar_broadcast_ops(r in 1usize..=8, c in 1usize..=8, seed in any::<u64>()) {
        let s = store(&[
            ("x", random(r, c, -1.0, 1.0, seed)),
            ("s", random(1, 1, 0.2, 2.0, seed ^ 1)),
            ("o", random(1, 1, -1.0, 1.0, seed ^ 2)),
            ("b", random(1, c, -1.0, 1.0, seed ^ 3)),
        ]);
        let err = check(s, |t, s| {
            let (x, sc, o, b) = (t.param(s, "x")?, t.param(s, "s")?, t.param(s, "o")?, t.param(s, "b")?);
            let y = t.scale_by(sc, x)?;
            let y = t.add_scalar(o, y)?;
            t.add_row_bias(y, b)
        });
        prop_assert!(err < TOL, "{}", err);
    }

    #[test]
    fn rmsnorm_op(r in 1usize..=8, c in 1usize..=8, seed in any::<u64>()) {
        // Rows bounded away from zero: near x = 0 the norm's curvature is
        // ~1/sqrt(eps) and finite differences stop being an oracle.
        let mut x = random(r, c, 0.3, 2.0, seed);
        let mut rng = seeded_rng(seed ^ 2);
        x.data_mut().iter_mut().for_each(|v| if rng.random_bool(0.5) { *v = -*v });
        let s = store(&[("x", x), ("g", random(1, c, 0.5, 1.5, seed ^ 1))]);
        let err = check(s, |t, s| {
            let (x, g) = (t.param(s, "x")?, t.param(s, "g")?);
            t.rmsnorm(x, g)
        });
        prop_assert!(err < TOL, "{}", err);
    }

    #[test]
    fn column_ops(r in 1usize..=8, c1 in 1usize..=4, c2 in 1usize..=4, start in 0usize..4, seed in any::<u64>()) {
        let s = store(&[("a", random(r, c1, -1.0, 1.0, seed)), ("b", random(r, c2, -1.0, 1.0, seed ^ 1))]);
        let total = c1 + c2;
        let start = start % total;
        let width = total - start;
        let err = check(s, |t, s| {
            let (a, b) = (t.param(s, "a")?, t.param(s, "b")?);
            let cat = t.concat_cols(&[a, b, a])?;
            let sl = t.slice_cols(cat, start, width)?;
            let (rr, cc) = t.value(sl).shape();
            t.reshape(sl, cc, rr)
        });
        prop_assert!(err < TOL, "{}", err);
    }

    #[test]
    fn causal_ops(n in 1usize..=8, scale in 0.1f64..2.0, seed in any::<u64>()) {
        let s = store(&[("x", random(n, n, -2.0, 2.0, seed))]);
        let err = check(s, |t, s| {
            let x = t.param(s, "x")?;
            let a = t.silu_causal(x, scale as Real)?;
            let b = t.causal_mask(x)?;
            t.add(a, b)
        });
        prop_assert!(err < TOL, "{}", err);
    }

    #[test]
    fn gather_ops(k in 1usize..=8, c in 1usize..=8, r in 1usize..=8, seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let rows: Vec<usize> = (0..r).map(|_| rng.random_range(0..k)).collect();
        let entries: Vec<Option<usize>> = (0..r * c)
            .map(|_| if rng.random_bool(0.8) { Some(rng.random_range(0..k)) } else { None })
            .collect();
        let s = store(&[("table", random(k, c, -1.0, 1.0, seed)), ("flat", random(1, k, -1.0, 1.0, seed ^ 1))]);
        let err = check(s, |t, s| {
            let (table, flat) = (t.param(s, "table")?, t.param(s, "flat")?);
            let g = t.gather_rows(table, rows.clone())?;
            let e = t.gather_entries(flat, entries.clone(), r, c)?;
            t.mul(g, e)
        });
        prop_assert!(err < TOL, "{}", err);
    }

    #[test]
    fn sampled_softmax_op(r in 1usize..=8, d in 1usize..=8, items in 3usize..=8, seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let rows: Vec<SoftmaxRow> = (0..r)
            .map(|position| SoftmaxRow {
                position,
                candidates: (0..rng.random_range(2..=4)).map(|_| rng.random_range(0..items)).collect(),
            })
            .collect();
        let params = store(&[("h", random(r, d, -1.0, 1.0, seed)), ("e", random(items, d, -1.0, 1.0, seed ^ 1))]);
        let report = check_loss(params, |t, s| {
            let (h, e) = (t.param(s, "h")?, t.param(s, "e")?);
            t.sampled_softmax(h, e, rows.clone())
        });
        prop_assert!(report.max_rel_error < TOL, "{:?}", report);
    }
}
