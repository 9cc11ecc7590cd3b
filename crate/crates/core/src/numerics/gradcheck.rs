//! Central finite-difference verification of reverse-mode gradients.

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Real, Tape, Var};

/// Gradients smaller than this are compared in absolute rather than relative
/// terms. Central differences at `h = 1e-5` carry round-off near
/// `ε·|L|/h ≈ 1e-11`, which must stay well below `floor × tolerance`.
pub const RELATIVE_FLOOR: Real = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: Real,
    /// Parameter name and flat offset of the worst entry.
    pub worst: Option<(String, usize)>,
    /// Worst error per checked parameter, in store order.
    pub per_param: Vec<(String, Real)>,
    pub checked_scalars: usize,
    /// Parameters skipped because they are not trainable.
    pub skipped: Vec<String>,
}

pub fn relative_error(analytic: Real, numeric: Real) -> Real {
    relative_error_with_floor(analytic, numeric, RELATIVE_FLOOR)
}

pub fn relative_error_with_floor(analytic: Real, numeric: Real, floor: Real) -> Real {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

fn eval_loss<F>(params: &ParamStore, loss: &F) -> Result<Real>
where
    F: for<'p> Fn(&mut Tape<'p>, &'p ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = loss(&mut tape, params)?;
    let v = tape.value(out);
    if v.shape() != (1, 1) || !v.item().is_finite() {
        return Err(Error::NonFinite("grad_check loss".into()));
    }
    Ok(v.item())
}

/// Compares the tape gradient of every trainable scalar with
/// `(L(θ+h) − L(θ−h)) / 2h`. Parameter values are restored afterwards.
pub fn grad_check<F>(params: &mut ParamStore, h: Real, loss: F) -> Result<GradCheckReport>
where
    F: for<'p> Fn(&mut Tape<'p>, &'p ParamStore) -> Result<Var>,
{
    grad_check_with_floor(params, h, RELATIVE_FLOOR, loss)
}

/// Floor at which 100 ulps of round-off in `L` (sums of many terms lose more
/// than one) cost at most `1e-5` relative error: `1e7 · ε · max(1, |L|) / 2h`,
/// never below [`RELATIVE_FLOOR`]. Needed when true gradients can be zero.
pub fn round_off_floor(loss_value: Real, h: Real) -> Real {
    (1e7 * Real::EPSILON * loss_value.abs().max(1.0) / (2.0 * h)).max(RELATIVE_FLOOR)
}

/// [`grad_check`] with an explicit floor for the relative error.
pub fn grad_check_with_floor<F>(
    params: &mut ParamStore,
    h: Real,
    floor: Real,
    loss: F,
) -> Result<GradCheckReport>
where
    F: for<'p> Fn(&mut Tape<'p>, &'p ParamStore) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let out = loss(&mut tape, params)?;
        if !tape.value(out).item().is_finite() {
            return Err(Error::NonFinite("grad_check loss".into()));
        }
        tape.backward(out)?
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        per_param: Vec::new(),
        checked_scalars: 0,
        skipped: Vec::new(),
    };
    for idx in 0..params.len() {
        let (name, p) = params.by_index(idx).expect("index in range");
        let name = name.to_string();
        if !p.trainable {
            report.skipped.push(name);
            continue;
        }
        let len = p.value.len();
        let grad = analytic.get(idx).cloned();
        let mut worst_here: Real = 0.0;
        for k in 0..len {
            let original = params.by_index(idx).unwrap().1.value.data()[k];
            params.by_index_mut(idx).unwrap().1.value.data_mut()[k] = original + h;
            let plus = eval_loss(params, &loss);
            params.by_index_mut(idx).unwrap().1.value.data_mut()[k] = original - h;
            let minus = eval_loss(params, &loss);
            params.by_index_mut(idx).unwrap().1.value.data_mut()[k] = original;
            let numeric = (plus? - minus?) / (2.0 * h);
            let a = grad.as_ref().map_or(0.0, |g| g.data()[k]);
            let err = relative_error_with_floor(a, numeric, floor);
            worst_here = worst_here.max(err);
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), k));
            }
            report.checked_scalars += 1;
        }
        report.per_param.push((name, worst_here));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn linear_layer_square_loss() {
        let mut store = ParamStore::new();
        store
            .insert(
                "w",
                Tensor::from_rows(&[[0.3, -0.2], [0.1, 0.4], [-0.5, 0.25]]).unwrap(),
                true,
            )
            .unwrap();
        let x = Tensor::from_rows(&[[1.0, 2.0, -1.0], [0.5, -0.3, 0.8]]).unwrap();
        let target = Tensor::from_rows(&[[0.2, -0.1], [0.0, 0.3]]).unwrap();
        let report = grad_check(&mut store, 1e-5, |tape, p| {
            let w = tape.param(p, "w")?;
            let xv = tape.constant(x.clone())?;
            let t = tape.constant(target.clone())?;
            let y = tape.matmul(xv, w)?;
            let neg = tape.scale(t, -1.0)?;
            let r = tape.add(y, neg)?;
            let sq = tape.mul(r, r)?;
            tape.sum_all(sq)
        })
        .unwrap();
        assert_eq!(report.checked_scalars, 6);
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }

    #[test]
    fn frozen_parameters_reported_as_skipped() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(2.0), true).unwrap();
        store.insert("frozen", Tensor::scalar(1.0), false).unwrap();
        let report = grad_check(&mut store, 1e-5, |tape, p| {
            let w = tape.param(p, "w")?;
            let f = tape.param(p, "frozen")?;
            tape.mul(w, f)
        })
        .unwrap();
        assert_eq!(report.skipped, ["frozen"]);
        assert_eq!(report.checked_scalars, 1);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(0.0), true).unwrap();
        let res = grad_check(&mut store, 1e-5, |tape, p| {
            let w = tape.param(p, "w")?;
            tape.ln(w)
        });
        assert!(res.is_err());
    }
}
