use crate::bias::{eval_bias_function, BiasFunctionSpec};
use crate::error::{Error, Result};
use crate::numerics::Real;

/// Samples `(Δ, f(Δ))` at `points` locations spaced uniformly in `log(1 + Δ)`
/// over `[0, max_delta]`.
pub fn bias_curve(
    spec: &BiasFunctionSpec,
    max_delta: Real,
    points: usize,
) -> Result<Vec<(Real, Real)>> {
    if points < 2 || !max_delta.is_finite() || max_delta <= 0.0 {
        return Err(Error::Config(
            "bias curve needs >= 2 points and max_delta > 0".into(),
        ));
    }
    let top = max_delta.ln_1p();
    (0..points)
        .map(|k| {
            let x = if k + 1 == points {
                max_delta
            } else {
                (top * k as Real / (points - 1) as Real).exp_m1()
            };
            Ok((x, eval_bias_function(spec, x)?))
        })
        .collect()
}

/// Whether the sampled weights never increase along the curve.
pub fn is_non_increasing(curve: &[(Real, Real)]) -> bool {
    curve.windows(2).all(|w| w[1].1 <= w[0].1)
}

/// Serializes a curve as `delta_t,weight` CSV.
pub fn curve_csv(curve: &[(Real, Real)]) -> String {
    let mut out = String::from("delta_t,weight\n");
    for (x, y) in curve {
        out.push_str(&format!("{x},{y}\n"));
    }
    out
}
