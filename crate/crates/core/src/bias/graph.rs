//! Differentiable bias-map construction on a [`Tape`]. Parameter names are
//! `{prefix}.{kind}.{key}` for temporal functions and `{name}` for the
//! positional table.

use crate::bias::function::temporal_bucket_of;
use crate::bias::matrix::elapsed_matrix;
use crate::bias::BiasKind;
use crate::error::Result;
use crate::numerics::{ParamStore, Real, Tape, Tensor, Var};

/// Static settings of a temporal bias function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalBias {
    pub kind: BiasKind,
    pub softplus_exponent: bool,
    pub time_scale: Real,
}

fn scalar<'p>(
    tape: &mut Tape<'p>,
    store: &'p ParamStore,
    prefix: &str,
    kind: BiasKind,
    key: &str,
) -> Result<Var> {
    tape.param(store, &format!("{prefix}.{kind}.{key}"))
}

/// One closed-form member evaluated on the elapsed matrix `x`, unmasked.
/// `member_prefix` is `""` for a standalone kind and `"pow."` etc. inside
/// `mixed`.
#[allow(clippy::too_many_arguments)]
fn closed_form<'p>(
    tape: &mut Tape<'p>,
    store: &'p ParamStore,
    prefix: &str,
    owner: BiasKind,
    member: BiasKind,
    member_prefix: &str,
    x: Var,
    softplus_exponent: bool,
) -> Result<Var> {
    let p = |tape: &mut Tape<'p>, k: &str| {
        scalar(tape, store, prefix, owner, &format!("{member_prefix}{k}"))
    };
    match member {
        BiasKind::Linear => {
            let (a, b) = (p(tape, "a")?, p(tape, "b")?);
            let ax = tape.scale_by(a, x)?;
            tape.add_scalar(b, ax)
        }
        BiasKind::Log => {
            let (a, b, c) = (p(tape, "a")?, p(tape, "b")?, p(tape, "c")?);
            let eb = tape.exp(b)?;
            let t = tape.scale_by(eb, x)?;
            let one = tape.constant(Tensor::scalar(1.0))?;
            let t = tape.add_scalar(one, t)?;
            let t = tape.ln(t)?;
            let t = tape.scale_by(a, t)?;
            tape.add_scalar(c, t)
        }
        BiasKind::Exp => {
            let (a, b) = (p(tape, "a")?, p(tape, "b")?);
            let eb = tape.exp(b)?;
            let t = tape.scale_by(eb, x)?;
            let t = tape.scale(t, -1.0)?;
            let t = tape.exp(t)?;
            tape.scale_by(a, t)
        }
        BiasKind::Sin => {
            let (a, b, c, d) = (p(tape, "a")?, p(tape, "b")?, p(tape, "c")?, p(tape, "d")?);
            let t = tape.scale_by(a, x)?;
            let t = tape.add_scalar(b, t)?;
            let t = tape.sin(t)?;
            let t = tape.scale_by(c, t)?;
            tape.add_scalar(d, t)
        }
        BiasKind::Pow => {
            let (a, b) = (p(tape, "a")?, p(tape, "b")?);
            let b = if softplus_exponent {
                tape.softplus(b)?
            } else {
                b
            };
            let log1p = tape.value(x).map(Real::ln_1p);
            let log1p = tape.constant(log1p)?;
            let t = tape.scale_by(b, log1p)?;
            let t = tape.scale(t, -1.0)?;
            let t = tape.exp(t)?;
            tape.scale_by(a, t)
        }
        _ => unreachable!("not a closed form"),
    }
}

/// Builds the causal temporal bias map for one sequence.
pub fn temporal_on_tape<'p>(
    tape: &mut Tape<'p>,
    store: &'p ParamStore,
    prefix: &str,
    bias: &TemporalBias,
    timestamps: &[i64],
) -> Result<Var> {
    let n = timestamps.len();
    let delta = elapsed_matrix(timestamps, bias.time_scale)?;
    let kind = bias.kind;
    let raw = match kind {
        BiasKind::Zero => return tape.constant(Tensor::zeros(n, n)),
        BiasKind::Bucket => {
            let beta = scalar(tape, store, prefix, kind, "beta")?;
            let max_bucket = tape.value(beta).len();
            let mut index = Vec::with_capacity(n * n);
            for i in 0..n {
                for j in 0..n {
                    index.push((j <= i).then(|| temporal_bucket_of(delta.get(i, j), max_bucket)));
                }
            }
            return tape.gather_entries(beta, index, n, n);
        }
        BiasKind::Nn => {
            let x = tape.constant(delta.reshape(n * n, 1)?)?;
            let p = |tape: &mut Tape<'p>, k: &str| scalar(tape, store, prefix, kind, k);
            let (w1, b1, w2, b2, w3, b3) = (
                p(tape, "W1")?,
                p(tape, "b1")?,
                p(tape, "W2")?,
                p(tape, "b2")?,
                p(tape, "W3")?,
                p(tape, "b3")?,
            );
            let h = tape.matmul(x, w1)?;
            let h = tape.add_row_bias(h, b1)?;
            let h = tape.sin(h)?;
            let h = tape.matmul(h, w2)?;
            let h = tape.add_row_bias(h, b2)?;
            let h = tape.silu(h)?;
            let h = tape.matmul(h, w3)?;
            let h = tape.add_row_bias(h, b3)?;
            tape.reshape(h, n, n)?
        }
        BiasKind::Mixed => {
            let x = tape.constant(delta)?;
            let mut total = None;
            for member in BiasKind::CLOSED_FORMS {
                let member_prefix = format!("{member}.");
                let v = closed_form(
                    tape,
                    store,
                    prefix,
                    kind,
                    member,
                    &member_prefix,
                    x,
                    bias.softplus_exponent,
                )?;
                total = Some(match total {
                    None => v,
                    Some(t) => tape.add(t, v)?,
                });
            }
            let total = total.expect("five members");
            tape.scale(total, 1.0 / BiasKind::CLOSED_FORMS.len() as Real)?
        }
        member => {
            let x = tape.constant(delta)?;
            closed_form(
                tape,
                store,
                prefix,
                kind,
                member,
                "",
                x,
                bias.softplus_exponent,
            )?
        }
    };
    tape.causal_mask(raw)
}

/// Builds the causal positional bias map `β[min(i − j, d_rab − 1)]`.
pub fn positional_on_tape<'p>(
    tape: &mut Tape<'p>,
    store: &'p ParamStore,
    name: &str,
    n: usize,
) -> Result<Var> {
    let beta = tape.param(store, name)?;
    let last = tape.value(beta).len() - 1;
    let mut index = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            index.push((j <= i).then(|| (i - j).min(last)));
        }
    }
    tape.gather_entries(beta, index, n, n)
}
