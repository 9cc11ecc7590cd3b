//! Dense kernels shared by the tape and by the plain (non-differentiated) paths.
//!
//! All reductions run in a fixed order so identical inputs give bit-identical
//! outputs.

use crate::error::{Error, Result};
use crate::numerics::counters;
use crate::numerics::{Real, Tensor};

/// RMSNorm stabilizer.
pub const RMS_EPS: Real = 1e-6;

fn gemm(a: &[Real], b: &[Real], c: &mut [Real], m: usize, k: usize, p: usize) {
    counters::record_multiplies((m * k * p) as u64);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * p..(i + 1) * p];
        for (kk, &aik) in a_row.iter().enumerate() {
            let b_row = &b[kk * p..(kk + 1) * p];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += aik * bv;
            }
        }
    }
}

/// `C = A·B`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols() != b.rows() {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let mut c = Tensor::zeros(a.rows(), b.cols());
    gemm(
        a.data(),
        b.data(),
        c.data_mut(),
        a.rows(),
        a.cols(),
        b.cols(),
    );
    Ok(c)
}

/// `C = A·Bᵀ`.
pub fn matmul_bt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols() != b.cols() {
        return Err(Error::shape("matmul_bt", a.shape(), b.shape()));
    }
    let bt = b.transpose();
    let mut c = Tensor::zeros(a.rows(), b.rows());
    gemm(
        a.data(),
        bt.data(),
        c.data_mut(),
        a.rows(),
        a.cols(),
        b.rows(),
    );
    Ok(c)
}

/// `C = Aᵀ·B`.
pub fn matmul_at(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rows() != b.rows() {
        return Err(Error::shape("matmul_at", a.shape(), b.shape()));
    }
    let at = a.transpose();
    let mut c = Tensor::zeros(a.cols(), b.cols());
    gemm(
        at.data(),
        b.data(),
        c.data_mut(),
        a.cols(),
        a.rows(),
        b.cols(),
    );
    Ok(c)
}

#[inline]
pub fn sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn silu(x: Real) -> Real {
    x * sigmoid(x)
}

/// d/dx of `x·σ(x)`.
#[inline]
pub fn silu_grad(x: Real) -> Real {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

#[inline]
pub fn softplus(x: Real) -> Real {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: Real) -> Real {
    y + (-(-y).exp_m1()).ln()
}

/// `gain ⊙ x / sqrt(mean(x²) + ε)`.
pub fn rmsnorm(x: &[Real], gain: &[Real]) -> Result<Vec<Real>> {
    if x.len() != gain.len() {
        return Err(Error::shape("rmsnorm", (1, x.len()), (1, gain.len())));
    }
    let inv = inv_rms(x);
    Ok(x.iter().zip(gain).map(|(&v, &g)| g * v * inv).collect())
}

#[inline]
pub(crate) fn inv_rms(x: &[Real]) -> Real {
    let mean_sq = x.iter().map(|v| v * v).sum::<Real>() / x.len() as Real;
    1.0 / (mean_sq + RMS_EPS).sqrt()
}

/// Max-shifted `log Σ exp(row)`. Empty rows give `-inf`.
pub fn log_sum_exp(row: &[Real]) -> Real {
    let max = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    if !max.is_finite() {
        return max;
    }
    max + row.iter().map(|&v| (v - max).exp()).sum::<Real>().ln()
}

pub fn softmax_row(row: &[Real]) -> Vec<Real> {
    let max = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    let exps: Vec<Real> = row.iter().map(|&v| (v - max).exp()).collect();
    let total: Real = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
