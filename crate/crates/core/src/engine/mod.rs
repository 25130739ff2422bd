//! Small dense-network core: matrices, named parameters, MLPs with analytic
//! backward passes, and a finite-difference gradient checker.
//!
//! Batched layers take inputs as `B × width` matrices, one row per sample.
//! Weights are stored `out × in`, so a layer computes `X·Wᵀ + b`.

mod gradcheck;
mod matrix;
mod mlp;
mod params;

pub use gradcheck::{grad_check, GradCheckReport};
pub use matrix::Matrix;
pub use mlp::{Activation, Linear, Mlp, MlpCache, MlpSpec};
pub use params::{Initializer, Param, ParamId, ParamStore};

use crate::error::{Error, Result};

/// Floor applied inside every logarithm of a probability.
pub const LOG_FLOOR: f64 = 1e-12;

/// `W·x + b` for a single vector.
pub fn affine_forward(w: &Matrix, b: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if w.cols() != x.len() || w.rows() != b.len() {
        return Err(Error::Dimension(format!(
            "affine: W is {}x{}, b has {}, x has {}",
            w.rows(),
            w.cols(),
            b.len(),
            x.len()
        )));
    }
    Ok((0..w.rows())
        .map(|r| b[r] + w.row(r).iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect())
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Domain("softmax of an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Row-wise softmax of a batch.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

/// `ln(max(p, LOG_FLOOR))`.
#[inline]
pub fn clamped_ln(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}
