//! One-hidden-layer CNN with cubic activation and a fixed all-ones output
//! layer: `f_W(X) = sum_r sum_j <w_r, X[j]>^3`.
//!
//! Losses are logistic in the margin `y f_W(X)`. All derivatives are analytic.

use crate::error::{LabError, Result};
use crate::linalg::{axpy, dot};
use serde::{Deserialize, Serialize};

/// First-layer weights, row `r` is neuron `w_r`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnnWeights {
    pub m: usize,
    pub d: usize,
    /// Row-major `m x d`.
    pub rows: Vec<f64>,
}

impl CnnWeights {
    pub fn zeros(m: usize, d: usize) -> Self {
        CnnWeights {
            m,
            d,
            rows: vec![0.0; m * d],
        }
    }

    pub fn from_rows(m: usize, d: usize, rows: Vec<f64>) -> Result<Self> {
        let w = CnnWeights { m, d, rows };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.len() != self.m * self.d {
            return Err(LabError::Dimension(format!(
                "weights hold {} entries, expected m*d = {}",
                self.rows.len(),
                self.m * self.d
            )));
        }
        if self.rows.iter().any(|x| !x.is_finite()) {
            return Err(LabError::Dimension(
                "weights contain non-finite entries".into(),
            ));
        }
        Ok(())
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.rows[r * self.d..(r + 1) * self.d]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.rows[r * self.d..(r + 1) * self.d]
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.is_empty() || !x.len().is_multiple_of(self.d) {
            return Err(LabError::Dimension(format!(
                "input of length {} is not a whole number of patches of dimension {}",
                x.len(),
                self.d
            )));
        }
        Ok(())
    }
}

/// Negative sigmoid `psi(z) = 1 / (1 + e^z)`, evaluated without overflow.
pub fn negative_sigmoid(z: f64) -> f64 {
    if z > 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

const STABLE_BRANCH: f64 = 30.0;

/// `log(1 + e^{-z})` for a margin `z = y f`.
pub fn logistic(z: f64) -> f64 {
    if z > STABLE_BRANCH {
        (-z).exp()
    } else if z < -STABLE_BRANCH {
        -z + z.exp()
    } else {
        (-z).exp().ln_1p()
    }
}

/// `sum_r sum_j <w_r, X[j]>^3` without dimension checks.
pub(crate) fn score(w: &CnnWeights, x: &[f64]) -> f64 {
    let d = w.d;
    let mut s = 0.0;
    for patch in x.chunks_exact(d) {
        for r in 0..w.m {
            let c = dot(w.row(r), patch);
            s += c * c * c;
        }
    }
    s
}

pub fn forward(w: &CnnWeights, x: &[f64]) -> Result<f64> {
    w.check_input(x)?;
    Ok(score(w, x))
}

pub fn logistic_loss(w: &CnnWeights, x: &[f64], y: f64) -> Result<f64> {
    Ok(logistic(y * forward(w, x)?))
}

pub(crate) fn loss_unchecked(w: &CnnWeights, x: &[f64], y: f64) -> f64 {
    logistic(y * score(w, x))
}

/// Adds `scale * d/dW [loss-free margin gradient]` into `out`, i.e.
/// `out_r += scale * 3 * sum_j <w_r, X[j]>^2 X[j]`.
pub(crate) fn accumulate_score_grad_weights(
    w: &CnnWeights,
    x: &[f64],
    scale: f64,
    out: &mut [f64],
) {
    let d = w.d;
    for patch in x.chunks_exact(d) {
        for r in 0..w.m {
            let c = dot(w.row(r), patch);
            axpy(&mut out[r * d..(r + 1) * d], 3.0 * scale * c * c, patch);
        }
    }
}

/// Gradient of `logistic_loss` with respect to the weights:
/// `-3 psi(y f) y sum_j <w_r, X[j]>^2 X[j]` for each row `r`.
pub fn grad_weights(w: &CnnWeights, x: &[f64], y: f64) -> Result<Vec<f64>> {
    let f = forward(w, x)?;
    let coef = -negative_sigmoid(y * f) * y;
    let mut g = vec![0.0; w.m * w.d];
    accumulate_score_grad_weights(w, x, coef, &mut g);
    Ok(g)
}

/// `d f / d X`, patch by patch: `3 sum_r <w_r, X[j]>^2 w_r`.
pub(crate) fn score_grad_input(w: &CnnWeights, x: &[f64]) -> Vec<f64> {
    let d = w.d;
    let mut g = vec![0.0; x.len()];
    for (gj, patch) in g.chunks_exact_mut(d).zip(x.chunks_exact(d)) {
        for r in 0..w.m {
            let c = dot(w.row(r), patch);
            axpy(gj, 3.0 * c * c, w.row(r));
        }
    }
    g
}

pub(crate) fn grad_input_unchecked(w: &CnnWeights, x: &[f64], y: f64) -> Vec<f64> {
    let f = score(w, x);
    let coef = -negative_sigmoid(y * f) * y;
    let mut g = score_grad_input(w, x);
    g.iter_mut().for_each(|v| *v *= coef);
    g
}

/// Gradient of `logistic_loss` with respect to the input patches.
pub fn grad_input(w: &CnnWeights, x: &[f64], y: f64) -> Result<Vec<f64>> {
    w.check_input(x)?;
    Ok(grad_input_unchecked(w, x, y))
}

/// Input Hessian of the logistic loss applied to `v`.
///
/// With `s = y f`, `H = psi(s)(1 - psi(s)) grad f grad f^T - psi(s) y hess f`
/// and `hess f` is block diagonal over patches with blocks
/// `6 sum_r <w_r, X[j]> w_r w_r^T`.
pub fn input_hessian_vector(w: &CnnWeights, x: &[f64], y: f64, v: &[f64]) -> Result<Vec<f64>> {
    w.check_input(x)?;
    if v.len() != x.len() {
        return Err(LabError::Dimension(
            "direction and input lengths differ".into(),
        ));
    }
    Ok(hvp_unchecked(w, x, y, v))
}

pub(crate) fn hvp_unchecked(w: &CnnWeights, x: &[f64], y: f64, v: &[f64]) -> Vec<f64> {
    let f = score(w, x);
    let psi = negative_sigmoid(y * f);
    let gf = score_grad_input(w, x);
    let curvature = psi * (1.0 - psi) * dot(&gf, v);
    let mut out = score_hvp(w, x, v);
    for (o, g) in out.iter_mut().zip(&gf) {
        *o = curvature * g - psi * y * *o;
    }
    out
}

/// `hess f` applied to `v`, patch by patch: `6 sum_r <w_r, X[j]> <w_r, v[j]> w_r`.
pub(crate) fn score_hvp(w: &CnnWeights, x: &[f64], v: &[f64]) -> Vec<f64> {
    let d = w.d;
    let mut out = vec![0.0; x.len()];
    for ((oj, xj), vj) in out
        .chunks_exact_mut(d)
        .zip(x.chunks_exact(d))
        .zip(v.chunks_exact(d))
    {
        for r in 0..w.m {
            let wr = w.row(r);
            axpy(oj, 6.0 * dot(wr, xj) * dot(wr, vj), wr);
        }
    }
    out
}
