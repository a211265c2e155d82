//! Feature-learning observables and exact-dynamics checks.
//!
//! The signal component of neuron `r` is `u_r = <w_r, w_star>` and
//! `U = sum_r u_r^3`. The noise component of neuron `r` on noise patch `j` of
//! training sample `i` is `v_{i,j,r} = y_i <w_r, X_i[j]>` and
//! `V_i = sum_{r, j != signal} v_{i,j,r}^3`. Every margin splits as
//! `y f(X) = alpha^3 U + V` and, under GTA, `y f(X^adv) = alpha^3 (1-gamma)^3 U + V`.
//!
//! Because noise patches are orthogonal to `w_star`, projecting a gradient
//! step onto `w_star` or onto a training noise patch gives closed-form
//! updates of `u` and `v`. [`verify_projection_equalities`] recomputes those
//! closed forms and reports the residual against the actual weights.

use crate::data::{Dataset, Example};
use crate::error::{LabError, Result};
use crate::linalg::{axpy, dot};
use crate::model::CnnWeights;
use crate::train::{RunConfig, StepTerms};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Residuals above this value fail the projected update check.
pub const RESIDUAL_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMetrics {
    #[serde(rename = "U")]
    pub big_u: f64,
    pub u: Vec<f64>,
    #[serde(rename = "V")]
    pub big_v: Vec<f64>,
    /// `v[i]` is the row-major `(P-1) x m` block of sample `i`, noise patches
    /// in increasing patch order.
    pub v: Vec<Vec<f64>>,
}

/// `u_r = <w_r, w_star>` and `U = sum_r u_r^3`.
pub fn signal_components(w: &CnnWeights, w_star: &[f64]) -> (Vec<f64>, f64) {
    let u: Vec<f64> = (0..w.m).map(|r| dot(w.row(r), w_star)).collect();
    let big_u = u.iter().map(|x| x * x * x).sum();
    (u, big_u)
}

/// Noise components of one example and their cubed sum `V`.
pub fn noise_components(w: &CnnWeights, example: &Example, num_patches: usize) -> (Vec<f64>, f64) {
    let y = example.y();
    let mut v = Vec::with_capacity((num_patches - 1) * w.m);
    let mut big_v = 0.0;
    for j in example.noise_indices(num_patches) {
        let patch = example.patch(j, w.d);
        for r in 0..w.m {
            let c = y * dot(w.row(r), patch);
            big_v += c * c * c;
            v.push(c);
        }
    }
    (v, big_v)
}

pub fn feature_metrics(w: &CnnWeights, dataset: &Dataset) -> Result<FeatureMetrics> {
    let cfg = &dataset.config;
    if w.d != cfg.d {
        return Err(LabError::Dimension("weights and data disagree on d".into()));
    }
    let (u, big_u) = signal_components(w, &cfg.w_star);
    let (v, big_v): (Vec<_>, Vec<_>) = dataset
        .examples
        .par_iter()
        .map(|ex| noise_components(w, ex, cfg.patches))
        .unzip();
    Ok(FeatureMetrics { big_u, u, big_v, v })
}

/// One row of the training telemetry table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub iteration: usize,
    pub objective: f64,
    pub clean_train_err: f64,
    pub robust_train_err: f64,
    #[serde(rename = "U")]
    pub big_u: f64,
    pub max_u: f64,
    pub min_u: f64,
    #[serde(rename = "mean_V")]
    pub mean_v: f64,
    #[serde(rename = "min_V")]
    pub min_v: f64,
    pub max_abs_v: f64,
}

/// Fraction of margins that are `<= 0`.
pub fn error_rate(margins: &[f64]) -> f64 {
    margins.iter().filter(|&&z| z <= 0.0).count() as f64 / margins.len() as f64
}

impl TelemetryRecord {
    pub const CSV_HEADER: &'static str =
        "iteration,objective,clean_train_err,robust_train_err,U,max_u,min_u,mean_V,min_V,max_abs_v";

    pub fn new(iteration: usize, terms: &StepTerms, fm: &FeatureMetrics) -> Self {
        let n = fm.big_v.len() as f64;
        TelemetryRecord {
            iteration,
            objective: terms.objective,
            clean_train_err: error_rate(&terms.margin_clean),
            robust_train_err: error_rate(&terms.margin_adv),
            big_u: fm.big_u,
            max_u: fm.u.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            min_u: fm.u.iter().copied().fold(f64::INFINITY, f64::min),
            mean_v: fm.big_v.iter().sum::<f64>() / n,
            min_v: fm.big_v.iter().copied().fold(f64::INFINITY, f64::min),
            max_abs_v: fm.v.iter().flatten().fold(0.0, |a: f64, b| a.max(b.abs())),
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.iteration,
            self.objective,
            self.clean_train_err,
            self.robust_train_err,
            self.big_u,
            self.max_u,
            self.min_u,
            self.mean_v,
            self.min_v,
            self.max_abs_v
        )
    }
}

/// Weights at one iteration together with the negative-sigmoid weights of
/// the clean and adversarial margins there.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Snapshot {
    pub iteration: usize,
    pub weights: CnnWeights,
    pub psi_clean: Vec<f64>,
    pub psi_adv: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// Iteration of the earlier snapshot.
    pub iteration: usize,
    pub max_signal_residual: f64,
    pub max_noise_residual: f64,
    pub pass: bool,
}

/// Compares the weights of `next` with the closed-form projected updates
/// computed from `prev`. Only valid for GTA training, where adversarial
/// inputs share the noise patches of their clean counterparts.
pub fn verify_projection_equalities(
    prev: &Snapshot,
    next: &Snapshot,
    cfg: &RunConfig,
    dataset: &Dataset,
) -> Result<ResidualReport> {
    if next.iteration != prev.iteration + 1 {
        return Err(LabError::NonConsecutive {
            first: prev.iteration,
            second: next.iteration,
        });
    }
    let n = dataset.len();
    if prev.psi_clean.len() != n || prev.psi_adv.len() != n {
        return Err(LabError::Dimension(
            "snapshot psi values do not match the dataset".into(),
        ));
    }
    let data = &dataset.config;
    let (w0, w1) = (&prev.weights, &next.weights);
    let (m, d, p) = (w0.m, w0.d, data.patches);
    let step = 3.0 * cfg.eta / n as f64;
    let (lambda, alpha, gamma) = (cfg.lambda, data.alpha, cfg.attack.gamma);
    let a3 = alpha.powi(3);
    let shrink3 = (1.0 - gamma).powi(3);

    let psi_sum: f64 = prev
        .psi_clean
        .iter()
        .zip(&prev.psi_adv)
        .map(|(c, a)| (1.0 - lambda) * a3 * c + lambda * a3 * shrink3 * a)
        .sum();
    let (u0, _) = signal_components(w0, &data.w_star);
    let (u1, _) = signal_components(w1, &data.w_star);
    let max_signal_residual = u0
        .iter()
        .zip(&u1)
        .map(|(a, b)| (b - (a + step * a * a * psi_sum)).abs())
        .fold(0.0, f64::max);

    // agg_r = sum_a psi~_a y_a sum_{b != signal} <w_r, X_a[b]>^2 X_a[b]
    let mut agg = vec![0.0; m * d];
    for (a, ex) in dataset.examples.iter().enumerate() {
        let weight = ((1.0 - lambda) * prev.psi_clean[a] + lambda * prev.psi_adv[a]) * ex.y();
        for b in ex.noise_indices(p) {
            let patch = ex.patch(b, d);
            for r in 0..m {
                let c = dot(w0.row(r), patch);
                axpy(&mut agg[r * d..(r + 1) * d], weight * c * c, patch);
            }
        }
    }
    let max_noise_residual = dataset
        .examples
        .par_iter()
        .map(|ex| {
            let y = ex.y();
            let mut worst: f64 = 0.0;
            for j in ex.noise_indices(p) {
                let patch = ex.patch(j, d);
                for r in 0..m {
                    let before = y * dot(w0.row(r), patch);
                    let after = y * dot(w1.row(r), patch);
                    let predicted = before + step * y * dot(&agg[r * d..(r + 1) * d], patch);
                    worst = worst.max((after - predicted).abs());
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max);

    Ok(ResidualReport {
        iteration: prev.iteration,
        max_signal_residual,
        max_noise_residual,
        pass: max_signal_residual <= RESIDUAL_TOLERANCE && max_noise_residual <= RESIDUAL_TOLERANCE,
    })
}

fn doublings(v: f64, z0: f64) -> f64 {
    (v / z0).log2().ceil()
}

/// Growth threshold for `z + m z^2 <= z' <= z + M z^2`:
/// `3 / (m z0) + (8 M / m) * ceil(log2(v / z0))`.
pub fn tensor_power_threshold(z0: f64, m_lo: f64, m_hi: f64, v: f64) -> Result<f64> {
    if !(z0 > 0.0 && z0 <= v) {
        return Err(LabError::Argument(format!(
            "need 0 < z0 <= v, got z0 = {z0}, v = {v}"
        )));
    }
    if !(m_lo > 0.0 && m_lo <= m_hi) {
        return Err(LabError::Argument(format!(
            "need 0 < m <= M, got m = {m_lo}, M = {m_hi}"
        )));
    }
    Ok(3.0 / (m_lo * z0) + 8.0 * m_hi / m_lo * doublings(v, z0))
}

/// Growth threshold for `|z_t - z0 - A sum_{s<t} z_s^2| <= C` with
/// `C <= z0 / 2`: `8 ceil(log2(v / z0)) + 21 / (z0 A)`.
///
/// The constant term is read as `21 / (z0 * A)`; the source typesetting
/// leaves the grouping of `z0` and `A` ambiguous.
pub fn tensor_power_threshold_perturbed(z0: f64, a: f64, c: f64, v: f64) -> Result<f64> {
    if !(z0 > 0.0 && z0 <= v) {
        return Err(LabError::Argument(format!(
            "need 0 < z0 <= v, got z0 = {z0}, v = {v}"
        )));
    }
    if a.is_nan() || a <= 0.0 {
        return Err(LabError::Argument("need A > 0".into()));
    }
    if !(c > 0.0 && c <= z0 / 2.0) {
        return Err(LabError::Argument(format!(
            "need 0 < C <= z0 / 2, got C = {c}"
        )));
    }
    Ok(8.0 * doublings(v, z0) + 21.0 / (z0 * a))
}

/// Decay bound `1 / (A (t - T0))` for `z' <= z - A z^2`.
pub fn tensor_power_decay_bound(a: f64, t: f64, t0: f64) -> Result<f64> {
    if a.is_nan() || a <= 0.0 {
        return Err(LabError::Argument("need A > 0".into()));
    }
    if t <= t0 {
        return Err(LabError::Argument(format!(
            "need t > T0, got t = {t}, T0 = {t0}"
        )));
    }
    Ok(1.0 / (a * (t - t0)))
}
