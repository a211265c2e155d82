//! Adversarial example generation.
//!
//! Two attacks are provided:
//!
//! - the geometry-inspired transferable attack (GTA), which moves the input
//!   against the gradient of the fixed linear target `g(X) = <w_star, X[signal]>`
//!   and therefore only shrinks the signal patch;
//! - projected gradient ascent (PGD) on the loss of the current model, used
//!   to approximate the worst case inside an `l2` or `linf` ball.
//!
//! The projected ascent routine is generic over [`InputObjective`] so the same
//! code serves the flatness probes and the ReLU memorization network.

use crate::data::{DataConfig, Example};
use crate::error::{LabError, Result};
use crate::linalg::{dot, norm2, Norm};
use crate::model::{self, CnnWeights};
use crate::rng::{self, LabRng};
use crate::train::RunConfig;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    Gta,
    Pgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub method: AttackMethod,
    #[serde(rename = "norm_p")]
    pub norm: Norm,
    /// Perturbation radius.
    pub delta: f64,
    /// GTA strength; the signal patch is scaled by `1 - gamma`.
    pub gamma: f64,
    pub steps: usize,
    pub restarts: usize,
    pub step_size: f64,
}

impl AttackSpec {
    /// PGD with the default schedule: 40 steps, 5 restarts, step `2.5 delta / 40`.
    pub fn pgd(norm: Norm, delta: f64) -> Self {
        AttackSpec {
            method: AttackMethod::Pgd,
            norm,
            delta,
            gamma: 0.0,
            steps: 40,
            restarts: 5,
            step_size: 2.5 * delta / 40.0,
        }
    }

    pub fn validate(&self, data: &DataConfig) -> Result<()> {
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(LabError::config(
                "attack.delta",
                "must be non-negative and finite",
            ));
        }
        if !matches!(self.norm, Norm::L2 | Norm::LInf) {
            return Err(LabError::config(
                "attack.norm_p",
                "only 2 and inf are supported",
            ));
        }
        match self.method {
            AttackMethod::Gta => {
                if !(0.0..1.0).contains(&self.gamma) {
                    return Err(LabError::config("attack.gamma", "must lie in [0, 1)"));
                }
                if self.norm != Norm::L2 {
                    return Err(LabError::config("attack.norm_p", "GTA is an l2 attack"));
                }
                check_gta_radius(self, data)?;
            }
            AttackMethod::Pgd => {
                if self.restarts == 0 {
                    return Err(LabError::config("attack.restarts", "must be >= 1"));
                }
                if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
                    return Err(LabError::config("attack.step_size", "must be non-negative"));
                }
            }
        }
        Ok(())
    }
}

fn check_gta_radius(spec: &AttackSpec, data: &DataConfig) -> Result<()> {
    let displacement = spec.gamma * data.alpha;
    if displacement > spec.delta * (1.0 + 1e-12) {
        return Err(LabError::RadiusViolation {
            displacement,
            delta: spec.delta,
        });
    }
    Ok(())
}

/// Moves the signal patch against the linear target `g(X) = <w_star, X[s]>`:
/// `X[s] <- X[s] - gamma * g(X) / ||w_star|| * w_star / ||w_star||`.
/// Noise patches are returned unchanged.
pub fn gta_patches(patches: &[f64], signal_index: usize, w_star: &[f64], gamma: f64) -> Vec<f64> {
    let d = w_star.len();
    let mut out = patches.to_vec();
    let s = &mut out[signal_index * d..(signal_index + 1) * d];
    let target = dot(w_star, s);
    let grad_norm = norm2(w_star);
    let scale = gamma * target / (grad_norm * grad_norm);
    for (x, w) in s.iter_mut().zip(w_star) {
        *x -= scale * w;
    }
    out
}

/// GTA perturbation of `example` under the run configuration's attack.
pub fn gta(example: &Example, cfg: &RunConfig) -> Result<Vec<f64>> {
    gta_with(example, &cfg.data, &cfg.attack)
}

pub fn gta_with(example: &Example, data: &DataConfig, spec: &AttackSpec) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&spec.gamma) {
        return Err(LabError::config("attack.gamma", "must lie in [0, 1)"));
    }
    check_gta_radius(spec, data)?;
    Ok(gta_patches(
        &example.patches,
        example.signal_index,
        &data.w_star,
        spec.gamma,
    ))
}

/// A differentiable scalar function of the input, maximized by
/// [`projected_ascent`].
pub trait InputObjective {
    fn value(&self, x: &[f64]) -> f64;
    /// Gradient of `value`, or any positive multiple of it: ascent steps are
    /// normalized, so only the direction matters.
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

/// Logistic loss of the CNN at a fixed label.
///
/// The loss gradient is `psi(y f) * (-y grad f)` and `psi` underflows to zero
/// once the margin is large, so the direction is taken from `-y grad f`.
pub struct CnnLoss<'a> {
    pub weights: &'a CnnWeights,
    pub y: f64,
}

impl InputObjective for CnnLoss<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        model::loss_unchecked(self.weights, x, self.y)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        negative_margin_gradient(self.weights, x, self.y)
    }
}

/// Negative margin `-y f(x)`. The loss is strictly increasing in it, so
/// both share maximizers, but the margin never saturates.
pub struct CnnMargin<'a> {
    pub weights: &'a CnnWeights,
    pub y: f64,
}

impl InputObjective for CnnMargin<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        -self.y * model::score(self.weights, x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        negative_margin_gradient(self.weights, x, self.y)
    }
}

fn negative_margin_gradient(w: &CnnWeights, x: &[f64], y: f64) -> Vec<f64> {
    let mut g = model::score_grad_input(w, x);
    g.iter_mut().for_each(|v| *v *= -y);
    g
}

#[derive(Clone, Debug)]
pub struct AscentSchedule {
    pub norm: Norm,
    pub radius: f64,
    pub steps: usize,
    pub restarts: usize,
    pub step_size: f64,
}

#[derive(Clone, Debug)]
pub struct AscentOutcome {
    /// Best point found (the perturbed input, not the perturbation).
    pub point: Vec<f64>,
    pub value: f64,
    /// Running maximum after each evaluation, in evaluation order.
    pub best_trace: Vec<f64>,
}

/// Uniform draw from the ball of the given norm and radius.
pub fn sample_in_ball(norm: Norm, radius: f64, dim: usize, rng: &mut LabRng) -> Vec<f64> {
    match norm {
        Norm::LInf => (0..dim)
            .map(|_| rng.random_range(-1.0..=1.0) * radius)
            .collect(),
        _ => {
            let mut g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let n = norm2(&g);
            let u: f64 = rng.random();
            let r = radius * u.powf(1.0 / dim as f64);
            if n > 0.0 {
                g.iter_mut().for_each(|v| *v *= r / n);
            }
            g
        }
    }
}

/// Projected steepest ascent on `objective` over the ball around `x0`.
///
/// Restart 0 starts at `x0` itself, then each warm start (given as absolute
/// points, projected into the ball), then random points in the ball. Every
/// iterate is evaluated and the best one is kept; ties keep the earliest.
pub fn projected_ascent<O: InputObjective + ?Sized>(
    objective: &O,
    x0: &[f64],
    schedule: &AscentSchedule,
    warm_starts: &[Vec<f64>],
    rng: &mut LabRng,
) -> AscentOutcome {
    let dim = x0.len();
    let mut best_point = x0.to_vec();
    let mut best_value = objective.value(x0);
    let mut best_trace = vec![best_value];
    if schedule.radius == 0.0 {
        return AscentOutcome {
            point: best_point,
            value: best_value,
            best_trace,
        };
    }
    let base: u64 = rng.random();
    let total = 1 + warm_starts.len() + schedule.restarts.saturating_sub(1);
    for k in 0..total {
        let mut xi: Vec<f64> = if k == 0 {
            vec![0.0; dim]
        } else if k <= warm_starts.len() {
            warm_starts[k - 1]
                .iter()
                .zip(x0)
                .map(|(a, b)| a - b)
                .collect()
        } else {
            let mut r = rng::stream(base, "restart", k as u64);
            sample_in_ball(schedule.norm, schedule.radius, dim, &mut r)
        };
        schedule.norm.project(&mut xi, schedule.radius);
        let mut x: Vec<f64> = x0.iter().zip(&xi).map(|(a, b)| a + b).collect();
        if k > 0 {
            let v = objective.value(&x);
            if v > best_value {
                best_value = v;
                best_point.clone_from(&x);
            }
            best_trace.push(best_value);
        }
        for _ in 0..schedule.steps {
            let g = objective.gradient(&x);
            let dir = schedule.norm.ascent_direction(&g);
            for (e, dv) in xi.iter_mut().zip(&dir) {
                *e += schedule.step_size * dv;
            }
            schedule.norm.project(&mut xi, schedule.radius);
            for ((xv, a), b) in x.iter_mut().zip(x0).zip(&xi) {
                *xv = a + b;
            }
            let v = objective.value(&x);
            if v > best_value {
                best_value = v;
                best_point.clone_from(&x);
            }
            best_trace.push(best_value);
        }
    }
    AscentOutcome {
        point: best_point,
        value: best_value,
        best_trace,
    }
}

/// PGD on the logistic loss of `weights` around `x` with label `y`.
///
/// The ascent runs on the negative margin (see [`CnnMargin`]), so the
/// returned `value` and `best_trace` are `-y f`; the returned point also
/// maximizes the loss among all evaluated points.
pub fn pgd(
    weights: &CnnWeights,
    x: &[f64],
    y: f64,
    spec: &AttackSpec,
    rng: &mut LabRng,
) -> Result<AscentOutcome> {
    if spec.method != AttackMethod::Pgd {
        return Err(LabError::Argument(
            "pgd called with a non-PGD attack spec".into(),
        ));
    }
    if !x.len().is_multiple_of(weights.d) {
        return Err(LabError::Dimension(
            "input is not a whole number of patches".into(),
        ));
    }
    let schedule = AscentSchedule {
        norm: spec.norm,
        radius: spec.delta,
        steps: spec.steps,
        restarts: spec.restarts,
        step_size: spec.step_size,
    };
    Ok(projected_ascent(
        &CnnMargin { weights, y },
        x,
        &schedule,
        &[],
        rng,
    ))
}

/// Perturbed input for `example` under `spec`, dispatching on the method.
pub fn perturb(
    weights: &CnnWeights,
    example: &Example,
    data: &DataConfig,
    spec: &AttackSpec,
    rng: &mut LabRng,
) -> Result<Vec<f64>> {
    match spec.method {
        AttackMethod::Gta => gta_with(example, data, spec),
        AttackMethod::Pgd => Ok(pgd(weights, &example.patches, example.y(), spec, rng)?.point),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sample_example, DataConfig};

    fn gta_spec(gamma: f64, delta: f64) -> AttackSpec {
        AttackSpec {
            method: AttackMethod::Gta,
            norm: Norm::L2,
            delta,
            gamma,
            steps: 0,
            restarts: 1,
            step_size: 0.0,
        }
    }

    #[test]
    fn zero_gamma_is_identity() {
        let data = DataConfig::new(6, 3, 2.0, 0.5, 1).unwrap();
        let ex = sample_example(&data, &mut rng::stream(1, "g", 0));
        let adv = gta_with(&ex, &data, &gta_spec(0.0, 1.0)).unwrap();
        assert_eq!(adv, ex.patches);
    }

    #[test]
    fn radius_violation_is_reported() {
        let data = DataConfig::new(6, 3, 2.0, 0.5, 1).unwrap();
        let ex = sample_example(&data, &mut rng::stream(1, "g", 0));
        let err = gta_with(&ex, &data, &gta_spec(0.9, 1.0)).unwrap_err();
        assert!(matches!(err, LabError::RadiusViolation { .. }));
    }

    #[test]
    fn repeated_gta_multiplies_signal_shrinkage() {
        let data = DataConfig::new(8, 3, 3.0, 0.4, 1).unwrap();
        let ex = sample_example(&data, &mut rng::stream(4, "g", 0));
        let (g1, g2) = (0.3, 0.6);
        let once = gta_patches(&ex.patches, ex.signal_index, &data.w_star, g1);
        let twice = gta_patches(&once, ex.signal_index, &data.w_star, g2);
        let s = ex.signal_index * 8;
        for k in 0..8 {
            let expected = data.alpha * (1.0 - g1) * (1.0 - g2) * ex.y() * data.w_star[k];
            assert!((twice[s + k] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn pgd_zero_radius_returns_input() {
        let w = CnnWeights::from_rows(1, 2, vec![0.3, -0.7]).unwrap();
        let x = vec![0.5, 0.1, -0.2, 0.4];
        let out = pgd(
            &w,
            &x,
            1.0,
            &AttackSpec::pgd(Norm::L2, 0.0),
            &mut rng::stream(0, "p", 0),
        )
        .unwrap();
        assert_eq!(out.point, x);
    }

    #[test]
    fn pgd_reaches_analytic_boundary_in_one_dimension() {
        // f = (w x)^3 with w > 0 and y = +1: the loss decreases in x, so the
        // maximizer over [x0 - delta, x0 + delta] is x0 - delta.
        let w = CnnWeights::from_rows(1, 1, vec![0.8]).unwrap();
        let x0 = 0.4;
        let delta = 0.25;
        for norm in [Norm::L2, Norm::LInf] {
            let spec = AttackSpec::pgd(norm, delta);
            let out = pgd(&w, &[x0], 1.0, &spec, &mut rng::stream(2, "p", 0)).unwrap();
            assert!(
                (out.point[0] - (x0 - delta)).abs() < 1e-6,
                "{:?}",
                out.point
            );
        }
    }

    #[test]
    fn ball_samples_are_feasible() {
        let mut r = rng::stream(3, "ball", 0);
        for norm in [Norm::L2, Norm::LInf] {
            for _ in 0..100 {
                let v = sample_in_ball(norm, 0.7, 13, &mut r);
                assert!(norm.of(&v) <= 0.7 * (1.0 + 1e-12));
            }
        }
    }
}
