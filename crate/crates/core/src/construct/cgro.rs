//! Explicit robust-memorization network on top of a clean classifier.
//!
//! The reference classifier is
//! `f_S(X) = f_clean(X) + sum_i (y_i - f_clean(X)) 1{|X - X_i|_2 <= delta}`,
//! i.e. the training label inside each closed memorization ball and the
//! clean prediction elsewhere. The network replaces each indicator by a ramp
//! of the (approximate) squared distance and each product by the product
//! gadget, so it agrees with `f_S` away from the thin ramp shells.
//!
//! All inputs live in `[0, 1]^D`, the domain of the distance gadgets.

use super::gadgets::{product_gadget, soft_indicator, sqdist_gadget};
use super::net::{Layer, ReluNet};
use crate::attack::{projected_ascent, AscentSchedule, InputObjective};
use crate::error::{LabError, Result};
use crate::linalg::{norm2, Norm};
use crate::rng;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub x: Vec<f64>,
    /// Either -1 or +1.
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CgroBuildSpec {
    /// Memorization radius.
    pub delta: f64,
    /// Tolerance of each squared-distance gadget.
    pub eps_sq: f64,
    /// Tolerance of each product gadget.
    pub eps_prod: f64,
    /// Width of the ramp in squared-distance units: the indicator falls
    /// from 1 at `delta^2` to 0 at `delta^2 + ramp_width`.
    pub ramp_width: f64,
    /// Bound `B` for the clipped residual `y_i - f_clean`; computed from a
    /// calibration set when absent.
    #[serde(default)]
    pub clip_bound: Option<f64>,
    pub clean_net: ReluNet,
}

impl CgroBuildSpec {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("delta", self.delta),
            ("eps_sq", self.eps_sq),
            ("eps_prod", self.eps_prod),
            ("ramp_width", self.ramp_width),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(LabError::config(field, "must be positive and finite"));
            }
        }
        if self.eps_sq >= self.delta * self.delta {
            return Err(LabError::config("eps_sq", "must be below delta^2"));
        }
        if self.clean_net.output_dim() != 1 {
            return Err(LabError::config("clean_net", "must have a single output"));
        }
        self.clean_net.validate()
    }

    /// Radius outside of which the memorization term of a point vanishes.
    pub fn outer_radius(&self) -> f64 {
        (self.delta * self.delta + self.ramp_width).sqrt()
    }

    /// Radius inside of which the indicator is exactly 1.
    pub fn inner_radius(&self) -> f64 {
        (self.delta * self.delta - self.eps_sq).sqrt()
    }
}

/// Pairs of training points whose memorization shells overlap.
pub fn overlapping_pairs(points: &[LabeledPoint], outer_radius: f64) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            if distance(&points[i].x, &points[j].x) <= 2.0 * outer_radius {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// The reference classifier: label of the nearest ball containing `x`
/// (closed balls, lowest index on exact ties), otherwise `clean(x)`.
pub fn eval_f_s(
    x: &[f64],
    clean: impl Fn(&[f64]) -> f64,
    points: &[LabeledPoint],
    delta: f64,
) -> f64 {
    let mut best: Option<(f64, usize)> = None;
    for (i, p) in points.iter().enumerate() {
        let d = distance(x, &p.x);
        if d <= delta && best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    match best {
        Some((_, i)) => points[i].y,
        None => clean(x),
    }
}

const CALIBRATION_POINTS: u64 = 4096;

fn calibrated_bound(spec: &CgroBuildSpec, points: &[LabeledPoint]) -> Result<f64> {
    if let Some(b) = spec.clip_bound {
        if !(b >= 1.0 && b.is_finite()) {
            return Err(LabError::config("clip_bound", "must be >= 1"));
        }
        return Ok(b);
    }
    let dim = spec.clean_net.input_dim;
    let mut worst: f64 = 0.0;
    for p in points {
        worst = worst.max(spec.clean_net.forward(&p.x)?.abs());
    }
    for k in 0..CALIBRATION_POINTS {
        let mut r = rng::stream(0, "cgro-calibration", k);
        let x: Vec<f64> = (0..dim).map(|_| r.random::<f64>()).collect();
        worst = worst.max(spec.clean_net.forward(&x)?.abs());
    }
    Ok(1.0 + worst)
}

/// Builds the memorizing network for `points`.
pub fn build_cgro_net(spec: &CgroBuildSpec, points: &[LabeledPoint]) -> Result<ReluNet> {
    spec.validate()?;
    let dim = spec.clean_net.input_dim;
    if let Some(p) = points.iter().find(|p| p.x.len() != dim) {
        return Err(LabError::Dimension(format!(
            "training point of dimension {} for a clean net on {dim} inputs",
            p.x.len()
        )));
    }
    if points.iter().any(|p| p.y != 1.0 && p.y != -1.0) {
        return Err(LabError::config("labels", "must be -1 or +1"));
    }
    let pairs = overlapping_pairs(points, spec.outer_radius());
    if !pairs.is_empty() {
        return Err(LabError::Geometry { pairs });
    }
    let b = calibrated_bound(spec, points)?;
    let n = points.len();

    // clean score followed by the squared distance to every training point
    let mut features = vec![spec.clean_net.clone()];
    for p in points {
        features.push(sqdist_gadget(&p.x, spec.eps_sq)?);
    }
    let features = ReluNet::parallel(&features)?;

    // (c, phi_1..phi_N) -> (c, a_1, I_1, ..., a_N, I_N) with
    // a_i = clip(y_i - c, -B, B) + B in [0, 2B] and I_i the ramp of phi_i
    let width = n + 1;
    let soft = soft_indicator(
        spec.delta * spec.delta,
        spec.delta * spec.delta + spec.ramp_width,
    )?;
    let mut gates = vec![ReluNet::select(width, &[0])?.then(&ReluNet::passthrough(1))?];
    for (i, p) in points.iter().enumerate() {
        let shifted_clip = ReluNet::new(
            1,
            vec![
                Layer::new(
                    1,
                    2,
                    vec![(0, 0, -1.0), (1, 0, -1.0)],
                    vec![p.y + b, p.y - b],
                )?,
                Layer::new(2, 1, vec![(0, 0, 1.0), (0, 1, -1.0)], vec![0.0])?,
            ],
        )?;
        gates.push(ReluNet::select(width, &[0])?.then(&shifted_clip)?);
        gates.push(ReluNet::select(width, &[i + 1])?.then(&soft)?);
    }
    let gates = ReluNet::parallel(&gates)?;

    // (c, a_i, I_i) -> c + sum_i [prod(a_i, I_i) - B I_i]
    let prod = product_gadget(spec.eps_prod, 2.0 * b)?;
    let mut blocks = vec![ReluNet::identity(1)];
    for _ in 0..n {
        blocks.push(ReluNet::parallel(&[
            prod.clone(),
            ReluNet::select(2, &[1])?,
        ])?);
    }
    let blocks = ReluNet::stack(&blocks)?;
    let mut out = vec![(0, 0, 1.0)];
    for i in 0..n {
        out.push((0, 1 + 2 * i, 1.0));
        out.push((0, 2 + 2 * i, -b));
    }
    let sum = ReluNet::affine(1 + 2 * n, 1, out, vec![0.0])?;

    features.then(&gates)?.then(&blocks)?.then(&sum)
}

/// Halfspace score `(2 / k) sum_{j < k} (x_j - 1/2)` on the first `k`
/// coordinates, written as a two-unit rectifier network.
pub fn halfspace_clean_net(dim: usize, block: usize) -> Result<ReluNet> {
    if block == 0 || block > dim {
        return Err(LabError::config("block", "must lie in [1, D]"));
    }
    let w = 2.0 / block as f64;
    let mut entries = Vec::new();
    for j in 0..block {
        entries.push((0, j, w));
        entries.push((1, j, -w));
    }
    ReluNet::new(
        dim,
        vec![
            Layer::new(dim, 2, entries, vec![-1.0, 1.0])?,
            Layer::new(2, 1, vec![(0, 0, 1.0), (0, 1, -1.0)], vec![0.0])?,
        ],
    )
}

fn sign_label(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        -1.0
    }
}

fn uniform_point(dim: usize, r: &mut rng::LabRng) -> Vec<f64> {
    (0..dim).map(|_| r.random::<f64>()).collect()
}

/// `count` uniform points of `[0, 1]^D` labelled by the sign of `clean`,
/// each at distance greater than `min_separation` from the previous ones
/// (rejection sampling).
pub fn separated_task(
    clean: &ReluNet,
    count: usize,
    min_separation: f64,
    seed: u64,
) -> Result<Vec<LabeledPoint>> {
    let dim = clean.input_dim;
    let mut points: Vec<LabeledPoint> = Vec::with_capacity(count);
    let mut r = rng::stream(seed, "cgro-task", 0);
    let mut attempts = 0usize;
    while points.len() < count {
        attempts += 1;
        if attempts > 1000 * (count + 1) {
            return Err(LabError::config(
                "delta",
                "cannot place well-separated points; reduce the radius",
            ));
        }
        let x = uniform_point(dim, &mut r);
        if points.iter().all(|p| distance(&p.x, &x) > min_separation) {
            let y = sign_label(clean.forward(&x)?);
            points.push(LabeledPoint { x, y });
        }
    }
    Ok(points)
}

fn clamp_unit(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

/// Probe points: the first half uniform on the cube, the second half on
/// shells around training points with radius uniform in `[0, 2 delta]`,
/// clamped to the cube.
pub fn probe_points(
    dim: usize,
    points: &[LabeledPoint],
    delta: f64,
    count: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    (0..count)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::stream(seed, "cgro-probe", k as u64);
            if k < count / 2 || points.is_empty() {
                return uniform_point(dim, &mut r);
            }
            let center = &points[r.random_range(0..points.len())].x;
            let mut dir: Vec<f64> = (0..dim).map(|_| r.sample(StandardNormal)).collect();
            let n = norm2(&dir);
            let radius = 2.0 * delta * r.random::<f64>();
            dir.iter_mut().for_each(|v| *v *= radius / n);
            let raw: Vec<f64> = center.iter().zip(&dir).map(|(c, v)| c + v).collect();
            clamp_unit(&raw)
        })
        .collect()
}

/// `x -> -y h(clamp(x))`: maximizing it searches the ball intersected with
/// the cube for a misclassified point.
struct Misclassification<'a> {
    net: &'a ReluNet,
    y: f64,
}

impl InputObjective for Misclassification<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        -self.y * self.net.forward(&clamp_unit(x)).expect("dimension checked")
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let g = self
            .net
            .input_gradient(&clamp_unit(x))
            .expect("dimension checked");
        g.iter()
            .zip(x)
            .map(|(gi, xi)| {
                if (0.0..=1.0).contains(xi) {
                    -self.y * gi
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Whether projected ascent finds a point of the `l2` ball (within the
/// cube) where `y h <= 0`.
pub fn attack_succeeds(
    net: &ReluNet,
    x: &[f64],
    y: f64,
    radius: f64,
    seed: u64,
    index: u64,
) -> bool {
    let schedule = AscentSchedule {
        norm: Norm::L2,
        radius,
        steps: 40,
        restarts: 3,
        step_size: 2.5 * radius / 40.0,
    };
    let mut r = rng::stream(seed, "cgro-attack", index);
    let out = projected_ascent(&Misclassification { net, y }, x, &schedule, &[], &mut r);
    out.value >= 0.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub n_points: usize,
    pub n_probes: usize,
    /// Fraction of probes where `sign(h) = sign(f_S)`.
    pub sign_agreement: f64,
    pub param_count: usize,
    pub clean_param_count: usize,
    /// Attacked training points misclassified inside their inner radius.
    pub robust_train_error: f64,
    pub robust_test_error: f64,
    pub robust_test_error_clean: f64,
    pub n_test: usize,
}

/// Checks the built network against `f_S` and attacks it on the training
/// points and on fresh cube samples.
pub fn verify(
    net: &ReluNet,
    spec: &CgroBuildSpec,
    points: &[LabeledPoint],
    n_probes: usize,
    n_test: usize,
    seed: u64,
) -> Result<VerificationReport> {
    let dim = spec.clean_net.input_dim;
    let clean = |x: &[f64]| spec.clean_net.forward(x).expect("dimension checked");
    let probes = probe_points(dim, points, spec.delta, n_probes, seed);
    let agree = probes
        .par_iter()
        .map(|x| {
            let h = net.forward(x)?;
            Ok(usize::from(
                (h > 0.0) == (eval_f_s(x, clean, points, spec.delta) > 0.0),
            ))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    let inner = spec.inner_radius();
    let train_fail = points
        .par_iter()
        .enumerate()
        .filter(|(i, p)| attack_succeeds(net, &p.x, p.y, inner, seed, *i as u64))
        .count();
    let tests: Vec<(Vec<f64>, f64)> = (0..n_test)
        .map(|k| {
            let x = uniform_point(dim, &mut rng::stream(seed, "cgro-test", k as u64));
            let y = sign_label(clean(&x));
            (x, y)
        })
        .collect();
    // both models face the same attack streams
    let count_fail = |model: &ReluNet| {
        tests
            .par_iter()
            .enumerate()
            .filter(|(k, (x, y))| attack_succeeds(model, x, *y, spec.delta, seed, *k as u64))
            .count()
    };
    let rate = |c: usize, n: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    Ok(VerificationReport {
        n_points: points.len(),
        n_probes,
        sign_agreement: rate(agree, n_probes),
        param_count: net.param_count(),
        clean_param_count: spec.clean_net.param_count(),
        robust_train_error: rate(train_fail, points.len()),
        robust_test_error: rate(count_fail(net), n_test),
        robust_test_error_clean: rate(count_fail(&spec.clean_net), n_test),
        n_test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(dim: usize) -> CgroBuildSpec {
        CgroBuildSpec {
            delta: 0.2,
            eps_sq: 1e-3,
            eps_prod: 1e-3,
            ramp_width: 0.01,
            clip_bound: None,
            clean_net: halfspace_clean_net(dim, 2).unwrap(),
        }
    }

    #[test]
    fn empty_set_reproduces_clean_net() {
        let s = spec(3);
        let net = build_cgro_net(&s, &[]).unwrap();
        for k in 0..1000 {
            let x = uniform_point(3, &mut rng::stream(1, "t", k));
            let (h, c) = (net.forward(&x).unwrap(), s.clean_net.forward(&x).unwrap());
            assert_eq!(h > 0.0, c > 0.0);
            assert!((h - c).abs() < 1e-12);
        }
    }

    #[test]
    fn single_flipped_point_is_memorized() {
        let s = spec(3);
        let x0 = vec![0.7, 0.8, 0.5];
        assert!(s.clean_net.forward(&x0).unwrap() > 0.0);
        let pts = vec![LabeledPoint {
            x: x0.clone(),
            y: -1.0,
        }];
        let net = build_cgro_net(&s, &pts).unwrap();
        let clean = |x: &[f64]| s.clean_net.forward(x).unwrap();
        let mut r = rng::stream(2, "t", 0);
        for _ in 0..500 {
            let mut dir: Vec<f64> = (0..3).map(|_| r.sample(StandardNormal)).collect();
            let n = norm2(&dir);
            dir.iter_mut().for_each(|v| *v /= n);
            let near: Vec<f64> = x0
                .iter()
                .zip(&dir)
                .map(|(c, d)| c + 0.9 * s.inner_radius() * r.random::<f64>() * d)
                .collect();
            assert!(net.forward(&near).unwrap() < 0.0);
            assert_eq!(eval_f_s(&near, clean, &pts, s.delta), -1.0);
            let far = clamp_unit(
                &x0.iter()
                    .zip(&dir)
                    .map(|(c, d)| c + 1.05 * s.outer_radius() * d)
                    .collect::<Vec<_>>(),
            );
            if distance(&far, &x0) > s.outer_radius() {
                assert_eq!(net.forward(&far).unwrap() > 0.0, clean(&far) > 0.0);
            }
        }
    }

    #[test]
    fn eval_f_s_conventions() {
        let clean = |_: &[f64]| 0.25;
        let pts = vec![
            LabeledPoint {
                x: vec![0.0, 0.0],
                y: -1.0,
            },
            LabeledPoint {
                x: vec![1.0, 0.0],
                y: 1.0,
            },
        ];
        assert_eq!(eval_f_s(&[0.0, 0.0], clean, &pts, 0.3), -1.0);
        assert_eq!(eval_f_s(&[0.5, 0.5], clean, &pts, 0.3), 0.25);
        // closed ball boundary
        assert_eq!(eval_f_s(&[0.3, 0.0], clean, &pts, 0.3), -1.0);
        // overlapping balls: nearest center, then lowest index
        assert_eq!(eval_f_s(&[0.6, 0.0], clean, &pts, 0.7), 1.0);
        assert_eq!(eval_f_s(&[0.5, 0.0], clean, &pts, 0.7), -1.0);
    }

    #[test]
    fn overlapping_balls_are_reported() {
        let s = spec(2);
        let pts = vec![
            LabeledPoint {
                x: vec![0.1, 0.1],
                y: 1.0,
            },
            LabeledPoint {
                x: vec![0.9, 0.9],
                y: 1.0,
            },
            LabeledPoint {
                x: vec![0.2, 0.2],
                y: -1.0,
            },
        ];
        match build_cgro_net(&s, &pts) {
            Err(LabError::Geometry { pairs }) => assert_eq!(pairs, vec![(0, 2)]),
            other => panic!("{:?}", other.map(|n| n.param_count())),
        }
    }
}
