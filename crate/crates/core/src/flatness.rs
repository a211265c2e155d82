//! Input-space loss landscape probes and the generalization gap ledger.
//!
//! Local flatness at `X` is `max_{|xi|_p <= eps} |grad_X L(X + xi)|_q` with
//! `q` the Hölder conjugate of `p`; global flatness is its expectation over
//! the data distribution. The maxima are found by projected gradient ascent,
//! so every reported value is a lower bound on the true maximum.

use crate::attack::{projected_ascent, AscentSchedule, CnnLoss, InputObjective};
use crate::data::{sample_examples, Dataset, Example};
use crate::error::{LabError, Result};
use crate::linalg::Norm;
use crate::model::{self, CnnWeights};
use crate::rng::{self, LabRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Perturbation norm `p` and gradient norm `q`, restricted to `(2, 2)` and
/// `(inf, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "HolderPairRaw")]
pub struct HolderPair {
    pub p: Norm,
    pub q: Norm,
}

#[derive(Deserialize)]
struct HolderPairRaw {
    p: Norm,
    q: Norm,
}

impl TryFrom<HolderPairRaw> for HolderPair {
    type Error = LabError;

    fn try_from(raw: HolderPairRaw) -> Result<Self> {
        HolderPair::new(raw.p, raw.q)
    }
}

impl HolderPair {
    pub fn new(p: Norm, q: Norm) -> Result<Self> {
        match (p, q) {
            (Norm::L2, Norm::L2) | (Norm::LInf, Norm::L1) => Ok(HolderPair { p, q }),
            _ => Err(LabError::config(
                "norms",
                format!("unsupported (p, q) = ({p:?}, {q:?}); use (2, 2) or (inf, 1)"),
            )),
        }
    }

    pub fn l2() -> Self {
        HolderPair {
            p: Norm::L2,
            q: Norm::L2,
        }
    }

    pub fn linf() -> Self {
        HolderPair {
            p: Norm::LInf,
            q: Norm::L1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub steps: usize,
    pub restarts: usize,
    /// Step size as a multiple of `eps / steps`.
    pub step_factor: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            steps: 30,
            restarts: 8,
            step_factor: 1.5,
        }
    }
}

impl ProbeConfig {
    fn schedule(&self, norm: Norm, eps: f64) -> AscentSchedule {
        AscentSchedule {
            norm,
            radius: eps,
            steps: self.steps,
            restarts: self.restarts.max(1),
            step_size: if self.steps == 0 {
                0.0
            } else {
                self.step_factor * eps / self.steps as f64
            },
        }
    }
}

/// `x -> |grad_x L(x)|_q`.
///
/// Since `grad_x L = -psi(y f) y grad f`, the norm factors as
/// `psi(y f) |grad f|_q`. The ascent direction is the gradient of its
/// logarithm, `-sigma(y f) y grad f + hess f s / |grad f|_q` with `s` a
/// subgradient of the `q`-norm at `grad f`, which stays informative where
/// `psi` underflows.
pub struct GradNorm<'a> {
    pub weights: &'a CnnWeights,
    pub y: f64,
    pub q: Norm,
}

impl InputObjective for GradNorm<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.q
            .of(&model::grad_input_unchecked(self.weights, x, self.y))
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let w = self.weights;
        let gf = model::score_grad_input(w, x);
        let n = self.q.of(&gf);
        if n == 0.0 {
            return vec![0.0; x.len()];
        }
        let s = self.q.subgradient(&gf);
        let sigma = 1.0 - model::negative_sigmoid(self.y * model::score(w, x));
        let mut g = model::score_hvp(w, x, &s);
        for (gi, fi) in g.iter_mut().zip(&gf) {
            *gi = *gi / n - sigma * self.y * fi;
        }
        g
    }
}

#[derive(Clone, Debug)]
pub struct ProbeOutcome {
    pub value: f64,
    /// Maximizing input, reusable as a warm start at a larger radius.
    pub point: Vec<f64>,
}

fn check_input(w: &CnnWeights, x: &[f64], eps: f64) -> Result<()> {
    if x.is_empty() || !x.len().is_multiple_of(w.d) {
        return Err(LabError::Dimension(
            "input is not a whole number of patches".into(),
        ));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(LabError::config("eps", "must be non-negative and finite"));
    }
    Ok(())
}

/// Largest `q`-norm of the input gradient found within the `p`-ball of
/// radius `eps` around `x`. `xi = 0` is always evaluated.
#[allow(clippy::too_many_arguments)]
pub fn max_grad_norm(
    w: &CnnWeights,
    x: &[f64],
    y: f64,
    eps: f64,
    norms: HolderPair,
    probe: &ProbeConfig,
    warm_starts: &[Vec<f64>],
    rng: &mut LabRng,
) -> Result<ProbeOutcome> {
    check_input(w, x, eps)?;
    let objective = GradNorm {
        weights: w,
        y,
        q: norms.q,
    };
    let out = projected_ascent(
        &objective,
        x,
        &probe.schedule(norms.p, eps),
        warm_starts,
        rng,
    );
    Ok(ProbeOutcome {
        value: out.value,
        point: out.point,
    })
}

/// Largest loss increase `L(x + xi) - L(x)` found within the ball; never
/// negative since `xi = 0` is evaluated.
#[allow(clippy::too_many_arguments)]
pub fn max_loss_change(
    w: &CnnWeights,
    x: &[f64],
    y: f64,
    eps: f64,
    p: Norm,
    probe: &ProbeConfig,
    warm_starts: &[Vec<f64>],
    rng: &mut LabRng,
) -> Result<ProbeOutcome> {
    check_input(w, x, eps)?;
    let objective = CnnLoss { weights: w, y };
    let base = objective.value(x);
    let out = projected_ascent(&objective, x, &probe.schedule(p, eps), warm_starts, rng);
    Ok(ProbeOutcome {
        value: (out.value - base).max(0.0),
        point: out.point,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Estimate {
            mean,
            stderr: (var / n).sqrt(),
        }
    }
}

/// Per-example probe values over an ascending radius list. The maximizer at
/// each radius warm-starts the next one, which makes both series
/// non-decreasing in the radius.
#[derive(Clone, Debug)]
pub struct RadiusSeries {
    /// `grad_norm[k][i]`: radius `k`, example `i`.
    pub grad_norm: Vec<Vec<f64>>,
    pub loss_change: Vec<Vec<f64>>,
    pub loss: Vec<f64>,
}

fn check_radii(eps_list: &[f64]) -> Result<()> {
    if eps_list.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
        return Err(LabError::config(
            "eps_list",
            "radii must be non-negative and finite",
        ));
    }
    if eps_list.windows(2).any(|w| w[1] < w[0]) {
        return Err(LabError::config(
            "eps_list",
            "radii must be sorted ascending",
        ));
    }
    Ok(())
}

/// Runs both probes on every example at every radius. Example `i` uses the
/// RNG stream `(seed, role, i)`.
pub fn probe_examples(
    w: &CnnWeights,
    examples: &[Example],
    eps_list: &[f64],
    norms: HolderPair,
    probe: &ProbeConfig,
    role: &str,
    seed: u64,
) -> Result<RadiusSeries> {
    check_radii(eps_list)?;
    let per_example: Vec<(Vec<f64>, Vec<f64>, f64)> = examples
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut r = rng::stream(seed, role, i as u64);
            let y = ex.y();
            let mut grads = Vec::with_capacity(eps_list.len());
            let mut changes = Vec::with_capacity(eps_list.len());
            let mut warm_g: Vec<Vec<f64>> = Vec::new();
            let mut warm_l: Vec<Vec<f64>> = Vec::new();
            for &eps in eps_list {
                let g = max_grad_norm(w, &ex.patches, y, eps, norms, probe, &warm_g, &mut r)?;
                let l = max_loss_change(w, &ex.patches, y, eps, norms.p, probe, &warm_l, &mut r)?;
                grads.push(g.value);
                changes.push(l.value);
                warm_g = vec![g.point];
                warm_l = vec![l.point];
            }
            Ok((grads, changes, model::loss_unchecked(w, &ex.patches, y)))
        })
        .collect::<Result<_>>()?;
    let k = eps_list.len();
    Ok(RadiusSeries {
        grad_norm: (0..k)
            .map(|e| per_example.iter().map(|p| p.0[e]).collect())
            .collect(),
        loss_change: (0..k)
            .map(|e| per_example.iter().map(|p| p.1[e]).collect())
            .collect(),
        loss: per_example.iter().map(|p| p.2).collect(),
    })
}

/// Monte Carlo estimate of global flatness from `n_mc` fresh samples.
pub fn global_flatness(
    w: &CnnWeights,
    dataset: &Dataset,
    eps: f64,
    norms: HolderPair,
    n_mc: usize,
    probe: &ProbeConfig,
    seed: u64,
) -> Result<Estimate> {
    if n_mc == 0 {
        return Err(LabError::config("n_mc", "must be >= 1"));
    }
    let fresh = sample_examples(&dataset.config, "flat-global", seed, n_mc);
    let s = probe_examples(w, &fresh, &[eps], norms, probe, "flat-global-probe", seed)?;
    Ok(Estimate::of(&s.grad_norm[0]))
}

/// One row of the flatness ledger.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatnessReport {
    pub eps: f64,
    pub norms: HolderPair,
    pub local_flat_train: f64,
    pub local_flat_test: f64,
    pub global_flat: Estimate,
    pub loss_change_train: f64,
    pub loss_change_test: f64,
    /// Adversarial loss on fresh data minus adversarial loss on the training set.
    pub gap: f64,
    /// `N^{-1/(D+2)} * global_flat` with `D = P d`.
    pub bound_rhs: f64,
    /// `gap / bound_rhs`, or 0 when the bound vanishes.
    pub implied_constant: f64,
    /// `eps * E |grad_X L|_q` over fresh data.
    pub lower_quantity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerConfig {
    pub norms: HolderPair,
    pub probe: ProbeConfig,
    /// Fresh samples for the test-side local probes.
    pub n_test: usize,
    /// Fresh samples for global flatness.
    pub n_mc: usize,
    pub seed: u64,
}

/// `N^{-1/(D+2)} * global_flat`.
pub fn bound_rhs(n_train: usize, input_dim: usize, global_flat: f64) -> f64 {
    (n_train as f64).powf(-1.0 / (input_dim as f64 + 2.0)) * global_flat
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Flatness ledger of trained weights against their training set, one
/// report per radius in `eps_list` (ascending).
pub fn gap_ledger(
    w: &CnnWeights,
    dataset: &Dataset,
    eps_list: &[f64],
    cfg: &LedgerConfig,
) -> Result<Vec<FlatnessReport>> {
    if cfg.n_test == 0 || cfg.n_mc == 0 {
        return Err(LabError::config("n_mc", "sample counts must be >= 1"));
    }
    let train = probe_examples(
        w,
        &dataset.examples,
        eps_list,
        cfg.norms,
        &cfg.probe,
        "flat-train",
        cfg.seed,
    )?;
    let test_examples = sample_examples(&dataset.config, "flat-test", cfg.seed, cfg.n_test);
    let test = probe_examples(
        w,
        &test_examples,
        eps_list,
        cfg.norms,
        &cfg.probe,
        "flat-test-probe",
        cfg.seed,
    )?;
    let global_examples = sample_examples(&dataset.config, "flat-global", cfg.seed, cfg.n_mc);
    let global = probe_examples(
        w,
        &global_examples,
        eps_list,
        cfg.norms,
        &cfg.probe,
        "flat-global-probe",
        cfg.seed,
    )?;
    let plain_grad: Vec<f64> = global_examples
        .par_iter()
        .map(|ex| {
            cfg.norms
                .q
                .of(&model::grad_input_unchecked(w, &ex.patches, ex.y()))
        })
        .collect();
    let plain_grad = mean(&plain_grad);
    let input_dim = dataset.config.input_dim();
    let train_loss = mean(&train.loss);
    let test_loss = mean(&test.loss);

    Ok(eps_list
        .iter()
        .enumerate()
        .map(|(k, &eps)| {
            let loss_change_train = mean(&train.loss_change[k]);
            let loss_change_test = mean(&test.loss_change[k]);
            let gap = (test_loss + loss_change_test) - (train_loss + loss_change_train);
            let global_flat = Estimate::of(&global.grad_norm[k]);
            let rhs = bound_rhs(dataset.len(), input_dim, global_flat.mean);
            FlatnessReport {
                eps,
                norms: cfg.norms,
                local_flat_train: mean(&train.grad_norm[k]),
                local_flat_test: mean(&test.grad_norm[k]),
                global_flat,
                loss_change_train,
                loss_change_test,
                gap,
                bound_rhs: rhs,
                implied_constant: if rhs > 0.0 { gap / rhs } else { 0.0 },
                lower_quantity: eps * plain_grad,
            }
        })
        .collect())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        // ties share their average rank
        let r = (i + j) as f64 / 2.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (ranks(a), ranks(b));
    let (ma, mb) = (mean(&ra), mean(&rb));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}
