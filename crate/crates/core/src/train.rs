//! Full-batch gradient descent on the mixed clean/adversarial logistic
//! objective
//!
//! `L(W) = (1/N) sum_i [(1 - lambda) l(y_i f(X_i)) + lambda l(y_i f(X_i^adv))]`.
//!
//! Per-sample terms are computed in parallel and summed in sample order, so
//! every run is bit-reproducible regardless of the thread count.

use crate::attack::{self, AttackMethod, AttackSpec};
use crate::data::{DataConfig, Dataset};
use crate::error::{LabError, Result};
use crate::model::{self, CnnWeights};
use crate::rng;
use crate::telemetry::{self, FeatureMetrics, ResidualReport, Snapshot, TelemetryRecord};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataConfig,
    /// Training set size.
    #[serde(rename = "N")]
    pub n_train: usize,
    /// Network width.
    pub m: usize,
    /// Standard deviation of the Gaussian initialization.
    pub sigma0: f64,
    pub eta: f64,
    /// Number of gradient steps.
    #[serde(rename = "T")]
    pub iterations: usize,
    pub lambda: f64,
    pub attack: AttackSpec,
    pub telemetry_every: usize,
    pub seed: u64,
    /// Recompute adversarial examples before every step instead of once.
    #[serde(default)]
    pub regenerate_adv: bool,
    /// Check the projected update equalities after every step.
    #[serde(default = "default_true")]
    pub verify_projections: bool,
}

fn default_true() -> bool {
    true
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        if self.n_train == 0 {
            return Err(LabError::config("N", "training set size must be >= 1"));
        }
        if self.m == 0 {
            return Err(LabError::config("m", "width must be >= 1"));
        }
        if !(self.sigma0 >= 0.0 && self.sigma0.is_finite()) {
            return Err(LabError::config(
                "sigma0",
                "must be non-negative and finite",
            ));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(LabError::config("eta", "must be positive and finite"));
        }
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(LabError::config("lambda", "must lie in [0, 1)"));
        }
        if self.telemetry_every == 0 {
            return Err(LabError::config("telemetry_every", "must be >= 1"));
        }
        self.attack.validate(&self.data)
    }

    /// Iterations at which telemetry is recorded: every multiple of
    /// `telemetry_every` in `[0, T]`, plus `T` itself.
    pub fn telemetry_iterations(&self) -> Vec<usize> {
        let mut its: Vec<usize> = (0..=self.iterations)
            .step_by(self.telemetry_every)
            .collect();
        if its.last() != Some(&self.iterations) {
            its.push(self.iterations);
        }
        its
    }

    fn projections_checkable(&self) -> bool {
        self.verify_projections && self.attack.method == AttackMethod::Gta
    }
}

/// Gaussian initialization with entries i.i.d. `N(0, sigma0^2)`.
pub fn init_weights(cfg: &RunConfig) -> CnnWeights {
    let mut r = rng::stream(cfg.seed, "init", 0);
    let rows = (0..cfg.m * cfg.data.d)
        .map(|_| cfg.sigma0 * r.sample::<f64, _>(StandardNormal))
        .collect();
    CnnWeights {
        m: cfg.m,
        d: cfg.data.d,
        rows,
    }
}

/// Adversarial counterparts of every training input under `spec`.
pub fn adversarial_examples(
    weights: &CnnWeights,
    dataset: &Dataset,
    spec: &AttackSpec,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    dataset
        .examples
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut r = rng::stream(seed, "train-attack", i as u64);
            attack::perturb(weights, ex, &dataset.config, spec, &mut r)
        })
        .collect()
}

/// The training objective at `weights`.
pub fn adversarial_objective(
    weights: &CnnWeights,
    dataset: &Dataset,
    adv: &[Vec<f64>],
    lambda: f64,
) -> Result<f64> {
    check_alignment(dataset, adv)?;
    let n = dataset.len() as f64;
    let mut total = 0.0;
    for (ex, xa) in dataset.examples.iter().zip(adv) {
        let y = ex.y();
        total += (1.0 - lambda) * model::logistic_loss(weights, &ex.patches, y)?
            + lambda * model::logistic_loss(weights, xa, y)?;
    }
    Ok(total / n)
}

fn check_alignment(dataset: &Dataset, adv: &[Vec<f64>]) -> Result<()> {
    if adv.len() != dataset.len() {
        return Err(LabError::Dimension(format!(
            "{} adversarial examples for {} training examples",
            adv.len(),
            dataset.len()
        )));
    }
    Ok(())
}

/// Everything one pass over the training set produces at fixed weights.
#[derive(Clone, Debug)]
pub struct StepTerms {
    pub objective: f64,
    /// Gradient of the objective, row-major `m x d`.
    pub gradient: Vec<f64>,
    /// `psi(y_i f(X_i))`.
    pub psi_clean: Vec<f64>,
    /// `psi(y_i f(X_i^adv))`.
    pub psi_adv: Vec<f64>,
    pub margin_clean: Vec<f64>,
    pub margin_adv: Vec<f64>,
}

struct SampleTerms {
    loss: f64,
    grad: Vec<f64>,
    psi_clean: f64,
    psi_adv: f64,
    margin_clean: f64,
    margin_adv: f64,
}

pub fn step_terms(
    weights: &CnnWeights,
    dataset: &Dataset,
    adv: &[Vec<f64>],
    lambda: f64,
) -> Result<StepTerms> {
    check_alignment(dataset, adv)?;
    let size = weights.m * weights.d;
    let per_sample: Vec<SampleTerms> = dataset
        .examples
        .par_iter()
        .zip(adv.par_iter())
        .map(|(ex, xa)| {
            let y = ex.y();
            let margin_clean = y * model::score(weights, &ex.patches);
            let margin_adv = y * model::score(weights, xa);
            let psi_clean = model::negative_sigmoid(margin_clean);
            let psi_adv = model::negative_sigmoid(margin_adv);
            let mut grad = vec![0.0; size];
            model::accumulate_score_grad_weights(
                weights,
                &ex.patches,
                -(1.0 - lambda) * psi_clean * y,
                &mut grad,
            );
            model::accumulate_score_grad_weights(weights, xa, -lambda * psi_adv * y, &mut grad);
            SampleTerms {
                loss: (1.0 - lambda) * model::logistic(margin_clean)
                    + lambda * model::logistic(margin_adv),
                grad,
                psi_clean,
                psi_adv,
                margin_clean,
                margin_adv,
            }
        })
        .collect();
    let n = dataset.len() as f64;
    let mut gradient = vec![0.0; size];
    let mut objective = 0.0;
    for s in &per_sample {
        objective += s.loss;
        for (g, v) in gradient.iter_mut().zip(&s.grad) {
            *g += v;
        }
    }
    gradient.iter_mut().for_each(|g| *g /= n);
    Ok(StepTerms {
        objective: objective / n,
        gradient,
        psi_clean: per_sample.iter().map(|s| s.psi_clean).collect(),
        psi_adv: per_sample.iter().map(|s| s.psi_adv).collect(),
        margin_clean: per_sample.iter().map(|s| s.margin_clean).collect(),
        margin_adv: per_sample.iter().map(|s| s.margin_adv).collect(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: usize,
    pub weights: CnnWeights,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub weights: CnnWeights,
    pub iteration: usize,
    pub adv_examples: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub weights: CnnWeights,
    pub adv_examples: Vec<Vec<f64>>,
    pub telemetry: Vec<TelemetryRecord>,
    /// Full component arrays at each telemetry iteration.
    pub features: Vec<(usize, FeatureMetrics)>,
    pub checkpoints: Vec<Checkpoint>,
    /// One report per step when projection checks are enabled.
    pub residuals: Vec<ResidualReport>,
    /// Largest one-step decrease of `u_r = <w_r, w_star>` over the neurons
    /// with `u_r > 0` at initialization; 0 when all of them only grew.
    pub max_positive_u_drop: f64,
}

impl TrainOutcome {
    pub fn max_residuals(&self) -> (f64, f64) {
        self.residuals.iter().fold((0.0, 0.0), |(s, n), r| {
            (s.max(r.max_signal_residual), n.max(r.max_noise_residual))
        })
    }
}

/// Runs `T` full-batch gradient steps from [`init_weights`].
pub fn train(cfg: &RunConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    let init = init_weights(cfg);
    train_from(cfg, dataset, init)
}

/// Runs `T` full-batch gradient steps from the given weights.
pub fn train_from(cfg: &RunConfig, dataset: &Dataset, init: CnnWeights) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.config != cfg.data {
        return Err(LabError::config(
            "data",
            "dataset was generated from a different data config",
        ));
    }
    if init.m != cfg.m || init.d != cfg.data.d {
        return Err(LabError::Dimension(
            "initial weights do not match m x d".into(),
        ));
    }
    init.validate()?;
    let adv_seed = rng::derive_seed(cfg.seed, "adv");
    let mut state = TrainState {
        adv_examples: adversarial_examples(&init, dataset, &cfg.attack, adv_seed)?,
        weights: init,
        iteration: 0,
    };
    let telemetry_its = cfg.telemetry_iterations();
    let mut next_record = 0;
    let mut telemetry = Vec::with_capacity(telemetry_its.len());
    let mut features = Vec::with_capacity(telemetry_its.len());
    let mut checkpoints = Vec::with_capacity(telemetry_its.len());
    let mut residuals = Vec::new();
    let mut previous: Option<Snapshot> = None;
    let check = cfg.projections_checkable();
    let signal = |w: &CnnWeights| telemetry::signal_components(w, &cfg.data.w_star).0;
    let positive: Vec<usize> = signal(&state.weights)
        .iter()
        .enumerate()
        .filter(|(_, &u)| u > 0.0)
        .map(|(r, _)| r)
        .collect();
    let mut max_positive_u_drop: f64 = 0.0;

    loop {
        let t = state.iteration;
        if cfg.regenerate_adv && t > 0 {
            let seed = rng::derive_seed(adv_seed, &format!("step-{t}"));
            state.adv_examples = adversarial_examples(&state.weights, dataset, &cfg.attack, seed)?;
        }
        let terms = step_terms(&state.weights, dataset, &state.adv_examples, cfg.lambda)?;
        if !terms.objective.is_finite() {
            return Err(LabError::Divergence {
                iteration: t,
                what: "objective",
            });
        }
        if terms.gradient.iter().any(|g| !g.is_finite()) {
            return Err(LabError::Divergence {
                iteration: t,
                what: "gradient",
            });
        }
        if check {
            let snap = Snapshot {
                iteration: t,
                weights: state.weights.clone(),
                psi_clean: terms.psi_clean.clone(),
                psi_adv: terms.psi_adv.clone(),
            };
            if let Some(prev) = previous.take() {
                residuals.push(telemetry::verify_projection_equalities(
                    &prev, &snap, cfg, dataset,
                )?);
            }
            previous = Some(snap);
        }
        if next_record < telemetry_its.len() && telemetry_its[next_record] == t {
            let fm = telemetry::feature_metrics(&state.weights, dataset)?;
            telemetry.push(TelemetryRecord::new(t, &terms, &fm));
            features.push((t, fm));
            checkpoints.push(Checkpoint {
                iteration: t,
                weights: state.weights.clone(),
            });
            next_record += 1;
        }
        if t == cfg.iterations {
            break;
        }
        let before = signal(&state.weights);
        for (w, g) in state.weights.rows.iter_mut().zip(&terms.gradient) {
            *w -= cfg.eta * g;
        }
        let after = signal(&state.weights);
        for &r in &positive {
            max_positive_u_drop = max_positive_u_drop.max(before[r] - after[r]);
        }
        state.iteration += 1;
    }

    Ok(TrainOutcome {
        weights: state.weights,
        adv_examples: state.adv_examples,
        telemetry,
        features,
        checkpoints,
        residuals,
        max_positive_u_drop,
    })
}
