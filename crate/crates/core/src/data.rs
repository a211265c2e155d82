//! Patch-structured binary classification data.
//!
//! Each input has `P` patches of dimension `d`. Exactly one patch (the signal
//! patch) equals `alpha * y * w_star`; every other patch is Gaussian noise with
//! covariance `sigma^2 (I - w_star w_star^T)`.

use crate::attack::{AttackMethod, AttackSpec};
use crate::error::{LabError, Result};
use crate::linalg::{dot, norm2, Norm};
use crate::rng::{self, LabRng};
use crate::train::RunConfig;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// Patch dimension.
    pub d: usize,
    /// Number of patches.
    #[serde(rename = "P")]
    pub patches: usize,
    /// Signal norm.
    pub alpha: f64,
    /// Noise scale.
    pub sigma: f64,
    /// Unit signal direction.
    pub w_star: Vec<f64>,
    pub seed: u64,
}

impl DataConfig {
    /// Builds a config with the uniform direction `w_star = 1/sqrt(d) * (1, ..., 1)`.
    pub fn new(d: usize, patches: usize, alpha: f64, sigma: f64, seed: u64) -> Result<Self> {
        let cfg = DataConfig {
            d,
            patches,
            alpha,
            sigma,
            w_star: uniform_direction(d),
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(LabError::config(
                "d",
                format!("must be >= 2, got {}", self.d),
            ));
        }
        if self.patches < 2 {
            return Err(LabError::config(
                "P",
                format!("must be >= 2, got {}", self.patches),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(LabError::config("alpha", "must be positive and finite"));
        }
        // sigma = 0 is accepted as the degenerate noiseless distribution.
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(LabError::config("sigma", "must be non-negative and finite"));
        }
        if self.w_star.len() != self.d {
            return Err(LabError::config(
                "w_star",
                format!("length {} does not match d = {}", self.w_star.len(), self.d),
            ));
        }
        let n = norm2(&self.w_star);
        if (n - 1.0).abs() > 1e-12 {
            return Err(LabError::config(
                "w_star",
                format!("must be a unit vector, norm is {n}"),
            ));
        }
        Ok(())
    }

    /// Input dimension `P * d`.
    pub fn input_dim(&self) -> usize {
        self.patches * self.d
    }
}

pub fn uniform_direction(d: usize) -> Vec<f64> {
    vec![1.0 / (d as f64).sqrt(); d]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    /// Row-major `P x d` patch matrix.
    pub patches: Vec<f64>,
    /// Either -1 or +1.
    pub label: i8,
    pub signal_index: usize,
}

impl Example {
    pub fn y(&self) -> f64 {
        f64::from(self.label)
    }

    pub fn patch(&self, j: usize, d: usize) -> &[f64] {
        &self.patches[j * d..(j + 1) * d]
    }

    /// Indices of the noise patches, in increasing order.
    pub fn noise_indices(&self, num_patches: usize) -> impl Iterator<Item = usize> + '_ {
        (0..num_patches).filter(move |&j| j != self.signal_index)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub config: DataConfig,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Draws one example. Label and signal position are uniform; each noise patch
/// is an isotropic Gaussian with the `w_star` component removed.
pub fn sample_example(cfg: &DataConfig, rng: &mut LabRng) -> Example {
    let (d, p) = (cfg.d, cfg.patches);
    let label: i8 = if rng.random::<bool>() { 1 } else { -1 };
    let signal_index = rng.random_range(0..p);
    let y = f64::from(label);
    let mut patches = vec![0.0; p * d];
    for j in 0..p {
        let patch = &mut patches[j * d..(j + 1) * d];
        if j == signal_index {
            for (x, w) in patch.iter_mut().zip(&cfg.w_star) {
                *x = cfg.alpha * y * w;
            }
        } else {
            for x in patch.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *x = cfg.sigma * z;
            }
            let c = dot(patch, &cfg.w_star);
            for (x, w) in patch.iter_mut().zip(&cfg.w_star) {
                *x -= c * w;
            }
        }
    }
    Example {
        patches,
        label,
        signal_index,
    }
}

/// Draws `count` examples where example `i` uses stream `(seed, role, i)`.
pub fn sample_examples(cfg: &DataConfig, role: &str, seed: u64, count: usize) -> Vec<Example> {
    (0..count)
        .into_par_iter()
        .map(|i| sample_example(cfg, &mut rng::stream(seed, role, i as u64)))
        .collect()
}

/// Training set of `n` examples derived from `cfg.seed`.
pub fn sample_dataset(cfg: &DataConfig, n: usize) -> Result<Dataset> {
    cfg.validate()?;
    if n == 0 {
        return Err(LabError::config("N", "training set size must be >= 1"));
    }
    Ok(Dataset {
        config: cfg.clone(),
        examples: sample_examples(cfg, "train", cfg.seed, n),
    })
}

/// `polylog(d) = polylog_c * ln(d)^2`.
pub fn polylog(d: usize, polylog_c: f64) -> f64 {
    let l = (d as f64).ln();
    polylog_c * l * l
}

/// Default patch count `max(2, ceil(ln(d)^2 / 2))`.
pub fn default_patch_count(d: usize) -> usize {
    let l = (d as f64).ln();
    ((l * l / 2.0).ceil() as usize).max(2)
}

/// Instantiates every scalar of the default scaling regime for dimension `d`.
///
/// With `pl = polylog(d)`: `alpha = d^0.249 * pl`, `sigma = d^-0.509`,
/// `m = ceil(pl)`, `sigma0^2 = pl / d`, `gamma = 1 - 1/(sqrt(d) * pl)` and
/// `delta = gamma * alpha`. The learning rate defaults to 1 and the
/// clean/adversarial trade-off to 0.5.
pub fn default_parameterization(d: usize, polylog_c: f64) -> Result<RunConfig> {
    if d < 8 {
        return Err(LabError::config("d", format!("must be >= 8, got {d}")));
    }
    if !(polylog_c > 0.0 && polylog_c.is_finite()) {
        return Err(LabError::config("polylog_c", "must be positive and finite"));
    }
    let df = d as f64;
    let pl = polylog(d, polylog_c);
    let alpha = df.powf(0.249) * pl;
    let sigma = df.powf(-0.509);
    let gamma = 1.0 - 1.0 / (df.sqrt() * pl);
    if !(0.0..1.0).contains(&gamma) {
        return Err(LabError::config(
            "polylog_c",
            format!("gives gamma = {gamma} outside [0, 1); increase polylog_c"),
        ));
    }
    let delta = gamma * alpha;
    let data = DataConfig::new(d, default_patch_count(d), alpha, sigma, 0)?;
    let m = (pl.ceil() as usize).max(1);
    let attack = AttackSpec {
        method: AttackMethod::Gta,
        norm: Norm::L2,
        delta,
        gamma,
        steps: 40,
        restarts: 5,
        step_size: 2.5 * delta / 40.0,
    };
    let cfg = RunConfig {
        data,
        n_train: 100,
        m,
        sigma0: (pl / df).sqrt(),
        eta: 1.0,
        iterations: 2000,
        lambda: 0.5,
        attack,
        telemetry_every: 50,
        seed: 0,
        regenerate_adv: false,
        verify_projections: true,
    };
    cfg.validate()?;
    Ok(cfg)
}
