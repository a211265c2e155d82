//! Monte Carlo estimates of clean and robust test error, and the robust
//! training error on cached adversarial examples.
//!
//! A prediction counts as an error when `y f(X) <= 0`, so a zero score is
//! always wrong.

use crate::attack::{self, AttackSpec};
use crate::data::{sample_examples, DataConfig, Dataset};
use crate::error::{LabError, Result};
use crate::model::{self, CnnWeights};
use crate::rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub rate: f64,
    pub stderr: f64,
}

impl Rate {
    /// Binomial proportion with standard error `sqrt(p (1 - p) / n)`.
    pub fn from_counts(errors: usize, n: usize) -> Self {
        let p = errors as f64 / n as f64;
        Rate {
            rate: p,
            stderr: (p * (1.0 - p) / n as f64).sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub clean_test: Rate,
    pub robust_test_gta: Rate,
    pub robust_test_pgd: Rate,
    pub robust_train: f64,
    pub n_mc: usize,
}

/// Per-sample outcome of a paired clean/attacked evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairedOutcome {
    pub clean_margin: f64,
    pub robust_margin: f64,
}

impl PairedOutcome {
    pub fn clean_error(&self) -> bool {
        self.clean_margin <= 0.0
    }

    pub fn robust_error(&self) -> bool {
        self.robust_margin <= 0.0
    }
}

/// Evaluates `n_mc` fresh samples (stream role `"eval"`) clean and under
/// `spec`. A zero radius leaves every sample unperturbed.
pub fn paired_outcomes(
    w: &CnnWeights,
    data: &DataConfig,
    spec: Option<&AttackSpec>,
    n_mc: usize,
    seed: u64,
) -> Result<Vec<PairedOutcome>> {
    if n_mc == 0 {
        return Err(LabError::config("n_mc", "must be >= 1"));
    }
    if w.d != data.d {
        return Err(LabError::Dimension("weights and data disagree on d".into()));
    }
    let examples = sample_examples(data, "eval", seed, n_mc);
    examples
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let y = ex.y();
            let clean_margin = y * model::score(w, &ex.patches);
            let robust_margin = match spec {
                Some(s) if s.delta > 0.0 => {
                    let mut r = rng::stream(seed, "eval-attack", i as u64);
                    let x = attack::perturb(w, ex, data, s, &mut r)?;
                    y * model::score(w, &x)
                }
                _ => clean_margin,
            };
            Ok(PairedOutcome {
                clean_margin,
                robust_margin,
            })
        })
        .collect()
}

pub fn clean_error(w: &CnnWeights, data: &DataConfig, n_mc: usize, seed: u64) -> Result<Rate> {
    let out = paired_outcomes(w, data, None, n_mc, seed)?;
    Ok(Rate::from_counts(
        out.iter().filter(|o| o.clean_error()).count(),
        n_mc,
    ))
}

pub fn robust_error(
    w: &CnnWeights,
    data: &DataConfig,
    spec: &AttackSpec,
    n_mc: usize,
    seed: u64,
) -> Result<Rate> {
    let out = paired_outcomes(w, data, Some(spec), n_mc, seed)?;
    Ok(Rate::from_counts(
        out.iter().filter(|o| o.robust_error()).count(),
        n_mc,
    ))
}

/// Fraction of cached adversarial training inputs with `y f <= 0`.
pub fn robust_train_error(w: &CnnWeights, dataset: &Dataset, adv: &[Vec<f64>]) -> Result<f64> {
    if adv.len() != dataset.len() {
        return Err(LabError::Dimension(format!(
            "{} adversarial examples for {} training examples",
            adv.len(),
            dataset.len()
        )));
    }
    let mut errors = 0;
    for (ex, x) in dataset.examples.iter().zip(adv) {
        if ex.y() * model::forward(w, x)? <= 0.0 {
            errors += 1;
        }
    }
    Ok(errors as f64 / dataset.len() as f64)
}

/// Clean, GTA and PGD test error on one shared set of fresh samples plus the
/// robust training error.
pub fn error_report(
    w: &CnnWeights,
    dataset: &Dataset,
    adv: &[Vec<f64>],
    gta: &AttackSpec,
    pgd: &AttackSpec,
    n_mc: usize,
    seed: u64,
) -> Result<ErrorReport> {
    let data = &dataset.config;
    let by_gta = paired_outcomes(w, data, Some(gta), n_mc, seed)?;
    let by_pgd = paired_outcomes(w, data, Some(pgd), n_mc, seed)?;
    Ok(ErrorReport {
        clean_test: Rate::from_counts(by_gta.iter().filter(|o| o.clean_error()).count(), n_mc),
        robust_test_gta: Rate::from_counts(
            by_gta.iter().filter(|o| o.robust_error()).count(),
            n_mc,
        ),
        robust_test_pgd: Rate::from_counts(
            by_pgd.iter().filter(|o| o.robust_error()).count(),
            n_mc,
        ),
        robust_train: robust_train_error(w, dataset, adv)?,
        n_mc,
    })
}
