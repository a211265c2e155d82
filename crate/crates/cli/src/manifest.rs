//! Experiment manifest: one JSON document describing a full run.
//!
//! Fields can be overridden from the command line with dotted paths, e.g.
//! `--run_config.eta=0.5` or `--flatness.eps_list=[0.5,1.0]`. Override values
//! are parsed as JSON when possible and taken as strings otherwise; the path
//! must already exist in the manifest.

use crate::error::{CliError, Result};
use cgro_core::attack::AttackSpec;
use cgro_core::construct::{halfspace_clean_net, CgroBuildSpec, ReluNet};
use cgro_core::flatness::{HolderPair, LedgerConfig, ProbeConfig};
use cgro_core::train::RunConfig;
use cgro_core::LabError;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::{Path, PathBuf};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub format_version: u32,
    pub run_config: RunConfig,
    pub eval: EvalSection,
    pub flatness: FlatnessSection,
    #[serde(default)]
    pub construct: Option<ConstructSection>,
    pub output_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub n_mc: usize,
    /// The first GTA and the first PGD entry feed the error report.
    pub attacks: Vec<AttackSpec>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlatnessSection {
    /// Probe radii, ascending.
    pub eps_list: Vec<f64>,
    pub probe: ProbeConfig,
    pub norms: HolderPair,
    /// Training iterations to probe; each must be a telemetry iteration.
    pub checkpoints: Vec<usize>,
    pub n_test: usize,
    pub n_mc: usize,
    pub seed: u64,
}

impl FlatnessSection {
    pub fn ledger_config(&self) -> LedgerConfig {
        LedgerConfig {
            norms: self.norms,
            probe: self.probe,
            n_test: self.n_test,
            n_mc: self.n_mc,
            seed: self.seed,
        }
    }
}

/// Clean classifier used under the memorization terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CleanNetSpec {
    /// Halfspace on the mean of the first `block` coordinates.
    Halfspace {
        dim: usize,
        block: usize,
    },
    Explicit {
        net: ReluNet,
    },
}

impl CleanNetSpec {
    pub fn build(&self) -> Result<ReluNet> {
        Ok(match self {
            CleanNetSpec::Halfspace { dim, block } => halfspace_clean_net(*dim, *block)?,
            CleanNetSpec::Explicit { net } => {
                net.validate()?;
                net.clone()
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstructSection {
    pub delta: f64,
    pub eps_sq: f64,
    pub eps_prod: f64,
    pub ramp_width: f64,
    #[serde(default)]
    pub clip_bound: Option<f64>,
    pub clean: CleanNetSpec,
    /// Number of training points, sampled uniformly on the cube.
    pub n_points: usize,
    /// Minimum pairwise distance between sampled training points.
    pub min_separation: f64,
    pub n_probes: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl ConstructSection {
    pub fn build_spec(&self) -> Result<CgroBuildSpec> {
        Ok(CgroBuildSpec {
            delta: self.delta,
            eps_sq: self.eps_sq,
            eps_prod: self.eps_prod,
            ramp_width: self.ramp_width,
            clip_bound: self.clip_bound,
            clean_net: self.clean.build()?,
        })
    }
}

impl ExperimentManifest {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(config(
                "format_version",
                format!("expected {FORMAT_VERSION}, got {}", self.format_version),
            ));
        }
        self.run_config.validate()?;
        if self.eval.n_mc == 0 {
            return Err(config("eval.n_mc", "must be >= 1"));
        }
        for a in &self.eval.attacks {
            a.validate(&self.run_config.data)?;
        }
        let f = &self.flatness;
        if f.eps_list.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return Err(config(
                "flatness.eps_list",
                "radii must be non-negative and finite",
            ));
        }
        if f.eps_list.windows(2).any(|w| w[0] > w[1]) {
            return Err(config("flatness.eps_list", "radii must be ascending"));
        }
        if f.n_test == 0 || f.n_mc == 0 {
            return Err(config("flatness.n_mc", "sample counts must be >= 1"));
        }
        let available = self.run_config.telemetry_iterations();
        if let Some(t) = f.checkpoints.iter().find(|t| !available.contains(t)) {
            return Err(config(
                "flatness.checkpoints",
                format!("iteration {t} is not on the telemetry cadence"),
            ));
        }
        if let Some(c) = &self.construct {
            c.build_spec()?.validate()?;
        }
        Ok(())
    }

    /// Reads a manifest, applies dotted-path overrides and validates it.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut value: Value = serde_json::from_str(&text)
            .map_err(|e| config("manifest", format!("{}: {e}", path.display())))?;
        for (key, raw) in overrides {
            apply_override(&mut value, key, raw)?;
        }
        let manifest: ExperimentManifest =
            serde_json::from_value(value).map_err(|e| config("manifest", e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_json(&self) -> String {
        cgro_core::json::to_string(self).expect("manifest serializes")
    }
}

fn config(field: &str, reason: impl Into<String>) -> CliError {
    CliError::Lab(LabError::config(field, reason))
}

/// Sets the value at a dotted `key` inside `root`.
pub fn apply_override(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    let mut node = root;
    for part in key.split('.') {
        node = match node {
            Value::Object(map) => map.get_mut(part),
            Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| config(key, "no such manifest field"))?;
    }
    *node = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}

/// Splits `--a.b=value` style arguments into `(path, value)` pairs.
pub fn parse_override(arg: &str) -> Result<(String, String)> {
    let body = arg.strip_prefix("--").unwrap_or(arg);
    match body.split_once('=') {
        Some((k, v)) if !k.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => Err(CliError::Lab(LabError::Argument(format!(
            "override `{arg}` must look like --path.to.field=value"
        )))),
    }
}
