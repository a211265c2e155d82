//! The five pipeline commands and their on-disk artifacts.
//!
//! Layout under `output_dir`:
//!
//! ```text
//! dataset.json
//! run/weights.json  run/errors.json  run/features.json  run/train_summary.json
//! run/telemetry.csv run/residuals.csv run/checkpoints/iter_NNNNNN.json
//! flatness.csv      flatness.json
//! construct/net.json construct/points.json construct/report.json
//! report/summary.json report/components.csv
//! ```
//!
//! Every file is a pure function of the manifest, so reruns are byte-identical.

use crate::error::{CliError, Result};
use crate::manifest::ExperimentManifest;
use cgro_core::attack::{AttackMethod, AttackSpec};
use cgro_core::construct::{
    build_cgro_net, separated_task, verify, LabeledPoint, ReluNet, VerificationReport,
};
use cgro_core::data::{sample_dataset, Dataset};
use cgro_core::eval::{error_report, ErrorReport};
use cgro_core::flatness::{gap_ledger, spearman, FlatnessReport};
use cgro_core::linalg::Norm;
use cgro_core::model::CnnWeights;
use cgro_core::telemetry::{FeatureMetrics, ResidualReport, TelemetryRecord};
use cgro_core::train::{train, Checkpoint};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const CSV_VERSION_LINE: &str = "# format_version=1";

pub const FLATNESS_CSV_HEADER: &str = "iteration,eps,p,q,local_flat_train,local_flat_test,global_flat,\
global_flat_stderr,loss_change_train,loss_change_test,gap,bound_rhs,implied_constant,lower_quantity";

/// Paths of every artifact, relative to the manifest's output directory.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout {
            root: root.to_path_buf(),
        }
    }
    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.json")
    }
    pub fn run(&self, file: &str) -> PathBuf {
        self.root.join("run").join(file)
    }
    pub fn checkpoint(&self, iteration: usize) -> PathBuf {
        self.root
            .join("run/checkpoints")
            .join(format!("iter_{iteration:06}.json"))
    }
    pub fn flatness_csv(&self) -> PathBuf {
        self.root.join("flatness.csv")
    }
    pub fn flatness_json(&self) -> PathBuf {
        self.root.join("flatness.json")
    }
    pub fn construct(&self, file: &str) -> PathBuf {
        self.root.join("construct").join(file)
    }
    pub fn report(&self, file: &str) -> PathBuf {
        self.root.join("report").join(file)
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = cgro_core::json::to_string(value).map_err(|e| CliError::Artifact {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    write_file(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Artifact {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

fn csv(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut out = format!("{CSV_VERSION_LINE}\n{header}\n");
    for row in rows {
        out.push_str(&row);
        out.push('\n');
    }
    out
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Samples the training set and writes `dataset.json`; returns its SHA-256.
pub fn gen_data(m: &ExperimentManifest) -> Result<String> {
    let layout = Layout::new(&m.output_dir);
    let ds = sample_dataset(&m.run_config.data, m.run_config.n_train)?;
    let path = layout.dataset();
    write_json(&path, &ds)?;
    let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
    Ok(format!("sha256 {}  {}", sha256_hex(&bytes), path.display()))
}

fn load_or_generate_dataset(m: &ExperimentManifest, layout: &Layout) -> Result<Dataset> {
    let path = layout.dataset();
    if path.exists() {
        let ds: Dataset = read_json(&path)?;
        if ds.config != m.run_config.data || ds.len() != m.run_config.n_train {
            return Err(CliError::Lab(cgro_core::LabError::config(
                "run_config.data",
                format!(
                    "{} was generated from a different configuration",
                    path.display()
                ),
            )));
        }
        Ok(ds)
    } else {
        gen_data(m)?;
        read_json(&path)
    }
}

/// Scalars of a training run that are not in the telemetry table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub iterations: usize,
    pub residual_steps: usize,
    pub max_signal_residual: f64,
    pub max_noise_residual: f64,
    pub residuals_pass: bool,
    pub max_positive_u_drop: f64,
}

/// Attacks used for the error report: the first GTA and first PGD entries
/// of `eval.attacks`, falling back to the training attack and to PGD in
/// `l2` at the training radius.
pub fn report_attacks(m: &ExperimentManifest) -> (AttackSpec, AttackSpec) {
    let find = |method| m.eval.attacks.iter().find(|a| a.method == method).cloned();
    let gta = find(AttackMethod::Gta).unwrap_or_else(|| m.run_config.attack.clone());
    let pgd = find(AttackMethod::Pgd)
        .unwrap_or_else(|| AttackSpec::pgd(Norm::L2, m.run_config.attack.delta));
    (gta, pgd)
}

/// Trains, writes checkpoints and telemetry, and evaluates the final weights.
pub fn train_cmd(m: &ExperimentManifest) -> Result<String> {
    let layout = Layout::new(&m.output_dir);
    let ds = load_or_generate_dataset(m, &layout)?;
    let out = train(&m.run_config, &ds)?;

    for Checkpoint { iteration, weights } in &out.checkpoints {
        write_json(&layout.checkpoint(*iteration), weights)?;
    }
    write_json(&layout.run("weights.json"), &out.weights)?;
    write_file(
        &layout.run("telemetry.csv"),
        &csv(
            TelemetryRecord::CSV_HEADER,
            out.telemetry.iter().map(TelemetryRecord::csv_row),
        ),
    )?;
    write_file(
        &layout.run("residuals.csv"),
        &csv(
            "iteration,max_signal_residual,max_noise_residual,pass",
            out.residuals.iter().map(|r| {
                format!(
                    "{},{:.16e},{:.16e},{}",
                    r.iteration, r.max_signal_residual, r.max_noise_residual, r.pass
                )
            }),
        ),
    )?;
    let features: &FeatureMetrics = &out.features.last().expect("final iteration is recorded").1;
    write_json(&layout.run("features.json"), features)?;

    let (max_signal_residual, max_noise_residual) = out.max_residuals();
    let summary = TrainSummary {
        iterations: m.run_config.iterations,
        residual_steps: out.residuals.len(),
        max_signal_residual,
        max_noise_residual,
        residuals_pass: out.residuals.iter().all(|r: &ResidualReport| r.pass),
        max_positive_u_drop: out.max_positive_u_drop,
    };
    write_json(&layout.run("train_summary.json"), &summary)?;

    let (gta, pgd) = report_attacks(m);
    let report = error_report(
        &out.weights,
        &ds,
        &out.adv_examples,
        &gta,
        &pgd,
        m.eval.n_mc,
        m.eval.seed,
    )?;
    write_json(&layout.run("errors.json"), &report)?;
    Ok(error_table(&report))
}

/// Fixed-width rendering of an error report.
pub fn error_table(r: &ErrorReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<18} {:>8} {:>8}", "error", "rate", "stderr");
    for (name, rate) in [
        ("clean_test", &r.clean_test),
        ("robust_test_gta", &r.robust_test_gta),
        ("robust_test_pgd", &r.robust_test_pgd),
    ] {
        let _ = writeln!(s, "{name:<18} {:>8.4} {:>8.4}", rate.rate, rate.stderr);
    }
    let _ = writeln!(
        s,
        "{:<18} {:>8.4} {:>8}",
        "robust_train", r.robust_train, "-"
    );
    let _ = write!(s, "{:<18} {:>8}", "n_mc", r.n_mc);
    s
}

/// Flatness ledger at one checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointFlatness {
    pub iteration: usize,
    pub reports: Vec<FlatnessReport>,
}

fn flatness_row(iteration: usize, r: &FlatnessReport) -> String {
    let norm = |n: Norm| match n {
        Norm::L1 => "1",
        Norm::L2 => "2",
        Norm::LInf => "inf",
    };
    format!(
        "{iteration},{:.16e},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
        r.eps,
        norm(r.norms.p),
        norm(r.norms.q),
        r.local_flat_train,
        r.local_flat_test,
        r.global_flat.mean,
        r.global_flat.stderr,
        r.loss_change_train,
        r.loss_change_test,
        r.gap,
        r.bound_rhs,
        r.implied_constant,
        r.lower_quantity,
    )
}

/// Spearman correlation between gap and global flatness across checkpoints,
/// one value per radius.
pub fn gap_flatness_correlation(series: &[CheckpointFlatness]) -> Vec<(f64, f64)> {
    let Some(first) = series.first() else {
        return Vec::new();
    };
    (0..first.reports.len())
        .map(|k| {
            let gaps: Vec<f64> = series.iter().map(|c| c.reports[k].gap).collect();
            let flats: Vec<f64> = series
                .iter()
                .map(|c| c.reports[k].global_flat.mean)
                .collect();
            (first.reports[k].eps, spearman(&gaps, &flats))
        })
        .collect()
}

/// Probes every requested checkpoint at every radius.
pub fn flatness_cmd(m: &ExperimentManifest) -> Result<String> {
    let layout = Layout::new(&m.output_dir);
    let ds: Dataset = read_json(&layout.dataset())
        .map_err(|_| CliError::MissingArtifacts(vec!["dataset.json".into()]))?;
    let mut weights = Vec::with_capacity(m.flatness.checkpoints.len());
    for &t in &m.flatness.checkpoints {
        let path = layout.checkpoint(t);
        if !path.exists() {
            return Err(CliError::MissingCheckpoint(t));
        }
        weights.push((t, read_json::<CnnWeights>(&path)?));
    }
    let cfg = m.flatness.ledger_config();
    let series = weights
        .iter()
        .map(|(t, w)| {
            Ok(CheckpointFlatness {
                iteration: *t,
                reports: gap_ledger(w, &ds, &m.flatness.eps_list, &cfg)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_file(
        &layout.flatness_csv(),
        &csv(
            FLATNESS_CSV_HEADER,
            series
                .iter()
                .flat_map(|c| c.reports.iter().map(|r| flatness_row(c.iteration, r))),
        ),
    )?;
    write_json(&layout.flatness_json(), &series)?;
    let mut s = format!(
        "{} checkpoints x {} radii",
        series.len(),
        m.flatness.eps_list.len()
    );
    if series.len() >= 2 {
        for (eps, rho) in gap_flatness_correlation(&series) {
            let _ = write!(s, "\neps {eps:.6e}: spearman(gap, global_flat) = {rho:.4}");
        }
    }
    Ok(s)
}

/// Built network plus an independent parameter recount.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstructReport {
    pub verification: VerificationReport,
    pub clip_bound: Option<f64>,
    /// Stored weights plus offsets, counted layer by layer from the file.
    pub audited_param_count: usize,
    pub depth: usize,
}

/// Stored weights plus offsets, counted directly from the layers.
pub fn audit_params(net: &ReluNet) -> usize {
    net.layers
        .iter()
        .map(|l| l.entries.len() + l.offset.len())
        .sum()
}

/// Builds the memorization network on a sampled task and verifies it.
pub fn construct_cmd(m: &ExperimentManifest) -> Result<String> {
    let layout = Layout::new(&m.output_dir);
    let c = m.construct.as_ref().ok_or_else(|| {
        cgro_core::LabError::config("construct", "section is missing from the manifest")
    })?;
    let spec = c.build_spec()?;
    let points: Vec<LabeledPoint> =
        separated_task(&spec.clean_net, c.n_points, c.min_separation, c.seed)?;
    let net = build_cgro_net(&spec, &points)?;
    let verification = verify(&net, &spec, &points, c.n_probes, c.n_test, c.seed)?;
    let report = ConstructReport {
        clip_bound: spec.clip_bound,
        audited_param_count: audit_params(&net),
        depth: net.depth(),
        verification,
    };
    write_json(&layout.construct("net.json"), &net)?;
    write_json(&layout.construct("points.json"), &points)?;
    write_json(&layout.construct("report.json"), &report)?;
    let v = &report.verification;
    Ok(format!(
        "params {} (audit {}), depth {}, sign agreement {:.4}, robust train error {:.4}, robust test error {:.4} (clean net {:.4})",
        v.param_count,
        report.audited_param_count,
        report.depth,
        v.sign_agreement,
        v.robust_train_error,
        v.robust_test_error,
        v.robust_test_error_clean
    ))
}

/// Everything the other commands produced, in one document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub manifest: ExperimentManifest,
    pub dataset_sha256: String,
    pub errors: ErrorReport,
    pub final_features: FeatureMetrics,
    pub training: TrainSummary,
    pub flatness: Vec<CheckpointFlatness>,
    /// `(eps, spearman(gap, global_flat))` across checkpoints.
    pub gap_flatness_spearman: Vec<(f64, f64)>,
    pub construct: Option<ConstructReport>,
}

/// Consolidates earlier outputs; lists every missing artifact at once.
pub fn report_cmd(m: &ExperimentManifest) -> Result<String> {
    let layout = Layout::new(&m.output_dir);
    let mut needed = vec![
        layout.dataset(),
        layout.run("errors.json"),
        layout.run("features.json"),
        layout.run("train_summary.json"),
        layout.flatness_json(),
    ];
    if m.construct.is_some() {
        needed.push(layout.construct("report.json"));
    }
    let missing: Vec<String> = needed
        .iter()
        .filter(|p| !p.exists())
        .map(|p| {
            p.strip_prefix(&layout.root)
                .unwrap_or(p)
                .display()
                .to_string()
        })
        .collect();
    if !missing.is_empty() {
        return Err(CliError::MissingArtifacts(missing));
    }
    let dataset_bytes =
        std::fs::read(layout.dataset()).map_err(|e| CliError::io(&layout.dataset(), e))?;
    let flatness: Vec<CheckpointFlatness> = read_json(&layout.flatness_json())?;
    let summary = Summary {
        manifest: m.clone(),
        dataset_sha256: sha256_hex(&dataset_bytes),
        errors: read_json(&layout.run("errors.json"))?,
        final_features: read_json(&layout.run("features.json"))?,
        training: read_json(&layout.run("train_summary.json"))?,
        gap_flatness_spearman: if flatness.len() >= 2 {
            gap_flatness_correlation(&flatness)
        } else {
            Vec::new()
        },
        flatness,
        construct: match m.construct {
            Some(_) => Some(read_json(&layout.construct("report.json"))?),
            None => None,
        },
    };
    write_json(&layout.report("summary.json"), &summary)?;

    // per-neuron signal components and per-sample memorization, for plotting
    let f = &summary.final_features;
    let rows = (0..f.u.len().max(f.big_v.len())).map(|i| {
        let cell = |v: Option<&f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
        format!("{i},{},{}", cell(f.u.get(i)), cell(f.big_v.get(i)))
    });
    write_file(&layout.report("components.csv"), &csv("index,u,V", rows))?;
    Ok(format!("wrote {}", layout.report("summary.json").display()))
}
