#![allow(dead_code)]

use cgro_core::attack::AttackSpec;
use cgro_core::data::default_parameterization;
use cgro_core::flatness::{HolderPair, ProbeConfig};
use cgro_core::linalg::Norm;
use cgro_lab::manifest::{
    CleanNetSpec, ConstructSection, EvalSection, FlatnessSection, FORMAT_VERSION,
};
use cgro_lab::ExperimentManifest;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/desk.json");

/// Default scalings at d = 24 with a short run; every section is small
/// enough for the whole pipeline to finish in about a second.
pub fn small_manifest(output_dir: &Path) -> ExperimentManifest {
    let mut rc = default_parameterization(24, 0.3).unwrap();
    rc.n_train = 10;
    rc.iterations = 30;
    rc.telemetry_every = 10;
    rc.verify_projections = true;
    let delta = rc.attack.delta;
    let mut pgd = AttackSpec::pgd(Norm::L2, delta);
    pgd.steps = 5;
    pgd.restarts = 2;
    pgd.step_size = 2.5 * delta / 5.0;
    ExperimentManifest {
        format_version: FORMAT_VERSION,
        eval: EvalSection {
            n_mc: 200,
            attacks: vec![rc.attack.clone(), pgd],
            seed: 1,
        },
        flatness: FlatnessSection {
            eps_list: vec![0.5 * delta, delta],
            probe: ProbeConfig {
                steps: 4,
                restarts: 2,
                step_factor: 1.5,
            },
            norms: HolderPair::l2(),
            checkpoints: vec![0, 10, 20, 30],
            n_test: 8,
            n_mc: 8,
            seed: 2,
        },
        construct: Some(ConstructSection {
            delta: 0.1,
            eps_sq: 1e-3,
            eps_prod: 1e-3,
            ramp_width: 0.01,
            clip_bound: None,
            clean: CleanNetSpec::Halfspace { dim: 3, block: 3 },
            n_points: 6,
            min_separation: 0.3,
            n_probes: 300,
            n_test: 20,
            seed: 3,
        }),
        run_config: rc,
        output_dir: output_dir.to_path_buf(),
    }
}

pub fn write_manifest(dir: &Path, m: &ExperimentManifest) -> PathBuf {
    let path = dir.join("manifest.json");
    std::fs::write(&path, m.to_json()).unwrap();
    path
}

/// Runs the binary with `args`.
pub fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgro-lab"))
        .args(args)
        .env_remove(cgro_lab::THREADS_ENV)
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// Every file under `root` with its bytes, sorted by relative path.
pub fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = std::fs::read(&p).unwrap();
                files.push((p.strip_prefix(root).unwrap().to_path_buf(), bytes));
            }
        }
    }
    files.sort();
    files
}

pub const COMMANDS: [&str; 5] = ["gen-data", "train", "flatness", "construct", "report"];
