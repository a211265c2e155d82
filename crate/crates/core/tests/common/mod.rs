#![allow(dead_code)]

use cgro_core::attack::{AttackMethod, AttackSpec};
use cgro_core::data::DataConfig;
use cgro_core::linalg::Norm;
use cgro_core::rng::LabRng;
use cgro_core::train::RunConfig;
use rand::Rng;
use rand_distr::StandardNormal;

/// GTA run with `alpha = 2`, `sigma = 0.3`, `gamma = 0.9`.
pub fn small_run(d: usize, p: usize, m: usize, n: usize, t: usize) -> RunConfig {
    let alpha = 2.0;
    let gamma = 0.9;
    RunConfig {
        data: DataConfig::new(d, p, alpha, 0.3, 5).unwrap(),
        n_train: n,
        m,
        sigma0: 0.2,
        eta: 0.5,
        iterations: t,
        lambda: 0.5,
        attack: AttackSpec {
            method: AttackMethod::Gta,
            norm: Norm::L2,
            delta: gamma * alpha,
            gamma,
            steps: 40,
            restarts: 5,
            step_size: 2.5 * gamma * alpha / 40.0,
        },
        telemetry_every: 1,
        seed: 9,
        regenerate_adv: false,
        verify_projections: true,
    }
}

pub fn gaussian(n: usize, scale: f64, rng: &mut LabRng) -> Vec<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}
