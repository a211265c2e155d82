//! Attack properties: the closed-form transferable attack and PGD feasibility.

mod common;

use cgro_core::attack::{gta_with, pgd, AttackSpec};
use cgro_core::data::{default_parameterization, sample_example, sample_examples};
use cgro_core::linalg::{norm2, Norm};
use cgro_core::model::{logistic_loss, CnnWeights};
use cgro_core::rng;
use common::gaussian;

#[test]
fn gta_signal_patch_matches_closed_form() {
    for (d, c) in [(16, 1.0), (64, 0.5), (400, 0.3)] {
        let cfg = default_parameterization(d, c).unwrap();
        let data = &cfg.data;
        let mut r = rng::stream(1, "gta-closed-form", d as u64);
        for _ in 0..20 {
            let ex = sample_example(data, &mut r);
            let adv = gta_with(&ex, data, &cfg.attack).unwrap();
            let s = ex.signal_index;
            let scale = data.alpha * (1.0 - cfg.attack.gamma) * ex.y();
            for (k, w) in data.w_star.iter().enumerate() {
                assert!((adv[s * d + k] - scale * w).abs() <= 1e-12);
            }
            for j in ex.noise_indices(data.patches) {
                assert_eq!(&adv[j * d..(j + 1) * d], ex.patch(j, d));
            }
        }
    }
}

#[test]
fn gta_displacement_equals_radius_under_default_scalings() {
    for d in [8, 50, 400, 1000] {
        let cfg = default_parameterization(d, 0.3).unwrap();
        for ex in sample_examples(&cfg.data, "gta-radius", 3, 10) {
            let adv = gta_with(&ex, &cfg.data, &cfg.attack).unwrap();
            let diff: Vec<f64> = adv.iter().zip(&ex.patches).map(|(a, b)| a - b).collect();
            assert!((norm2(&diff) - cfg.attack.delta).abs() <= 1e-9, "d = {d}");
        }
    }
}

#[test]
fn pgd_stays_in_ball_and_best_value_never_drops() {
    let d = 12;
    let p = 3;
    for (k, norm) in [Norm::L2, Norm::LInf, Norm::L2, Norm::LInf]
        .into_iter()
        .enumerate()
    {
        let mut r = rng::stream(77, "pgd-case", k as u64);
        let w = CnnWeights::from_rows(4, d, gaussian(4 * d, 0.6, &mut r)).unwrap();
        let x = gaussian(p * d, 1.0, &mut r);
        let y = if k % 2 == 0 { 1.0 } else { -1.0 };
        let delta = 0.3 + 0.4 * k as f64;
        let spec = AttackSpec::pgd(norm, delta);
        let out = pgd(&w, &x, y, &spec, &mut r).unwrap();
        let xi: Vec<f64> = out.point.iter().zip(&x).map(|(a, b)| a - b).collect();
        assert!(
            norm.of(&xi) <= delta * (1.0 + 1e-12),
            "{:?}: {}",
            norm,
            norm.of(&xi)
        );
        // x0, then each restart start point (after the first) and every step
        assert_eq!(out.best_trace.len(), spec.restarts * (spec.steps + 1));
        assert!(out.best_trace.windows(2).all(|t| t[1] >= t[0]));
        assert_eq!(*out.best_trace.last().unwrap(), out.value);
        let clean = logistic_loss(&w, &x, y).unwrap();
        assert!(logistic_loss(&w, &out.point, y).unwrap() >= clean);
    }
}

#[test]
fn pgd_defeats_a_saturated_model() {
    // margins of ~1e6 make the loss gradient underflow; the attack must still move
    let cfg = default_parameterization(64, 0.5).unwrap();
    let d = cfg.data.d;
    let mut rows = vec![0.0; cfg.m * d];
    rows[..d].copy_from_slice(&cfg.data.w_star);
    let w = CnnWeights::from_rows(cfg.m, d, rows).unwrap();
    let ex = sample_example(&cfg.data, &mut rng::stream(5, "saturated", 0));
    let spec = AttackSpec::pgd(Norm::L2, 1.5 * cfg.data.alpha);
    let out = pgd(
        &w,
        &ex.patches,
        ex.y(),
        &spec,
        &mut rng::stream(5, "saturated", 1),
    )
    .unwrap();
    assert!(ex.y() * cgro_core::model::forward(&w, &out.point).unwrap() < 0.0);
}
