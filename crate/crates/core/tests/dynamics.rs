//! Training dynamics: projected update equalities, score decomposition and
//! monotone signal growth.

mod common;

use cgro_core::attack::gta_with;
use cgro_core::data::sample_dataset;
use cgro_core::model::forward;
use cgro_core::telemetry::{
    feature_metrics, verify_projection_equalities, Snapshot, RESIDUAL_TOLERANCE,
};
use cgro_core::train::{step_terms, train};
use common::small_run;

#[test]
fn projection_equalities_hold_at_every_step() {
    let cfg = small_run(64, 3, 4, 8, 50);
    let ds = sample_dataset(&cfg.data, cfg.n_train).unwrap();
    let out = train(&cfg, &ds).unwrap();
    assert_eq!(out.residuals.len(), 50);
    let (s, n) = out.max_residuals();
    assert!(
        s < RESIDUAL_TOLERANCE && n < RESIDUAL_TOLERANCE,
        "signal {s:e}, noise {n:e}"
    );
    assert!(out.residuals.iter().all(|r| r.pass));
    // the run moved: the check is not vacuous
    assert!(out.checkpoints[50].weights != out.checkpoints[0].weights);
}

#[test]
fn injected_weight_fault_is_detected() {
    let cfg = small_run(64, 3, 4, 8, 50);
    let ds = sample_dataset(&cfg.data, cfg.n_train).unwrap();
    let out = train(&cfg, &ds).unwrap();
    let snapshot = |t: usize, weights| {
        let terms = step_terms(&weights, &ds, &out.adv_examples, cfg.lambda).unwrap();
        Snapshot {
            iteration: t,
            weights,
            psi_clean: terms.psi_clean,
            psi_adv: terms.psi_adv,
        }
    };
    for t in [0, 17, 49] {
        let prev = snapshot(t, out.checkpoints[t].weights.clone());
        let clean = snapshot(t + 1, out.checkpoints[t + 1].weights.clone());
        assert!(
            verify_projection_equalities(&prev, &clean, &cfg, &ds)
                .unwrap()
                .pass
        );

        let mut corrupted = out.checkpoints[t + 1].weights.clone();
        corrupted.rows[3 * 64 + 7] += 1e-3;
        let report =
            verify_projection_equalities(&prev, &snapshot(t + 1, corrupted), &cfg, &ds).unwrap();
        assert!(!report.pass);
        assert!(report.max_signal_residual.max(report.max_noise_residual) > 1e-6);
    }
    let a = snapshot(0, out.checkpoints[0].weights.clone());
    let c = snapshot(2, out.checkpoints[2].weights.clone());
    assert!(verify_projection_equalities(&a, &c, &cfg, &ds).is_err());
}

#[test]
fn margin_decomposes_into_signal_and_noise_terms() {
    // y f(X) = alpha^3 U + V_i and, under GTA, alpha^3 (1 - gamma)^3 U + V_i
    let cfg = small_run(16, 4, 3, 12, 20);
    let ds = sample_dataset(&cfg.data, cfg.n_train).unwrap();
    let out = train(&cfg, &ds).unwrap();
    let fm = feature_metrics(&out.weights, &ds).unwrap();
    let a3 = cfg.data.alpha.powi(3);
    let shrink3 = (1.0 - cfg.attack.gamma).powi(3);
    for (i, ex) in ds.examples.iter().enumerate() {
        let clean = ex.y() * forward(&out.weights, &ex.patches).unwrap();
        let expected = a3 * fm.big_u + fm.big_v[i];
        assert!(
            (clean - expected).abs() <= 1e-10 * (1.0 + expected.abs()),
            "{clean} vs {expected}"
        );

        let adv = gta_with(ex, &cfg.data, &cfg.attack).unwrap();
        let robust = ex.y() * forward(&out.weights, &adv).unwrap();
        let expected = a3 * shrink3 * fm.big_u + fm.big_v[i];
        assert!(
            (robust - expected).abs() <= 1e-10 * (1.0 + expected.abs()),
            "{robust} vs {expected}"
        );
    }
}

#[test]
fn positively_initialized_signal_components_never_decrease() {
    let cfg = small_run(32, 3, 6, 10, 200);
    let ds = sample_dataset(&cfg.data, cfg.n_train).unwrap();
    let out = train(&cfg, &ds).unwrap();
    // exact arithmetic gives no drop at all; allow rounding
    assert!(
        out.max_positive_u_drop <= 1e-12,
        "{}",
        out.max_positive_u_drop
    );
    let u0 = &out.features[0].1.u;
    for pair in out.features.windows(2) {
        for (r, &start) in u0.iter().enumerate() {
            if start > 0.0 {
                assert!(pair[1].1.u[r] >= pair[0].1.u[r] - 1e-12);
            }
        }
    }
}
