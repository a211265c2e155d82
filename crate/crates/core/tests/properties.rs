//! Randomized invariants over the data sampler, norms, scalar helpers and
//! the ReLU network combinators.

use cgro_core::construct::{soft_indicator, Layer, ReluNet};
use cgro_core::data::{sample_example, uniform_direction, DataConfig};
use cgro_core::flatness::spearman;
use cgro_core::linalg::{dot, Norm};
use cgro_core::model::{logistic, negative_sigmoid};
use cgro_core::rng;
use proptest::prelude::*;

fn vec_in(len: usize, bound: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-bound..bound, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn noise_patches_are_orthogonal_and_signal_is_exact(
        d in 8usize..40,
        p in 2usize..6,
        alpha in 0.1f64..20.0,
        sigma in 0.01f64..2.0,
        seed in any::<u64>(),
    ) {
        let cfg = DataConfig::new(d, p, alpha, sigma, seed).unwrap();
        let ex = sample_example(&cfg, &mut rng::stream(seed, "prop", 0));
        let y = ex.y();
        for (a, b) in ex.patch(ex.signal_index, d).iter().zip(&cfg.w_star) {
            prop_assert!((a - alpha * y * b).abs() <= 1e-12 * alpha);
        }
        for j in ex.noise_indices(p) {
            let patch = ex.patch(j, d);
            let scale = patch.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
            prop_assert!(dot(patch, &cfg.w_star).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn projection_lands_in_the_ball_and_is_idempotent(
        xi in vec_in(12, 50.0),
        radius in 0.0f64..10.0,
        linf in any::<bool>(),
    ) {
        let norm = if linf { Norm::LInf } else { Norm::L2 };
        let mut a = xi.clone();
        norm.project(&mut a, radius);
        prop_assert!(norm.of(&a) <= radius * (1.0 + 1e-12) + 1e-300);
        let mut b = a.clone();
        norm.project(&mut b, radius);
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() <= 1e-12 * radius.max(1.0));
        }
        if norm.of(&xi) <= radius {
            prop_assert_eq!(&a, &xi);
        }
    }

    #[test]
    fn ascent_direction_attains_the_dual_norm(g in vec_in(10, 5.0), linf in any::<bool>()) {
        let norm = if linf { Norm::LInf } else { Norm::L2 };
        let dir = norm.ascent_direction(&g);
        let n = norm.of(&dir);
        prop_assert!(n <= 1.0 + 1e-12);
        let gain = dot(&dir, &g);
        prop_assert!((gain - norm.dual().of(&g)).abs() <= 1e-9 * norm.dual().of(&g).max(1.0));
    }

    #[test]
    fn sigmoid_and_logistic_are_stable(z in -1e4f64..1e4) {
        let s = negative_sigmoid(z);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!((s + negative_sigmoid(-z) - 1.0).abs() <= 1e-15);
        let l = logistic(z);
        prop_assert!(l.is_finite() && l >= 0.0);
        prop_assert!(logistic(z) - logistic(z + 1.0) >= -1e-15);
    }

    #[test]
    fn soft_indicator_is_a_monotone_unit_ramp(
        lo in -5.0f64..5.0,
        width in 1e-3f64..3.0,
        t in -20.0f64..20.0,
        dt in 0.0f64..2.0,
    ) {
        let net = soft_indicator(lo, lo + width).unwrap();
        let a = net.forward(&[t]).unwrap();
        let b = net.forward(&[t + dt]).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&a));
        prop_assert!(b <= a + 1e-12);
        if t <= lo {
            prop_assert!((a - 1.0).abs() <= 1e-12);
        }
        if t >= lo + width {
            prop_assert_eq!(a, 0.0);
        }
    }

    #[test]
    fn composition_matches_sequential_evaluation(
        w1 in vec_in(12, 2.0),
        b1 in vec_in(4, 1.0),
        w2 in vec_in(8, 2.0),
        b2 in vec_in(2, 1.0),
        x in vec_in(3, 3.0),
    ) {
        let first = ReluNet::new(3, vec![
            Layer::new(3, 4, dense(4, 3, &w1), b1).unwrap(),
            Layer::new(4, 4, (0..4).map(|i| (i, i, 1.0)).collect(), vec![0.0; 4]).unwrap(),
        ]).unwrap();
        let second = ReluNet::new(4, vec![
            Layer::new(4, 2, dense(2, 4, &w2), b2).unwrap(),
            Layer::new(2, 1, vec![(0, 0, 1.0), (0, 1, -0.5)], vec![0.25]).unwrap(),
        ]).unwrap();
        let mid = first.forward_vec(&x).unwrap();
        let expected = second.forward(&mid).unwrap();
        let composed = first.clone().then(&second).unwrap();
        prop_assert!((composed.forward(&x).unwrap() - expected).abs() <= 1e-12 * expected.abs().max(1.0));

        let stacked = ReluNet::stack(&[first.clone(), first.clone()]).unwrap();
        let mut xx = x.clone();
        xx.extend(x.iter().map(|v| -v));
        let out = stacked.forward_vec(&xx).unwrap();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        prop_assert_eq!(&out[..4], &mid[..]);
        prop_assert_eq!(&out[4..], &first.forward_vec(&neg).unwrap()[..]);
    }

    #[test]
    fn spearman_is_bounded_and_symmetric(
        pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 2..30),
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let r = spearman(&a, &b);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
        prop_assert!((r - spearman(&b, &a)).abs() <= 1e-12);
        let monotone: Vec<f64> = a.iter().map(|v| v.powi(3) + 2.0 * v).collect();
        let distinct = {
            let mut s = a.clone();
            s.sort_by(f64::total_cmp);
            s.windows(2).all(|w| w[0] < w[1])
        };
        if distinct {
            prop_assert!((spearman(&a, &monotone) - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn json_floats_round_trip_bit_exactly(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..20)) {
        let text = cgro_core::json::to_string(&values).unwrap();
        let back: Vec<f64> = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), back.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

fn dense(rows: usize, cols: usize, w: &[f64]) -> Vec<(usize, usize, f64)> {
    (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .map(|(r, c)| (r, c, w[r * cols + c]))
        .collect()
}

#[test]
fn uniform_direction_is_unit() {
    for d in [8, 64, 400] {
        let w = uniform_direction(d);
        assert!((dot(&w, &w) - 1.0).abs() < 1e-12);
    }
}
