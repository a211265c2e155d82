//! Gadget accuracy on dense grids and the size of the memorization network.

use cgro_core::construct::{
    build_cgro_net, eval_f_s, halfspace_clean_net, product_gadget, separated_task, soft_indicator,
    sqdist_gadget, square_gadget, verify, CgroBuildSpec, LabeledPoint,
};

/// Least-squares line through `(x, y)`; returns the largest absolute residual.
fn max_line_residual(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    xs.iter()
        .zip(ys)
        .map(|(x, y)| (y - a - b * x).abs())
        .fold(0.0, f64::max)
}

#[test]
fn square_gadget_meets_tolerance_on_a_dense_grid() {
    for eps in [0.1, 1e-2, 1e-3, 1e-4, 1e-6] {
        let g = square_gadget(eps).unwrap();
        let n = 20_000;
        let worst = (0..=n)
            .map(|i| {
                let x = i as f64 / n as f64;
                (g.forward(&[x]).unwrap() - x * x).abs()
            })
            .fold(0.0, f64::max);
        assert!(worst <= eps, "eps {eps}: {worst}");
    }
}

#[test]
fn square_gadget_size_grows_linearly_in_log_precision() {
    let logs: Vec<f64> = (1..=12).map(|k| 2.0 * k as f64).collect();
    let sizes: Vec<f64> = logs
        .iter()
        .map(|l| square_gadget(2f64.powf(-l)).unwrap().param_count() as f64)
        .collect();
    assert!(max_line_residual(&logs, &sizes) < 1.0);
    assert!(sizes.windows(2).all(|s| s[1] > s[0]));
}

#[test]
fn product_gadget_meets_tolerance_on_a_dense_grid() {
    let (eps, b) = (1e-3, 2.0);
    let p = product_gadget(eps, b).unwrap();
    let n = 200;
    let mut worst: f64 = 0.0;
    for i in 0..=n {
        for j in 0..=n {
            let (x, y) = (b * i as f64 / n as f64, b * j as f64 / n as f64);
            let v = p.forward(&[x, y]).unwrap();
            worst = worst.max((v - x * y).abs());
            if i == 0 || j == 0 {
                // polarization cancels only up to rounding on the axes
                assert!(v.abs() <= 1e-12, "({x}, {y}): {v}");
            }
        }
    }
    assert!(worst <= eps, "{worst}");
    assert_eq!(p.forward(&[0.0, 0.0]).unwrap(), 0.0);
}

#[test]
fn sqdist_gadget_meets_tolerance_on_a_dense_grid() {
    let eps = 1e-3;
    for x0 in [[0.3, 0.7], [0.0, 1.0], [0.5, 0.5]] {
        let g = sqdist_gadget(&x0, eps).unwrap();
        let n = 200;
        let mut worst: f64 = 0.0;
        for i in 0..=n {
            for j in 0..=n {
                let x = [i as f64 / n as f64, j as f64 / n as f64];
                let exact = (x[0] - x0[0]).powi(2) + (x[1] - x0[1]).powi(2);
                let v = g.forward(&x).unwrap();
                // the gadget interpolates a convex function from above
                assert!(v >= exact - 1e-15);
                worst = worst.max(v - exact);
            }
        }
        assert!(worst <= eps, "{x0:?}: {worst}");
        assert_eq!(g.forward(&x0).unwrap(), 0.0);
    }
}

#[test]
fn soft_indicator_is_a_clamped_ramp() {
    let s = soft_indicator(0.04, 0.05).unwrap();
    for k in 0..=1000 {
        let x = -0.1 + 0.2 * k as f64 / 1000.0;
        let expected = ((0.05 - x) / 0.01).clamp(0.0, 1.0);
        assert!((s.forward(&[x]).unwrap() - expected).abs() <= 1e-12);
    }
}

fn spec(dim: usize) -> CgroBuildSpec {
    CgroBuildSpec {
        delta: 0.2,
        eps_sq: 1e-3,
        eps_prod: 1e-3,
        ramp_width: 0.01,
        clip_bound: Some(2.0),
        clean_net: halfspace_clean_net(dim, dim).unwrap(),
    }
}

#[test]
fn memorization_network_size_is_linear_in_the_training_set() {
    let dim = 6;
    let s = spec(dim);
    let counts = [10usize, 20, 40];
    let sizes: Vec<f64> = counts
        .iter()
        .map(|&n| {
            let pts = separated_task(&s.clean_net, n, 0.5, 3).unwrap();
            build_cgro_net(&s, &pts).unwrap().param_count() as f64
        })
        .collect();
    let ns: Vec<f64> = counts.iter().map(|&n| n as f64).collect();
    assert!(max_line_residual(&ns, &sizes) < 1.0, "{sizes:?}");
}

#[test]
fn memorization_network_agrees_with_reference_classifier() {
    let dim = 4;
    // a thin ramp keeps the shell where h and f_S may disagree small
    let s = CgroBuildSpec {
        ramp_width: 0.002,
        ..spec(dim)
    };
    let mut pts = separated_task(&s.clean_net, 8, 0.5, 7).unwrap();
    // flip half the labels so memorization is visible
    for p in pts.iter_mut().step_by(2) {
        p.y = -p.y;
    }
    let net = build_cgro_net(&s, &pts).unwrap();
    let report = verify(&net, &s, &pts, 2000, 50, 7).unwrap();
    assert!(report.sign_agreement >= 0.99, "{report:?}");
    assert_eq!(report.robust_train_error, 0.0);
    assert_eq!(report.param_count, net.param_count());
    let clean = |x: &[f64]| s.clean_net.forward(x).unwrap();
    for p in &pts {
        assert_eq!(eval_f_s(&p.x, clean, &pts, s.delta), p.y);
        assert!(net.forward(&p.x).unwrap() * p.y > 0.0);
    }
    let empty: Vec<LabeledPoint> = Vec::new();
    let bare = build_cgro_net(&s, &empty).unwrap();
    assert_eq!(
        bare.forward(&[0.9, 0.9, 0.9, 0.9]).unwrap(),
        clean(&[0.9, 0.9, 0.9, 0.9])
    );
}
