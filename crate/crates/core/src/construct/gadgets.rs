//! ReLU gadgets for squares, products, squared distances and ramps.
//!
//! The square gadget follows Yarotsky: with the hat map `g(x) = 2x` on
//! `[0, 1/2]` and `2(1 - x)` on `[1/2, 1]`, and `g_k` its `k`-fold
//! composition, `x - sum_{k<=s} g_k(x) / 4^k` interpolates `x^2` linearly on
//! the grid of step `2^-s`, with sup error `2^{-2s-2}`.

use super::net::{Layer, ReluNet};
use crate::error::{LabError, Result};

/// Number of sawtooth stages used for tolerance `eps`: `ceil(log2(1/eps) / 2)`, at least 1.
pub fn square_stages(eps: f64) -> usize {
    ((0.5 * (1.0 / eps).log2()).ceil() as usize).max(1)
}

fn check_tolerance(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(LabError::config(
            "eps",
            format!("tolerance must lie in (0, 1), got {eps}"),
        ));
    }
    Ok(())
}

/// Approximates `x^2` on `[0, 1]` within `eps`, exact at 0 and 1.
pub fn square_gadget(eps: f64) -> Result<ReluNet> {
    check_tolerance(eps)?;
    let s = square_stages(eps);
    // stage 1 units: a = relu(x), b = relu(x - 1/2)
    let mut layers = vec![Layer::new(
        1,
        2,
        vec![(0, 0, 1.0), (1, 0, 1.0)],
        vec![0.0, -0.5],
    )?];
    // (column weights of acc, column weights of g) over the previous units
    let mut acc: Vec<(usize, f64)> = vec![(0, 0.5), (1, 1.0)];
    let mut g: Vec<(usize, f64)> = vec![(0, 2.0), (1, -4.0)];
    let mut width = 2;
    for k in 2..=s {
        // units: c = relu(acc_{k-1}), a = relu(g_{k-1}), b = relu(g_{k-1} - 1/2)
        let mut entries = Vec::new();
        entries.extend(acc.iter().map(|&(c, v)| (0, c, v)));
        entries.extend(g.iter().map(|&(c, v)| (1, c, v)));
        entries.extend(g.iter().map(|&(c, v)| (2, c, v)));
        layers.push(Layer::new(width, 3, entries, vec![0.0, 0.0, -0.5])?);
        let scale = 0.25_f64.powi(k as i32);
        acc = vec![(0, 1.0), (1, -2.0 * scale), (2, 4.0 * scale)];
        g = vec![(1, 2.0), (2, -4.0)];
        width = 3;
    }
    layers.push(Layer::new(
        width,
        1,
        acc.iter().map(|&(c, v)| (0, c, v)).collect(),
        vec![0.0],
    )?);
    ReluNet::new(1, layers)
}

/// Approximates `xy` on `[0, b]^2` within `eps` through
/// `xy = 2 b^2 [((x + y) / 2b)^2 - (x / 2b)^2 - (y / 2b)^2]`.
pub fn product_gadget(eps: f64, b: f64) -> Result<ReluNet> {
    check_tolerance(eps)?;
    if !(b >= 1.0 && b.is_finite()) {
        return Err(LabError::config(
            "B",
            format!("bound must be >= 1, got {b}"),
        ));
    }
    let sq = square_gadget(eps / (6.0 * b * b))?;
    let h = 1.0 / (2.0 * b);
    let pre = ReluNet::affine(
        2,
        3,
        vec![(0, 0, h), (0, 1, h), (1, 0, h), (2, 1, h)],
        vec![0.0; 3],
    )?;
    let c = 2.0 * b * b;
    let post = ReluNet::affine(3, 1, vec![(0, 0, c), (0, 1, -c), (0, 2, -c)], vec![0.0])?;
    pre.then(&ReluNet::stack(&[sq.clone(), sq.clone(), sq])?)?
        .then(&post)
}

/// Approximates `|x - x0|_2^2` on `[0, 1]^D` within `eps`, one square gadget
/// of tolerance `eps / D` per coordinate fed with `|t| = relu(t) + relu(-t)`.
pub fn sqdist_gadget(x0: &[f64], eps: f64) -> Result<ReluNet> {
    check_tolerance(eps)?;
    if x0.is_empty() || x0.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(LabError::config(
            "x0",
            "center must be a non-empty point of [0, 1]^D",
        ));
    }
    let dim = x0.len();
    let sq = square_gadget(eps / dim as f64)?;
    let coords = x0
        .iter()
        .map(|&c| {
            let abs = ReluNet::new(
                1,
                vec![
                    Layer::new(1, 2, vec![(0, 0, 1.0), (1, 0, -1.0)], vec![-c, c])?,
                    Layer::new(2, 1, vec![(0, 0, 1.0), (0, 1, 1.0)], vec![0.0])?,
                ],
            )?;
            abs.then(&sq)
        })
        .collect::<Result<Vec<_>>>()?;
    let sum = ReluNet::affine(dim, 1, (0..dim).map(|k| (0, k, 1.0)).collect(), vec![0.0])?;
    ReluNet::stack(&coords)?.then(&sum)
}

/// Ramp equal to 1 on `(-inf, lo]`, 0 on `[hi, inf)` and linear in between,
/// built from two rectifier units.
pub fn soft_indicator(lo: f64, hi: f64) -> Result<ReluNet> {
    if !(lo < hi && lo.is_finite() && hi.is_finite()) {
        return Err(LabError::config(
            "ramp",
            format!("need lo < hi, got [{lo}, {hi}]"),
        ));
    }
    let k = 1.0 / (hi - lo);
    ReluNet::new(
        1,
        vec![
            // k relu(hi - x) - k relu(lo - x) vanishes exactly on [hi, inf)
            Layer::new(1, 2, vec![(0, 0, -1.0), (1, 0, -1.0)], vec![hi, lo])?,
            Layer::new(2, 1, vec![(0, 0, k), (0, 1, -k)], vec![0.0])?,
        ],
    )
}
