//! Small dense vector helpers and norm conventions shared by the modules.

use serde::{Deserialize, Serialize};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a * x`
#[inline]
pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Vector norms used for perturbation balls and gradient magnitudes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    #[serde(rename = "1")]
    L1,
    #[serde(rename = "2")]
    L2,
    #[serde(rename = "inf")]
    LInf,
}

impl Norm {
    pub fn of(self, a: &[f64]) -> f64 {
        match self {
            Norm::L1 => a.iter().map(|x| x.abs()).sum(),
            Norm::L2 => norm2(a),
            Norm::LInf => a.iter().fold(0.0_f64, |m, x| m.max(x.abs())),
        }
    }

    /// Hölder conjugate: 1/p + 1/q = 1.
    pub fn dual(self) -> Norm {
        match self {
            Norm::L1 => Norm::LInf,
            Norm::L2 => Norm::L2,
            Norm::LInf => Norm::L1,
        }
    }

    /// A (sub)gradient of `x -> self.of(x)` with ties at kinks sent to zero.
    pub fn subgradient(self, a: &[f64]) -> Vec<f64> {
        match self {
            Norm::L1 => a
                .iter()
                .map(|&x| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                })
                .collect(),
            Norm::L2 => {
                let n = norm2(a);
                if n == 0.0 {
                    vec![0.0; a.len()]
                } else {
                    a.iter().map(|x| x / n).collect()
                }
            }
            Norm::LInf => {
                let mut g = vec![0.0; a.len()];
                let mut best = 0.0;
                let mut arg = None;
                for (i, x) in a.iter().enumerate() {
                    if x.abs() > best {
                        best = x.abs();
                        arg = Some(i);
                    }
                }
                if let Some(i) = arg {
                    g[i] = a[i].signum();
                }
                g
            }
        }
    }

    /// Euclidean projection of `xi` onto the ball of radius `radius`.
    pub fn project(self, xi: &mut [f64], radius: f64) {
        match self {
            Norm::L2 => {
                let n = norm2(xi);
                if n > radius {
                    let s = if n > 0.0 { radius / n } else { 0.0 };
                    xi.iter_mut().for_each(|x| *x *= s);
                }
            }
            Norm::LInf => xi.iter_mut().for_each(|x| *x = x.clamp(-radius, radius)),
            Norm::L1 => unimplemented!("l1 balls are not used as perturbation sets"),
        }
    }

    /// Steepest-ascent direction under this norm for gradient `g`.
    pub fn ascent_direction(self, g: &[f64]) -> Vec<f64> {
        match self {
            Norm::L2 => {
                let n = norm2(g);
                if n == 0.0 {
                    vec![0.0; g.len()]
                } else {
                    g.iter().map(|x| x / n).collect()
                }
            }
            Norm::LInf => g
                .iter()
                .map(|&x| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                })
                .collect(),
            Norm::L1 => unimplemented!("l1 balls are not used as perturbation sets"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duals_pair_up() {
        assert_eq!(Norm::L2.dual(), Norm::L2);
        assert_eq!(Norm::LInf.dual(), Norm::L1);
        assert_eq!(Norm::L1.dual(), Norm::LInf);
    }

    #[test]
    fn projections_land_in_ball() {
        let mut v = vec![3.0, 4.0];
        Norm::L2.project(&mut v, 1.0);
        assert!((norm2(&v) - 1.0).abs() < 1e-15);
        let mut w = vec![3.0, -0.5, -4.0];
        Norm::LInf.project(&mut w, 1.0);
        assert_eq!(w, vec![1.0, -0.5, -1.0]);
    }
}
