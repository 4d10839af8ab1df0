use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// How a single coordinate is reduced to its canonical range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "wrap", rename_all = "snake_case")]
pub enum WrapRule {
    Unbounded,
    Periodic { period: f64 },
}

impl WrapRule {
    pub fn reduce(self, x: f64) -> f64 {
        match self {
            WrapRule::Unbounded => x,
            WrapRule::Periodic { period } => {
                let r = x.rem_euclid(period);
                // rem_euclid of a tiny negative value can round up to `period`.
                if r >= period {
                    0.0
                } else {
                    r
                }
            }
        }
    }

    /// Signed difference `a - b` taken over the nearest wrap.
    pub fn diff(self, a: f64, b: f64) -> f64 {
        match self {
            WrapRule::Unbounded => a - b,
            WrapRule::Periodic { period } => {
                let d = (a - b).rem_euclid(period);
                if d > 0.5 * period {
                    d - period
                } else {
                    d
                }
            }
        }
    }
}

/// Coordinates for a state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Chart {
    Euclidean {
        dim: usize,
    },
    /// Angles reduced to `[0, period)`.
    TorusAngles {
        dim: usize,
        period: f64,
    },
    /// `(r, theta)` with `r > 0` and `theta` in `[0, 2 pi)`.
    PolarAnnulus,
    Product {
        factors: Vec<Chart>,
    },
}

impl Chart {
    pub fn euclidean(dim: usize) -> Self {
        Chart::Euclidean { dim }
    }

    pub fn unit_torus(dim: usize) -> Self {
        Chart::TorusAngles { dim, period: 1.0 }
    }

    pub fn dim(&self) -> usize {
        match self {
            Chart::Euclidean { dim } | Chart::TorusAngles { dim, .. } => *dim,
            Chart::PolarAnnulus => 2,
            Chart::Product { factors } => factors.iter().map(Chart::dim).sum(),
        }
    }

    pub fn wrap_rules(&self) -> Vec<WrapRule> {
        match self {
            Chart::Euclidean { dim } => vec![WrapRule::Unbounded; *dim],
            Chart::TorusAngles { dim, period } => vec![WrapRule::Periodic { period: *period }; *dim],
            Chart::PolarAnnulus => vec![WrapRule::Unbounded, WrapRule::Periodic { period: TAU }],
            Chart::Product { factors } => factors.iter().flat_map(Chart::wrap_rules).collect(),
        }
    }

    pub fn canonicalize(&self, x: &[f64]) -> Vec<f64> {
        self.wrap_rules().iter().zip(x).map(|(w, &v)| w.reduce(v)).collect()
    }

    /// Min-over-wraps per periodic coordinate, Euclidean elsewhere, combined
    /// by root-sum-square.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.wrap_rules()
            .iter()
            .zip(a.iter().zip(b))
            .fold(0.0f64, |acc, (w, (&x, &y))| acc.hypot(w.diff(x, y)))
    }

    /// Lift `target` so that it lies within half a period of `reference` in
    /// every periodic coordinate.
    pub fn lift_near(&self, target: &[f64], reference: &[f64]) -> Vec<f64> {
        self.wrap_rules()
            .iter()
            .zip(target.iter().zip(reference))
            .map(|(w, (&t, &r))| r + w.diff(t, r))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        if x.len() != self.dim() || x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self {
            Chart::PolarAnnulus => x[0] > 0.0,
            Chart::Product { factors } => {
                let mut off = 0;
                factors.iter().all(|f| {
                    let d = f.dim();
                    let ok = f.contains(&x[off..off + d]);
                    off += d;
                    ok
                })
            }
            _ => true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduction_stays_in_fundamental_domain() {
        let w = WrapRule::Periodic { period: 1.0 };
        assert_eq!(w.reduce(-1e-18), 0.0);
        assert_eq!(w.reduce(1.0), 0.0);
        assert!((w.reduce(-0.25) - 0.75).abs() < 1e-15);
        let w = WrapRule::Periodic { period: TAU };
        let r = w.reduce(6.0 + TAU * 3.0);
        assert!((0.0..TAU).contains(&r));
    }

    #[test]
    fn torus_distance_takes_shortest_wrap() {
        let c = Chart::unit_torus(2);
        let d = c.distance(&[0.95, 0.0], &[0.05, 0.0]);
        assert!((d - 0.1).abs() < 1e-12);
        let p = Chart::Product {
            factors: vec![Chart::unit_torus(1), Chart::euclidean(1)],
        };
        assert_eq!(p.dim(), 2);
        let d = p.distance(&[0.9, 3.0], &[0.2, 7.0]);
        assert!((d - (0.09f64 + 16.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn lift_follows_reference() {
        let c = Chart::PolarAnnulus;
        let lifted = c.lift_near(&[1.0, 0.1], &[1.2, 4.0 * TAU - 0.05]);
        assert!((lifted[1] - (4.0 * TAU + 0.1)).abs() < 1e-12);
        assert_eq!(lifted[0], 1.0);
    }

    #[test]
    fn annulus_membership() {
        assert!(Chart::PolarAnnulus.contains(&[0.5, 1.0]));
        assert!(!Chart::PolarAnnulus.contains(&[0.0, 1.0]));
        assert!(!Chart::PolarAnnulus.contains(&[1.0]));
    }
}
