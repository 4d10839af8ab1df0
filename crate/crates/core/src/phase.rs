//! Asymptotic phase: a numerical estimator, a convergence/divergence
//! classifier, and property checks for candidate phase maps.
//!
//! The estimator at horizon `T` flows forward by `T`, projects onto the
//! attractor, and flows back by `T` inside the attractor. All of this is done
//! on lifted coordinates so that angular drift is measured without wrapping.

use crate::flows::{FlowError, FlowSystem, FrameFn};
use crate::{euclid_dist, StateFn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhaseError {
    #[error("attractor sample cloud is empty")]
    EmptyAttractor,
    #[error("attractor sample cloud has {0} points; at least {MIN_CLOUD} are required")]
    CloudTooSmall(usize),
    #[error("invalid horizon schedule: {0}")]
    InvalidSchedule(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

pub const MIN_CLOUD: usize = 200;

/// Sampled compact attractor with its restricted (invertible) flow.
#[derive(Clone)]
pub struct AttractorModel {
    cloud: Vec<Vec<f64>>,
    projector: Option<StateFn>,
    restricted_flow: FlowSystem,
    tangent_frame: Option<FrameFn>,
    resolution: f64,
}

impl std::fmt::Debug for AttractorModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AttractorModel")
            .field("cloud_len", &self.cloud.len())
            .field("exact_projector", &self.projector.is_some())
            .field("resolution", &self.resolution)
            .finish()
    }
}

impl AttractorModel {
    pub fn new(cloud: Vec<Vec<f64>>, restricted_flow: FlowSystem) -> Result<Self, PhaseError> {
        if cloud.is_empty() {
            return Err(PhaseError::EmptyAttractor);
        }
        if cloud.len() < MIN_CLOUD {
            return Err(PhaseError::CloudTooSmall(cloud.len()));
        }
        let cloud: Vec<Vec<f64>> = cloud.iter().map(|p| restricted_flow.canonicalize(p)).collect();
        let resolution = median_spacing(&cloud, &restricted_flow);
        Ok(Self {
            cloud,
            projector: None,
            restricted_flow,
            tangent_frame: None,
            resolution,
        })
    }

    /// Exact nearest-point map, used instead of the cloud search.
    pub fn with_projector(mut self, projector: StateFn) -> Self {
        self.projector = Some(projector);
        self
    }

    pub fn with_tangent_frame(mut self, frame: FrameFn) -> Self {
        self.tangent_frame = Some(frame);
        self
    }

    pub fn cloud(&self) -> &[Vec<f64>] {
        &self.cloud
    }

    pub fn restricted_flow(&self) -> &FlowSystem {
        &self.restricted_flow
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn has_exact_projector(&self) -> bool {
        self.projector.is_some()
    }

    /// Orthonormal basis of `T_a A`; falls back to the normalized flow
    /// direction, which spans `T_a A` only for one-dimensional orbits.
    pub fn tangent_basis(&self, a: &[f64]) -> Vec<Vec<f64>> {
        if let Some(f) = &self.tangent_frame {
            return f(a);
        }
        let eps = 1e-6;
        let (Ok(fw), Ok(bw)) = (
            self.restricted_flow.evolve_lifted(a, eps),
            self.restricted_flow.evolve_lifted(a, -eps),
        ) else {
            return Vec::new();
        };
        let v: Vec<f64> = fw.iter().zip(&bw).map(|(p, q)| (p - q) / (2.0 * eps)).collect();
        let n = crate::euclid_norm(&v);
        if n == 0.0 {
            Vec::new()
        } else {
            vec![v.iter().map(|x| x / n).collect()]
        }
    }

    /// Nearest attractor point in canonical chart coordinates.
    pub fn nearest_point(&self, x: &[f64]) -> Vec<f64> {
        match &self.projector {
            Some(p) => self.restricted_flow.canonicalize(&p(x)),
            None => self.refine_along_flow(x, self.nearest_cloud_point(x)),
        }
    }

    /// Nearest attractor point, lifted to lie next to the (lifted) `x`.
    pub fn nearest_point_lifted(&self, x: &[f64]) -> Vec<f64> {
        let chart = self.restricted_flow.chart();
        chart.lift_near(&self.nearest_point(x), x)
    }

    fn nearest_cloud_point(&self, x: &[f64]) -> Vec<f64> {
        let flow = &self.restricted_flow;
        self.cloud
            .iter()
            .min_by(|a, b| flow.distance(x, a).total_cmp(&flow.distance(x, b)))
            .cloned()
            .expect("cloud is non-empty")
    }

    /// Two rounds of parabolic interpolation of the squared distance along
    /// the restricted flow through the nearest cloud point.
    fn refine_along_flow(&self, x: &[f64], start: Vec<f64>) -> Vec<f64> {
        let flow = &self.restricted_flow;
        let eps = 1e-6;
        let speed = match (flow.evolve(&start, eps), flow.evolve(&start, -eps)) {
            (Ok(a), Ok(b)) => flow.distance(&a, &b) / (2.0 * eps),
            _ => 0.0,
        };
        if speed <= 0.0 || !speed.is_finite() {
            return start;
        }
        let mut best = start;
        let mut best_d = flow.distance(x, &best);
        let mut delta = self.resolution / speed;
        for _ in 0..2 {
            let pts: Vec<Option<Vec<f64>>> = [-delta, 0.0, delta]
                .iter()
                .map(|&s| flow.evolve(&best, s).ok())
                .collect();
            let [Some(pm), Some(p0), Some(pp)] = [pts[0].clone(), pts[1].clone(), pts[2].clone()] else {
                break;
            };
            let (gm, g0, gp) = (
                flow.distance(x, &pm).powi(2),
                flow.distance(x, &p0).powi(2),
                flow.distance(x, &pp).powi(2),
            );
            let curv = gm - 2.0 * g0 + gp;
            let s = if curv > 0.0 {
                (0.5 * delta * (gm - gp) / curv).clamp(-delta, delta)
            } else {
                0.0
            };
            if let Ok(cand) = flow.evolve(&best, s) {
                let d = flow.distance(x, &cand);
                if d < best_d {
                    best_d = d;
                    best = cand;
                }
            }
            delta *= 0.25;
        }
        best
    }
}

fn median_spacing(cloud: &[Vec<f64>], flow: &FlowSystem) -> f64 {
    let mut nn: Vec<f64> = cloud
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            cloud
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| flow.distance(p, q))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    nn.sort_by(f64::total_cmp);
    nn[nn.len() / 2]
}

/// `T_k = t0 * ratio^k` for `k = 0..count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricSchedule {
    pub t0: f64,
    pub ratio: f64,
    pub count: usize,
}

impl GeometricSchedule {
    pub fn new(t0: f64, ratio: f64, count: usize) -> Result<Self, PhaseError> {
        if !(t0 > 0.0 && t0.is_finite()) {
            return Err(PhaseError::InvalidSchedule(format!("T0 must be positive (got {t0})")));
        }
        if !(ratio > 1.0 && ratio.is_finite()) {
            return Err(PhaseError::InvalidSchedule(format!(
                "ratio must exceed 1 (got {ratio})"
            )));
        }
        if count < 2 {
            return Err(PhaseError::InvalidSchedule("at least two horizons are required".into()));
        }
        Ok(Self { t0, ratio, count })
    }

    pub fn horizons(&self) -> Vec<f64> {
        (0..self.count).map(|k| self.t0 * self.ratio.powi(k as i32)).collect()
    }
}

impl std::str::FromStr for GeometricSchedule {
    type Err = PhaseError;

    /// `geometric:T0,ratio,count`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let body = s
            .strip_prefix("geometric:")
            .ok_or_else(|| PhaseError::InvalidSchedule(format!("expected geometric:T0,ratio,count (got {s:?})")))?;
        let parts: Vec<&str> = body.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(PhaseError::InvalidSchedule(format!(
                "expected three fields (got {body:?})"
            )));
        }
        let bad = |p: &str| PhaseError::InvalidSchedule(format!("cannot parse {p:?}"));
        let t0: f64 = parts[0].parse().map_err(|_| bad(parts[0]))?;
        let ratio: f64 = parts[1].parse().map_err(|_| bad(parts[1]))?;
        let count: f64 = parts[2].parse().map_err(|_| bad(parts[2]))?;
        if count.fract() != 0.0 || count < 0.0 {
            return Err(bad(parts[2]));
        }
        Self::new(t0, ratio, count as usize)
    }
}

/// Converged: each of the last three gaps is below this.
pub const CONVERGED_GAP: f64 = 1e-6;
/// Converged: successive gap ratio must stay below this.
pub const CONVERGED_RATIO: f64 = 0.7;
/// Diverged: the last three gaps each exceed this multiple of the first gap.
pub const DIVERGED_FACTOR: f64 = 10.0;
/// Diverged: strictly increasing gaps over at least this many points.
pub const DIVERGED_MONOTONE_POINTS: usize = 4;
/// Gaps below this (relative to `1 + |estimate|`) are rounding noise and
/// exempt from the ratio test.
pub const NOISE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftStats {
    pub first_gap: f64,
    pub last_gap: f64,
    pub gap_growth: f64,
    /// Lifted distance between the first and last estimates.
    pub total_drift: f64,
    /// Log-log slope of cumulative drift against the horizon (about 1/2 for
    /// square-root drift).
    pub drift_exponent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Classification {
    Converged { limit: Vec<f64>, rate: f64 },
    Diverged { drift: DriftStats },
    Inconclusive { reason: String },
}

impl Classification {
    pub fn is_converged(&self) -> bool {
        matches!(self, Classification::Converged { .. })
    }

    pub fn is_diverged(&self) -> bool {
        matches!(self, Classification::Diverged { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseEstimate {
    pub horizons: Vec<f64>,
    /// Canonical attractor points, one per horizon.
    pub estimates: Vec<Vec<f64>>,
    /// Lifted distances between consecutive estimates.
    pub gaps: Vec<f64>,
    pub classification: Classification,
}

/// `P_T(x) = Phi_A^{-T}(pi_A(Phi^T(x)))` over a geometric horizon schedule.
pub fn estimate_phase(
    sys: &FlowSystem,
    attractor: &AttractorModel,
    x: &[f64],
    schedule: &GeometricSchedule,
) -> Result<PhaseEstimate, PhaseError> {
    let horizons = schedule.horizons();
    let restricted = attractor.restricted_flow();
    let mut lifted = Vec::with_capacity(horizons.len());
    let mut state = x.to_vec();
    let mut t_prev = 0.0;
    for &t in &horizons {
        // Forward endpoints are reused: advance from the previous horizon.
        state = sys.evolve_lifted(&state, t - t_prev)?;
        t_prev = t;
        let a = attractor.nearest_point_lifted(&state);
        lifted.push(restricted.evolve_lifted(&a, -t)?);
    }
    let gaps: Vec<f64> = lifted.windows(2).map(|w| euclid_dist(&w[0], &w[1])).collect();
    let classification = classify(&horizons, &lifted, &gaps, restricted);
    Ok(PhaseEstimate {
        horizons,
        estimates: lifted.iter().map(|z| restricted.canonicalize(z)).collect(),
        gaps,
        classification,
    })
}

fn classify(horizons: &[f64], lifted: &[Vec<f64>], gaps: &[f64], restricted: &FlowSystem) -> Classification {
    if gaps.len() < 3 {
        return Classification::Inconclusive {
            reason: "fewer than three gaps".into(),
        };
    }
    let last = lifted.last().expect("non-empty");
    let scale = 1.0 + crate::euclid_norm(last);
    let tail = &gaps[gaps.len() - 3..];
    let below = tail.iter().all(|&g| g < CONVERGED_GAP);
    let ratios_ok = tail
        .windows(2)
        .all(|w| w[1] <= NOISE_FLOOR * scale || w[1] / w[0] < CONVERGED_RATIO);
    if below && ratios_ok {
        let rates: Vec<f64> = tail
            .windows(2)
            .filter(|w| w[1] > NOISE_FLOOR * scale && w[0] > 0.0)
            .map(|w| w[1] / w[0])
            .collect();
        let rate = if rates.is_empty() {
            0.0
        } else {
            rates.iter().product::<f64>().powf(1.0 / rates.len() as f64)
        };
        return Classification::Converged {
            limit: restricted.canonicalize(last),
            rate,
        };
    }

    let first = gaps[0];
    let significant = |g: f64| g > NOISE_FLOOR * scale * 1e3;
    let grows = first > 0.0 && tail.iter().all(|&g| g > DIVERGED_FACTOR * first);
    let monotone = gaps.len() >= DIVERGED_MONOTONE_POINTS && {
        let end = &gaps[gaps.len() - DIVERGED_MONOTONE_POINTS..];
        end.windows(2).all(|w| w[1] > w[0]) && end.iter().all(|&g| significant(g))
    };
    if grows || monotone {
        let drifts: Vec<(f64, f64)> = lifted
            .iter()
            .zip(horizons)
            .skip(1)
            .map(|(z, &t)| (t.ln(), euclid_dist(z, &lifted[0])))
            .filter(|(_, d)| *d > 0.0)
            .map(|(lt, d)| (lt, d.ln()))
            .collect();
        let half = drifts.len() / 2;
        let (xs, ys): (Vec<f64>, Vec<f64>) = drifts[half..].iter().copied().unzip();
        let last_gap = *gaps.last().expect("non-empty");
        return Classification::Diverged {
            drift: DriftStats {
                first_gap: first,
                last_gap,
                gap_growth: if first > 0.0 { last_gap / first } else { f64::INFINITY },
                total_drift: euclid_dist(last, &lifted[0]),
                drift_exponent: crate::stats::slope(&xs, &ys),
            },
        };
    }
    Classification::Inconclusive {
        reason: format!("last gaps {:?} neither settle below {CONVERGED_GAP:e} nor grow", tail),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    /// `max d(P(P(x)), P(x))`.
    pub idempotence_max: f64,
    /// `max d(P(a), a)` over attractor samples.
    pub retraction_max: f64,
    /// `max d(P(Phi^t x), Phi^t(P x))`.
    pub equivariance_max: f64,
    /// Fraction of samples where `d(Phi^t x, Phi^t P x)` eventually decreases.
    pub asymptotic_fraction: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Retraction, equivariance and asymptotic-in-phase checks for a candidate
/// phase map `P`.
pub fn verify_phase_properties(
    sys: &FlowSystem,
    phase: &StateFn,
    samples: &[Vec<f64>],
    attractor_samples: &[Vec<f64>],
    t_grid: &[f64],
    tol: f64,
) -> Result<PhaseReport, PhaseError> {
    let p = |x: &[f64]| sys.canonicalize(&phase(x));
    let retraction_max = attractor_samples
        .iter()
        .map(|a| sys.distance(&p(a), a))
        .fold(0.0, f64::max);

    let mut grid: Vec<f64> = t_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let per_sample: Vec<Result<(f64, f64, bool), FlowError>> = samples
        .par_iter()
        .map(|x| {
            let px = p(x);
            let idem = sys.distance(&p(&px), &px);
            let mut equiv: f64 = 0.0;
            let mut dists = Vec::with_capacity(grid.len());
            for &t in &grid {
                let xt = sys.evolve(x, t)?;
                let pxt = sys.evolve(&px, t)?;
                equiv = equiv.max(sys.distance(&p(&xt), &pxt));
                dists.push(sys.distance(&xt, &pxt));
            }
            let half = &dists[dists.len() / 2..];
            let decreasing = half.windows(2).all(|w| w[1] <= w[0] + 1e-12);
            let small = half.iter().all(|&d| d <= tol);
            Ok((idem, equiv, decreasing || small))
        })
        .collect();
    let mut idempotence_max: f64 = 0.0;
    let mut equivariance_max: f64 = 0.0;
    let mut ok = 0usize;
    for r in per_sample {
        let (i, e, a) = r?;
        idempotence_max = idempotence_max.max(i);
        equivariance_max = equivariance_max.max(e);
        ok += usize::from(a);
    }
    let asymptotic_fraction = if samples.is_empty() {
        1.0
    } else {
        ok as f64 / samples.len() as f64
    };
    let pass = idempotence_max <= tol && retraction_max <= tol && equivariance_max <= tol && asymptotic_fraction == 1.0;
    Ok(PhaseReport {
        idempotence_max,
        retraction_max,
        equivariance_max,
        asymptotic_fraction,
        tol,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::Chart;
    use std::f64::consts::TAU;

    fn circle_flow() -> FlowSystem {
        FlowSystem::closed_form("circle", Chart::PolarAnnulus, |t, x| vec![x[0], x[1] + t])
    }

    fn circle_cloud(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|k| vec![1.0, TAU * k as f64 / n as f64]).collect()
    }

    fn log_radial() -> FlowSystem {
        FlowSystem::closed_form("log_radial", Chart::PolarAnnulus, |t, x| {
            let v0 = x[0].ln();
            let d = (-t).exp();
            vec![(v0 * d).exp(), x[1] + t + v0 * (1.0 - d)]
        })
    }

    #[test]
    fn cloud_size_is_enforced() {
        assert_eq!(
            AttractorModel::new(vec![], circle_flow()).unwrap_err(),
            PhaseError::EmptyAttractor
        );
        assert_eq!(
            AttractorModel::new(circle_cloud(10), circle_flow()).unwrap_err(),
            PhaseError::CloudTooSmall(10)
        );
    }

    #[test]
    fn cloud_projection_refines_below_resolution() {
        let a = AttractorModel::new(circle_cloud(200), circle_flow()).unwrap();
        assert!((a.resolution() - TAU / 200.0).abs() < 1e-12);
        let p = a.nearest_point(&[1.7, 2.345]);
        assert!((p[1] - 2.345).abs() < 1e-9, "{p:?}");
        assert_eq!(p[0], 1.0);
        // Cloud points are fixed.
        for c in a.cloud().iter().take(20) {
            assert!(circle_flow().distance(&a.nearest_point(c), c) < 1e-12);
        }
    }

    #[test]
    fn schedule_parsing() {
        let s: GeometricSchedule = "geometric:1,2,8".parse().unwrap();
        assert_eq!(s.horizons(), vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0]);
        assert!("geometric:1,1,8".parse::<GeometricSchedule>().is_err());
        assert!("arithmetic:1,2,8".parse::<GeometricSchedule>().is_err());
        assert!("geometric:1e0,2e0,3".parse::<GeometricSchedule>().is_ok());
    }

    #[test]
    fn log_radial_phase_converges_to_closed_form() {
        let a = AttractorModel::new(circle_cloud(256), circle_flow()).unwrap();
        let x = [1f64.exp(), 0.0];
        let est = estimate_phase(&log_radial(), &a, &x, &GeometricSchedule::new(1.0, 2.0, 8).unwrap()).unwrap();
        for (t, e) in est.horizons.iter().zip(&est.estimates) {
            let err = Chart::PolarAnnulus.distance(e, &[1.0, 1.0]);
            assert!(err <= (3.0 * (-t).exp()).max(1e-12), "T = {t}: err {err:e}");
        }
        assert!(est.classification.is_converged(), "{:?}", est.classification);
    }

    #[test]
    fn points_on_the_attractor_are_fixed() {
        let a = AttractorModel::new(circle_cloud(256), circle_flow()).unwrap();
        let x = [1.0, 0.75];
        let est = estimate_phase(&log_radial(), &a, &x, &GeometricSchedule::new(1.0, 2.0, 6).unwrap()).unwrap();
        for e in &est.estimates {
            assert!(Chart::PolarAnnulus.distance(e, &x) < 1e-12);
        }
    }

    #[test]
    fn exact_log_radial_phase_passes_property_checks() {
        let sys = log_radial();
        let p: StateFn = std::sync::Arc::new(|x: &[f64]| vec![1.0, x[1] + x[0].ln()]);
        let samples: Vec<Vec<f64>> = (0..20)
            .map(|k| vec![(k as f64 * 0.2 - 2.0).exp(), 0.3 * k as f64])
            .collect();
        let rep =
            verify_phase_properties(&sys, &p, &samples, &circle_cloud(50), &[0.0, 0.5, 1.0, 2.0, 4.0], 1e-9).unwrap();
        assert!(rep.pass, "{rep:?}");

        // A wrong phase (nearest point) fails equivariance.
        let wrong: StateFn = std::sync::Arc::new(|x: &[f64]| vec![1.0, x[1]]);
        let rep = verify_phase_properties(&sys, &wrong, &samples, &circle_cloud(50), &[0.0, 1.0, 2.0], 1e-9).unwrap();
        assert!(!rep.pass);
    }
}
