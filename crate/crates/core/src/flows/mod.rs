//! Uniform flow abstraction over closed-form flow maps and vector fields.

mod chart;
mod integrate;

pub use chart::{Chart, WrapRule};
pub use integrate::IntegratorSettings;

use crate::{Rng, StateFn};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("time {t} is outside the domain of the flow at this state (requires t > {t_min})")]
    TimeOutOfDomain { t: f64, t_min: f64 },
    #[error("integration failure: {0}")]
    IntegrationFailure(String),
    #[error("state has dimension {got}, chart expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("state is not a point of the chart: {0:?}")]
    NotInChart(Vec<f64>),
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("system {0} has no vector field")]
    MissingField(String),
}

/// `(t, x) -> Phi^t(x)`, returning lifted (unwrapped) angles when `x` is lifted.
pub type FlowMapFn = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;
/// Per-state exclusive lower bound on admissible times.
pub type TimeBoundFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Orthonormal tangent basis (chart coordinates) at a state.
pub type FrameFn = Arc<dyn Fn(&[f64]) -> Vec<Vec<f64>> + Send + Sync>;

#[derive(Clone)]
pub enum Evaluator {
    ClosedForm(FlowMapFn),
    VectorField(IntegratorSettings),
}

/// An order-two identification of chart points (`x ~ sigma(x)`), with a
/// map to a canonical representative of each class.
#[derive(Clone)]
pub struct Quotient {
    pub involution: StateFn,
    pub representative: StateFn,
}

#[derive(Clone)]
pub struct FlowSystem {
    name: String,
    chart: Chart,
    evaluator: Evaluator,
    field: Option<StateFn>,
    t_min: Option<TimeBoundFn>,
    quotient: Option<Quotient>,
    tangent_frame: Option<FrameFn>,
}

impl std::fmt::Debug for FlowSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlowSystem")
            .field("name", &self.name)
            .field("chart", &self.chart)
            .field("closed_form", &self.is_closed_form())
            .finish()
    }
}

impl FlowSystem {
    pub fn closed_form<F>(name: impl Into<String>, chart: Chart, map: F) -> Self
    where
        F: Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            chart,
            evaluator: Evaluator::ClosedForm(Arc::new(map)),
            field: None,
            t_min: None,
            quotient: None,
            tangent_frame: None,
        }
    }

    pub fn vector_field<F>(name: impl Into<String>, chart: Chart, field: F, settings: IntegratorSettings) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            chart,
            evaluator: Evaluator::VectorField(settings),
            field: Some(Arc::new(field)),
            t_min: None,
            quotient: None,
            tangent_frame: None,
        }
    }

    pub fn with_field<F>(mut self, field: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.field = Some(Arc::new(field));
        self
    }

    pub fn with_time_bound<F>(mut self, t_min: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        self.t_min = Some(Arc::new(t_min));
        self
    }

    pub fn with_quotient(mut self, quotient: Quotient) -> Self {
        self.quotient = Some(quotient);
        self
    }

    pub fn with_tangent_frame(mut self, frame: FrameFn) -> Self {
        self.tangent_frame = Some(frame);
        self
    }

    /// Same system, evaluated by integrating its vector field.
    pub fn integrated(&self, settings: IntegratorSettings) -> Result<Self, FlowError> {
        if self.field.is_none() {
            return Err(FlowError::MissingField(self.name.clone()));
        }
        let mut s = self.clone();
        s.evaluator = Evaluator::VectorField(settings);
        Ok(s)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    pub fn is_closed_form(&self) -> bool {
        matches!(self.evaluator, Evaluator::ClosedForm(_))
    }

    pub fn field(&self) -> Option<&StateFn> {
        self.field.as_ref()
    }

    pub fn quotient(&self) -> Option<&Quotient> {
        self.quotient.as_ref()
    }

    /// Exclusive lower time bound at `x` (`-inf` for backward-complete states).
    pub fn t_min(&self, x: &[f64]) -> f64 {
        self.t_min.as_ref().map_or(f64::NEG_INFINITY, |f| f(x))
    }

    pub fn tangent_frame(&self, x: &[f64]) -> Vec<Vec<f64>> {
        match &self.tangent_frame {
            Some(f) => f(x),
            None => (0..self.dim())
                .map(|i| {
                    let mut e = vec![0.0; self.dim()];
                    e[i] = 1.0;
                    e
                })
                .collect(),
        }
    }

    pub fn canonicalize(&self, x: &[f64]) -> Vec<f64> {
        let c = self.chart.canonicalize(x);
        match &self.quotient {
            Some(q) => (q.representative)(&c),
            None => c,
        }
    }

    /// Chart distance, minimized over the identification when present.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let d = self.chart.distance(a, b);
        match &self.quotient {
            Some(q) => d.min(self.chart.distance(a, &(q.involution)(b))),
            None => d,
        }
    }

    fn check_state(&self, x: &[f64]) -> Result<(), FlowError> {
        if x.len() != self.dim() {
            return Err(FlowError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if !self.chart.contains(x) {
            return Err(FlowError::NotInChart(x.to_vec()));
        }
        Ok(())
    }

    fn check_time(&self, x: &[f64], t: f64) -> Result<(), FlowError> {
        if !t.is_finite() {
            return Err(FlowError::InvalidGrid(format!("non-finite time {t}")));
        }
        let t_min = self.t_min(x);
        if t < 0.0 && t <= t_min {
            return Err(FlowError::TimeOutOfDomain { t, t_min });
        }
        Ok(())
    }

    /// `Phi^t(x)` without reducing angles: periodic coordinates continue
    /// from the lift given in `x`. Quotients are not applied.
    pub fn evolve_lifted(&self, x: &[f64], t: f64) -> Result<Vec<f64>, FlowError> {
        self.check_state(x)?;
        self.check_time(x, t)?;
        if t == 0.0 {
            return Ok(x.to_vec());
        }
        match &self.evaluator {
            Evaluator::ClosedForm(map) => Ok(map(t, x)),
            Evaluator::VectorField(settings) => {
                let field = self
                    .field
                    .as_ref()
                    .ok_or_else(|| FlowError::MissingField(self.name.clone()))?;
                let mut out = integrate::integrate_to(field.as_ref(), &self.chart.wrap_rules(), x, &[t], settings)?;
                Ok(out.pop().expect("one target"))
            }
        }
    }

    /// `Phi^t(x)` in canonical chart coordinates.
    pub fn evolve(&self, x: &[f64], t: f64) -> Result<Vec<f64>, FlowError> {
        if t == 0.0 {
            self.check_state(x)?;
            return Ok(self.canonicalize(x));
        }
        Ok(self.canonicalize(&self.evolve_lifted(x, t)?))
    }

    /// Evaluate the flow on a time grid. Vector-field systems use one
    /// integration pass per direction, stopping exactly at each grid time.
    pub fn sample_trajectory(&self, x: &[f64], grid: &[f64]) -> Result<Trajectory, FlowError> {
        self.check_state(x)?;
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FlowError::InvalidGrid("grid times must be strictly increasing".into()));
        }
        for &t in grid {
            self.check_time(x, t)?;
        }
        let states = match &self.evaluator {
            Evaluator::ClosedForm(_) => grid.iter().map(|&t| self.evolve(x, t)).collect::<Result<Vec<_>, _>>()?,
            Evaluator::VectorField(settings) => {
                let field = self
                    .field
                    .as_ref()
                    .ok_or_else(|| FlowError::MissingField(self.name.clone()))?;
                let rules = self.chart.wrap_rules();
                let split = grid.partition_point(|&t| t < 0.0);
                let backward: Vec<f64> = grid[..split].iter().rev().copied().collect();
                let mut back = integrate::integrate_to(field.as_ref(), &rules, x, &backward, settings)?;
                back.reverse();
                let forward = integrate::integrate_to(field.as_ref(), &rules, x, &grid[split..], settings)?;
                back.into_iter().chain(forward).map(|s| self.canonicalize(&s)).collect()
            }
        };
        Ok(Trajectory {
            times: grid.to_vec(),
            states,
        })
    }

    /// Compare `Phi^t(Phi^s(x))` with `Phi^{s+t}(x)` on each sample.
    pub fn check_group_law(&self, samples: &[GroupLawSample], tol: f64) -> GroupLawReport {
        let outcomes: Vec<Result<f64, FlowError>> = samples
            .par_iter()
            .map(|smp| {
                let once = self.evolve(&self.evolve(&smp.x, smp.s)?, smp.t)?;
                let direct = self.evolve(&smp.x, smp.s + smp.t)?;
                Ok(self.distance(&once, &direct))
            })
            .collect();
        let mut report = GroupLawReport {
            tol,
            n_samples: samples.len(),
            max_violation: 0.0,
            worst_sample: None,
            failures: Vec::new(),
            pass: true,
        };
        for (i, o) in outcomes.into_iter().enumerate() {
            match o {
                Ok(d) => {
                    if report.worst_sample.is_none() || d > report.max_violation {
                        report.max_violation = d;
                        report.worst_sample = Some(i);
                    }
                }
                Err(e) => report.failures.push(SampleFailure {
                    index: i,
                    error: e.to_string(),
                }),
            }
        }
        report.pass = report.failures.is_empty() && report.max_violation <= tol;
        report
    }

    /// Random `(x, s, t)` triples with `s, t` drawn from `[t_lo, t_hi]`,
    /// raised where needed so that `s`, `t` and `s + t` stay in the domain.
    pub fn random_group_samples(
        &self,
        sampler: &dyn Fn(&mut Rng) -> Vec<f64>,
        n: usize,
        (t_lo, t_hi): (f64, f64),
        rng: &mut Rng,
    ) -> Vec<GroupLawSample> {
        (0..n)
            .map(|_| {
                let x = sampler(rng);
                let bound = self.t_min(&x);
                let lo = if bound.is_finite() {
                    t_lo.max(0.49 * bound)
                } else {
                    t_lo
                };
                let s = rng.gen_range(lo..=t_hi);
                let t = rng.gen_range(lo..=t_hi);
                GroupLawSample { x, s, t }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupLawSample {
    pub x: Vec<f64>,
    pub s: f64,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub index: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupLawReport {
    pub tol: f64,
    pub n_samples: usize,
    pub max_violation: f64,
    pub worst_sample: Option<usize>,
    pub failures: Vec<SampleFailure>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    /// CSV with header `t,x1,...,xn` and 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let dim = self.states.first().map_or(0, Vec::len);
        write_series_csv(
            out,
            "t",
            "x",
            dim,
            self.times.iter().copied().zip(self.states.iter().map(Vec::as_slice)),
        )
    }
}

/// Shared CSV writer for numeric series: one leading column and `dim`
/// numbered value columns.
pub fn write_series_csv<'a, W, I>(mut out: W, lead: &str, prefix: &str, dim: usize, rows: I) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = (f64, &'a [f64])>,
{
    let mut header = vec![lead.to_string()];
    header.extend((1..=dim).map(|i| format!("{prefix}{i}")));
    writeln!(out, "{}", header.join(","))?;
    for (t, row) in rows {
        write!(out, "{}", fmt17(t))?;
        for v in row {
            write!(out, ",{}", fmt17(*v))?;
        }
        writeln!(out)?;
    }
    out.flush()
}

/// 17 significant digits in scientific notation.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn torus() -> FlowSystem {
        let w = [1.0, 2f64.sqrt()];
        FlowSystem::closed_form("torus", Chart::unit_torus(2), move |t, x| {
            vec![x[0] + w[0] * t, x[1] + w[1] * t]
        })
        .with_field(move |_| w.to_vec())
    }

    fn log_radial_field() -> FlowSystem {
        FlowSystem::vector_field(
            "log_radial_rk",
            Chart::PolarAnnulus,
            |x| vec![-x[0] * x[0].ln(), 1.0 + x[0].ln()],
            IntegratorSettings::default(),
        )
    }

    fn log_radial_closed(t: f64, x: &[f64]) -> Vec<f64> {
        let v0 = x[0].ln();
        let d = (-t).exp();
        vec![(v0 * d).exp(), x[1] + t + v0 * (1.0 - d)]
    }

    #[test]
    fn zero_time_is_identity() {
        let s = torus();
        assert_eq!(s.evolve(&[0.3, 0.7], 0.0).unwrap(), vec![0.3, 0.7]);
        let s = log_radial_field();
        assert_eq!(s.evolve(&[2.0, 1.0], 0.0).unwrap(), vec![2.0, 1.0]);
    }

    #[test]
    fn torus_trajectory_grid() {
        let tr = torus().sample_trajectory(&[0.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(tr.states[0], vec![0.0, 0.0]);
        assert_eq!(tr.states[1][0], 0.0);
        assert!((tr.states[1][1] - (2f64.sqrt() - 1.0)).abs() < 1e-15);
        let single = torus().sample_trajectory(&[0.2, 0.4], &[0.0]).unwrap();
        assert_eq!(single.states, vec![vec![0.2, 0.4]]);
    }

    #[test]
    fn log_radial_halving_of_log_radius() {
        // ln r evolves as v0 e^{-t}: from r = e^2 after ln 2 the radius is e.
        let x = [2f64.exp(), 0.0];
        let tr = log_radial_field().sample_trajectory(&x, &[0.0, 2f64.ln()]).unwrap();
        assert!((tr.states[1][0] - 1f64.exp()).abs() < 1e-9);
        let oracle = log_radial_closed(2f64.ln(), &x);
        assert!((tr.states[1][1] - oracle[1]).abs() < 1e-9);
    }

    #[test]
    fn sample_trajectory_matches_evolve() {
        let s = log_radial_field();
        let x = [0.4, 2.0];
        let grid: Vec<f64> = (-4..=10).map(|k| k as f64 * 0.5).collect();
        let tr = s.sample_trajectory(&x, &grid).unwrap();
        for (t, st) in tr.times.iter().zip(&tr.states) {
            let e = s.evolve(&x, *t).unwrap();
            assert!(s.distance(&e, st) < 1e-8, "t = {t}");
        }
    }

    #[test]
    fn group_law_closed_and_integrated() {
        let mut rng = crate::seeded_rng(7);
        let s = torus();
        let samp = |r: &mut Rng| vec![r.gen::<f64>(), r.gen::<f64>()];
        let samples = s.random_group_samples(&samp, 100, (-10.0, 10.0), &mut rng);
        assert!(s.check_group_law(&samples, 1e-9).pass);

        let s = log_radial_field();
        let samp = |r: &mut Rng| vec![r.gen_range(-1.0f64..1.0).exp(), r.gen_range(0.0..TAU)];
        let samples = s.random_group_samples(&samp, 30, (-1.0, 3.0), &mut rng);
        let rep = s.check_group_law(&samples, 1e-6);
        assert!(rep.pass, "{rep:?}");
        let exact = s.check_group_law(
            &[GroupLawSample {
                x: vec![1.5, 0.2],
                s: 0.0,
                t: 0.0,
            }],
            0.0,
        );
        assert!(exact.pass && exact.max_violation == 0.0);
    }

    #[test]
    fn out_of_domain_requests_are_errors_not_aborts() {
        let s = FlowSystem::closed_form("line", Chart::euclidean(1), |t, x| vec![x[0] + t]).with_time_bound(|_| -1.0);
        assert!(matches!(s.evolve(&[0.0], -2.0), Err(FlowError::TimeOutOfDomain { .. })));
        let rep = s.check_group_law(
            &[
                GroupLawSample {
                    x: vec![0.0],
                    s: -2.0,
                    t: 0.0,
                },
                GroupLawSample {
                    x: vec![0.0],
                    s: 1.0,
                    t: 1.0,
                },
            ],
            1e-12,
        );
        assert_eq!(rep.failures.len(), 1);
        assert_eq!(rep.failures[0].index, 0);
        assert!(!rep.pass);
    }

    #[test]
    fn csv_header_and_precision() {
        let tr = Trajectory {
            times: vec![0.0, 0.5],
            states: vec![vec![1.0, 2.0], vec![1.0 / 3.0, 0.25]],
        };
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,x1,x2"));
        let row: Vec<&str> = lines.nth(1).unwrap().split(',').collect();
        assert_eq!(row[1].parse::<f64>().unwrap(), 1.0 / 3.0);
        assert_eq!(row[1], "3.3333333333333331e-1");

        let empty = Trajectory {
            times: vec![],
            states: vec![],
        };
        let mut buf = Vec::new();
        empty.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t\n");
    }

    #[test]
    fn emitted_angles_in_fundamental_domain() {
        let s = log_radial_field();
        for t in [0.3, 2.0, 17.0, -3.0] {
            let y = s.evolve(&[0.7, 6.2], t).unwrap();
            assert!((0.0..TAU).contains(&y[1]));
        }
    }
}
