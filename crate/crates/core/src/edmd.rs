//! Extended dynamic mode decomposition on sampled snapshot pairs.
//!
//! A dictionary `Psi: X -> R^D` is fitted by ridge least squares to a one-step
//! operator `K` with `Psi(Phi^h x) ~ K Psi(x)`. Diagnostics report holdout
//! residuals and spectra; when the catalog says no linearizing embedding
//! exists, the report attaches a phase divergence certificate and labels the
//! residual floor as expected.

use crate::catalog::{CatalogEntry, ExpectedVerdict};
use crate::flows::{FlowError, FlowSystem, WrapRule};
use crate::phase::{estimate_phase, AttractorModel, Classification, GeometricSchedule, PhaseError};
use crate::StateFn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EdmdError {
    #[error("Gram matrix condition number {condition:e} exceeds 1e14; use a positive ridge parameter")]
    RankDeficient { condition: f64 },
    #[error("need at least {needed} snapshot pairs, got {got}")]
    TooFewPairs { needed: usize, got: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dictionary produced a non-finite value at {0:?}")]
    NonFinite(Vec<f64>),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Phase(#[from] PhaseError),
}

pub const DEFAULT_RIDGE: f64 = 1e-10;
pub const MAX_CONDITION: f64 = 1e14;
pub const UNIT_CIRCLE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DictionaryKind {
    Fourier { degree: u32 },
    Monomial { degree: u32 },
    Custom { name: String },
}

impl std::fmt::Display for DictionaryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DictionaryKind::Fourier { degree } => write!(f, "fourier:{degree}"),
            DictionaryKind::Monomial { degree } => write!(f, "monomial:{degree}"),
            DictionaryKind::Custom { name } => write!(f, "custom:{name}"),
        }
    }
}

impl std::str::FromStr for DictionaryKind {
    type Err = EdmdError;

    /// `fourier:d`, `monomial:d` or `custom:name`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EdmdError::InvalidInput(format!("expected fourier:d, monomial:d or custom:name (got {s:?})"));
        let (kind, arg) = s.split_once(':').ok_or_else(bad)?;
        let degree = || arg.parse::<u32>().ok().filter(|&d| d >= 1).ok_or_else(bad);
        match kind {
            "fourier" => Ok(DictionaryKind::Fourier { degree: degree()? }),
            "monomial" => Ok(DictionaryKind::Monomial { degree: degree()? }),
            "custom" if !arg.is_empty() => Ok(DictionaryKind::Custom { name: arg.to_string() }),
            _ => Err(bad()),
        }
    }
}

/// Observables `x -> R^D`.
#[derive(Clone)]
pub struct Dictionary {
    kind: DictionaryKind,
    size: usize,
    map: StateFn,
}

impl std::fmt::Debug for Dictionary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dictionary")
            .field("kind", &self.kind)
            .field("size", &self.size)
            .finish()
    }
}

/// Exponent vectors with total degree in `lo..=hi`.
fn exponents(dim: usize, lo: u32, hi: u32) -> Vec<Vec<u32>> {
    fn rec(dim: usize, left: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() == dim {
            out.push(prefix.clone());
            return;
        }
        for e in (0..=left).rev() {
            prefix.push(e);
            rec(dim, left - e, prefix, out);
            prefix.pop();
        }
    }
    let mut all = Vec::new();
    rec(dim, hi, &mut Vec::new(), &mut all);
    let mut out: Vec<Vec<u32>> = all
        .into_iter()
        .filter(|a| (lo..=hi).contains(&a.iter().sum::<u32>()))
        .collect();
    out.sort_by_key(|a| a.iter().sum::<u32>());
    out
}

/// Integer frequency vectors with `|k|_1 <= degree`, one from each `+-k` pair
/// (first nonzero entry positive), starting with `k = 0`.
fn frequencies(dim: usize, degree: u32) -> Vec<Vec<i64>> {
    fn rec(dim: usize, left: i64, prefix: &mut Vec<i64>, out: &mut Vec<Vec<i64>>) {
        if prefix.len() == dim {
            out.push(prefix.clone());
            return;
        }
        for k in -left..=left {
            prefix.push(k);
            rec(dim, left - k.abs(), prefix, out);
            prefix.pop();
        }
    }
    let mut all = Vec::new();
    rec(dim, degree as i64, &mut Vec::new(), &mut all);
    let mut out: Vec<Vec<i64>> = all
        .into_iter()
        .filter(|k| k.iter().find(|&&v| v != 0).is_none_or(|&v| v > 0))
        .collect();
    out.sort_by_key(|k| k.iter().map(|v| v.abs()).sum::<i64>());
    out
}

impl Dictionary {
    pub fn new(kind: DictionaryKind, size: usize, map: StateFn) -> Self {
        Self { kind, size, map }
    }

    /// Fourier modes `cos, sin(2 pi k.theta / period)` in the periodic
    /// coordinates with `|k|_1 <= degree`, multiplied by monomials of total
    /// degree `<= degree` in the unbounded coordinates; the constant is
    /// dropped.
    pub fn fourier(sys: &FlowSystem, degree: u32) -> Self {
        let rules = sys.chart().wrap_rules();
        let angular: Vec<(usize, f64)> = rules
            .iter()
            .enumerate()
            .filter_map(|(i, w)| match w {
                WrapRule::Periodic { period } => Some((i, std::f64::consts::TAU / period)),
                WrapRule::Unbounded => None,
            })
            .collect();
        let radial: Vec<usize> = (0..rules.len())
            .filter(|i| !angular.iter().any(|(j, _)| j == i))
            .collect();
        let freqs = frequencies(angular.len(), degree);
        let powers = exponents(radial.len(), 0, degree);
        let size = powers.len() * (2 * freqs.len() - 1) - 1;
        let map = Arc::new(move |x: &[f64]| {
            let mut modes = Vec::with_capacity(2 * freqs.len());
            for k in &freqs {
                let phase: f64 = k.iter().zip(&angular).map(|(&kk, &(i, s))| kk as f64 * s * x[i]).sum();
                if k.iter().all(|&v| v == 0) {
                    modes.push(1.0);
                } else {
                    modes.extend([phase.cos(), phase.sin()]);
                }
            }
            let mut out = Vec::with_capacity(size);
            for a in &powers {
                let m: f64 = a.iter().zip(&radial).map(|(&e, &i)| x[i].powi(e as i32)).product();
                let constant = a.iter().all(|&e| e == 0);
                for (j, v) in modes.iter().enumerate() {
                    if !(constant && j == 0) {
                        out.push(m * v);
                    }
                }
            }
            out
        });
        Self::new(DictionaryKind::Fourier { degree }, size, map)
    }

    /// Monomials of total degree `1..=degree` in the raw coordinates.
    pub fn monomial(dim: usize, degree: u32) -> Self {
        let powers = exponents(dim, 1, degree);
        let size = powers.len();
        let map = Arc::new(move |x: &[f64]| {
            powers
                .iter()
                .map(|a| a.iter().zip(x).map(|(&e, &v)| v.powi(e as i32)).product())
                .collect()
        });
        Self::new(DictionaryKind::Monomial { degree }, size, map)
    }

    /// Builds a dictionary for a catalog entry. The only custom dictionary is
    /// `exact`: the components of the entry's exact embedding.
    pub fn for_entry(entry: &CatalogEntry, kind: &DictionaryKind) -> Result<Self, EdmdError> {
        match kind {
            DictionaryKind::Fourier { degree } => Ok(Self::fourier(&entry.system, *degree)),
            DictionaryKind::Monomial { degree } => Ok(Self::monomial(entry.system.dim(), *degree)),
            DictionaryKind::Custom { name } if name == "exact" => {
                let cand = entry.exact_embedding.clone().ok_or_else(|| {
                    EdmdError::InvalidInput(format!("{} has no exact embedding for custom:exact", entry.name))
                })?;
                let size = cand.generator().dim();
                let map = Arc::new(move |x: &[f64]| cand.eval(x).unwrap_or_else(|_| vec![f64::NAN; size]));
                Ok(Self::new(kind.clone(), size, map))
            }
            DictionaryKind::Custom { name } => Err(EdmdError::InvalidInput(format!(
                "unknown custom dictionary {name:?}; available: exact"
            ))),
        }
    }

    pub fn kind(&self) -> &DictionaryKind {
        &self.kind
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, EdmdError> {
        let y = (self.map)(x);
        if y.len() != self.size || y.iter().any(|v| !v.is_finite()) {
            return Err(EdmdError::NonFinite(x.to_vec()));
        }
        Ok(y)
    }
}

pub type SnapshotPair = (Vec<f64>, Vec<f64>);

/// From each initial state, `count` consecutive pairs `(x, Phi^h x)`.
pub fn collect_snapshots(
    sys: &FlowSystem,
    states: &[Vec<f64>],
    step: f64,
    count: usize,
) -> Result<Vec<SnapshotPair>, EdmdError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(EdmdError::InvalidInput(format!("step must be positive (got {step})")));
    }
    let chains: Vec<Vec<SnapshotPair>> = states
        .par_iter()
        .map(|x0| {
            let mut x = x0.clone();
            let mut chain = Vec::with_capacity(count);
            for _ in 0..count {
                let y = sys.evolve(&x, step)?;
                chain.push((x, y.clone()));
                x = y;
            }
            Ok(chain)
        })
        .collect::<Result<_, FlowError>>()?;
    Ok(chains.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdmdModel {
    pub dictionary: DictionaryKind,
    pub size: usize,
    pub step: f64,
    pub ridge: f64,
    pub n_pairs: usize,
    /// Row-major `D x D` operator.
    pub k: Vec<Vec<f64>>,
    pub training_residual: f64,
    /// Eigenvalues of `K` as `[re, im]`, sorted by argument then modulus.
    pub spectrum: Vec<[f64; 2]>,
}

impl EdmdModel {
    pub fn operator(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.size, self.size, |i, j| self.k[i][j])
    }

    /// `sqrt(sum |Psi(x') - K Psi(x)|^2) / sqrt(sum |Psi(x')|^2)`.
    pub fn residual(&self, dict: &Dictionary, pairs: &[SnapshotPair]) -> Result<f64, EdmdError> {
        let (x, y) = lift(dict, pairs)?;
        Ok(relative_residual(&self.operator(), &x, &y))
    }
}

fn lift(dict: &Dictionary, pairs: &[SnapshotPair]) -> Result<(DMatrix<f64>, DMatrix<f64>), EdmdError> {
    let d = dict.size();
    let mut x = DMatrix::zeros(d, pairs.len());
    let mut y = DMatrix::zeros(d, pairs.len());
    for (j, (a, b)) in pairs.iter().enumerate() {
        x.set_column(j, &nalgebra::DVector::from_vec(dict.eval(a)?));
        y.set_column(j, &nalgebra::DVector::from_vec(dict.eval(b)?));
    }
    Ok((x, y))
}

fn relative_residual(k: &DMatrix<f64>, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let den = y.norm();
    let num = (y - k * x).norm();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// `K = argmin sum |Psi(x') - K Psi(x)|^2 + ridge |K|^2` via the normal
/// equations `K (X X^T + ridge I) = Y X^T`.
pub fn fit(dict: &Dictionary, pairs: &[SnapshotPair], ridge: f64, step: f64) -> Result<EdmdModel, EdmdError> {
    let d = dict.size();
    if pairs.len() < d {
        return Err(EdmdError::TooFewPairs {
            needed: d,
            got: pairs.len(),
        });
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(EdmdError::InvalidInput(format!(
            "ridge must be non-negative (got {ridge})"
        )));
    }
    let (x, y) = lift(dict, pairs)?;
    let gram = &x * x.transpose();
    let cross = &y * x.transpose();
    if ridge == 0.0 {
        let eig = gram.clone().symmetric_eigenvalues();
        let max = eig.max();
        let min = eig.min();
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        if condition > MAX_CONDITION {
            return Err(EdmdError::RankDeficient { condition });
        }
    }
    let reg = gram + DMatrix::identity(d, d) * ridge;
    let chol = reg.cholesky().ok_or(EdmdError::RankDeficient {
        condition: f64::INFINITY,
    })?;
    // G symmetric: K G = C  <=>  G K^T = C^T.
    let k = chol.solve(&cross.transpose()).transpose();
    let training_residual = relative_residual(&k, &x, &y);
    Ok(EdmdModel {
        dictionary: dict.kind().clone(),
        size: d,
        step,
        ridge,
        n_pairs: pairs.len(),
        k: k.row_iter().map(|r| r.iter().copied().collect()).collect(),
        training_residual,
        spectrum: spectrum(&k),
    })
}

fn spectrum(k: &DMatrix<f64>) -> Vec<[f64; 2]> {
    let mut eig: Vec<[f64; 2]> = k.complex_eigenvalues().iter().map(|z| [z.re, z.im]).collect();
    eig.sort_by(|a, b| {
        a[1].atan2(a[0])
            .total_cmp(&b[1].atan2(b[0]))
            .then(a[0].hypot(a[1]).total_cmp(&b[0].hypot(b[1])))
    });
    eig
}

/// What the catalog knows about the system being fitted.
#[derive(Clone, Copy)]
pub struct FailureContext<'a> {
    pub verdict: &'a ExpectedVerdict,
    pub attractor: Option<&'a AttractorModel>,
}

impl<'a> FailureContext<'a> {
    pub fn from_entry(entry: &'a CatalogEntry) -> Self {
        Self {
            verdict: &entry.expected_verdict,
            attractor: entry.attractor.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCertificate {
    pub schedule: GeometricSchedule,
    pub probed: usize,
    pub diverged: usize,
    pub state: Vec<f64>,
    pub classification: Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedFailure {
    pub label: String,
    pub reason: String,
    pub phase_certificate: Option<PhaseCertificate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdmdDiagnosis {
    pub holdout_pairs: usize,
    pub holdout_residual: f64,
    /// Minimum `|Psi(a) - Psi(b)| / d(a, b)` over holdout states.
    pub lift_injectivity_margin: f64,
    pub spectrum_on_unit_circle_fraction: f64,
    pub unit_circle_max_deviation: f64,
    pub expected_failure: Option<ExpectedFailure>,
}

pub const CERTIFICATE_SCHEDULE: GeometricSchedule = GeometricSchedule {
    t0: 1.0,
    ratio: 2.0,
    count: 12,
};
pub const CERTIFICATE_PROBES: usize = 10;
const INJECTIVITY_STATES: usize = 300;

pub fn diagnose(
    model: &EdmdModel,
    dict: &Dictionary,
    sys: &FlowSystem,
    holdout: &[SnapshotPair],
    context: Option<FailureContext<'_>>,
) -> Result<EdmdDiagnosis, EdmdError> {
    let holdout_residual = model.residual(dict, holdout)?;

    let states: Vec<&Vec<f64>> = holdout.iter().map(|(x, _)| x).take(INJECTIVITY_STATES).collect();
    let lifts: Vec<Vec<f64>> = states.iter().map(|x| dict.eval(x)).collect::<Result<_, _>>()?;
    let lift_injectivity_margin = (0..states.len())
        .into_par_iter()
        .map(|i| {
            let mut m = f64::INFINITY;
            for j in i + 1..states.len() {
                let d = sys.distance(states[i], states[j]);
                if d > 0.0 {
                    m = m.min(crate::euclid_dist(&lifts[i], &lifts[j]) / d);
                }
            }
            m
        })
        .reduce(|| f64::INFINITY, f64::min);

    let deviations: Vec<f64> = model.spectrum.iter().map(|z| (z[0].hypot(z[1]) - 1.0).abs()).collect();
    let on_circle = deviations.iter().filter(|&&d| d <= UNIT_CIRCLE_TOL).count();
    let spectrum_on_unit_circle_fraction = if deviations.is_empty() {
        0.0
    } else {
        on_circle as f64 / deviations.len() as f64
    };
    let unit_circle_max_deviation = deviations.iter().copied().fold(0.0, f64::max);

    let expected_failure = match context {
        Some(FailureContext {
            verdict: ExpectedVerdict::NotLinearizable { reason },
            attractor,
        }) => Some(ExpectedFailure {
            label: "EXPECTED".into(),
            reason: reason.clone(),
            phase_certificate: match attractor {
                Some(a) => phase_certificate(sys, a, holdout)?,
                None => None,
            },
        }),
        _ => None,
    };

    Ok(EdmdDiagnosis {
        holdout_pairs: holdout.len(),
        holdout_residual,
        lift_injectivity_margin,
        spectrum_on_unit_circle_fraction,
        unit_circle_max_deviation,
        expected_failure,
    })
}

/// Phase estimates on the first few holdout states off the attractor; the
/// certificate records the first diverged classification.
fn phase_certificate(
    sys: &FlowSystem,
    attractor: &AttractorModel,
    holdout: &[SnapshotPair],
) -> Result<Option<PhaseCertificate>, EdmdError> {
    let probes: Vec<&Vec<f64>> = holdout
        .iter()
        .map(|(x, _)| x)
        .filter(|x| sys.distance(x, &attractor.nearest_point(x)) > 1e-6)
        .take(CERTIFICATE_PROBES)
        .collect();
    let estimates: Vec<_> = probes
        .par_iter()
        .map(|x| estimate_phase(sys, attractor, x, &CERTIFICATE_SCHEDULE))
        .collect::<Result<_, _>>()?;
    let diverged = estimates.iter().filter(|e| e.classification.is_diverged()).count();
    Ok(probes
        .iter()
        .zip(&estimates)
        .find(|(_, e)| e.classification.is_diverged())
        .map(|(x, e)| PhaseCertificate {
            schedule: CERTIFICATE_SCHEDULE,
            probed: probes.len(),
            diverged,
            state: x.to_vec(),
            classification: e.classification.clone(),
        }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::flows::{Chart, IntegratorSettings};
    use crate::seeded_rng;

    fn pairs_for(entry: &CatalogEntry, n: usize, step: f64, seed: u64) -> Vec<SnapshotPair> {
        let mut rng = seeded_rng(seed);
        let states = entry.sample_states(n, &mut rng);
        collect_snapshots(&entry.system, &states, step, 1).unwrap()
    }

    #[test]
    fn dictionary_sizes() {
        let t2 = catalog::get("quasiperiodic_torus_2").unwrap();
        assert_eq!(Dictionary::fourier(&t2.system, 1).size(), 4);
        assert_eq!(Dictionary::fourier(&t2.system, 2).size(), 12);
        let ann = catalog::get("annulus_cubic").unwrap();
        assert_eq!(Dictionary::fourier(&ann.system, 5).size(), 65);
        assert_eq!(Dictionary::monomial(2, 3).size(), 9);
        assert_eq!(
            "fourier:2".parse::<DictionaryKind>().unwrap(),
            DictionaryKind::Fourier { degree: 2 }
        );
        assert!("fourier:0".parse::<DictionaryKind>().is_err());
        assert!("spline:2".parse::<DictionaryKind>().is_err());
    }

    #[test]
    fn torus_snapshot_angle_advance() {
        let sys = FlowSystem::closed_form("t2", Chart::unit_torus(2), |t, x| {
            vec![x[0] + t, x[1] + 2f64.sqrt() * t]
        });
        let p = collect_snapshots(&sys, &[vec![0.0, 0.0]], 1.0, 1).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].1[0], 0.0);
        assert!((p[0].1[1] - (2f64.sqrt() - 1.0)).abs() < 1e-15);
        assert!(collect_snapshots(&sys, &[vec![0.0, 0.0]], 0.0, 1).is_err());
    }

    #[test]
    fn torus_fourier_fit_is_exact() {
        let e = catalog::get("quasiperiodic_torus_2").unwrap();
        let dict = Dictionary::fourier(&e.system, 1);
        let train = pairs_for(&e, 500, 0.1, 1);
        let model = fit(&dict, &train, DEFAULT_RIDGE, 0.1).unwrap();
        assert!(model.training_residual <= 1e-8, "{}", model.training_residual);
        let w = e.torus_factor.as_ref().unwrap().1.as_slice().to_vec();
        let mut want: Vec<[f64; 2]> = Vec::new();
        for &wi in &w {
            let a = std::f64::consts::TAU * wi * 0.1;
            want.extend([[a.cos(), a.sin()], [a.cos(), -a.sin()]]);
        }
        for z in &want {
            let best = model
                .spectrum
                .iter()
                .map(|s| (s[0] - z[0]).hypot(s[1] - z[1]))
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-6, "{z:?} not in {:?}", model.spectrum);
        }
        let holdout = pairs_for(&e, 200, 0.1, 2);
        let diag = diagnose(&model, &dict, &e.system, &holdout, Some(FailureContext::from_entry(&e))).unwrap();
        assert!(diag.holdout_residual <= 1e-7);
        assert_eq!(diag.spectrum_on_unit_circle_fraction, 1.0);
        assert!(diag.expected_failure.is_none());
    }

    #[test]
    fn log_radial_exact_dictionary() {
        let e = catalog::get("log_radial").unwrap();
        let dict = Dictionary::for_entry(&e, &DictionaryKind::Custom { name: "exact".into() }).unwrap();
        let train = pairs_for(&e, 300, 0.1, 3);
        let model = fit(&dict, &train, DEFAULT_RIDGE, 0.1).unwrap();
        assert!(model.training_residual <= 1e-6);
        let want = e
            .exact_embedding
            .as_ref()
            .unwrap()
            .generator()
            .exp(0.1)
            .unwrap()
            .complex_eigenvalues();
        for z in want.iter() {
            let best = model
                .spectrum
                .iter()
                .map(|s| (s[0] - z.re).hypot(s[1] - z.im))
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-5);
        }
    }

    #[test]
    fn identical_snapshots() {
        let dict = Dictionary::monomial(2, 1);
        let pairs = vec![(vec![1.0, 2.0], vec![1.0, 2.0]); 10];
        let model = fit(&dict, &pairs, DEFAULT_RIDGE, 1.0).unwrap();
        assert!(model.training_residual < 1e-10);
        let k = model.operator();
        let v = nalgebra::DVector::from_vec(vec![1.0, 2.0]);
        assert!((&k * &v - &v).norm() < 1e-8, "{k}");
        assert!(matches!(
            fit(&dict, &pairs, 0.0, 1.0),
            Err(EdmdError::RankDeficient { .. })
        ));
    }

    #[test]
    fn linear_decay_monomial() {
        let sys = FlowSystem::vector_field(
            "decay",
            Chart::euclidean(2),
            |x| vec![-x[0], -x[1]],
            IntegratorSettings::default(),
        );
        let mut rng = seeded_rng(4);
        use rand::Rng as _;
        let states: Vec<Vec<f64>> = (0..60)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let pairs = collect_snapshots(&sys, &states, 0.1, 1).unwrap();
        let (train, hold) = pairs.split_at(40);
        let dict = Dictionary::monomial(2, 1);
        let model = fit(&dict, train, DEFAULT_RIDGE, 0.1).unwrap();
        let diag = diagnose(&model, &dict, &sys, hold, None).unwrap();
        assert!(diag.holdout_residual <= 1e-9, "{}", diag.holdout_residual);
    }

    #[test]
    fn annulus_carries_expected_label() {
        let e = catalog::get("annulus_cubic").unwrap();
        let dict = Dictionary::fourier(&e.system, 3);
        let train = pairs_for(&e, 400, 0.1, 5);
        let model = fit(&dict, &train, DEFAULT_RIDGE, 0.1).unwrap();
        let holdout = pairs_for(&e, 100, 0.1, 6);
        let diag = diagnose(&model, &dict, &e.system, &holdout, Some(FailureContext::from_entry(&e))).unwrap();
        let f = diag.expected_failure.unwrap();
        assert_eq!(f.label, "EXPECTED");
        assert!(f.phase_certificate.unwrap().classification.is_diverged());
    }
}
