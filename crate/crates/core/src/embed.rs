//! Linearizing embeddings of attractor basins: impact times on a Lyapunov
//! level set, the topological and smooth builders, and verification of any
//! candidate (residual, injectivity, immersion, properness probe).

use crate::flows::{FlowError, FlowSystem};
use crate::linalg::{LinalgError, LinearGenerator};
use crate::phase::{verify_phase_properties, AttractorModel, PhaseError, PhaseReport};
use crate::report::CheckResult;
use crate::{euclid_dist, euclid_norm, ScalarFn, StateFn};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("state lies on the attractor (V = {value:e}); its trajectory never reaches the level set")]
    OnAttractor { value: f64 },
    #[error("no sign change of V - c found for |tau| <= {window}")]
    BracketFailure { window: f64 },
    #[error("phase map rejected: {0}")]
    PhaseMapInvalid(String),
    #[error("condition on the transverse map violated: {0}")]
    ConditionThreeViolated(String),
    #[error("invalid builder input: {0}")]
    InvalidInput(String),
    #[error("embedding produced a non-finite value")]
    NonFinite,
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Phase(#[from] PhaseError),
}

pub type EmbeddingMap = Arc<dyn Fn(&[f64]) -> Result<Vec<f64>, EmbedError> + Send + Sync>;
/// Membership predicate for an open subset of the state space.
pub type DomainFn = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Exact,
    BuiltTopological,
    BuiltSmooth,
    Edmd,
}

/// A map `F: X -> R^n` paired with the generator `B` it should conjugate to.
#[derive(Clone)]
pub struct EmbeddingCandidate {
    map: EmbeddingMap,
    generator: LinearGenerator,
    provenance: Provenance,
}

impl std::fmt::Debug for EmbeddingCandidate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmbeddingCandidate")
            .field("dim", &self.generator.dim())
            .field("provenance", &self.provenance)
            .finish()
    }
}

impl EmbeddingCandidate {
    pub fn new(map: EmbeddingMap, generator: LinearGenerator, provenance: Provenance) -> Self {
        Self {
            map,
            generator,
            provenance,
        }
    }

    /// Wrap an infallible map.
    pub fn from_fn(f: StateFn, generator: LinearGenerator, provenance: Provenance) -> Self {
        Self::new(Arc::new(move |x: &[f64]| Ok(f(x))), generator, provenance)
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, EmbedError> {
        let y = (self.map)(x)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(y)
    }

    pub fn generator(&self) -> &LinearGenerator {
        &self.generator
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn with_generator(&self, generator: LinearGenerator) -> Self {
        Self {
            generator,
            ..self.clone()
        }
    }
}

/// Lyapunov function `V`, a level `c`, and an embedding of `V^{-1}(c)` into
/// the unit sphere of `R^{sphere_dim}`.
#[derive(Clone)]
pub struct LyapunovData {
    pub v: ScalarFn,
    pub level: f64,
    pub level_set_embedding: StateFn,
    pub sphere_dim: usize,
}

/// Transverse map `G: U -> R^k` with `G . Phi^t = e^{Bt} . G` on `U`.
#[derive(Clone)]
pub struct TransverseMap {
    pub g: StateFn,
    pub generator: LinearGenerator,
    /// `None` means `U` is the whole state space.
    pub domain: Option<DomainFn>,
}

impl TransverseMap {
    fn contains(&self, x: &[f64]) -> bool {
        self.domain.as_ref().is_none_or(|d| d(x))
    }
}

pub const DEFAULT_BRACKET: (f64, f64) = (-1.0, 1.0);
/// Largest `|tau|` searched before giving up.
pub const BRACKET_WINDOW: f64 = 100.0;
/// `V` at or below this counts as lying on the attractor inside the builders.
pub const ON_ATTRACTOR_V: f64 = 1e-24;
const IMPACT_TOL: f64 = 1e-13;

/// Time `tau` with `V(Phi^tau(x)) = c`.
pub fn impact_time(
    sys: &FlowSystem,
    v: &ScalarFn,
    c: f64,
    x: &[f64],
    bracket: (f64, f64),
    tol: f64,
) -> Result<f64, EmbedError> {
    impact_time_with_floor(sys, v, c, x, bracket, tol, tol)
}

fn impact_time_with_floor(
    sys: &FlowSystem,
    v: &ScalarFn,
    c: f64,
    x: &[f64],
    bracket: (f64, f64),
    tol: f64,
    floor: f64,
) -> Result<f64, EmbedError> {
    let v0 = v(x);
    if v0 <= floor {
        return Err(EmbedError::OnAttractor { value: v0 });
    }
    // Decreasing in t. Out-of-domain backward times count as "far above".
    let g = |t: f64| -> Result<f64, EmbedError> {
        match sys.evolve_lifted(x, t) {
            Ok(y) => Ok(v(&y) - c),
            Err(FlowError::TimeOutOfDomain { .. }) | Err(FlowError::IntegrationFailure(_)) if t < 0.0 => {
                Ok(f64::INFINITY)
            }
            Err(e) => Err(e.into()),
        }
    };
    let (mut a, mut b) = (bracket.0.min(bracket.1), bracket.0.max(bracket.1));
    let mut ga = g(a)?;
    let mut gb = g(b)?;
    while gb > 0.0 {
        if b >= BRACKET_WINDOW {
            return Err(EmbedError::BracketFailure { window: BRACKET_WINDOW });
        }
        a = b;
        ga = gb;
        b = (2.0 * b.max(0.5)).min(BRACKET_WINDOW);
        gb = g(b)?;
    }
    while ga < 0.0 {
        if a <= -BRACKET_WINDOW {
            return Err(EmbedError::BracketFailure { window: BRACKET_WINDOW });
        }
        b = a;
        gb = ga;
        a = (2.0 * a.min(-0.5)).max(-BRACKET_WINDOW);
        ga = g(a)?;
    }
    if ga == 0.0 {
        return Ok(a);
    }
    if gb == 0.0 {
        return Ok(b);
    }
    // Bisection with secant steps whenever they land well inside the bracket.
    let mut best = (f64::INFINITY, 0.5 * (a + b));
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        let sec = if ga.is_finite() && gb.is_finite() {
            b - gb * (b - a) / (gb - ga)
        } else {
            mid
        };
        let w = b - a;
        let t = if sec > a + 0.05 * w && sec < b - 0.05 * w {
            sec
        } else {
            mid
        };
        let gt = g(t)?;
        if gt.abs() < best.0 {
            best = (gt.abs(), t);
        }
        if gt.abs() <= 1e-3 * tol || w <= 4.0 * f64::EPSILON * t.abs().max(1.0) {
            break;
        }
        if gt > 0.0 {
            a = t;
            ga = gt;
        } else {
            b = t;
            gb = gt;
        }
    }
    if best.0 <= tol {
        Ok(best.1)
    } else {
        Err(EmbedError::BracketFailure { window: BRACKET_WINDOW })
    }
}

/// Data gathered while checking builder preconditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologicalDiagnostics {
    pub phase: PhaseReport,
    pub attractor_residual: f64,
    pub max_v_on_attractor: f64,
    pub level_set_norm_error: f64,
}

#[derive(Debug, Clone)]
pub struct TopologicalBuild {
    pub candidate: EmbeddingCandidate,
    pub diagnostics: TopologicalDiagnostics,
}

pub const PRECHECK_TIMES: [f64; 5] = [0.0, 0.5, 1.0, 2.0, 4.0];
pub const PHASE_TOL: f64 = 1e-8;
pub const ATTRACTOR_RESIDUAL_TOL: f64 = 1e-8;

/// `F(x) = (F0(P x), e^{tau(x)} F1(Phi^{tau(x)} x))` with generator
/// `blockdiag(B0, -I)`; `F(a) = (F0(a), 0)` on the attractor.
pub fn build_topological_embedding(
    sys: &FlowSystem,
    attractor: &AttractorModel,
    phase: StateFn,
    f0: (StateFn, LinearGenerator),
    lyap: LyapunovData,
    basin_samples: &[Vec<f64>],
) -> Result<TopologicalBuild, EmbedError> {
    let (f0_map, b0) = f0;
    let cloud = attractor.cloud();
    let phase_report = verify_phase_properties(sys, &phase, basin_samples, cloud, &PRECHECK_TIMES, PHASE_TOL)?;
    if !phase_report.pass {
        return Err(EmbedError::PhaseMapInvalid(format!(
            "idempotence {:e}, retraction {:e}, equivariance {:e}, asymptotic fraction {} (tol {:e})",
            phase_report.idempotence_max,
            phase_report.retraction_max,
            phase_report.equivariance_max,
            phase_report.asymptotic_fraction,
            PHASE_TOL
        )));
    }
    let f0_candidate = EmbeddingCandidate::from_fn(f0_map.clone(), b0.clone(), Provenance::Exact);
    let stride = (cloud.len() / 50).max(1);
    let a_states: Vec<Vec<f64>> = cloud.iter().step_by(stride).cloned().collect();
    let attractor_residual =
        verify_linearization(&f0_candidate, attractor.restricted_flow(), &a_states, &PRECHECK_TIMES)?;
    if attractor_residual > ATTRACTOR_RESIDUAL_TOL {
        return Err(EmbedError::InvalidInput(format!(
            "F0 does not linearize the attractor flow (residual {attractor_residual:e})"
        )));
    }
    let max_v_on_attractor = cloud.iter().map(|a| (lyap.v)(a)).fold(0.0, f64::max);
    if max_v_on_attractor > 1e-12 {
        return Err(EmbedError::InvalidInput(format!(
            "V = {max_v_on_attractor:e} on the attractor"
        )));
    }
    if !(lyap.level > 0.0) {
        return Err(EmbedError::InvalidInput("level c must be positive".into()));
    }
    let mut level_set_norm_error: f64 = 0.0;
    for x in basin_samples {
        if (lyap.v)(x) <= ON_ATTRACTOR_V {
            continue;
        }
        let tau = impact_time_with_floor(sys, &lyap.v, lyap.level, x, DEFAULT_BRACKET, IMPACT_TOL, ON_ATTRACTOR_V)?;
        let y = (lyap.level_set_embedding)(&sys.evolve(x, tau)?);
        if y.len() != lyap.sphere_dim {
            return Err(EmbedError::InvalidInput(format!(
                "level-set embedding has {} components, expected {}",
                y.len(),
                lyap.sphere_dim
            )));
        }
        level_set_norm_error = level_set_norm_error.max((euclid_norm(&y) - 1.0).abs());
    }
    if level_set_norm_error > 1e-12 {
        return Err(EmbedError::InvalidInput(format!(
            "level-set embedding leaves the unit sphere by {level_set_norm_error:e}"
        )));
    }

    let generator = LinearGenerator::block_diag(&[b0, LinearGenerator::scalar(-1.0, lyap.sphere_dim)])?;
    let sys_c = sys.clone();
    let map: EmbeddingMap = Arc::new(move |x: &[f64]| {
        let mut out = f0_map(&phase(x));
        let v = (lyap.v)(x);
        if v <= ON_ATTRACTOR_V {
            out.extend(std::iter::repeat_n(0.0, lyap.sphere_dim));
            return Ok(out);
        }
        let tau = impact_time_with_floor(
            &sys_c,
            &lyap.v,
            lyap.level,
            x,
            DEFAULT_BRACKET,
            IMPACT_TOL,
            ON_ATTRACTOR_V,
        )?;
        let scale = tau.exp();
        out.extend(
            (lyap.level_set_embedding)(&sys_c.evolve(x, tau)?)
                .into_iter()
                .map(|y| scale * y),
        );
        Ok(out)
    });
    Ok(TopologicalBuild {
        candidate: EmbeddingCandidate::new(map, generator, Provenance::BuiltTopological),
        diagnostics: TopologicalDiagnostics {
            phase: phase_report,
            attractor_residual,
            max_v_on_attractor,
            level_set_norm_error,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothDiagnostics {
    pub equivariance_residual: f64,
    /// Largest `|DG(a) v|` over attractor tangent vectors.
    pub kernel_tangent_max: f64,
    /// Smallest singular value of `DG(a)` on the normal complement.
    pub kernel_transverse_min: f64,
    pub kernel_samples: usize,
    /// Largest disagreement of the two `F0` formulas on `U` and `V > c`.
    pub overlap_max: f64,
    pub overlap_samples: usize,
}

#[derive(Debug, Clone)]
pub struct SmoothBuild {
    pub candidate: EmbeddingCandidate,
    pub diagnostics: SmoothDiagnostics,
}

pub const FD_STEP: f64 = 1e-5;
pub const KERNEL_TOL: f64 = 1e-5;
pub const EQUIVARIANCE_TOL: f64 = 1e-8;
pub const OVERLAP_TOL: f64 = 1e-7;
pub const KERNEL_SAMPLES: usize = 50;
const EQUIVARIANCE_TIMES: [f64; 3] = [0.1, 1.0, 2.0];

/// `F = (F1A . P, F0)` with `F0 = G` on `U` and `e^{-B tau} G(Phi^tau x)`
/// elsewhere; generator `blockdiag(B1, B)`.
pub fn build_smooth_embedding(
    sys: &FlowSystem,
    attractor: &AttractorModel,
    phase: StateFn,
    f1a: (StateFn, LinearGenerator),
    transverse: TransverseMap,
    v: ScalarFn,
    c: f64,
    basin_samples: &[Vec<f64>],
) -> Result<SmoothBuild, EmbedError> {
    let (f1a_map, b1) = f1a;
    let b = transverse.generator.clone();
    if let Some(l) = b.eigenvalues().iter().find(|l| l.re >= -1e-9) {
        return Err(EmbedError::ConditionThreeViolated(format!(
            "generator of G has eigenvalue {:+e}{:+e}i with real part >= -1e-9",
            l.re, l.im
        )));
    }

    let in_u: Vec<&Vec<f64>> = basin_samples.iter().filter(|x| transverse.contains(x)).collect();
    let g_candidate = EmbeddingCandidate::from_fn(transverse.g.clone(), b.clone(), Provenance::Exact);
    let u_states: Vec<Vec<f64>> = in_u.iter().map(|x| (*x).clone()).collect();
    let times: Vec<f64> = EQUIVARIANCE_TIMES
        .iter()
        .copied()
        .filter(|&t| {
            u_states
                .iter()
                .all(|x| transverse.contains(&sys.evolve(x, t).unwrap_or_default()))
        })
        .collect();
    let equivariance_residual = verify_linearization(&g_candidate, sys, &u_states, &times)?;
    if equivariance_residual > EQUIVARIANCE_TOL {
        return Err(EmbedError::ConditionThreeViolated(format!(
            "G is not equivariant on U: residual {equivariance_residual:e} > {EQUIVARIANCE_TOL:e}"
        )));
    }

    let cloud = attractor.cloud();
    let stride = (cloud.len() / KERNEL_SAMPLES).max(1);
    let a_samples: Vec<&Vec<f64>> = cloud.iter().step_by(stride).take(KERNEL_SAMPLES).collect();
    let mut kernel_tangent_max: f64 = 0.0;
    let mut kernel_transverse_min = f64::INFINITY;
    for a in &a_samples {
        let tangent = attractor.tangent_basis(a);
        let normal = orthonormal_complement(&tangent, sys.dim());
        let g = |y: &[f64]| Ok::<_, EmbedError>((transverse.g)(y));
        for t in &tangent {
            let d = directional_derivative(&g, a, t, FD_STEP)?;
            kernel_tangent_max = kernel_tangent_max.max(euclid_norm(&d));
        }
        let cols: Vec<Vec<f64>> = normal
            .iter()
            .map(|nv| directional_derivative(&g, a, nv, FD_STEP))
            .collect::<Result<_, _>>()?;
        kernel_transverse_min = kernel_transverse_min.min(min_singular_value(&cols));
    }
    if kernel_tangent_max > KERNEL_TOL || !(kernel_transverse_min > KERNEL_TOL) {
        return Err(EmbedError::ConditionThreeViolated(format!(
            "kernel of DG on the attractor differs from its tangent space: tangent max {kernel_tangent_max:e}, \
             transverse min {kernel_transverse_min:e} (threshold {KERNEL_TOL:e})"
        )));
    }

    let sys_c = sys.clone();
    let (g_map, v_map) = (transverse.g.clone(), v.clone());
    let b_c = b.clone();
    let outside = move |x: &[f64]| -> Result<Vec<f64>, EmbedError> {
        let tau = impact_time_with_floor(&sys_c, &v_map, c, x, DEFAULT_BRACKET, IMPACT_TOL, ON_ATTRACTOR_V)?;
        let gy = g_map(&sys_c.evolve(x, tau)?);
        Ok(b_c.propagate(-tau, &gy)?)
    };
    let mut overlap_max: f64 = 0.0;
    let mut overlap_samples = 0;
    for x in &in_u {
        if v(x) > c {
            let d = euclid_dist(&(transverse.g)(x), &outside(x)?);
            overlap_max = overlap_max.max(d);
            overlap_samples += 1;
        }
    }
    if overlap_max > OVERLAP_TOL {
        return Err(EmbedError::ConditionThreeViolated(format!(
            "the two formulas for F0 disagree by {overlap_max:e} on U and V > c"
        )));
    }

    let generator = LinearGenerator::block_diag(&[b1, b])?;
    let g_map = transverse.g.clone();
    let domain = transverse.domain.clone();
    let map: EmbeddingMap = Arc::new(move |x: &[f64]| {
        let mut out = f1a_map(&phase(x));
        if domain.as_ref().is_none_or(|d| d(x)) {
            out.extend(g_map(x));
        } else {
            out.extend(outside(x)?);
        }
        Ok(out)
    });
    Ok(SmoothBuild {
        candidate: EmbeddingCandidate::new(map, generator, Provenance::BuiltSmooth),
        diagnostics: SmoothDiagnostics {
            equivariance_residual,
            kernel_tangent_max,
            kernel_transverse_min,
            kernel_samples: a_samples.len(),
            overlap_max,
            overlap_samples,
        },
    })
}

/// `max |F(Phi^t x) - e^{Bt} F(x)|` over `states x times`.
pub fn verify_linearization(
    cand: &EmbeddingCandidate,
    sys: &FlowSystem,
    states: &[Vec<f64>],
    times: &[f64],
) -> Result<f64, EmbedError> {
    let exps: Vec<(f64, DMatrix<f64>)> = times
        .iter()
        .map(|&t| cand.generator.exp(t).map(|e| (t, e)))
        .collect::<Result<_, _>>()?;
    let per_state: Vec<Result<f64, EmbedError>> = states
        .par_iter()
        .map(|x| {
            let fx = DVector::from_vec(cand.eval(x)?);
            let mut worst: f64 = 0.0;
            for (t, e) in &exps {
                if *t == 0.0 {
                    continue;
                }
                let lhs = cand.eval(&sys.evolve(x, *t)?)?;
                let rhs = e * &fx;
                worst = worst.max(euclid_dist(&lhs, rhs.as_slice()));
            }
            Ok(worst)
        })
        .collect();
    let mut worst: f64 = 0.0;
    for r in per_state {
        worst = worst.max(r?);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityOptions {
    pub fd_step: f64,
    pub sigma_floor: f64,
    pub margin_floor: f64,
    pub min_spearman: f64,
    pub min_growth: f64,
}

impl Default for QualityOptions {
    fn default() -> Self {
        Self {
            fd_step: FD_STEP,
            sigma_floor: 1e-6,
            margin_floor: 1e-6,
            min_spearman: 0.5,
            min_growth: 2.0,
        }
    }
}

/// States leaving every compact set, with a scalar measuring how far out
/// they are.
#[derive(Clone)]
pub struct EscapeSequence {
    pub states: Vec<Vec<f64>>,
    pub proxy: ScalarFn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropernessProbe {
    pub spearman: f64,
    /// `|F|` at the last escape state over `|F|` at the first.
    pub growth: f64,
    pub image_norms: Vec<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub n_samples: usize,
    pub injectivity_margin: f64,
    pub worst_pair: Option<(usize, usize)>,
    pub min_jacobian_sigma: f64,
    /// Absent for compact state spaces, where properness is automatic.
    pub properness_probe: Option<PropernessProbe>,
    pub checks: Vec<CheckResult>,
    pub pass: bool,
}

/// Injectivity margin over all sample pairs, smallest singular value of the
/// finite-difference Jacobian along the system's tangent frame, and a
/// properness probe along an escaping sequence.
pub fn verify_embedding_quality(
    cand: &EmbeddingCandidate,
    sys: &FlowSystem,
    samples: &[Vec<f64>],
    escape: Option<&EscapeSequence>,
    options: &QualityOptions,
) -> Result<QualityReport, EmbedError> {
    let samples: Vec<Vec<f64>> = samples.iter().map(|x| sys.canonicalize(x)).collect();
    let images: Vec<Vec<f64>> = samples.par_iter().map(|x| cand.eval(x)).collect::<Result<_, _>>()?;

    let per_row: Vec<(f64, Option<(usize, usize)>)> = (0..samples.len())
        .into_par_iter()
        .map(|i| {
            let mut best = (f64::INFINITY, None);
            for j in i + 1..samples.len() {
                let d = sys.distance(&samples[i], &samples[j]);
                if d == 0.0 {
                    continue;
                }
                let ratio = euclid_dist(&images[i], &images[j]) / d;
                if ratio < best.0 {
                    best = (ratio, Some((i, j)));
                }
            }
            best
        })
        .collect();
    let (injectivity_margin, worst_pair) =
        per_row
            .into_iter()
            .fold((f64::INFINITY, None), |acc, r| if r.0 < acc.0 { r } else { acc });

    let sigmas: Vec<f64> = samples
        .par_iter()
        .map(|x| {
            let f = |y: &[f64]| cand.eval(y);
            let cols: Vec<Vec<f64>> = sys
                .tangent_frame(x)
                .iter()
                .map(|e| directional_derivative(&f, x, e, options.fd_step))
                .collect::<Result<_, _>>()?;
            Ok(min_singular_value(&cols))
        })
        .collect::<Result<Vec<f64>, EmbedError>>()?;
    let min_jacobian_sigma = sigmas.into_iter().fold(f64::INFINITY, f64::min);

    let properness_probe = match escape {
        None => None,
        Some(seq) => {
            let proxies: Vec<f64> = seq.states.iter().map(|x| (seq.proxy)(x)).collect();
            let image_norms: Vec<f64> = seq
                .states
                .iter()
                .map(|x| cand.eval(x).map(|y| euclid_norm(&y)))
                .collect::<Result<_, _>>()?;
            let spearman = crate::stats::spearman(&proxies, &image_norms).unwrap_or(0.0);
            let first = image_norms.first().copied().unwrap_or(0.0);
            let last = image_norms.last().copied().unwrap_or(0.0);
            let growth = if first > 0.0 {
                last / first
            } else if last > 0.0 {
                f64::INFINITY
            } else {
                1.0
            };
            let pass = spearman > options.min_spearman && growth >= options.min_growth;
            Some(PropernessProbe {
                spearman,
                growth: growth.min(f64::MAX),
                image_norms,
                pass,
            })
        }
    };

    let mut checks = vec![
        CheckResult::above(
            "injectivity_margin",
            finite_or_max(injectivity_margin),
            options.margin_floor,
        ),
        CheckResult::above(
            "min_jacobian_sigma",
            finite_or_max(min_jacobian_sigma),
            options.sigma_floor,
        ),
    ];
    if let Some(p) = &properness_probe {
        checks.push(CheckResult::above(
            "properness_spearman",
            p.spearman,
            options.min_spearman,
        ));
        checks.push(CheckResult::at_least("properness_growth", p.growth, options.min_growth));
    }
    let pass = crate::report::all_pass(&checks);
    Ok(QualityReport {
        n_samples: samples.len(),
        injectivity_margin: finite_or_max(injectivity_margin),
        worst_pair,
        min_jacobian_sigma: finite_or_max(min_jacobian_sigma),
        properness_probe,
        checks,
        pass,
    })
}

fn finite_or_max(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::MAX
    }
}

/// Central difference of `f` at `x` along `dir`.
pub fn directional_derivative<F>(f: &F, x: &[f64], dir: &[f64], h: f64) -> Result<Vec<f64>, EmbedError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, EmbedError> + ?Sized,
{
    let plus: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + h * d).collect();
    let minus: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a - h * d).collect();
    let (fp, fm) = (f(&plus)?, f(&minus)?);
    Ok(fp.iter().zip(&fm).map(|(p, m)| (p - m) / (2.0 * h)).collect())
}

/// Smallest singular value of the matrix with the given columns; zero when
/// there are more columns than rows.
pub fn min_singular_value(cols: &[Vec<f64>]) -> f64 {
    let k = cols.len();
    if k == 0 {
        return f64::INFINITY;
    }
    let n = cols[0].len();
    if n < k {
        return 0.0;
    }
    let m = DMatrix::from_fn(n, k, |i, j| cols[j][i]);
    crate::linalg::accurate_svd(m, false, false)
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Orthonormal basis of the complement of `span(basis)` in `R^n`.
pub fn orthonormal_complement(basis: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    for b in basis {
        push_orthogonalized(&mut q, b.clone());
    }
    let k = q.len();
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        push_orthogonalized(&mut q, e);
    }
    q.split_off(k)
}

fn push_orthogonalized(q: &mut Vec<Vec<f64>>, mut v: Vec<f64>) {
    for _ in 0..2 {
        for u in q.iter() {
            let d: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= d * ui;
            }
        }
    }
    let nrm = euclid_norm(&v);
    if nrm > 1e-8 {
        q.push(v.iter().map(|x| x / nrm).collect());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::Chart;
    use crate::{scalar_fn, state_fn};

    fn log_radial() -> FlowSystem {
        FlowSystem::closed_form("log_radial", Chart::PolarAnnulus, |t, x| {
            let v0 = x[0].ln();
            let d = (-t).exp();
            vec![(v0 * d).exp(), x[1] + t + v0 * (1.0 - d)]
        })
    }

    fn v_fn() -> ScalarFn {
        scalar_fn(|x: &[f64]| x[0].ln().powi(2))
    }

    #[test]
    fn impact_time_matches_closed_form() {
        let tau = impact_time(&log_radial(), &v_fn(), 1.0, &[2f64.exp(), 0.0], DEFAULT_BRACKET, 1e-12).unwrap();
        assert!((tau - 2f64.ln()).abs() < 1e-10, "{tau}");
        // Needs bracket expansion in both directions.
        let tau = impact_time(
            &log_radial(),
            &v_fn(),
            1.0,
            &[300f64.exp(), 0.0],
            DEFAULT_BRACKET,
            1e-10,
        )
        .unwrap();
        assert!((tau - 300f64.ln()).abs() < 1e-9);
        let tau = impact_time(
            &log_radial(),
            &v_fn(),
            1.0,
            &[(1e-4f64).exp(), 0.0],
            DEFAULT_BRACKET,
            1e-12,
        )
        .unwrap();
        assert!((tau - 1e-4f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn impact_time_errors() {
        let sys = log_radial();
        assert!(matches!(
            impact_time(&sys, &v_fn(), 1.0, &[1.0, 0.3], DEFAULT_BRACKET, 1e-12),
            Err(EmbedError::OnAttractor { .. })
        ));
        // V never reaches the level: constant V.
        let flat = scalar_fn(|_: &[f64]| 5.0);
        assert!(matches!(
            impact_time(&sys, &flat, 1.0, &[2.0, 0.0], DEFAULT_BRACKET, 1e-12),
            Err(EmbedError::BracketFailure { .. })
        ));
    }

    #[test]
    fn perturbed_generator_is_detected() {
        let f = state_fn(|x: &[f64]| {
            let v = x[0].ln();
            let p = x[1] + v;
            vec![p.cos(), p.sin(), v * p.cos(), v * p.sin()]
        });
        let b = LinearGenerator::from_rows(&[
            vec![0.0, -1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, -1.0, -1.0],
            vec![0.0, 0.0, 1.0, -1.0],
        ])
        .unwrap();
        let cand = EmbeddingCandidate::from_fn(f, b.clone(), Provenance::Exact);
        let states = vec![vec![2.0, 0.5], vec![0.5, 4.0]];
        let r = verify_linearization(&cand, &log_radial(), &states, &[0.0, 0.1, 1.0, 10.0]).unwrap();
        assert!(r < 1e-12, "{r:e}");
        assert_eq!(
            verify_linearization(&cand, &log_radial(), &states, &[0.0]).unwrap(),
            0.0
        );
        let bad = cand.with_generator(b.shifted(0.1));
        let r = verify_linearization(&bad, &log_radial(), &states, &[1.0]).unwrap();
        assert!(r > 1e-2, "{r:e}");
    }

    #[test]
    fn constant_map_fails_quality() {
        let cand = EmbeddingCandidate::from_fn(
            state_fn(|_: &[f64]| vec![0.0, 0.0]),
            LinearGenerator::zeros(2).unwrap(),
            Provenance::Exact,
        );
        let samples: Vec<Vec<f64>> = (0..30).map(|k| vec![1.0 + 0.1 * k as f64, 0.2 * k as f64]).collect();
        let rep = verify_embedding_quality(&cand, &log_radial(), &samples, None, &QualityOptions::default()).unwrap();
        assert_eq!(rep.injectivity_margin, 0.0);
        assert_eq!(rep.min_jacobian_sigma, 0.0);
        assert!(!rep.pass);
    }

    #[test]
    fn complement_is_orthonormal() {
        let t = vec![vec![0.6, 0.8, 0.0]];
        let c = orthonormal_complement(&t, 3);
        assert_eq!(c.len(), 2);
        for u in &c {
            assert!((euclid_norm(u) - 1.0).abs() < 1e-12);
            let d: f64 = u.iter().zip(&t[0]).map(|(a, b)| a * b).sum();
            assert!(d.abs() < 1e-12);
        }
        assert_eq!(min_singular_value(&[vec![1.0, 0.0], vec![0.0, 2.0]]), 1.0);
    }
}
