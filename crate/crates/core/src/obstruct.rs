//! Necessary conditions for smooth linearizability (planar Hopf indices,
//! dimension parity, Euler characteristic, surface type) and the one
//! sufficient condition: a quasiperiodic torus factor.

use crate::flows::{Chart, FlowSystem};
use crate::linalg::{rational_independence, FrequencyVector, Independence, LinalgError};
use crate::StateFn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, TAU};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObstructError {
    #[error("field vanishes (|f| = {min_norm:e}) on the sampling circle; shrink or move it")]
    ZeroOnCircle { min_norm: f64 },
    #[error("winding number unresolved with {samples} samples")]
    Unresolved { samples: usize },
    #[error("at least {MIN_SAMPLES} circle samples are required (got {0})")]
    TooFewSamples(usize),
    #[error("inconsistent facts: {0}")]
    InconsistentFacts(String),
    #[error("system has dimension {system}, torus factor has dimension {torus}")]
    DimensionMismatch { system: usize, torus: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("flow evaluation failed: {0}")]
    Flow(String),
}

pub const MIN_SAMPLES: usize = 64;
pub const MAX_SAMPLES: usize = 1 << 20;
pub const ZERO_NORM: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub location: Vec<f64>,
    pub index: i64,
    pub winding_samples: usize,
    pub min_field_norm_on_circle: f64,
    /// Total continuous angle turned by the field, in radians.
    pub accumulated_angle: f64,
}

/// Winding number of a planar field around `center` on a circle of `radius`.
pub fn hopf_index_2d(
    field: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    center: [f64; 2],
    radius: f64,
    n_samples: usize,
) -> Result<EquilibriumReport, ObstructError> {
    if n_samples < MIN_SAMPLES {
        return Err(ObstructError::TooFewSamples(n_samples));
    }
    let mut n = n_samples;
    loop {
        let (angle, min_norm, resolved) = accumulate(field, center, radius, n)?;
        if resolved {
            let turns = angle / TAU;
            let index = turns.round();
            if (angle - index * TAU).abs() > 0.1 {
                return Err(ObstructError::Unresolved { samples: n });
            }
            return Ok(EquilibriumReport {
                location: center.to_vec(),
                index: index as i64,
                winding_samples: n,
                min_field_norm_on_circle: min_norm,
                accumulated_angle: angle,
            });
        }
        if n >= MAX_SAMPLES {
            return Err(ObstructError::Unresolved { samples: n });
        }
        n = (2 * n).min(MAX_SAMPLES);
    }
}

/// Sum of per-step angle increments; `resolved` is false when some step
/// reaches a quarter turn.
fn accumulate(
    field: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    center: [f64; 2],
    radius: f64,
    n: usize,
) -> Result<(f64, f64, bool), ObstructError> {
    let values: Vec<[f64; 2]> = (0..n)
        .into_par_iter()
        .map(|k| {
            let a = TAU * k as f64 / n as f64;
            let f = field(&[center[0] + radius * a.cos(), center[1] + radius * a.sin()]);
            [f[0], f[1]]
        })
        .collect();
    let min_norm = values.iter().map(|v| v[0].hypot(v[1])).fold(f64::INFINITY, f64::min);
    if !(min_norm > ZERO_NORM) {
        return Err(ObstructError::ZeroOnCircle { min_norm });
    }
    let mut total = 0.0;
    for k in 0..n {
        let (p, q) = (values[k], values[(k + 1) % n]);
        let step = (p[0] * q[1] - p[1] * q[0]).atan2(p[0] * q[0] + p[1] * q[1]);
        if step.abs() >= FRAC_PI_2 {
            return Ok((total, min_norm, false));
        }
        total += step;
    }
    Ok((total, min_norm, true))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SurfaceType {
    Sphere,
    Torus,
    KleinBottle,
    ProjectivePlane,
    /// Connected sum of `genus` tori.
    Orientable {
        genus: u32,
    },
    /// Connected sum of `crosscaps` projective planes.
    NonOrientable {
        crosscaps: u32,
    },
}

impl SurfaceType {
    pub fn euler_characteristic(self) -> i64 {
        match self {
            SurfaceType::Sphere => 2,
            SurfaceType::Torus | SurfaceType::KleinBottle => 0,
            SurfaceType::ProjectivePlane => 1,
            SurfaceType::Orientable { genus } => 2 - 2 * i64::from(genus),
            SurfaceType::NonOrientable { crosscaps } => 2 - i64::from(crosscaps),
        }
    }

    /// One of the four surfaces that carry a smoothly linearizable flow with
    /// finitely many equilibria.
    pub fn admits_linearizable_flow(self) -> bool {
        matches!(
            self.normalized(),
            SurfaceType::Sphere | SurfaceType::Torus | SurfaceType::KleinBottle | SurfaceType::ProjectivePlane
        )
    }

    fn normalized(self) -> Self {
        match self {
            SurfaceType::Orientable { genus: 0 } => SurfaceType::Sphere,
            SurfaceType::Orientable { genus: 1 } => SurfaceType::Torus,
            SurfaceType::NonOrientable { crosscaps: 1 } => SurfaceType::ProjectivePlane,
            SurfaceType::NonOrientable { crosscaps: 2 } => SurfaceType::KleinBottle,
            s => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumFact {
    pub location: Vec<f64>,
    /// Hopf index when known.
    pub index: Option<i64>,
}

/// Facts about a compact manifold and a flow on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldFacts {
    pub dim: usize,
    /// Isolated equilibria.
    pub equilibria: Vec<EquilibriumFact>,
    /// True when `equilibria` lists every equilibrium.
    pub finitely_many_equilibria: bool,
    pub surface: Option<SurfaceType>,
    pub euler_characteristic: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    OddDimension,
    EulerCharacteristic,
    SurfaceClassification,
    HopfIndex,
    QuasiperiodicFactor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleOutcome {
    Satisfied,
    Violated,
    NotApplicable,
    Refused,
    Granted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedRule {
    pub rule: Rule,
    pub outcome: RuleOutcome,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateWitness {
    pub omega: Vec<f64>,
    pub bound: u32,
    pub n_samples: usize,
    pub max_residual: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "conclusion", rename_all = "snake_case")]
pub enum Conclusion {
    NotLinearizableSmooth { rule: Rule, reason: String },
    NoObstructionFound,
    CertifiedLinearizable { witness: CertificateWitness },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    #[serde(flatten)]
    pub conclusion: Conclusion,
    pub applied_rules: Vec<AppliedRule>,
}

impl Verdict {
    pub fn violated_rule(&self) -> Option<Rule> {
        match &self.conclusion {
            Conclusion::NotLinearizableSmooth { rule, .. } => Some(*rule),
            _ => None,
        }
    }
}

fn check_consistency(facts: &ManifoldFacts) -> Result<(), ObstructError> {
    if facts.dim == 0 {
        return Err(ObstructError::InconsistentFacts("dimension must be positive".into()));
    }
    if let Some(s) = facts.surface {
        if facts.dim != 2 {
            return Err(ObstructError::InconsistentFacts(format!(
                "surface type {s:?} given for a {}-dimensional manifold",
                facts.dim
            )));
        }
        if let Some(chi) = facts.euler_characteristic {
            if chi != s.euler_characteristic() {
                return Err(ObstructError::InconsistentFacts(format!(
                    "Euler characteristic {chi} does not match {s:?} ({})",
                    s.euler_characteristic()
                )));
            }
        }
    }
    if let Some(chi) = facts.euler_characteristic {
        if facts.dim % 2 == 1 && chi != 0 {
            return Err(ObstructError::InconsistentFacts(format!(
                "odd-dimensional compact manifold with Euler characteristic {chi}"
            )));
        }
        let indices: Option<Vec<i64>> = facts.equilibria.iter().map(|e| e.index).collect();
        if let (true, Some(ix)) = (facts.finitely_many_equilibria, indices) {
            let sum: i64 = ix.iter().sum();
            if sum != chi {
                return Err(ObstructError::InconsistentFacts(format!(
                    "index sum {sum} differs from Euler characteristic {chi}"
                )));
            }
        }
    }
    Ok(())
}

/// Applies the odd-dimension, Euler-characteristic, surface and Hopf-index
/// rules in that order and stops at the first violation. These conditions
/// are necessary only, so the best outcome is `NoObstructionFound`.
pub fn smooth_linearizability_verdict(facts: &ManifoldFacts) -> Result<Verdict, ObstructError> {
    check_consistency(facts)?;
    let mut applied = Vec::new();
    let n_eq = facts.equilibria.len();
    let violate = |rule: Rule, reason: String, applied: &mut Vec<AppliedRule>| {
        applied.push(AppliedRule {
            rule,
            outcome: RuleOutcome::Violated,
            detail: reason.clone(),
        });
        Conclusion::NotLinearizableSmooth { rule, reason }
    };
    let pass = |rule: Rule, outcome: RuleOutcome, detail: String, applied: &mut Vec<AppliedRule>| {
        applied.push(AppliedRule { rule, outcome, detail });
    };

    if facts.dim % 2 == 1 && n_eq > 0 {
        let c = violate(
            Rule::OddDimension,
            format!("odd dimension {} with {n_eq} isolated equilibria", facts.dim),
            &mut applied,
        );
        return Ok(Verdict {
            conclusion: c,
            applied_rules: applied,
        });
    }
    pass(
        Rule::OddDimension,
        if n_eq == 0 {
            RuleOutcome::NotApplicable
        } else {
            RuleOutcome::Satisfied
        },
        format!("dimension {}, {n_eq} isolated equilibria", facts.dim),
        &mut applied,
    );

    match (facts.euler_characteristic, facts.finitely_many_equilibria) {
        (Some(chi), true) if chi < 0 || chi != n_eq as i64 => {
            let c = violate(
                Rule::EulerCharacteristic,
                format!("Euler characteristic {chi} but {n_eq} equilibria (must be equal and non-negative)"),
                &mut applied,
            );
            return Ok(Verdict {
                conclusion: c,
                applied_rules: applied,
            });
        }
        (Some(chi), true) => pass(
            Rule::EulerCharacteristic,
            RuleOutcome::Satisfied,
            format!("Euler characteristic {chi} equals the number of equilibria"),
            &mut applied,
        ),
        _ => pass(
            Rule::EulerCharacteristic,
            RuleOutcome::NotApplicable,
            "Euler characteristic unknown or equilibria not finite".into(),
            &mut applied,
        ),
    }

    match (facts.surface, facts.finitely_many_equilibria) {
        (Some(s), true) if !s.admits_linearizable_flow() => {
            let c = violate(
                Rule::SurfaceClassification,
                format!("{s:?} is not a torus, sphere, Klein bottle or projective plane"),
                &mut applied,
            );
            return Ok(Verdict {
                conclusion: c,
                applied_rules: applied,
            });
        }
        (Some(s), true) => pass(
            Rule::SurfaceClassification,
            RuleOutcome::Satisfied,
            format!("{s:?} is admissible"),
            &mut applied,
        ),
        _ => pass(
            Rule::SurfaceClassification,
            RuleOutcome::NotApplicable,
            "not a surface with finitely many equilibria".into(),
            &mut applied,
        ),
    }

    if let Some((k, e)) = facts
        .equilibria
        .iter()
        .enumerate()
        .find(|(_, e)| e.index.is_some_and(|i| i != 1))
    {
        let c = violate(
            Rule::HopfIndex,
            format!(
                "equilibrium {k} at {:?} has Hopf index {}",
                e.location,
                e.index.unwrap_or_default()
            ),
            &mut applied,
        );
        return Ok(Verdict {
            conclusion: c,
            applied_rules: applied,
        });
    }
    pass(
        Rule::HopfIndex,
        if facts.equilibria.iter().any(|e| e.index.is_some()) {
            RuleOutcome::Satisfied
        } else {
            RuleOutcome::NotApplicable
        },
        "every known index equals 1".into(),
        &mut applied,
    );
    Ok(Verdict {
        conclusion: Conclusion::NoObstructionFound,
        applied_rules: applied,
    })
}

/// Grants a certificate iff `omega` has no integer relation with
/// coefficients up to `bound` and `Fmap(Phi^t x) = omega t + Fmap(x) mod 1`
/// holds on every sample. Both parts are relative to the bound and samples.
pub fn quasiperiodic_factor_certificate(
    sys: &FlowSystem,
    fmap: &StateFn,
    omega: &FrequencyVector,
    bound: u32,
    samples: &[(Vec<f64>, f64)],
    tol: f64,
) -> Result<Verdict, ObstructError> {
    let n = omega.len();
    if sys.dim() != n {
        return Err(ObstructError::DimensionMismatch {
            system: sys.dim(),
            torus: n,
        });
    }
    let independence = rational_independence(omega, bound, tol)?;
    let torus = Chart::unit_torus(n);
    let residuals: Vec<Result<f64, ObstructError>> = samples
        .par_iter()
        .map(|(x, t)| {
            let xt = sys.evolve(x, *t).map_err(|e| ObstructError::Flow(e.to_string()))?;
            let lhs = fmap(&xt);
            let fx = fmap(x);
            if lhs.len() != n || fx.len() != n {
                return Err(ObstructError::DimensionMismatch {
                    system: lhs.len(),
                    torus: n,
                });
            }
            let rhs: Vec<f64> = fx.iter().zip(omega.as_slice()).map(|(f, w)| f + w * t).collect();
            Ok(torus.distance(&lhs, &rhs))
        })
        .collect();
    let mut max_residual: f64 = 0.0;
    for r in residuals {
        max_residual = max_residual.max(r?);
    }

    let mut applied = Vec::new();
    let conclusion = match independence {
        Independence::Dependent { relation } => {
            applied.push(AppliedRule {
                rule: Rule::QuasiperiodicFactor,
                outcome: RuleOutcome::Refused,
                detail: format!("integer relation {relation:?} with |k_i| <= {bound}"),
            });
            Conclusion::NoObstructionFound
        }
        Independence::Independent { .. } if max_residual > tol => {
            applied.push(AppliedRule {
                rule: Rule::QuasiperiodicFactor,
                outcome: RuleOutcome::Refused,
                detail: format!("factor residual {max_residual:e} exceeds {tol:e}"),
            });
            Conclusion::NoObstructionFound
        }
        Independence::Independent { .. } => {
            applied.push(AppliedRule {
                rule: Rule::QuasiperiodicFactor,
                outcome: RuleOutcome::Granted,
                detail: format!(
                    "no integer relation with |k_i| <= {bound}; residual {max_residual:e} on {} samples",
                    samples.len()
                ),
            });
            Conclusion::CertifiedLinearizable {
                witness: CertificateWitness {
                    omega: omega.as_slice().to_vec(),
                    bound,
                    n_samples: samples.len(),
                    max_residual,
                    tol,
                },
            }
        }
    };
    Ok(Verdict {
        conclusion,
        applied_rules: applied,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle(field: &dyn Fn(&[f64]) -> Vec<f64>, r: f64) -> i64 {
        let n = 10_000;
        let ang: Vec<f64> = (0..=n)
            .map(|k| {
                let a = TAU * k as f64 / n as f64;
                let f = field(&[r * a.cos(), r * a.sin()]);
                f[1].atan2(f[0])
            })
            .collect();
        let mut total = 0.0;
        for w in ang.windows(2) {
            let mut d = w[1] - w[0];
            while d > std::f64::consts::PI {
                d -= TAU;
            }
            while d < -std::f64::consts::PI {
                d += TAU;
            }
            total += d;
        }
        (total / TAU).round() as i64
    }

    #[test]
    fn planar_indices_match_oracle() {
        let fields: Vec<(Box<dyn Fn(&[f64]) -> Vec<f64> + Sync>, i64)> = vec![
            (Box::new(|p: &[f64]| vec![-p[1], p[0]]), 1),
            (Box::new(|p: &[f64]| vec![p[0], -p[1]]), -1),
            (Box::new(|p: &[f64]| vec![p[0], p[1]]), 1),
            (
                Box::new(|p: &[f64]| vec![p[0] * p[0] - p[1] * p[1], 2.0 * p[0] * p[1]]),
                2,
            ),
            (
                Box::new(|p: &[f64]| vec![p[0] * p[0] - p[1] * p[1], -2.0 * p[0] * p[1]]),
                -2,
            ),
        ];
        for (f, expected) in &fields {
            let rep = hopf_index_2d(f.as_ref(), [0.0, 0.0], 1.0, 64).unwrap();
            assert_eq!(rep.index, *expected);
            assert_eq!(rep.index, oracle(f.as_ref(), 1.0));
            assert_eq!(hopf_index_2d(f.as_ref(), [0.0, 0.0], 0.5, 64).unwrap().index, *expected);
            assert_eq!(
                hopf_index_2d(f.as_ref(), [0.0, 0.0], 1.0, 128).unwrap().index,
                *expected
            );
        }
    }

    #[test]
    fn high_degree_forces_resampling() {
        let f = |p: &[f64]| {
            let (mut re, mut im) = (1.0, 0.0);
            for _ in 0..40 {
                (re, im) = (re * p[0] - im * p[1], re * p[1] + im * p[0]);
            }
            vec![re, im]
        };
        let rep = hopf_index_2d(&f, [0.0, 0.0], 1.0, 64).unwrap();
        assert_eq!(rep.index, 40);
        assert!(rep.winding_samples > 64);
    }

    #[test]
    fn zero_on_circle_and_sample_floor() {
        let f = |p: &[f64]| vec![p[0] - 1.0, p[1]];
        assert!(matches!(
            hopf_index_2d(&f, [0.0, 0.0], 1.0, 64),
            Err(ObstructError::ZeroOnCircle { .. })
        ));
        assert_eq!(
            hopf_index_2d(&f, [0.0, 0.0], 0.5, 10).unwrap_err(),
            ObstructError::TooFewSamples(10)
        );
        // Circle not enclosing the zero.
        assert_eq!(hopf_index_2d(&f, [0.0, 0.0], 0.5, 64).unwrap().index, 0);
    }

    fn facts(dim: usize, indices: &[i64], surface: Option<SurfaceType>, chi: Option<i64>) -> ManifoldFacts {
        ManifoldFacts {
            dim,
            equilibria: indices
                .iter()
                .map(|&i| EquilibriumFact {
                    location: vec![],
                    index: Some(i),
                })
                .collect(),
            finitely_many_equilibria: true,
            surface,
            euler_characteristic: chi,
        }
    }

    #[test]
    fn verdict_rules() {
        let v = smooth_linearizability_verdict(&facts(3, &[0], None, Some(0))).unwrap();
        assert_eq!(v.violated_rule(), Some(Rule::OddDimension));
        let v = smooth_linearizability_verdict(&facts(
            2,
            &[-1, -1],
            Some(SurfaceType::Orientable { genus: 2 }),
            Some(-2),
        ))
        .unwrap();
        assert_eq!(v.violated_rule(), Some(Rule::EulerCharacteristic));
        let v = smooth_linearizability_verdict(&facts(2, &[-1, -1], Some(SurfaceType::Orientable { genus: 2 }), None))
            .unwrap();
        assert_eq!(v.violated_rule(), Some(Rule::SurfaceClassification));
        let v = smooth_linearizability_verdict(&facts(2, &[1, 1], Some(SurfaceType::Sphere), Some(2))).unwrap();
        assert_eq!(v.conclusion, Conclusion::NoObstructionFound);
        let v = smooth_linearizability_verdict(&facts(2, &[-1], None, None)).unwrap();
        assert_eq!(v.violated_rule(), Some(Rule::HopfIndex));
        assert!(matches!(
            smooth_linearizability_verdict(&facts(2, &[1], Some(SurfaceType::Sphere), Some(2))),
            Err(ObstructError::InconsistentFacts(_))
        ));
    }

    #[test]
    fn surface_normalization() {
        assert!(SurfaceType::NonOrientable { crosscaps: 2 }.admits_linearizable_flow());
        assert!(!SurfaceType::NonOrientable { crosscaps: 3 }.admits_linearizable_flow());
        assert_eq!(SurfaceType::KleinBottle.euler_characteristic(), 0);
    }
}
