//! Example systems with exact flows, torus actions, embeddings, phase maps,
//! Lyapunov data and expected verdicts.

use crate::embed::{
    verify_linearization, EmbedError, EmbeddingCandidate, EscapeSequence, LyapunovData, Provenance, TransverseMap,
};
use crate::flows::{Chart, FlowSystem, FrameFn, Quotient};
use crate::linalg::{FrequencyVector, LinearGenerator};
use crate::obstruct::{EquilibriumFact, ManifoldFacts, SurfaceType};
use crate::phase::AttractorModel;
use crate::{sampler, scalar_fn, state_fn, Rng, Sampler, StateFn};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CatalogError {
    #[error("unknown catalog entry {name:?}; known entries: {known}", name = .0, known = ROSTER.join(", "))]
    UnknownEntry(String),
    #[error("entry {0} has no torus action")]
    MissingAction(String),
    #[error("entry {0} has no exact embedding")]
    MissingEmbedding(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

pub const ROSTER: [&str; 10] = [
    "quasiperiodic_torus_1",
    "quasiperiodic_torus_2",
    "quasiperiodic_torus_3",
    "sphere_rotation",
    "klein_bottle",
    "projective_plane",
    "product_attractor",
    "annulus_cubic",
    "log_radial",
    "saddle_plane",
];

/// Times of the standard residual grid.
pub const STANDARD_TIMES: [f64; 5] = [0.0, 0.1, 1.0, PI, 10.0];
pub const STANDARD_STATES: usize = 20;
pub const CLOUD_SIZE: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum ExpectedVerdict {
    LinearizableSmooth,
    LinearizableTopological,
    NotLinearizable { reason: String },
}

pub type ActionFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;

/// `(R/Z)^n` action with `Phi^t = action(omega t mod 1)`.
#[derive(Clone)]
pub struct TorusActionSpec {
    pub torus_dim: usize,
    pub action: ActionFn,
    pub omega: FrequencyVector,
}

/// An equilibrium with a planar chart in which its index can be computed.
#[derive(Clone)]
pub struct EquilibriumSpec {
    pub location: Vec<f64>,
    pub expected_index: i64,
    pub local_field: StateFn,
    pub local_center: [f64; 2],
    pub radius: f64,
}

/// Ingredients for the smooth builder: an embedding of the attractor and a
/// transverse map.
#[derive(Clone)]
pub struct SmoothData {
    pub attractor_embedding: (StateFn, LinearGenerator),
    pub transverse: TransverseMap,
}

#[derive(Clone)]
pub struct CatalogEntry {
    pub name: String,
    pub description: String,
    pub system: FlowSystem,
    pub action: Option<TorusActionSpec>,
    pub exact_embedding: Option<EmbeddingCandidate>,
    pub exact_phase: Option<StateFn>,
    pub lyapunov: Option<LyapunovData>,
    pub attractor: Option<AttractorModel>,
    /// Linearizing map of the attractor flow, used by the topological builder.
    pub attractor_embedding: Option<(StateFn, LinearGenerator)>,
    pub smooth: Option<SmoothData>,
    pub expected_verdict: ExpectedVerdict,
    pub equilibria: Vec<EquilibriumSpec>,
    /// Facts about the compact manifold the verdict rules apply to: the
    /// state space itself, or the attractor for basins.
    pub facts: Option<ManifoldFacts>,
    /// Map to a torus conjugating the flow to a translation.
    pub torus_factor: Option<(StateFn, FrequencyVector)>,
    pub sampler: Sampler,
    pub escape: Option<EscapeSequence>,
}

impl std::fmt::Debug for CatalogEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CatalogEntry").field("name", &self.name).finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSummary {
    pub location: Vec<f64>,
    pub expected_index: i64,
}

/// Serializable metadata of an entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntrySummary {
    pub name: String,
    pub description: String,
    pub chart: Chart,
    pub dim: usize,
    pub closed_form: bool,
    pub forward_only: bool,
    pub has_vector_field: bool,
    pub quotient: bool,
    pub torus_action_dim: Option<usize>,
    pub omega: Option<Vec<f64>>,
    pub embedding_dim: Option<usize>,
    pub generator: Option<LinearGenerator>,
    pub has_exact_phase: bool,
    pub has_lyapunov: bool,
    pub has_attractor: bool,
    pub has_smooth_data: bool,
    pub expected_verdict: ExpectedVerdict,
    pub equilibria: Vec<EquilibriumSummary>,
    pub facts: Option<ManifoldFacts>,
}

impl CatalogEntry {
    pub fn summary(&self) -> EntrySummary {
        let probe = (self.sampler)(&mut crate::seeded_rng(0));
        EntrySummary {
            name: self.name.clone(),
            description: self.description.clone(),
            chart: self.system.chart().clone(),
            dim: self.system.dim(),
            closed_form: self.system.is_closed_form(),
            forward_only: self.system.t_min(&probe).is_finite(),
            has_vector_field: self.system.field().is_some(),
            quotient: self.system.quotient().is_some(),
            torus_action_dim: self.action.as_ref().map(|a| a.torus_dim),
            omega: self.action.as_ref().map(|a| a.omega.as_slice().to_vec()),
            embedding_dim: self.exact_embedding.as_ref().map(|e| e.generator().dim()),
            generator: self.exact_embedding.as_ref().map(|e| e.generator().clone()),
            has_exact_phase: self.exact_phase.is_some(),
            has_lyapunov: self.lyapunov.is_some(),
            has_attractor: self.attractor.is_some(),
            has_smooth_data: self.smooth.is_some(),
            expected_verdict: self.expected_verdict.clone(),
            equilibria: self
                .equilibria
                .iter()
                .map(|e| EquilibriumSummary {
                    location: e.location.clone(),
                    expected_index: e.expected_index,
                })
                .collect(),
            facts: self.facts.clone(),
        }
    }

    /// `n` states drawn from the entry's sampler.
    pub fn sample_states(&self, n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
        (0..n).map(|_| (self.sampler)(rng)).collect()
    }
}

pub fn names() -> &'static [&'static str] {
    &ROSTER
}

pub fn get(name: &str) -> Result<CatalogEntry, CatalogError> {
    match name {
        "quasiperiodic_torus_1" => Ok(quasiperiodic_torus(1)),
        "quasiperiodic_torus_2" => Ok(quasiperiodic_torus(2)),
        "quasiperiodic_torus_3" => Ok(quasiperiodic_torus(3)),
        "sphere_rotation" => Ok(sphere_rotation()),
        "klein_bottle" => Ok(klein_bottle()),
        "projective_plane" => Ok(projective_plane()),
        "product_attractor" => Ok(product_attractor()),
        "annulus_cubic" => Ok(annulus_cubic()),
        "log_radial" => Ok(log_radial()),
        "saddle_plane" => Ok(saddle_plane()),
        _ => Err(CatalogError::UnknownEntry(name.to_string())),
    }
}

fn torus_omega(n: usize) -> Vec<f64> {
    [1.0, 2f64.sqrt(), 3f64.sqrt()][..n].to_vec()
}

/// Angles in `[0,1)^n` to unit circles in `R^{2n}`.
pub fn torus_embedding(theta: &[f64]) -> Vec<f64> {
    theta.iter().flat_map(|&a| [(TAU * a).cos(), (TAU * a).sin()]).collect()
}

pub fn torus_generator(omega: &[f64]) -> LinearGenerator {
    let blocks: Vec<LinearGenerator> = omega.iter().map(|&w| LinearGenerator::rotation(TAU * w)).collect();
    LinearGenerator::block_diag(&blocks).expect("non-empty")
}

fn quasiperiodic_torus(n: usize) -> CatalogEntry {
    let omega = torus_omega(n);
    let w = omega.clone();
    let w_field = omega.clone();
    let system = FlowSystem::closed_form(format!("quasiperiodic_torus_{n}"), Chart::unit_torus(n), move |t, x| {
        x.iter().zip(&w).map(|(a, b)| a + b * t).collect()
    })
    .with_field(move |_| w_field.clone());
    let freq = FrequencyVector(omega.clone());
    CatalogEntry {
        name: format!("quasiperiodic_torus_{n}"),
        description: format!("constant-speed rotation of the {n}-torus with frequencies {omega:?}"),
        system,
        action: Some(TorusActionSpec {
            torus_dim: n,
            action: Arc::new(|h, x| x.iter().zip(h).map(|(a, b)| (a + b).rem_euclid(1.0)).collect()),
            omega: freq.clone(),
        }),
        exact_embedding: Some(EmbeddingCandidate::from_fn(
            state_fn(torus_embedding),
            torus_generator(&omega),
            Provenance::Exact,
        )),
        exact_phase: None,
        lyapunov: None,
        attractor: None,
        attractor_embedding: None,
        smooth: None,
        expected_verdict: ExpectedVerdict::LinearizableSmooth,
        equilibria: Vec::new(),
        facts: Some(ManifoldFacts {
            dim: n,
            equilibria: Vec::new(),
            finitely_many_equilibria: true,
            surface: (n == 2).then_some(SurfaceType::Torus),
            euler_characteristic: Some(0),
        }),
        torus_factor: Some((state_fn(|x: &[f64]| x.to_vec()), freq)),
        sampler: sampler(move |rng: &mut Rng| (0..n).map(|_| rng.gen::<f64>()).collect()),
        escape: None,
    }
}

fn rotate_xy(x: &[f64], angle: f64) -> Vec<f64> {
    let (s, c) = angle.sin_cos();
    let mut out = x.to_vec();
    out[0] = c * x[0] - s * x[1];
    out[1] = s * x[0] + c * x[1];
    out
}

fn sphere_frame(p: &[f64]) -> Vec<Vec<f64>> {
    let a = if p[2].abs() < 0.9 {
        [0.0, 0.0, 1.0]
    } else {
        [1.0, 0.0, 0.0]
    };
    let d = a[0] * p[0] + a[1] * p[1] + a[2] * p[2];
    let mut t1 = [a[0] - d * p[0], a[1] - d * p[1], a[2] - d * p[2]];
    let n = (t1[0] * t1[0] + t1[1] * t1[1] + t1[2] * t1[2]).sqrt();
    t1.iter_mut().for_each(|v| *v /= n);
    let t2 = [
        p[1] * t1[2] - p[2] * t1[1],
        p[2] * t1[0] - p[0] * t1[2],
        p[0] * t1[1] - p[1] * t1[0],
    ];
    vec![t1.to_vec(), t2.to_vec()]
}

fn sphere_point(rng: &mut Rng) -> Vec<f64> {
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let phi: f64 = rng.gen_range(0.0..TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    vec![r * phi.cos(), r * phi.sin(), z]
}

/// Near-uniform deterministic points on the unit sphere.
pub fn fibonacci_sphere(n: usize) -> Vec<Vec<f64>> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|k| {
            let z = 1.0 - (2 * k + 1) as f64 / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * k as f64;
            vec![r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

fn sphere_system(name: &str) -> FlowSystem {
    FlowSystem::closed_form(name, Chart::euclidean(3), |t, x| rotate_xy(x, TAU * t))
        .with_field(|x| vec![-TAU * x[1], TAU * x[0], 0.0])
        .with_tangent_frame(Arc::new(sphere_frame) as FrameFn)
}

fn pole_spec(s: f64) -> EquilibriumSpec {
    EquilibriumSpec {
        location: vec![0.0, 0.0, s],
        expected_index: 1,
        // Rotation field written in the (x, y) chart of the hemisphere.
        local_field: state_fn(|p: &[f64]| vec![-TAU * p[1], TAU * p[0]]),
        local_center: [0.0, 0.0],
        radius: 0.5,
    }
}

fn rotation_action() -> ActionFn {
    Arc::new(|h, x| rotate_xy(x, TAU * h[0]))
}

fn sphere_rotation() -> CatalogEntry {
    let b = LinearGenerator::block_diag(&[
        LinearGenerator::rotation(TAU),
        LinearGenerator::zeros(1).expect("dim 1"),
    ])
    .expect("blocks");
    CatalogEntry {
        name: "sphere_rotation".into(),
        description: "rotation of the unit sphere about its polar axis with period 1".into(),
        system: sphere_system("sphere_rotation"),
        action: Some(TorusActionSpec {
            torus_dim: 1,
            action: rotation_action(),
            omega: FrequencyVector(vec![1.0]),
        }),
        exact_embedding: Some(EmbeddingCandidate::from_fn(
            state_fn(|x: &[f64]| x.to_vec()),
            b,
            Provenance::Exact,
        )),
        exact_phase: None,
        lyapunov: None,
        attractor: None,
        attractor_embedding: None,
        smooth: None,
        expected_verdict: ExpectedVerdict::LinearizableSmooth,
        equilibria: vec![pole_spec(1.0), pole_spec(-1.0)],
        facts: Some(ManifoldFacts {
            dim: 2,
            equilibria: vec![
                EquilibriumFact {
                    location: vec![0.0, 0.0, 1.0],
                    index: Some(1),
                },
                EquilibriumFact {
                    location: vec![0.0, 0.0, -1.0],
                    index: Some(1),
                },
            ],
            finitely_many_equilibria: true,
            surface: Some(SurfaceType::Sphere),
            euler_characteristic: Some(2),
        }),
        torus_factor: None,
        sampler: sampler(sphere_point),
        escape: None,
    }
}

/// `(x, y) ~ (x + 1/2, 1 - y)` on the unit torus.
pub fn klein_involution(p: &[f64]) -> Vec<f64> {
    vec![(p[0] + 0.5).rem_euclid(1.0), (1.0 - p[1]).rem_euclid(1.0)]
}

/// Representative with `x` in `[0, 1/2)`.
pub fn klein_representative(p: &[f64]) -> Vec<f64> {
    if p[0] >= 0.5 {
        vec![p[0] - 0.5, (1.0 - p[1]).rem_euclid(1.0)]
    } else {
        p.to_vec()
    }
}

pub fn klein_embedding(p: &[f64]) -> Vec<f64> {
    let q = klein_representative(&Chart::unit_torus(2).canonicalize(p));
    let (x, y) = (TAU * q[0], TAU * q[1]);
    let sy = y.sin();
    vec![(2.0 * x).cos(), (2.0 * x).sin(), x.cos() * sy, x.sin() * sy, y.cos()]
}

fn klein_bottle() -> CatalogEntry {
    let system = FlowSystem::closed_form("klein_bottle", Chart::unit_torus(2), |t, x| vec![x[0] + t, x[1]])
        .with_field(|_| vec![1.0, 0.0])
        .with_quotient(Quotient {
            involution: state_fn(klein_involution),
            representative: state_fn(klein_representative),
        });
    let b = LinearGenerator::block_diag(&[
        LinearGenerator::rotation(2.0 * TAU),
        LinearGenerator::rotation(TAU),
        LinearGenerator::zeros(1).expect("dim 1"),
    ])
    .expect("blocks");
    CatalogEntry {
        name: "klein_bottle".into(),
        description: "translation in x on the torus modulo (x, y) ~ (x + 1/2, -y)".into(),
        system,
        action: Some(TorusActionSpec {
            torus_dim: 1,
            action: Arc::new(|h, x| klein_representative(&[(x[0] + h[0]).rem_euclid(1.0), x[1]])),
            omega: FrequencyVector(vec![1.0]),
        }),
        exact_embedding: Some(EmbeddingCandidate::from_fn(
            state_fn(klein_embedding),
            b,
            Provenance::Exact,
        )),
        exact_phase: None,
        lyapunov: None,
        attractor: None,
        attractor_embedding: None,
        smooth: None,
        expected_verdict: ExpectedVerdict::LinearizableSmooth,
        equilibria: Vec::new(),
        facts: Some(ManifoldFacts {
            dim: 2,
            equilibria: Vec::new(),
            finitely_many_equilibria: true,
            surface: Some(SurfaceType::KleinBottle),
            euler_characteristic: Some(0),
        }),
        torus_factor: None,
        sampler: sampler(|rng: &mut Rng| klein_representative(&[rng.gen::<f64>(), rng.gen::<f64>()])),
        escape: None,
    }
}

/// Upper-hemisphere representative of an antipodal pair.
pub fn projective_representative(p: &[f64]) -> Vec<f64> {
    let flip = p[2] < 0.0 || (p[2] == 0.0 && (p[1] < 0.0 || (p[1] == 0.0 && p[0] < 0.0)));
    if flip {
        p.iter().map(|v| -v).collect()
    } else {
        p.to_vec()
    }
}

/// `(z^2, s conj(z), s^2)` with `z = x + iy`.
pub fn projective_embedding(p: &[f64]) -> Vec<f64> {
    let (x, y, s) = (p[0], p[1], p[2]);
    vec![x * x - y * y, 2.0 * x * y, s * x, -s * y, s * s]
}

fn projective_plane() -> CatalogEntry {
    let system = sphere_system("projective_plane").with_quotient(Quotient {
        involution: state_fn(|p: &[f64]| p.iter().map(|v| -v).collect()),
        representative: state_fn(projective_representative),
    });
    let b = LinearGenerator::block_diag(&[
        LinearGenerator::rotation(2.0 * TAU),
        LinearGenerator::rotation(-TAU),
        LinearGenerator::zeros(1).expect("dim 1"),
    ])
    .expect("blocks");
    CatalogEntry {
        name: "projective_plane".into(),
        description: "sphere rotation descended to the real projective plane".into(),
        system,
        action: Some(TorusActionSpec {
            torus_dim: 1,
            action: Arc::new(|h, x| projective_representative(&rotate_xy(x, TAU * h[0]))),
            omega: FrequencyVector(vec![1.0]),
        }),
        exact_embedding: Some(EmbeddingCandidate::from_fn(
            state_fn(projective_embedding),
            b,
            Provenance::Exact,
        )),
        exact_phase: None,
        lyapunov: None,
        attractor: None,
        attractor_embedding: None,
        smooth: None,
        expected_verdict: ExpectedVerdict::LinearizableSmooth,
        equilibria: vec![pole_spec(1.0)],
        facts: Some(ManifoldFacts {
            dim: 2,
            equilibria: vec![EquilibriumFact {
                location: vec![0.0, 0.0, 1.0],
                index: Some(1),
            }],
            finitely_many_equilibria: true,
            surface: Some(SurfaceType::ProjectivePlane),
            euler_characteristic: Some(1),
        }),
        torus_factor: None,
        sampler: sampler(|rng: &mut Rng| projective_representative(&sphere_point(rng))),
        escape: None,
    }
}

fn product_frame(p: &[f64]) -> Vec<Vec<f64>> {
    let mut frame: Vec<Vec<f64>> = sphere_frame(&p[..3])
        .into_iter()
        .map(|mut v| {
            v.push(0.0);
            v
        })
        .collect();
    frame.push(vec![0.0, 0.0, 0.0, 1.0]);
    frame
}

fn sphere_projection(p: &[f64]) -> Vec<f64> {
    let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    vec![p[0] / n, p[1] / n, p[2] / n, 0.0]
}

fn product_attractor() -> CatalogEntry {
    let system = FlowSystem::closed_form("product_attractor", Chart::euclidean(4), |t, x| {
        let mut y = rotate_xy(x, TAU * t);
        y[3] = x[3] * (-t).exp();
        y
    })
    .with_field(|x| vec![-TAU * x[1], TAU * x[0], 0.0, -x[3]])
    .with_tangent_frame(Arc::new(product_frame) as FrameFn);
    let sphere_b = LinearGenerator::block_diag(&[
        LinearGenerator::rotation(TAU),
        LinearGenerator::zeros(1).expect("dim 1"),
    ])
    .expect("blocks");
    let b = LinearGenerator::block_diag(&[sphere_b.clone(), LinearGenerator::scalar(-1.0, 1)]).expect("blocks");
    let cloud: Vec<Vec<f64>> = fibonacci_sphere(CLOUD_SIZE)
        .into_iter()
        .map(|mut p| {
            p.push(0.0);
            p
        })
        .collect();
    let attractor = AttractorModel::new(cloud, system.clone())
        .expect("cloud size")
        .with_projector(state_fn(sphere_projection))
        .with_tangent_frame(Arc::new(|p: &[f64]| {
            sphere_frame(&p[..3])
                .into_iter()
                .map(|mut v| {
                    v.push(0.0);
                    v
                })
                .collect()
        }) as FrameFn);
    let level_set = state_fn(|p: &[f64]| {
        let a = &p[..3];
        if p[3] > 0.0 {
            vec![a[0], a[1], a[2], 0.0, 0.0, 0.0]
        } else {
            vec![0.0, 0.0, 0.0, a[0], a[1], a[2]]
        }
    });
    CatalogEntry {
        name: "product_attractor".into(),
        description: "sphere rotation times exponential contraction u' = -u; attractor is the sphere at u = 0".into(),
        system,
        action: None,
        exact_embedding: Some(EmbeddingCandidate::from_fn(
            state_fn(|x: &[f64]| x.to_vec()),
            b,
            Provenance::Exact,
        )),
        exact_phase: Some(state_fn(|x: &[f64]| vec![x[0], x[1], x[2], 0.0])),
        lyapunov: Some(LyapunovData {
            v: scalar_fn(|x: &[f64]| x[3] * x[3]),
            level: 1.0,
            level_set_embedding: level_set,
            sphere_dim: 6,
        }),
        attractor: Some(attractor),
        attractor_embedding: Some((state_fn(|x: &[f64]| x[..3].to_vec()), sphere_b)),
        smooth: None,
        expected_verdict: ExpectedVerdict::LinearizableSmooth,
        equilibria: vec![pole_spec(1.0), pole_spec(-1.0)]
            .into_iter()
            .map(|mut e| {
                e.location.push(0.0);
                e
            })
            .collect(),
        facts: Some(ManifoldFacts {
            dim: 2,
            equilibria: vec![
                EquilibriumFact {
                    location: vec![0.0, 0.0, 1.0, 0.0],
                    index: Some(1),
                },
                EquilibriumFact {
                    location: vec![0.0, 0.0, -1.0, 0.0],
                    index: Some(1),
                },
            ],
            finitely_many_equilibria: true,
            surface: Some(SurfaceType::Sphere),
            euler_characteristic: Some(2),
        }),
        torus_factor: None,
        sampler: sampler(|rng: &mut Rng| {
            let mut p = sphere_point(rng);
            p.push(rng.gen_range(-2.5..=2.5));
            p
        }),
        escape: Some(EscapeSequence {
            states: (1..=10).map(|k| vec![1.0, 0.0, 0.0, (k * k) as f64]).collect(),
            proxy: scalar_fn(|x: &[f64]| x[3] * x[3]),
        }),
    }
}

/// Unit-circle attractor in polar coordinates with its rotation flow.
fn circle_attractor() -> AttractorModel {
    let flow = FlowSystem::closed_form("unit_circle", Chart::PolarAnnulus, |t, x| vec![x[0], x[1] + t])
        .with_field(|x| vec![0.0, x[0]]);
    let cloud = (0..CLOUD_SIZE)
        .map(|k| vec![1.0, TAU * k as f64 / CLOUD_SIZE as f64])
        .collect();
    AttractorModel::new(cloud, flow)
        .expect("cloud size")
        .with_projector(state_fn(|x: &[f64]| vec![1.0, x[1]]))
        .with_tangent_frame(Arc::new(|_: &[f64]| vec![vec![0.0, 1.0]]) as FrameFn)
}

/// Closed-form flow of `r' = -(r-1)^3`, `theta' = r`.
pub fn annulus_cubic_flow(t: f64, x: &[f64]) -> Vec<f64> {
    let (r0, th0) = (x[0], x[1]);
    let u0 = r0 - 1.0;
    if u0 == 0.0 {
        return vec![1.0, th0 + t];
    }
    let root = (2.0 * t + u0.powi(-2)).sqrt();
    if u0 > 0.0 {
        vec![1.0 + 1.0 / root, th0 - 1.0 / u0 + t + root]
    } else {
        vec![1.0 - 1.0 / root, th0 - 1.0 / u0 + t - root]
    }
}

/// Exclusive lower time bound of the annulus flow.
pub fn annulus_cubic_t_min(x: &[f64]) -> f64 {
    let u0 = x[0] - 1.0;
    if u0 == 0.0 {
        f64::NEG_INFINITY
    } else if u0 > 0.0 {
        -0.5 * u0.powi(-2)
    } else {
        0.5 * (1.0 - u0.powi(-2))
    }
}

fn annulus_cubic() -> CatalogEntry {
    let system = FlowSystem::closed_form("annulus_cubic", Chart::PolarAnnulus, annulus_cubic_flow)
        .with_field(|x| vec![-(x[0] - 1.0).powi(3), x[0]])
        .with_time_bound(annulus_cubic_t_min);
    CatalogEntry {
        name: "annulus_cubic".into(),
        description: "r' = -(r-1)^3, theta' = r on the punctured plane; attracting unit circle without asymptotic phase"
            .into(),
        system,
        action: None,
        exact_embedding: None,
        exact_phase: None,
        lyapunov: Some(LyapunovData {
            v: scalar_fn(|x: &[f64]| (x[0] - 1.0).powi(2)),
            level: 0.25,
            level_set_embedding: state_fn(|x: &[f64]| {
                if x[0] > 1.0 {
                    vec![x[1].cos(), x[1].sin(), 0.0, 0.0]
                } else {
                    vec![0.0, 0.0, x[1].cos(), x[1].sin()]
                }
            }),
            sphere_dim: 4,
        }),
        attractor: Some(circle_attractor()),
        attractor_embedding: Some((state_fn(|x: &[f64]| vec![x[1].cos(), x[1].sin()]), LinearGenerator::rotation(1.0))),
        smooth: None,
        expected_verdict: ExpectedVerdict::NotLinearizable {
            reason: "no continuous asymptotic phase: nearby orbits are not asymptotically in phase with any orbit on the limit cycle".into(),
        },
        equilibria: Vec::new(),
        facts: None,
        torus_factor: None,
        sampler: sampler(|rng: &mut Rng| {
            let r = if rng.gen::<bool>() { rng.gen_range(1.1..=3.0) } else { rng.gen_range(0.2..=0.9) };
            vec![r, rng.gen_range(0.0..TAU)]
        }),
        escape: None,
    }
}

/// Closed-form flow of `r' = -r ln r`, `theta' = 1 + ln r`.
pub fn log_radial_flow(t: f64, x: &[f64]) -> Vec<f64> {
    let v0 = x[0].ln();
    let d = (-t).exp();
    vec![(v0 * d).exp(), x[1] + t + v0 * (1.0 - d)]
}

pub fn log_radial_generator() -> LinearGenerator {
    LinearGenerator::block_diag(&[LinearGenerator::rotation(1.0), log_radial_transverse_generator()]).expect("blocks")
}

pub fn log_radial_transverse_generator() -> LinearGenerator {
    LinearGenerator::from_rows(&[vec![-1.0, -1.0], vec![1.0, -1.0]]).expect("2x2")
}

fn log_radial() -> CatalogEntry {
    let system = FlowSystem::closed_form("log_radial", Chart::PolarAnnulus, log_radial_flow)
        .with_field(|x| vec![-x[0] * x[0].ln(), 1.0 + x[0].ln()]);
    let exact = state_fn(|x: &[f64]| {
        let v = x[0].ln();
        let (s, c) = (x[1] + v).sin_cos();
        vec![c, s, v * c, v * s]
    });
    let g = state_fn(|x: &[f64]| {
        let v = x[0].ln();
        let (s, c) = (x[1] + v).sin_cos();
        vec![v * c, v * s]
    });
    let circle = state_fn(|x: &[f64]| vec![x[1].cos(), x[1].sin()]);
    CatalogEntry {
        name: "log_radial".into(),
        description: "r' = -r ln r, theta' = 1 + ln r; complete flow with a hyperbolic limit cycle at r = 1".into(),
        system,
        action: None,
        exact_embedding: Some(EmbeddingCandidate::from_fn(
            exact,
            log_radial_generator(),
            Provenance::Exact,
        )),
        exact_phase: Some(state_fn(|x: &[f64]| vec![1.0, x[1] + x[0].ln()])),
        lyapunov: Some(LyapunovData {
            v: scalar_fn(|x: &[f64]| x[0].ln().powi(2)),
            level: 1.0,
            level_set_embedding: state_fn(|x: &[f64]| {
                if x[0] > 1.0 {
                    vec![x[1].cos(), x[1].sin(), 0.0, 0.0]
                } else {
                    vec![0.0, 0.0, x[1].cos(), x[1].sin()]
                }
            }),
            sphere_dim: 4,
        }),
        attractor: Some(circle_attractor()),
        attractor_embedding: Some((circle.clone(), LinearGenerator::rotation(1.0))),
        smooth: Some(SmoothData {
            attractor_embedding: (circle, LinearGenerator::rotation(1.0)),
            transverse: TransverseMap {
                g,
                generator: log_radial_transverse_generator(),
                domain: None,
            },
        }),
        expected_verdict: ExpectedVerdict::LinearizableSmooth,
        equilibria: Vec::new(),
        facts: None,
        torus_factor: None,
        sampler: sampler(|rng: &mut Rng| vec![rng.gen_range(-2.5f64..=2.5).exp(), rng.gen_range(0.0..TAU)]),
        escape: Some(EscapeSequence {
            states: (1..=10).map(|k| vec![(k as f64).exp(), 0.0]).collect(),
            proxy: scalar_fn(|x: &[f64]| x[0].ln().powi(2)),
        }),
    }
}

fn saddle_plane() -> CatalogEntry {
    let system = FlowSystem::closed_form("saddle_plane", Chart::euclidean(2), |t, x| {
        vec![x[0] * t.exp(), x[1] * (-t).exp()]
    })
    .with_field(|x| vec![x[0], -x[1]]);
    let b = LinearGenerator::from_rows(&[vec![1.0, 0.0], vec![0.0, -1.0]]).expect("2x2");
    CatalogEntry {
        name: "saddle_plane".into(),
        description: "linear saddle x' = x, y' = -y on the plane".into(),
        system,
        action: None,
        exact_embedding: Some(EmbeddingCandidate::from_fn(
            state_fn(|x: &[f64]| x.to_vec()),
            b,
            Provenance::Exact,
        )),
        exact_phase: None,
        lyapunov: None,
        attractor: None,
        attractor_embedding: None,
        smooth: None,
        expected_verdict: ExpectedVerdict::LinearizableSmooth,
        equilibria: vec![EquilibriumSpec {
            location: vec![0.0, 0.0],
            expected_index: -1,
            local_field: state_fn(|p: &[f64]| vec![p[0], -p[1]]),
            local_center: [0.0, 0.0],
            radius: 1.0,
        }],
        facts: None,
        torus_factor: None,
        sampler: sampler(|rng: &mut Rng| vec![rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)]),
        escape: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionReport {
    pub n_samples: usize,
    pub tol: f64,
    /// `d(action(0, x), x)`.
    pub identity_max: f64,
    /// `d(action(h + h', x), action(h, action(h', x)))`.
    pub composition_max: f64,
    /// `d(Phi^t x, action(omega t mod 1, x))`.
    pub flow_max: f64,
    pub pass: bool,
}

/// Checks the three torus-action identities on random `(h, h', x, t)`.
pub fn verify_action(
    entry: &CatalogEntry,
    n_samples: usize,
    tol: f64,
    rng: &mut Rng,
) -> Result<ActionReport, CatalogError> {
    let spec = entry
        .action
        .as_ref()
        .ok_or_else(|| CatalogError::MissingAction(entry.name.clone()))?;
    let sys = &entry.system;
    let k = spec.torus_dim;
    let zero = vec![0.0; k];
    let mut rep = ActionReport {
        n_samples,
        tol,
        identity_max: 0.0,
        composition_max: 0.0,
        flow_max: 0.0,
        pass: false,
    };
    for _ in 0..n_samples {
        let x = sys.canonicalize(&(entry.sampler)(rng));
        let h: Vec<f64> = (0..k).map(|_| rng.gen::<f64>()).collect();
        let h2: Vec<f64> = (0..k).map(|_| rng.gen::<f64>()).collect();
        let t: f64 = rng.gen_range(-10.0..=10.0);
        let act = |h: &[f64], x: &[f64]| sys.canonicalize(&(spec.action)(h, x));
        rep.identity_max = rep.identity_max.max(sys.distance(&act(&zero, &x), &x));
        let sum: Vec<f64> = h.iter().zip(&h2).map(|(a, b)| (a + b).rem_euclid(1.0)).collect();
        rep.composition_max = rep
            .composition_max
            .max(sys.distance(&act(&sum, &x), &act(&h, &act(&h2, &x))));
        let ht: Vec<f64> = spec.omega.as_slice().iter().map(|w| (w * t).rem_euclid(1.0)).collect();
        let flowed = sys.evolve(&x, t).map_err(EmbedError::from)?;
        rep.flow_max = rep.flow_max.max(sys.distance(&flowed, &act(&ht, &x)));
    }
    rep.pass = rep.identity_max <= tol && rep.composition_max <= tol && rep.flow_max <= tol;
    Ok(rep)
}

/// `STANDARD_STATES` sampled states paired with `STANDARD_TIMES`.
pub fn standard_grid(entry: &CatalogEntry, rng: &mut Rng) -> (Vec<Vec<f64>>, Vec<f64>) {
    (entry.sample_states(STANDARD_STATES, rng), STANDARD_TIMES.to_vec())
}

/// `max |F(Phi^t x) - e^{Bt} F(x)|` for the entry's exact embedding.
pub fn exact_embedding_residual(entry: &CatalogEntry, states: &[Vec<f64>], times: &[f64]) -> Result<f64, CatalogError> {
    let cand = entry
        .exact_embedding
        .as_ref()
        .ok_or_else(|| CatalogError::MissingEmbedding(entry.name.clone()))?;
    Ok(verify_linearization(cand, &entry.system, states, times)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    #[test]
    fn roster_resolves() {
        for name in ROSTER {
            assert_eq!(get(name).unwrap().name, name);
        }
        assert!(matches!(get("torus"), Err(CatalogError::UnknownEntry(_))));
    }

    #[test]
    fn annulus_closed_form_example() {
        let e = get("annulus_cubic").unwrap();
        let y = e.system.evolve(&[2.0, 0.0], 4.0).unwrap();
        assert!((y[0] - 4.0 / 3.0).abs() < 1e-15);
        assert!((y[1] - 6.0).abs() < 1e-14);
        let y = e.system.evolve(&[1.0, 0.5], 3.0).unwrap();
        assert_eq!(y, vec![1.0, 3.5]);
        assert!(matches!(
            e.system.evolve(&[0.5, 0.0], -2.0),
            Err(crate::flows::FlowError::TimeOutOfDomain { .. })
        ));
    }

    #[test]
    fn log_radial_doubling_time() {
        let e = get("log_radial").unwrap();
        let y = e.system.evolve(&[2f64.exp(), 0.0], 2f64.ln()).unwrap();
        assert!((y[0] - 1f64.exp()).abs() < 1e-14);
    }

    #[test]
    fn exact_residuals_on_standard_grid() {
        let mut rng = seeded_rng(1);
        for name in ROSTER {
            let e = get(name).unwrap();
            if e.exact_embedding.is_none() {
                continue;
            }
            let (states, times) = standard_grid(&e, &mut rng);
            let r = exact_embedding_residual(&e, &states, &times).unwrap();
            assert!(r <= 1e-8, "{name}: {r:e}");
        }
    }

    #[test]
    fn actions_verify() {
        let mut rng = seeded_rng(2);
        for name in [
            "quasiperiodic_torus_2",
            "klein_bottle",
            "sphere_rotation",
            "projective_plane",
        ] {
            let rep = verify_action(&get(name).unwrap(), 500, 1e-9, &mut rng).unwrap();
            assert!(rep.pass, "{name}: {rep:?}");
        }
        assert!(matches!(
            verify_action(&get("log_radial").unwrap(), 10, 1e-9, &mut rng),
            Err(CatalogError::MissingAction(_))
        ));
    }

    #[test]
    fn klein_identified_points_share_images() {
        let p = [0.125, 0.3125];
        let q = klein_involution(&p);
        assert_eq!(klein_embedding(&p), klein_embedding(&q));
    }

    #[test]
    fn summaries_serialize() {
        for name in ROSTER {
            let s = get(name).unwrap().summary();
            let json = serde_json::to_string(&s).unwrap();
            assert_eq!(serde_json::from_str::<EntrySummary>(&json).unwrap(), s);
        }
    }
}
