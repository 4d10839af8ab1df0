use crate::{
    BuildArgs, BuildMode, CatalogAction, CertifyArgs, Command, EdmdArgs, EmbeddingSource, IndexArgs, PhaseArgs,
    PinchedArgs, VerdictArgs, VerifyArgs,
};
use flowlin::catalog::{self, CatalogEntry, ExpectedVerdict};
use flowlin::edmd::{self, collect_snapshots, diagnose, Dictionary, DictionaryKind, EdmdError, FailureContext};
use flowlin::embed::{
    build_smooth_embedding, build_topological_embedding, verify_embedding_quality, verify_linearization,
    EmbeddingCandidate, Provenance, QualityOptions,
};
use flowlin::linalg::FrequencyVector;
use flowlin::obstruct::{
    hopf_index_2d, quasiperiodic_factor_certificate, smooth_linearizability_verdict, Conclusion, ObstructError,
};
use flowlin::phase::{estimate_phase, GeometricSchedule};
use flowlin::pinched::{verify_family, write_embedded_orbit, PinchedTorusSpec};
use flowlin::report::{all_pass, CheckResult};
use flowlin::{seeded_rng, state_fn, Rng};
use rand::Rng as _;
use serde::Serialize;
use std::f64::consts::PI;
use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unknown names, missing catalog data or failed preconditions.
    Usage(String),
    /// A computation failed.
    Failed(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failed(m) => f.write_str(m),
        }
    }
}

fn usage(m: impl Display) -> CliError {
    CliError::Usage(m.to_string())
}

fn failed(m: impl Display) -> CliError {
    CliError::Failed(m.to_string())
}

#[derive(Serialize)]
struct Report<'a, C: Serialize, R: Serialize> {
    tool_version: &'static str,
    command: &'static str,
    config: &'a C,
    result: R,
    checks: Vec<CheckResult>,
    pass: bool,
}

fn emit<C: Serialize, R: Serialize>(
    command: &'static str,
    config: &C,
    result: R,
    checks: Vec<CheckResult>,
    out: Option<&Path>,
) -> Result<bool, CliError> {
    let pass = all_pass(&checks);
    let report = Report {
        tool_version: env!("CARGO_PKG_VERSION"),
        command,
        config,
        result,
        checks,
        pass,
    };
    let text = serde_json::to_string_pretty(&report).map_err(failed)?;
    write_output(out, |w| writeln!(w, "{text}"))?;
    Ok(pass)
}

fn write_output<F>(out: Option<&Path>, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    match out {
        Some(path) => {
            let file = std::fs::File::create(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let mut w = std::io::BufWriter::new(file);
            body(&mut w)
                .and_then(|_| w.flush())
                .map_err(|e| failed(format!("{}: {e}", path.display())))
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            body(&mut w).map_err(|e| failed(format!("stdout: {e}")))
        }
    }
}

fn entry(name: &str) -> Result<CatalogEntry, CliError> {
    catalog::get(name).map_err(usage)
}

pub fn run(command: Command) -> Result<bool, CliError> {
    match command {
        Command::Catalog { action } => catalog_cmd(action),
        Command::Verify(a) => verify(&a),
        Command::Build(a) => build(&a),
        Command::Phase(a) => phase(&a),
        Command::Index(a) => index(&a),
        Command::Verdict(a) => verdict(&a),
        Command::Certify(a) => certify(&a),
        Command::Pinched(a) => pinched(&a),
        Command::Edmd(a) => edmd_cmd(&a),
    }
}

#[derive(Serialize)]
struct ListItem {
    name: String,
    expected_verdict: ExpectedVerdict,
    description: String,
}

fn catalog_cmd(action: CatalogAction) -> Result<bool, CliError> {
    let (items, out) = match action {
        CatalogAction::List { out } => {
            let items: Vec<ListItem> = catalog::names()
                .iter()
                .map(|n| {
                    let e = entry(n)?;
                    Ok(ListItem {
                        name: e.name,
                        expected_verdict: e.expected_verdict,
                        description: e.description,
                    })
                })
                .collect::<Result<_, CliError>>()?;
            (serde_json::to_value(items), out)
        }
        CatalogAction::Show { name, out } => (serde_json::to_value(entry(&name)?.summary()), out),
    };
    let text = serde_json::to_string_pretty(&items.map_err(failed)?).map_err(failed)?;
    write_output(out.as_deref(), |w| writeln!(w, "{text}"))?;
    Ok(true)
}

/// Explains why no phase map is available, with a phase estimate on one
/// sampled state when the entry has an attractor.
fn missing_phase(e: &CatalogEntry, rng: &mut Rng) -> CliError {
    let mut msg = format!("{} has no asymptotic phase map, so no embedding can be built", e.name);
    if let Some(a) = &e.attractor {
        let x = (e.sampler)(rng);
        if let Ok(est) = estimate_phase(&e.system, a, &x, &edmd::CERTIFICATE_SCHEDULE) {
            let status = serde_json::to_string(&est.classification).unwrap_or_default();
            msg.push_str(&format!("; phase estimate at {x:?}: {status}"));
        }
    }
    if let ExpectedVerdict::NotLinearizable { reason } = &e.expected_verdict {
        msg.push_str(&format!(" ({reason})"));
    }
    usage(msg)
}

fn topological(
    e: &CatalogEntry,
    basin: usize,
    rng: &mut Rng,
) -> Result<(EmbeddingCandidate, serde_json::Value), CliError> {
    let phase = e.exact_phase.clone().ok_or_else(|| missing_phase(e, rng))?;
    let (attractor, f0, lyap) = match (&e.attractor, &e.attractor_embedding, &e.lyapunov) {
        (Some(a), Some(f0), Some(l)) => (a, f0.clone(), l.clone()),
        _ => {
            return Err(usage(format!(
                "{} lacks an attractor model, attractor embedding or Lyapunov function",
                e.name
            )))
        }
    };
    let states = e.sample_states(basin, rng);
    let b = build_topological_embedding(&e.system, attractor, phase, f0, lyap, &states).map_err(usage)?;
    Ok((b.candidate, serde_json::to_value(b.diagnostics).map_err(failed)?))
}

fn smooth(e: &CatalogEntry, basin: usize, rng: &mut Rng) -> Result<(EmbeddingCandidate, serde_json::Value), CliError> {
    let phase = e.exact_phase.clone().ok_or_else(|| missing_phase(e, rng))?;
    let (attractor, data, lyap) = match (&e.attractor, &e.smooth, &e.lyapunov) {
        (Some(a), Some(s), Some(l)) => (a, s.clone(), l.clone()),
        _ => return Err(usage(format!("{} lacks the data for a smooth build", e.name))),
    };
    let states = e.sample_states(basin, rng);
    let b = build_smooth_embedding(
        &e.system,
        attractor,
        phase,
        data.attractor_embedding,
        data.transverse,
        lyap.v,
        lyap.level,
        &states,
    )
    .map_err(usage)?;
    Ok((b.candidate, serde_json::to_value(b.diagnostics).map_err(failed)?))
}

#[derive(Serialize)]
struct VerifyResult {
    system: String,
    provenance: Provenance,
    times: Vec<f64>,
    residual: f64,
    injectivity_margin: f64,
    min_jacobian_sigma: f64,
    properness_probe: Option<flowlin::embed::PropernessProbe>,
    build_diagnostics: Option<serde_json::Value>,
}

fn verify(a: &VerifyArgs) -> Result<bool, CliError> {
    let e = entry(&a.system)?;
    let mut rng = seeded_rng(a.seed);
    let (cand, diagnostics) = match a.embedding {
        EmbeddingSource::Exact => (
            e.exact_embedding
                .clone()
                .ok_or_else(|| usage(format!("{} has no exact embedding; try --embedding built", e.name)))?,
            None,
        ),
        EmbeddingSource::Built => {
            let (c, d) = topological(&e, 50, &mut rng)?;
            (c, Some(d))
        }
    };
    let states = e.sample_states(a.samples, &mut rng);
    let times = vec![0.0, a.tmax / 100.0, a.tmax / 10.0, a.tmax * PI / 10.0, a.tmax];
    let residual = verify_linearization(&cand, &e.system, &states, &times).map_err(failed)?;
    let q = verify_embedding_quality(&cand, &e.system, &states, e.escape.as_ref(), &QualityOptions::default())
        .map_err(failed)?;
    let mut checks = vec![CheckResult::at_most("linearization_residual", residual, a.tol)];
    checks.extend(q.checks.iter().cloned());
    let result = VerifyResult {
        system: e.name.clone(),
        provenance: cand.provenance(),
        times,
        residual,
        injectivity_margin: q.injectivity_margin,
        min_jacobian_sigma: q.min_jacobian_sigma,
        properness_probe: q.properness_probe,
        build_diagnostics: diagnostics,
    };
    emit("verify", a, result, checks, a.out.as_deref())
}

#[derive(Serialize)]
struct BuildResult {
    system: String,
    provenance: Provenance,
    embedding_dim: usize,
    generator: Vec<Vec<f64>>,
    diagnostics: serde_json::Value,
    residual: f64,
    injectivity_margin: f64,
    min_jacobian_sigma: f64,
    properness_probe: Option<flowlin::embed::PropernessProbe>,
}

fn build(a: &BuildArgs) -> Result<bool, CliError> {
    let e = entry(&a.system)?;
    let mut rng = seeded_rng(a.seed);
    let (cand, diagnostics) = match a.mode {
        BuildMode::Topological => topological(&e, a.basin, &mut rng)?,
        BuildMode::Smooth => smooth(&e, a.basin, &mut rng)?,
    };
    let (states, times) = catalog::standard_grid(&e, &mut rng);
    let residual = verify_linearization(&cand, &e.system, &states, &times).map_err(failed)?;
    let samples = e.sample_states(a.samples, &mut rng);
    let q = verify_embedding_quality(
        &cand,
        &e.system,
        &samples,
        e.escape.as_ref(),
        &QualityOptions::default(),
    )
    .map_err(failed)?;
    let mut checks = vec![CheckResult::at_most("linearization_residual", residual, a.tol)];
    checks.extend(q.checks.iter().cloned());
    let b = cand.generator().matrix();
    let result = BuildResult {
        system: e.name.clone(),
        provenance: cand.provenance(),
        embedding_dim: b.nrows(),
        generator: b.row_iter().map(|r| r.iter().copied().collect()).collect(),
        diagnostics,
        residual,
        injectivity_margin: q.injectivity_margin,
        min_jacobian_sigma: q.min_jacobian_sigma,
        properness_probe: q.properness_probe,
    };
    emit("build", a, result, checks, a.out.as_deref())
}

#[derive(Serialize)]
struct PhaseResult {
    system: String,
    estimate: flowlin::phase::PhaseEstimate,
    exact_phase: Option<Vec<f64>>,
    exact_error: Option<f64>,
}

/// Agreement floor for the exact phase comparison.
const PHASE_ERROR_FLOOR: f64 = 1e-12;

fn phase(a: &PhaseArgs) -> Result<bool, CliError> {
    let e = entry(&a.system)?;
    let attractor = e
        .attractor
        .as_ref()
        .ok_or_else(|| usage(format!("{} has no attractor model", e.name)))?;
    let schedule: GeometricSchedule = a.schedule.parse().map_err(usage)?;
    let x = &a.x.0;
    if x.len() != e.system.dim() {
        return Err(usage(format!("--x needs {} coordinates", e.system.dim())));
    }
    let est = estimate_phase(&e.system, attractor, x, &schedule).map_err(failed)?;
    let mut checks = Vec::new();
    let (mut exact_phase, mut exact_error) = (None, None);
    if let Some(p) = &e.exact_phase {
        let want = attractor.restricted_flow().canonicalize(&p(x));
        let got = est.estimates.last().expect("at least two horizons");
        let err = attractor.restricted_flow().distance(&want, got);
        let t = *est.horizons.last().expect("at least two horizons");
        checks.push(CheckResult::at_most(
            "exact_phase_error",
            err,
            (3.0 * (-t).exp()).max(PHASE_ERROR_FLOOR),
        ));
        exact_phase = Some(want);
        exact_error = Some(err);
    }
    let result = PhaseResult {
        system: e.name.clone(),
        estimate: est,
        exact_phase,
        exact_error,
    };
    emit("phase", a, result, checks, a.out.as_deref())
}

#[derive(Serialize)]
struct IndexResult {
    system: String,
    radius: f64,
    expected_index: Option<i64>,
    report: flowlin::obstruct::EquilibriumReport,
}

fn index(a: &IndexArgs) -> Result<bool, CliError> {
    let e = entry(&a.system)?;
    let loc = &a.equilibrium.0;
    let known = e
        .equilibria
        .iter()
        .find(|s| s.location.len() == loc.len() && s.location.iter().zip(loc).all(|(p, q)| (p - q).abs() <= 1e-9));
    let (field, center, radius, expected) = match known {
        Some(s) => (
            s.local_field.clone(),
            s.local_center,
            a.radius.unwrap_or(s.radius),
            Some(s.expected_index),
        ),
        None => match (e.system.field(), loc.len(), a.radius) {
            (Some(f), 2, Some(r)) if e.system.chart() == &flowlin::flows::Chart::euclidean(2) => {
                (f.clone(), [loc[0], loc[1]], r, None)
            }
            _ => {
                let listed: Vec<&Vec<f64>> = e.equilibria.iter().map(|s| &s.location).collect();
                return Err(usage(format!(
                    "{loc:?} is not a catalogued equilibrium of {} (known: {listed:?}); an uncatalogued point needs a planar field and --radius",
                    e.name
                )));
            }
        },
    };
    let f = move |x: &[f64]| field(x);
    let report = hopf_index_2d(&f, center, radius, a.samples).map_err(|err| match err {
        ObstructError::TooFewSamples(_) => usage(err),
        other => failed(other),
    })?;
    let checks = expected
        .map(|k| {
            vec![CheckResult::new(
                "index",
                report.index as f64,
                flowlin::report::Comparison::Equals,
                k as f64,
            )]
        })
        .unwrap_or_default();
    let result = IndexResult {
        system: e.name.clone(),
        radius,
        expected_index: expected,
        report,
    };
    emit("index", a, result, checks, a.out.as_deref())
}

#[derive(Serialize)]
struct VerdictResult {
    system: String,
    verdict: flowlin::obstruct::Verdict,
    expected_verdict: ExpectedVerdict,
}

fn verdict(a: &VerdictArgs) -> Result<bool, CliError> {
    let e = entry(&a.system)?;
    let facts = e
        .facts
        .as_ref()
        .ok_or_else(|| usage(format!("{} has no recorded manifold facts", e.name)))?;
    let v = smooth_linearizability_verdict(facts).map_err(failed)?;
    // Necessary conditions only: an obstruction contradicts a linearizable
    // expectation, but finding none proves nothing.
    let contradiction = matches!(v.conclusion, Conclusion::NotLinearizableSmooth { .. })
        && !matches!(e.expected_verdict, ExpectedVerdict::NotLinearizable { .. });
    let checks = vec![CheckResult::flag("consistent_with_catalog", !contradiction)];
    let result = VerdictResult {
        system: e.name.clone(),
        verdict: v,
        expected_verdict: e.expected_verdict.clone(),
    };
    emit("verdict", a, result, checks, a.out.as_deref())
}

#[derive(Serialize)]
struct CertifyResult {
    system: String,
    verdict: flowlin::obstruct::Verdict,
    torus_embedding_residual: Option<f64>,
}

/// Residual threshold for the torus embedding of a granted certificate.
const GRANTED_RESIDUAL_TOL: f64 = 1e-8;

fn certify(a: &CertifyArgs) -> Result<bool, CliError> {
    let e = entry(&a.system)?;
    let (fmap, _) = e
        .torus_factor
        .clone()
        .ok_or_else(|| usage(format!("{} has no torus factor map", e.name)))?;
    let omega = FrequencyVector::new(a.omega.0.clone()).map_err(usage)?;
    let bound = u32::try_from(a.q).map_err(usage)?;
    let mut rng = seeded_rng(a.seed);
    let samples: Vec<(Vec<f64>, f64)> = (0..a.samples)
        .map(|_| ((e.sampler)(&mut rng), rng.gen_range(-10.0..=10.0)))
        .collect();
    let v = quasiperiodic_factor_certificate(&e.system, &fmap, &omega, bound, &samples, a.tol).map_err(usage)?;
    let granted = matches!(v.conclusion, Conclusion::CertifiedLinearizable { .. });
    let mut checks = vec![CheckResult::flag("certificate_granted", granted)];
    let mut torus_embedding_residual = None;
    if granted {
        let f = fmap.clone();
        let cand = EmbeddingCandidate::from_fn(
            state_fn(move |x: &[f64]| catalog::torus_embedding(&f(x))),
            catalog::torus_generator(omega.as_slice()),
            Provenance::Exact,
        );
        let (states, times) = catalog::standard_grid(&e, &mut rng);
        let r = verify_linearization(&cand, &e.system, &states, &times).map_err(failed)?;
        checks.push(CheckResult::at_most(
            "torus_embedding_residual",
            r,
            GRANTED_RESIDUAL_TOL,
        ));
        torus_embedding_residual = Some(r);
    }
    let result = CertifyResult {
        system: e.name.clone(),
        verdict: v,
        torus_embedding_residual,
    };
    emit("certify", a, result, checks, a.out.as_deref())
}

#[derive(Serialize)]
struct PinchedResult {
    n: usize,
    m: usize,
    omega: Vec<f64>,
    stationary: bool,
    embedding_dim: usize,
    report: flowlin::pinched::FamilyReport,
}

#[derive(serde::Deserialize)]
struct InitialPoint {
    theta: Vec<f64>,
}

fn read(path: &PathBuf) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn pinched(a: &PinchedArgs) -> Result<bool, CliError> {
    let spec = PinchedTorusSpec::from_json(&read(&a.spec)?).map_err(|e| usage(format!("{}: {e}", a.spec.display())))?;
    match (&a.emit_trajectory, a.check) {
        (Some(_), true) => Err(usage("--check and --emit-trajectory are exclusive")),
        (None, false) => Err(usage("pass --check or --emit-trajectory <x0.json>")),
        (Some(x0), false) => {
            let p: InitialPoint =
                serde_json::from_str(&read(x0)?).map_err(|e| usage(format!("{}: {e}", x0.display())))?;
            let point = spec.point(&p.theta).map_err(usage)?;
            write_output(a.out.as_deref(), |w| {
                write_embedded_orbit(&spec, &point, a.tmax, a.points, w)
            })?;
            Ok(true)
        }
        (None, true) => {
            let mut rng = seeded_rng(a.seed);
            let report = verify_family(&spec, a.samples, &mut rng).map_err(usage)?;
            let checks = report.checks.clone();
            let result = PinchedResult {
                n: spec.n(),
                m: spec.m(),
                omega: spec.omega().to_vec(),
                stationary: spec.is_stationary(),
                embedding_dim: spec.embedding_dim(),
                report,
            };
            emit("pinched", a, result, checks, a.out.as_deref())
        }
    }
}

#[derive(Serialize)]
struct EdmdResult {
    system: String,
    training_pairs: usize,
    model: edmd::EdmdModel,
    diagnosis: edmd::EdmdDiagnosis,
}

/// Holdout pairs drawn after the training pairs.
fn holdout_count(pairs: usize) -> usize {
    (pairs / 4).max(50)
}

fn edmd_cmd(a: &EdmdArgs) -> Result<bool, CliError> {
    let e = entry(&a.system)?;
    let kind: DictionaryKind = a.dict.parse().map_err(usage)?;
    let dict = Dictionary::for_entry(&e, &kind).map_err(usage)?;
    let mut rng = seeded_rng(a.seed);
    let train_states = e.sample_states(a.pairs, &mut rng);
    let hold_states = e.sample_states(holdout_count(a.pairs), &mut rng);
    let train = collect_snapshots(&e.system, &train_states, a.step, 1).map_err(usage)?;
    let hold = collect_snapshots(&e.system, &hold_states, a.step, 1).map_err(usage)?;
    let model = edmd::fit(&dict, &train, a.ridge, a.step).map_err(|err| match err {
        EdmdError::RankDeficient { .. } | EdmdError::TooFewPairs { .. } | EdmdError::InvalidInput(_) => usage(err),
        other => failed(other),
    })?;
    let diagnosis = diagnose(&model, &dict, &e.system, &hold, Some(FailureContext::from_entry(&e))).map_err(failed)?;
    let result = EdmdResult {
        system: e.name.clone(),
        training_pairs: train.len(),
        model,
        diagnosis,
    };
    emit("edmd", a, result, Vec::new(), a.out.as_deref())
}
