use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::path::PathBuf;
use std::process::ExitCode;

mod commands;
mod parse;

#[derive(Debug, Parser)]
#[command(
    name = "flowlin",
    version,
    about = "Build, verify and refute linearizing embeddings of flows"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Inspect the built-in example systems.
    Catalog {
        #[command(subcommand)]
        action: CatalogAction,
    },
    /// Check F(Phi^t x) = e^{Bt} F(x) and embedding quality on random states.
    Verify(VerifyArgs),
    /// Construct an embedding from an attractor embedding and a Lyapunov function.
    Build(BuildArgs),
    /// Estimate the asymptotic phase of a point.
    Phase(PhaseArgs),
    /// Planar winding index of an isolated equilibrium.
    Index(IndexArgs),
    /// Necessary-condition verdict on smooth linearizability.
    Verdict(VerdictArgs),
    /// Quasiperiodic factor certificate for a frequency vector.
    Certify(CertifyArgs),
    /// Check or sample a quasiperiodic pinched torus family.
    Pinched(PinchedArgs),
    /// Fit an extended dynamic mode decomposition and diagnose it.
    Edmd(EdmdArgs),
}

#[derive(Debug, Subcommand)]
enum CatalogAction {
    /// Names and expected verdicts.
    List {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Metadata of one entry.
    Show {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum EmbeddingSource {
    Exact,
    Built,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum BuildMode {
    Topological,
    Smooth,
}

#[derive(Debug, Args, Serialize)]
struct VerifyArgs {
    #[arg(long)]
    system: String,
    #[arg(long, value_enum, default_value = "exact")]
    embedding: EmbeddingSource,
    #[arg(long, default_value = "200", value_parser = parse::count)]
    samples: usize,
    #[arg(long, default_value = "10", value_parser = parse::real)]
    tmax: f64,
    #[arg(long, default_value = "1e-6", value_parser = parse::real)]
    tol: f64,
    #[arg(long, default_value = "0", value_parser = parse::seed)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct BuildArgs {
    #[arg(long)]
    system: String,
    #[arg(long, value_enum, default_value = "topological")]
    mode: BuildMode,
    /// Basin states for the precondition checks.
    #[arg(long, default_value = "50", value_parser = parse::count)]
    basin: usize,
    /// States for the injectivity and Jacobian checks.
    #[arg(long, default_value = "1000", value_parser = parse::count)]
    samples: usize,
    #[arg(long, default_value = "1e-6", value_parser = parse::real)]
    tol: f64,
    #[arg(long, default_value = "0", value_parser = parse::seed)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct PhaseArgs {
    #[arg(long)]
    system: String,
    /// Comma-separated chart coordinates.
    #[arg(long, allow_hyphen_values = true, value_parser = parse::reals)]
    x: parse::Reals,
    #[arg(long, default_value = "geometric:1,2,12")]
    schedule: String,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct IndexArgs {
    #[arg(long)]
    system: String,
    /// Comma-separated location of the equilibrium.
    #[arg(long, allow_hyphen_values = true, value_parser = parse::reals)]
    equilibrium: parse::Reals,
    /// Defaults to the catalog's radius for the equilibrium.
    #[arg(long, value_parser = parse::real)]
    radius: Option<f64>,
    #[arg(long, default_value = "1024", value_parser = parse::count)]
    samples: usize,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct VerdictArgs {
    #[arg(long)]
    system: String,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct CertifyArgs {
    #[arg(long)]
    system: String,
    /// Comma-separated frequencies; `sqrt(x)` is accepted.
    #[arg(long, value_parser = parse::reals)]
    omega: parse::Reals,
    /// Coefficient bound for the independence search.
    #[arg(long = "Q", default_value = "50", value_parser = parse::count)]
    q: usize,
    #[arg(long, default_value = "100", value_parser = parse::count)]
    samples: usize,
    #[arg(long, default_value = "1e-9", value_parser = parse::real)]
    tol: f64,
    #[arg(long, default_value = "0", value_parser = parse::seed)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct PinchedArgs {
    /// Family description (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Verify linearity, quotient consistency and separation.
    #[arg(long)]
    check: bool,
    #[arg(long, default_value = "1000", value_parser = parse::count)]
    samples: usize,
    /// Initial point `{"theta": [...]}` whose embedded orbit is written as CSV.
    #[arg(long)]
    emit_trajectory: Option<PathBuf>,
    #[arg(long, default_value = "100", value_parser = parse::real)]
    tmax: f64,
    #[arg(long, default_value = "1000", value_parser = parse::count)]
    points: usize,
    #[arg(long, default_value = "0", value_parser = parse::seed)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct EdmdArgs {
    #[arg(long)]
    system: String,
    /// `fourier:d`, `monomial:d` or `custom:exact`.
    #[arg(long, default_value = "fourier:1")]
    dict: String,
    #[arg(long, default_value = "500", value_parser = parse::count)]
    pairs: usize,
    #[arg(long, default_value = "0.1", value_parser = parse::real)]
    step: f64,
    #[arg(long, default_value = "1e-10", value_parser = parse::real)]
    ridge: f64,
    #[arg(long, default_value = "0", value_parser = parse::seed)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("FLOWLIN_THREADS") else {
        return Ok(());
    };
    let n = parse::count(&v).map_err(|e| format!("FLOWLIN_THREADS: {e}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("FLOWLIN_THREADS: {e}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match commands::run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
