use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::{json, Value};

use isospectral::darboux::{compose, TransformSpec};
use isospectral::matrix::{c, singular_values};
use isospectral::potential::{matrix_to_json, MatrixPotential, Potential};
use isospectral::propagator::{shoot, PotentialSamples};
use isospectral::report::{spectrum_report, verify_report};
use isospectral::spectral_data::{attach_all_sampled, default_contour_radius, m_residue_with, WeylFunction};
use isospectral::spectrum::compute_spectrum_sampled;
use isospectral::verify::{any_failed, run_suite, SuiteOptions};
use isospectral::{Error, SolverConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_REJECTED: u8 = 4;
const EXIT_VERIFY: u8 = 5;

const DEFAULT_LAMBDA_MAX: f64 = 100.0;

#[derive(Parser, Debug)]
#[command(name = "isospec", version, about = "Spectral data and isospectral transforms for matrix Sturm-Liouville operators")]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Shared {
    /// RK4 steps on [0, 1] (even, >= 16)
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Spectral cutoff
    #[arg(long, global = true)]
    lambda_max: Option<f64>,
    /// Relative singular-value threshold for kernel membership
    #[arg(long, global = true)]
    sv_tol: Option<f64>,
    /// Worker threads
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed for random potentials and random test points
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (stdout if omitted)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON config file; flags take precedence over it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Eigenvalues, multiplicities and eigenspaces
    Spectrum {
        potential: PathBuf,
        /// Also write a CSV scan of sigma_min(phi(1, lambda)) over [0, lambda_max]
        #[arg(long)]
        scan_csv: Option<PathBuf>,
        #[arg(long, default_value_t = 401)]
        scan_points: usize,
    },
    /// Spectrum plus per-group spectral data and contour residues
    Data { potential: PathBuf },
    /// Apply one or more transforms and write the result as a grid potential
    Transform {
        potential: PathBuf,
        spec: PathBuf,
        /// Where to write transform diagnostics (JSON)
        #[arg(long)]
        diagnostics: Option<PathBuf>,
        #[arg(long, default_value_t = isospectral::potential::MATERIALIZE_NODES)]
        nodes: usize,
    },
    /// Run the verification suite
    Verify {
        potential: PathBuf,
        /// Transform spec to check instead of the default norming change
        #[arg(long)]
        transform: Option<PathBuf>,
    },
    /// CSV for plotting: potential entries, a sigma_min scan, or eigenvalues of a report
    Plot {
        input: PathBuf,
        /// Scan sigma_min(phi(1, lambda)) instead of sampling V
        #[arg(long)]
        sigma_scan: bool,
        #[arg(long, default_value_t = 201)]
        points: usize,
    },
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    steps: Option<usize>,
    fd_mesh: Option<usize>,
    sv_tol: Option<f64>,
    cluster_tol: Option<f64>,
    lambda_margin: Option<f64>,
    contour_nodes: Option<usize>,
    contour_radius_factor: Option<f64>,
    lambda_max: Option<f64>,
    seed: Option<u64>,
    jobs: Option<usize>,
}

/// Resolved settings: flags over config file over defaults.
#[derive(Debug)]
struct RunConfig {
    solver: SolverConfig,
    lambda_max: f64,
    seed: u64,
    jobs: Option<usize>,
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Lib(Error),
    Verification(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Parse { .. } | Error::Io(_) => EXIT_PARSE,
        Error::RejectedTarget { .. } => EXIT_REJECTED,
        Error::ContractViolation(_) => EXIT_USAGE,
        _ => EXIT_SOLVER,
    }
}

fn resolve(shared: &Shared) -> Result<RunConfig, Failure> {
    let file: FileConfig = match &shared.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| {
                Error::Parse { context: format!("{}: line {} column {}", p.display(), e.line(), e.column()), message: e.to_string() }
            })?
        }
        None => FileConfig::default(),
    };
    let d = SolverConfig::default();
    let solver = SolverConfig {
        steps: shared.steps.or(file.steps).unwrap_or(d.steps),
        fd_mesh: file.fd_mesh.unwrap_or(d.fd_mesh),
        sv_tol: shared.sv_tol.or(file.sv_tol).unwrap_or(d.sv_tol),
        cluster_tol: file.cluster_tol.unwrap_or(d.cluster_tol),
        lambda_margin: file.lambda_margin.unwrap_or(d.lambda_margin),
        contour_nodes: file.contour_nodes.unwrap_or(d.contour_nodes),
        contour_radius_factor: file.contour_radius_factor.unwrap_or(d.contour_radius_factor),
    };
    solver.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let lambda_max = shared.lambda_max.or(file.lambda_max).unwrap_or(DEFAULT_LAMBDA_MAX);
    if !lambda_max.is_finite() {
        return Err(Failure::Usage("--lambda-max must be finite".into()));
    }
    let jobs = shared.jobs.or(file.jobs);
    if jobs == Some(0) {
        return Err(Failure::Usage("--jobs must be at least 1".into()));
    }
    Ok(RunConfig { solver, lambda_max, seed: shared.seed.or(file.seed).unwrap_or(0), jobs, out: shared.out.clone() })
}

/// Loads a potential; a `random_fourier` file without a seed takes `--seed`.
fn load_potential(path: &Path, seed: u64) -> Result<Potential, Failure> {
    let text = std::fs::read_to_string(path)?;
    let mut v: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        context: format!("{}: line {} column {}", path.display(), e.line(), e.column()),
        message: e.to_string(),
    })?;
    if let Some(obj) = v.as_object_mut() {
        if obj.get("kind").and_then(Value::as_str) == Some("random_fourier") && !obj.contains_key("seed") {
            obj.insert("seed".into(), json!(seed));
        }
    }
    Potential::from_json(&v).map_err(|e| match e {
        Error::Parse { context, message } => Failure::Lib(Error::Parse { context: format!("{}: {context}", path.display()), message }),
        e => Failure::Lib(e),
    })
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("report serializes") + "\n"
}

fn sigma_scan_csv(samples: &PotentialSamples, lo: f64, hi: f64, points: usize) -> String {
    use rayon::prelude::*;
    let points = points.max(2);
    let rows: Vec<String> = (0..points)
        .into_par_iter()
        .map(|i| {
            let l = lo + (hi - lo) * i as f64 / (points - 1) as f64;
            let p = shoot(samples, c(l, 0.0), false).phi;
            let s = singular_values(&p);
            let det = isospectral::matrix::det(&p).norm();
            format!("{l},{},{},{}", s.last().unwrap(), s[0], det.log10())
        })
        .collect();
    let mut out = String::from("lambda,sigma_min,sigma_max,log10_abs_det\n");
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}

fn potential_csv(v: &Potential, points: usize) -> String {
    let n = v.dim();
    let points = points.max(2);
    let mut out = String::from("x");
    for i in 0..n {
        for j in 0..n {
            out.push_str(&format!(",v{}{}_re,v{}{}_im", i + 1, j + 1, i + 1, j + 1));
        }
    }
    out.push('\n');
    for k in 0..points {
        let x = k as f64 / (points - 1) as f64;
        let m = v.value(x);
        out.push_str(&format!("{x}"));
        for i in 0..n {
            for j in 0..n {
                out.push_str(&format!(",{},{}", m[(i, j)].re, m[(i, j)].im));
            }
        }
        out.push('\n');
    }
    out
}

fn cmd_spectrum(rc: &RunConfig, potential: &Path, scan_csv: &Option<PathBuf>, scan_points: usize) -> Result<(), Failure> {
    let v = load_potential(potential, rc.seed)?;
    let samples = PotentialSamples::new(&v, rc.solver.steps)?;
    let s = compute_spectrum_sampled(&v, &samples, rc.lambda_max, &rc.solver)?;
    if let Some(p) = scan_csv {
        std::fs::write(p, sigma_scan_csv(&samples, 0.0, rc.lambda_max, scan_points))?;
    }
    emit(&rc.out, &pretty(&spectrum_report(&v, &s)))
}

fn cmd_data(rc: &RunConfig, potential: &Path) -> Result<(), Failure> {
    let v = load_potential(potential, rc.seed)?;
    let samples = PotentialSamples::new(&v, rc.solver.steps)?;
    let s = compute_spectrum_sampled(&v, &samples, rc.lambda_max, &rc.solver)?;
    let s = attach_all_sampled(&samples, &s)?;
    let mut report = spectrum_report(&v, &s);
    let weyl = WeylFunction::from_reflected(samples.reflected(), Some(&s));
    let mut residues = Vec::new();
    for alpha in 1..=s.groups.len() {
        let radius = default_contour_radius(&s, alpha, rc.solver.contour_radius_factor)?;
        let r = m_residue_with(&weyl, &s, alpha, radius, rc.solver.contour_nodes)?;
        let b = &s.groups[alpha - 1].data()?.b_alpha;
        residues.push(json!({
            "alpha": alpha,
            "radius": radius,
            "nodes": rc.solver.contour_nodes,
            "residue": matrix_to_json(&r),
            "relative_error": (&r + b).norm() / b.norm(),
        }));
    }
    report["residues"] = Value::Array(residues);
    emit(&rc.out, &pretty(&report))
}

fn cmd_transform(rc: &RunConfig, potential: &Path, spec: &Path, diagnostics: &Option<PathBuf>, nodes: usize) -> Result<(), Failure> {
    if nodes < 2 {
        return Err(Failure::Usage("--nodes must be at least 2".into()));
    }
    let v = load_potential(potential, rc.seed)?;
    let specs = TransformSpec::load_list(spec)?;
    let t = compose(&v, &specs, &rc.solver)?;
    let mut out = t.to_json();
    if t.as_darboux().is_some() && nodes != isospectral::potential::MATERIALIZE_NODES {
        let g = Potential::grid(
            (0..nodes).map(|i| i as f64 / (nodes - 1) as f64).collect(),
            (0..nodes).map(|i| t.value(i as f64 / (nodes - 1) as f64)).collect(),
        )?;
        out = g.to_json();
        out["materialized_from"] = json!("darboux");
        out["depth"] = json!(t.depth());
    }
    let mut stages = Vec::new();
    let mut cur = &t;
    while let Some(d) = cur.as_darboux() {
        let cache = d.cache();
        stages.push(json!({
            "alpha": d.spec().alpha,
            "lambda_alpha": d.lambda_alpha(),
            "k_alpha": d.k_alpha(),
            "target": serde_json::to_value(d.diagnostics()).expect("serializable"),
            "min_rcond": cache.min_rcond,
            "k_hermitian_defect": cache.k_hermitian_defect,
            "boundary_residual": cache.boundary_residual,
        }));
        cur = d.base();
    }
    stages.reverse();
    let diag = json!({ "stages": stages, "depth": t.depth() });
    match diagnostics {
        Some(p) => std::fs::write(p, pretty(&diag))?,
        None => eprintln!("{}", serde_json::to_string(&diag).expect("serializable")),
    }
    emit(&rc.out, &pretty(&out))
}

fn cmd_verify(rc: &RunConfig, potential: &Path, transform: &Option<PathBuf>) -> Result<(), Failure> {
    let v = load_potential(potential, rc.seed)?;
    let spec = match transform {
        Some(p) => Some(
            TransformSpec::load_list(p)?
                .into_iter()
                .next()
                .ok_or_else(|| Failure::Usage("transform file holds no spec".into()))?,
        ),
        None => None,
    };
    let opts = SuiteOptions { lambda_max: rc.lambda_max, seed: rc.seed, transform: spec, ..SuiteOptions::default() };
    let reports = run_suite(&v, &rc.solver, &opts)?;
    emit(&rc.out, &pretty(&verify_report(&reports)))?;
    if any_failed(&reports) {
        let failed = reports.iter().filter(|r| r.failed()).count();
        for r in reports.iter().filter(|r| r.failed()) {
            eprintln!("FAIL {}: residual {:.3e} > tolerance {:.1e} {}", r.name, r.residual, r.tolerance, r.context);
        }
        return Err(Failure::Verification(failed));
    }
    Ok(())
}

fn cmd_plot(rc: &RunConfig, input: &Path, sigma_scan: bool, points: usize) -> Result<(), Failure> {
    let text = std::fs::read_to_string(input)?;
    let parsed: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        context: format!("{}: line {} column {}", input.display(), e.line(), e.column()),
        message: e.to_string(),
    })?;
    if let Some(groups) = parsed.get("groups").and_then(Value::as_array) {
        if sigma_scan {
            return Err(Failure::Usage("--sigma-scan needs a potential file, not a report".into()));
        }
        let mut out = String::from("alpha,lambda,k\n");
        for (i, g) in groups.iter().enumerate() {
            let l = g.get("lambda").and_then(Value::as_f64);
            let k = g.get("k").and_then(Value::as_u64);
            match (l, k) {
                (Some(l), Some(k)) => out.push_str(&format!("{},{l},{k}\n", i + 1)),
                _ => return Err(Error::Parse { context: format!("{}: groups[{i}]", input.display()), message: "needs lambda and k".into() }.into()),
            }
        }
        return emit(&rc.out, &out);
    }
    let v = load_potential(input, rc.seed)?;
    let csv = if sigma_scan {
        sigma_scan_csv(&PotentialSamples::new(&v, rc.solver.steps)?, 0.0, rc.lambda_max, points)
    } else {
        potential_csv(&v, points)
    };
    emit(&rc.out, &csv)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let rc = resolve(&cli.shared)?;
    if let Some(j) = rc.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Failure::Usage(format!("cannot set up {j} worker threads: {e}")))?;
    }
    match &cli.command {
        Command::Spectrum { potential, scan_csv, scan_points } => cmd_spectrum(&rc, potential, scan_csv, *scan_points),
        Command::Data { potential } => cmd_data(&rc, potential),
        Command::Transform { potential, spec, diagnostics, nodes } => cmd_transform(&rc, potential, spec, diagnostics, *nodes),
        Command::Verify { potential, transform } => cmd_verify(&rc, potential, transform),
        Command::Plot { input, sigma_scan, points } => cmd_plot(&rc, input, *sigma_scan, *points),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Verification(n)) => {
            eprintln!("verification failed: {n} check(s)");
            ExitCode::from(EXIT_VERIFY)
        }
    }
}
