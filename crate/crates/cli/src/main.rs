mod compute;
mod output;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bkk::certify::{self, emit_report, parse_grid, Format, GridSpec};
use bkk::hunt::QuadratureConfig;
use bkk::kernels::{log_envelope, log_free_kernel, log_half_survival};
use bkk::mc::{simulate_killed_histogram, simulate_survival, McConfig};
use bkk::pde::{solve_killed_kernel_general, PdeConfig};
use bkk::Execution;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use compute::{kernel_row, log_hitting_density, log_survival, Method, Settings};
use output::{human, json_float, to_json, RunManifest, SCHEMA_VERSION};

/// stdout writes that end the process quietly when the reader goes away.
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        if writeln!(std::io::stdout(), $($t)*).is_err() {
            std::process::exit(0);
        }
    }};
}
macro_rules! outp {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        if write!(std::io::stdout(), $($t)*).is_err() {
            std::process::exit(0);
        }
    }};
}

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration; exit code 2.
    Usage(String),
    /// A computation or check failed; exit code 1.
    Failed(String),
}

impl From<bkk::Error> for CliError {
    fn from(e: bkk::Error) -> Self {
        match e {
            bkk::Error::Domain(m) => CliError::Usage(m),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "bkk", version, about = "Killed Bessel-process heat kernels and their two-sided estimates")]
struct Cli {
    /// Worker threads (default: machine parallelism). Results do not depend on it.
    #[arg(long, global = true, env = "BKK_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Evaluate p_1, p and the envelope at one point.
    Eval(EvalArgs),
    /// Run the inequality suite and envelope report over a grid.
    Certify(CertifyArgs),
    /// Tabulate a quantity over t, x, y lists as CSV.
    Table(TableArgs),
    /// Monte Carlo survival and killed-kernel bin masses.
    Simulate(SimulateArgs),
    /// Solve the killed-kernel PDE and print the whole slice.
    PdeSolve(PdeSolveArgs),
}

#[derive(Args, Serialize, Clone, Copy)]
struct SolverArgs {
    /// PDE grid nodes.
    #[arg(long, default_value_t = 4000)]
    nodes: usize,
    /// PDE time steps (default 2000).
    #[arg(long)]
    steps: Option<usize>,
    /// 0.5 selects TR-BDF2; any other value in [0.5, 1] a theta scheme.
    #[arg(long, default_value_t = 0.5)]
    theta: f64,
    /// PDE far boundary.
    #[arg(long)]
    cap: Option<f64>,
    /// Relative tolerance of the Hunt quadrature.
    #[arg(long, default_value_t = 1e-9)]
    rel_tol: f64,
    /// Monte Carlo paths.
    #[arg(long, default_value_t = 1_000_000)]
    paths: u64,
    #[arg(long, default_value_t = 0x5eed)]
    seed: u64,
    /// Monte Carlo time step (default t/512).
    #[arg(long)]
    dt: Option<f64>,
    /// Drop the Brownian-bridge crossing correction.
    #[arg(long)]
    no_bridge: bool,
}

impl SolverArgs {
    fn settings(&self) -> Settings {
        Settings {
            pde: PdeConfig { domain_cap: self.cap, nodes: self.nodes, time_steps: self.steps, theta: self.theta },
            quadrature: QuadratureConfig { rel_tol: self.rel_tol, ..Default::default() },
            mc: McConfig {
                n_paths: self.paths,
                dt: self.dt,
                seed: self.seed,
                bridge_correction: !self.no_bridge,
                execution: Execution::Parallel,
            },
        }
    }
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[arg(long, allow_hyphen_values = true)]
    mu: f64,
    #[arg(long)]
    t: f64,
    #[arg(long)]
    x: f64,
    #[arg(long)]
    y: f64,
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    #[arg(long, value_enum, default_value_t = Method::Auto)]
    method: Method,
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
enum ReportFormat {
    Json,
    Csv,
    Both,
}

#[derive(Args, Serialize)]
struct CertifyArgs {
    /// `key = value` grid configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` settings applied after the file.
    #[arg(long = "set")]
    set: Vec<String>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Both)]
    format: ReportFormat,
}

#[derive(Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum Quantity {
    P1,
    P,
    Envelope,
    Ratio,
    Survival,
    Q,
}

impl Quantity {
    fn name(self) -> &'static str {
        match self {
            Quantity::P1 => "p1",
            Quantity::P => "p",
            Quantity::Envelope => "envelope",
            Quantity::Ratio => "ratio",
            Quantity::Survival => "survival",
            Quantity::Q => "q",
        }
    }
}

#[derive(Args, Serialize)]
struct TableArgs {
    #[arg(long, allow_hyphen_values = true)]
    mu: f64,
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    /// Comma list or lo..hi:n (log spaced); `a+` offsets by the barrier.
    #[arg(long)]
    t: String,
    #[arg(long)]
    x: String,
    /// Not used by survival and q.
    #[arg(long)]
    y: Option<String>,
    #[arg(long, value_enum)]
    quantity: Quantity,
    #[arg(long, value_enum, default_value_t = Method::Auto)]
    method: Method,
    /// Write here (plus a manifest beside it) instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[arg(long, allow_hyphen_values = true)]
    mu: f64,
    #[arg(long)]
    x: f64,
    #[arg(long)]
    t: f64,
    /// Bin edges for killed-kernel masses (comma list or lo..hi:n).
    #[arg(long)]
    edges: Option<String>,
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Serialize)]
struct PdeSolveArgs {
    #[arg(long, allow_hyphen_values = true)]
    mu: f64,
    #[arg(long)]
    t: f64,
    #[arg(long)]
    x: f64,
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    #[arg(long)]
    json: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Failed(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Failed(e.to_string()))?;
    }
    let threads = cli.threads;
    match cli.cmd {
        Cmd::Eval(a) => eval(a, threads),
        Cmd::Certify(a) => run_certify(a, threads),
        Cmd::Table(a) => table(a, threads),
        Cmd::Simulate(a) => simulate(a, threads),
        Cmd::PdeSolve(a) => pde_solve(a, threads),
    }
}

fn write_with_manifest(path: &Path, body: &str, manifest: &RunManifest) -> Result<(), CliError> {
    fs::write(path, body)?;
    let mut m = path.as_os_str().to_owned();
    m.push(".manifest.json");
    fs::write(PathBuf::from(m), to_json(manifest))?;
    Ok(())
}

#[derive(Serialize)]
struct EvalRecord {
    manifest: RunManifest,
    mu: f64,
    t: f64,
    x: f64,
    y: f64,
    a: f64,
    method: &'static str,
    log_p1: f64,
    log_p: f64,
    log_envelope: f64,
    /// `log_p1 - log_envelope`
    log_ratio: f64,
    log_p1_std_err: Option<f64>,
}

fn eval(args: EvalArgs, threads: Option<usize>) -> Result<ExitCode, CliError> {
    let manifest = RunManifest::start("eval", &args, vec![args.solver.seed], threads);
    let st = args.solver.settings();
    let row = kernel_row(args.mu, args.a, args.t, args.x, &[args.y], args.method, &st)?;
    let v = row.into_iter().next().expect("one y")?;
    let q = compute::validate(args.mu, args.t, args.x, args.y, args.a)?;
    let log_p = log_free_kernel(args.mu, q.t, q.x, q.y)?.ln();
    let log_envelope = log_envelope(args.mu, &q)?.log_val.ln();
    let rec = EvalRecord {
        manifest: manifest.finish(),
        mu: args.mu,
        t: args.t,
        x: args.x,
        y: args.y,
        a: args.a,
        method: v.method.name(),
        log_p1: v.log,
        log_p,
        log_envelope,
        log_ratio: v.log - log_envelope,
        log_p1_std_err: v.std_err,
    };
    if args.json {
        outp!("{}", to_json(&rec));
    } else {
        out!("method        {}", rec.method);
        out!("log p1        {}", human(rec.log_p1));
        if let Some(se) = rec.log_p1_std_err {
            out!("  std err     {}", human(se));
        }
        out!("log p         {}", human(rec.log_p));
        out!("log envelope  {}", human(rec.log_envelope));
        out!("log ratio     {}", human(rec.log_ratio));
    }
    Ok(ExitCode::SUCCESS)
}

fn run_certify(args: CertifyArgs, threads: Option<usize>) -> Result<ExitCode, CliError> {
    let mut text = match &args.config {
        Some(p) => fs::read_to_string(p)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?,
        None => String::new(),
    };
    for s in &args.set {
        if !text.is_empty() && !text.ends_with('\n') {
            text.push('\n');
        }
        text.push_str(s);
        text.push('\n');
    }
    let spec = GridSpec::parse_config(&text)?;
    let manifest = RunManifest::start("certify", &spec, vec![spec.seed], threads);
    let report = certify::certify(&spec)?;
    let manifest = manifest.finish();
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("manifest.json"), to_json(&manifest))?;
    if args.format != ReportFormat::Csv {
        let doc = serde_json::json!({ "manifest": manifest, "report": report });
        fs::write(args.out.join("certify_report.json"), to_json(&doc))?;
    }
    if args.format != ReportFormat::Json {
        fs::write(args.out.join("certify_report.csv"), emit_report(&report, Format::Csv)?)?;
    }
    for c in &report.checks {
        let worst = c.worst_margin.map_or("-".to_string(), human);
        out!(
            "{:<20} {}  cells {:>7}  failed {:>5}  skipped {:>7}  worst margin {}",
            c.check_id,
            if c.passed() { "PASS" } else { "FAIL" },
            c.cells_total,
            c.cells_failed,
            c.cells_skipped,
            worst
        );
    }
    if let Some(env) = &report.envelope {
        for row in &env.rows {
            out!(
                "envelope mu={:<6} cells {:>6}  log-ratio range [{}, {}]  spread {}",
                human(row.mu),
                row.cells,
                row.min_log_ratio.map_or("-".into(), human),
                row.max_log_ratio.map_or("-".into(), human),
                row.spread.map_or("-".into(), human),
            );
        }
    }
    Ok(if report.hard_checks_passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn points(s: &str, a: f64, what: &str) -> Result<Vec<f64>, CliError> {
    parse_grid(s, a).map_err(|e| CliError::Usage(format!("{what}: {e}")))
}

fn csv_float(v: Option<f64>) -> String {
    v.map_or(String::new(), json_float)
}

fn table(args: TableArgs, threads: Option<usize>) -> Result<ExitCode, CliError> {
    let manifest = RunManifest::start("table", &args, vec![args.solver.seed], threads);
    let st = args.solver.settings();
    let ts = points(&args.t, args.a, "t")?;
    let xs = points(&args.x, args.a, "x")?;
    let ys = match (&args.y, args.quantity) {
        (_, Quantity::Survival | Quantity::Q) => vec![],
        (Some(y), _) => points(y, args.a, "y")?,
        (None, _) => return Err(CliError::Usage(format!("--y is required for {}", args.quantity.name()))),
    };
    let mut out = String::from("schema_version,mu,a,t,x,y,quantity,log_value,method,status\n");
    let mut line = |t: f64, x: f64, y: Option<f64>, v: Result<(f64, Method), &str>| {
        let (val, method, status) = match v {
            Ok((l, m)) => (Some(l), m.name(), "ok"),
            Err(s) => (None, "", s),
        };
        let _ = writeln!(
            out,
            "{SCHEMA_VERSION},{},{},{},{},{},{},{},{method},{status}",
            json_float(args.mu),
            json_float(args.a),
            json_float(t),
            json_float(x),
            csv_float(y),
            args.quantity.name(),
            csv_float(val),
        );
    };
    match args.quantity {
        Quantity::Survival => {
            for &t in &ts {
                for &x in &xs {
                    line(t, x, None, Ok(log_survival(args.mu, args.a, t, x, &st)?));
                }
            }
        }
        Quantity::Q => {
            for &x in &xs {
                let (vals, method) = log_hitting_density(args.mu, args.a, x, &ts, &st)?;
                for (&t, v) in ts.iter().zip(vals) {
                    line(t, x, None, Ok((v, method)));
                }
            }
        }
        q => {
            for &t in &ts {
                for &x in &xs {
                    for &y in &ys {
                        compute::validate(args.mu, t, x, y, args.a)?;
                    }
                }
            }
            let pairs: Vec<(f64, f64)> = ts.iter().flat_map(|&t| xs.iter().map(move |&x| (t, x))).collect();
            let rows = if matches!(q, Quantity::P | Quantity::Envelope) {
                Vec::new()
            } else {
                Execution::Parallel.map(pairs.len(), |i| {
                    kernel_row(args.mu, args.a, pairs[i].0, pairs[i].1, &ys, args.method, &st)
                })
            };
            for (i, &(t, x)) in pairs.iter().enumerate() {
                for (k, &y) in ys.iter().enumerate() {
                    let qy = compute::validate(args.mu, t, x, y, args.a)?;
                    let env = log_envelope(args.mu, &qy)?.log_val.ln();
                    let free = log_free_kernel(args.mu, t, x, y)?.ln();
                    let v = match q {
                        Quantity::P => Ok((free, Method::Closed)),
                        Quantity::Envelope => Ok((env, Method::Closed)),
                        _ => match &rows[i] {
                            Err(e) => return Err(clone_err(e)),
                            Ok(r) => match &r[k] {
                                Ok(v) if q == Quantity::P1 => Ok((v.log, v.method)),
                                Ok(v) => Ok((v.log - env, v.method)),
                                Err(CliError::Usage(m)) => return Err(CliError::Usage(m.clone())),
                                Err(_) => Err("unresolved"),
                            },
                        },
                    };
                    line(t, x, Some(y), v);
                }
            }
        }
    }
    match &args.out {
        Some(p) => write_with_manifest(p, &out, &manifest.finish())?,
        None => outp!("{out}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn clone_err(e: &CliError) -> CliError {
    match e {
        CliError::Usage(m) => CliError::Usage(m.clone()),
        CliError::Failed(m) => CliError::Failed(m.clone()),
    }
}

#[derive(Serialize)]
struct BinMass {
    lo: f64,
    hi: f64,
    mass: f64,
    std_err: f64,
}

#[derive(Serialize)]
struct SimulateRecord {
    manifest: RunManifest,
    mu: f64,
    x: f64,
    t: f64,
    survival: f64,
    std_err: f64,
    paths: u64,
    /// Closed-form survival for mu = +-1/2.
    reference: Option<f64>,
    bins: Vec<BinMass>,
}

fn simulate(args: SimulateArgs, threads: Option<usize>) -> Result<ExitCode, CliError> {
    let manifest = RunManifest::start("simulate", &args, vec![args.solver.seed], threads);
    let st = args.solver.settings();
    compute::validate(args.mu, args.t, args.x, args.x, 1.0)?;
    let surv = simulate_survival(args.mu, args.x, args.t, &st.mc)?;
    let reference = if args.mu == 0.5 {
        Some(log_half_survival(args.x, args.t)?.exp())
    } else if args.mu == -0.5 {
        Some(log_survival(args.mu, 1.0, args.t, args.x, &st)?.0.exp())
    } else {
        None
    };
    let mut bins = Vec::new();
    if let Some(e) = &args.edges {
        let edges = points(e, 1.0, "edges")?;
        let pairs: Vec<(f64, f64)> = edges.windows(2).map(|w| (w[0], w[1])).collect();
        let est = simulate_killed_histogram(args.mu, args.x, args.t, &pairs, &st.mc)?;
        bins = pairs
            .iter()
            .zip(est)
            .map(|(&(lo, hi), e)| BinMass { lo, hi, mass: e.mean, std_err: e.std_err })
            .collect();
    }
    let rec = SimulateRecord {
        manifest: manifest.finish(),
        mu: args.mu,
        x: args.x,
        t: args.t,
        survival: surv.mean,
        std_err: surv.std_err,
        paths: surv.n,
        reference,
        bins,
    };
    if args.json {
        outp!("{}", to_json(&rec));
    } else {
        out!("survival      {}", human(rec.survival));
        out!("  std err     {}", human(rec.std_err));
        out!("paths         {}", rec.paths);
        if let Some(r) = rec.reference {
            out!("closed form   {}", human(r));
            out!("  z           {}", human((rec.survival - r) / rec.std_err));
        }
        for b in &rec.bins {
            out!("bin ({}, {}]  mass {}  std err {}", human(b.lo), human(b.hi), human(b.mass), human(b.std_err));
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct SliceRecord {
    manifest: RunManifest,
    slice: bkk::pde::KernelSlice,
}

fn pde_solve(args: PdeSolveArgs, threads: Option<usize>) -> Result<ExitCode, CliError> {
    let manifest = RunManifest::start("pde-solve", &args, vec![], threads);
    let st = args.solver.settings();
    compute::validate(args.mu, args.t, args.x, args.x, args.a)?;
    let slice = solve_killed_kernel_general(args.mu, args.a, args.t, args.x, &st.pde)?;
    let manifest = manifest.finish();
    let body = if args.json {
        to_json(&SliceRecord { manifest: manifest.clone(), slice })
    } else {
        let mut s = String::from("schema_version,y,log_p1,resolved\n");
        for ((y, v), ok) in slice.values.iter().zip(&slice.resolved) {
            let _ = writeln!(s, "{SCHEMA_VERSION},{},{},{ok}", json_float(*y), json_float(v.ln()));
        }
        s
    };
    match &args.out {
        Some(p) => write_with_manifest(p, &body, &manifest)?,
        None => outp!("{body}"),
    }
    Ok(ExitCode::SUCCESS)
}
