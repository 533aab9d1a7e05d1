//! Command-line driver: solve, count, bench-fusion and model.
//!
//! [`run`] parses arguments and writes human-readable output to the given
//! sink; `main` only maps the outcome to an exit code.

pub mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use mrhs::kernels::{fusion_bench, last_level_cache_bytes};
use mrhs::perfmodel::{
    scan, BandwidthMode, MachineModel, ModelError, ProblemSpec, ScanConfig, SCAN_CSV_HEADER,
};
use mrhs::solvers::{method_schedule, solve, Formulation, MethodId, SolveError, SolveReport};
use mrhs::sparse::CoreError;
use mrhs::{MultiVector, TrafficCounter};
use serde::Serialize;
use thiserror::Error;

use config::{ModeSpec, PrecondSpec, RhsSpec, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Breakdown(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io(e) => CliError::Io(e),
            e => CliError::Usage(e.to_string()),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Breakdown(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "mrhs", version, about = "BiCGStab-family solvers for multiple right-hand sides")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve a generated or MatrixMarket system and write a report.
    Solve(SolveArgs),
    /// Print whole-vector reads and writes per iteration.
    Count(CountArgs),
    /// Time separate against fused vector updates.
    BenchFusion(BenchArgs),
    /// Evaluate the execution-time model over a parameter grid (CSV).
    Model(ModelArgs),
}

#[derive(Args, Debug, Default)]
pub struct SolveArgs {
    /// Named setup: table2, table3, table5 or fig5.
    #[arg(long)]
    pub preset: Option<String>,
    /// TOML run configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// poisson7:nx,ny,nz | poisson5:nx,ny | file:path
    #[arg(long)]
    pub matrix: Option<String>,
    /// Right-hand sides solved together.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub method: Option<String>,
    /// basic or merged.
    #[arg(long)]
    pub formulation: Option<String>,
    /// none, identity or synthetic.
    #[arg(long)]
    pub precond: Option<String>,
    /// Transfers per synthetic preconditioner application.
    #[arg(long)]
    pub alpha: Option<u32>,
    /// Relative tolerance (converge mode).
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Run exactly this many iterations.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Random right-hand sides from this seed instead of ones.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory for report.toml and residuals.csv.
    #[arg(long, default_value = "mrhs-out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CountArgs {
    /// Method id or "all".
    #[arg(long, default_value = "all")]
    pub method: String,
    /// basic, merged or "all".
    #[arg(long, default_value = "all")]
    pub formulation: String,
    /// Columns, for the bytes-per-row column.
    #[arg(long, default_value_t = 1)]
    pub m: usize,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Vector length; defaults to three vectors spanning 4x the last-level cache.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// Preset (lomonosov, lomonosov2) or machine TOML file.
    #[arg(long, default_value = "lomonosov2")]
    pub machine: String,
    /// table5 or fig5.
    #[arg(long, default_value = "fig5")]
    pub problem: String,
    /// Stencil grid overriding --problem, e.g. 500,500.
    #[arg(long)]
    pub grid: Option<String>,
    /// all, unpreconditioned, preconditioned or a comma list of ids.
    #[arg(long, default_value = "all")]
    pub methods: String,
    /// Node counts: comma list of values or inclusive ranges a..b.
    #[arg(long, default_value = "1..128")]
    pub p: String,
    /// Overlap overheads; defaults to the machine value.
    #[arg(long)]
    pub gamma: Option<String>,
    /// Preconditioner costs in vector transfers.
    #[arg(long, default_value = "2")]
    pub alpha: String,
    #[arg(long, default_value = "1")]
    pub m: String,
    /// ram, llc or effective.
    #[arg(long, default_value = "ram")]
    pub bw: String,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            CliError::Usage(String::new())
        }
        _ => CliError::Usage(e.to_string()),
    })?;
    match cli.command {
        Command::Solve(a) => cmd_solve(&a, out).map(|_| ()),
        Command::Count(a) => cmd_count(&a, out),
        Command::BenchFusion(a) => cmd_bench_fusion(&a, out),
        Command::Model(a) => cmd_model(&a, out),
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_method(s: &str) -> Result<MethodId, CliError> {
    s.parse().map_err(|e: mrhs::solvers::ParseIdError| usage(e.to_string()))
}

fn parse_formulation(s: &str) -> Result<Formulation, CliError> {
    s.parse().map_err(|e: mrhs::solvers::ParseIdError| usage(e.to_string()))
}

fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R, CliError> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(usage("--threads must be at least 1")),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| usage(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Defaults, then preset, then config file, then flags.
pub fn resolve_config(a: &SolveArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let mut cfg = RunConfig::from_toml_str(&text)?;
            if let Some(p) = &a.preset {
                let file: config::ConfigFile =
                    toml::from_str(&text).map_err(|e| usage(format!("config: {e}")))?;
                cfg = RunConfig::preset(p)?;
                cfg.merge(file)?;
            }
            cfg
        }
        None => match &a.preset {
            Some(p) => RunConfig::preset(p)?,
            None => RunConfig::default(),
        },
    };
    if let Some(s) = &a.matrix {
        cfg.matrix = s.parse()?;
    }
    if let Some(m) = a.m {
        cfg.m = m;
    }
    if let Some(s) = &a.method {
        cfg.method = parse_method(s)?;
    }
    if let Some(s) = &a.formulation {
        cfg.formulation = parse_formulation(s)?;
    }
    if let Some(s) = &a.precond {
        cfg.precond = Some(s.parse()?);
    }
    if let Some(alpha) = a.alpha {
        match cfg.precond {
            None | Some(PrecondSpec::Synthetic(_)) => cfg.precond = Some(PrecondSpec::Synthetic(alpha)),
            Some(other) => {
                return Err(usage(format!("--alpha applies to the synthetic preconditioner, not {other}")))
            }
        }
    }
    if let Some(seed) = a.seed {
        cfg.rhs = RhsSpec::Random(seed);
    }
    match (a.iters, a.tol, a.max_iters) {
        (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
            return Err(usage("--iters excludes --tol and --max-iters"))
        }
        (Some(n), None, None) => cfg.mode = ModeSpec::Fixed(n),
        (None, None, None) => {}
        (None, tol, max) => {
            let (t0, m0) = match cfg.mode {
                ModeSpec::Converge { tol, max_iters } => (tol, max_iters),
                ModeSpec::Fixed(_) => (1e-8, 1000),
            };
            cfg.mode = ModeSpec::Converge {
                tol: tol.unwrap_or(t0),
                max_iters: max.unwrap_or(m0),
            };
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct TrafficSummary {
    vector_reads: u64,
    vector_writes: u64,
    vector_transfers: u64,
    setup_vector_transfers: u64,
    spmv_calls: u64,
    spmv_bytes: f64,
    reductions: usize,
    reduction_bytes: usize,
    precond_applications: u64,
    precond_transfers: u64,
}

impl TrafficSummary {
    fn new(t: &TrafficCounter, setup: &TrafficCounter) -> Self {
        Self {
            vector_reads: t.vector_reads,
            vector_writes: t.vector_writes,
            vector_transfers: t.vector_transfers(),
            setup_vector_transfers: setup.vector_transfers(),
            spmv_calls: t.spmv_calls,
            spmv_bytes: t.spmv_bytes,
            reductions: t.reductions.len(),
            reduction_bytes: t.reductions.iter().map(|r| r.message_bytes()).sum(),
            precond_applications: t.precond_applications,
            precond_transfers: t.precond_transfers,
        }
    }
}

#[derive(Serialize)]
struct Results {
    /// converged, completed, not_converged or breakdown
    status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    breakdown: Option<String>,
    n: usize,
    nnz: usize,
    iterations: usize,
    converged: Vec<bool>,
    recursive_residual: Vec<f64>,
    true_residual: Vec<f64>,
    relative_true_residual: Vec<f64>,
    traffic: TrafficSummary,
}

#[derive(Serialize)]
struct Timings {
    threads: usize,
    solve_seconds: f64,
    seconds_per_iteration: f64,
}

#[derive(Serialize)]
struct Report<'a> {
    config: &'a RunConfig,
    results: Results,
    timings: Timings,
}

/// Outcome of [`cmd_solve`].
#[derive(Debug)]
pub struct SolveOutcome {
    pub report_path: PathBuf,
    pub history_path: PathBuf,
    pub status: String,
}

fn write_history(path: &Path, report: &SolveReport) -> Result<(), CliError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let m = report.converged_columns.len();
    write!(w, "iteration")?;
    for c in 0..m {
        write!(w, ",col{c}")?;
    }
    writeln!(w)?;
    for (k, row) in report.residual_history.iter().enumerate() {
        write!(w, "{k}")?;
        for v in row.iter() {
            write!(w, ",{v:e}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs one solve and writes `report.toml` and `residuals.csv` into
/// `args.out`. A breakdown still writes both files before failing.
pub fn cmd_solve(args: &SolveArgs, out: &mut dyn Write) -> Result<SolveOutcome, CliError> {
    let cfg = resolve_config(args)?;
    let opts = cfg.solve_options()?;
    let a = cfg.matrix.build()?;
    let n = a.n_rows();
    let b = cfg.rhs.build(n, cfg.m);
    let x0 = MultiVector::zeros(n, cfg.m);
    let threads = args.threads.unwrap_or_else(rayon::current_num_threads);
    let start = Instant::now();
    let result = with_threads(args.threads, || solve(&a, &b, &x0, &opts))?;
    let seconds = start.elapsed().as_secs_f64();
    let (report, breakdown) = match result {
        Ok(r) => (r, None),
        Err(SolveError::Breakdown { info, report }) => (*report, Some(info)),
        Err(e) => return Err(e.into()),
    };
    let status = match (&breakdown, cfg.mode) {
        (Some(_), _) => "breakdown",
        (None, ModeSpec::Fixed(_)) => "completed",
        (None, _) if report.all_converged() => "converged",
        (None, _) => "not_converged",
    };
    let bnorm = b.column_norms();
    let results = Results {
        status: status.to_string(),
        breakdown: breakdown.map(|i| i.to_string()),
        n,
        nnz: a.nnz(),
        iterations: report.iterations,
        converged: report.converged_columns.clone(),
        recursive_residual: report.residual_history.last().map(|r| r.0.clone()).unwrap_or_default(),
        true_residual: report.true_residual.0.clone(),
        relative_true_residual: report
            .true_residual
            .iter()
            .zip(bnorm.iter())
            .map(|(r, b)| if *b > 0.0 { r / b } else { *r })
            .collect(),
        traffic: TrafficSummary::new(&report.traffic, &report.setup_traffic),
    };
    let timings = Timings {
        threads,
        solve_seconds: seconds,
        seconds_per_iteration: seconds / report.iterations.max(1) as f64,
    };
    std::fs::create_dir_all(&args.out)?;
    let report_path = args.out.join("report.toml");
    let history_path = args.out.join("residuals.csv");
    let text = toml::to_string(&Report {
        config: &cfg,
        results,
        timings,
    })
    .map_err(|e| usage(format!("report: {e}")))?;
    std::fs::write(&report_path, text)?;
    write_history(&history_path, &report)?;
    writeln!(
        out,
        "{} ({}) on {}: {} after {} iterations, {:.3e} s/iteration",
        cfg.method.label(),
        cfg.formulation.name(),
        cfg.matrix,
        status,
        report.iterations,
        seconds / report.iterations.max(1) as f64
    )?;
    writeln!(out, "report: {}", report_path.display())?;
    if let Some(info) = breakdown {
        return Err(CliError::Breakdown(info.to_string()));
    }
    Ok(SolveOutcome {
        report_path,
        history_path,
        status: status.to_string(),
    })
}

fn cmd_count(args: &CountArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let methods = match args.method.as_str() {
        "all" => MethodId::ALL.to_vec(),
        s => vec![parse_method(s)?],
    };
    let forms = match args.formulation.as_str() {
        "all" => vec![Formulation::Basic, Formulation::Merged],
        s => vec![parse_formulation(s)?],
    };
    if args.m == 0 {
        return Err(usage("--m must be at least 1"));
    }
    writeln!(
        out,
        "{:<14} {:<11} {:>5} {:>6} {:>6} {:>14}",
        "method", "formulation", "read", "write", "total", "bytes_per_row"
    )?;
    for &method in &methods {
        for &f in &forms {
            let s = method_schedule(method, f);
            writeln!(
                out,
                "{:<14} {:<11} {:>5} {:>6} {:>6} {:>14}",
                method.label(),
                f.name(),
                s.reads(),
                s.writes(),
                s.vector_transfers(),
                8 * args.m as u64 * s.vector_transfers()
            )?;
        }
    }
    Ok(())
}

/// Vector length at which the three benchmark vectors span four times the
/// last-level cache.
pub fn default_fusion_length() -> usize {
    (4 * last_level_cache_bytes()).div_ceil(3 * 8)
}

fn cmd_bench_fusion(args: &BenchArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let n = args.n.unwrap_or_else(default_fusion_length);
    if n == 0 || args.reps == 0 {
        return Err(usage("--n and --reps must be at least 1"));
    }
    let r = with_threads(args.threads, || fusion_bench(n, args.reps))?;
    writeln!(out, "N = {n}, repetitions = {}", r.repetitions)?;
    writeln!(out, "{:<5} {:>9} {:>12} {:>10}", "run", "transfers", "median_ms", "GB/s")?;
    let bw = r.bandwidth();
    for k in 0..3 {
        writeln!(
            out,
            "{:<5} {:>9} {:>12.3} {:>10.2}",
            k + 1,
            r.transfers[k],
            r.median_seconds[k] * 1e3,
            bw[k] / 1e9
        )?;
    }
    writeln!(
        out,
        "run1/run2 = {:.3}, run3/run2 = {:.3}, results match: {}",
        r.ratio_1_2(),
        r.ratio_3_2(),
        r.results_match
    )?;
    Ok(())
}

/// Comma list of integers and inclusive ranges `a..b`.
pub fn parse_range(s: &str) -> Result<Vec<u32>, CliError> {
    let mut v = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || usage(format!("bad range item '{part}'"));
        match part.split_once("..") {
            Some((a, b)) => {
                let (a, b): (u32, u32) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
                v.extend(a..=b);
            }
            None => v.push(part.parse().map_err(|_| bad())?),
        }
    }
    if v.is_empty() {
        return Err(usage(format!("range '{s}' is empty")));
    }
    Ok(v)
}

fn parse_values<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, CliError> {
    let v = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|_| usage(format!("bad {what} '{p}'"))))
        .collect::<Result<Vec<_>, _>>()?;
    if v.is_empty() {
        return Err(usage(format!("no {what} given")));
    }
    Ok(v)
}

fn load_machine(s: &str) -> Result<MachineModel, CliError> {
    if Path::new(s).is_file() {
        Ok(MachineModel::load(s)?)
    } else {
        Ok(MachineModel::preset(s)?)
    }
}

fn cmd_model(args: &ModelArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let machine = load_machine(&args.machine)?;
    let spec = match (&args.grid, args.problem.as_str()) {
        (Some(g), _) => ProblemSpec::stencil(&parse_values::<usize>(g, "grid size")?, 1)?,
        (None, "table5") => ProblemSpec::table5(1)?,
        (None, "fig5") => ProblemSpec::fig5(1)?,
        (None, other) => return Err(usage(format!("unknown problem '{other}', expected table5 or fig5"))),
    };
    let methods = match args.methods.as_str() {
        "all" => MethodId::ALL.to_vec(),
        "unpreconditioned" => MethodId::ALL.into_iter().filter(|m| !m.is_preconditioned()).collect(),
        "preconditioned" => MethodId::ALL.into_iter().filter(|m| m.is_preconditioned()).collect(),
        list => list.split(',').map(|s| parse_method(s.trim())).collect::<Result<_, _>>()?,
    };
    let gammas = match &args.gamma {
        Some(g) => parse_values::<f64>(g, "gamma")?,
        None => vec![machine.gamma],
    };
    let cfg = ScanConfig {
        methods,
        p_values: parse_range(&args.p)?,
        gammas,
        alphas: parse_values(&args.alpha, "alpha")?,
        ms: parse_values(&args.m, "m")?,
        bandwidth_modes: args
            .bw
            .split(',')
            .map(|s| s.trim().parse::<BandwidthMode>())
            .collect::<Result<_, _>>()?,
    };
    let rows = scan(&machine, &spec, &cfg)?;
    let mut text = String::with_capacity(64 * (rows.len() + 1));
    text.push_str(SCAN_CSV_HEADER);
    text.push('\n');
    for r in &rows {
        text.push_str(&r.csv());
        text.push('\n');
    }
    match &args.out {
        Some(path) => std::fs::write(path, text)?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use config::MatrixSource;

    fn run_str(args: &[&str]) -> (Result<(), CliError>, String) {
        let mut buf = Vec::new();
        let r = run(std::iter::once("mrhs").chain(args.iter().copied()), &mut buf);
        (r, String::from_utf8(buf).unwrap())
    }

    #[test]
    fn ranges() {
        assert_eq!(parse_range("1..4,8").unwrap(), vec![1, 2, 3, 4, 8]);
        assert!(parse_range("5..2").is_err());
        assert!(parse_range("").is_err());
        assert!(parse_range("a..3").is_err());
    }

    #[test]
    fn count_single_rows() {
        let (r, out) = run_str(&["count", "--method", "pipebicgstab", "--formulation", "basic"]);
        r.unwrap();
        let row: Vec<&str> = out.lines().nth(1).unwrap().split_whitespace().collect();
        assert_eq!(&row[..5], ["PipeBiCGStab", "basic", "34", "9", "43"]);
        let (_, out) = run_str(&["count", "--method", "ppipebicgstab", "--formulation", "merged", "--m", "2"]);
        let row: Vec<&str> = out.lines().nth(1).unwrap().split_whitespace().collect();
        assert_eq!(&row[2..], ["23", "11", "34", "544"]);
    }

    #[test]
    fn bad_ids_are_usage_errors() {
        let (r, _) = run_str(&["count", "--method", "cg"]);
        let e = r.unwrap_err();
        assert_eq!(e.exit_code(), 1);
        assert!(e.to_string().contains("ibicgstab"));
        let (r, _) = run_str(&["frobnicate"]);
        assert_eq!(r.unwrap_err().exit_code(), 1);
    }

    #[test]
    fn model_rejects_empty_range() {
        let (r, _) = run_str(&["model", "--p", "9..3"]);
        assert!(matches!(r, Err(CliError::Usage(_))));
    }

    #[test]
    fn flags_override_preset() {
        let args = SolveArgs {
            preset: Some("table3".into()),
            m: Some(4),
            tol: Some(1e-6),
            seed: Some(3),
            ..SolveArgs::default()
        };
        let cfg = resolve_config(&args).unwrap();
        assert_eq!(cfg.matrix, MatrixSource::Poisson7 { nx: 200, ny: 200, nz: 200 });
        assert_eq!(cfg.m, 4);
        assert_eq!(cfg.rhs, RhsSpec::Random(3));
        assert_eq!(cfg.mode, ModeSpec::Converge { tol: 1e-6, max_iters: 1000 });
        let clash = SolveArgs {
            iters: Some(3),
            tol: Some(1e-6),
            ..SolveArgs::default()
        };
        assert!(resolve_config(&clash).is_err());
    }
}
