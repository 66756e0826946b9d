//! Command-line front end: parses flags (with key=value config-file
//! defaults underneath), dispatches to the library, and writes byte-stable
//! delimited or JSON artifacts. Exit codes: 0 clean, 1 a check failed,
//! 2 usage or configuration error, 3 numerical failure.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use boundstate::{
    check_hypotheses, classify_one, compare_at_level, default_plan, dirichlet_p_of_r,
    extract_branches, find_bound_state, fmt17, integrate, locate_alpha_star, render_bound_state,
    render_checks, render_classification, render_comparison, render_dirichlet, render_hypotheses,
    render_scan, render_trace, render_trajectory, run_suite, sample_grid, solve_dirichlet, trace_h,
    trace_i, trace_p, trace_pbar, trace_q, trace_s12, trace_w, trace_wtilde, Branch,
    Classification, Error as LibError, Nonlinearity, Outcome, ProblemConfig, Verdict,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

#[derive(Parser)]
#[command(
    name = "boundstate",
    version,
    about = "Radial shooting toolkit for bound states of semilinear field equations",
    max_term_width = 100
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the structural hypothesis battery for a family
    CheckHypotheses(CheckHypothesesArgs),
    /// Integrate one shot and export the trajectory and event tables
    Trace(TraceArgs),
    /// Classify one amplitude: outcome, zeros, extrema
    Classify(ClassifyArgs),
    /// Classify a grid of amplitudes
    Scan(ScanArgs),
    /// Certify a critical amplitude by bisection
    Solve(SolveArgs),
    /// Match the zero-boundary problem on a ball
    Dirichlet(DirichletArgs),
    /// Export one comparison functional along a trajectory
    Functional(FunctionalArgs),
    /// Compare the trajectory pair straddling a critical amplitude
    Compare(CompareArgs),
    /// Run the family's full verification suite
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Delimited,
    Json,
}

#[derive(Args)]
struct Shared {
    /// Family spec: troy | power_diff:p=<real>,q=<real> | pure_power:q=<real>
    #[arg(long)]
    family: Option<String>,
    /// Space dimension (real, >= 2)
    #[arg(long)]
    n: Option<f64>,
    /// Integration horizon
    #[arg(long)]
    rmax: Option<f64>,
    /// Relative step tolerance
    #[arg(long)]
    rtol: Option<f64>,
    /// Absolute step tolerance
    #[arg(long)]
    atol: Option<f64>,
    /// Event refinement tolerance
    #[arg(long = "event-tol")]
    event_tol: Option<f64>,
    /// Output directory; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format (json only where the producer declares it)
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// key=value file supplying defaults for any absent flag
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct CheckHypothesesArgs {
    #[command(flatten)]
    shared: Shared,
    /// Largest height sampled; default 4*max(beta, 1)
    #[arg(long)]
    smax: Option<f64>,
    /// Grid points per checked interval
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Args)]
struct TraceArgs {
    #[command(flatten)]
    shared: Shared,
    /// Takeoff height u(0)
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    /// Skip the sensitivity columns
    #[arg(long = "no-phi")]
    no_phi: bool,
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    shared: Shared,
    /// Takeoff height u(0)
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    /// Decision level: stop after the k-th monotone stage
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct ScanArgs {
    #[command(flatten)]
    shared: Shared,
    /// Amplitude grid lo,hi,count
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    /// Decision level per amplitude
    #[arg(long)]
    k: Option<usize>,
    /// Worker pool size; default one per core
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    shared: Shared,
    /// Which critical amplitude (1 = ground state)
    #[arg(long)]
    k: Option<usize>,
    /// Starting bracket lo,hi; located automatically when absent
    #[arg(long, allow_hyphen_values = true)]
    bracket: Option<String>,
    /// Bracket width target, relative to max(1, |alpha*|); default 1e-12
    #[arg(long = "width-tol")]
    width_tol: Option<f64>,
}

#[derive(Args)]
struct DirichletArgs {
    #[command(flatten)]
    shared: Shared,
    /// Ball radius
    #[arg(long)]
    rho: Option<f64>,
    /// Interior zero count of the matched solution
    #[arg(long)]
    k: Option<usize>,
    /// Amplitude bracket lo,hi for the boundary match
    #[arg(long, allow_hyphen_values = true)]
    bracket: Option<String>,
}

#[derive(Args)]
struct FunctionalArgs {
    #[command(flatten)]
    shared: Shared,
    /// Takeoff height u(0)
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    /// Which functional: I | W | Wtilde | Q | H | P | Pbar | S12 | S12bar | dirichletP
    #[arg(long)]
    tag: Option<String>,
    /// Sample grid lo,hi,count (heights s, or radii for I and dirichletP)
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    /// Monotone branch index in radius order; default 0 (initial descent)
    #[arg(long)]
    branch: Option<usize>,
    /// Second takeoff height, for the two-trajectory ratios S12 and S12bar
    #[arg(long, allow_negative_numbers = true)]
    alpha2: Option<f64>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    shared: Shared,
    /// Level of the critical amplitude the pair straddles
    #[arg(long)]
    k: Option<usize>,
    /// Initial pair offset; default 1e-3 * alpha*
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    shared: Shared,
    /// Worker pool size; default one per core
    #[arg(long)]
    jobs: Option<usize>,
}

enum Failure {
    Usage(String),
    Numerical(String),
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Failure::Usage(msg.into())
    }
}

impl From<LibError> for Failure {
    fn from(e: LibError) -> Self {
        match e {
            LibError::BadFamily(_) | LibError::BadParameter(_) => Failure::Usage(e.to_string()),
            other => Failure::Numerical(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli.cmd) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            3
        }
    };
    std::process::exit(code);
}

/// key=value defaults loaded from --config; flags override.
struct ConfigMap(BTreeMap<String, String>);

impl ConfigMap {
    fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let mut map = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
            for (lineno, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    Failure::usage(format!(
                        "{}:{}: expected key=value, got {line:?}",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                map.insert(key.trim().replace('_', "-"), value.trim().to_string());
            }
        }
        Ok(ConfigMap(map))
    }

    fn fill<T: FromStr>(&self, slot: &mut Option<T>, key: &str) -> Result<(), Failure>
    where
        T::Err: Display,
    {
        if slot.is_none() {
            if let Some(raw) = self.0.get(key) {
                let value = raw
                    .parse()
                    .map_err(|e| Failure::usage(format!("config key {key}={raw:?}: {e}")))?;
                *slot = Some(value);
            }
        }
        Ok(())
    }
}

/// Flags common to every subcommand, resolved against the config file and
/// validated. `alpha` in the embedded problem config stays NaN; commands
/// that shoot fill it per amplitude.
struct Resolved {
    nl: Nonlinearity,
    n: f64,
    cfg: ProblemConfig,
    format: Format,
    out: Option<PathBuf>,
    family_spec: String,
}

fn resolve_shared(mut shared: Shared, map: &ConfigMap) -> Result<Resolved, Failure> {
    map.fill(&mut shared.family, "family")?;
    map.fill(&mut shared.n, "n")?;
    map.fill(&mut shared.rmax, "rmax")?;
    map.fill(&mut shared.rtol, "rtol")?;
    map.fill(&mut shared.atol, "atol")?;
    map.fill(&mut shared.event_tol, "event-tol")?;
    map.fill(&mut shared.out, "out")?;
    if shared.format.is_none() {
        if let Some(raw) = map.0.get("format") {
            shared.format = Some(match raw.as_str() {
                "delimited" => Format::Delimited,
                "json" => Format::Json,
                other => {
                    return Err(Failure::usage(format!(
                        "config key format: expected delimited or json, got {other:?}"
                    )))
                }
            });
        }
    }
    let family_spec = shared
        .family
        .ok_or_else(|| Failure::usage("--family is required"))?;
    let nl = Nonlinearity::from_spec(&family_spec)?;
    let n = shared.n.ok_or_else(|| Failure::usage("--n is required"))?;
    let mut cfg = ProblemConfig::new(n, f64::NAN);
    for (name, slot, target) in [
        ("--rmax", shared.rmax, &mut cfg.r_max),
        ("--rtol", shared.rtol, &mut cfg.rtol),
        ("--atol", shared.atol, &mut cfg.atol),
        ("--event-tol", shared.event_tol, &mut cfg.event_tol),
    ] {
        if let Some(v) = slot {
            if !(v.is_finite() && v > 0.0) {
                return Err(Failure::usage(format!("{name} must be positive, got {v}")));
            }
            *target = v;
        }
    }
    Ok(Resolved {
        nl,
        n,
        cfg,
        format: shared.format.unwrap_or(Format::Delimited),
        out: shared.out,
        family_spec,
    })
}

fn parse_pair(raw: &str, what: &str) -> Result<(f64, f64), Failure> {
    let parts: Vec<&str> = raw.split(',').collect();
    if parts.len() != 2 {
        return Err(Failure::usage(format!("{what} expects lo,hi, got {raw:?}")));
    }
    let lo = parts[0]
        .trim()
        .parse()
        .map_err(|e| Failure::usage(format!("{what} lo: {e}")))?;
    let hi = parts[1]
        .trim()
        .parse()
        .map_err(|e| Failure::usage(format!("{what} hi: {e}")))?;
    Ok((lo, hi))
}

fn parse_grid(raw: &str) -> Result<(f64, f64, usize), Failure> {
    let parts: Vec<&str> = raw.split(',').collect();
    if parts.len() != 3 {
        return Err(Failure::usage(format!(
            "--grid expects lo,hi,count, got {raw:?}"
        )));
    }
    let lo: f64 = parts[0]
        .trim()
        .parse()
        .map_err(|e| Failure::usage(format!("--grid lo: {e}")))?;
    let hi: f64 = parts[1]
        .trim()
        .parse()
        .map_err(|e| Failure::usage(format!("--grid hi: {e}")))?;
    let count: usize = parts[2]
        .trim()
        .parse()
        .map_err(|e| Failure::usage(format!("--grid count: {e}")))?;
    if count < 2 {
        return Err(Failure::usage("--grid count must be at least 2"));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Failure::usage(format!(
            "--grid needs finite lo < hi, got {raw:?}"
        )));
    }
    Ok((lo, hi, count))
}

fn worker_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Failure::usage(format!("worker pool: {e}")))
}

/// Writes the artifact under --out, or prints it when no directory is given.
fn emit(out: &Option<PathBuf>, filename: &str, text: &str) -> Result<(), Failure> {
    match out {
        None => {
            print!("{text}");
            Ok(())
        }
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(filename);
            std::fs::write(&path, text)?;
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}

fn json_config(pairs: &[(&str, String)]) -> serde_json::Value {
    let map: serde_json::Map<String, serde_json::Value> = pairs
        .iter()
        .map(|(k, v)| (k.to_string(), serde_json::Value::String(v.clone())))
        .collect();
    serde_json::Value::Object(map)
}

fn json_artifact<T: serde::Serialize>(
    pairs: &[(&str, String)],
    records: &T,
) -> Result<String, Failure> {
    let body = serde_json::json!({ "config": json_config(pairs), "records": records });
    let mut text = serde_json::to_string_pretty(&body)
        .map_err(|e| Failure::Numerical(format!("serialization: {e}")))?;
    text.push('\n');
    Ok(text)
}

fn no_json(what: &str) -> Failure {
    Failure::usage(format!(
        "{what} output is delimited text only; drop --format json"
    ))
}

fn run(cmd: Cmd) -> Result<i32, Failure> {
    match cmd {
        Cmd::CheckHypotheses(args) => run_check_hypotheses(args),
        Cmd::Trace(args) => run_trace(args),
        Cmd::Classify(args) => run_classify(args),
        Cmd::Scan(args) => run_scan(args),
        Cmd::Solve(args) => run_solve(args),
        Cmd::Dirichlet(args) => run_dirichlet(args),
        Cmd::Functional(args) => run_functional(args),
        Cmd::Compare(args) => run_compare(args),
        Cmd::Verify(args) => run_verify(args),
    }
}

fn run_check_hypotheses(mut args: CheckHypothesesArgs) -> Result<i32, Failure> {
    let map = ConfigMap::load(args.shared.config.as_deref())?;
    map.fill(&mut args.smax, "smax")?;
    map.fill(&mut args.count, "count")?;
    let r = resolve_shared(args.shared, &map)?;
    let s_max = args.smax.unwrap_or(4.0 * f64::max(r.nl.beta(), 1.0));
    let count = args.count.unwrap_or(2001);
    if !(s_max.is_finite() && s_max > 0.0) {
        return Err(Failure::usage(format!(
            "--smax must be positive, got {s_max}"
        )));
    }
    let report = check_hypotheses(&r.nl, r.n, s_max, count);
    let pairs = [
        ("command", "check-hypotheses".to_string()),
        ("family", r.family_spec.clone()),
        ("n", format!("{}", r.n)),
        ("smax", fmt17(s_max)),
        ("count", format!("{count}")),
    ];
    match r.format {
        // the report renderer emits family/n/s_max/grid_count itself
        Format::Delimited => emit(
            &r.out,
            "hypotheses.csv",
            &render_hypotheses(&report, &pairs[..1]),
        )?,
        Format::Json => emit(
            &r.out,
            "hypotheses.json",
            &json_artifact(&pairs, &report.checks)?,
        )?,
    }
    Ok(
        if report.checks.iter().any(|c| c.verdict == Verdict::Fail) {
            1
        } else {
            0
        },
    )
}

fn run_trace(mut args: TraceArgs) -> Result<i32, Failure> {
    let map = ConfigMap::load(args.shared.config.as_deref())?;
    map.fill(&mut args.alpha, "alpha")?;
    let r = resolve_shared(args.shared, &map)?;
    if r.format == Format::Json {
        return Err(no_json("trajectory"));
    }
    let alpha = args
        .alpha
        .ok_or_else(|| Failure::usage("--alpha is required"))?;
    let mut cfg = r.cfg;
    cfg.alpha = alpha;
    cfg.with_phi = !args.no_phi;
    let traj = integrate(&r.nl, &cfg)?;
    let pairs = [("command", "trace".to_string()), ("rmax", fmt17(cfg.r_max))];
    emit(&r.out, "trajectory.csv", &render_trajectory(&traj, &pairs))?;
    Ok(0)
}

fn run_classify(mut args: ClassifyArgs) -> Result<i32, Failure> {
    let map = ConfigMap::load(args.shared.config.as_deref())?;
    map.fill(&mut args.alpha, "alpha")?;
    map.fill(&mut args.k, "k")?;
    let r = resolve_shared(args.shared, &map)?;
    let alpha = args
        .alpha
        .ok_or_else(|| Failure::usage("--alpha is required"))?;
    let k = args.k.unwrap_or(3);
    let mut cfg = r.cfg.clone();
    cfg.alpha = alpha;
    cfg.with_phi = false;
    let c = classify_one(&r.nl, r.n, alpha, &cfg, k);
    let pairs = resolved_pairs(
        "classify",
        &r,
        &[("alpha", fmt17(alpha)), ("k", format!("{k}"))],
    );
    match r.format {
        Format::Delimited => emit(
            &r.out,
            "classification.txt",
            &render_classification(&c, &pairs),
        )?,
        Format::Json => emit(&r.out, "classification.json", &json_artifact(&pairs, &c)?)?,
    }
    Ok(if matches!(c.outcome, Outcome::Undetermined { .. }) {
        3
    } else {
        0
    })
}

fn run_scan(mut args: ScanArgs) -> Result<i32, Failure> {
    let map = ConfigMap::load(args.shared.config.as_deref())?;
    map.fill(&mut args.grid, "grid")?;
    map.fill(&mut args.k, "k")?;
    map.fill(&mut args.jobs, "jobs")?;
    let r = resolve_shared(args.shared, &map)?;
    let raw_grid = args
        .grid
        .ok_or_else(|| Failure::usage("--grid is required"))?;
    let (lo, hi, count) = parse_grid(&raw_grid)?;
    let k = args.k.unwrap_or(3);
    let mut cfg = r.cfg.clone();
    cfg.with_phi = false;
    let alphas = sample_grid(lo, hi, count);
    if let Some(&a) = alphas.first() {
        if a <= r.nl.b() {
            return Err(Failure::usage(format!(
                "grid must start above the dead-core edge b = {}, got {a}",
                r.nl.b()
            )));
        }
    }
    let pool = worker_pool(args.jobs)?;
    let rows: Vec<Classification> = pool.install(|| {
        alphas
            .par_iter()
            .map(|&alpha| classify_one(&r.nl, r.n, alpha, &cfg, k))
            .collect()
    });
    let pairs = resolved_pairs(
        "scan",
        &r,
        &[("grid", raw_grid.clone()), ("k", format!("{k}"))],
    );
    match r.format {
        Format::Delimited => emit(&r.out, "scan.csv", &render_scan(&rows, k, &pairs))?,
        Format::Json => emit(&r.out, "scan.json", &json_artifact(&pairs, &rows)?)?,
    }
    let undetermined = rows
        .iter()
        .any(|c| matches!(c.outcome, Outcome::Undetermined { .. }));
    Ok(if undetermined { 3 } else { 0 })
}

fn run_solve(mut args: SolveArgs) -> Result<i32, Failure> {
    let map = ConfigMap::load(args.shared.config.as_deref())?;
    map.fill(&mut args.k, "k")?;
    map.fill(&mut args.bracket, "bracket")?;
    map.fill(&mut args.width_tol, "width-tol")?;
    let r = resolve_shared(args.shared, &map)?;
    if r.format == Format::Json {
        return Err(no_json("solve"));
    }
    let k = args.k.unwrap_or(1);
    if k == 0 {
        return Err(Failure::usage("--k must be at least 1"));
    }
    let width_tol = args.width_tol.unwrap_or(f64::NAN);
    let bs = match &args.bracket {
        Some(raw) => {
            let bracket = parse_pair(raw, "--bracket")?;
            find_bound_state(&r.nl, r.n, k, bracket, &r.cfg, width_tol)?
        }
        None => locate_alpha_star(&r.nl, r.n, k, &r.cfg)?,
    };
    let mut extra = vec![("k", format!("{k}"))];
    if let Some(raw) = &args.bracket {
        extra.push(("bracket", raw.clone()));
    }
    extra.push((
        "width-tol",
        fmt17(if width_tol.is_finite() {
            width_tol
        } else {
            1e-12
        }),
    ));
    let pairs = resolved_pairs("solve", &r, &extra);
    emit(&r.out, "boundstate.txt", &render_bound_state(&bs, &pairs))?;
    Ok(0)
}

fn run_dirichlet(mut args: DirichletArgs) -> Result<i32, Failure> {
    let map = ConfigMap::load(args.shared.config.as_deref())?;
    map.fill(&mut args.rho, "rho")?;
    map.fill(&mut args.k, "k")?;
    map.fill(&mut args.bracket, "bracket")?;
    let r = resolve_shared(args.shared, &map)?;
    if r.format == Format::Json {
        return Err(no_json("dirichlet"));
    }
    let rho = args
        .rho
        .ok_or_else(|| Failure::usage("--rho is required"))?;
    let k = args.k.unwrap_or(0);
    let b = r.nl.b();
    let bracket = match &args.bracket {
        Some(raw) => parse_pair(raw, "--bracket")?,
        None => (b + 1e-4 * (1.0 + b), 1e4 * (1.0 + b)),
    };
    let sol = solve_dirichlet(&r.nl, r.n, rho, k, &r.cfg, bracket)?;
    let pairs = resolved_pairs(
        "dirichlet",
        &r,
        &[
            ("rho", fmt17(rho)),
            ("k", format!("{k}")),
            (
                "bracket",
                format!("{},{}", fmt17(bracket.0), fmt17(bracket.1)),
            ),
        ],
    );
    emit(&r.out, "dirichlet.txt", &render_dirichlet(&sol, &pairs))?;
    Ok(0)
}

fn branch_at(branches: &[Branch], index: usize) -> Result<&Branch, Failure> {
    branches.get(index).ok_or_else(|| {
        Failure::usage(format!(
            "--branch {index} is out of range; the trajectory has {} monotone branches",
            branches.len()
        ))
    })
}

fn run_functional(mut args: FunctionalArgs) -> Result<i32, Failure> {
    let map = ConfigMap::load(args.shared.config.as_deref())?;
    map.fill(&mut args.alpha, "alpha")?;
    map.fill(&mut args.tag, "tag")?;
    map.fill(&mut args.grid, "grid")?;
    map.fill(&mut args.branch, "branch")?;
    map.fill(&mut args.alpha2, "alpha2")?;
    let r = resolve_shared(args.shared, &map)?;
    if r.format == Format::Json {
        return Err(no_json("functional"));
    }
    let tag = args
        .tag
        .ok_or_else(|| Failure::usage("--tag is required"))?;
    let raw_grid = args
        .grid
        .ok_or_else(|| Failure::usage("--grid is required"))?;
    let (lo, hi, count) = parse_grid(&raw_grid)?;
    let grid = sample_grid(lo, hi, count);
    let branch_idx = args.branch.unwrap_or(0);

    let shoot = |alpha: f64| -> Result<Arc<boundstate::Trajectory>, Failure> {
        let mut cfg = r.cfg.clone();
        cfg.alpha = alpha;
        cfg.with_phi = false;
        Ok(Arc::new(integrate(&r.nl, &cfg)?))
    };
    let need_alpha = || {
        args.alpha
            .ok_or_else(|| Failure::usage("--alpha is required"))
    };

    let trace = match tag.as_str() {
        "H" => trace_h(&r.nl, r.n, &grid)?,
        "I" => trace_i(&*shoot(need_alpha()?)?, &grid)?,
        "dirichletP" => dirichlet_p_of_r(&*shoot(need_alpha()?)?, &grid)?,
        "W" | "Wtilde" | "Q" | "P" | "Pbar" => {
            let traj = shoot(need_alpha()?)?;
            let branches = extract_branches(&traj, r.nl.beta());
            let branch = branch_at(&branches, branch_idx)?;
            match tag.as_str() {
                "W" => trace_w(branch, &grid)?,
                "Wtilde" => trace_wtilde(branch, &grid)?,
                "Q" => trace_q(branch, &grid)?,
                "P" => trace_p(branch, &grid)?,
                _ => trace_pbar(branch, &grid)?,
            }
        }
        "S12" | "S12bar" => {
            let alpha2 =
                args.alpha2.ok_or_else(|| Failure::usage("--alpha2 is required for S12"))?;
            let t1 = shoot(need_alpha()?)?;
            let t2 = shoot(alpha2)?;
            let b1 = extract_branches(&t1, r.nl.beta());
            let b2 = extract_branches(&t2, r.nl.beta());
            trace_s12(
                branch_at(&b1, branch_idx)?,
                branch_at(&b2, branch_idx)?,
                &grid,
                tag == "S12bar",
            )?
        }
        other => {
            return Err(Failure::usage(format!(
                "unknown functional {other:?}; expected one of I, W, Wtilde, Q, H, P, Pbar, S12, S12bar, dirichletP"
            )))
        }
    };
    let mut extra = vec![("tag", tag.clone()), ("grid", raw_grid.clone())];
    if let Some(a) = args.alpha {
        extra.push(("alpha", fmt17(a)));
    }
    if let Some(a2) = args.alpha2 {
        extra.push(("alpha2", fmt17(a2)));
    }
    extra.push(("branch", format!("{branch_idx}")));
    let pairs = resolved_pairs("functional", &r, &extra);
    emit(
        &r.out,
        &format!("functional-{tag}.csv"),
        &render_trace(&trace, &pairs),
    )?;
    Ok(0)
}

fn run_compare(mut args: CompareArgs) -> Result<i32, Failure> {
    let map = ConfigMap::load(args.shared.config.as_deref())?;
    map.fill(&mut args.k, "k")?;
    map.fill(&mut args.delta, "delta")?;
    let r = resolve_shared(args.shared, &map)?;
    let k = args.k.unwrap_or(2);
    if k == 0 {
        return Err(Failure::usage("--k must be at least 1"));
    }
    let delta0 = args.delta.unwrap_or(f64::NAN);
    let (report, used_delta) = compare_at_level(&r.nl, r.n, k, &r.cfg, delta0)?;
    let pairs = resolved_pairs("compare", &r, &[("k", format!("{k}"))]);
    match r.format {
        Format::Delimited => {
            // the report renderer emits family/n/k and the pair itself
            let mut extra = vec![pairs[0].clone()];
            extra.extend_from_slice(&pairs[4..]);
            emit(
                &r.out,
                "comparison.csv",
                &render_comparison(&report, used_delta, &extra),
            )?
        }
        Format::Json => {
            let mut pairs = pairs;
            pairs.push(("delta", fmt17(used_delta)));
            emit(&r.out, "comparison.json", &json_artifact(&pairs, &report)?)?;
        }
    }
    let ordering_failed = report.orderings.iter().any(|o| o.conclusive && !o.holds);
    let separation_failed = report.separations.iter().any(|s| s.failed());
    Ok(if ordering_failed || separation_failed {
        1
    } else {
        0
    })
}

fn run_verify(mut args: VerifyArgs) -> Result<i32, Failure> {
    let map = ConfigMap::load(args.shared.config.as_deref())?;
    map.fill(&mut args.jobs, "jobs")?;
    let r = resolve_shared(args.shared, &map)?;
    let plan = default_plan(&r.nl, r.n);
    let pool = worker_pool(args.jobs)?;
    let checks = pool.install(|| run_suite(&r.nl, r.n, &plan));
    let pairs = resolved_pairs("verify", &r, &[]);
    match r.format {
        Format::Delimited => emit(&r.out, "checks.csv", &render_checks(&checks, &pairs))?,
        Format::Json => emit(&r.out, "checks.json", &json_artifact(&pairs, &checks)?)?,
    }
    Ok(if checks.iter().any(|c| c.failed()) {
        1
    } else {
        0
    })
}

/// Full resolved configuration for artifact headers, in fixed key order.
fn resolved_pairs(
    command: &str,
    r: &Resolved,
    extra: &[(&str, String)],
) -> Vec<(&'static str, String)> {
    let mut pairs: Vec<(&'static str, String)> = vec![
        ("command", command.to_string()),
        ("family", r.family_spec.clone()),
        ("n", format!("{}", r.n)),
    ];
    for (k, v) in extra {
        pairs.push((leak_key(k), v.clone()));
    }
    pairs.push(("rmax", fmt17(r.cfg.r_max)));
    pairs.push(("rtol", format!("{:e}", r.cfg.rtol)));
    pairs.push(("atol", format!("{:e}", r.cfg.atol)));
    pairs.push(("event-tol", format!("{:e}", r.cfg.event_tol)));
    pairs
}

/// The handful of header keys are static strings; map dynamic ones through
/// a fixed table instead of leaking.
fn leak_key(k: &str) -> &'static str {
    const KEYS: &[&str] = &[
        "alpha",
        "alpha2",
        "k",
        "grid",
        "bracket",
        "rho",
        "smax",
        "count",
        "tag",
        "branch",
        "delta",
        "width-tol",
        "jobs",
    ];
    KEYS.iter().find(|&&s| s == k).copied().unwrap_or("param")
}
