//! Command-line front end: flags and config file, orchestration, artifacts.
//!
//! Exit codes: 0 when everything requested passed, 1 on a failed or
//! inconclusive verdict or a computation error, 2 on a usage error.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::integration::{integrate_default, AffineForm, Driver};
use crate::paths::DyadicBrownianPath;
use crate::report::{self, Manifest};
use crate::solver::{stratonovich_reference, wz_sequence, ReferenceCase, DEFAULT_SUBSTEPS};
use crate::stats::fit_slope;
use crate::variation::{RhoParams, TailMode};
use crate::verifier::{verify_lemma, LemmaId, RateCheckSpec, Verdict};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Inclusive index range written `a..b`, `a..=b` or `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexRange {
    pub lo: u32,
    pub hi: u32,
}

impl FromStr for IndexRange {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        let parse = |t: &str| {
            t.trim()
                .parse::<u32>()
                .map_err(|_| format!("'{s}' is not an index range (expected a..b or a)"))
        };
        let (lo, hi) = match s.split_once("..") {
            Some((a, b)) => (parse(a)?, parse(b.strip_prefix('=').unwrap_or(b))?),
            None => {
                let v = parse(s)?;
                (v, v)
            }
        };
        if lo > hi {
            return Err(format!("range '{s}' is empty"));
        }
        Ok(Self { lo, hi })
    }
}

impl fmt::Display for IndexRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.lo, self.hi)
    }
}

#[derive(Debug, Parser)]
#[command(name = "roughdyadic", version, about = "Dyadic rough path lifts, Wong-Zakai solving and Monte Carlo rate checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Generate a dyadic Brownian path and dump it as CSV.
    Simulate,
    /// Run the Monte Carlo checks for the selected lemmas.
    Verify,
    /// Solve a reference equation along consecutive dyadic polygons.
    Solve,
    /// Integrate a 1-form against the lifted polygon of a path.
    Integrate,
    /// Aggregate the verdicts found under the output directory.
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Verify => "verify",
            Command::Solve => "solve",
            Command::Integrate => "integrate",
            Command::Report => "report",
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// TOML file with any of the flags below; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    /// Finest dyadic level of generated paths.
    #[arg(long, global = true)]
    pub resolution: Option<u32>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub p: Option<f64>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    /// Lemma ids, repeated or comma separated; `all` selects every one.
    #[arg(long, global = true, value_delimiter = ',')]
    pub lemma: Vec<String>,
    /// Range of m, e.g. `2..8` (inclusive).
    #[arg(long, global = true)]
    pub m: Option<IndexRange>,
    /// Range of n, e.g. `1..8` (inclusive).
    #[arg(long, global = true)]
    pub n: Option<IndexRange>,
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    #[arg(long, global = true)]
    pub q: Option<f64>,
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true)]
    pub theta: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; falls back to ROUGHDYADIC_THREADS.
    #[arg(long, global = true, env = "ROUGHDYADIC_THREADS")]
    pub threads: Option<usize>,
    /// Reference case for `solve`: exp_scalar, commuting_linear, rotation_area.
    #[arg(long, global = true)]
    pub case: Option<String>,
    /// 1-form for `integrate`: identity or linear.
    #[arg(long, global = true)]
    pub form: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

/// Config file contents: every flag plus the finer rate-check settings.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    dim: Option<usize>,
    resolution: Option<u32>,
    seed: Option<u64>,
    p: Option<f64>,
    gamma: Option<f64>,
    n_max: Option<u32>,
    tail_mode: Option<TailMode>,
    lemma: Option<OneOrMany>,
    m: Option<String>,
    n: Option<String>,
    samples: Option<usize>,
    q: Option<f64>,
    beta: Option<f64>,
    theta: Option<f64>,
    delta: Option<f64>,
    eps: Option<f64>,
    n_tilde: Option<u32>,
    moment_power: Option<u32>,
    slope_tol: Option<f64>,
    margin: Option<f64>,
    c1: Option<f64>,
    out: Option<PathBuf>,
    threads: Option<usize>,
    case: Option<String>,
    form: Option<String>,
    substeps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub dim: usize,
    pub resolution: u32,
    pub seed: u64,
    pub rho: RhoParams,
    pub lemmas: Vec<LemmaId>,
    pub spec: RateCheckSpec,
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub case: String,
    pub form: String,
    pub substeps: usize,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration; exit code 2.
    Usage(String),
    /// A computation failed; exit code 1.
    Run(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Run(m) => f.write_str(m),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Run(_) => EXIT_FAIL,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn io_err(op: &str) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Run(format!("{op}: {e}"))
}

fn run_err(op: &str) -> impl Fn(Error) -> CliError + '_ {
    move |e| CliError::Run(format!("{op}: {e}"))
}

fn parse_lemmas(names: &[String]) -> Result<Vec<LemmaId>, CliError> {
    let mut out = Vec::new();
    for name in names {
        let name = name.trim();
        if name.is_empty() {
            continue;
        }
        if name.eq_ignore_ascii_case("all") {
            for l in LemmaId::ALL {
                if !out.contains(&l) {
                    out.push(l);
                }
            }
            continue;
        }
        let l: LemmaId = name.parse().map_err(|e: Error| usage(e.to_string()))?;
        if !out.contains(&l) {
            out.push(l);
        }
    }
    Ok(out)
}

/// Merges the config file (if any) under the flags and validates the result.
pub fn resolve(cli: Cli) -> Result<RunConfig, CliError> {
    let f = cli.flags;
    let file: FileConfig = match &f.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };
    let range = |flag: Option<IndexRange>, file: &Option<String>, default: (u32, u32), name: &str| {
        match (flag, file) {
            (Some(r), _) => Ok((r.lo, r.hi)),
            (None, Some(s)) => s
                .parse::<IndexRange>()
                .map(|r| (r.lo, r.hi))
                .map_err(|e| usage(format!("config key '{name}': {e}"))),
            (None, None) => Ok(default),
        }
    };

    let defaults = RateCheckSpec::default();
    let dim = f.dim.or(file.dim).unwrap_or(2);
    let seed = f.seed.or(file.seed).unwrap_or(0);
    let rho = RhoParams {
        p: f.p.or(file.p).unwrap_or(defaults.rho.p),
        gamma: f.gamma.or(file.gamma).unwrap_or(defaults.rho.gamma),
        n_max: file.n_max.unwrap_or(defaults.rho.n_max),
        tail_mode: file.tail_mode.unwrap_or(defaults.rho.tail_mode),
    };
    rho.validate().map_err(|e| usage(e.to_string()))?;

    let lemma_names: Vec<String> = if !f.lemma.is_empty() {
        f.lemma.clone()
    } else {
        match &file.lemma {
            Some(OneOrMany::One(s)) => s.split(',').map(str::to_string).collect(),
            Some(OneOrMany::Many(v)) => v.clone(),
            None => Vec::new(),
        }
    };
    let lemmas = parse_lemmas(&lemma_names)?;

    let spec = RateCheckSpec {
        dim,
        rho,
        q: f.q.or(file.q).unwrap_or(defaults.q),
        n_tilde: file.n_tilde.unwrap_or(defaults.n_tilde),
        moment_power: file.moment_power.unwrap_or(defaults.moment_power),
        beta: f.beta.or(file.beta).unwrap_or(defaults.beta),
        theta: f.theta.or(file.theta).unwrap_or(defaults.theta),
        delta: file.delta.unwrap_or(defaults.delta),
        eps: file.eps.unwrap_or(defaults.eps),
        m_range: range(f.m, &file.m, defaults.m_range, "m")?,
        n_range: range(f.n, &file.n, defaults.n_range, "n")?,
        samples: f.samples.or(file.samples).unwrap_or(defaults.samples),
        seed,
        slope_tol: file.slope_tol.unwrap_or(defaults.slope_tol),
        margin: file.margin.unwrap_or(defaults.margin),
        c1: file.c1,
    };

    let config = RunConfig {
        command: cli.command,
        dim,
        resolution: f.resolution.or(file.resolution).unwrap_or(10),
        seed,
        rho,
        lemmas,
        spec,
        out: f.out.or(file.out).unwrap_or_else(|| PathBuf::from("roughdyadic-out")),
        threads: f.threads.or(file.threads),
        case: f.case.or(file.case).unwrap_or_else(|| "exp_scalar".into()),
        form: f.form.or(file.form).unwrap_or_else(|| "identity".into()),
        substeps: file.substeps.unwrap_or(DEFAULT_SUBSTEPS),
    };
    validate(&config)?;
    Ok(config)
}

fn validate(c: &RunConfig) -> Result<(), CliError> {
    if c.dim == 0 {
        return Err(usage("--dim must be >= 1"));
    }
    if c.threads == Some(0) {
        return Err(usage("--threads must be >= 1"));
    }
    if c.resolution > crate::paths::MAX_RESOLUTION {
        return Err(usage(format!(
            "--resolution {} exceeds {}",
            c.resolution,
            crate::paths::MAX_RESOLUTION
        )));
    }
    match c.command {
        Command::Verify => {
            if c.lemmas.is_empty() {
                return Err(usage("no lemma selected; pass --lemma <id>[,<id>...] or --lemma all"));
            }
            for l in &c.lemmas {
                c.spec
                    .validate_for(*l)
                    .map_err(|e| usage(format!("lemma {l}: {e}")))?;
            }
        }
        Command::Solve => {
            ReferenceCase::from_id(&c.case).map_err(|e| usage(e.to_string()))?;
            let (lo, hi) = c.spec.m_range;
            if hi <= lo {
                return Err(usage("solve needs at least two values of m"));
            }
            if hi > c.resolution {
                return Err(usage(format!("--m up to {hi} needs --resolution >= {hi}")));
            }
            if hi > 16 {
                return Err(usage("solve supports m <= 16"));
            }
            if c.substeps == 0 {
                return Err(usage("substeps must be >= 1"));
            }
        }
        Command::Integrate => {
            if !matches!(c.form.as_str(), "identity" | "linear") {
                return Err(usage(format!("unknown form '{}'; expected identity or linear", c.form)));
            }
            if c.resolution > 16 {
                return Err(usage("integrate supports --resolution <= 16"));
            }
        }
        Command::Simulate | Command::Report => {}
    }
    Ok(())
}

/// What a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub passed: bool,
    pub files: Vec<PathBuf>,
    pub summary: String,
}

pub fn run(config: &RunConfig) -> Result<Outcome, CliError> {
    let go = || match config.command {
        Command::Simulate => simulate(config),
        Command::Verify => verify(config),
        Command::Solve => solve(config),
        Command::Integrate => integrate(config),
        Command::Report => aggregate(config),
    };
    match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Run(format!("thread pool: {e}")))?
            .install(go),
        None => go(),
    }
}

fn rel(out: &Path, p: &Path) -> String {
    p.strip_prefix(out).unwrap_or(p).display().to_string()
}

fn finish(config: &RunConfig, files: Vec<PathBuf>, passed: bool, summary: String) -> Result<Outcome, CliError> {
    let names = files.iter().map(|p| rel(&config.out, p)).collect();
    Manifest::new(config.command.name(), config.seed, config, names)
        .and_then(|m| m.write(&config.out))
        .map_err(run_err("manifest"))?;
    let mut files = files;
    files.push(config.out.join(report::MANIFEST_FILE));
    Ok(Outcome {
        passed,
        files,
        summary,
    })
}

fn create(path: &Path) -> Result<fs::File, CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err("create output directory"))?;
    }
    fs::File::create(path).map_err(|e| CliError::Run(format!("create {}: {e}", path.display())))
}

fn simulate(c: &RunConfig) -> Result<Outcome, CliError> {
    let path = DyadicBrownianPath::generate(c.dim, c.resolution, c.seed).map_err(run_err("simulate"))?;
    let file = c.out.join("path.csv");
    path.write_csv(create(&file)?).map_err(run_err("simulate"))?;
    let summary = format!(
        "simulate: {} points of a {}-dimensional path, seed {}",
        (1u64 << c.resolution) + 1,
        c.dim,
        c.seed
    );
    finish(c, vec![file], true, summary)
}

fn verify(c: &RunConfig) -> Result<Outcome, CliError> {
    let mut files = Vec::new();
    let mut all_rows = Vec::new();
    let mut lines = Vec::new();
    let mut passed = true;
    for lemma in &c.lemmas {
        let r = verify_lemma(*lemma, &c.spec).map_err(|e| CliError::Run(format!("lemma {lemma}: {e}")))?;
        let dir = c.out.join(lemma.id());
        report::write_lemma_report(&r, &dir).map_err(|e| CliError::Run(format!("lemma {lemma}: {e}")))?;
        for f in [report::ROWS_FILE, report::CHECKS_FILE, report::VERDICT_FILE, report::PLOT_FILE] {
            files.push(dir.join(f));
        }
        passed &= r.verdict == Verdict::Pass;
        lines.push(format!("{} {}", lemma.id(), r.verdict));
        for ch in &r.checks {
            lines.push(format!("  {} [{}] observed {:.6} bound {:.6}: {}", ch.name, ch.verdict, ch.observed, ch.bound, ch.detail));
        }
        all_rows.extend(r.rows);
    }
    let rows_file = c.out.join(report::ROWS_FILE);
    report::write_rows_csv(&all_rows, create(&rows_file)?).map_err(run_err("write estimates"))?;
    files.push(rows_file);
    let verdicts_file = c.out.join("verdicts.txt");
    let verdict_lines: Vec<&String> = lines.iter().filter(|l| !l.starts_with(' ')).collect();
    fs::write(
        &verdicts_file,
        verdict_lines.iter().map(|l| format!("{l}\n")).collect::<String>(),
    )
    .map_err(io_err("write verdicts"))?;
    files.push(verdicts_file);
    finish(c, files, passed, lines.join("\n"))
}

fn solve(c: &RunConfig) -> Result<Outcome, CliError> {
    let case = ReferenceCase::from_id(&c.case).map_err(|e| usage(e.to_string()))?;
    let path = DyadicBrownianPath::generate(case.driver_dim(), c.resolution, c.seed).map_err(run_err("solve"))?;
    let field = case.field();
    let y0 = case.initial_state();
    let (lo, hi) = c.spec.m_range;
    let steps = wz_sequence(field.as_ref(), &y0, &path, lo..hi, c.substeps, c.rho.p).map_err(run_err("solve"))?;

    let table = c.out.join("wz.csv");
    let mut w = csv::Writer::from_writer(create(&table)?);
    let csv_err = |e: csv::Error| CliError::Run(format!("write wz.csv: {e}"));
    w.write_record(["m", "dp_gap", "sup_gap", "endpoint_error", "max_rk_diagnostic"])
        .map_err(csv_err)?;
    let mut gaps = Vec::new();
    for s in &steps {
        let reference = stratonovich_reference(&case, &path, s.m).map_err(run_err("solve"))?;
        let n = s.result.dim_state;
        let end = &reference[reference.len() - n..];
        let err = s
            .result
            .endpoint()
            .iter()
            .zip(end)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        w.write_record([
            s.m.to_string(),
            s.dp_gap.to_string(),
            s.sup_gap.to_string(),
            err.to_string(),
            s.result.max_diagnostic().to_string(),
        ])
        .map_err(csv_err)?;
        if s.dp_gap > 0.0 {
            gaps.push((s.m as f64, s.dp_gap));
        }
    }
    w.flush().map_err(io_err("write wz.csv"))?;
    let last = steps.last().expect("range checked non-empty");
    let traj = c.out.join(format!("solution_m{}.csv", last.m));
    last.result.write_csv(create(&traj)?).map_err(run_err("solve"))?;
    let slope = fit_slope(&gaps).map(|f| f.slope).ok();
    let summary = match slope {
        Some(s) => format!("solve {}: fitted log2 slope of d_p gaps over m = {s:.4}", case.id()),
        None => format!("solve {}: too few positive gaps for a slope", case.id()),
    };
    finish(c, vec![table, traj], true, summary)
}

/// `f(x)_{ob} = δ_{ob} + ½ x_{(o+b) mod d}`, a linear form with a nonzero
/// derivative coupling every pair of coordinates.
pub fn demo_linear_form(d: usize) -> AffineForm {
    let mut slope = vec![0.0; d * d * d];
    let mut offset = vec![0.0; d * d];
    for o in 0..d {
        offset[o * d + o] = 1.0;
        for b in 0..d {
            slope[(o * d + b) * d + (o + b) % d] = 0.5;
        }
    }
    AffineForm::new(d, d, slope, offset).expect("shapes fixed above")
}

fn integrate(c: &RunConfig) -> Result<Outcome, CliError> {
    let path = DyadicBrownianPath::generate(c.dim, c.resolution, c.seed).map_err(run_err("integrate"))?;
    let driver = path.polygonal(c.resolution).map_err(run_err("integrate"))?;
    let form: AffineForm = match c.form.as_str() {
        "identity" => AffineForm::identity(c.dim),
        _ => demo_linear_form(c.dim),
    };
    let whole = integrate_default(&form, &driver, 0.0, 1.0).map_err(run_err("integrate"))?;
    let left = integrate_default(&form, &driver, 0.0, 0.5).map_err(run_err("integrate"))?;
    let right = integrate_default(&form, &driver, 0.5, 1.0).map_err(run_err("integrate"))?;
    let chen = left.chen_mul(&right).map_err(run_err("integrate"))?;
    let (d1, d2) = whole.level_diff(&chen).map_err(run_err("integrate"))?;
    let chen_gap = d1.iter().chain(&d2).map(|x| x.abs()).fold(0.0, f64::max);

    let file = c.out.join("integral.csv");
    let mut w = csv::Writer::from_writer(create(&file)?);
    let csv_err = |e: csv::Error| CliError::Run(format!("write integral.csv: {e}"));
    w.write_record(["level", "index", "value"]).map_err(csv_err)?;
    for (i, v) in whole.level1().iter().enumerate() {
        w.write_record(["1".to_string(), i.to_string(), v.to_string()]).map_err(csv_err)?;
    }
    for (i, v) in whole.level2().iter().enumerate() {
        w.write_record(["2".to_string(), i.to_string(), v.to_string()]).map_err(csv_err)?;
    }
    w.flush().map_err(io_err("write integral.csv"))?;

    let mut summary = format!("integrate {}: Chen defect {chen_gap:.3e}", c.form);
    if c.form == "identity" {
        let lift = driver.increment(0.0, 1.0);
        let (e1, e2) = whole.level_diff(&lift).map_err(run_err("integrate"))?;
        let err = e1.iter().chain(&e2).map(|x| x.abs()).fold(0.0, f64::max);
        summary.push_str(&format!(", distance to the driver's lift {err:.3e}"));
    }
    finish(c, vec![file], true, summary)
}

fn aggregate(c: &RunConfig) -> Result<Outcome, CliError> {
    let found = report::collect_verdicts(&c.out)
        .map_err(|e| usage(format!("cannot read {}: {e}", c.out.display())))?;
    if found.is_empty() {
        return Err(usage(format!(
            "no verification results under {}; run `verify --out {}` first",
            c.out.display(),
            c.out.display()
        )));
    }
    let md = c.out.join("summary.md");
    fs::write(&md, report::render_summary(&found)).map_err(io_err("write summary"))?;
    let table = c.out.join("summary.csv");
    let mut w = csv::Writer::from_writer(create(&table)?);
    let csv_err = |e: csv::Error| CliError::Run(format!("write summary.csv: {e}"));
    w.write_record(["lemma_id", "verdict", "checks_passed", "checks_total", "anchor"])
        .map_err(csv_err)?;
    let mut passed = true;
    let mut lines = Vec::new();
    for (_, v) in &found {
        let ok = v.checks.iter().filter(|c| c.verdict == Verdict::Pass).count();
        w.write_record([
            v.lemma_id.clone(),
            v.verdict.to_string(),
            ok.to_string(),
            v.checks.len().to_string(),
            v.anchor.clone(),
        ])
        .map_err(csv_err)?;
        passed &= v.verdict == Verdict::Pass;
        lines.push(format!("{} {}", v.lemma_id, v.verdict));
    }
    w.flush().map_err(io_err("write summary.csv"))?;
    finish(c, vec![md, table], passed, lines.join("\n"))
}

/// Parses `args` (including the program name), runs, prints, and returns
/// the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = resolve(cli).and_then(|c| run(&c));
    match result {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            if outcome.passed {
                EXIT_OK
            } else {
                EXIT_FAIL
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Usage(_) = e {
                eprintln!();
                eprintln!("{}", Cli::command().render_usage());
            }
            e.exit_code()
        }
    }
}
