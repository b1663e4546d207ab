use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use impdelay::approx::epsilon_limit;
use impdelay::{
    certify, convergence_study, from_reparam, integrate_reparam, limit_family, load_scenario, parse_control,
    roundtrip_residual, simulate_extended, solve, to_reparam, transcribe, validate_impulsive_control, write_control,
    ControlSpec, Error, ExtendedTrajectory, ScenarioDoc, Side, SimOptions, SolveOptions, Study, Tolerances,
};

#[derive(Parser)]
#[command(
    name = "impdelay",
    version,
    about = "Impulsive control of systems with a state delay"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the extended process of a control.
    Simulate(SimulateArgs),
    /// Endpoint errors of mollified or density approximations.
    Approximate(ApproximateArgs),
    /// Minimize the terminal cost over a piecewise constant transcription.
    Optimize(OptimizeArgs),
    /// Check the maximum principle for a candidate control.
    CheckPmp(CheckArgs),
    /// Map a control to the reparameterized form and back.
    Roundtrip(ControlArgs),
    /// Check admissibility of a control.
    Validate(ControlArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct Common {
    /// Scenario document (TOML).
    scenario: PathBuf,
    /// Write here instead of stdout. The file is replaced atomically.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ControlSource {
    /// Named family from the scenario's `[families]` tables.
    #[arg(long)]
    family: Option<String>,
    /// Control document to use instead of the scenario's `[control]`.
    #[arg(long, conflicts_with = "family")]
    control: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    source: ControlSource,
    /// Integration step in the reparameterized clock.
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    /// Require the step to divide every breakpoint interval.
    #[arg(long)]
    strict: bool,
    /// Uniform output samples on [0, T].
    #[arg(long, default_value_t = 201)]
    points: usize,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum StudyKind {
    Mollify,
    Density,
}

#[derive(Args)]
struct ApproximateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    source: ControlSource,
    #[arg(long, value_enum, default_value_t = StudyKind::Mollify)]
    study: StudyKind,
    /// Rectangle widths. Defaults to halvings of the largest admissible width.
    #[arg(long, value_delimiter = ',')]
    eps: Vec<f64>,
    /// Density indices.
    #[arg(long = "j", value_delimiter = ',', default_values_t = [1usize, 10, 100])]
    js: Vec<usize>,
    /// Rectangle side per atom (before|after), in time order.
    #[arg(long, value_delimiter = ',')]
    sides: Vec<String>,
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct OptimizeArgs {
    #[command(flatten)]
    common: Common,
    /// Number of control pieces M.
    #[arg(long, default_value_t = 16)]
    grid: usize,
    /// RK4 steps per piece.
    #[arg(long, default_value_t = 8)]
    substeps: usize,
    /// Projected gradient tolerance.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Iterations per penalty round.
    #[arg(long, default_value_t = 400)]
    max_iters: usize,
    #[arg(long, default_value_t = 6)]
    rounds: usize,
    #[arg(long, default_value_t = 0)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Control document to start from.
    #[arg(long)]
    warm_start: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Convergence log. Defaults to `<output>.log.json`, or stderr without -o.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    common: Common,
    /// Candidate control document.
    candidate: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    #[arg(long, default_value_t = 1e-8)]
    tol_nontriviality: f64,
    #[arg(long, default_value_t = 1e-5)]
    tol_integral: f64,
    #[arg(long, default_value_t = 1e-6)]
    tol_inequality: f64,
    #[arg(long, default_value_t = 1e-5)]
    tol_support: f64,
}

#[derive(Args)]
struct ControlArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    source: ControlSource,
    /// Largest accepted round-trip residual.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
}

#[derive(Debug)]
enum Failure {
    Domain(Error),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Domain(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

/// Provenance stamped on every output.
struct Header {
    scenario_sha256: String,
    flags: Vec<String>,
}

impl Header {
    fn lines(&self) -> Vec<String> {
        vec![
            format!("impdelay {}", env!("CARGO_PKG_VERSION")),
            format!("scenario sha256 {}", self.scenario_sha256),
            format!("flags {}", self.flags.join(" ")),
        ]
    }

    fn comment(&self) -> String {
        self.lines().iter().map(|l| format!("# {l}\n")).collect()
    }

    fn json(&self) -> Value {
        json!({
            "tool": "impdelay",
            "version": env!("CARGO_PKG_VERSION"),
            "scenario_sha256": self.scenario_sha256,
            "flags": self.flags,
        })
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn load(common: &Common) -> Result<(ScenarioDoc, Header), Failure> {
    let text = read(&common.scenario)?;
    let digest = Sha256::digest(text.as_bytes());
    let scenario_sha256 = digest.iter().map(|b| format!("{b:02x}")).collect();
    let doc = load_scenario(&text)?;
    let flags = std::env::args().skip(1).collect();
    Ok((doc, Header { scenario_sha256, flags }))
}

fn control(doc: &ScenarioDoc, source: &ControlSource) -> Result<ControlSpec, Failure> {
    match &source.control {
        Some(path) => Ok(parse_control(&read(path)?, &doc.scenario)?),
        None => Ok(doc.control(source.family.as_deref())?),
    }
}

/// Writes `text` to `path` through a temporary file in the same directory,
/// or to stdout.
fn emit(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    let Some(path) = path else {
        let mut out = std::io::stdout().lock();
        out.write_all(text.as_bytes())?;
        return Ok(out.flush()?);
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
    tmp.write_all(text.as_bytes())?;
    tmp.flush()?;
    tmp.persist(path)
        .map_err(|e| Failure::Io(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}

fn trajectory_csv(header: &Header, tr: &ExtendedTrajectory) -> String {
    let mut out = header.comment();
    out.push('t');
    for k in 0..tr.n {
        out.push_str(&format!(",x[{k}]"));
    }
    out.push_str(",left_limit\n");
    for s in &tr.samples {
        out.push_str(&format!("{:.17e}", s.t));
        for v in &s.x {
            out.push_str(&format!(",{v:.17e}"));
        }
        out.push_str(if s.left_limit { ",1\n" } else { ",0\n" });
    }
    out
}

fn simulate(a: &SimulateArgs) -> Result<ExitCode, Failure> {
    let (doc, header) = load(&a.common)?;
    let c = control(&doc, &a.source)?;
    let opts = SimOptions {
        step: a.step,
        strict_alignment: a.strict,
        output_points: a.points,
        ..SimOptions::default()
    };
    let tr = simulate_extended(&doc.scenario, &c.measure, &c.family, &opts)?;
    let text = match a.format {
        Format::Csv => trajectory_csv(&header, &tr),
        Format::Json => pretty(&json!({ "header": header.json(), "trajectory": tr })),
    };
    emit(a.common.output.as_deref(), &text)?;
    Ok(ExitCode::SUCCESS)
}

fn approximate(a: &ApproximateArgs) -> Result<ExitCode, Failure> {
    let (doc, header) = load(&a.common)?;
    let sc = &doc.scenario;
    let c = control(&doc, &a.source)?;
    // Mollified atoms converge to the family fixed by their sides, so that
    // family is the reference; --family and --control only select the measure.
    let mut family = c.family.clone();
    let study = match a.study {
        StudyKind::Mollify => {
            let atoms = c.measure.atoms().len();
            let sides: Vec<Side> = match a.sides.len() {
                0 => vec![Side::After; atoms],
                k if k == atoms => a.sides.iter().map(|s| s.parse()).collect::<Result<_, _>>()?,
                k => {
                    return Err(Error::DimensionMismatch(format!("{k} sides given for {atoms} atoms")).into());
                }
            };
            let widths = if a.eps.is_empty() {
                let limit = epsilon_limit(&c.measure, sc);
                (1..=4).map(|k| limit / 2f64.powi(k)).collect()
            } else {
                a.eps.clone()
            };
            family = limit_family(&c.measure, &sides, sc)?;
            Study::Mollify { sides, widths }
        }
        StudyKind::Density => Study::Density { js: a.js.clone() },
    };
    let opts = SimOptions {
        step: a.step,
        ..SimOptions::default()
    };
    let report = convergence_study(sc, &c.measure, &family, &study, &opts, a.jobs)?;
    let text = match a.format {
        Format::Csv => format!("{}{}", header.comment(), report.to_csv()),
        Format::Json => pretty(&json!({ "header": header.json(), "report": report })),
    };
    emit(a.common.output.as_deref(), &text)?;
    Ok(ExitCode::SUCCESS)
}

fn optimize(a: &OptimizeArgs) -> Result<ExitCode, Failure> {
    let (doc, header) = load(&a.common)?;
    let sc = &doc.scenario;
    let mut nlp = transcribe(sc, a.grid);
    nlp.substeps = a.substeps.max(1);
    let warm_start = match &a.warm_start {
        Some(path) => {
            let c = parse_control(&read(path)?, sc)?;
            Some(nlp.sample(&to_reparam(&c.measure, &c.family, sc)?)?)
        }
        None => None,
    };
    let opts = SolveOptions {
        pieces: a.grid,
        substeps: a.substeps,
        max_iters: a.max_iters,
        tol: a.tol,
        rounds: a.rounds,
        restarts: a.restarts,
        seed: a.seed,
        warm_start,
        jobs: a.jobs,
        ..SolveOptions::default()
    };
    let sol = solve(sc, &opts)?;
    let (mu, family) = from_reparam(&sol.process.controls, sc)?;
    let mut lines = header.lines();
    lines.push(format!("cost {:.17e}", sol.cost));
    let candidate = write_control(&mu, &family, &lines);
    let log = pretty(&json!({
        "header": header.json(),
        "cost": sol.cost,
        "mass": sol.mass,
        "target_distance": sol.target_distance,
        "multipliers": sol.multipliers,
        "x": sol.x,
        "log": sol.log,
    }));
    let log_path = a.log.clone().or_else(|| {
        a.common.output.as_ref().map(|o| {
            let mut s = o.clone().into_os_string();
            s.push(".log.json");
            PathBuf::from(s)
        })
    });
    match &log_path {
        Some(p) => emit(Some(p), &log)?,
        None => eprint!("{log}"),
    }
    emit(a.common.output.as_deref(), &candidate)?;
    Ok(ExitCode::SUCCESS)
}

fn check_pmp(a: &CheckArgs) -> Result<ExitCode, Failure> {
    let (doc, header) = load(&a.common)?;
    let sc = &doc.scenario;
    let c = parse_control(&read(&a.candidate)?, sc)?;
    let rc = to_reparam(&c.measure, &c.family, sc)?;
    let opts = SimOptions {
        step: a.step,
        ..SimOptions::default()
    };
    let rp = integrate_reparam(sc, &rc, &opts)?;
    let tol = Tolerances {
        nontriviality: a.tol_nontriviality,
        integral: a.tol_integral,
        inequality: a.tol_inequality,
        support: a.tol_support,
    };
    let (_, cert) = certify(&rp, sc, &tol, opts.bound)?;
    emit(
        a.common.output.as_deref(),
        &pretty(&json!({ "header": header.json(), "certificate": cert })),
    )?;
    Ok(if cert.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn roundtrip(a: &ControlArgs) -> Result<ExitCode, Failure> {
    let (doc, header) = load(&a.common)?;
    let sc = &doc.scenario;
    let c = control(&doc, &a.source)?;
    let residual = roundtrip_residual(&c.measure, &c.family, sc)?;
    let rc = to_reparam(&c.measure, &c.family, sc)?;
    let pass = residual <= a.tol;
    emit(
        a.common.output.as_deref(),
        &pretty(&json!({
            "header": header.json(),
            "residual": residual,
            "tolerance": a.tol,
            "tv_norm": c.measure.tv_norm(),
            "reparam_mass": rc.total_mass(),
            "pass": pass,
        })),
    )?;
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn validate(a: &ControlArgs) -> Result<ExitCode, Failure> {
    let (doc, header) = load(&a.common)?;
    let c = control(&doc, &a.source)?;
    let report = validate_impulsive_control(&c.measure, &c.family, &doc.scenario);
    let violations: Vec<Value> = report
        .violations
        .iter()
        .map(|v| {
            json!({
                "clause": v.clause.to_string(),
                "r": v.r,
                "segment": v.segment,
                "residual": v.residual,
                "message": v.message,
            })
        })
        .collect();
    emit(
        a.common.output.as_deref(),
        &pretty(&json!({
            "header": header.json(),
            "valid": report.is_valid(),
            "violations": violations,
        })),
    )?;
    Ok(if report.is_valid() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Approximate(a) => approximate(a),
        Command::Optimize(a) => optimize(a),
        Command::CheckPmp(a) => check_pmp(a),
        Command::Roundtrip(a) => roundtrip(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let (kind, message) = match f {
                Failure::Domain(e) => (e.kind().to_string(), e.to_string()),
                Failure::Io(m) => ("IoError".to_string(), m),
            };
            eprintln!("{}", json!({ "error": kind, "message": message }));
            ExitCode::FAILURE
        }
    }
}
