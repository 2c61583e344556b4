//! `caplab` command-line interface.
//!
//! Exit codes: 0 on success, 1 when a mathematical precondition is violated,
//! 2 on I/O, parse or usage errors.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use caplab::feasibility::RealizationRequest;
use caplab::fmt::{fmt_list, fmt_sig, round_sig};
use caplab::phase_lab::{
    analytic_phase_grid, empirical_phase_grid, log_axis, render_heatmap, CellFilter, Channel, HeatmapStyle,
    SweepOptions,
};
use caplab::toy_models::{InputDistribution, ModelFamily, ModelSpec, Nonlinearity, TrainConfig};
use caplab::{
    alt_capacity_vector, block_decomposition, capacity_vector, expected_loss_closed_form, kurtosis_of,
    solve_allocation, train, EmbeddingMatrix, Error, ImportanceVector,
};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "caplab", version, about = "Feature capacity and superposition phase diagrams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-feature capacities of an embedding matrix.
    Capacity(CapacityArgs),
    /// Optimal capacity allocation of the quadratic model.
    Solve(SolveArgs),
    /// Build an embedding matrix with prescribed capacities.
    Realize(RealizeArgs),
    /// Decompose a matrix into semiorthogonal blocks.
    Analyze(AnalyzeArgs),
    /// Closed-form expected loss of the quadratic model.
    Loss(LossArgs),
    /// Train a toy model.
    Train(TrainArgs),
    /// Compute a phase diagram over importance and sparsity.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct CapacityArgs {
    /// Matrix CSV file, or `-` for standard input.
    #[arg(long)]
    matrix: String,
    /// Use the SVD-based alternative definition.
    #[arg(long)]
    alt: bool,
}

#[derive(Args)]
#[command(group(ArgGroup::new("kurt").args(["k", "p"])))]
struct SolveArgs {
    /// JSON problem `{"v": [...], "D": 3, "k": 9}`, or `-` for standard input.
    #[arg(long, conflicts_with_all = ["v", "d", "k", "p"])]
    problem: Option<String>,
    /// Feature importances.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    v: Option<Vec<f64>>,
    /// Embedding dimension.
    #[arg(long)]
    d: Option<usize>,
    /// Input kurtosis.
    #[arg(long)]
    k: Option<f64>,
    /// Keep-probability; sets k = 9/(5p).
    #[arg(long)]
    p: Option<f64>,
}

#[derive(Args)]
struct RealizeArgs {
    /// JSON request `{"capacities": [...], "D": 1, "norms": [...]}`, or `-`.
    #[arg(long, conflicts_with_all = ["c", "d", "norms"])]
    request: Option<String>,
    /// Target capacities.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    c: Option<Vec<f64>>,
    /// Embedding dimension.
    #[arg(long)]
    d: Option<usize>,
    /// Squared column lengths. Without them the result is semiorthogonal.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    norms: Option<Vec<f64>>,
    /// Output file; standard output when omitted or `-`.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Matrix CSV file, or `-` for standard input.
    #[arg(long)]
    matrix: String,
    /// Relative gap between singular values that separates blocks.
    #[arg(long, default_value_t = caplab::geometry::DEFAULT_GAP_TOLERANCE)]
    tol: f64,
}

#[derive(Args)]
#[command(group(ArgGroup::new("kurt").args(["k", "p"]).required(true)))]
struct LossArgs {
    /// Matrix CSV file, or `-` for standard input.
    #[arg(long)]
    matrix: String,
    /// Feature importances.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    v: Vec<f64>,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON training job, or `-` for standard input.
    #[arg(long)]
    config: String,
    /// Overrides the seed in the job file.
    #[arg(long, env = "CAPLAB_SEED")]
    seed: Option<u64>,
    /// Directory for `result.json` and `weights.csv`.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    QuadReg,
    ReluReg,
    GeluReg,
    QuadAe,
    ReluAe,
    GeluAe,
}

impl ModelArg {
    fn parts(self) -> (ModelFamily, Nonlinearity) {
        use ModelFamily::*;
        use Nonlinearity::*;
        match self {
            ModelArg::QuadReg => (Regression, Quadratic),
            ModelArg::ReluReg => (Regression, Relu),
            ModelArg::GeluReg => (Regression, Gelu),
            ModelArg::QuadAe => (Autoencoder, Quadratic),
            ModelArg::ReluAe => (Autoencoder, Relu),
            ModelArg::GeluAe => (Autoencoder, Gelu),
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum, default_value = "quad-reg")]
    model: ModelArg,
    /// Fill the quadratic-model optimum for every cell.
    #[arg(long)]
    analytic: bool,
    /// Train one model per cell.
    #[arg(long)]
    empirical: bool,
    #[arg(long, default_value_t = 6)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    d: usize,
    /// Number of importance and sparsity points, as `VxP`.
    #[arg(long, default_value = "25x25", value_parser = parse_grid)]
    grid: (usize, usize),
    /// Importance range `lo,hi`.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.01, 100.0])]
    v_range: Vec<f64>,
    /// Keep-probability range `lo,hi`.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.01, 1.0])]
    p_range: Vec<f64>,
    /// Base seed for the empirical cells.
    #[arg(long, env = "CAPLAB_SEED", default_value_t = 0)]
    seed: u64,
    /// JSON training configuration for the empirical cells.
    #[arg(long)]
    train_config: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    restarts: Option<usize>,
    /// Only train importance indices `a..b` (zero-based, end exclusive).
    #[arg(long, value_parser = parse_range)]
    only_v: Option<std::ops::Range<usize>>,
    /// Only train sparsity indices `a..b`.
    #[arg(long, value_parser = parse_range)]
    only_p: Option<std::ops::Range<usize>>,
    /// Worker threads; all cores by default.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or("expected VxP, e.g. 25x25")?;
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("bad grid size `{t}`: {e}"));
    Ok((parse(a)?, parse(b)?))
}

fn parse_range(s: &str) -> Result<std::ops::Range<usize>, String> {
    let (a, b) = s.split_once("..").ok_or("expected a..b")?;
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("bad index `{t}`: {e}"));
    Ok(parse(a)?..parse(b)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Problem {
    v: Vec<f64>,
    #[serde(rename = "D", alias = "d")]
    d: usize,
    k: f64,
}

/// `train` job file.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainJob {
    family: ModelFamily,
    nonlinearity: Nonlinearity,
    #[serde(rename = "D", alias = "d")]
    d: usize,
    importances: Vec<f64>,
    /// Keep-probability of each input feature.
    sparsity: f64,
    #[serde(default)]
    train: TrainConfig,
}

#[derive(Debug)]
enum Failure {
    Domain(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else {
            Failure::Domain(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Io(format!("invalid JSON: {e}"))
    }
}

type Outcome = Result<(), Failure>;

fn domain(msg: impl Into<String>) -> Failure {
    Failure::Domain(msg.into())
}

fn read_source(path: &str) -> Result<String, Failure> {
    if path == "-" {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s)?;
        Ok(s)
    } else {
        fs::read_to_string(path).map_err(|e| Failure::Io(format!("{path}: {e}")))
    }
}

fn read_matrix(path: &str) -> Result<EmbeddingMatrix, Failure> {
    Ok(EmbeddingMatrix::from_csv(&read_source(path)?)?)
}

fn write_file(path: &Path, contents: &str) -> Outcome {
    fs::write(path, contents).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

/// Rounds every float to the shared output precision.
fn rounded(value: Value) -> Value {
    match value {
        Value::Number(n) if n.is_f64() => n
            .as_f64()
            .and_then(|x| serde_json::Number::from_f64(round_sig(x)))
            .map(Value::Number)
            .unwrap_or(Value::Null),
        Value::Array(a) => Value::Array(a.into_iter().map(rounded).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, rounded(v))).collect()),
        other => other,
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String, Failure> {
    let mut s = serde_json::to_string_pretty(&rounded(serde_json::to_value(value)?))?;
    s.push('\n');
    Ok(s)
}

fn kurtosis(k: Option<f64>, p: Option<f64>) -> Result<f64, Failure> {
    match (k, p) {
        (Some(k), None) => Ok(k),
        (None, Some(p)) => Ok(kurtosis_of(p)?),
        _ => Err(domain("give exactly one of --k or --p")),
    }
}

fn capacity(args: CapacityArgs, out: &mut impl Write) -> Outcome {
    let w = read_matrix(&args.matrix)?;
    let c = if args.alt { alt_capacity_vector(&w)? } else { capacity_vector(&w) };
    writeln!(out, "{}", fmt_list(c.values()))?;
    writeln!(out, "total={}", fmt_sig(c.sum()))?;
    Ok(())
}

fn solve(args: SolveArgs, out: &mut impl Write) -> Outcome {
    let problem = match args.problem {
        Some(path) => serde_json::from_str(&read_source(&path)?)?,
        None => Problem {
            v: args.v.ok_or_else(|| domain("--v is required without --problem"))?,
            d: args.d.ok_or_else(|| domain("--d is required without --problem"))?,
            k: kurtosis(args.k, args.p)?,
        },
    };
    let sol = solve_allocation(&ImportanceVector::new(problem.v)?, problem.d, problem.k)?;
    out.write_all(to_json(&sol)?.as_bytes())?;
    Ok(())
}

fn realize(args: RealizeArgs, out: &mut impl Write) -> Outcome {
    let request = match args.request {
        Some(path) => serde_json::from_str(&read_source(&path)?)?,
        None => RealizationRequest {
            capacities: args.c.ok_or_else(|| domain("--c is required without --request"))?,
            d: args.d.ok_or_else(|| domain("--d is required without --request"))?,
            norms: args.norms,
        },
    };
    let csv = request.realize()?.to_csv();
    match args.out.as_deref() {
        None | Some("-") => out.write_all(csv.as_bytes())?,
        Some(path) => write_file(Path::new(path), &csv)?,
    }
    Ok(())
}

fn analyze(args: AnalyzeArgs, out: &mut impl Write) -> Outcome {
    let w = read_matrix(&args.matrix)?;
    let dec = block_decomposition(&w, args.tol)?;
    out.write_all(to_json(&dec)?.as_bytes())?;
    Ok(())
}

fn loss(args: LossArgs, out: &mut impl Write) -> Outcome {
    let w = read_matrix(&args.matrix)?;
    let k = kurtosis(args.k, args.p)?;
    let l = expected_loss_closed_form(&w, &ImportanceVector::new(args.v)?, k)?;
    writeln!(out, "loss={}", fmt_sig(l))?;
    Ok(())
}

fn train_cmd(args: TrainArgs, out: &mut impl Write) -> Outcome {
    let mut job: TrainJob = serde_json::from_str(&read_source(&args.config)?)?;
    if let Some(seed) = args.seed {
        job.train.seed = seed;
    }
    let spec = ModelSpec::new(job.family, job.nonlinearity, job.d, ImportanceVector::new(job.importances)?)?;
    let dist = InputDistribution::new(job.sparsity)?;
    let result = train(&spec, &dist, &job.train)?;
    fs::create_dir_all(&args.out_dir)?;
    write_file(&args.out_dir.join("result.json"), &to_json(&result)?)?;
    write_file(&args.out_dir.join("weights.csv"), &result.final_weights.to_csv())?;
    writeln!(
        out,
        "C={} final_loss={} seed={}",
        fmt_list(result.capacity.values()),
        fmt_sig(result.final_loss),
        result.seed
    )?;
    Ok(())
}

fn sweep(args: SweepArgs, out: &mut impl Write) -> Outcome {
    let (nv, np) = args.grid;
    let v_axis = log_axis(args.v_range[0], args.v_range[1], nv)?;
    let p_axis = log_axis(args.p_range[0], args.p_range[1], np)?;
    let (family, nonlinearity) = args.model.parts();
    let analytic = args.analytic || !args.empirical;
    fs::create_dir_all(&args.out_dir)?;

    let grid = if args.empirical {
        let mut config = match &args.train_config {
            Some(path) => serde_json::from_str(&read_source(path)?)?,
            None => TrainConfig::default(),
        };
        config.seed = args.seed;
        config.steps = args.steps.unwrap_or(config.steps);
        config.batch = args.batch.unwrap_or(config.batch);
        config.learning_rate = args.lr.unwrap_or(config.learning_rate);
        config.restarts = args.restarts.unwrap_or(config.restarts);
        let template = ModelSpec::new(family, nonlinearity, args.d, ImportanceVector::uniform(args.n)?)?;
        let only = (args.only_v.is_some() || args.only_p.is_some()).then(|| CellFilter {
            importance: args.only_v.clone().unwrap_or(0..nv),
            sparsity: args.only_p.clone().unwrap_or(0..np),
        });
        let options = SweepOptions {
            jobs: args.jobs,
            checkpoint: Some(args.out_dir.join("checkpoint.jsonl")),
            only,
        };
        let mut g = empirical_phase_grid(&template, &v_axis, &p_axis, &config, &options)?;
        if analytic {
            g.merge(&analytic_phase_grid(args.n, args.d, &v_axis, &p_axis)?)?;
        }
        g
    } else {
        if args.d >= args.n {
            return Err(domain(format!("a phase diagram needs N > D, got N = {}, D = {}", args.n, args.d)));
        }
        analytic_phase_grid(args.n, args.d, &v_axis, &p_axis)?
    };

    write_file(&args.out_dir.join("grid.csv"), &grid.to_csv())?;
    let channel = if args.empirical { Channel::Empirical } else { Channel::Analytic };
    let style = HeatmapStyle::default();
    if grid.has_channel(channel) {
        write_file(&args.out_dir.join("grid.svg"), &render_heatmap(&grid, channel, &style)?)?;
    }
    if args.empirical && analytic {
        write_file(
            &args.out_dir.join("grid_analytic.svg"),
            &render_heatmap(&grid, Channel::Analytic, &style)?,
        )?;
    }
    writeln!(out, "cells={}", nv * np)?;
    if let Some(mad) = grid.mean_abs_deviation() {
        writeln!(out, "mean_abs_deviation={}", fmt_sig(mad))?;
    }
    let diverged = grid.cells().iter().filter(|c| c.diverged).count();
    if diverged > 0 {
        writeln!(out, "diverged={diverged}")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Capacity(a) => capacity(a, &mut out),
        Command::Solve(a) => solve(a, &mut out),
        Command::Realize(a) => realize(a, &mut out),
        Command::Analyze(a) => analyze(a, &mut out),
        Command::Loss(a) => loss(a, &mut out),
        Command::Train(a) => train_cmd(a, &mut out),
        Command::Sweep(a) => sweep(a, &mut out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
