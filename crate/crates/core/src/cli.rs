//! Command-line front end: `run` simulates a scenario (optionally over a
//! sweep), `analyze` evaluates the closed-form models, `decode` inspects a
//! frame.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use crate::analytics::{self, DiscreteDist, Ecdf, Viewpoint};
use crate::codec;
use crate::output;
use crate::scenario::{self, ScenarioError, ScenarioFile};
use crate::simnet::PeriodDistribution;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_INVARIANT: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "vep", version, about = "Verifiable event extensions: simulate and analyze")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario file and write its outputs.
    Run(RunArgs),
    /// Evaluate a closed-form delay or overhead model.
    Analyze(AnalyzeArgs),
    /// Decode a hex-encoded frame and print it as JSON.
    Decode {
        /// Hex string, or @path to a file holding one.
        frame: String,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub scenario: PathBuf,
    #[arg(short, long, default_value = "out")]
    pub out: PathBuf,
    /// Override a key, e.g. `--set view.pbft.tau_d_ms=1000`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Sweep a key over values, e.g. `--sweep pdr=1.0,0.9,0.8`. Repeat
    /// for a Cartesian product.
    #[arg(long, value_name = "KEY=V1,V2")]
    pub sweep: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Model {
    /// Mean and CDF of the waiting time until the next emission.
    Waiting,
    /// Mean delay of a queued extension with `j` entries ahead.
    Queued,
    /// g-th order statistic of m draws.
    Order,
    /// Three-stage consensus delay.
    Pbft,
    /// Verification of an event by several participants.
    Verification,
    /// Delay after r retransmission rounds.
    Retrans,
    /// Channel overhead of extensions.
    Overhead,
    /// Empirical CDF of a CSV column, compared to the waiting time.
    Ecdf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Over {
    Waiting,
    Period,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub model: Model,
    /// Period distribution file (TOML or JSON).
    #[arg(long)]
    pub dist: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub j: usize,
    #[arg(long, default_value_t = 1)]
    pub m: usize,
    #[arg(long, default_value_t = 1)]
    pub g: usize,
    #[arg(long, value_enum, default_value_t = Over::Waiting)]
    pub over: Over,
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    #[arg(long, default_value = "primary")]
    pub viewpoint: String,
    #[arg(long, default_value_t = 2)]
    pub participants: usize,
    #[arg(long)]
    pub tau_p: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub r: u32,
    #[arg(long, default_value_t = 2200.0)]
    pub tau_d: f64,
    /// Extension length, bytes.
    #[arg(long)]
    pub le: Option<f64>,
    /// Packet length, bytes.
    #[arg(long)]
    pub lp: Option<f64>,
    #[arg(long)]
    pub extended: Option<f64>,
    #[arg(long)]
    pub total: Option<f64>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value = "delay_ms")]
    pub column: String,
    /// Print the full CDF as well.
    #[arg(long)]
    pub cdf: bool,
    /// CSV prints the CDF table with `--cdf`, otherwise the scalar fields.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0} invariant violation(s); see metrics.json")]
    Invariant(u64),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invariant(_) => EXIT_INVARIANT,
            _ => EXIT_USAGE,
        }
    }
}

fn usage(s: impl Into<String>) -> CliError {
    CliError::Usage(s.into())
}

fn split_kv(s: &str) -> Result<(String, String), CliError> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| usage(format!("expected KEY=VALUE, got `{s}`")))
}

fn run_cmd(a: &RunArgs) -> Result<(), CliError> {
    let base = ScenarioFile::load(&a.scenario)?;
    let mut sets: Vec<(String, String)> = a.set.iter().map(|s| split_kv(s)).collect::<Result<_, _>>()?;
    if let Some(seed) = a.seed {
        sets.push(("seed".into(), seed.to_string()));
    }
    let file = base.with_overrides(&sets)?;

    if a.sweep.is_empty() {
        let res = scenario::run(&file)?;
        output::write_run(&res, &a.out)?;
        let m = &res.output.metrics;
        println!(
            "{}: {} packets, {} extended, CBR {:.4}, overhead {:.3}%, {} violation(s) -> {}",
            res.scenario.name,
            m.packets,
            m.extended_packets,
            m.cbr,
            m.overhead_pct,
            m.invariant_violations,
            a.out.display()
        );
        if m.invariant_violations > 0 {
            return Err(CliError::Invariant(m.invariant_violations));
        }
        return Ok(());
    }

    let axes: Vec<(String, Vec<String>)> = a
        .sweep
        .iter()
        .map(|s| scenario::parse_sweep(s))
        .collect::<Result<_, _>>()?;
    let points = scenario::sweep_points(&axes);
    // validate every point before spending time on any
    let files: Vec<(String, ScenarioFile)> = points
        .iter()
        .map(|p| {
            let label = p.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";");
            let f = file.with_overrides(p)?;
            f.scenario()?;
            Ok((label, f))
        })
        .collect::<Result<_, ScenarioError>>()?;
    let results: Vec<(String, Result<scenario::RunResult, ScenarioError>)> = files
        .par_iter()
        .map(|(label, f)| (label.clone(), scenario::run(f)))
        .collect();
    std::fs::create_dir_all(&a.out)?;
    let mut rows = Vec::with_capacity(results.len());
    let mut violations = 0;
    for (i, (label, r)) in results.into_iter().enumerate() {
        let res = r?;
        output::write_run(&res, &a.out.join(format!("point_{i:03}")))?;
        violations += res.output.metrics.invariant_violations;
        rows.push(output::sweep_row(&label, &res));
    }
    output::write_sweep(&a.out.join("sweep.csv"), &rows)?;
    println!("{} sweep point(s) -> {}", rows.len(), a.out.join("sweep.csv").display());
    if violations > 0 {
        return Err(CliError::Invariant(violations));
    }
    Ok(())
}

fn load_dist(p: &Option<PathBuf>) -> Result<PeriodDistribution, CliError> {
    let p = p.as_ref().ok_or_else(|| usage("--dist is required for this model"))?;
    PeriodDistribution::load(p).map_err(|e| usage(format!("{}: {e}", p.display())))
}

fn need(v: Option<f64>, name: &str) -> Result<f64, CliError> {
    v.ok_or_else(|| usage(format!("--{name} is required for this model")))
}

fn read_column(path: &Path, column: &str) -> Result<Vec<f64>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| usage(e.to_string()))?;
    let headers = r.headers().map_err(|e| usage(e.to_string()))?.clone();
    let idx = headers
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| usage(format!("no column `{column}` in {}", path.display())))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| usage(e.to_string()))?;
        if let Some(v) = rec.get(idx).and_then(|s| s.parse::<f64>().ok()) {
            out.push(v);
        }
    }
    Ok(out)
}

pub fn analyze(a: &AnalyzeArgs) -> Result<serde_json::Value, CliError> {
    let dom = |e: analytics::DomainError| usage(e.to_string());
    Ok(match a.model {
        Model::Waiting => {
            let d = load_dist(&a.dist)?;
            let w = analytics::waiting_time(&d);
            let mut v = json!({"mean_period_ms": d.mean(), "mean_waiting_ms": w.mean_ms});
            if a.cdf {
                v["cdf"] = json!(w.cdf);
            }
            v
        }
        Model::Queued => {
            let d = load_dist(&a.dist)?;
            json!({"j": a.j, "mean_delay_ms": analytics::queued_delay(&d, a.j)})
        }
        Model::Order => {
            let d = load_dist(&a.dist)?;
            let y = match a.over {
                Over::Waiting => analytics::waiting_time(&d).binned(),
                Over::Period => DiscreteDist::from(&d),
            };
            let o = analytics::order_stat(&y, a.m, a.g).map_err(dom)?;
            let mut v = json!({"m": a.m, "g": a.g, "mean_ms": o.mean});
            if a.cdf {
                v["values"] = json!(o.values);
                v["cdf"] = json!(o.cdf);
            }
            v
        }
        Model::Pbft => {
            let d = load_dist(&a.dist)?;
            let vp = match a.viewpoint.as_str() {
                "primary" => Viewpoint::Primary,
                "all" | "all-nodes" | "all_nodes" => Viewpoint::AllNodes,
                o => return Err(usage(format!("unknown viewpoint `{o}`"))),
            };
            let t = analytics::pbft_delay(&d, a.n, vp).map_err(dom)?;
            json!({"n": a.n, "viewpoint": vp, "mean_delay_ms": t})
        }
        Model::Verification => {
            let d = load_dist(&a.dist)?;
            let t = analytics::verification_delay(&d, a.participants).map_err(dom)?;
            json!({"participants": a.participants, "mean_delay_ms": t})
        }
        Model::Retrans => {
            let tau_p = need(a.tau_p, "tau-p")?;
            json!({"delay_ms": analytics::retrans_delay(tau_p, a.r, a.tau_d)})
        }
        Model::Overhead => {
            let o = analytics::overhead(
                need(a.le, "le")?,
                need(a.lp, "lp")?,
                need(a.extended, "extended")?,
                need(a.total, "total")?,
            )
            .map_err(dom)?;
            json!(o)
        }
        Model::Ecdf => {
            let path = a.csv.as_ref().ok_or_else(|| usage("--csv is required"))?;
            let xs = read_column(path, &a.column)?;
            let e = Ecdf::new(&xs).map_err(dom)?;
            let mut v = json!({"n": e.n, "mean": e.mean()});
            if a.dist.is_some() {
                let w = analytics::waiting_time(&load_dist(&a.dist)?);
                v["theory_mean_ms"] = json!(w.mean_ms);
                v["sup_distance"] = json!(e.sup_distance(|x| w.cdf_at(x)));
            }
            if a.cdf {
                v["points"] = json!(e.points);
            }
            v
        }
    })
}

fn decode_cmd(frame: &str) -> Result<serde_json::Value, CliError> {
    let text = match frame.strip_prefix('@') {
        Some(p) => std::fs::read_to_string(p)?,
        None => frame.to_string(),
    };
    let bytes = hex::decode(text.trim()).map_err(|e| usage(format!("not hex: {e}")))?;
    let d = codec::decode(&bytes).map_err(|e| usage(format!("undecodable frame: {e}")))?;
    Ok(codec::describe(&d, bytes.len()))
}

/// Flattens an `analyze` result: a CDF table when one is present,
/// otherwise a header row and a value row of the scalar fields.
pub fn to_csv(v: &serde_json::Value) -> String {
    let num = |x: &serde_json::Value| x.as_f64().unwrap_or(f64::NAN);
    let mut rows: Vec<(f64, f64)> = Vec::new();
    if let Some(points) = v.get("points").and_then(|p| p.as_array()) {
        rows = points.iter().map(|p| (num(&p[0]), num(&p[1]))).collect();
    } else if let Some(cdf) = v.get("cdf").and_then(|c| c.as_array()) {
        let xs: Vec<f64> = match v.get("values").and_then(|x| x.as_array()) {
            Some(vals) => vals.iter().map(num).collect(),
            None => (0..cdf.len()).map(|i| i as f64).collect(),
        };
        rows = xs.into_iter().zip(cdf.iter().map(num)).collect();
    }
    if !rows.is_empty() {
        let mut out = String::from("x_ms,cdf\n");
        for (x, p) in rows {
            out.push_str(&format!("{x},{p}\n"));
        }
        return out;
    }
    let Some(obj) = v.as_object() else {
        return format!("{v}\n");
    };
    let scalars: Vec<(&String, String)> = obj
        .iter()
        .filter(|(_, x)| !x.is_array() && !x.is_object())
        .map(|(k, x)| (k, x.as_str().map_or_else(|| x.to_string(), str::to_string)))
        .collect();
    let header: Vec<&str> = scalars.iter().map(|(k, _)| k.as_str()).collect();
    let values: Vec<&str> = scalars.iter().map(|(_, x)| x.as_str()).collect();
    format!("{}\n{}\n", header.join(","), values.join(","))
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Run(a) => run_cmd(a),
        Command::Analyze(a) => analyze(a).map(|v| match a.format {
            Format::Json => println!("{}", serde_json::to_string_pretty(&v).expect("json")),
            Format::Csv => print!("{}", to_csv(&v)),
        }),
        Command::Decode { frame } => {
            decode_cmd(frame).map(|v| println!("{}", serde_json::to_string_pretty(&v).expect("json")))
        }
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
