//! Command-line front end: `match`, `compare`, `analyze`, `balance` and
//! `simulate`.

pub mod config;
pub mod report;
pub mod simulate;

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::balance::{balance_report, sample_description, BalanceReport, CompiledSpec};
use crate::data::{load_dataset, DataError, Dataset, Level};
use crate::distance::DistanceModel;
use crate::inference::{analyze, InferenceError};
use crate::matcher::{multilevel_match, myopic_match, MatchRun, MyopicMode};
use crate::sample::{MatchedSample, SampleError};
use config::StudyConfig;
use report::{write_rows, write_text};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_INFEASIBLE: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::Infeasible(_) => EXIT_INFEASIBLE,
            CliError::Other(_) => 1,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Schema(_) | DataError::UnknownCovariate(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SampleError> for CliError {
    fn from(e: SampleError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::ExactTooLarge(_) | InferenceError::Parameter(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<crate::ip::ProgramError> for CliError {
    fn from(e: crate::ip::ProgramError) -> Self {
        CliError::Other(format!("solver: {e}"))
    }
}

#[derive(Parser, Debug)]
#[command(name = "multimatch", version, about = "Optimal multilevel matching and randomization inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Match clusters and units; writes the matched sample and balance report.
    Match(Args),
    /// Runs the dynamic and both cluster-first strategies side by side.
    Compare(Args),
    /// Randomization inference on a matched sample.
    Analyze(Args),
    /// Balance tables for a matched sample.
    Balance(Args),
    /// Writes a synthetic study (data files plus a config).
    Simulate(Args),
}

#[derive(clap::Args, Debug)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Round LP relaxations instead of solving unit problems exactly.
    #[arg(long)]
    approximate: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Directory holding cluster_pairs.csv and unit_pairs.csv (defaults to
    /// the output directory).
    #[arg(long)]
    matched: Option<PathBuf>,
    /// Also write the unit and cluster distance matrices.
    #[arg(long)]
    dump_distances: bool,
}

struct Context {
    config: StudyConfig,
    out: PathBuf,
    args: Args,
}

impl Context {
    fn new(args: Args) -> Result<Self, CliError> {
        let mut config = StudyConfig::load(&args.config).map_err(CliError::Config)?;
        if let Some(s) = args.seed {
            config.seed = s;
        }
        if args.approximate {
            config.matcher.approximate = true;
        }
        if let Some(t) = args.threads {
            if t == 0 {
                return Err(CliError::Config("--threads must be at least 1".into()));
            }
            config.matcher.threads = Some(t);
        }
        let out = args.out.clone().unwrap_or_else(|| config.output_dir());
        fs::create_dir_all(&out)?;
        Ok(Self { config, out, args })
    }

    fn study(&self) -> Result<(Dataset, CompiledSpec), CliError> {
        let (units, clusters) = self.config.data_paths().map_err(CliError::Config)?;
        let ds = load_dataset(units, clusters, &self.config.schema)?;
        let spec = self
            .config
            .balance
            .compile(&ds)
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok((ds, spec))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn matched_sample(&self, ds: &Dataset) -> Result<MatchedSample, CliError> {
        let dir = self.args.matched.clone().unwrap_or_else(|| self.out.clone());
        let open = |name: &str| {
            let p = dir.join(name);
            File::open(&p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
        };
        Ok(MatchedSample::read_csv(ds, open("cluster_pairs.csv")?, open("unit_pairs.csv")?)?)
    }
}

/// Runs the command line `args` (program name first) and returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Match(a) => Context::new(a).and_then(|c| cmd_match(&c)),
        Command::Compare(a) => Context::new(a).and_then(|c| cmd_compare(&c)),
        Command::Analyze(a) => Context::new(a).and_then(|c| cmd_analyze(&c)),
        Command::Balance(a) => Context::new(a).and_then(|c| cmd_balance(&c)),
        Command::Simulate(a) => Context::new(a).and_then(|c| cmd_simulate(&c)),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

fn write_sample(ctx: &Context, ds: &Dataset, sample: &MatchedSample) -> Result<(), CliError> {
    let c = BufWriter::new(File::create(ctx.path("cluster_pairs.csv"))?);
    let u = BufWriter::new(File::create(ctx.path("unit_pairs.csv"))?);
    sample.write_csv(ds, c, u)?;
    Ok(())
}

fn write_balance_report(path: &Path, report: &BalanceReport) -> Result<(), CliError> {
    write_rows(path, &report::BALANCE_REPORT, &report.rows)?;
    Ok(())
}

fn dump_distances(ctx: &Context, ds: &Dataset, spec: &CompiledSpec, unit: &DistanceModel) -> Result<(), CliError> {
    let cluster = DistanceModel::fit(ds, &ctx.config.distance, Level::Cluster)?;
    let clusters = cluster.matrix(&ds.treated_clusters(), &ds.control_clusters());
    clusters.write_csv(
        BufWriter::new(File::create(ctx.path("distances_clusters.csv"))?),
        |k| ds.clusters[k].cluster_id.clone(),
        |k| ds.clusters[k].cluster_id.clone(),
    )?;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(ctx.path("distances_units.csv"))?));
    w.write_record(["treated_cluster", "control_cluster", "treated", "control", "distance"])?;
    for t in ds.treated_clusters() {
        for c in ds.control_clusters() {
            if !crate::balance::clusters_admissible(spec, ds, t, c) {
                continue;
            }
            for &a in &ds.clusters[t].units {
                for &b in &ds.clusters[c].units {
                    w.write_record([
                        ds.clusters[t].cluster_id.as_str(),
                        ds.clusters[c].cluster_id.as_str(),
                        ds.units[a].unit_id.as_str(),
                        ds.units[b].unit_id.as_str(),
                        &unit.distance(a, b).to_string(),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    write_text(path, &(text + "\n"))?;
    Ok(())
}

fn cmd_match(ctx: &Context) -> Result<(), CliError> {
    let clock = Instant::now();
    let (ds, spec) = ctx.study()?;
    let unit = DistanceModel::fit(&ds, &ctx.config.distance, Level::Unit)?;
    let options = ctx.config.matcher.options();
    let run = multilevel_match(&ds, &spec, &unit, &options)?;
    write_sample(ctx, &ds, &run.sample)?;
    let report = balance_report(&run.sample, &ds, &spec);
    write_balance_report(&ctx.path("balance_report.csv"), &report)?;
    if ctx.args.dump_distances {
        dump_distances(ctx, &ds, &spec, &unit)?;
    }
    let summary = json!({
        "command": "match",
        "run": run,
        "balance_violations": report.violation_count(),
        "tv_units": report.tv,
        "tv_units_raw": report.tv_raw,
        "mean_imbalances_clusters": report.cluster_mean_imbalances,
        "unit_distance": {
            "ridged": unit.ridged(),
            "propensity_converged": unit.propensity_converged,
        },
        "threads": options.threads,
        "seed": ctx.config.seed,
        "wall_seconds": clock.elapsed().as_secs_f64(),
    });
    write_json(&ctx.path("run_summary.json"), &summary)?;
    eprintln!(
        "matched {} cluster pairs and {} unit pairs ({} subproblems)",
        run.cluster_pairs, run.unit_pairs, run.unit_problems
    );
    if let Some(inf) = &run.infeasibility {
        let detail = if inf.binding.is_empty() {
            inf.message.clone()
        } else {
            format!("{}; binding: {}", inf.message, inf.binding.join(", "))
        };
        return Err(CliError::Infeasible(detail));
    }
    Ok(())
}

#[derive(Serialize)]
struct ComparisonRow {
    method: &'static str,
    clusters: usize,
    units: usize,
    mean_imbalances_clusters: usize,
    tv_units: f64,
    tv_units_raw: f64,
    problems_solved: usize,
}

fn cmd_compare(ctx: &Context) -> Result<(), CliError> {
    let (ds, spec) = ctx.study()?;
    let unit = DistanceModel::fit(&ds, &ctx.config.distance, Level::Unit)?;
    let cluster = DistanceModel::fit(&ds, &ctx.config.distance, Level::Cluster)?;
    let options = ctx.config.matcher.options();
    let mut rows = Vec::new();
    let mut timing = Vec::new();
    let mut runs: Vec<MatchRun> = Vec::new();
    for method in ["dynamic", "myopic-cardinality", "myopic-optimal"] {
        let clock = Instant::now();
        let run = match method {
            "dynamic" => multilevel_match(&ds, &spec, &unit, &options)?,
            "myopic-cardinality" => myopic_match(&ds, &spec, MyopicMode::Cardinality, &unit, &cluster, &options)?,
            _ => myopic_match(&ds, &spec, MyopicMode::Optimal, &unit, &cluster, &options)?,
        };
        let minutes = clock.elapsed().as_secs_f64() / 60.0;
        let report = balance_report(&run.sample, &ds, &spec);
        rows.push(ComparisonRow {
            method,
            clusters: run.cluster_pairs,
            units: run.unit_pairs,
            mean_imbalances_clusters: report.cluster_mean_imbalances,
            tv_units: report.tv,
            tv_units_raw: report.tv_raw,
            problems_solved: run.problems_solved,
        });
        timing.push((method, minutes));
        runs.push(run);
    }
    write_rows(&ctx.path("comparison.csv"), &report::COMPARISON, &rows)?;
    write_rows(&ctx.path("comparison_timing.csv"), &["method", "time_min"], &timing)?;
    let text_rows: Vec<Vec<String>> = rows
        .iter()
        .zip(&timing)
        .map(|(r, t)| {
            vec![
                r.method.to_string(),
                r.clusters.to_string(),
                r.units.to_string(),
                r.mean_imbalances_clusters.to_string(),
                format!("{:.3}", r.tv_units),
                format!("{:.3}", r.tv_units_raw),
                r.problems_solved.to_string(),
                format!("{:.3}", t.1),
            ]
        })
        .collect();
    let mut header = report::COMPARISON.to_vec();
    header.push("time_min");
    write_text(&ctx.path("comparison.txt"), &report::aligned(&header, &text_rows))?;
    if runs[0].unit_pairs < runs[1].unit_pairs {
        log::warn!("dynamic matched fewer units than the cluster-first cardinality match; a solver limit was hit");
    }
    Ok(())
}

fn cmd_analyze(ctx: &Context) -> Result<(), CliError> {
    let (ds, _) = ctx.study()?;
    let sample = ctx.matched_sample(&ds)?;
    let result = analyze(&ds, &sample, &ctx.config.inference)?;
    write_json(&ctx.path("inference_report.json"), &result)?;
    write_text(&ctx.path("inference_report.txt"), &result.to_text())?;
    write_rows(&ctx.path("gamma_sweep.csv"), &["gamma", "p_upper"], &result.sensitivity)?;
    print!("{}", result.to_text());
    Ok(())
}

fn cmd_balance(ctx: &Context) -> Result<(), CliError> {
    let (ds, spec) = ctx.study()?;
    let sample = ctx.matched_sample(&ds)?;
    let report = balance_report(&sample, &ds, &spec);
    let description = sample_description(&sample, &ds);
    write_rows(&ctx.path("table1.csv"), &report::TABLE1, &report::table1(&report))?;
    write_rows(&ctx.path("table2.csv"), &report::TABLE2, &report::table2(&report))?;
    write_rows(&ctx.path("table3.csv"), &report::TABLE3, &report::table3(&report))?;
    write_rows(&ctx.path("table5.csv"), &report::TABLE5, &description)?;
    write_balance_report(&ctx.path("balance_report.csv"), &report)?;
    let text = report::balance_text(&report, &description);
    write_text(&ctx.path("balance_tables.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_simulate(ctx: &Context) -> Result<(), CliError> {
    let params = ctx.config.simulate.clone().unwrap_or_default();
    params.validate().map_err(CliError::Config)?;
    let sim = simulate::simulate(&params, ctx.config.seed);
    write_text(&ctx.path("units.csv"), &sim.units_csv)?;
    write_text(&ctx.path("clusters.csv"), &sim.clusters_csv)?;
    write_json(&ctx.path("config.json"), &sim.config)?;
    eprintln!("wrote a synthetic study to {}", ctx.out.display());
    Ok(())
}
