//! Command-line front end: build models, answer queries, prune aggregates
//! and run experiments.
//!
//! Exit codes: 0 success, 2 usage or query syntax, 3 data error, 4 solver
//! failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use owqp_core::aggregates::{compute_aggregate_set, AggregateManifest, AggregateSet};
use owqp_core::bayesnet::ParamOptions;
use owqp_core::bench::{run_experiment, ExperimentSpec};
use owqp_core::model::{build_model, load_model, save_model, sha256_file, BnMode, BuildOptions, ModelManifest, WeightMethod};
use owqp_core::prune::prune_aggregates;
use owqp_core::reweight::IpfOptions;
use owqp_core::schema::{load_relation, IngestSpec};
use owqp_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "owqp", version, about = "Query a biased sample with population aggregates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reweight a sample, learn a network and write a model directory.
    Build(BuildArgs),
    /// Answer one query against a model directory.
    Query(QueryArgs),
    /// Select aggregates with a t-cherry junction tree.
    Prune(PruneArgs),
    /// Compute COUNT(*) aggregates of a population file.
    Aggregate(AggregateArgs),
    /// Run an experiment spec and write its reports.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightsArg {
    Uniform,
    Linreg,
    Ipf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BnArg {
    Off,
    Sample,
    Constrained,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Sample CSV with a header row.
    #[arg(long)]
    pub sample: PathBuf,
    /// Ingest spec (JSON) naming each attribute's kind.
    #[arg(long)]
    pub spec: PathBuf,
    /// Aggregate manifest (JSON).
    #[arg(long)]
    pub aggregates: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "ipf")]
    pub weights: WeightsArg,
    #[arg(long, value_enum, default_value = "constrained")]
    pub bn: BnArg,
    #[arg(long, default_value_t = 1)]
    pub max_parents: usize,
    #[arg(long, default_value_t = 10)]
    pub k_replicas: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Population size; required without aggregates, overrides theirs otherwise.
    #[arg(long)]
    pub population_size: Option<f64>,
    #[arg(long, default_value_t = IpfOptions::default().tol)]
    pub ipf_tol: f64,
    #[arg(long, default_value_t = IpfOptions::default().max_iter)]
    pub ipf_max_iter: usize,
    #[arg(long, default_value_t = ParamOptions::default().outer_tol)]
    pub outer_tol: f64,
    #[arg(long, default_value_t = ParamOptions::default().inner_tol)]
    pub inner_tol: f64,
    /// Output model directory; replaced if it exists.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Model directory written by `build`.
    #[arg(long)]
    pub model: PathBuf,
    /// `POINT a=v ...` or `GROUP BY a,b AGG count|sum:x|avg:x [WHERE ...]`.
    pub query: String,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    /// Candidate aggregate manifest.
    #[arg(long)]
    pub aggregates: PathBuf,
    /// Number of clusters to keep.
    #[arg(long)]
    pub budget: usize,
    #[arg(long, default_value_t = 2)]
    pub cluster_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    /// Population CSV.
    #[arg(long)]
    pub population: PathBuf,
    #[arg(long)]
    pub spec: PathBuf,
    /// Comma-separated attribute set; repeat for several aggregates.
    #[arg(long = "attrs", required = true)]
    pub attrs: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Experiment spec (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    /// Directory for `report.json`, `queries.csv` and `timings.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

/// An error together with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.root() {
            Error::Parse { .. } => EXIT_USAGE,
            Error::Solver(_) => EXIT_SOLVER,
            _ => EXIT_DATA,
        };
        Failure { code, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, message: message.into() }
}

pub fn build_options(args: &BuildArgs) -> Result<BuildOptions, Failure> {
    for (name, v) in [("--ipf-tol", args.ipf_tol), ("--outer-tol", args.outer_tol), ("--inner-tol", args.inner_tol)] {
        if !(v > 0.0) {
            return Err(usage(format!("{name} must be positive")));
        }
    }
    if args.k_replicas == 0 {
        return Err(usage("--k-replicas must be at least 1"));
    }
    if args.max_parents == 0 {
        return Err(usage("--max-parents must be at least 1"));
    }
    if let Some(n) = args.population_size {
        if !(n > 0.0) {
            return Err(usage("--population-size must be positive"));
        }
    }
    Ok(BuildOptions {
        weights: match args.weights {
            WeightsArg::Uniform => WeightMethod::Uniform,
            WeightsArg::Linreg => WeightMethod::Linreg,
            WeightsArg::Ipf => WeightMethod::Ipf,
        },
        bn: match args.bn {
            BnArg::Off => BnMode::Off,
            BnArg::Sample => BnMode::Sample,
            BnArg::Constrained => BnMode::Constrained,
        },
        max_parents: args.max_parents,
        k_replicas: args.k_replicas,
        seed: args.seed,
        ipf: IpfOptions { max_iter: args.ipf_max_iter, tol: args.ipf_tol },
        params: ParamOptions { outer_tol: args.outer_tol, inner_tol: args.inner_tol, ..ParamOptions::default() },
        population_size: args.population_size,
    })
}

/// Load inputs, build the model and write it to `args.out`.
pub fn cmd_build(args: &BuildArgs) -> Result<ModelManifest, Failure> {
    let opts = build_options(args)?;
    if args.aggregates.is_none() && opts.population_size.is_none() {
        return Err(usage("--population-size is required without --aggregates"));
    }
    let spec = IngestSpec::from_json_file(&args.spec).map_err(|e| e.in_stage("ingest"))?;
    let mut sample = load_relation(&args.sample, &spec).map_err(|e| e.in_stage("ingest"))?;
    let mut inputs = BTreeMap::new();
    inputs.insert("sample".to_string(), sha256_file(&args.sample)?);
    inputs.insert("spec".to_string(), sha256_file(&args.spec)?);
    let gamma = match &args.aggregates {
        Some(path) => {
            let manifest = AggregateManifest::from_json_file(path).map_err(|e| e.in_stage("aggregates"))?;
            inputs.insert("aggregates".to_string(), sha256_file(path)?);
            sample = sample.with_extra_labels(&manifest.labels()).map_err(|e| e.in_stage("aggregates"))?;
            manifest.bind(&sample.schema).map_err(|e| e.in_stage("aggregates"))?
        }
        None => AggregateSet::new(Vec::new(), opts.population_size.unwrap_or(1.0))?,
    };
    let (model, diagnostics) = build_model(sample, &gamma, &opts)?;
    Ok(save_model(&model, &diagnostics, &opts, inputs, &args.out).map_err(|e| e.in_stage("save"))?)
}

pub fn cmd_query<W: Write>(args: &QueryArgs, out: W) -> Result<(), Failure> {
    let model = load_model(&args.model).map_err(|e| e.in_stage("load"))?;
    let (q, answer) = model.query(&args.query)?;
    Ok(answer.write(model.schema(), &q, out)?)
}

pub fn cmd_prune(args: &PruneArgs) -> Result<AggregateManifest, Failure> {
    if args.budget == 0 {
        return Err(usage("--budget must be at least 1"));
    }
    if args.cluster_size < 2 {
        return Err(usage("--cluster-size must be at least 2"));
    }
    let manifest = AggregateManifest::from_json_file(&args.aggregates)?;
    let schema = manifest.implied_schema()?;
    let gamma = manifest.bind(&schema)?;
    let outcome = prune_aggregates(&gamma, &schema, args.budget, args.cluster_size)?;
    if outcome.saturated {
        log::warn!("fewer clusters than the budget were available");
    }
    let pruned = outcome.aggregates.to_manifest(&schema);
    pruned.write_json_file(&args.out)?;
    Ok(pruned)
}

pub fn cmd_aggregate(args: &AggregateArgs) -> Result<AggregateManifest, Failure> {
    let spec = IngestSpec::from_json_file(&args.spec)?;
    let population = load_relation(&args.population, &spec)?;
    let sets = args
        .attrs
        .iter()
        .map(|s| s.split(',').map(|n| population.schema.index_of(n.trim())).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;
    let gamma = compute_aggregate_set(&population, &sets)?;
    let manifest = gamma.to_manifest(&population.schema);
    manifest.write_json_file(&args.out)?;
    Ok(manifest)
}

/// Relative population paths in the spec resolve against the spec's
/// directory.
pub fn cmd_bench(args: &BenchArgs) -> Result<(), Failure> {
    let mut spec = ExperimentSpec::from_json_file(&args.spec)?;
    let base = args.spec.parent().unwrap_or(Path::new("."));
    if let owqp_core::bench::PopulationSpec::Csv { path, spec: ingest } = &mut spec.population {
        for p in [path, ingest] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
    let out = run_experiment(&spec)?;
    out.write(&args.out)?;
    Ok(())
}

/// Run a parsed command, writing answers to `out`.
pub fn run<W: Write>(cli: &Cli, mut out: W) -> Result<(), Failure> {
    match &cli.command {
        Command::Build(a) => {
            let m = cmd_build(a)?;
            let w = &m.diagnostics.weights;
            log::info!(
                "wrote {} ({} rows, weights converged: {}, residual {:.3e})",
                a.out.display(),
                m.sample_size,
                w.converged,
                w.max_residual
            );
            Ok(())
        }
        Command::Query(a) => cmd_query(a, &mut out),
        Command::Prune(a) => cmd_prune(a).map(|_| ()),
        Command::Aggregate(a) => cmd_aggregate(a).map(|_| ()),
        Command::Bench(a) => cmd_bench(a),
    }
}

/// Entry point shared by the binary: parse arguments, run, map errors onto
/// exit codes.
pub fn main_with_args<I, T>(args: I) -> i32
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
    let stdout = std::io::stdout();
    match run(&cli, stdout.lock()) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
