use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{child_network, generate_biased_sample, generate_workload, percent_difference, query_text, synthetic_network};
use super::{BiasSpec, HitterKind, NetworkSpec};
use crate::aggregates::{compute_aggregate_set, AggregateSet};
use crate::bayesnet::forward_sample;
use crate::error::{Error, Result};
use crate::evaluator::{bn_groupby, bn_point, exec_weighted, AggFn, HybridModel, Query, QueryAnswer};
use crate::model::{build_model, BnMode, BuildDiagnostics, BuildOptions, WeightMethod};
use crate::prune::prune_aggregates;
use crate::reweight::IpfOptions;
use crate::schema::{load_relation, IngestSpec, Relation};

/// Number of equal-width error bins over `[0, 2]`.
pub const HISTOGRAM_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PopulationSpec {
    /// Rows forward-sampled from a random network.
    Synthetic { network: NetworkSpec, rows: usize, seed: u64 },
    /// Rows forward-sampled from the CHILD topology with random CPTs.
    Child {
        #[serde(default = "one")]
        alpha: f64,
        rows: usize,
        seed: u64,
    },
    /// A CSV file and its ingest spec.
    Csv { path: PathBuf, spec: PathBuf },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateSpec {
    /// Explicit attribute sets; when absent every subset of a size listed in
    /// `dims` is used.
    #[serde(default)]
    pub attr_sets: Option<Vec<Vec<String>>>,
    #[serde(default = "default_dims")]
    pub dims: Vec<usize>,
    /// Prune the candidates down to this many clusters.
    #[serde(default)]
    pub budget: Option<usize>,
    #[serde(default = "default_cluster_size")]
    pub cluster_size: usize,
}

fn default_dims() -> Vec<usize> {
    vec![1, 2]
}

fn default_cluster_size() -> usize {
    2
}

impl Default for AggregateSpec {
    fn default() -> Self {
        AggregateSpec { attr_sets: None, dims: default_dims(), budget: None, cluster_size: default_cluster_size() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Uniformly scaled sample.
    Aqp,
    Linreg,
    Ipf,
    /// Network learned from the sample alone, answering every query.
    BnSample,
    /// Aggregate-constrained network answering every query.
    BnConstrained,
    /// IPF weights plus the constrained network.
    Hybrid,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Aqp => "aqp",
            Method::Linreg => "linreg",
            Method::Ipf => "ipf",
            Method::BnSample => "bn_sample",
            Method::BnConstrained => "bn_constrained",
            Method::Hybrid => "hybrid",
        }
    }

    fn build_options(&self, base: &BuildOptions) -> BuildOptions {
        let (weights, bn) = match self {
            Method::Aqp => (WeightMethod::Uniform, BnMode::Off),
            Method::Linreg => (WeightMethod::Linreg, BnMode::Off),
            Method::Ipf => (WeightMethod::Ipf, BnMode::Off),
            Method::BnSample => (WeightMethod::Uniform, BnMode::Sample),
            Method::BnConstrained => (WeightMethod::Uniform, BnMode::Constrained),
            Method::Hybrid => (WeightMethod::Ipf, BnMode::Constrained),
        };
        BuildOptions { weights, bn, ..*base }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKind {
    Heavy,
    Light,
    Random,
    /// One `GROUP BY attrs AGG count`, scored per group.
    GroupBy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    #[serde(default)]
    pub name: Option<String>,
    pub kind: WorkloadKind,
    pub attrs: Vec<String>,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_count() -> usize {
    100
}

impl WorkloadSpec {
    fn label(&self, i: usize) -> String {
        self.name.clone().unwrap_or_else(|| {
            let kind = serde_json::to_value(self.kind).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
            format!("{i}:{kind}:{}", self.attrs.join("+"))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub population: PopulationSpec,
    pub bias: BiasSpec,
    #[serde(default)]
    pub aggregates: AggregateSpec,
    pub methods: Vec<Method>,
    pub workloads: Vec<WorkloadSpec>,
    #[serde(default = "default_k")]
    pub k_replicas: usize,
    #[serde(default = "default_max_parents")]
    pub max_parents: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ipf: IpfOptions,
}

fn default_k() -> usize {
    10
}

fn default_max_parents() -> usize {
    1
}

impl ExperimentSpec {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadReport {
    pub workload: String,
    pub kind: WorkloadKind,
    /// Scored entries: queries, or groups for GROUP BY workloads.
    pub entries: usize,
    pub mean: f64,
    pub median: f64,
    pub p90: f64,
    pub max: f64,
    pub histogram: Vec<usize>,
}

impl WorkloadReport {
    pub fn from_errors(workload: String, kind: WorkloadKind, errors: &[f64]) -> Self {
        let mut sorted = errors.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = match n {
            0 => 0.0,
            _ if n % 2 == 1 => sorted[n / 2],
            _ => (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0,
        };
        let p90 = if n == 0 { 0.0 } else { sorted[((0.9 * n as f64).ceil() as usize).clamp(1, n) - 1] };
        let mut histogram = vec![0; HISTOGRAM_BINS];
        for &e in &sorted {
            let bin = ((e / 2.0) * HISTOGRAM_BINS as f64).floor() as usize;
            histogram[bin.min(HISTOGRAM_BINS - 1)] += 1;
        }
        WorkloadReport {
            workload,
            kind,
            entries: n,
            mean: if n == 0 { 0.0 } else { sorted.iter().sum::<f64>() / n as f64 },
            median,
            p90,
            max: sorted.last().copied().unwrap_or(0.0),
            histogram,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub diagnostics: BuildDiagnostics,
    pub workloads: Vec<WorkloadReport>,
}

impl MethodReport {
    pub fn workload(&self, name: &str) -> Option<&WorkloadReport> {
        self.workloads.iter().find(|w| w.workload == name)
    }
}

/// Summary written to `report.json`. Timings are kept out so that identical
/// specs give identical bytes; they go to the query log instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub population_size: usize,
    pub sample_size: usize,
    pub sample_predicate_rows: usize,
    pub aggregates: Vec<Vec<String>>,
    pub methods: Vec<MethodReport>,
}

impl ExperimentReport {
    pub fn method(&self, m: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == m)
    }
}

/// One scored query (or group) of the query log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub workload: String,
    pub method: String,
    pub query: String,
    /// Group labels joined by `|`; empty for point queries.
    pub group: String,
    #[serde(rename = "true")]
    pub truth: f64,
    pub estimate: f64,
    pub error: f64,
    pub micros: u128,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub log: Vec<LogRow>,
    /// Build time per method in microseconds.
    pub build_micros: Vec<(Method, u128)>,
}

impl ExperimentOutput {
    /// Write `report.json`, `queries.csv` and `timings.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join("report.json");
        let mut text = serde_json::to_string_pretty(&self.report)?;
        text.push('\n');
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        let p = dir.join("queries.csv");
        let mut w = csv::Writer::from_path(&p)?;
        for row in &self.log {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(&p, e))?;
        let p = dir.join("timings.csv");
        let mut w = csv::Writer::from_path(&p)?;
        w.write_record(["method", "build_micros"])?;
        for (m, t) in &self.build_micros {
            w.write_record([m.name(), &t.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(&p, e))
    }
}

/// Read a query log written by [`ExperimentOutput::write`].
pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<LogRow>, _>>()?)
}

fn load_population(spec: &PopulationSpec) -> Result<Relation> {
    match spec {
        PopulationSpec::Synthetic { network, rows, seed } => forward_sample(&synthetic_network(network)?, *rows, *seed),
        PopulationSpec::Child { alpha, rows, seed } => forward_sample(&child_network(*alpha, *seed)?, *rows, *seed),
        PopulationSpec::Csv { path, spec } => load_relation(path, &IngestSpec::from_json_file(spec)?),
    }
}

fn subsets(m: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, m: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..m {
            cur.push(i);
            rec(i + 1, m, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k >= 1 && k <= m {
        rec(0, m, k, &mut Vec::new(), &mut out);
    }
    out
}

fn aggregates_for(population: &Relation, spec: &AggregateSpec) -> Result<AggregateSet> {
    let schema = &population.schema;
    let sets: Vec<Vec<usize>> = match &spec.attr_sets {
        Some(sets) => sets
            .iter()
            .map(|s| s.iter().map(|n| schema.index_of(n)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?,
        None => spec.dims.iter().flat_map(|&k| subsets(schema.len(), k)).collect(),
    };
    let candidates = compute_aggregate_set(population, &sets)?;
    match spec.budget {
        Some(budget) => Ok(prune_aggregates(&candidates, schema, budget, spec.cluster_size)?.aggregates),
        None => Ok(candidates),
    }
}

enum Route {
    Sample,
    Bn,
    Hybrid,
}

fn route(m: Method) -> Route {
    match m {
        Method::Aqp | Method::Linreg | Method::Ipf => Route::Sample,
        Method::BnSample | Method::BnConstrained => Route::Bn,
        Method::Hybrid => Route::Hybrid,
    }
}

fn answer(model: &HybridModel, r: &Route, q: &Query) -> Result<QueryAnswer> {
    match (r, &model.bn) {
        (Route::Sample, _) | (_, None) => exec_weighted(&model.sample, &model.weights.weights, q),
        (Route::Hybrid, Some(_)) => model.answer(q),
        (Route::Bn, Some(bn)) => match q.kind {
            crate::evaluator::QueryKind::Point => bn_point(bn, q, model.population_size),
            crate::evaluator::QueryKind::GroupBy => bn_groupby(
                bn,
                q,
                model.population_size,
                model.sample.len(),
                model.k_replicas,
                model.seed,
            ),
        },
    }
}

struct Workload {
    label: String,
    kind: WorkloadKind,
    queries: Vec<Query>,
    truths: Vec<QueryAnswer>,
}

fn build_workloads(population: &Relation, specs: &[WorkloadSpec]) -> Result<Vec<Workload>> {
    let ones = vec![1.0; population.len()];
    specs
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let attrs = w.attrs.iter().map(|n| population.schema.index_of(n)).collect::<Result<Vec<_>>>()?;
            let queries = match w.kind {
                WorkloadKind::Heavy => generate_workload(population, &attrs, HitterKind::Heavy, w.count, w.seed)?,
                WorkloadKind::Light => generate_workload(population, &attrs, HitterKind::Light, w.count, w.seed)?,
                WorkloadKind::Random => generate_workload(population, &attrs, HitterKind::Random, w.count, w.seed)?,
                WorkloadKind::GroupBy => vec![Query::group_by(&population.schema, attrs, AggFn::Count, Vec::new())?],
            };
            let truths = queries.iter().map(|q| exec_weighted(population, &ones, q)).collect::<Result<_>>()?;
            Ok(Workload { label: w.label(i), kind: w.kind, queries, truths })
        })
        .collect()
}

/// Score an answer against the truth: one entry for a point query, one per
/// group in either answer for a GROUP BY.
fn score(schema: &crate::schema::Schema, q: &Query, truth: &QueryAnswer, est: &QueryAnswer) -> Vec<(String, f64, f64)> {
    match (truth, est) {
        (QueryAnswer::Point { estimate: t, .. }, QueryAnswer::Point { estimate: e, .. }) => vec![(String::new(), *t, *e)],
        _ => {
            let t: BTreeMap<&[usize], f64> = truth.groups().iter().map(|g| (g.values.as_slice(), g.estimate)).collect();
            let e: BTreeMap<&[usize], f64> = est.groups().iter().map(|g| (g.values.as_slice(), g.estimate)).collect();
            let keys: BTreeSet<&[usize]> = t.keys().chain(e.keys()).copied().collect();
            keys.into_iter()
                .map(|k| {
                    let label: Vec<&str> = q.group_attrs.iter().zip(k).map(|(&a, &v)| schema.label(a, v)).collect();
                    (label.join("|"), t.get(k).copied().unwrap_or(0.0), e.get(k).copied().unwrap_or(0.0))
                })
                .collect()
        }
    }
}

/// Generate the population and biased sample, build every method's model,
/// run every workload and score it.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    if spec.methods.is_empty() {
        return Err(Error::InvalidInput("no methods requested".into()));
    }
    let population = load_population(&spec.population).map_err(|e| e.in_stage("population"))?;
    let sample = generate_biased_sample(&population, &spec.bias).map_err(|e| e.in_stage("sample"))?;
    let gamma = aggregates_for(&population, &spec.aggregates).map_err(|e| e.in_stage("aggregates"))?;
    let workloads = build_workloads(&population, &spec.workloads).map_err(|e| e.in_stage("workload"))?;
    let schema = population.schema.clone();
    let pred_attr = schema.index_of(&spec.bias.attr)?;
    let pred: BTreeSet<usize> = spec.bias.values.iter().map(|v| schema.resolve_value(pred_attr, v)).collect::<Result<_>>()?;

    let base = BuildOptions {
        max_parents: spec.max_parents,
        k_replicas: spec.k_replicas,
        seed: spec.seed,
        ipf: spec.ipf,
        ..BuildOptions::default()
    };
    let mut seen = BTreeSet::new();
    let methods: Vec<Method> = spec.methods.iter().copied().filter(|m| seen.insert(*m)).collect();
    let results: Vec<(MethodReport, Vec<LogRow>, u128)> = methods
        .par_iter()
        .map(|&m| {
            let stage = |e: Error| e.in_stage(m.name());
            let t0 = Instant::now();
            let (model, diagnostics) = build_model(sample.clone(), &gamma, &m.build_options(&base)).map_err(stage)?;
            let build = t0.elapsed().as_micros();
            let r = route(m);
            let mut log = Vec::new();
            let mut reports = Vec::new();
            for w in &workloads {
                let mut errors = Vec::new();
                for (q, truth) in w.queries.iter().zip(&w.truths) {
                    let t0 = Instant::now();
                    let est = answer(&model, &r, q).map_err(stage)?;
                    let micros = t0.elapsed().as_micros();
                    let text = query_text(&schema, q);
                    for (group, t, e) in score(&schema, q, truth, &est) {
                        let error = percent_difference(t, e);
                        errors.push(error);
                        log.push(LogRow {
                            workload: w.label.clone(),
                            method: m.name().to_string(),
                            query: text.clone(),
                            group,
                            truth: t,
                            estimate: e,
                            error,
                            micros,
                        });
                    }
                }
                reports.push(WorkloadReport::from_errors(w.label.clone(), w.kind, &errors));
            }
            Ok((MethodReport { method: m, diagnostics, workloads: reports }, log, build))
        })
        .collect::<Result<_>>()?;

    let mut report_methods = Vec::new();
    let mut log = Vec::new();
    let mut build_micros = Vec::new();
    for (r, l, t) in results {
        build_micros.push((r.method, t));
        report_methods.push(r);
        log.extend(l);
    }
    let report = ExperimentReport {
        population_size: population.len(),
        sample_size: sample.len(),
        sample_predicate_rows: sample.rows.iter().filter(|r| pred.contains(&r[pred_attr])).count(),
        aggregates: gamma
            .queries
            .iter()
            .map(|q| q.attrs.iter().map(|&a| schema.name(a).to_string()).collect())
            .collect(),
        methods: report_methods,
    };
    Ok(ExperimentOutput { report, log, build_micros })
}
