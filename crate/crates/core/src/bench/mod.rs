//! Synthetic ground truth for experiments: populations drawn from known
//! networks, biased samples, workloads and error scoring.

mod experiment;

pub use experiment::{
    read_log, run_experiment, AggregateSpec, ExperimentOutput, ExperimentReport, ExperimentSpec, LogRow, Method, MethodReport,
    PopulationSpec, WorkloadKind, WorkloadReport, WorkloadSpec, HISTOGRAM_BINS,
};

use std::cmp::Reverse;
use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::aggregates::compute_aggregate;
use crate::bayesnet::{BayesNet, Cpt, Edge, Structure};
use crate::error::{Error, Result};
use crate::evaluator::Query;
use crate::schema::{Attribute, Domain, Relation, Schema};

/// Attributes `a0, a1, …` whose labels are `0, 1, …`.
pub fn synthetic_schema(cards: &[usize]) -> Arc<Schema> {
    let attrs = cards
        .iter()
        .enumerate()
        .map(|(i, &c)| Attribute {
            name: format!("a{i}"),
            domain: Domain::categorical((0..c).map(|v| v.to_string())),
        })
        .collect();
    Arc::new(Schema::new(attrs).expect("distinct names"))
}

fn dirichlet_row(rng: &mut ChaCha8Rng, len: usize, alpha: f64) -> Vec<f64> {
    let g = Gamma::new(alpha, 1.0).expect("positive shape");
    loop {
        let raw: Vec<f64> = (0..len).map(|_| g.sample(rng)).collect();
        let s: f64 = raw.iter().sum();
        if s > 0.0 && s.is_finite() {
            return raw.into_iter().map(|x| x / s).collect();
        }
    }
}

fn random_cpts(
    schema: Arc<Schema>,
    structure: Structure,
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Result<BayesNet> {
    let cards = schema.cardinalities();
    let cpts = (0..cards.len())
        .map(|v| {
            let parents = structure.parents(v);
            let configs: usize = parents.iter().map(|&p| cards[p]).product();
            let table = (0..configs).map(|_| dirichlet_row(rng, cards[v], alpha)).collect();
            Cpt { child: v, parents, table }
        })
        .collect();
    BayesNet::new(schema, structure, cpts)
}

/// Ground-truth network description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub cardinalities: Vec<usize>,
    #[serde(default = "default_max_parents")]
    pub max_parents: usize,
    /// Dirichlet concentration of every CPT row; small values skew.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub seed: u64,
}

fn default_max_parents() -> usize {
    1
}

fn default_alpha() -> f64 {
    1.0
}

/// Random DAG over `a0 … a{m-1}`: node `i > 0` draws between one and
/// `max_parents` parents from lower indices; CPT rows are Dirichlet draws.
pub fn synthetic_network(spec: &NetworkSpec) -> Result<BayesNet> {
    if spec.cardinalities.is_empty() || spec.cardinalities.iter().any(|c| !(1..=10).contains(c)) {
        return Err(Error::InvalidInput("cardinalities must lie in 1..=10".into()));
    }
    if !(spec.alpha > 0.0) {
        return Err(Error::InvalidInput("alpha must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let m = spec.cardinalities.len();
    let mut edges = Vec::new();
    for child in 1..m {
        let mut cand: Vec<usize> = (0..child).collect();
        let k = rng.random_range(1..=spec.max_parents.max(1).min(child));
        for _ in 0..k {
            let p = cand.remove(rng.random_range(0..cand.len()));
            edges.push(Edge { parent: p, child, locked: false });
        }
    }
    edges.sort_by_key(|e| (e.parent, e.child));
    let schema = synthetic_schema(&spec.cardinalities);
    random_cpts(schema, Structure { nodes: m, edges }, spec.alpha, &mut rng)
}

const CHILD_NODES: [(&str, usize, &[usize]); 20] = [
    ("BirthAsphyxia", 2, &[]),
    ("Disease", 6, &[0]),
    ("Age", 3, &[1, 8]),
    ("LVH", 2, &[1]),
    ("DuctFlow", 3, &[1]),
    ("CardiacMixing", 4, &[1]),
    ("LungParench", 3, &[1]),
    ("LungFlow", 3, &[1]),
    ("Sick", 2, &[1]),
    ("HypDistrib", 2, &[4, 5]),
    ("HypoxiaInO2", 3, &[5, 6]),
    ("CO2", 3, &[6]),
    ("ChestXray", 5, &[6, 7]),
    ("Grunting", 2, &[6, 8]),
    ("LVHreport", 2, &[3]),
    ("LowerBodyO2", 3, &[9, 10]),
    ("RUQO2", 3, &[10]),
    ("CO2Report", 2, &[11]),
    ("XrayReport", 5, &[12]),
    ("GruntingReport", 2, &[13]),
];

/// The 20-node topology of the CHILD diagnostic network with random CPTs.
pub fn child_network(alpha: f64, seed: u64) -> Result<BayesNet> {
    let attrs = CHILD_NODES
        .iter()
        .map(|&(name, card, _)| Attribute {
            name: name.to_string(),
            domain: Domain::categorical((0..card).map(|v| v.to_string())),
        })
        .collect();
    let schema = Arc::new(Schema::new(attrs)?);
    let mut edges: Vec<Edge> = CHILD_NODES
        .iter()
        .enumerate()
        .flat_map(|(child, &(_, _, ps))| ps.iter().map(move |&parent| Edge { parent, child, locked: false }))
        .collect();
    edges.sort_by_key(|e| (e.parent, e.child));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_cpts(schema, Structure { nodes: CHILD_NODES.len(), edges }, alpha, &mut rng)
}

/// Selection mechanism of a biased sample: a share `bias_percent` of the
/// rows satisfy `attr ∈ values`, the rest do not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSpec {
    pub attr: String,
    pub values: Vec<String>,
    pub sample_rate: f64,
    pub bias_percent: f64,
    pub seed: u64,
}

impl BiasSpec {
    fn predicate(&self, schema: &Schema) -> Result<(usize, Vec<bool>)> {
        let a = schema.index_of(&self.attr)?;
        let mut mask = vec![false; schema.cardinality(a)];
        for v in &self.values {
            mask[schema.resolve_value(a, v)?] = true;
        }
        Ok((a, mask))
    }
}

/// Draw `round(sample_rate·|P|)` rows without replacement:
/// `round(bias_percent·size)` uniformly from the rows satisfying the
/// predicate, the remainder uniformly from the others. Rows are shuffled.
pub fn generate_biased_sample(population: &Relation, spec: &BiasSpec) -> Result<Relation> {
    if !(spec.sample_rate > 0.0 && spec.sample_rate <= 1.0) {
        return Err(Error::InvalidInput("sample_rate must lie in (0, 1]".into()));
    }
    if !(0.0..=1.0).contains(&spec.bias_percent) {
        return Err(Error::InvalidInput("bias_percent must lie in [0, 1]".into()));
    }
    let (a, mask) = spec.predicate(&population.schema)?;
    let (inside, outside): (Vec<usize>, Vec<usize>) = (0..population.len()).partition(|&i| mask[population.rows[i][a]]);
    let size = (spec.sample_rate * population.len() as f64).round() as usize;
    let k_in = (spec.bias_percent * size as f64).round() as usize;
    let k_out = size - k_in;
    if k_in > inside.len() {
        return Err(Error::InvalidInput(format!(
            "{k_in} predicate rows needed, population has {}",
            inside.len()
        )));
    }
    if k_out > outside.len() {
        return Err(Error::InvalidInput(format!(
            "{k_out} non-predicate rows needed, population has {}",
            outside.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut picked: Vec<usize> = index::sample(&mut rng, inside.len(), k_in).into_iter().map(|i| inside[i]).collect();
    picked.extend(index::sample(&mut rng, outside.len(), k_out).into_iter().map(|i| outside[i]));
    picked.shuffle(&mut rng);
    Relation::new(population.schema.clone(), picked.into_iter().map(|i| population.rows[i].clone()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HitterKind {
    Heavy,
    Light,
    Random,
}

/// Point queries over `attrs` picked from the population's nonzero groups:
/// the largest, the smallest, or uniformly chosen ones. Count ties break on
/// group values. Asking for more than exist returns every group.
pub fn generate_workload(
    population: &Relation,
    attrs: &[usize],
    kind: HitterKind,
    count: usize,
    seed: u64,
) -> Result<Vec<Query>> {
    let agg = compute_aggregate(population, attrs)?;
    let mut groups = agg.groups;
    match kind {
        HitterKind::Heavy => groups.sort_by(|x, y| {
            y.count.total_cmp(&x.count).then_with(|| x.values.cmp(&y.values))
        }),
        HitterKind::Light => groups.sort_by(|x, y| {
            x.count.total_cmp(&y.count).then_with(|| x.values.cmp(&y.values))
        }),
        HitterKind::Random => {
            groups.sort_by(|x, y| x.values.cmp(&y.values));
            if count < groups.len() {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut idx = index::sample(&mut rng, groups.len(), count).into_vec();
                idx.sort_by_key(|&i| Reverse(i));
                let mut chosen: Vec<_> = idx.into_iter().map(|i| groups.swap_remove(i)).collect();
                chosen.sort_by(|x, y| x.values.cmp(&y.values));
                groups = chosen;
            }
        }
    }
    groups.truncate(count);
    groups
        .into_iter()
        .map(|g| {
            let assignment: Vec<(usize, usize)> = attrs.iter().copied().zip(g.values).collect();
            Query::point(&population.schema, &assignment)
        })
        .collect()
}

/// `2·|t − e| / (t + e)`, in `[0, 2]`; zero when both are zero. A missed
/// group (estimate 0) or a phantom group (truth 0) scores 2.
pub fn percent_difference(truth: f64, estimate: f64) -> f64 {
    let denom = (truth + estimate).abs();
    if denom == 0.0 {
        0.0
    } else {
        (2.0 * (truth - estimate).abs() / denom).min(2.0)
    }
}

/// Render a query in the text grammar.
pub fn query_text(schema: &Schema, q: &Query) -> String {
    fn quote(s: &str) -> String {
        if s.is_empty() || s.chars().any(|c| c.is_whitespace() || "=,()<>\"".contains(c)) {
            format!("\"{}\"", s.replace('"', "\"\""))
        } else {
            s.to_string()
        }
    }
    let cond = |f: &crate::evaluator::Filter| {
        let vals: Vec<String> = (0..f.allowed.len())
            .filter(|&v| f.allowed[v])
            .map(|v| quote(schema.label(f.attr, v)))
            .collect();
        if vals.len() == 1 {
            format!("{}={}", schema.name(f.attr), vals[0])
        } else {
            format!("{} IN ({})", schema.name(f.attr), vals.join(","))
        }
    };
    match q.kind {
        crate::evaluator::QueryKind::Point => {
            let parts: Vec<String> = q.filters.iter().map(cond).collect();
            format!("POINT {}", parts.join(" "))
        }
        crate::evaluator::QueryKind::GroupBy => {
            let names: Vec<&str> = q.group_attrs.iter().map(|&a| schema.name(a)).collect();
            let agg = match q.agg {
                crate::evaluator::AggFn::Count => "count".to_string(),
                crate::evaluator::AggFn::Sum(a) => format!("sum:{}", schema.name(a)),
                crate::evaluator::AggFn::Avg(a) => format!("avg:{}", schema.name(a)),
            };
            let mut s = format!("GROUP BY {} AGG {}", names.join(","), agg);
            if !q.filters.is_empty() {
                let conds: Vec<String> = q.filters.iter().map(cond).collect();
                s.push_str(" WHERE ");
                s.push_str(&conds.join(" AND "));
            }
            s
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregates::fixtures;
    use crate::bayesnet::forward_sample;
    use crate::evaluator::parse_query;

    fn population(rows: usize, seed: u64) -> Relation {
        let bn = synthetic_network(&NetworkSpec { cardinalities: vec![3, 4, 2, 3], max_parents: 1, alpha: 1.0, seed }).unwrap();
        forward_sample(&bn, rows, seed).unwrap()
    }

    fn bias(rate: f64, pct: f64, seed: u64) -> BiasSpec {
        BiasSpec { attr: "a0".into(), values: vec!["0".into()], sample_rate: rate, bias_percent: pct, seed }
    }

    #[test]
    fn full_bias_only_predicate_rows() {
        let p = population(2000, 1);
        let s = generate_biased_sample(&p, &bias(0.1, 1.0, 3)).unwrap();
        assert_eq!(s.len(), 200);
        assert!(s.rows.iter().all(|r| r[0] == 0));
    }

    #[test]
    fn exact_bias_composition() {
        let p = population(3000, 2);
        let s = generate_biased_sample(&p, &bias(0.1, 0.9, 5)).unwrap();
        assert_eq!(s.rows.iter().filter(|r| r[0] == 0).count(), 270);
        assert_eq!(s.len(), 300);
    }

    #[test]
    fn full_sample_is_permutation() {
        let p = population(500, 3);
        let frac = p.rows.iter().filter(|r| r[0] == 0).count() as f64 / 500.0;
        let s = generate_biased_sample(&p, &bias(1.0, frac, 2)).unwrap();
        let mut a = p.rows.clone();
        let mut b = s.rows.clone();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn insufficient_rows_rejected() {
        let p = population(100, 4);
        assert!(generate_biased_sample(&p, &bias(1.0, 1.0, 0)).is_err());
        assert!(generate_biased_sample(&p, &bias(0.5, 1.5, 0)).is_err());
    }

    /// Upper-tail probability of a chi-square variable, by series expansion
    /// of the regularized lower incomplete gamma function.
    fn chi_square_sf(x: f64, dof: usize) -> f64 {
        let a = dof as f64 / 2.0;
        let z = x / 2.0;
        let mut term = 1.0 / a;
        let mut sum = term;
        for n in 1..500 {
            term *= z / (a + n as f64);
            sum += term;
        }
        let ln_gamma = |s: f64| -> f64 {
            // Lanczos approximation
            let g = 7.0;
            let c = [
                0.999_999_999_999_809_9,
                676.520_368_121_885_1,
                -1_259.139_216_722_402_8,
                771.323_428_777_653_1,
                -176.615_029_162_140_6,
                12.507_343_278_686_905,
                -0.138_571_095_265_720_12,
                9.984_369_578_019_572e-6,
                1.505_632_735_149_311_6e-7,
            ];
            let s = s - 1.0;
            let mut acc = c[0];
            for (i, ci) in c.iter().enumerate().skip(1) {
                acc += ci / (s + i as f64);
            }
            let t = s + g + 0.5;
            0.5 * (2.0 * std::f64::consts::PI).ln() + (s + 0.5) * t.ln() - t + acc.ln()
        };
        let lower = (a * z.ln() - z - ln_gamma(a)).exp() * sum;
        (1.0 - lower).max(0.0)
    }

    #[test]
    fn chi_square_helper_sane() {
        // P(χ²₁ > 3.841) ≈ 0.05, P(χ²₅ > 11.07) ≈ 0.05
        assert!((chi_square_sf(3.841, 1) - 0.05).abs() < 1e-3);
        assert!((chi_square_sf(11.07, 5) - 0.05).abs() < 1e-3);
    }

    #[test]
    fn natural_bias_looks_uniform() {
        let p = population(20_000, 7);
        let natural = p.rows.iter().filter(|r| r[0] == 0).count() as f64 / p.len() as f64;
        let cells: Vec<usize> = (0..4).collect();
        let pop_counts: Vec<f64> = cells.iter().map(|&v| p.rows.iter().filter(|r| r[1] == v).count() as f64).collect();
        let mut rejections = 0;
        for seed in 0..20 {
            let s = generate_biased_sample(&p, &bias(0.1, natural, seed)).unwrap();
            let n = s.len() as f64;
            let stat: f64 = cells
                .iter()
                .map(|&v| {
                    let obs = s.rows.iter().filter(|r| r[1] == v).count() as f64;
                    let exp = n * pop_counts[v] / p.len() as f64;
                    (obs - exp).powi(2) / exp
                })
                .sum();
            if chi_square_sf(stat, cells.len() - 1) <= 0.01 {
                rejections += 1;
            }
        }
        assert!(rejections <= 1, "{rejections} of 20 seeds rejected");
    }

    #[test]
    fn heavy_hitter_of_example() {
        let p = fixtures::population();
        let w = generate_workload(&p, &[1, 2], HitterKind::Heavy, 1, 0).unwrap();
        assert_eq!(query_text(&p.schema, &w[0]), "POINT o_st=NC d_st=NY");
    }

    #[test]
    fn hitters_match_full_sort() {
        let p = population(1000, 9);
        let attrs = [0, 1];
        let mut counts: std::collections::BTreeMap<Vec<usize>, usize> = Default::default();
        for r in &p.rows {
            *counts.entry(vec![r[0], r[1]]).or_default() += 1;
        }
        let mut sorted: Vec<(Vec<usize>, usize)> = counts.into_iter().collect();
        sorted.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let keys = |qs: Vec<Query>| -> Vec<Vec<usize>> {
            qs.iter().map(|q| q.filters.iter().map(|f| f.allowed.iter().position(|&x| x).unwrap()).collect()).collect()
        };
        let heavy = keys(generate_workload(&p, &attrs, HitterKind::Heavy, 5, 0).unwrap());
        assert_eq!(heavy, sorted.iter().take(5).map(|x| x.0.clone()).collect::<Vec<_>>());
        sorted.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)));
        let light = keys(generate_workload(&p, &attrs, HitterKind::Light, 5, 0).unwrap());
        assert_eq!(light, sorted.iter().take(5).map(|x| x.0.clone()).collect::<Vec<_>>());
    }

    #[test]
    fn saturated_workload_covers_every_group() {
        let p = population(1000, 10);
        for kind in [HitterKind::Heavy, HitterKind::Light, HitterKind::Random] {
            let w = generate_workload(&p, &[0, 2], kind, 1000, 1).unwrap();
            let distinct: std::collections::BTreeSet<String> = w.iter().map(|q| query_text(&p.schema, q)).collect();
            let groups: std::collections::BTreeSet<(usize, usize)> = p.rows.iter().map(|r| (r[0], r[2])).collect();
            assert_eq!(w.len(), groups.len());
            assert_eq!(distinct.len(), groups.len());
        }
    }

    #[test]
    fn random_workload_deterministic() {
        let p = population(1000, 11);
        let a = generate_workload(&p, &[0, 1], HitterKind::Random, 4, 5).unwrap();
        assert_eq!(a, generate_workload(&p, &[0, 1], HitterKind::Random, 4, 5).unwrap());
        assert_eq!(a.len(), 4);
    }

    #[test]
    fn percent_difference_cases() {
        assert_eq!(percent_difference(5.0, 5.0), 0.0);
        assert_eq!(percent_difference(5.0, 0.0), 2.0);
        assert_eq!(percent_difference(0.0, 3.0), 2.0);
        assert_eq!(percent_difference(0.0, 0.0), 0.0);
        assert!((percent_difference(7855.0, 7843.0) - 0.001529).abs() < 1e-6);
    }

    #[test]
    fn rendered_queries_parse_back() {
        let p = fixtures::population();
        let q = Query::group_by(
            &p.schema,
            vec![0, 1],
            crate::evaluator::AggFn::Count,
            vec![crate::evaluator::Filter { attr: 2, allowed: vec![true, false, true] }],
        )
        .unwrap();
        let text = query_text(&p.schema, &q);
        assert_eq!(parse_query(&text, &p.schema).unwrap(), q);
    }

    #[test]
    fn child_network_shape() {
        let bn = child_network(1.0, 0).unwrap();
        assert_eq!(bn.schema.len(), 20);
        assert_eq!(bn.structure.edges.len(), 25);
        assert!(bn.structure.is_acyclic());
    }
}
