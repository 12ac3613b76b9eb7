//! Query execution over a reweighted sample, a Bayesian network, or both.

mod parse;

pub use parse::parse_query;

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayesnet::{forward_sample, probability_of, replica_seed, BayesNet};
use crate::error::{Error, Result};
use crate::reweight::WeightVector;
use crate::schema::{Relation, Schema};

/// Allowed values of one attribute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Filter {
    pub attr: usize,
    pub allowed: Vec<bool>,
}

impl Filter {
    pub fn equals(attr: usize, value: usize, cardinality: usize) -> Self {
        Filter {
            attr,
            allowed: (0..cardinality).map(|v| v == value).collect(),
        }
    }

    pub fn matches(&self, row: &[usize]) -> bool {
        self.allowed[row[self.attr]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggFn {
    Count,
    Sum(usize),
    Avg(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryKind {
    Point,
    GroupBy,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub kind: QueryKind,
    /// At most one filter per attribute.
    pub filters: Vec<Filter>,
    pub group_attrs: Vec<usize>,
    pub agg: AggFn,
}

fn merge_filters(filters: Vec<Filter>) -> Vec<Filter> {
    let mut merged: BTreeMap<usize, Vec<bool>> = BTreeMap::new();
    for f in filters {
        match merged.get_mut(&f.attr) {
            Some(mask) => mask.iter_mut().zip(&f.allowed).for_each(|(m, a)| *m &= a),
            None => {
                merged.insert(f.attr, f.allowed);
            }
        }
    }
    merged.into_iter().map(|(attr, allowed)| Filter { attr, allowed }).collect()
}

impl Query {
    /// `SELECT COUNT(*) WHERE a1 = v1 AND …`.
    pub fn point(schema: &Schema, assignment: &[(usize, usize)]) -> Result<Self> {
        let filters = assignment
            .iter()
            .map(|&(a, v)| {
                check_attr(schema, a)?;
                if v >= schema.cardinality(a) {
                    return Err(Error::OutOfDomain {
                        attr: schema.name(a).to_string(),
                        value: v.to_string(),
                    });
                }
                Ok(Filter::equals(a, v, schema.cardinality(a)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Query {
            kind: QueryKind::Point,
            filters: merge_filters(filters),
            group_attrs: Vec::new(),
            agg: AggFn::Count,
        })
    }

    pub fn group_by(schema: &Schema, group_attrs: Vec<usize>, agg: AggFn, filters: Vec<Filter>) -> Result<Self> {
        if group_attrs.is_empty() {
            return Err(Error::InvalidInput("GROUP BY needs at least one attribute".into()));
        }
        for &a in &group_attrs {
            check_attr(schema, a)?;
        }
        if group_attrs.iter().collect::<std::collections::BTreeSet<_>>().len() != group_attrs.len() {
            return Err(Error::InvalidInput("GROUP BY attributes must be distinct".into()));
        }
        for f in &filters {
            check_attr(schema, f.attr)?;
            if f.allowed.len() != schema.cardinality(f.attr) {
                return Err(Error::InvalidInput(format!("filter on `{}` has the wrong width", schema.name(f.attr))));
            }
        }
        if let AggFn::Sum(a) | AggFn::Avg(a) = agg {
            check_attr(schema, a)?;
            representatives(schema, a)?;
        }
        Ok(Query {
            kind: QueryKind::GroupBy,
            filters: merge_filters(filters),
            group_attrs,
            agg,
        })
    }

    pub fn matches(&self, row: &[usize]) -> bool {
        self.filters.iter().all(|f| f.matches(row))
    }

    fn masks(&self) -> Vec<(usize, &[bool])> {
        self.filters.iter().map(|f| (f.attr, f.allowed.as_slice())).collect()
    }
}

fn check_attr(schema: &Schema, a: usize) -> Result<()> {
    if a < schema.len() {
        Ok(())
    } else {
        Err(Error::UnknownAttribute(format!("#{a}")))
    }
}

/// Numeric value standing for each domain entry: bucket midpoints, or the
/// label itself when it parses as a number.
pub(crate) fn representatives(schema: &Schema, attr: usize) -> Result<Vec<f64>> {
    let d = &schema.attributes[attr].domain;
    (0..d.len())
        .map(|i| {
            d.representative(i).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "attribute `{}` has non-numeric value `{}`",
                    schema.name(attr),
                    d.labels[i]
                ))
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Sample,
    Bn,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Sample => "sample",
            Provenance::Bn => "bn",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupEstimate {
    pub values: Vec<usize>,
    pub estimate: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QueryAnswer {
    Point { estimate: f64, provenance: Provenance },
    Groups(Vec<GroupEstimate>),
}

impl QueryAnswer {
    pub fn groups(&self) -> &[GroupEstimate] {
        match self {
            QueryAnswer::Groups(g) => g,
            QueryAnswer::Point { .. } => &[],
        }
    }

    pub fn point(&self) -> Option<f64> {
        match self {
            QueryAnswer::Point { estimate, .. } => Some(*estimate),
            QueryAnswer::Groups(_) => None,
        }
    }

    /// Point answers print as one number; group answers as CSV with the
    /// group columns, `estimate` and `provenance`.
    pub fn write<W: Write>(&self, schema: &Schema, query: &Query, out: W) -> Result<()> {
        match self {
            QueryAnswer::Point { estimate, .. } => {
                let mut out = out;
                writeln!(out, "{estimate}").map_err(|e| Error::io("<stdout>", e))
            }
            QueryAnswer::Groups(groups) => {
                let mut w = csv::Writer::from_writer(out);
                let mut header: Vec<&str> = query.group_attrs.iter().map(|&a| schema.name(a)).collect();
                header.extend(["estimate", "provenance"]);
                w.write_record(&header)?;
                for g in groups {
                    let mut rec: Vec<String> = query
                        .group_attrs
                        .iter()
                        .zip(&g.values)
                        .map(|(&a, &v)| schema.label(a, v).to_string())
                        .collect();
                    rec.push(format!("{}", g.estimate));
                    rec.push(g.provenance.as_str().to_string());
                    w.write_record(&rec)?;
                }
                w.flush().map_err(|e| Error::io("<stdout>", e))
            }
        }
    }
}

/// Run a query over a weighted sample: `COUNT` is `SUM(weight)`, `SUM(A)` is
/// `SUM(weight · rep(A))`, `AVG(A)` is their ratio. Only groups with at least
/// one matching row are returned, ordered by group values.
pub fn exec_weighted(sample: &Relation, weights: &[f64], q: &Query) -> Result<QueryAnswer> {
    if weights.len() != sample.len() {
        return Err(Error::InvalidInput(format!(
            "{} weights for {} sample rows",
            weights.len(),
            sample.len()
        )));
    }
    let reps = match q.agg {
        AggFn::Count => None,
        AggFn::Sum(a) | AggFn::Avg(a) => Some((a, representatives(&sample.schema, a)?)),
    };
    let mut acc: BTreeMap<Vec<usize>, (f64, f64)> = BTreeMap::new();
    for (row, &w) in sample.rows.iter().zip(weights) {
        if !q.matches(row) {
            continue;
        }
        let key: Vec<usize> = q.group_attrs.iter().map(|&a| row[a]).collect();
        let e = acc.entry(key).or_insert((0.0, 0.0));
        e.0 += w;
        if let Some((a, r)) = &reps {
            e.1 += w * r[row[*a]];
        }
    }
    let value = |(w, wx): (f64, f64)| match q.agg {
        AggFn::Count => w,
        AggFn::Sum(_) => wx,
        AggFn::Avg(_) => {
            if w > 0.0 {
                wx / w
            } else {
                0.0
            }
        }
    };
    Ok(match q.kind {
        QueryKind::Point => QueryAnswer::Point {
            estimate: acc.into_values().map(value).sum(),
            provenance: Provenance::Sample,
        },
        QueryKind::GroupBy => QueryAnswer::Groups(
            acc.into_iter()
                .map(|(values, v)| GroupEstimate {
                    values,
                    estimate: value(v),
                    provenance: Provenance::Sample,
                })
                .collect(),
        ),
    })
}

/// `n · Pr(filters)` by exact inference.
pub fn bn_point(bn: &BayesNet, q: &Query, n: f64) -> Result<QueryAnswer> {
    if q.kind != QueryKind::Point {
        return Err(Error::InvalidInput("bn_point needs a POINT query".into()));
    }
    Ok(QueryAnswer::Point {
        estimate: n * probability_of(bn, &q.masks())?,
        provenance: Provenance::Bn,
    })
}

/// Answer a GROUP BY from `k` forward samples of `size` rows each, every one
/// scaled to `n`. Only groups present in all replicas survive; their
/// estimates are averaged.
pub fn bn_groupby(bn: &BayesNet, q: &Query, n: f64, size: usize, k: usize, seed: u64) -> Result<QueryAnswer> {
    if q.kind != QueryKind::GroupBy {
        return Err(Error::InvalidInput("bn_groupby needs a GROUP BY query".into()));
    }
    if k == 0 {
        return Err(Error::InvalidInput("at least one replica is needed".into()));
    }
    let answers: Vec<Vec<GroupEstimate>> = (0..k)
        .into_par_iter()
        .map(|r| {
            let s = forward_sample(bn, size, replica_seed(seed, r))?;
            let w = vec![n / size as f64; size];
            Ok(exec_weighted(&s, &w, q)?.groups().to_vec())
        })
        .collect::<Result<_>>()?;
    let mut acc: BTreeMap<Vec<usize>, (usize, f64)> = BTreeMap::new();
    for groups in &answers {
        for g in groups {
            let e = acc.entry(g.values.clone()).or_insert((0, 0.0));
            e.0 += 1;
            e.1 += g.estimate;
        }
    }
    Ok(QueryAnswer::Groups(
        acc.into_iter()
            .filter(|(_, (seen, _))| *seen == k)
            .map(|(values, (_, total))| GroupEstimate {
                values,
                estimate: total / k as f64,
                provenance: Provenance::Bn,
            })
            .collect(),
    ))
}

/// A reweighted sample plus an optional network, answering queries with the
/// hybrid routing policy.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridModel {
    pub sample: Relation,
    pub weights: WeightVector,
    pub bn: Option<BayesNet>,
    pub population_size: f64,
    pub k_replicas: usize,
    pub seed: u64,
}

impl HybridModel {
    pub fn schema(&self) -> &Schema {
        &self.sample.schema
    }

    /// Sample answer when some sample row matches, else `n · Pr(filters)`
    /// from the network (when there is one).
    pub fn answer_point(&self, q: &Query) -> Result<QueryAnswer> {
        if q.kind != QueryKind::Point {
            return Err(Error::InvalidInput("answer_point needs a POINT query".into()));
        }
        let present = self.sample.rows.iter().any(|r| q.matches(r));
        match (&self.bn, present) {
            (Some(bn), false) => bn_point(bn, q, self.population_size),
            _ => exec_weighted(&self.sample, &self.weights.weights, q),
        }
    }

    /// Sample groups, plus groups only the network produces.
    pub fn answer_groupby(&self, q: &Query) -> Result<QueryAnswer> {
        let sample = exec_weighted(&self.sample, &self.weights.weights, q)?;
        let Some(bn) = &self.bn else { return Ok(sample) };
        let size = self.sample.len().max(1);
        let from_bn = bn_groupby(bn, q, self.population_size, size, self.k_replicas, self.seed)?;
        let mut groups = sample.groups().to_vec();
        let known: std::collections::BTreeSet<&[usize]> = groups.iter().map(|g| g.values.as_slice()).collect();
        let extra: Vec<GroupEstimate> = from_bn
            .groups()
            .iter()
            .filter(|g| !known.contains(g.values.as_slice()))
            .cloned()
            .collect();
        groups.extend(extra);
        groups.sort_by(|a, b| a.values.cmp(&b.values));
        Ok(QueryAnswer::Groups(groups))
    }

    pub fn answer(&self, q: &Query) -> Result<QueryAnswer> {
        match q.kind {
            QueryKind::Point => self.answer_point(q),
            QueryKind::GroupBy => self.answer_groupby(q),
        }
    }

    /// Parse and answer a query in the text grammar.
    pub fn query(&self, text: &str) -> Result<(Query, QueryAnswer)> {
        let q = parse_query(text, self.schema())?;
        let a = self.answer(&q)?;
        Ok((q, a))
    }
}
