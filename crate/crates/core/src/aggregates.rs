//! Population COUNT(*) aggregates and the sample/aggregate incidence system.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{Attribute, Domain, Relation, Schema};

#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub values: Vec<usize>,
    pub count: f64,
}

/// Result of one `GROUP BY attrs COUNT(*)` query over the population.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateQuery {
    pub attrs: Vec<usize>,
    pub groups: Vec<Group>,
}

impl AggregateQuery {
    pub fn new(attrs: Vec<usize>, groups: Vec<Group>) -> Result<Self> {
        if attrs.is_empty() {
            return Err(Error::InvalidAggregate("aggregate has no attributes".into()));
        }
        let distinct: BTreeSet<&usize> = attrs.iter().collect();
        if distinct.len() != attrs.len() {
            return Err(Error::InvalidAggregate(format!("repeated attribute in {attrs:?}")));
        }
        let mut seen = BTreeSet::new();
        for g in &groups {
            if g.values.len() != attrs.len() {
                return Err(Error::InvalidAggregate(format!(
                    "group {:?} does not match attributes {:?}",
                    g.values, attrs
                )));
            }
            if !(g.count >= 0.0) || !g.count.is_finite() {
                return Err(Error::InvalidAggregate(format!("negative count {}", g.count)));
            }
            if !seen.insert(&g.values) {
                return Err(Error::InvalidAggregate(format!("duplicate group {:?}", g.values)));
            }
        }
        Ok(AggregateQuery { attrs, groups })
    }

    pub fn dimension(&self) -> usize {
        self.attrs.len()
    }

    pub fn total(&self) -> f64 {
        self.groups.iter().map(|g| g.count).sum()
    }

    pub fn contains_all(&self, attrs: &[usize]) -> bool {
        attrs.iter().all(|a| self.attrs.contains(a))
    }

    /// Sum groups over the attributes not in `keep`. Output attributes follow
    /// the order of `keep`; groups are sorted by value vector.
    pub fn marginalize(&self, keep: &[usize]) -> Result<AggregateQuery> {
        if keep.is_empty() {
            return Err(Error::InvalidAggregate("marginalize onto no attributes".into()));
        }
        let pos: Vec<usize> = keep
            .iter()
            .map(|a| {
                self.attrs.iter().position(|b| b == a).ok_or_else(|| {
                    Error::InvalidAggregate(format!("{keep:?} is not a subset of {:?}", self.attrs))
                })
            })
            .collect::<Result<_>>()?;
        let mut acc: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        for g in &self.groups {
            let key: Vec<usize> = pos.iter().map(|&p| g.values[p]).collect();
            *acc.entry(key).or_insert(0.0) += g.count;
        }
        AggregateQuery::new(
            keep.to_vec(),
            acc.into_iter().map(|(values, count)| Group { values, count }).collect(),
        )
    }

    /// Write the groups as CSV, one column per attribute plus `count`.
    pub fn write_csv<W: Write>(&self, schema: &Schema, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = self.attrs.iter().map(|&a| schema.name(a)).collect();
        header.push("count");
        w.write_record(&header)?;
        for g in &self.groups {
            let mut rec: Vec<String> = self
                .attrs
                .iter()
                .zip(&g.values)
                .map(|(&a, &v)| schema.label(a, v).to_string())
                .collect();
            rec.push(format!("{}", g.count));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// The aggregate set Γ together with the population size.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateSet {
    pub queries: Vec<AggregateQuery>,
    pub population_size: f64,
}

impl AggregateSet {
    pub fn new(queries: Vec<AggregateQuery>, population_size: f64) -> Result<Self> {
        if !(population_size > 0.0) {
            return Err(Error::InvalidAggregate(format!(
                "population size must be positive, got {population_size}"
            )));
        }
        Ok(AggregateSet {
            queries,
            population_size,
        })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Sorted union of all aggregate attributes.
    pub fn covered_attrs(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.queries.iter().flat_map(|q| q.attrs.iter().copied()).collect();
        set.into_iter().collect()
    }

    /// First aggregate whose attributes contain all of `attrs`.
    pub fn supporting(&self, attrs: &[usize]) -> Option<&AggregateQuery> {
        self.queries.iter().find(|q| q.contains_all(attrs))
    }

    pub fn supports(&self, attrs: &[usize]) -> bool {
        self.supporting(attrs).is_some()
    }

    pub fn validate_against(&self, schema: &Schema) -> Result<()> {
        for q in &self.queries {
            for (i, &a) in q.attrs.iter().enumerate() {
                if a >= schema.len() {
                    return Err(Error::UnknownAttribute(format!("#{a}")));
                }
                let n = schema.cardinality(a);
                if let Some(g) = q.groups.iter().find(|g| g.values[i] >= n) {
                    return Err(Error::OutOfDomain {
                        attr: schema.name(a).to_string(),
                        value: g.values[i].to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_manifest(&self, schema: &Schema) -> AggregateManifest {
        AggregateManifest {
            n: self.population_size,
            aggregates: self
                .queries
                .iter()
                .map(|q| ManifestAggregate {
                    attrs: q.attrs.iter().map(|&a| schema.name(a).to_string()).collect(),
                    groups: q
                        .groups
                        .iter()
                        .map(|g| ManifestGroup {
                            values: q
                                .attrs
                                .iter()
                                .zip(&g.values)
                                .map(|(&a, &v)| schema.label(a, v).to_string())
                                .collect(),
                            count: g.count,
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

/// JSON form of an aggregate set, keyed by attribute names and labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateManifest {
    pub n: f64,
    pub aggregates: Vec<ManifestAggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestAggregate {
    pub attrs: Vec<String>,
    pub groups: Vec<ManifestGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestGroup {
    pub values: Vec<String>,
    pub count: f64,
}

impl AggregateManifest {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write_json_file(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Bind names and labels against a schema.
    pub fn bind(&self, schema: &Schema) -> Result<AggregateSet> {
        let queries = self
            .aggregates
            .iter()
            .map(|agg| {
                let attrs = agg
                    .attrs
                    .iter()
                    .map(|n| schema.index_of(n))
                    .collect::<Result<Vec<_>>>()?;
                let groups = agg
                    .groups
                    .iter()
                    .map(|g| {
                        if g.values.len() != attrs.len() {
                            return Err(Error::InvalidAggregate(format!(
                                "group {:?} does not match attributes {:?}",
                                g.values, agg.attrs
                            )));
                        }
                        let values = attrs
                            .iter()
                            .zip(&g.values)
                            .map(|(&a, v)| schema.resolve_value(a, v))
                            .collect::<Result<Vec<_>>>()?;
                        Ok(Group {
                            values,
                            count: g.count,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                merge_duplicate_groups(attrs, groups)
            })
            .collect::<Result<Vec<_>>>()?;
        AggregateSet::new(queries, self.n)
    }

    /// Labels mentioned for each attribute.
    pub fn labels(&self) -> BTreeMap<String, BTreeSet<String>> {
        let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for agg in &self.aggregates {
            for (i, name) in agg.attrs.iter().enumerate() {
                let d = out.entry(name.clone()).or_default();
                d.extend(agg.groups.iter().filter_map(|g| g.values.get(i).cloned()));
            }
        }
        out
    }

    /// A schema built from the names and labels appearing in the manifest
    /// itself (labels sorted). Enough for operations that never touch a
    /// sample, such as pruning.
    pub fn implied_schema(&self) -> Result<Schema> {
        let mut domains: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        let mut order: Vec<&str> = Vec::new();
        for agg in &self.aggregates {
            for (i, name) in agg.attrs.iter().enumerate() {
                if !domains.contains_key(name.as_str()) {
                    order.push(name);
                }
                let d = domains.entry(name).or_default();
                for g in &agg.groups {
                    if let Some(v) = g.values.get(i) {
                        d.insert(v);
                    }
                }
            }
        }
        Schema::new(
            order
                .into_iter()
                .map(|name| Attribute {
                    name: name.to_string(),
                    domain: Domain::categorical(domains[name].iter().copied()),
                })
                .collect(),
        )
    }
}

// Numeric values given as raw numbers may land in the same bucket; their
// counts are added.
fn merge_duplicate_groups(attrs: Vec<usize>, groups: Vec<Group>) -> Result<AggregateQuery> {
    let mut order: Vec<Vec<usize>> = Vec::new();
    let mut acc: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    for g in groups {
        if !acc.contains_key(&g.values) {
            order.push(g.values.clone());
        }
        *acc.entry(g.values).or_insert(0.0) += g.count;
    }
    let groups = order
        .into_iter()
        .map(|values| {
            let count = acc[&values];
            Group { values, count }
        })
        .collect();
    AggregateQuery::new(attrs, groups)
}

/// `GROUP BY attrs COUNT(*)` over a relation. Groups are sorted by value
/// vector; empty groups are omitted.
pub fn compute_aggregate(population: &Relation, attrs: &[usize]) -> Result<AggregateQuery> {
    if attrs.is_empty() {
        return Err(Error::InvalidAggregate("aggregate has no attributes".into()));
    }
    if let Some(&a) = attrs.iter().find(|&&a| a >= population.schema.len()) {
        return Err(Error::UnknownAttribute(format!("#{a}")));
    }
    let mut acc: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    for row in &population.rows {
        let key: Vec<usize> = attrs.iter().map(|&a| row[a]).collect();
        *acc.entry(key).or_insert(0.0) += 1.0;
    }
    AggregateQuery::new(
        attrs.to_vec(),
        acc.into_iter().map(|(values, count)| Group { values, count }).collect(),
    )
}

/// Aggregates over each attribute set, with n = |population|.
pub fn compute_aggregate_set(population: &Relation, attr_sets: &[Vec<usize>]) -> Result<AggregateSet> {
    let queries = attr_sets
        .iter()
        .map(|a| compute_aggregate(population, a))
        .collect::<Result<Vec<_>>>()?;
    AggregateSet::new(queries, population.len().max(1) as f64)
}

/// Sparse 0/1 incidence between aggregate groups (rows) and sample rows
/// (columns), with the matching target counts.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceSystem {
    /// Column indices with a 1, per constraint row, ascending.
    pub rows: Vec<Vec<usize>>,
    pub targets: Vec<f64>,
    /// (aggregate index, group index) per row.
    pub row_labels: Vec<(usize, usize)>,
    pub sample_size: usize,
}

impl IncidenceSystem {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dense(&self) -> Vec<Vec<u8>> {
        self.rows
            .iter()
            .map(|cols| {
                let mut r = vec![0u8; self.sample_size];
                for &c in cols {
                    r[c] = 1;
                }
                r
            })
            .collect()
    }

    /// `G[j] · w`.
    pub fn row_dot(&self, j: usize, w: &[f64]) -> f64 {
        self.rows[j].iter().map(|&c| w[c]).sum()
    }
}

pub fn build_incidence(sample: &Relation, gamma: &AggregateSet) -> Result<IncidenceSystem> {
    gamma.validate_against(&sample.schema)?;
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    let mut row_labels = Vec::new();
    for (qi, q) in gamma.queries.iter().enumerate() {
        let mut index: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
        for (c, row) in sample.rows.iter().enumerate() {
            let key: Vec<usize> = q.attrs.iter().map(|&a| row[a]).collect();
            index.entry(key).or_default().push(c);
        }
        for (gi, g) in q.groups.iter().enumerate() {
            rows.push(index.get(&g.values).cloned().unwrap_or_default());
            targets.push(g.count);
            row_labels.push((qi, gi));
        }
    }
    Ok(IncidenceSystem {
        rows,
        targets,
        row_labels,
        sample_size: sample.len(),
    })
}

/// Shannon entropy in nats of a list of nonnegative masses, normalized by
/// their total. `0 log 0 = 0`.
pub fn entropy(masses: impl IntoIterator<Item = f64>) -> f64 {
    let masses: Vec<f64> = masses.into_iter().collect();
    let total: f64 = masses.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    masses
        .iter()
        .filter(|&&m| m > 0.0)
        .map(|&m| {
            let p = m / total;
            -p * p.ln()
        })
        .sum()
}

/// Information content `Σ H(X_i) − H(X_attrs)` of an attribute set, from the
/// first aggregate that contains all of `attrs`.
pub fn info_content(gamma: &AggregateSet, attrs: &[usize]) -> Result<f64> {
    let agg = gamma
        .supporting(attrs)
        .ok_or_else(|| Error::NoSupport(attrs.to_vec()))?;
    info_content_from(agg, attrs)
}

pub(crate) fn info_content_from(agg: &AggregateQuery, attrs: &[usize]) -> Result<f64> {
    if attrs.len() <= 1 {
        return Ok(0.0);
    }
    let joint = agg.marginalize(attrs)?;
    let h_joint = entropy(joint.groups.iter().map(|g| g.count));
    let mut h_sum = 0.0;
    for &a in attrs {
        let m = joint.marginalize(&[a])?;
        h_sum += entropy(m.groups.iter().map(|g| g.count));
    }
    Ok(h_sum - h_joint)
}
