//! Schemas, relations and CSV ingestion.
//!
//! Every attribute has an ordered, finite domain. Categorical domains are the
//! lexicographically sorted distinct observed values; numeric attributes are
//! bucketized into equi-width half-open intervals over the observed range
//! (the last bucket is closed).

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interval backing one numeric bucket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub lower: f64,
    pub upper: f64,
}

impl Bucket {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

/// Ordered list of category labels. Bucketized domains carry one interval
/// per label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buckets: Option<Vec<Bucket>>,
}

impl Domain {
    pub fn categorical<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Self {
        Domain {
            labels: labels.into_iter().map(Into::into).collect(),
            buckets: None,
        }
    }

    /// Equi-width buckets over `[min, max]`. A degenerate range yields a
    /// single bucket.
    pub fn equi_width(min: f64, max: f64, count: usize) -> Self {
        let count = if max > min { count.max(1) } else { 1 };
        let width = (max - min) / count as f64;
        let buckets: Vec<Bucket> = (0..count)
            .map(|k| Bucket {
                lower: min + k as f64 * width,
                upper: if k + 1 == count {
                    max
                } else {
                    min + (k + 1) as f64 * width
                },
            })
            .collect();
        let labels = buckets
            .iter()
            .enumerate()
            .map(|(k, b)| {
                if k + 1 == count {
                    format!("[{},{}]", b.lower, b.upper)
                } else {
                    format!("[{},{})", b.lower, b.upper)
                }
            })
            .collect();
        Domain {
            labels,
            buckets: Some(buckets),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn is_numeric(&self) -> bool {
        self.buckets.is_some()
    }

    /// Bucket containing `x`, with interior boundaries assigned upward.
    pub fn bucket_of(&self, x: f64) -> Option<usize> {
        let buckets = self.buckets.as_ref()?;
        let first = buckets.first()?;
        let last = buckets.last()?;
        if !(x >= first.lower && x <= last.upper) {
            return None;
        }
        let idx = buckets.partition_point(|b| b.lower <= x);
        Some(idx.saturating_sub(1))
    }

    /// Value used for SUM/AVG: the bucket midpoint, or the label itself when
    /// it parses as a number.
    pub fn representative(&self, index: usize) -> Option<f64> {
        match &self.buckets {
            Some(b) => b.get(index).map(Bucket::midpoint),
            None => self.labels.get(index)?.trim().parse().ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub domain: Domain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub attributes: Vec<Attribute>,
}

impl Schema {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for a in &attributes {
            if !seen.insert(a.name.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate attribute name `{}`",
                    a.name
                )));
            }
        }
        Ok(Schema { attributes })
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.attributes.iter().map(|a| a.domain.len()).collect()
    }

    pub fn cardinality(&self, attr: usize) -> usize {
        self.attributes[attr].domain.len()
    }

    pub fn name(&self, attr: usize) -> &str {
        &self.attributes[attr].name
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.attributes
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    pub fn label(&self, attr: usize, value: usize) -> &str {
        &self.attributes[attr].domain.labels[value]
    }

    /// Resolve a user-supplied value: an exact label first, then (numeric
    /// attributes only) the bucket containing the parsed number.
    pub fn resolve_value(&self, attr: usize, raw: &str) -> Result<usize> {
        let a = &self.attributes[attr];
        if let Some(i) = a.domain.labels.iter().position(|l| l == raw) {
            return Ok(i);
        }
        if a.domain.is_numeric() {
            if let Ok(x) = raw.trim().parse::<f64>() {
                if let Some(i) = a.domain.bucket_of(x) {
                    return Ok(i);
                }
            }
        }
        Err(Error::OutOfDomain {
            attr: a.name.clone(),
            value: raw.to_string(),
        })
    }

    /// Map one raw row onto category indices.
    pub fn encode_row<S: AsRef<str>>(&self, raw: &[S]) -> Result<Vec<usize>> {
        if raw.len() != self.len() {
            return Err(Error::RowLength {
                expected: self.len(),
                got: raw.len(),
            });
        }
        raw.iter()
            .enumerate()
            .map(|(i, cell)| {
                let cell = cell.as_ref();
                let a = &self.attributes[i];
                if a.domain.is_numeric() {
                    let x: f64 = cell.trim().parse().map_err(|_| Error::NumericParse {
                        attr: a.name.clone(),
                        value: cell.to_string(),
                    })?;
                    a.domain.bucket_of(x).ok_or_else(|| Error::OutOfDomain {
                        attr: a.name.clone(),
                        value: cell.to_string(),
                    })
                } else {
                    a.domain
                        .labels
                        .iter()
                        .position(|l| l == cell)
                        .ok_or_else(|| Error::OutOfDomain {
                            attr: a.name.clone(),
                            value: cell.to_string(),
                        })
                }
            })
            .collect()
    }

    pub fn decode_row(&self, row: &[usize]) -> Vec<String> {
        row.iter()
            .enumerate()
            .map(|(i, &v)| self.label(i, v).to_string())
            .collect()
    }
}

/// A bag of category-index rows over a schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Relation {
    pub schema: Arc<Schema>,
    pub rows: Vec<Vec<usize>>,
}

impl Relation {
    pub fn new(schema: Arc<Schema>, rows: Vec<Vec<usize>>) -> Result<Self> {
        let cards = schema.cardinalities();
        for row in &rows {
            if row.len() != cards.len() {
                return Err(Error::RowLength {
                    expected: cards.len(),
                    got: row.len(),
                });
            }
            for (i, (&v, &n)) in row.iter().zip(&cards).enumerate() {
                if v >= n {
                    return Err(Error::OutOfDomain {
                        attr: schema.name(i).to_string(),
                        value: v.to_string(),
                    });
                }
            }
        }
        Ok(Relation { schema, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Write the relation as CSV with decoded labels, optionally appending a
    /// trailing `weight` column.
    pub fn write_csv<W: Write>(&self, out: W, weights: Option<&[f64]>) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = self.schema.attributes.iter().map(|a| a.name.as_str()).collect();
        if weights.is_some() {
            header.push("weight");
        }
        w.write_record(&header)?;
        for (r, row) in self.rows.iter().enumerate() {
            let mut rec = self.schema.decode_row(row);
            if let Some(ws) = weights {
                rec.push(format!("{}", ws[r]));
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Read a CSV of labels written by [`Relation::write_csv`]. Returns the
    /// trailing weight column when present.
    pub fn read_labeled_csv<R: Read>(schema: Arc<Schema>, input: R) -> Result<(Relation, Option<Vec<f64>>)> {
        let mut rdr = csv::Reader::from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let m = schema.len();
        let has_weight = header.len() == m + 1 && header[m] == "weight";
        if !(header.len() == m || has_weight)
            || header.iter().take(m).zip(&schema.attributes).any(|(h, a)| h != &a.name)
        {
            return Err(Error::HeaderMismatch(header.join(",")));
        }
        let mut rows = Vec::new();
        let mut weights = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let cells: Vec<&str> = rec.iter().collect();
            let row = cells[..m]
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    schema.attributes[i]
                        .domain
                        .labels
                        .iter()
                        .position(|l| l == c)
                        .ok_or_else(|| Error::OutOfDomain {
                            attr: schema.name(i).to_string(),
                            value: c.to_string(),
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
            if has_weight {
                let w = cells[m].parse::<f64>().map_err(|_| Error::NumericParse {
                    attr: "weight".into(),
                    value: cells[m].to_string(),
                })?;
                weights.push(w);
            }
        }
        Ok((Relation::new(schema, rows)?, has_weight.then_some(weights)))
    }
}

impl Relation {
    /// Add categorical labels that never occur in the rows, such as values
    /// known only from population aggregates. Domains stay sorted and rows
    /// are re-indexed; numeric attributes are unchanged.
    pub fn with_extra_labels(self, extra: &BTreeMap<String, BTreeSet<String>>) -> Result<Relation> {
        let mut attributes = self.schema.attributes.clone();
        let mut remap: Vec<Option<Vec<usize>>> = vec![None; attributes.len()];
        for (i, attr) in attributes.iter_mut().enumerate() {
            let Some(labels) = extra.get(&attr.name) else { continue };
            if attr.domain.is_numeric() || labels.iter().all(|l| attr.domain.labels.contains(l)) {
                continue;
            }
            let merged: BTreeSet<&str> = attr.domain.labels.iter().map(String::as_str).chain(labels.iter().map(String::as_str)).collect();
            let merged: Vec<String> = merged.into_iter().map(str::to_string).collect();
            remap[i] = Some(
                attr.domain
                    .labels
                    .iter()
                    .map(|l| merged.iter().position(|m| m == l).expect("old label kept"))
                    .collect(),
            );
            attr.domain = Domain::categorical(merged);
        }
        if remap.iter().all(Option::is_none) {
            return Ok(self);
        }
        let schema = Arc::new(Schema::new(attributes)?);
        let rows = self
            .rows
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .zip(&remap)
                    .map(|(v, m)| m.as_ref().map_or(v, |m| m[v]))
                    .collect()
            })
            .collect();
        Relation::new(schema, rows)
    }
}

/// How one column is ingested.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AttributeKind {
    Categorical,
    /// Equi-width buckets over the observed range, widened to `min`/`max`
    /// when given.
    Numeric {
        buckets: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max: Option<f64>,
    },
}

impl AttributeKind {
    pub fn numeric(buckets: usize) -> Self {
        AttributeKind::Numeric { buckets, min: None, max: None }
    }
}

/// Ingest spec: attribute name to kind. Column order comes from the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IngestSpec(pub BTreeMap<String, AttributeKind>);

impl IngestSpec {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn is_null(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t.eq_ignore_ascii_case("null")
}

pub fn load_relation(path: &Path, spec: &IngestSpec) -> Result<Relation> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_relation(file, spec)
}

/// Ingest delimited text: drop rows with any null cell, build domains from
/// the surviving rows, then encode.
pub fn read_relation<R: Read>(input: R, spec: &IngestSpec) -> Result<Relation> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();

    let names: BTreeSet<&str> = header.iter().map(String::as_str).collect();
    let spec_names: BTreeSet<&str> = spec.0.keys().map(String::as_str).collect();
    if names != spec_names || names.len() != header.len() {
        return Err(Error::HeaderMismatch(format!(
            "file columns {:?}, spec attributes {:?}",
            header, spec_names
        )));
    }
    let kinds: Vec<AttributeKind> = header.iter().map(|h| spec.0[h]).collect();
    for (h, k) in header.iter().zip(&kinds) {
        if let AttributeKind::Numeric { buckets: 0, .. } = k {
            return Err(Error::BucketCount { attr: h.clone() });
        }
    }

    let mut raw_rows: Vec<Vec<String>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::RowLength {
                expected: header.len(),
                got: rec.len(),
            });
        }
        if rec.iter().any(is_null) {
            continue;
        }
        raw_rows.push(rec.iter().map(str::to_string).collect());
    }

    let mut attributes = Vec::with_capacity(header.len());
    for (c, (name, kind)) in header.iter().zip(&kinds).enumerate() {
        let domain = match *kind {
            AttributeKind::Categorical => {
                let distinct: BTreeSet<&str> = raw_rows.iter().map(|r| r[c].as_str()).collect();
                Domain::categorical(distinct)
            }
            AttributeKind::Numeric { buckets, min, max } => {
                let mut lo = min.unwrap_or(f64::INFINITY);
                let mut hi = max.unwrap_or(f64::NEG_INFINITY);
                for r in &raw_rows {
                    let x: f64 = r[c].trim().parse().map_err(|_| Error::NumericParse {
                        attr: name.clone(),
                        value: r[c].clone(),
                    })?;
                    if !x.is_finite() {
                        return Err(Error::NumericParse {
                            attr: name.clone(),
                            value: r[c].clone(),
                        });
                    }
                    lo = lo.min(x);
                    hi = hi.max(x);
                }
                if !(lo <= hi) {
                    return Err(Error::EmptyNumeric { attr: name.clone() });
                }
                Domain::equi_width(lo, hi, buckets)
            }
        };
        attributes.push(Attribute {
            name: name.clone(),
            domain,
        });
    }
    let schema = Arc::new(Schema::new(attributes)?);
    let rows = raw_rows
        .iter()
        .map(|r| schema.encode_row(r))
        .collect::<Result<Vec<_>>>()?;
    Relation::new(schema, rows)
}
