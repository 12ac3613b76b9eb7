//! Discrete Bayesian networks: structure search, aggregate-constrained
//! parameter learning, exact inference and forward sampling.

mod inference;
mod params;
mod sampling;
mod structure;

pub use inference::{joint_prob, marginal_prob, marginal_table, probability_of, Factor};
pub use params::{
    factor_constraints, learn_parameters, FactorConstraint, NodeDiagnostics, ParamDiagnostics, ParamMode,
    ParamOptions,
};
pub use sampling::{forward_sample, replica_seed};
pub use structure::{bic_score, build_edges, family_score, learn_structure, Move, ScoreSource, StructureOptions};

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::Schema;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub parent: usize,
    pub child: usize,
    /// Added while learning from the aggregates; never removed afterwards.
    pub locked: bool,
}

/// Directed acyclic graph over attribute indices `0..nodes`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Structure {
    pub nodes: usize,
    pub edges: Vec<Edge>,
}

impl Structure {
    pub fn empty(nodes: usize) -> Self {
        Structure { nodes, edges: Vec::new() }
    }

    pub fn has_edge(&self, parent: usize, child: usize) -> bool {
        self.edges.iter().any(|e| e.parent == parent && e.child == child)
    }

    pub fn edge(&self, parent: usize, child: usize) -> Option<&Edge> {
        self.edges.iter().find(|e| e.parent == parent && e.child == child)
    }

    /// Parents of `node`, ascending.
    pub fn parents(&self, node: usize) -> Vec<usize> {
        let mut p: Vec<usize> = self.edges.iter().filter(|e| e.child == node).map(|e| e.parent).collect();
        p.sort_unstable();
        p
    }

    pub fn children(&self, node: usize) -> Vec<usize> {
        let mut c: Vec<usize> = self.edges.iter().filter(|e| e.parent == node).map(|e| e.child).collect();
        c.sort_unstable();
        c
    }

    pub fn locked_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| e.locked)
    }

    /// Kahn's algorithm, always taking the smallest ready node. `None` if the
    /// graph has a cycle.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let mut indeg = vec![0usize; self.nodes];
        for e in &self.edges {
            indeg[e.child] += 1;
        }
        let mut ready: std::collections::BTreeSet<usize> = (0..self.nodes).filter(|&v| indeg[v] == 0).collect();
        let mut order = Vec::with_capacity(self.nodes);
        while let Some(v) = ready.pop_first() {
            order.push(v);
            for c in self.children(v) {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        (order.len() == self.nodes).then_some(order)
    }

    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_some()
    }

    /// True if `to` is reachable from `from` along directed edges.
    pub fn reaches(&self, from: usize, to: usize) -> bool {
        let mut seen = vec![false; self.nodes];
        let mut queue = VecDeque::from([from]);
        while let Some(v) = queue.pop_front() {
            if v == to {
                return true;
            }
            for e in self.edges.iter().filter(|e| e.parent == v) {
                if !seen[e.child] {
                    seen[e.child] = true;
                    queue.push_back(e.child);
                }
            }
        }
        false
    }

    /// Strict ancestors of `node`, ascending.
    pub fn ancestors(&self, node: usize) -> Vec<usize> {
        let mut seen = vec![false; self.nodes];
        let mut stack = self.parents(node);
        while let Some(v) = stack.pop() {
            if !seen[v] {
                seen[v] = true;
                stack.extend(self.parents(v));
            }
        }
        (0..self.nodes).filter(|&v| seen[v]).collect()
    }

    /// `nodes` together with all their ancestors, ascending.
    pub fn ancestral_closure(&self, nodes: &[usize]) -> Vec<usize> {
        let mut keep = vec![false; self.nodes];
        for &v in nodes {
            keep[v] = true;
            for a in self.ancestors(v) {
                keep[a] = true;
            }
        }
        (0..self.nodes).filter(|&v| keep[v]).collect()
    }

    pub fn max_in_degree(&self) -> usize {
        (0..self.nodes).map(|v| self.parents(v).len()).max().unwrap_or(0)
    }

    fn validate(&self) -> Result<()> {
        for e in &self.edges {
            if e.parent >= self.nodes || e.child >= self.nodes || e.parent == e.child {
                return Err(Error::InvalidInput(format!(
                    "invalid edge {} -> {}",
                    e.parent, e.child
                )));
            }
        }
        if !self.is_acyclic() {
            return Err(Error::InvalidInput("network structure has a cycle".into()));
        }
        Ok(())
    }
}

/// `table[k][j] = Pr(child = j | parents = k)`. Parent configurations are
/// mixed-radix over `parents` (ascending attribute order), first parent most
/// significant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cpt {
    pub child: usize,
    pub parents: Vec<usize>,
    pub table: Vec<Vec<f64>>,
}

impl Cpt {
    pub fn uniform(child: usize, parents: Vec<usize>, cards: &[usize]) -> Self {
        let configs = parents.iter().map(|&p| cards[p]).product();
        let c = cards[child];
        Cpt {
            child,
            parents,
            table: vec![vec![1.0 / c as f64; c]; configs],
        }
    }

    pub fn config_index(&self, row: &[usize], cards: &[usize]) -> usize {
        config_index(&self.parents, row, cards)
    }

    pub fn prob(&self, row: &[usize], cards: &[usize]) -> f64 {
        self.table[self.config_index(row, cards)][row[self.child]]
    }

    pub fn max_row_error(&self) -> f64 {
        self.table
            .iter()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn config_index(parents: &[usize], row: &[usize], cards: &[usize]) -> usize {
    parents.iter().fold(0, |k, &p| k * cards[p] + row[p])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesNet {
    pub schema: Arc<Schema>,
    pub structure: Structure,
    /// One table per attribute, indexed by attribute.
    pub cpts: Vec<Cpt>,
}

impl BayesNet {
    pub fn new(schema: Arc<Schema>, structure: Structure, cpts: Vec<Cpt>) -> Result<Self> {
        let bn = BayesNet { schema, structure, cpts };
        bn.validate()?;
        Ok(bn)
    }

    /// Every CPT uniform over its child's domain.
    pub fn uniform(schema: Arc<Schema>, structure: Structure) -> Result<Self> {
        let cards = schema.cardinalities();
        let cpts = (0..structure.nodes)
            .map(|v| Cpt::uniform(v, structure.parents(v), &cards))
            .collect();
        BayesNet::new(schema, structure, cpts)
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.schema.cardinalities()
    }

    pub fn topological_order(&self) -> Vec<usize> {
        self.structure
            .topological_order()
            .expect("validated structure is acyclic")
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.schema.len();
        if self.structure.nodes != m || self.cpts.len() != m {
            return Err(Error::InvalidInput(format!(
                "network has {} nodes and {} tables for {m} attributes",
                self.structure.nodes,
                self.cpts.len()
            )));
        }
        self.structure.validate()?;
        let cards = self.cardinalities();
        for (v, cpt) in self.cpts.iter().enumerate() {
            let configs: usize = cpt.parents.iter().map(|&p| cards[p]).product();
            if cpt.child != v
                || cpt.parents != self.structure.parents(v)
                || cpt.table.len() != configs
                || cpt.table.iter().any(|r| r.len() != cards[v])
            {
                return Err(Error::InvalidInput(format!(
                    "table for `{}` does not match the structure",
                    self.schema.name(v)
                )));
            }
            if cpt.table.iter().flatten().any(|&p| !(p >= 0.0) || !p.is_finite()) || cpt.max_row_error() > 1e-6 {
                return Err(Error::InvalidInput(format!(
                    "table for `{}` is not a conditional distribution",
                    self.schema.name(v)
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        w.write_all(self.to_json()?.as_bytes()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let bn: BayesNet = serde_json::from_reader(BufReader::new(f))?;
        bn.validate()?;
        Ok(bn)
    }
}
