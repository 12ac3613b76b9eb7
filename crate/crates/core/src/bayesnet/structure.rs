//! Two-phase greedy hill climbing on BIC.
//!
//! Phase 1 scores families on pseudo-counts from the aggregates and only
//! considers moves whose scoring family lies inside a single aggregate.
//! When no such move improves the score every edge found so far is locked
//! and phase 2 continues on the sample, never removing or reversing a locked
//! edge.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{config_index, Edge, Structure};
use crate::aggregates::AggregateSet;
use crate::error::{Error, Result};
use crate::schema::Relation;

#[derive(Debug, Clone, Copy)]
pub enum ScoreSource<'a> {
    Sample(&'a Relation),
    /// Family counts from the first aggregate containing the family, scaled
    /// to the population size.
    Aggregates(&'a AggregateSet),
}

impl ScoreSource<'_> {
    /// Number of observations `R` in the BIC penalty.
    fn observations(&self) -> f64 {
        match self {
            ScoreSource::Sample(s) => s.len() as f64,
            ScoreSource::Aggregates(g) => g.population_size,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureOptions {
    pub max_parents: usize,
}

impl Default for StructureOptions {
    fn default() -> Self {
        StructureOptions { max_parents: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    Add(usize, usize),
    Remove(usize, usize),
    Reverse(usize, usize),
}

fn family_counts(source: ScoreSource, cards: &[usize], node: usize, parents: &[usize]) -> Result<Vec<f64>> {
    let configs: usize = parents.iter().map(|&p| cards[p]).product();
    let c = cards[node];
    let mut counts = vec![0.0; configs * c];
    match source {
        ScoreSource::Sample(sample) => {
            for row in &sample.rows {
                counts[config_index(parents, row, cards) * c + row[node]] += 1.0;
            }
        }
        ScoreSource::Aggregates(gamma) => {
            let mut family = parents.to_vec();
            family.push(node);
            let agg = gamma
                .supporting(&family)
                .ok_or_else(|| Error::NoSupport(family.clone()))?;
            let marg = agg.marginalize(&family)?;
            let total = marg.total();
            if total > 0.0 {
                let scale = gamma.population_size / total;
                let mut row = vec![0; cards.len()];
                for g in &marg.groups {
                    for (&a, &v) in family.iter().zip(&g.values) {
                        row[a] = v;
                    }
                    counts[config_index(parents, &row, cards) * c + row[node]] += g.count * scale;
                }
            }
        }
    }
    Ok(counts)
}

/// BIC contribution `LL − (ln R / 2)·params` of one node given its parents
/// (parents ascending).
pub fn family_score(source: ScoreSource, cards: &[usize], node: usize, parents: &[usize]) -> Result<f64> {
    let counts = family_counts(source, cards, node, parents)?;
    let c = cards[node];
    let mut ll = 0.0;
    for row in counts.chunks(c) {
        let total: f64 = row.iter().sum();
        for &n in row.iter().filter(|&&n| n > 0.0) {
            ll += n * (n / total).ln();
        }
    }
    let params = ((c - 1) * (counts.len() / c)) as f64;
    let r = source.observations();
    Ok(ll - 0.5 * r.max(1.0).ln() * params)
}

/// Sum of family scores over all nodes.
pub fn bic_score(structure: &Structure, source: ScoreSource, cards: &[usize]) -> Result<f64> {
    (0..structure.nodes)
        .map(|v| family_score(source, cards, v, &structure.parents(v)))
        .sum()
}

fn with_parent(mut parents: Vec<usize>, p: usize) -> Vec<usize> {
    parents.push(p);
    parents.sort_unstable();
    parents
}

fn without_parent(parents: &[usize], p: usize) -> Vec<usize> {
    parents.iter().copied().filter(|&x| x != p).collect()
}

fn supported(gamma: Option<&AggregateSet>, node: usize, parents: &[usize]) -> bool {
    gamma.is_none_or(|g| g.supports(&with_parent(parents.to_vec(), node)))
}

/// Legal moves on the ordered pair `(i, j)` and the structures they lead to.
///
/// With `phase_one_support = Some(Γ)` a move is allowed only if every family
/// it changes is contained in some aggregate. Locked edges are never removed
/// or reversed. Every returned structure is acyclic and respects
/// `max_parents`.
pub fn build_edges(
    pair: (usize, usize),
    structure: &Structure,
    phase_one_support: Option<&AggregateSet>,
    max_parents: usize,
) -> Vec<(Move, Structure)> {
    let (i, j) = pair;
    let mut out = Vec::new();
    if i == j || structure.has_edge(j, i) {
        return out;
    }
    match structure.edge(i, j).copied() {
        None => {
            let pa_j = structure.parents(j);
            if pa_j.len() < max_parents && !structure.reaches(j, i) && supported(phase_one_support, j, &with_parent(pa_j, i)) {
                let mut s = structure.clone();
                s.edges.push(Edge { parent: i, child: j, locked: false });
                out.push((Move::Add(i, j), s));
            }
        }
        Some(e) if !e.locked => {
            let mut removed = structure.clone();
            removed.edges.retain(|x| !(x.parent == i && x.child == j));
            if phase_one_support.is_none() {
                out.push((Move::Remove(i, j), removed.clone()));
            }
            let pa_i = structure.parents(i);
            if pa_i.len() < max_parents
                && !removed.reaches(i, j)
                && supported(phase_one_support, i, &with_parent(pa_i, j))
            {
                let mut s = removed;
                s.edges.push(Edge { parent: j, child: i, locked: false });
                out.push((Move::Reverse(i, j), s));
            }
        }
        Some(_) => {}
    }
    out
}

struct Scorer<'a> {
    source: ScoreSource<'a>,
    cards: &'a [usize],
    cache: HashMap<(usize, Vec<usize>), f64>,
}

impl Scorer<'_> {
    fn family(&mut self, node: usize, parents: Vec<usize>) -> Result<f64> {
        let key = (node, parents);
        if let Some(&s) = self.cache.get(&key) {
            return Ok(s);
        }
        let s = family_score(self.source, self.cards, node, &key.1)?;
        self.cache.insert(key, s);
        Ok(s)
    }

    fn delta(&mut self, structure: &Structure, mv: Move) -> Result<f64> {
        Ok(match mv {
            Move::Add(i, j) => {
                let pa = structure.parents(j);
                self.family(j, with_parent(pa.clone(), i))? - self.family(j, pa)?
            }
            Move::Remove(i, j) => {
                let pa = structure.parents(j);
                self.family(j, without_parent(&pa, i))? - self.family(j, pa)?
            }
            Move::Reverse(i, j) => {
                let pa_j = structure.parents(j);
                let pa_i = structure.parents(i);
                self.family(j, without_parent(&pa_j, i))? - self.family(j, pa_j)?
                    + self.family(i, with_parent(pa_i.clone(), j))?
                    - self.family(i, pa_i)?
            }
        })
    }
}

const IMPROVEMENT: f64 = 1e-9;

fn climb(structure: &mut Structure, source: ScoreSource, cards: &[usize], support: Option<&AggregateSet>, max_parents: usize) -> Result<usize> {
    let mut scorer = Scorer { source, cards, cache: HashMap::new() };
    let m = structure.nodes;
    let mut steps = 0;
    loop {
        let mut best: Option<(f64, Structure)> = None;
        for i in 0..m {
            for j in 0..m {
                for (mv, next) in build_edges((i, j), structure, support, max_parents) {
                    let d = scorer.delta(structure, mv)?;
                    if d > IMPROVEMENT && best.as_ref().is_none_or(|(b, _)| d > *b) {
                        best = Some((d, next));
                    }
                }
            }
        }
        match best {
            Some((d, next)) => {
                log::debug!("structure step {steps}: BIC +{d:.6}");
                *structure = next;
                steps += 1;
            }
            None => return Ok(steps),
        }
    }
}

/// Greedy two-phase structure search. Without aggregates only phase 2 runs.
pub fn learn_structure(sample: &Relation, gamma: &AggregateSet, opts: StructureOptions) -> Result<Structure> {
    if sample.is_empty() {
        return Err(Error::InvalidInput("structure learning needs a nonempty sample".into()));
    }
    if opts.max_parents == 0 {
        return Err(Error::InvalidInput("max_parents must be at least 1".into()));
    }
    gamma.validate_against(&sample.schema)?;
    let cards = sample.schema.cardinalities();
    let mut structure = Structure::empty(cards.len());
    if !gamma.is_empty() {
        let steps = climb(&mut structure, ScoreSource::Aggregates(gamma), &cards, Some(gamma), opts.max_parents)?;
        log::info!("structure phase 1: {steps} moves, {} edges", structure.edges.len());
        for e in &mut structure.edges {
            e.locked = true;
        }
    }
    let steps = climb(&mut structure, ScoreSource::Sample(sample), &cards, None, opts.max_parents)?;
    log::info!("structure phase 2: {steps} moves, {} edges", structure.edges.len());
    structure.edges.sort();
    Ok(structure)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregates::{compute_aggregate, AggregateQuery, Group};
    use crate::bayesnet::testnets::{random_net, schema};
    use crate::bayesnet::forward_sample;
    use std::sync::Arc;

    fn relation(cards: &[usize], rows: Vec<Vec<usize>>) -> Relation {
        Relation::new(schema(cards), rows).unwrap()
    }

    #[test]
    fn single_attribute_has_no_edges() {
        let r = relation(&[3], vec![vec![0], vec![1], vec![2], vec![1]]);
        let g = AggregateSet::new(vec![compute_aggregate(&r, &[0]).unwrap()], 4.0).unwrap();
        let s = learn_structure(&r, &g, StructureOptions::default()).unwrap();
        assert!(s.edges.is_empty());
    }

    #[test]
    fn empty_structure_bic_by_hand() {
        let r = relation(&[2], (0..8).map(|i| vec![i % 2]).collect());
        let got = bic_score(&Structure::empty(1), ScoreSource::Sample(&r), &[2]).unwrap();
        let want = 8.0 * 0.5f64.ln() - 0.5 * 8f64.ln();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn correlated_pair_gets_one_edge() {
        let rows: Vec<Vec<usize>> = (0..40).map(|i| vec![i % 2, i % 2]).collect();
        let r = relation(&[2, 2], rows);
        let g = AggregateSet::new(vec![compute_aggregate(&r, &[0, 1]).unwrap()], 40.0).unwrap();
        // exhaustive oracle over the three possible structures
        let cards = [2, 2];
        let src = ScoreSource::Aggregates(&g);
        let none = bic_score(&Structure::empty(2), src, &cards).unwrap();
        for (p, c) in [(0, 1), (1, 0)] {
            let s = Structure { nodes: 2, edges: vec![Edge { parent: p, child: c, locked: false }] };
            assert!(bic_score(&s, src, &cards).unwrap() > none);
        }
        let s = learn_structure(&r, &g, StructureOptions::default()).unwrap();
        assert_eq!(s.edges.len(), 1);
        assert!(s.edges[0].locked);
    }

    #[test]
    fn independent_edge_never_helps() {
        // exact product joint counts
        let mut rows = Vec::new();
        for a in 0..3 {
            for b in 0..2 {
                for _ in 0..(a + 1) * (b + 2) {
                    rows.push(vec![a, b]);
                }
            }
        }
        let r = relation(&[3, 2], rows);
        let cards = [3, 2];
        let src = ScoreSource::Sample(&r);
        let none = bic_score(&Structure::empty(2), src, &cards).unwrap();
        let s = Structure { nodes: 2, edges: vec![Edge { parent: 0, child: 1, locked: false }] };
        assert!(bic_score(&s, src, &cards).unwrap() < none);
    }

    #[test]
    fn score_invariant_to_attribute_order() {
        let bn = random_net(&[2, 3, 2], 1, 2);
        let r = forward_sample(&bn, 500, 1).unwrap();
        let s = Structure {
            nodes: 3,
            edges: vec![Edge { parent: 0, child: 1, locked: false }, Edge { parent: 1, child: 2, locked: false }],
        };
        let a = bic_score(&s, ScoreSource::Sample(&r), &[2, 3, 2]).unwrap();
        // permute columns: new index = [2, 0, 1] of old
        let perm = [2usize, 0, 1];
        let inv = [1usize, 2, 0];
        let rows = r.rows.iter().map(|row| perm.iter().map(|&o| row[o]).collect()).collect();
        let r2 = relation(&[2, 2, 3], rows);
        let s2 = Structure {
            nodes: 3,
            edges: s.edges.iter().map(|e| Edge { parent: inv[e.parent], child: inv[e.child], locked: false }).collect(),
        };
        let b = bic_score(&s2, ScoreSource::Sample(&r2), &[2, 2, 3]).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn unsupported_phase_one_candidate_is_empty() {
        let r = relation(&[2, 2, 2], vec![vec![0, 0, 0]]);
        let g = AggregateSet::new(vec![compute_aggregate(&r, &[0, 1]).unwrap()], 1.0).unwrap();
        let s = Structure::empty(3);
        assert!(build_edges((0, 2), &s, Some(&g), 1).is_empty());
        let moves = build_edges((0, 1), &s, Some(&g), 1);
        assert_eq!(moves.len(), 1);
        assert!(moves[0].1.has_edge(0, 1));
        assert!(matches!(moves[0].0, Move::Add(0, 1)));
        // family score of an unsupported family is an error
        assert!(family_score(ScoreSource::Aggregates(&g), &[2, 2, 2], 2, &[0]).is_err());
    }

    #[test]
    fn locked_edge_not_removed_or_reversed() {
        let s = Structure { nodes: 2, edges: vec![Edge { parent: 0, child: 1, locked: true }] };
        assert!(build_edges((0, 1), &s, None, 2).is_empty());
        let s = Structure { nodes: 2, edges: vec![Edge { parent: 0, child: 1, locked: false }] };
        let kinds: Vec<Move> = build_edges((0, 1), &s, None, 2).into_iter().map(|(m, _)| m).collect();
        assert_eq!(kinds, vec![Move::Remove(0, 1), Move::Reverse(0, 1)]);
    }

    #[test]
    fn moves_keep_acyclicity_and_parent_bound() {
        let s = Structure {
            nodes: 3,
            edges: vec![Edge { parent: 0, child: 1, locked: false }, Edge { parent: 1, child: 2, locked: false }],
        };
        // 2 -> 0 would close a cycle
        assert!(build_edges((2, 0), &s, None, 2).is_empty());
        // node 2 already has one parent
        assert!(build_edges((0, 2), &s, None, 1).is_empty());
        for (_, next) in build_edges((0, 2), &s, None, 2) {
            assert!(next.is_acyclic());
        }
    }

    #[test]
    fn learned_structures_respect_bounds_and_locks() {
        for seed in 0..5 {
            let bn = random_net(&[3, 2, 3, 2, 2], 1, seed);
            let pop = forward_sample(&bn, 3000, seed).unwrap();
            let sample = Relation::new(pop.schema.clone(), pop.rows[..400].to_vec()).unwrap();
            let g = AggregateSet::new(
                vec![compute_aggregate(&pop, &[0, 1]).unwrap(), compute_aggregate(&pop, &[1, 2]).unwrap()],
                3000.0,
            )
            .unwrap();
            for max_parents in [1, 2] {
                let s = learn_structure(&sample, &g, StructureOptions { max_parents }).unwrap();
                assert!(s.is_acyclic());
                assert!(s.max_in_degree() <= max_parents);
                for e in s.locked_edges() {
                    assert!(g.supports(&[e.parent, e.child]));
                }
            }
        }
    }

    #[test]
    fn phase_one_edges_survive_phase_two() {
        // aggregate says 0 and 1 are tied, the sample says they are independent
        let schema = schema(&[2, 2]);
        let agg = AggregateQuery::new(
            vec![0, 1],
            vec![Group { values: vec![0, 0], count: 50.0 }, Group { values: vec![1, 1], count: 50.0 }],
        )
        .unwrap();
        let g = AggregateSet::new(vec![agg], 100.0).unwrap();
        let rows = (0..40).map(|i| vec![i % 2, (i / 2) % 2]).collect();
        let sample = Relation::new(Arc::clone(&schema), rows).unwrap();
        let s = learn_structure(&sample, &g, StructureOptions::default()).unwrap();
        assert_eq!(s.edges.len(), 1);
        assert!(s.edges[0].locked);
    }
}
