//! Aggregate pruning with a greedy t-cherry junction tree built from the
//! aggregates alone.
//!
//! Every candidate cluster is a set of `k` attributes that some aggregate
//! contains ("support"); each cluster pairs with each of its `k − 1`-sized
//! separators. A pair scores `I(X_C) − I(X_S)`. Trees grow greedily: the
//! highest-scoring acceptable pair is taken, where acceptable means its
//! separator lies inside a cluster already in the current tree and it covers
//! an attribute the tree does not yet cover. After each acceptance the scan
//! restarts from the top, so with `k = 2` the first tree is exactly a
//! maximum-weight spanning tree over pairwise mutual information.
//!
//! Once every attribute is covered a new tree starts, excluding clusters
//! already accepted, until the budget is spent.

use std::cmp::Ordering;

use log::warn;

use crate::aggregates::{info_content_from, AggregateSet};
use crate::error::{Error, Result};
use crate::schema::Schema;

#[derive(Debug, Clone, PartialEq)]
pub struct CherryCluster {
    /// Sorted attribute indices.
    pub attrs: Vec<usize>,
    /// `None` for the seed cluster of a tree (or of a disconnected component).
    pub separator: Option<Vec<usize>>,
    pub score: f64,
    pub tree_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CherrySelection {
    pub clusters: Vec<CherryCluster>,
}

impl CherrySelection {
    pub fn tree(&self, id: usize) -> impl Iterator<Item = &CherryCluster> {
        self.clusters.iter().filter(move |c| c.tree_id == id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneOutcome {
    pub selection: CherrySelection,
    pub aggregates: AggregateSet,
    /// Fewer distinct clusters were obtainable than the budget asked for.
    pub saturated: bool,
}

#[derive(Debug, Clone)]
struct Pair {
    cluster: Vec<usize>,
    separator: Vec<usize>,
    cluster_score: f64,
    score: f64,
    cluster_names: Vec<String>,
    separator_names: Vec<String>,
}

fn subsets_of_size(universe: &[usize], k: usize) -> Vec<Vec<usize>> {
    fn rec(u: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..u.len() {
            if u.len() - i < k - cur.len() {
                break;
            }
            cur.push(u[i]);
            rec(u, k, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(universe, k, 0, &mut Vec::new(), &mut out);
    out
}

fn sorted_names(schema: &Schema, attrs: &[usize]) -> Vec<String> {
    let mut v: Vec<String> = attrs.iter().map(|&a| schema.name(a).to_string()).collect();
    v.sort();
    v
}

/// Every supported cluster of size `k` with each of its separators, sorted by
/// descending score, ties by cluster names then separator names.
fn cluster_separator_pairs(gamma: &AggregateSet, schema: &Schema, k: usize) -> Result<Vec<Pair>> {
    let universe = gamma.covered_attrs();
    let mut pairs = Vec::new();
    for cluster in subsets_of_size(&universe, k) {
        let Some(agg) = gamma.supporting(&cluster) else {
            continue;
        };
        let i_c = info_content_from(agg, &cluster)?;
        for skip in 0..k {
            let separator: Vec<usize> = cluster
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != skip)
                .map(|(_, &a)| a)
                .collect();
            let i_s = info_content_from(agg, &separator)?;
            pairs.push(Pair {
                cluster_names: sorted_names(schema, &cluster),
                separator_names: sorted_names(schema, &separator),
                cluster: cluster.clone(),
                separator,
                cluster_score: i_c,
                score: i_c - i_s,
            });
        }
    }
    pairs.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.cluster_names.cmp(&b.cluster_names))
            .then_with(|| a.separator_names.cmp(&b.separator_names))
    });
    Ok(pairs)
}

/// Greedy t-cherry selection over the supported clusters of `candidates`,
/// then filter the candidates to those whose attribute set equals an
/// accepted cluster.
pub fn prune_aggregates(
    candidates: &AggregateSet,
    schema: &Schema,
    budget: usize,
    k: usize,
) -> Result<PruneOutcome> {
    if budget == 0 {
        return Err(Error::InvalidInput("budget must be at least 1".into()));
    }
    if k < 2 {
        return Err(Error::InvalidInput("cluster size must be at least 2".into()));
    }
    candidates.validate_against(schema)?;
    let pairs = cluster_separator_pairs(candidates, schema, k)?;

    // attributes any cluster can cover
    let mut universe: Vec<usize> = pairs.iter().flat_map(|p| p.cluster.iter().copied()).collect();
    universe.sort_unstable();
    universe.dedup();

    // clusters are ranked by their best pair; seeds use I(X_C)
    let mut seeds: Vec<&Pair> = Vec::new();
    for p in &pairs {
        if !seeds.iter().any(|s| s.cluster == p.cluster) {
            seeds.push(p);
        }
    }
    seeds.sort_by(|a, b| {
        b.cluster_score
            .partial_cmp(&a.cluster_score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.cluster_names.cmp(&b.cluster_names))
    });

    let mut accepted: Vec<CherryCluster> = Vec::new();
    let is_taken = |acc: &[CherryCluster], c: &[usize]| acc.iter().any(|a| a.attrs == c);
    let mut tree_id = 0;

    'trees: while accepted.len() < budget {
        let mut covered: Vec<bool> = vec![false; schema.len()];
        let tree_start = accepted.len();
        loop {
            if accepted.len() >= budget {
                break 'trees;
            }
            let in_tree = &accepted[tree_start..];
            let next = if in_tree.is_empty() {
                None
            } else {
                pairs.iter().find(|p| {
                    !is_taken(&accepted, &p.cluster)
                        && p.cluster.iter().any(|&a| !covered[a])
                        && in_tree.iter().any(|c| p.separator.iter().all(|s| c.attrs.contains(s)))
                })
            };
            let (pick, separator, score) = match next {
                Some(p) => (p, Some(p.separator.clone()), p.score),
                None => {
                    // seed a tree, or a new component when the support
                    // graph is disconnected
                    match seeds.iter().find(|p| {
                        !is_taken(&accepted, &p.cluster) && p.cluster.iter().any(|&a| !covered[a])
                    }) {
                        Some(p) => (*p, None, p.cluster_score),
                        None => break,
                    }
                }
            };
            for &a in &pick.cluster {
                covered[a] = true;
            }
            accepted.push(CherryCluster {
                attrs: pick.cluster.clone(),
                separator,
                score,
                tree_id,
            });
            if universe.iter().all(|&a| covered[a]) {
                break;
            }
        }
        if accepted.len() == tree_start {
            // nothing left to accept
            break;
        }
        tree_id += 1;
    }

    let saturated = accepted.len() < budget;
    if saturated {
        warn!(
            "budget {budget} exceeds the {} distinct supportable clusters",
            accepted.len()
        );
    }

    let mut queries = Vec::new();
    for c in &accepted {
        let found = candidates.queries.iter().find(|q| {
            let mut a = q.attrs.clone();
            a.sort_unstable();
            a == c.attrs
        });
        if let Some(q) = found {
            queries.push(q.clone());
        }
    }
    Ok(PruneOutcome {
        selection: CherrySelection { clusters: accepted },
        aggregates: AggregateSet::new(queries, candidates.population_size)?,
        saturated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregates::compute_aggregate_set;
    use crate::schema::{Attribute, Domain, Relation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random_relation(m: usize, rows: usize, seed: u64) -> Relation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let schema = Arc::new(
            Schema::new(
                (0..m)
                    .map(|i| Attribute {
                        name: format!("a{i}"),
                        domain: Domain::categorical(["0", "1", "2"]),
                    })
                    .collect(),
            )
            .unwrap(),
        );
        // a noisy chain so pairwise information differs
        let data = (0..rows)
            .map(|_| {
                let mut r = vec![rng.random_range(0..3)];
                for i in 1..m {
                    let prev = r[i - 1];
                    let v = if rng.random::<f64>() < 0.3 + 0.1 * i as f64 {
                        rng.random_range(0..3)
                    } else {
                        prev
                    };
                    r.push(v);
                }
                r
            })
            .collect();
        Relation::new(schema, data).unwrap()
    }

    fn all_pairs(m: usize) -> Vec<Vec<usize>> {
        subsets_of_size(&(0..m).collect::<Vec<_>>(), 2)
    }

    #[test]
    fn saturation_keeps_every_candidate() {
        let p = random_relation(4, 500, 1);
        let g = compute_aggregate_set(&p, &all_pairs(4)).unwrap();
        let out = prune_aggregates(&g, &p.schema, 100, 2).unwrap();
        assert!(out.saturated);
        assert_eq!(out.aggregates.len(), 6);
        let mut got: Vec<Vec<usize>> = out.aggregates.queries.iter().map(|q| q.attrs.clone()).collect();
        got.sort();
        assert_eq!(got, all_pairs(4));
    }

    #[test]
    fn budget_one_picks_best_pair() {
        let p = random_relation(4, 500, 2);
        let g = compute_aggregate_set(&p, &all_pairs(4)).unwrap();
        let out = prune_aggregates(&g, &p.schema, 1, 2).unwrap();
        assert_eq!(out.aggregates.len(), 1);
        let best = all_pairs(4)
            .into_iter()
            .max_by(|a, b| {
                crate::aggregates::info_content(&g, a)
                    .unwrap()
                    .partial_cmp(&crate::aggregates::info_content(&g, b).unwrap())
                    .unwrap()
            })
            .unwrap();
        assert_eq!(out.aggregates.queries[0].attrs, best);
    }

    /// Independent re-implementation: repeatedly take the highest-scoring
    /// pair (cluster MI) that touches the current tree and covers a new
    /// attribute, recomputing scores from raw counts.
    fn greedy_oracle(rel: &Relation, budget: usize) -> Vec<Vec<usize>> {
        let m = rel.schema.len();
        let mi = |a: usize, b: usize| -> f64 {
            let n = rel.len() as f64;
            let mut joint = [[0.0f64; 3]; 3];
            for r in &rel.rows {
                joint[r[a]][r[b]] += 1.0;
            }
            let mut total = 0.0;
            for x in 0..3 {
                for y in 0..3 {
                    let pxy = joint[x][y] / n;
                    let px: f64 = joint[x].iter().sum::<f64>() / n;
                    let py: f64 = (0..3).map(|i| joint[i][y]).sum::<f64>() / n;
                    if pxy > 0.0 {
                        total += pxy * (pxy / (px * py)).ln();
                    }
                }
            }
            total
        };
        let mut scored: Vec<(f64, Vec<usize>)> = all_pairs(m).into_iter().map(|p| (mi(p[0], p[1]), p)).collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let mut chosen: Vec<Vec<usize>> = vec![scored[0].1.clone()];
        let mut covered = vec![false; m];
        for &a in &scored[0].1 {
            covered[a] = true;
        }
        while chosen.len() < budget && covered.iter().any(|c| !c) {
            let next = scored
                .iter()
                .find(|(_, p)| covered[p[0]] != covered[p[1]])
                .unwrap()
                .1
                .clone();
            for &a in &next {
                covered[a] = true;
            }
            chosen.push(next);
        }
        chosen
    }

    #[test]
    fn matches_brute_force_greedy_on_five_attributes() {
        let p = random_relation(5, 3000, 3);
        let g = compute_aggregate_set(&p, &all_pairs(5)).unwrap();
        let out = prune_aggregates(&g, &p.schema, 4, 2).unwrap();
        let got: Vec<Vec<usize>> = out.selection.clusters.iter().map(|c| c.attrs.clone()).collect();
        assert_eq!(got, greedy_oracle(&p, 4));
        assert!(out.selection.clusters.iter().all(|c| c.tree_id == 0));
    }

    #[test]
    fn second_tree_avoids_duplicates() {
        let p = random_relation(4, 800, 4);
        let g = compute_aggregate_set(&p, &all_pairs(4)).unwrap();
        let out = prune_aggregates(&g, &p.schema, 5, 2).unwrap();
        assert_eq!(out.selection.clusters.len(), 5);
        assert_eq!(out.selection.tree(0).count(), 3);
        let mut attrs: Vec<_> = out.selection.clusters.iter().map(|c| c.attrs.clone()).collect();
        attrs.sort();
        attrs.dedup();
        assert_eq!(attrs.len(), 5);
        // separators of non-seed clusters lie inside an earlier cluster of the same tree
        for (i, c) in out.selection.clusters.iter().enumerate() {
            if let Some(sep) = &c.separator {
                assert!(out.selection.clusters[..i]
                    .iter()
                    .filter(|d| d.tree_id == c.tree_id)
                    .any(|d| sep.iter().all(|s| d.attrs.contains(s))));
            }
        }
    }

    #[test]
    fn three_way_clusters() {
        let p = random_relation(5, 2000, 5);
        let triples = subsets_of_size(&(0..5).collect::<Vec<_>>(), 3);
        let g = compute_aggregate_set(&p, &triples).unwrap();
        let out = prune_aggregates(&g, &p.schema, 3, 3).unwrap();
        assert_eq!(out.aggregates.len(), 3);
        for c in out.selection.clusters.iter().skip(1) {
            assert_eq!(c.separator.as_ref().map(Vec::len), Some(2));
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let p = random_relation(3, 50, 6);
        let g = compute_aggregate_set(&p, &all_pairs(3)).unwrap();
        assert!(prune_aggregates(&g, &p.schema, 0, 2).is_err());
        assert!(prune_aggregates(&g, &p.schema, 1, 1).is_err());
    }
}
