use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::BayesNet;
use crate::error::{Error, Result};
use crate::schema::Relation;

/// Seed for the `k`-th of several independent replicas.
pub fn replica_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn draw(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (j, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // rounding: fall back to the last value with positive mass
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

/// Ancestral sampling: each row is drawn parents-first from the CPTs using
/// a ChaCha8 stream seeded with `seed`.
pub fn forward_sample(bn: &BayesNet, size: usize, seed: u64) -> Result<Relation> {
    if size == 0 {
        return Err(Error::InvalidInput("sample size must be at least 1".into()));
    }
    let order = bn.topological_order();
    let cards = bn.cardinalities();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(size);
    for _ in 0..size {
        let mut row = vec![0; cards.len()];
        for &v in &order {
            let cpt = &bn.cpts[v];
            let k = cpt.config_index(&row, &cards);
            row[v] = draw(&cpt.table[k], rng.random::<f64>());
        }
        rows.push(row);
    }
    Relation::new(bn.schema.clone(), rows)
}

#[cfg(test)]
mod tests {
    use super::super::testnets::random_net;
    use super::super::{marginal_prob, BayesNet, Cpt, Edge, Structure};
    use super::*;

    #[test]
    fn point_mass_rows_identical() {
        let schema = super::super::testnets::schema(&[3, 2]);
        let s = Structure {
            nodes: 2,
            edges: vec![Edge { parent: 0, child: 1, locked: false }],
        };
        let cpts = vec![
            Cpt { child: 0, parents: vec![], table: vec![vec![0.0, 0.0, 1.0]] },
            Cpt { child: 1, parents: vec![0], table: vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]] },
        ];
        let bn = BayesNet::new(schema, s, cpts).unwrap();
        let r = forward_sample(&bn, 50, 1).unwrap();
        assert!(r.rows.iter().all(|row| row == &vec![2, 1]));
    }

    #[test]
    fn deterministic_given_seed() {
        let bn = random_net(&[3, 3, 2], 1, 8);
        assert_eq!(forward_sample(&bn, 200, 42).unwrap(), forward_sample(&bn, 200, 42).unwrap());
        assert_ne!(forward_sample(&bn, 200, 42).unwrap(), forward_sample(&bn, 200, 43).unwrap());
    }

    #[test]
    fn empirical_marginals_within_four_standard_errors() {
        let bn = random_net(&[3, 4, 2, 3], 2, 12);
        let size = 100_000;
        let s = forward_sample(&bn, size, 7).unwrap();
        for a in 0..4 {
            for v in 0..bn.cardinalities()[a] {
                let p = marginal_prob(&bn, &[(a, v)]).unwrap();
                let freq = s.rows.iter().filter(|r| r[a] == v).count() as f64 / size as f64;
                let se = (p * (1.0 - p) / size as f64).sqrt();
                assert!((freq - p).abs() <= 4.0 * se, "attr {a} value {v}: {freq} vs {p}");
            }
        }
    }

    #[test]
    fn replica_seeds_distinct() {
        let seeds: std::collections::BTreeSet<u64> = (0..10).map(|k| replica_seed(5, k)).collect();
        assert_eq!(seeds.len(), 10);
        assert_eq!(replica_seed(5, 0), 5);
    }
}
