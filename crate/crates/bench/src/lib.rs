//! Fixtures shared by the solver benchmarks.

use owqp_core::bayesnet::forward_sample;
use owqp_core::bench::{generate_biased_sample, synthetic_network, BiasSpec, NetworkSpec};
use owqp_core::{compute_aggregate_set, AggregateSet, BayesNet, Relation};

/// A population drawn from a random network, a biased sample of it and
/// every one- and two-attribute aggregate.
pub struct Fixture {
    pub truth: BayesNet,
    pub population: Relation,
    pub sample: Relation,
    pub gamma: AggregateSet,
}

impl Fixture {
    pub fn new(cardinalities: Vec<usize>, rows: usize, seed: u64) -> Fixture {
        let m = cardinalities.len();
        let truth = synthetic_network(&NetworkSpec { cardinalities, max_parents: 1, alpha: 2.0, seed }).expect("network");
        let population = forward_sample(&truth, rows, seed).expect("population");
        let modal = {
            let mut counts = vec![0usize; population.schema.cardinality(0)];
            population.rows.iter().for_each(|r| counts[r[0]] += 1);
            (0..counts.len()).max_by_key(|&v| counts[v]).unwrap_or(0)
        };
        let bias = BiasSpec {
            attr: population.schema.name(0).to_string(),
            values: vec![population.schema.label(0, modal).to_string()],
            sample_rate: 0.1,
            bias_percent: 0.9,
            seed,
        };
        let sample = generate_biased_sample(&population, &bias).expect("sample");
        let mut sets: Vec<Vec<usize>> = (0..m).map(|a| vec![a]).collect();
        for a in 0..m {
            for b in a + 1..m {
                sets.push(vec![a, b]);
            }
        }
        let gamma = compute_aggregate_set(&population, &sets).expect("aggregates");
        Fixture { truth, population, sample, gamma }
    }
}
