//! Cross-module invariants over random small relations.

use std::collections::BTreeSet;

use proptest::prelude::*;

use owqp_core::aggregates::{build_incidence, compute_aggregate_set, info_content, AggregateSet};
use owqp_core::bayesnet::{learn_parameters, learn_structure, marginal_prob, ParamMode, ParamOptions, StructureOptions};
use owqp_core::bench::{generate_biased_sample, percent_difference, synthetic_schema, BiasSpec};
use owqp_core::reweight::{ipf_weights, linreg_weights, uniform_weights, IpfOptions, IpfState, RowUpdate};
use owqp_core::{bn_point, exec_weighted, AggFn, HybridModel, Provenance, Query, QueryAnswer, Relation};

/// Cardinalities and rows of a random relation.
fn relation() -> impl Strategy<Value = Relation> {
    proptest::collection::vec(2usize..=3, 2..=4).prop_flat_map(|cards| {
        let row = cards.iter().map(|&c| 0..c).collect::<Vec<_>>();
        proptest::collection::vec(row, 20..120).prop_map(move |rows| Relation::new(synthetic_schema(&cards), rows).unwrap())
    })
}

/// A relation, a nonempty subset of its rows, and aggregates on every single
/// attribute plus the first pair.
fn instance() -> impl Strategy<Value = (Relation, Relation, AggregateSet)> {
    relation().prop_flat_map(|population| {
        let n = population.len();
        proptest::collection::btree_set(0..n, 1..=n.min(30)).prop_map(move |picked: BTreeSet<usize>| {
            let rows = picked.iter().map(|&i| population.rows[i].clone()).collect();
            let sample = Relation::new(population.schema.clone(), rows).unwrap();
            let mut sets: Vec<Vec<usize>> = (0..population.schema.len()).map(|a| vec![a]).collect();
            sets.push(vec![0, 1]);
            let gamma = compute_aggregate_set(&population, &sets).unwrap();
            (population.clone(), sample, gamma)
        })
    })
}

fn distinct(rel: &Relation) -> Relation {
    let rows: BTreeSet<Vec<usize>> = rel.rows.iter().cloned().collect();
    Relation::new(rel.schema.clone(), rows.into_iter().collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn weights_are_nonnegative_and_sum_to_n((population, sample, gamma) in instance()) {
        let n = population.len() as f64;
        let ipf = ipf_weights(&sample, &gamma, IpfOptions::default()).unwrap();
        let (linreg, _) = linreg_weights(&sample, &gamma).unwrap();
        let uniform = uniform_weights(sample.len(), n).unwrap();
        for w in [ipf, linreg, uniform] {
            prop_assert_eq!(w.len(), sample.len());
            prop_assert!(w.weights.iter().all(|&x| x >= 0.0 && x.is_finite()));
            prop_assert!((w.total() - n).abs() <= 1e-9 * n, "total {}", w.total());
        }
    }

    #[test]
    fn ipf_row_holds_right_after_its_update((_p, sample, gamma) in instance()) {
        let mut state = IpfState::new(build_incidence(&sample, &gamma).unwrap());
        for _ in 0..3 {
            for j in 0..state.system.len() {
                if let RowUpdate::Scaled(_) = state.apply_row(j) {
                    let target = state.system.targets[j];
                    let got = state.system.row_dot(j, &state.weights);
                    prop_assert!((got - target).abs() <= 1e-12 * target.max(1.0), "row {j}: {got} vs {target}");
                }
            }
        }
    }

    #[test]
    fn ipf_rerun_from_converged_weights_is_stable(population in relation()) {
        // one copy of every distinct tuple makes the aggregates attainable
        let sample = distinct(&population);
        let sets: Vec<Vec<usize>> = (0..population.schema.len()).map(|a| vec![a]).chain([vec![0, 1]]).collect();
        let gamma = compute_aggregate_set(&population, &sets).unwrap();
        let tol = 1e-8;
        let w = ipf_weights(&sample, &gamma, IpfOptions { max_iter: 20_000, tol }).unwrap();
        prop_assume!(w.converged);
        let mut state = IpfState::new(build_incidence(&sample, &gamma).unwrap());
        state.weights = w.weights.clone();
        state.sweep();
        for (a, b) in w.weights.iter().zip(&state.weights) {
            prop_assert!((a - b).abs() <= 2.0 * tol * a.max(1.0), "{a} -> {b}");
        }
    }

    #[test]
    fn info_content_is_nonnegative((_p, _s, gamma) in instance()) {
        for q in &gamma.queries {
            prop_assert!(info_content(&gamma, &q.attrs).unwrap() >= -1e-12);
        }
        prop_assert!(info_content(&gamma, &[0, 1]).unwrap() >= -1e-12);
    }

    #[test]
    fn percent_difference_is_bounded(a in 0.0f64..1e6, b in 0.0f64..1e6) {
        let d = percent_difference(a, b);
        prop_assert!((0.0..=2.0).contains(&d));
        prop_assert_eq!(d, percent_difference(b, a));
    }

    #[test]
    fn biased_sample_has_exact_composition(population in relation(), rate in 0.05f64..0.3, bias in 0.0f64..=1.0, seed in 0u64..1000) {
        let size = (rate * population.len() as f64).round() as usize;
        let want = (bias * size as f64).round() as usize;
        let available = population.rows.iter().filter(|r| r[0] == 0).count();
        prop_assume!(want <= available && size - want <= population.len() - available);
        let spec = BiasSpec { attr: "a0".into(), values: vec!["0".into()], sample_rate: rate, bias_percent: bias, seed };
        let sample = generate_biased_sample(&population, &spec).unwrap();
        prop_assert_eq!(sample.len(), size);
        prop_assert_eq!(sample.rows.iter().filter(|r| r[0] == 0).count(), want);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn learned_networks_are_valid_and_conserve_aggregates((population, sample, gamma) in instance()) {
        let n = population.len() as f64;
        let structure = learn_structure(&sample, &gamma, StructureOptions { max_parents: 1 }).unwrap();
        prop_assert!(structure.is_acyclic());
        prop_assert!(structure.max_in_degree() <= 1);
        let opts = ParamOptions { mode: ParamMode::Constrained, ..ParamOptions::default() };
        let (bn, diag) = learn_parameters(&structure, &sample, &gamma, &opts).unwrap();
        for cpt in &bn.cpts {
            for row in &cpt.table {
                prop_assert!(row.iter().all(|&p| p >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            }
        }
        for node in diag.nodes.iter().filter(|d| !d.infeasible) {
            for &ai in &node.aggregates {
                for g in &gamma.queries[ai].groups {
                    let assignment: Vec<(usize, usize)> = gamma.queries[ai].attrs.iter().copied().zip(g.values.iter().copied()).collect();
                    let implied = n * marginal_prob(&bn, &assignment).unwrap();
                    prop_assert!((implied - g.count).abs() <= 1e-4 * n, "{assignment:?}: {implied} vs {}", g.count);
                }
            }
        }
    }

    #[test]
    fn hybrid_answers_route_exactly((population, sample, gamma) in instance(), picks in proptest::collection::vec((0usize..4, 0usize..3), 1..4)) {
        let n = population.len() as f64;
        let schema = sample.schema.clone();
        let structure = learn_structure(&sample, &gamma, StructureOptions::default()).unwrap();
        let opts = ParamOptions { mode: ParamMode::Constrained, ..ParamOptions::default() };
        let (bn, _) = learn_parameters(&structure, &sample, &gamma, &opts).unwrap();
        let weights = ipf_weights(&sample, &gamma, IpfOptions::default()).unwrap();
        let model = HybridModel { sample, weights, bn: Some(bn), population_size: n, k_replicas: 3, seed: 5 };

        let mut assignment: Vec<(usize, usize)> = picks
            .iter()
            .map(|&(a, v)| (a % schema.len(), v))
            .filter(|&(a, v)| v < schema.cardinality(a))
            .collect();
        assignment.sort_unstable();
        assignment.dedup_by_key(|p| p.0);
        prop_assume!(!assignment.is_empty());
        let q = Query::point(&schema, &assignment).unwrap();
        let matched = model.sample.rows.iter().any(|r| q.matches(r));
        match model.answer_point(&q).unwrap() {
            QueryAnswer::Point { estimate, provenance } => {
                if matched {
                    prop_assert_eq!(provenance, Provenance::Sample);
                    let direct = exec_weighted(&model.sample, &model.weights.weights, &q).unwrap().point().unwrap();
                    prop_assert_eq!(estimate.to_bits(), direct.to_bits());
                } else {
                    prop_assert_eq!(provenance, Provenance::Bn);
                    let routed = bn_point(model.bn.as_ref().unwrap(), &q, n).unwrap().point().unwrap();
                    prop_assert_eq!(estimate.to_bits(), routed.to_bits());
                    let direct = n * marginal_prob(model.bn.as_ref().unwrap(), &assignment).unwrap();
                    prop_assert!((estimate - direct).abs() <= 1e-12 * n.max(1.0));
                }
            }
            other => prop_assert!(false, "unexpected {other:?}"),
        }

        let g = Query::group_by(&schema, vec![assignment[0].0], AggFn::Count, vec![]).unwrap();
        let from_sample = exec_weighted(&model.sample, &model.weights.weights, &g).unwrap();
        let hybrid = model.answer_groupby(&g).unwrap();
        for s in from_sample.groups() {
            let h = hybrid.groups().iter().find(|h| h.values == s.values);
            prop_assert!(h.is_some());
            prop_assert_eq!(h.unwrap().estimate.to_bits(), s.estimate.to_bits());
        }
    }
}
