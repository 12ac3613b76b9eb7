use nalgebra::{DMatrix, DVector};

use super::nnls::nnls;
use super::{sum_normalize, WeightVector};
use crate::aggregates::{build_incidence, AggregateSet};
use crate::error::{Error, Result};
use crate::schema::Relation;

/// The regression `[G·X_S] β = y` with the intercept row appended.
///
/// `design` and `targets` keep every aggregate row (including all-zero ones)
/// followed by the intercept row `[n_S, 0, …, 0]`; `dropped` lists the
/// all-zero rows excluded from the solve.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSystem {
    pub design: DMatrix<f64>,
    pub targets: DVector<f64>,
    pub dropped: Vec<usize>,
    /// Attributes entering the one-hot design, ascending.
    pub covered_attrs: Vec<usize>,
    /// Column offset of each covered attribute's one-hot block (column 0 is
    /// the intercept).
    pub offsets: Vec<usize>,
    pub beta: Option<DVector<f64>>,
}

impl RegressionSystem {
    pub fn columns(&self) -> usize {
        self.design.ncols()
    }

    /// Rows actually solved: nonzero aggregate rows plus the intercept row.
    pub fn reduced(&self) -> (DMatrix<f64>, DVector<f64>) {
        let keep: Vec<usize> = (0..self.design.nrows()).filter(|r| !self.dropped.contains(r)).collect();
        let a = self.design.select_rows(&keep);
        let b = DVector::from_iterator(keep.len(), keep.iter().map(|&r| self.targets[r]));
        (a, b)
    }

    /// One-hot encoding `t^{0/1}` of a row over the covered attributes.
    pub fn encode(&self, row: &[usize]) -> Vec<usize> {
        std::iter::once(0)
            .chain(self.covered_attrs.iter().zip(&self.offsets).map(|(&a, &off)| off + row[a]))
            .collect()
    }
}

pub fn regression_system(sample: &Relation, gamma: &AggregateSet) -> Result<RegressionSystem> {
    let sys = build_incidence(sample, gamma)?;
    let covered_attrs = gamma.covered_attrs();
    let mut offsets = Vec::with_capacity(covered_attrs.len());
    let mut cols = 1;
    for &a in &covered_attrs {
        offsets.push(cols);
        cols += sample.schema.cardinality(a);
    }
    let rows = sys.len() + 1;
    let mut design = DMatrix::<f64>::zeros(rows, cols);
    let mut dropped = Vec::new();
    let mut partial = RegressionSystem {
        design: DMatrix::zeros(0, 0),
        targets: DVector::zeros(0),
        dropped: Vec::new(),
        covered_attrs,
        offsets,
        beta: None,
    };
    for (r, members) in sys.rows.iter().enumerate() {
        if members.is_empty() {
            dropped.push(r);
        }
        for &c in members {
            for j in partial.encode(&sample.rows[c]) {
                design[(r, j)] += 1.0;
            }
        }
    }
    design[(rows - 1, 0)] = sample.len() as f64;
    let mut targets = sys.targets;
    targets.push(sample.len() as f64);
    partial.design = design;
    partial.targets = DVector::from_vec(targets);
    partial.dropped = dropped;
    Ok(partial)
}

/// Weights `w(t) = β · t^{0/1}` from the nonnegative least-squares fit,
/// sum-normalized to `n`.
pub fn linreg_weights(sample: &Relation, gamma: &AggregateSet) -> Result<(WeightVector, RegressionSystem)> {
    if gamma.is_empty() {
        return Err(Error::InvalidInput(
            "regression reweighting needs aggregates; use uniform weights instead".into(),
        ));
    }
    if sample.is_empty() {
        return Err(Error::InvalidInput("regression reweighting needs a nonempty sample".into()));
    }
    let mut system = regression_system(sample, gamma)?;
    let (a, b) = system.reduced();
    let sol = nnls(&a, &b)?;
    let raw: Vec<f64> = sample
        .rows
        .iter()
        .map(|row| system.encode(row).iter().map(|&j| sol.x[j]).sum::<f64>().max(0.0))
        .collect();

    let sys = build_incidence(sample, gamma)?;
    let max_residual = super::max_relative_residual(&sys, &raw);
    let mut weights = raw;
    sum_normalize(&mut weights, gamma.population_size)?;
    system.beta = Some(sol.x);
    Ok((
        WeightVector {
            weights,
            converged: true,
            iterations: sol.iterations,
            max_residual,
            unsatisfiable: system.dropped.clone(),
        },
        system,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregates::fixtures;
    use crate::aggregates::{AggregateQuery, Group};
    use crate::schema::{Attribute, Domain, Schema};
    use std::sync::Arc;

    #[test]
    fn example_system_shape() {
        let sys = regression_system(&fixtures::sample(), &fixtures::gamma()).unwrap();
        // 1 intercept + 2 dates + 3 origins + 3 destinations
        assert_eq!(sys.columns(), 9);
        assert_eq!(sys.design.nrows(), 10);
        let y: Vec<f64> = sys.targets.iter().copied().collect();
        assert_eq!(y, vec![5.0, 5.0, 2.0, 1.0, 1.0, 3.0, 1.0, 1.0, 1.0, 4.0]);
        let last: Vec<f64> = sys.design.row(9).iter().copied().collect();
        assert_eq!(last, vec![4.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        // G·X_S for date = 01 (sample rows 1, 2, 4)
        let first: Vec<f64> = sys.design.row(0).iter().copied().collect();
        assert_eq!(first, vec![3.0, 3.0, 0.0, 2.0, 0.0, 1.0, 2.0, 1.0, 0.0]);
        assert_eq!(sys.dropped, vec![3, 4, 6, 8]);
        let (a, b) = sys.reduced();
        assert_eq!(a.nrows(), 6);
        assert_eq!(b.len(), 6);
    }

    #[test]
    fn example_weights_are_nonnegative_and_normalized() {
        let (w, sys) = linreg_weights(&fixtures::sample(), &fixtures::gamma()).unwrap();
        assert!(w.weights.iter().all(|&x| x >= 0.0));
        assert!((w.total() - 10.0).abs() < 1e-9);
        assert!(sys.beta.unwrap().iter().all(|&b| b >= 0.0));
    }

    /// Grid oracle for the single-attribute case: β = (b0, b1, b2) on a
    /// 0.05 grid over [0, 6]³; weights follow from the minimizer.
    #[test]
    fn unbiased_single_aggregate_gives_uniform_weights() {
        let schema = Arc::new(
            Schema::new(vec![Attribute {
                name: "x".into(),
                domain: Domain::categorical(["a", "b"]),
            }])
            .unwrap(),
        );
        // 3 a's and 2 b's, population 5x larger
        let sample = Relation::new(schema, vec![vec![0], vec![0], vec![0], vec![1], vec![1]]).unwrap();
        let agg = AggregateQuery::new(
            vec![0],
            vec![Group { values: vec![0], count: 15.0 }, Group { values: vec![1], count: 10.0 }],
        )
        .unwrap();
        let gamma = AggregateSet::new(vec![agg], 25.0).unwrap();

        let grid = |i: usize| i as f64 * 0.05;
        let mut best = (f64::INFINITY, [0.0; 3]);
        for i in 0..=120 {
            for j in 0..=120 {
                for k in 0..=120 {
                    let (b0, b1, b2) = (grid(i), grid(j), grid(k));
                    let r = (3.0 * (b0 + b1) - 15.0).powi(2)
                        + (2.0 * (b0 + b2) - 10.0).powi(2)
                        + (5.0 * b0 - 5.0).powi(2);
                    if r < best.0 {
                        best = (r, [b0, b1, b2]);
                    }
                }
            }
        }
        let [b0, b1, b2] = best.1;
        let oracle = [b0 + b1, b0 + b1, b0 + b1, b0 + b2, b0 + b2];
        let total: f64 = oracle.iter().sum();
        let (w, _) = linreg_weights(&sample, &gamma).unwrap();
        for (got, o) in w.weights.iter().zip(oracle) {
            assert!((got - o * 25.0 / total).abs() < 1e-6, "{got} vs {o}");
            assert!((got - 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn residual_no_worse_than_clamped_least_squares() {
        let sys = regression_system(&fixtures::sample(), &fixtures::gamma()).unwrap();
        let (a, b) = sys.reduced();
        let sol = nnls(&a, &b).unwrap();
        let ls = a.clone().svd(true, true).solve(&b, 1e-12).unwrap();
        let clamped = ls.map(|v| v.max(0.0));
        assert!(sol.residual_norm <= (&a * clamped - &b).norm() + 1e-9);
    }

    #[test]
    fn empty_gamma_is_an_error() {
        let g = AggregateSet::new(vec![], 10.0).unwrap();
        assert!(linreg_weights(&fixtures::sample(), &g).is_err());
    }
}
