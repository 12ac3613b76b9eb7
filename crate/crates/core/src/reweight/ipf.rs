use serde::{Deserialize, Serialize};

use super::{max_relative_residual, sum_normalize, WeightVector};
use crate::aggregates::{build_incidence, AggregateSet, IncidenceSystem};
use crate::error::{Error, Result};
use crate::schema::Relation;

/// Floor on the denominator of relative residuals (zero targets).
pub(crate) const RESIDUAL_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IpfOptions {
    /// Maximum number of full sweeps over the constraint rows.
    pub max_iter: usize,
    /// Relative residual tolerance for convergence.
    pub tol: f64,
}

impl Default for IpfOptions {
    fn default() -> Self {
        IpfOptions {
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RowUpdate {
    Unchanged,
    Scaled(f64),
    /// Positive target but no participating weight.
    Unsatisfiable,
}

/// Raking state: weights plus the incidence system they are fitted to.
#[derive(Debug, Clone)]
pub struct IpfState {
    pub system: IncidenceSystem,
    pub weights: Vec<f64>,
    unsatisfiable: Vec<bool>,
}

impl IpfState {
    /// Unit initial weights.
    pub fn new(system: IncidenceSystem) -> Self {
        let n = system.sample_size;
        let rows = system.len();
        IpfState {
            system,
            weights: vec![1.0; n],
            unsatisfiable: vec![false; rows],
        }
    }

    /// Rescale the weights participating in row `j` so that it holds.
    pub fn apply_row(&mut self, j: usize) -> RowUpdate {
        let current = self.system.row_dot(j, &self.weights);
        let target = self.system.targets[j];
        if current == target {
            return RowUpdate::Unchanged;
        }
        if current <= 0.0 {
            if target > 0.0 {
                self.unsatisfiable[j] = true;
                return RowUpdate::Unsatisfiable;
            }
            return RowUpdate::Unchanged;
        }
        let s = target / current;
        for &c in &self.system.rows[j] {
            self.weights[c] *= s;
        }
        RowUpdate::Scaled(s)
    }

    /// One pass over all rows in concatenation order.
    pub fn sweep(&mut self) {
        for j in 0..self.system.len() {
            self.apply_row(j);
        }
    }

    pub fn max_residual(&self) -> f64 {
        max_relative_residual(&self.system, &self.weights)
    }

    pub fn unsatisfiable_rows(&self) -> Vec<usize> {
        (0..self.unsatisfiable.len()).filter(|&j| self.unsatisfiable[j]).collect()
    }
}

/// Iterative proportional fitting of sample weights to the aggregates.
///
/// Converged means every row's relative residual is within `tol` after a
/// full sweep. Rows with a positive target and no participating sample rows
/// can never be met; they are reported in `unsatisfiable` and prevent
/// convergence.
pub fn ipf_weights(sample: &Relation, gamma: &AggregateSet, opts: IpfOptions) -> Result<WeightVector> {
    if sample.is_empty() {
        return Err(Error::InvalidInput("IPF needs a nonempty sample".into()));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidInput("IPF tolerance must be positive".into()));
    }
    let system = build_incidence(sample, gamma)?;
    let mut state = IpfState::new(system);
    let mut converged = false;
    let mut iterations = 0;
    let mut residual = state.max_residual();
    if state.system.is_empty() {
        converged = true;
    }
    while !converged && iterations < opts.max_iter {
        state.sweep();
        iterations += 1;
        residual = state.max_residual();
        converged = residual <= opts.tol;
    }
    let unsatisfiable = state.unsatisfiable_rows();
    if !unsatisfiable.is_empty() && unsatisfiable.len() == state.system.len() {
        log::warn!("IPF: no aggregate row has participating sample rows");
    }
    let mut weights = state.weights;
    sum_normalize(&mut weights, gamma.population_size)?;
    Ok(WeightVector {
        weights,
        converged,
        iterations,
        max_residual: residual,
        unsatisfiable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregates::{compute_aggregate, fixtures, AggregateQuery, Group};
    use crate::schema::{Attribute, Domain, Schema};
    use std::sync::Arc;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn example_trace() {
        let sys = build_incidence(&fixtures::sample(), &fixtures::gamma()).unwrap();
        let mut st = IpfState::new(sys);
        st.apply_row(0);
        assert!(close(&st.weights, &[5.0 / 3.0, 5.0 / 3.0, 1.0, 5.0 / 3.0]));
        st.apply_row(1);
        assert!(close(&st.weights, &[5.0 / 3.0, 5.0 / 3.0, 5.0, 5.0 / 3.0]));
        for j in 2..9 {
            st.apply_row(j);
        }
        assert!(close(&st.weights, &[1.0, 1.0, 3.0, 1.0]));
        assert_eq!(st.unsatisfiable_rows(), vec![3, 4, 6, 8]);
    }

    #[test]
    fn example_does_not_converge() {
        let w = ipf_weights(&fixtures::sample(), &fixtures::gamma(), IpfOptions::default()).unwrap();
        assert!(!w.converged);
        assert_eq!(w.iterations, 100);
        assert!((w.total() - 10.0).abs() < 1e-9);
    }

    fn one_attr_sample(counts: &[usize]) -> Relation {
        let schema = Arc::new(
            Schema::new(vec![Attribute {
                name: "g".into(),
                domain: Domain::categorical((0..counts.len()).map(|i| i.to_string())),
            }])
            .unwrap(),
        );
        let rows = counts
            .iter()
            .enumerate()
            .flat_map(|(g, &c)| std::iter::repeat_n(vec![g], c))
            .collect();
        Relation::new(schema, rows).unwrap()
    }

    #[test]
    fn closed_form_fixpoint_for_one_aggregate() {
        let sample = one_attr_sample(&[4, 1, 5]);
        let targets = [40.0, 30.0, 30.0];
        let agg = AggregateQuery::new(
            vec![0],
            targets.iter().enumerate().map(|(g, &c)| Group { values: vec![g], count: c }).collect(),
        )
        .unwrap();
        let gamma = AggregateSet::new(vec![agg], 100.0).unwrap();
        let w = ipf_weights(&sample, &gamma, IpfOptions::default()).unwrap();
        assert!(w.converged);
        assert_eq!(w.iterations, 1);
        let n_g = [4.0, 1.0, 5.0];
        for (row, wt) in sample.rows.iter().zip(&w.weights) {
            assert!((wt - targets[row[0]] / n_g[row[0]]).abs() < 1e-12);
        }
    }

    #[test]
    fn already_satisfied_after_uniform_scaling() {
        let sample = one_attr_sample(&[2, 3]);
        let pop = one_attr_sample(&[20, 30]);
        let gamma = AggregateSet::new(vec![compute_aggregate(&pop, &[0]).unwrap()], 50.0).unwrap();
        let w = ipf_weights(&sample, &gamma, IpfOptions::default()).unwrap();
        assert!(w.converged);
        assert_eq!(w.iterations, 1);
        assert!(w.weights.iter().all(|&x| (x - 10.0).abs() < 1e-12));
    }

    #[test]
    fn every_row_holds_right_after_its_update() {
        let sys = build_incidence(&fixtures::sample(), &fixtures::gamma()).unwrap();
        let mut st = IpfState::new(sys);
        for _ in 0..3 {
            for j in 0..st.system.len() {
                if let RowUpdate::Scaled(_) | RowUpdate::Unchanged = st.apply_row(j) {
                    let got = st.system.row_dot(j, &st.weights);
                    let y = st.system.targets[j];
                    if !st.system.rows[j].is_empty() {
                        assert!((got - y).abs() <= 1e-12 * y.max(1.0));
                    }
                }
            }
        }
    }

    #[test]
    fn zero_target_zeroes_participants() {
        let sample = one_attr_sample(&[2, 3]);
        let agg = AggregateQuery::new(
            vec![0],
            vec![Group { values: vec![0], count: 0.0 }, Group { values: vec![1], count: 6.0 }],
        )
        .unwrap();
        let gamma = AggregateSet::new(vec![agg], 6.0).unwrap();
        let w = ipf_weights(&sample, &gamma, IpfOptions::default()).unwrap();
        assert!(w.converged);
        assert_eq!(&w.weights[..2], &[0.0, 0.0]);
        assert!(w.weights.iter().all(|&x| x >= 0.0));
    }
}
