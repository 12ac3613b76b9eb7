//! Per-tuple sample weights: uniform scaling, constrained regression and
//! iterative proportional fitting.

mod ipf;
mod linreg;
pub mod nnls;

pub use ipf::{ipf_weights, IpfOptions, IpfState, RowUpdate};
pub use linreg::{linreg_weights, regression_system, RegressionSystem};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One nonnegative weight per sample row plus solver diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Largest relative constraint violation at termination, measured before
    /// sum-normalization.
    pub max_residual: f64,
    /// Constraint rows that no sample row participates in.
    #[serde(default)]
    pub unsatisfiable: Vec<usize>,
}

impl WeightVector {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Every tuple represents `n / n_S` population tuples.
pub fn uniform_weights(sample_size: usize, population_size: f64) -> Result<WeightVector> {
    if sample_size == 0 {
        return Err(Error::InvalidInput("uniform weights need a nonempty sample".into()));
    }
    if !(population_size > 0.0) {
        return Err(Error::InvalidInput("population size must be positive".into()));
    }
    Ok(WeightVector {
        weights: vec![population_size / sample_size as f64; sample_size],
        converged: true,
        iterations: 0,
        max_residual: 0.0,
        unsatisfiable: Vec::new(),
    })
}

/// Scale weights in place so they sum to `n`.
pub(crate) fn sum_normalize(weights: &mut [f64], population_size: f64) -> Result<()> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Solver(format!(
            "cannot normalize weights with total {total}"
        )));
    }
    let scale = population_size / total;
    for w in weights.iter_mut() {
        *w *= scale;
    }
    Ok(())
}

/// Largest `|G[j]·w − y[j]| / max(y[j], ε)` over the rows of an incidence
/// system.
pub fn max_relative_residual(sys: &crate::aggregates::IncidenceSystem, weights: &[f64]) -> f64 {
    (0..sys.len())
        .map(|j| (sys.row_dot(j, weights) - sys.targets[j]).abs() / sys.targets[j].max(ipf::RESIDUAL_GUARD))
        .fold(0.0, f64::max)
}
