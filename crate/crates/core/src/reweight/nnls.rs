//! Lawson–Hanson active-set solver for `min ‖Ax − b‖₂ s.t. x ≥ 0`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NnlsSolution {
    pub x: DVector<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Dual-feasibility tolerance, relative to `max(1, ‖Aᵀb‖∞)`.
pub const DUAL_TOLERANCE: f64 = 1e-10;

fn solve_passive(a: &DMatrix<f64>, b: &DVector<f64>, passive: &[usize]) -> Result<DVector<f64>> {
    let n = a.ncols();
    let sub = a.select_columns(passive);
    let svd = sub.svd(true, true);
    let eps = 1e-12 * svd.singular_values.max().max(1.0);
    let z = svd
        .solve(b, eps)
        .map_err(|e| Error::Solver(format!("least squares subproblem: {e}")))?;
    let mut full = DVector::zeros(n);
    for (i, &j) in passive.iter().enumerate() {
        full[j] = z[i];
    }
    Ok(full)
}

pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<NnlsSolution> {
    let (m, n) = a.shape();
    if b.len() != m {
        return Err(Error::InvalidInput(format!(
            "nnls: matrix has {m} rows but target has {}",
            b.len()
        )));
    }
    let mut x = DVector::<f64>::zeros(n);
    if n == 0 {
        return Ok(NnlsSolution {
            residual_norm: b.norm(),
            x,
            iterations: 0,
        });
    }
    let atb = a.transpose() * b;
    let tol = DUAL_TOLERANCE * atb.amax().max(1.0);
    let mut passive: Vec<usize> = Vec::new();
    let mut in_passive = vec![false; n];
    let max_iter = 3 * n.max(10);
    let mut iterations = 0;

    loop {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n)
            .filter(|&j| !in_passive[j])
            .max_by(|&i, &j| w[i].partial_cmp(&w[j]).unwrap_or(std::cmp::Ordering::Equal));
        let Some(t) = candidate else { break };
        if w[t] <= tol {
            break;
        }
        iterations += 1;
        if iterations > max_iter {
            return Err(Error::Solver(format!(
                "nnls did not converge in {max_iter} iterations"
            )));
        }
        passive.push(t);
        in_passive[t] = true;

        let mut inner = 0;
        loop {
            let z = solve_passive(a, b, &passive)?;
            if passive.iter().all(|&j| z[j] > 0.0) {
                x = z;
                break;
            }
            inner += 1;
            if inner > 3 * n {
                return Err(Error::Solver("nnls inner loop did not terminate".into()));
            }
            let alpha = passive
                .iter()
                .filter(|&&j| z[j] <= 0.0)
                .map(|&j| x[j] / (x[j] - z[j]))
                .fold(f64::INFINITY, f64::min);
            x += (z - &x) * alpha;
            passive.retain(|&j| {
                let keep = x[j] > 1e-14;
                if !keep {
                    in_passive[j] = false;
                    x[j] = 0.0;
                }
                keep
            });
            if passive.is_empty() {
                break;
            }
        }
    }
    let residual_norm = (a * &x - b).norm();
    Ok(NnlsSolution {
        x,
        residual_norm,
        iterations,
    })
}
