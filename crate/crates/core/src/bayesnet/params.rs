//! CPT estimation, optionally constrained by the population aggregates.
//!
//! Nodes are solved in topological order. For node `X` and an aggregate over
//! `J ∋ X`, the aggregate is marginalized onto `{X} ∪ (J ∩ anc(X))`; with all
//! ancestors already solved each group becomes a linear constraint on `X`'s
//! table alone:
//!
//! `Σ_k θ[k][x] · Pr(Pa = k, R = r) = c(x, r) / n`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::inference::marginal_from;
use super::{config_index, BayesNet, Cpt, Structure};
use crate::aggregates::AggregateSet;
use crate::error::{Error, Result};
use crate::schema::Relation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamMode {
    SampleOnly,
    Constrained,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamOptions {
    pub mode: ParamMode,
    /// Max constraint residual (probability units) for the outer loop.
    pub outer_tol: f64,
    /// Relative objective change that ends an inner solve.
    pub inner_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Entries below this are set to zero before renormalizing.
    pub clamp: f64,
}

impl Default for ParamOptions {
    fn default() -> Self {
        ParamOptions {
            mode: ParamMode::Constrained,
            outer_tol: 1e-6,
            inner_tol: 1e-8,
            max_outer: 200,
            max_inner: 5000,
            clamp: 1e-10,
        }
    }
}

/// `Σ_k coefficients[k] · θ[k][value] = rhs` on one node's table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorConstraint {
    pub node: usize,
    /// Index of the source aggregate in Γ.
    pub aggregate: usize,
    /// Attributes of the marginalized aggregate: the node, then ancestors
    /// ascending.
    pub keep: Vec<usize>,
    /// Group values in `keep` order.
    pub group: Vec<usize>,
    pub value: usize,
    pub coefficients: Vec<f64>,
    pub rhs: f64,
}

impl FactorConstraint {
    pub fn lhs(&self, table: &[Vec<f64>]) -> f64 {
        self.coefficients.iter().zip(table).map(|(a, row)| a * row[self.value]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDiagnostics {
    pub node: usize,
    pub aggregates: Vec<usize>,
    pub constraints: usize,
    /// Largest `|lhs − rhs|` over the node's constraints after clamping.
    pub max_residual: f64,
    /// The constraints could not all be met; the table minimizes their
    /// squared violation instead.
    pub infeasible: bool,
    pub converged: bool,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    pub mode: ParamMode,
    pub nodes: Vec<NodeDiagnostics>,
}

impl ParamDiagnostics {
    pub fn max_residual(&self) -> f64 {
        self.nodes.iter().map(|d| d.max_residual).fold(0.0, f64::max)
    }

    pub fn infeasible_nodes(&self) -> Vec<usize> {
        self.nodes.iter().filter(|d| d.infeasible).map(|d| d.node).collect()
    }
}

fn sample_counts(sample: &Relation, node: usize, parents: &[usize], cards: &[usize]) -> Vec<Vec<f64>> {
    let configs: usize = parents.iter().map(|&p| cards[p]).product();
    let mut counts = vec![vec![0.0; cards[node]]; configs];
    for row in &sample.rows {
        counts[config_index(parents, row, cards)][row[node]] += 1.0;
    }
    counts
}

fn smoothed(counts: &[Vec<f64>]) -> Vec<Vec<f64>> {
    counts
        .iter()
        .map(|row| {
            let total: f64 = row.iter().sum::<f64>() + row.len() as f64;
            row.iter().map(|&n| (n + 1.0) / total).collect()
        })
        .collect()
}

/// Linear constraints on `node`'s table implied by Γ, using the CPTs of the
/// node's ancestors in `bn`. Aggregates that marginalize to the same
/// attribute set as an earlier one are skipped.
pub fn factor_constraints(bn: &BayesNet, gamma: &AggregateSet, node: usize) -> Result<Vec<FactorConstraint>> {
    let cards = bn.cardinalities();
    let structure = &bn.structure;
    let ancestors = structure.ancestors(node);
    let parents = structure.parents(node);
    let configs: usize = parents.iter().map(|&p| cards[p]).product();
    let mut seen: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut out = Vec::new();
    for (ai, agg) in gamma.queries.iter().enumerate() {
        if !agg.attrs.contains(&node) {
            continue;
        }
        let mut r_attrs: Vec<usize> = agg.attrs.iter().copied().filter(|a| ancestors.contains(a)).collect();
        r_attrs.sort_unstable();
        if !seen.insert(r_attrs.clone()) {
            continue;
        }
        if r_attrs.len() + 1 < agg.attrs.len() {
            log::debug!(
                "aggregate {ai} touches non-ancestors of `{}`; using its marginal",
                bn.schema.name(node)
            );
        }
        let mut keep = vec![node];
        keep.extend(&r_attrs);
        let marg = agg.marginalize(&keep)?;
        let counts: BTreeMap<&[usize], f64> = marg.groups.iter().map(|g| (g.values.as_slice(), g.count)).collect();

        // joint over parents ∪ R, from the (already solved) ancestors
        let mut joint_vars: Vec<usize> = parents.iter().chain(&r_attrs).copied().collect();
        joint_vars.sort_unstable();
        joint_vars.dedup();
        let closure = structure.ancestral_closure(&joint_vars);
        let joint = marginal_from(closure.iter().map(|&v| &bn.cpts[v]), &cards, &joint_vars, &[]);
        let r_cards: Vec<usize> = r_attrs.iter().map(|&a| cards[a]).collect();
        let r_count: usize = r_cards.iter().product();
        // coef[r][k] = Pr(Pa = k, R = r)
        let mut coef = vec![vec![0.0; configs]; r_count];
        let mut row = vec![0; cards.len()];
        let mut assignment = vec![0; joint_vars.len()];
        for idx in 0..joint.values.len() {
            let mut rem = idx;
            for d in (0..joint_vars.len()).rev() {
                assignment[d] = rem % joint.cards[d];
                rem /= joint.cards[d];
            }
            for (&v, &x) in joint_vars.iter().zip(&assignment) {
                row[v] = x;
            }
            let k = config_index(&parents, &row, &cards);
            let r = config_index(&r_attrs, &row, &cards);
            coef[r][k] += joint.values[idx];
        }
        for (r, coefficients) in coef.iter().enumerate() {
            let mut r_vals = vec![0; r_attrs.len()];
            let mut rem = r;
            for d in (0..r_attrs.len()).rev() {
                r_vals[d] = rem % r_cards[d];
                rem /= r_cards[d];
            }
            for x in 0..cards[node] {
                let mut group = vec![x];
                group.extend(&r_vals);
                let c = counts.get(group.as_slice()).copied().unwrap_or(0.0);
                out.push(FactorConstraint {
                    node,
                    aggregate: ai,
                    keep: keep.clone(),
                    group,
                    value: x,
                    coefficients: coefficients.clone(),
                    rhs: c / gamma.population_size,
                });
            }
        }
    }
    Ok(out)
}

/// One node's constrained problem:
/// minimize `−Σ w[k][j] log θ[k][j] / Σ w` over row-stochastic θ with
/// `Σ_k a_c[k] θ[k][x_c] = t_c`.
struct FactorProblem {
    weights: Vec<Vec<f64>>,
    weight_total: f64,
    /// Constraints rescaled to unit largest coefficient.
    constraints: Vec<FactorConstraint>,
    /// Original constraint `i` is `scales[i]` times scaled constraint `i`.
    scales: Vec<f64>,
    /// Entries pinned to zero.
    fixed: Vec<Vec<bool>>,
}

struct SolveOutcome {
    table: Vec<Vec<f64>>,
    converged: bool,
    outer: usize,
    inner: usize,
}

const MAX_PENALTY: f64 = 1e10;

fn residuals(constraints: &[FactorConstraint], targets: &[f64], theta: &[Vec<f64>]) -> Vec<f64> {
    constraints.iter().zip(targets).map(|(c, t)| c.lhs(theta) - t).collect()
}

/// `c ln(c/t) − c + t`, evaluated without cancellation when `c ≈ t`.
fn kl_term(c: f64, t: f64) -> f64 {
    let x = (c - t) / t;
    let h = if x.abs() < 1e-3 {
        x * x * (0.5 - x * (1.0 / 6.0 - x / 12.0))
    } else {
        (1.0 + x) * x.ln_1p() - x
    };
    (t * h).max(0.0)
}

impl FactorProblem {
    fn objective(&self, theta: &[Vec<f64>]) -> f64 {
        let mut f = 0.0;
        for (k, row) in theta.iter().enumerate() {
            for (j, &t) in row.iter().enumerate() {
                if !self.fixed[k][j] {
                    f -= self.weights[k][j] * t.ln();
                }
            }
        }
        f / self.weight_total
    }

    /// `L(cand) − L(theta)` summed from per-term differences, which stays
    /// accurate when the change is far below the magnitude of `L`.
    fn lagrangian_delta(&self, theta: &[Vec<f64>], cand: &[Vec<f64>], targets: &[f64], lambda: &[f64], rho: f64) -> f64 {
        let mut d = 0.0;
        for (k, (row, crow)) in theta.iter().zip(cand).enumerate() {
            for (j, (&t, &c)) in row.iter().zip(crow).enumerate() {
                if !self.fixed[k][j] {
                    d -= self.weights[k][j] * (c / t).ln();
                }
            }
        }
        d /= self.weight_total;
        let r = residuals(&self.constraints, targets, theta);
        for ((con, r), l) in self.constraints.iter().zip(&r).zip(lambda) {
            let dr: f64 = con.coefficients.iter().enumerate().map(|(k, a)| a * (cand[k][con.value] - theta[k][con.value])).sum();
            d += dr * (l + rho * (r + 0.5 * dr));
        }
        d
    }

    fn gradient(&self, theta: &[Vec<f64>], targets: &[f64], lambda: &[f64], rho: f64) -> Vec<Vec<f64>> {
        let mut g: Vec<Vec<f64>> = theta
            .iter()
            .enumerate()
            .map(|(k, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, &t)| if self.fixed[k][j] { 0.0 } else { -self.weights[k][j] / (self.weight_total * t) })
                    .collect()
            })
            .collect();
        let r = residuals(&self.constraints, targets, theta);
        for ((c, r), l) in self.constraints.iter().zip(&r).zip(lambda) {
            let m = l + rho * r;
            for (k, a) in c.coefficients.iter().enumerate() {
                g[k][c.value] += m * a;
            }
        }
        g
    }

    /// Exponentiated-gradient step on every row, in the log domain.
    fn eg_step(&self, theta: &[Vec<f64>], grad: &[Vec<f64>], eta: f64) -> Vec<Vec<f64>> {
        theta
            .iter()
            .zip(grad)
            .enumerate()
            .map(|(k, (row, g))| {
                let logs: Vec<f64> = row
                    .iter()
                    .zip(g)
                    .enumerate()
                    .map(|(j, (&t, &gj))| if self.fixed[k][j] { f64::NEG_INFINITY } else { t.ln() - eta * gj })
                    .collect();
                let mx = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logs.iter().map(|&l| (l - mx).exp()).sum();
                logs.iter().map(|&l| (l - mx).exp() / z).collect()
            })
            .collect()
    }

    fn inner_solve(
        &self,
        theta: &mut Vec<Vec<f64>>,
        targets: &[f64],
        lambda: &[f64],
        rho: f64,
        eta: &mut f64,
        opts: &ParamOptions,
    ) -> usize {
        let mut scale = self.objective(theta).abs().max(1.0);
        for it in 0..opts.max_inner {
            let grad = self.gradient(theta, targets, lambda, rho);
            let mut step = (*eta * 2.0).min(1e6);
            let (next, delta) = loop {
                let cand = self.eg_step(theta, &grad, step);
                let d = self.lagrangian_delta(theta, &cand, targets, lambda, rho);
                // sufficient decrease relative to the KL proximal term
                let lin: f64 = cand
                    .iter()
                    .zip(theta.iter())
                    .zip(&grad)
                    .flat_map(|((c, t), g)| c.iter().zip(t).zip(g).map(|((c, t), g)| g * (c - t)))
                    .sum();
                let kl: f64 = cand
                    .iter()
                    .zip(theta.iter())
                    .flat_map(|(c, t)| c.iter().zip(t).filter(|(_, &t)| t > 0.0).map(|(&c, &t)| kl_term(c, t)))
                    .sum();
                if d.is_finite() && d <= lin + kl / step {
                    break (cand, d);
                }
                step *= 0.5;
                if step < 1e-18 {
                    break (theta.clone(), 0.0);
                }
            };
            *eta = step;
            *theta = next;
            scale = (scale + delta).abs().max(1.0);
            if delta.abs() <= opts.inner_tol * scale {
                return it + 1;
            }
        }
        opts.max_inner
    }

    fn new(weights: Vec<Vec<f64>>, constraints: &[FactorConstraint], fixed: Vec<Vec<bool>>) -> Self {
        let weight_total = weights.iter().flatten().sum();
        let scales: Vec<f64> = constraints
            .iter()
            .map(|c| c.coefficients.iter().fold(0.0f64, |m, a| m.max(a.abs())))
            .map(|s| if s > 0.0 { s } else { 1.0 })
            .collect();
        let constraints = constraints
            .iter()
            .zip(&scales)
            .map(|(c, s)| FactorConstraint {
                coefficients: c.coefficients.iter().map(|a| a / s).collect(),
                rhs: c.rhs / s,
                ..c.clone()
            })
            .collect();
        FactorProblem { weights, weight_total, constraints, scales, fixed }
    }

    /// Largest residual of the original (unscaled) constraints.
    fn original_norm(&self, r: &[f64]) -> f64 {
        r.iter().zip(&self.scales).fold(0.0, |m, (r, s)| m.max((r * s).abs()))
    }

    /// `targets` are right-hand sides of the original constraints.
    fn solve(&self, init: Vec<Vec<f64>>, targets: &[f64], opts: &ParamOptions) -> SolveOutcome {
        let targets: Vec<f64> = targets.iter().zip(&self.scales).map(|(t, s)| t / s).collect();
        let targets = targets.as_slice();
        let mut theta = init;
        let mut lambda = vec![0.0; self.constraints.len()];
        let mut rho = 10.0;
        let mut eta = 1.0;
        let mut inner_total = 0;
        let mut prev = self.original_norm(&residuals(&self.constraints, targets, &theta));
        let mut stalled = 0;
        let mut outers = 0;
        for outer in 0..opts.max_outer {
            outers = outer + 1;
            inner_total += self.inner_solve(&mut theta, targets, &lambda, rho, &mut eta, opts);
            let r = residuals(&self.constraints, targets, &theta);
            let norm = self.original_norm(&r);
            if norm <= opts.outer_tol {
                return SolveOutcome { table: theta, converged: true, outer: outer + 1, inner: inner_total };
            }
            for (l, r) in lambda.iter_mut().zip(&r) {
                *l += rho * r;
            }
            if norm > 0.25 * prev {
                if rho >= MAX_PENALTY {
                    stalled += 1;
                    if stalled >= 3 {
                        break;
                    }
                }
                rho = (rho * 10.0).min(MAX_PENALTY);
            } else {
                stalled = 0;
            }
            prev = norm;
        }
        SolveOutcome { table: theta, converged: false, outer: outers, inner: inner_total }
    }
}

/// Least-squares projection: minimize `½‖Aθ − b‖²` over row-stochastic θ by
/// accelerated projected gradient. Returns `Aθ*`.
fn closest_attainable(constraints: &[FactorConstraint], configs: usize, card: usize, init: &[Vec<f64>]) -> Vec<f64> {
    let b: Vec<f64> = constraints.iter().map(|c| c.rhs).collect();
    let lipschitz: f64 = constraints
        .iter()
        .map(|c| c.coefficients.iter().map(|a| a * a).sum::<f64>())
        .sum::<f64>()
        .max(1e-12);
    let step = 1.0 / lipschitz;
    let mut x = init.to_vec();
    let mut y = x.clone();
    let mut t = 1.0f64;
    for _ in 0..20_000 {
        let r = residuals(constraints, &b, &y);
        let mut grad = vec![vec![0.0; card]; configs];
        for (c, r) in constraints.iter().zip(&r) {
            for (k, a) in c.coefficients.iter().enumerate() {
                grad[k][c.value] += a * r;
            }
        }
        let next: Vec<Vec<f64>> = y
            .iter()
            .zip(&grad)
            .map(|(row, g)| project_simplex(&row.iter().zip(g).map(|(v, g)| v - step * g).collect::<Vec<_>>()))
            .collect();
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let moved: f64 = next
            .iter()
            .zip(&x)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        y = next
            .iter()
            .zip(&x)
            .map(|(n, o)| n.iter().zip(o).map(|(n, o)| n + (t - 1.0) / t_next * (n - o)).collect())
            .collect();
        x = next;
        t = t_next;
        if moved < 1e-14 {
            break;
        }
    }
    constraints.iter().map(|c| c.lhs(&x)).collect()
}

/// Euclidean projection onto the probability simplex.
pub(crate) fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

fn clamp_rows(table: &mut [Vec<f64>], threshold: f64) {
    for row in table.iter_mut() {
        for p in row.iter_mut() {
            if *p < threshold {
                *p = 0.0;
            }
        }
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            for p in row.iter_mut() {
                *p /= s;
            }
        } else {
            let u = 1.0 / row.len() as f64;
            row.iter_mut().for_each(|p| *p = u);
        }
    }
}

/// Entries forced to zero by a zero right-hand side. `None` if that would
/// empty a whole row (the system is then infeasible).
fn forced_zeros(constraints: &[FactorConstraint], configs: usize, card: usize) -> Option<Vec<Vec<bool>>> {
    let mut fixed = vec![vec![false; card]; configs];
    for c in constraints.iter().filter(|c| c.rhs <= 0.0) {
        for (k, &a) in c.coefficients.iter().enumerate() {
            if a > 0.0 {
                fixed[k][c.value] = true;
            }
        }
    }
    fixed.iter().all(|row| row.iter().any(|&f| !f)).then_some(fixed)
}

fn solve_node(
    counts: &[Vec<f64>],
    constraints: &[FactorConstraint],
    is_root: bool,
    opts: &ParamOptions,
) -> (Vec<Vec<f64>>, NodeDiagnostics) {
    let configs = counts.len();
    let card = counts[0].len();
    let mut diag = NodeDiagnostics {
        node: constraints[0].node,
        aggregates: {
            let mut a: Vec<usize> = constraints.iter().map(|c| c.aggregate).collect();
            a.dedup();
            a
        },
        constraints: constraints.len(),
        max_residual: 0.0,
        infeasible: false,
        converged: true,
        outer_iterations: 0,
        inner_iterations: 0,
    };
    let ml = smoothed(counts);

    // a root constrained on its own marginal over the full domain is pinned
    if is_root && constraints.iter().all(|c| c.keep.len() == 1) && constraints.len() == card {
        let total: f64 = constraints.iter().map(|c| c.rhs).sum();
        if (total - 1.0).abs() <= 1e-12 {
            let mut table = vec![vec![0.0; card]];
            for c in constraints {
                table[0][c.value] = c.rhs;
            }
            diag.max_residual = constraints.iter().map(|c| (c.lhs(&table) - c.rhs).abs()).fold(0.0, f64::max);
            return (table, diag);
        }
    }

    let weights: Vec<Vec<f64>> = counts.iter().map(|r| r.iter().map(|n| n + 1.0).collect()).collect();
    let targets: Vec<f64> = constraints.iter().map(|c| c.rhs).collect();

    let attempt = |fixed: Vec<Vec<bool>>, targets: &[f64]| {
        let init: Vec<Vec<f64>> = ml
            .iter()
            .zip(&fixed)
            .map(|(row, f)| {
                let kept: Vec<f64> = row.iter().zip(f).map(|(&p, &f)| if f { 0.0 } else { p }).collect();
                let s: f64 = kept.iter().sum();
                kept.iter().map(|p| p / s).collect()
            })
            .collect();
        let problem = FactorProblem::new(weights.clone(), constraints, fixed);
        problem.solve(init, targets, opts)
    };

    let first = forced_zeros(constraints, configs, card).map(|fixed| attempt(fixed, &targets));
    let outcome = match first {
        Some(o) if o.converged => o,
        first => {
            let attainable = closest_attainable(constraints, configs, card, &ml);
            let gap = attainable.iter().zip(&targets).fold(0.0f64, |m, (a, t)| m.max((a - t).abs()));
            match first {
                Some(o) if gap <= opts.outer_tol => return finish(o, diag, opts, constraints),
                _ => diag.infeasible = true,
            }
            let relaxed: Vec<FactorConstraint> = constraints
                .iter()
                .zip(&attainable)
                .map(|(c, &t)| FactorConstraint { rhs: if t < 1e-15 { 0.0 } else { t }, ..c.clone() })
                .collect();
            let fixed = forced_zeros(&relaxed, configs, card).unwrap_or_else(|| vec![vec![false; card]; configs]);
            let targets: Vec<f64> = relaxed.iter().map(|c| c.rhs).collect();
            attempt(fixed, &targets)
        }
    };
    finish(outcome, diag, opts, constraints)
}

fn finish(
    outcome: SolveOutcome,
    mut diag: NodeDiagnostics,
    opts: &ParamOptions,
    constraints: &[FactorConstraint],
) -> (Vec<Vec<f64>>, NodeDiagnostics) {
    diag.converged = outcome.converged;
    diag.outer_iterations = outcome.outer;
    diag.inner_iterations = outcome.inner;
    let mut table = outcome.table;
    clamp_rows(&mut table, opts.clamp);
    diag.max_residual = constraints.iter().map(|c| (c.lhs(&table) - c.rhs).abs()).fold(0.0, f64::max);
    (table, diag)
}

/// Fill in the CPTs for `structure`. In sample-only mode (or for nodes no
/// aggregate touches) tables are add-one smoothed sample frequencies.
pub fn learn_parameters(
    structure: &Structure,
    sample: &Relation,
    gamma: &AggregateSet,
    opts: &ParamOptions,
) -> Result<(BayesNet, ParamDiagnostics)> {
    let schema = sample.schema.clone();
    if structure.nodes != schema.len() {
        return Err(Error::InvalidInput(format!(
            "structure has {} nodes, schema has {} attributes",
            structure.nodes,
            schema.len()
        )));
    }
    if opts.mode == ParamMode::Constrained {
        gamma.validate_against(&schema)?;
    }
    if !(opts.outer_tol > 0.0 && opts.inner_tol > 0.0) {
        return Err(Error::InvalidInput("solver tolerances must be positive".into()));
    }
    let mut bn = BayesNet::uniform(schema, structure.clone())?;
    let cards = bn.cardinalities();
    let mut diagnostics = ParamDiagnostics { mode: opts.mode, nodes: Vec::new() };
    for v in bn.topological_order() {
        let parents = structure.parents(v);
        let counts = sample_counts(sample, v, &parents, &cards);
        let constraints = match opts.mode {
            ParamMode::Constrained => factor_constraints(&bn, gamma, v)?,
            ParamMode::SampleOnly => Vec::new(),
        };
        let table = if constraints.is_empty() {
            smoothed(&counts)
        } else {
            let (table, diag) = solve_node(&counts, &constraints, parents.is_empty(), opts);
            if diag.infeasible {
                log::warn!(
                    "aggregate constraints on `{}` are inconsistent; residual {:.3e}",
                    bn.schema.name(v),
                    diag.max_residual
                );
            } else if !diag.converged {
                log::warn!("constrained solve for `{}` hit the iteration cap", bn.schema.name(v));
            }
            diagnostics.nodes.push(diag);
            table
        };
        bn.cpts[v] = Cpt { child: v, parents, table };
    }
    diagnostics.nodes.sort_by_key(|d| d.node);
    bn.validate()?;
    Ok((bn, diagnostics))
}
