//! Exact inference by variable elimination.

use super::{BayesNet, Cpt};
use crate::error::{Error, Result};

/// Nonnegative table over a set of variables. `vars` is ascending and
/// `values` is row-major with the last variable fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub vars: Vec<usize>,
    pub cards: Vec<usize>,
    pub values: Vec<f64>,
}

fn strides(cards: &[usize]) -> Vec<usize> {
    let mut s = vec![1; cards.len()];
    for i in (0..cards.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * cards[i + 1];
    }
    s
}

/// Calls `f(output_index, assignment)` for every assignment in row-major
/// order.
fn for_each_assignment(cards: &[usize], mut f: impl FnMut(usize, &[usize])) {
    let total: usize = cards.iter().product();
    let mut a = vec![0; cards.len()];
    for idx in 0..total {
        f(idx, &a);
        for d in (0..cards.len()).rev() {
            a[d] += 1;
            if a[d] < cards[d] {
                break;
            }
            a[d] = 0;
        }
    }
}

impl Factor {
    pub fn scalar(value: f64) -> Self {
        Factor {
            vars: Vec::new(),
            cards: Vec::new(),
            values: vec![value],
        }
    }

    pub fn from_cpt(cpt: &Cpt, cards: &[usize]) -> Self {
        let mut vars = cpt.parents.clone();
        vars.push(cpt.child);
        vars.sort_unstable();
        let fcards: Vec<usize> = vars.iter().map(|&v| cards[v]).collect();
        let mut values = vec![0.0; fcards.iter().product()];
        let mut row = vec![0; cards.len()];
        for_each_assignment(&fcards, |idx, a| {
            for (&v, &x) in vars.iter().zip(a) {
                row[v] = x;
            }
            values[idx] = cpt.prob(&row, cards);
        });
        Factor { vars, cards: fcards, values }
    }

    /// Single-variable 0/1 factor.
    pub fn indicator(var: usize, allowed: &[bool]) -> Self {
        Factor {
            vars: vec![var],
            cards: vec![allowed.len()],
            values: allowed.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Value at an assignment given in `vars` order.
    pub fn get(&self, assignment: &[usize]) -> f64 {
        let s = strides(&self.cards);
        self.values[assignment.iter().zip(&s).map(|(a, s)| a * s).sum::<usize>()]
    }

    fn position(&self, var: usize) -> Option<usize> {
        self.vars.iter().position(|&v| v == var)
    }

    pub fn product(&self, other: &Factor) -> Factor {
        let mut vars: Vec<usize> = self.vars.iter().chain(&other.vars).copied().collect();
        vars.sort_unstable();
        vars.dedup();
        let cards: Vec<usize> = vars
            .iter()
            .map(|&v| {
                self.position(v)
                    .map(|i| self.cards[i])
                    .or_else(|| other.position(v).map(|i| other.cards[i]))
                    .unwrap()
            })
            .collect();
        let map = |f: &Factor| -> Vec<usize> {
            let s = strides(&f.cards);
            vars.iter().map(|&v| f.position(v).map_or(0, |i| s[i])).collect()
        };
        let (sa, sb) = (map(self), map(other));
        let mut values = vec![0.0; cards.iter().product()];
        for_each_assignment(&cards, |idx, a| {
            let ia: usize = a.iter().zip(&sa).map(|(x, s)| x * s).sum();
            let ib: usize = a.iter().zip(&sb).map(|(x, s)| x * s).sum();
            values[idx] = self.values[ia] * other.values[ib];
        });
        Factor { vars, cards, values }
    }

    pub fn sum_out(&self, var: usize) -> Factor {
        let Some(pos) = self.position(var) else {
            return self.clone();
        };
        let mut vars = self.vars.clone();
        let mut cards = self.cards.clone();
        vars.remove(pos);
        cards.remove(pos);
        let s_in = strides(&self.cards);
        let out_strides: Vec<usize> = (0..self.vars.len()).filter(|&i| i != pos).map(|i| s_in[i]).collect();
        let mut values = vec![0.0; cards.iter().product()];
        for_each_assignment(&cards, |idx, a| {
            let base: usize = a.iter().zip(&out_strides).map(|(x, s)| x * s).sum();
            values[idx] = (0..self.cards[pos]).map(|x| self.values[base + x * s_in[pos]]).sum();
        });
        Factor { vars, cards, values }
    }
}

/// Multiply the factors and sum out every variable not in `keep`, choosing
/// at each step the variable whose elimination creates the smallest factor.
pub(crate) fn eliminate(mut factors: Vec<Factor>, keep: &[usize]) -> Factor {
    loop {
        let mut candidates: Vec<usize> = factors
            .iter()
            .flat_map(|f| f.vars.iter().copied())
            .filter(|v| !keep.contains(v))
            .collect();
        candidates.sort_unstable();
        candidates.dedup();
        let best = candidates.into_iter().min_by_key(|&v| {
            let mut vars: Vec<(usize, usize)> = factors
                .iter()
                .filter(|f| f.vars.contains(&v))
                .flat_map(|f| f.vars.iter().copied().zip(f.cards.iter().copied()))
                .collect();
            vars.sort_unstable();
            vars.dedup();
            (vars.iter().map(|&(_, c)| c).product::<usize>(), v)
        });
        let Some(v) = best else { break };
        let (touching, rest): (Vec<Factor>, Vec<Factor>) = factors.into_iter().partition(|f| f.vars.contains(&v));
        let merged = touching
            .into_iter()
            .reduce(|a, b| a.product(&b))
            .expect("candidate variable occurs in a factor");
        factors = rest;
        factors.push(merged.sum_out(v));
    }
    factors
        .into_iter()
        .reduce(|a, b| a.product(&b))
        .unwrap_or_else(|| Factor::scalar(1.0))
}

/// Joint table over `vars` (sorted ascending in the result) from a set of
/// CPTs closed under ancestors, with optional per-variable evidence masks.
pub(crate) fn marginal_from<'a>(
    cpts: impl IntoIterator<Item = &'a Cpt>,
    cards: &[usize],
    vars: &[usize],
    masks: &[(usize, &[bool])],
) -> Factor {
    let mut factors: Vec<Factor> = cpts.into_iter().map(|c| Factor::from_cpt(c, cards)).collect();
    for &(v, allowed) in masks {
        factors.push(Factor::indicator(v, allowed));
    }
    eliminate(factors, vars)
}

fn check_masks(bn: &BayesNet, masks: &[(usize, &[bool])]) -> Result<()> {
    let cards = bn.cardinalities();
    let mut seen = vec![false; cards.len()];
    for &(v, allowed) in masks {
        if v >= cards.len() {
            return Err(Error::InvalidInput(format!("attribute index {v} out of range")));
        }
        if seen[v] {
            return Err(Error::InvalidInput(format!(
                "attribute `{}` constrained twice",
                bn.schema.name(v)
            )));
        }
        seen[v] = true;
        if allowed.len() != cards[v] {
            return Err(Error::InvalidInput(format!(
                "mask for `{}` has {} entries, domain has {}",
                bn.schema.name(v),
                allowed.len(),
                cards[v]
            )));
        }
    }
    Ok(())
}

/// Probability that every listed attribute takes one of its allowed values.
pub fn probability_of(bn: &BayesNet, masks: &[(usize, &[bool])]) -> Result<f64> {
    check_masks(bn, masks)?;
    if masks.is_empty() {
        return Ok(1.0);
    }
    let cards = bn.cardinalities();
    let evidence: Vec<usize> = masks.iter().map(|&(v, _)| v).collect();
    let relevant = bn.structure.ancestral_closure(&evidence);
    let f = marginal_from(relevant.iter().map(|&v| &bn.cpts[v]), &cards, &[], masks);
    Ok(f.total().clamp(0.0, 1.0))
}

/// `Pr(X_a = v, …)` for a partial assignment, by exact marginalization.
pub fn marginal_prob(bn: &BayesNet, partial: &[(usize, usize)]) -> Result<f64> {
    let cards = bn.cardinalities();
    let masks: Vec<(usize, Vec<bool>)> = partial
        .iter()
        .map(|&(a, x)| {
            let c = *cards
                .get(a)
                .ok_or_else(|| Error::InvalidInput(format!("attribute index {a} out of range")))?;
            if x >= c {
                return Err(Error::OutOfDomain {
                    attr: bn.schema.name(a).to_string(),
                    value: x.to_string(),
                });
            }
            Ok((a, (0..c).map(|i| i == x).collect()))
        })
        .collect::<Result<_>>()?;
    let refs: Vec<(usize, &[bool])> = masks.iter().map(|(a, m)| (*a, m.as_slice())).collect();
    probability_of(bn, &refs)
}

/// Product of the CPT entries for a full assignment.
pub fn joint_prob(bn: &BayesNet, assignment: &[usize]) -> f64 {
    let cards = bn.cardinalities();
    bn.cpts.iter().map(|c| c.prob(assignment, &cards)).product()
}

/// Joint distribution over `vars` (sorted ascending in the result).
pub fn marginal_table(bn: &BayesNet, vars: &[usize]) -> Factor {
    let cards = bn.cardinalities();
    let mut sorted = vars.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let relevant = bn.structure.ancestral_closure(&sorted);
    marginal_from(relevant.iter().map(|&v| &bn.cpts[v]), &cards, &sorted, &[])
}
