//! Exact posteriors by variable elimination.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::format::sig17;
use crate::generator::{GroundNetwork, NodeId};
use crate::kb::{Term, ValueRange};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error("the evidence has probability zero")]
    ZeroEvidence,
    #[error("`{0}` is not in scope")]
    UnknownTerm(Term),
    #[error("`{value}` is not a value of `{term}`")]
    ValueOutOfRange { term: Term, value: String },
    #[error("invalid elimination order: {0}")]
    InvalidOrder(String),
    #[error("malformed factor: {0}")]
    Malformed(String),
}

/// A ground term together with its value range.
#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub term: Term,
    pub range: Arc<ValueRange>,
}

/// Non-negative weights over the joint values of its scope; the last
/// variable varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    scope: Vec<Variable>,
    table: Vec<f64>,
}

impl Factor {
    pub fn new(scope: Vec<Variable>, table: Vec<f64>) -> Result<Factor, InferenceError> {
        let expected: usize = scope.iter().map(|v| v.range.len()).product();
        if table.len() != expected {
            return Err(InferenceError::Malformed(format!(
                "{} entries for a scope of size {expected}",
                table.len()
            )));
        }
        if let Some(x) = table.iter().find(|x| x.is_nan() || **x < 0.0) {
            return Err(InferenceError::Malformed(format!(
                "negative or NaN weight {x}"
            )));
        }
        for (i, v) in scope.iter().enumerate() {
            if scope[..i].iter().any(|w| w.term == v.term) {
                return Err(InferenceError::Malformed(format!(
                    "`{}` appears twice in scope",
                    v.term
                )));
            }
        }
        Ok(Factor { scope, table })
    }

    pub fn scalar(x: f64) -> Factor {
        Factor {
            scope: Vec::new(),
            table: vec![x],
        }
    }

    pub fn ones(scope: Vec<Variable>) -> Factor {
        let len = scope.iter().map(|v| v.range.len()).product();
        Factor {
            scope,
            table: vec![1.0; len],
        }
    }

    /// The CPT of a node as a factor over its distinct parents (in order of
    /// first appearance) followed by the node. A parent listed twice reads
    /// the CPT rows where both positions hold the same value.
    pub fn from_node(net: &GroundNetwork, id: NodeId) -> Factor {
        let mut vars: Vec<NodeId> = Vec::new();
        for &p in net.parents(id) {
            if !vars.contains(&p) {
                vars.push(p);
            }
        }
        vars.push(id);
        let scope: Vec<Variable> = vars
            .iter()
            .map(|&v| Variable {
                term: net.term(v).clone(),
                range: net.range(v).clone(),
            })
            .collect();
        let positions: Vec<usize> = net
            .parents(id)
            .iter()
            .map(|p| vars.iter().position(|v| v == p).expect("listed"))
            .collect();
        let cpt = &net.node(id).cpt;
        let sizes: Vec<usize> = scope.iter().map(|v| v.range.len()).collect();
        let child = vars.len() - 1;
        let mut table = Vec::with_capacity(sizes.iter().product());
        let mut values = vec![0usize; sizes.len()];
        let mut parent_values = vec![0usize; positions.len()];
        loop {
            for (slot, &pos) in parent_values.iter_mut().zip(&positions) {
                *slot = values[pos];
            }
            table.push(cpt.prob(&parent_values, values[child]));
            if !advance(&mut values, &sizes) {
                break;
            }
        }
        Factor { scope, table }
    }

    pub fn scope(&self) -> &[Variable] {
        &self.scope
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn contains(&self, t: &Term) -> bool {
        self.position(t).is_some()
    }

    fn position(&self, t: &Term) -> Option<usize> {
        self.scope.iter().position(|v| &v.term == t)
    }

    fn sizes(&self) -> Vec<usize> {
        self.scope.iter().map(|v| v.range.len()).collect()
    }

    /// Weight at the given value indices, one per scope variable.
    pub fn at(&self, values: &[usize]) -> f64 {
        let mut k = 0;
        for (v, var) in values.iter().zip(&self.scope) {
            k = k * var.range.len() + v;
        }
        self.table[k]
    }

    /// Keeps the entries where `t` takes value `v` and drops `t` from scope.
    pub fn restrict(&self, t: &Term, v: &str) -> Result<Factor, InferenceError> {
        let pos = self
            .position(t)
            .ok_or_else(|| InferenceError::UnknownTerm(t.clone()))?;
        let idx =
            self.scope[pos]
                .range
                .index_of(v)
                .ok_or_else(|| InferenceError::ValueOutOfRange {
                    term: t.clone(),
                    value: v.to_string(),
                })?;
        Ok(self.restrict_at(pos, idx))
    }

    fn restrict_at(&self, pos: usize, idx: usize) -> Factor {
        let sizes = self.sizes();
        let inner: usize = sizes[pos + 1..].iter().product();
        let outer: usize = sizes[..pos].iter().product();
        let mut table = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let base = (o * sizes[pos] + idx) * inner;
            table.extend_from_slice(&self.table[base..base + inner]);
        }
        let mut scope = self.scope.clone();
        scope.remove(pos);
        Factor { scope, table }
    }

    /// Pointwise product over the union of both scopes: this factor's
    /// variables first, then the other's new ones.
    pub fn multiply(&self, other: &Factor) -> Factor {
        let mut scope = self.scope.clone();
        for v in &other.scope {
            if !scope.iter().any(|w| w.term == v.term) {
                scope.push(v.clone());
            }
        }
        let sizes: Vec<usize> = scope.iter().map(|v| v.range.len()).collect();
        let strides = |f: &Factor| -> Vec<usize> {
            let fs = f.sizes();
            let mut own = vec![0usize; fs.len()];
            let mut acc = 1;
            for i in (0..fs.len()).rev() {
                own[i] = acc;
                acc *= fs[i];
            }
            scope
                .iter()
                .map(|v| f.position(&v.term).map_or(0, |p| own[p]))
                .collect()
        };
        let (sa, sb) = (strides(self), strides(other));
        let len: usize = sizes.iter().product();
        let mut table = Vec::with_capacity(len);
        let mut values = vec![0usize; sizes.len()];
        let (mut ia, mut ib) = (0usize, 0usize);
        for _ in 0..len {
            table.push(self.table[ia] * other.table[ib]);
            // odometer step, keeping both flat indices in sync
            for i in (0..values.len()).rev() {
                values[i] += 1;
                ia += sa[i];
                ib += sb[i];
                if values[i] < sizes[i] {
                    break;
                }
                ia -= sa[i] * sizes[i];
                ib -= sb[i] * sizes[i];
                values[i] = 0;
            }
        }
        Factor { scope, table }
    }

    /// Removes `t` by summing over its values.
    pub fn sum_out(&self, t: &Term) -> Result<Factor, InferenceError> {
        let pos = self
            .position(t)
            .ok_or_else(|| InferenceError::UnknownTerm(t.clone()))?;
        let sizes = self.sizes();
        let inner: usize = sizes[pos + 1..].iter().product();
        let outer: usize = sizes[..pos].iter().product();
        let mut table = vec![0.0; outer * inner];
        for o in 0..outer {
            for v in 0..sizes[pos] {
                let base = (o * sizes[pos] + v) * inner;
                for i in 0..inner {
                    table[o * inner + i] += self.table[base + i];
                }
            }
        }
        let mut scope = self.scope.clone();
        scope.remove(pos);
        Ok(Factor { scope, table })
    }

    pub fn total(&self) -> f64 {
        self.table.iter().sum()
    }
}

fn advance(values: &mut [usize], sizes: &[usize]) -> bool {
    for i in (0..values.len()).rev() {
        values[i] += 1;
        if values[i] < sizes[i] {
            return true;
        }
        values[i] = 0;
    }
    false
}

/// How to choose the next variable to eliminate.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum EliminationOrder {
    /// Fewest neighbours in the current interaction graph, ties by name.
    #[default]
    MinDegree,
    /// Greatest term name first.
    ReverseLexicographic,
    /// Exactly these terms, which must be the hidden nodes.
    Explicit(Vec<Term>),
}

/// `P(query | evidence)` together with `P(evidence)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub query: Term,
    pub range: Arc<ValueRange>,
    pub probs: Vec<f64>,
    pub evidence_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorRecord {
    pub query: String,
    pub distribution: Vec<ValueProbability>,
    pub evidence_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueProbability {
    pub value: String,
    pub probability: f64,
}

impl Posterior {
    pub fn prob(&self, value: &str) -> Option<f64> {
        self.range.index_of(value).map(|i| self.probs[i])
    }

    /// One `value: probability` line per value, then `P(E)`.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for (v, p) in self.range.values().iter().zip(&self.probs) {
            out.push_str(&format!("{v}: {}\n", sig17(*p)));
        }
        out.push_str(&format!("P(E): {}\n", sig17(self.evidence_probability)));
        out
    }

    pub fn record(&self) -> PosteriorRecord {
        PosteriorRecord {
            query: self.query.to_string(),
            distribution: self
                .range
                .values()
                .iter()
                .zip(&self.probs)
                .map(|(v, &p)| ValueProbability {
                    value: v.clone(),
                    probability: p,
                })
                .collect(),
            evidence_probability: self.evidence_probability,
        }
    }
}

pub fn variable_elimination(net: &GroundNetwork) -> Result<Posterior, InferenceError> {
    variable_elimination_with(net, &EliminationOrder::MinDegree)
}

/// Restricts every CPT factor to the evidence, eliminates the hidden nodes
/// in the chosen order, and normalizes what remains over the query.
pub fn variable_elimination_with(
    net: &GroundNetwork,
    order: &EliminationOrder,
) -> Result<Posterior, InferenceError> {
    let query = net.query_id();
    let mut evidence: Vec<(NodeId, usize)> = Vec::new();
    for &(id, v) in net.evidence_ids() {
        match evidence.iter().find(|(e, _)| *e == id) {
            Some(&(_, w)) if w != v => return Err(InferenceError::ZeroEvidence),
            Some(_) => {}
            None => evidence.push((id, v)),
        }
    }

    let mut factors: Vec<Factor> = net
        .ids()
        .map(|id| {
            let mut f = Factor::from_node(net, id);
            for &(e, v) in &evidence {
                if let Some(pos) = f.position(net.term(e)) {
                    f = f.restrict_at(pos, v);
                }
            }
            f
        })
        .collect();

    let hidden: BTreeSet<Term> = net
        .ids()
        .filter(|&id| id != query && !evidence.iter().any(|(e, _)| *e == id))
        .map(|id| net.term(id).clone())
        .collect();
    let sequence: Vec<Term> = match order {
        EliminationOrder::MinDegree => Vec::new(),
        EliminationOrder::ReverseLexicographic => hidden.iter().rev().cloned().collect(),
        EliminationOrder::Explicit(terms) => {
            let given: BTreeSet<Term> = terms.iter().cloned().collect();
            if given != hidden || terms.len() != hidden.len() {
                return Err(InferenceError::InvalidOrder(
                    "must list every node other than the query and evidence exactly once".into(),
                ));
            }
            terms.clone()
        }
    };

    let mut remaining = hidden;
    let mut step = 0;
    while !remaining.is_empty() {
        let var = if *order == EliminationOrder::MinDegree {
            min_degree(&factors, &remaining)
        } else {
            sequence[step].clone()
        };
        step += 1;
        remaining.remove(&var);
        let (with, without): (Vec<Factor>, Vec<Factor>) =
            factors.into_iter().partition(|f| f.contains(&var));
        factors = without;
        if let Some(product) = product(with) {
            factors.push(product.sum_out(&var)?);
        }
    }

    let result = product(factors).unwrap_or_else(|| Factor::scalar(1.0));
    let range = net.range(query).clone();
    let evidence_probability = result.total();
    if evidence_probability <= 0.0 {
        return Err(InferenceError::ZeroEvidence);
    }
    let probs = match evidence.iter().find(|(e, _)| *e == query) {
        Some(&(_, v)) => (0..range.len())
            .map(|i| if i == v { 1.0 } else { 0.0 })
            .collect(),
        None => result
            .table
            .iter()
            .map(|p| p / evidence_probability)
            .collect(),
    };
    Ok(Posterior {
        query: net.term(query).clone(),
        range,
        probs,
        evidence_probability,
    })
}

fn product(factors: Vec<Factor>) -> Option<Factor> {
    factors.into_iter().reduce(|a, b| a.multiply(&b))
}

fn min_degree(factors: &[Factor], remaining: &BTreeSet<Term>) -> Term {
    let mut best: Option<(usize, &Term)> = None;
    for t in remaining {
        let mut neighbours: BTreeSet<&Term> = BTreeSet::new();
        for f in factors.iter().filter(|f| f.contains(t)) {
            neighbours.extend(f.scope.iter().map(|v| &v.term).filter(|n| *n != t));
        }
        // ascending iteration keeps the smallest name on ties
        if best.is_none_or(|(d, _)| neighbours.len() < d) {
            best = Some((neighbours.len(), t));
        }
    }
    best.expect("remaining is non-empty").1.clone()
}
