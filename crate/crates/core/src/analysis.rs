//! Independence semantics and brute-force ground truth.
//!
//! d-separation is decided by reachability over (node, direction) states.
//! [`enumerate_paths`] and [`d_separated_by_paths`] evaluate the path-based
//! definition literally and exist as a cross-check on small graphs.
//!
//! The joint oracle multiplies one CPT lookup per node, leaves first.
//! [`JointTable`] tabulates that product over every complete assignment and
//! answers marginal and conditional-independence questions by summation.

use std::collections::{BTreeMap, HashSet, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::generator::{GroundNetwork, NodeId};
use crate::kb::Term;

pub const MAX_ORACLE_NODES: usize = 20;
pub const MAX_ORACLE_ASSIGNMENTS: u64 = 3_000_000;
/// Conditioning events below this probability count as impossible.
pub const ZERO_SUPPORT: f64 = 1e-12;
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("`{0}` appears in more than one of the sets")]
    OverlappingSets(Term),
    #[error("`{0}` is not a node of the network")]
    UnknownNode(Term),
    #[error("assignment gives no value for `{0}`")]
    IncompleteAssignment(Term),
    #[error("`{value}` is not a value of `{term}`")]
    ValueOutOfRange { term: Term, value: String },
    #[error("network too large for enumeration: {nodes} nodes, {assignments} assignments")]
    SizeLimit { nodes: usize, assignments: u128 },
}

/// Values for ground terms, by label.
pub type Assignment = BTreeMap<Term, String>;

fn ids_of(net: &GroundNetwork, terms: &[Term]) -> Result<Vec<NodeId>, AnalysisError> {
    let mut out: Vec<NodeId> = Vec::with_capacity(terms.len());
    for t in terms {
        let id = net
            .id_of(t)
            .ok_or_else(|| AnalysisError::UnknownNode(t.clone()))?;
        if !out.contains(&id) {
            out.push(id);
        }
    }
    Ok(out)
}

fn disjoint_ids(
    net: &GroundNetwork,
    sets: [&[Term]; 3],
) -> Result<[Vec<NodeId>; 3], AnalysisError> {
    let [a, b, c] = sets.map(|s| ids_of(net, s));
    let out = [a?, b?, c?];
    let mut seen = HashSet::new();
    for id in out.iter().flatten() {
        if !seen.insert(*id) {
            return Err(AnalysisError::OverlappingSets(net.term(*id).clone()));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Step {
    /// Along the edge, parent to child.
    Forward,
    /// Against the edge, child to parent.
    Backward,
}

/// A path in the undirected sense, with the direction of each edge taken.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Path {
    pub nodes: Vec<Term>,
    pub steps: Vec<Step>,
}

impl Path {
    /// For each interior node, whether both adjacent path edges point at it.
    pub fn converging(&self) -> Vec<bool> {
        self.steps
            .windows(2)
            .map(|w| w[0] == Step::Forward && w[1] == Step::Backward)
            .collect()
    }

    pub fn render(&self) -> String {
        let mut s = self.nodes[0].to_string();
        for (step, n) in self.steps.iter().zip(&self.nodes[1..]) {
            s.push_str(match step {
                Step::Forward => " -> ",
                Step::Backward => " <- ",
            });
            s.push_str(&n.to_string());
        }
        s
    }
}

/// Outcome of a d-separation test. When the sets are not separated the
/// witness is an active trail from a member of X to a member of Y.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DsepResult {
    pub separated: bool,
    pub witness: Option<Path>,
}

/// Whether `z` d-separates `x` from `y`.
pub fn d_separated(
    net: &GroundNetwork,
    x: &[Term],
    z: &[Term],
    y: &[Term],
) -> Result<bool, AnalysisError> {
    dsep_report(net, x, z, y).map(|r| r.separated)
}

pub fn dsep_report(
    net: &GroundNetwork,
    x: &[Term],
    z: &[Term],
    y: &[Term],
) -> Result<DsepResult, AnalysisError> {
    let [x, z, y] = disjoint_ids(net, [x, z, y])?;
    Ok(bayes_ball(net, &x, &z, &y))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Dir {
    // Entered from a child, moving against edges.
    Up,
    // Entered from a parent, moving along edges.
    Down,
}

fn bayes_ball(net: &GroundNetwork, x: &[NodeId], z: &[NodeId], y: &[NodeId]) -> DsepResult {
    let n = net.len();
    let in_z = mask(n, z);
    let in_y = mask(n, y);
    let z_or_ancestor = net.ancestor_mask(z);
    let slot = |id: NodeId, d: Dir| 2 * id.0 + (d == Dir::Down) as usize;

    let mut prev: Vec<Option<usize>> = vec![None; 2 * n];
    let mut seen = vec![false; 2 * n];
    let mut queue = VecDeque::new();
    for &s in x {
        seen[slot(s, Dir::Up)] = true;
        queue.push_back((s, Dir::Up));
    }
    while let Some((u, d)) = queue.pop_front() {
        if in_y[u.0] {
            return DsepResult {
                separated: false,
                witness: Some(trail(net, &prev, slot(u, d))),
            };
        }
        let mut next = Vec::new();
        let blocked = in_z[u.0];
        match d {
            Dir::Up if !blocked => {
                next.extend(net.parent_set(u).into_iter().map(|p| (p, Dir::Up)));
                next.extend(net.children(u).iter().map(|&c| (c, Dir::Down)));
            }
            Dir::Up => {}
            Dir::Down => {
                if !blocked {
                    next.extend(net.children(u).iter().map(|&c| (c, Dir::Down)));
                }
                if z_or_ancestor[u.0] {
                    next.extend(net.parent_set(u).into_iter().map(|p| (p, Dir::Up)));
                }
            }
        }
        for (v, vd) in next {
            let s = slot(v, vd);
            if !seen[s] {
                seen[s] = true;
                prev[s] = Some(slot(u, d));
                queue.push_back((v, vd));
            }
        }
    }
    DsepResult {
        separated: true,
        witness: None,
    }
}

fn trail(net: &GroundNetwork, prev: &[Option<usize>], mut s: usize) -> Path {
    let mut states = vec![s];
    while let Some(p) = prev[s] {
        states.push(p);
        s = p;
    }
    states.reverse();
    let nodes = states
        .iter()
        .map(|&s| net.term(NodeId(s / 2)).clone())
        .collect();
    let steps = states[1..]
        .iter()
        .map(|&s| {
            if s % 2 == 1 {
                Step::Forward
            } else {
                Step::Backward
            }
        })
        .collect();
    Path { nodes, steps }
}

fn mask(n: usize, ids: &[NodeId]) -> Vec<bool> {
    let mut m = vec![false; n];
    for id in ids {
        m[id.0] = true;
    }
    m
}

/// Every simple path between `from` and `to`, ignoring edge direction.
pub fn enumerate_paths(
    net: &GroundNetwork,
    from: &Term,
    to: &Term,
) -> Result<Vec<Path>, AnalysisError> {
    let f = net
        .id_of(from)
        .ok_or_else(|| AnalysisError::UnknownNode(from.clone()))?;
    let g = net
        .id_of(to)
        .ok_or_else(|| AnalysisError::UnknownNode(to.clone()))?;
    let mut out = Vec::new();
    let mut walk = PathWalk::new(net, f);
    walk.run(g, &mut |p, _| {
        out.push(p.to_path(net));
        false
    });
    Ok(out)
}

/// d-separation evaluated path by path: every path between a member of `x`
/// and a member of `y` must contain an interior node that either has
/// converging arrows with neither it nor any successor in `z`, or has no
/// converging arrows and is in `z`.
pub fn d_separated_by_paths(
    net: &GroundNetwork,
    x: &[Term],
    z: &[Term],
    y: &[Term],
) -> Result<bool, AnalysisError> {
    let [x, z, y] = disjoint_ids(net, [x, z, y])?;
    let in_z = mask(net.len(), &z);
    // converging node is open iff it or a successor is in z
    let open_collider: Vec<bool> = net
        .ids()
        .map(|w| {
            net.descendant_mask(&[w])
                .iter()
                .zip(&in_z)
                .any(|(d, z)| *d && *z)
        })
        .collect();
    let blocks = |w: NodeId, converging: bool| {
        if converging {
            !open_collider[w.0]
        } else {
            in_z[w.0]
        }
    };
    for &a in &x {
        for &b in &y {
            let mut walk = PathWalk::new(net, a);
            walk.blocker = Some(&blocks);
            let mut open = false;
            walk.run(b, &mut |_, is_open| {
                open |= is_open;
                open
            });
            if open {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

type Blocker<'a> = &'a dyn Fn(NodeId, bool) -> bool;

struct PathWalk<'a> {
    net: &'a GroundNetwork,
    nodes: Vec<NodeId>,
    steps: Vec<Step>,
    on_path: Vec<bool>,
    blocker: Option<Blocker<'a>>,
}

impl<'a> PathWalk<'a> {
    fn new(net: &'a GroundNetwork, start: NodeId) -> Self {
        let mut on_path = vec![false; net.len()];
        on_path[start.0] = true;
        PathWalk {
            net,
            nodes: vec![start],
            steps: Vec::new(),
            on_path,
            blocker: None,
        }
    }

    fn to_path(&self, net: &GroundNetwork) -> Path {
        Path {
            nodes: self.nodes.iter().map(|&i| net.term(i).clone()).collect(),
            steps: self.steps.clone(),
        }
    }

    /// Depth-first over simple paths ending at `goal`. `visit` receives each
    /// complete path and whether it is unblocked; returning true stops the
    /// walk. With a blocker set, prefixes that are already blocked are not
    /// extended and complete paths are reported only when unblocked.
    fn run(&mut self, goal: NodeId, visit: &mut dyn FnMut(&Self, bool) -> bool) -> bool {
        let u = *self.nodes.last().expect("non-empty");
        if u == goal {
            return visit(self, true);
        }
        let mut moves: Vec<(NodeId, Step)> = self
            .net
            .children(u)
            .iter()
            .map(|&c| (c, Step::Forward))
            .collect();
        moves.extend(
            self.net
                .parent_set(u)
                .into_iter()
                .map(|p| (p, Step::Backward)),
        );
        for (v, step) in moves {
            if self.on_path[v.0] {
                continue;
            }
            // u becomes interior once we leave it, unless it is the start
            if let (Some(block), Some(&last)) = (self.blocker, self.steps.last()) {
                let converging = last == Step::Forward && step == Step::Backward;
                if block(u, converging) {
                    continue;
                }
            }
            self.on_path[v.0] = true;
            self.nodes.push(v);
            self.steps.push(step);
            let stop = self.run(goal, visit);
            self.steps.pop();
            self.nodes.pop();
            self.on_path[v.0] = false;
            if stop {
                return true;
            }
        }
        false
    }
}

/// Joint probability of a complete assignment: the product over all nodes
/// of the CPT entry selected by the node's value and its parents' values,
/// taken in chain-rule order.
pub fn joint_oracle(net: &GroundNetwork, a: &Assignment) -> Result<f64, AnalysisError> {
    let mut values = vec![0usize; net.len()];
    for id in net.ids() {
        let t = net.term(id);
        let v = a
            .get(t)
            .ok_or_else(|| AnalysisError::IncompleteAssignment(t.clone()))?;
        values[id.0] = net
            .range(id)
            .index_of(v)
            .ok_or_else(|| AnalysisError::ValueOutOfRange {
                term: t.clone(),
                value: v.clone(),
            })?;
    }
    Ok(joint_of_indices(net, &net.chain_rule_order(), &values))
}

fn joint_of_indices(net: &GroundNetwork, order: &[NodeId], values: &[usize]) -> f64 {
    let mut parents = Vec::new();
    let mut p = 1.0;
    for &id in order {
        parents.clear();
        parents.extend(net.parents(id).iter().map(|q| values[q.0]));
        p *= net.node(id).cpt.prob(&parents, values[id.0]);
    }
    p
}

/// Joint probabilities of every complete assignment. Assignments are
/// indexed in mixed radix over node ids, the highest id varying fastest.
#[derive(Debug, Clone)]
pub struct JointTable<'n> {
    net: &'n GroundNetwork,
    sizes: Vec<usize>,
    strides: Vec<usize>,
    probs: Vec<f64>,
}

impl<'n> JointTable<'n> {
    pub fn new(net: &'n GroundNetwork) -> Result<Self, AnalysisError> {
        let sizes: Vec<usize> = net.ids().map(|id| net.range(id).len()).collect();
        let total: u128 = sizes.iter().map(|&s| s as u128).product();
        if net.len() > MAX_ORACLE_NODES || total > MAX_ORACLE_ASSIGNMENTS as u128 {
            return Err(AnalysisError::SizeLimit {
                nodes: net.len(),
                assignments: total,
            });
        }
        let mut strides = vec![1usize; sizes.len()];
        for i in (0..sizes.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * sizes[i + 1];
        }
        let order = net.chain_rule_order();
        let mut values = vec![0usize; sizes.len()];
        let mut probs = Vec::with_capacity(total as usize);
        for _ in 0..total {
            probs.push(joint_of_indices(net, &order, &values));
            increment(&mut values, &sizes);
        }
        Ok(JointTable {
            net,
            sizes,
            strides,
            probs,
        })
    }

    pub fn network(&self) -> &GroundNetwork {
        self.net
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    fn value(&self, index: usize, id: NodeId) -> usize {
        (index / self.strides[id.0]) % self.sizes[id.0]
    }

    /// Sums the joint into a table over `vars` (last fastest), keeping only
    /// assignments consistent with `fixed`.
    fn project(&self, vars: &[NodeId], fixed: &[(NodeId, usize)]) -> Vec<f64> {
        let len: usize = vars.iter().map(|v| self.sizes[v.0]).product();
        let mut out = vec![0.0; len];
        'outer: for (i, &p) in self.probs.iter().enumerate() {
            for &(id, v) in fixed {
                if self.value(i, id) != v {
                    continue 'outer;
                }
            }
            let mut k = 0;
            for &v in vars {
                k = k * self.sizes[v.0] + self.value(i, v);
            }
            out[k] += p;
        }
        out
    }

    /// Joint distribution of `targets` given `given`, or `None` when the
    /// conditioning event has negligible probability. A target that is also
    /// given gets the indicator of its given value.
    pub fn marginal(&self, targets: &[NodeId], given: &[(NodeId, usize)]) -> Option<Vec<f64>> {
        let table = self.project(targets, given);
        let mass: f64 = table.iter().sum();
        if mass < ZERO_SUPPORT {
            return None;
        }
        Some(table.into_iter().map(|p| p / mass).collect())
    }

    /// Tests `X ⟂ Y | Z`: for every combination with `P(Y=v, Z=w)` above
    /// [`ZERO_SUPPORT`], `|P(X=u | Y=v, Z=w) - P(X=u | Z=w)|` must not exceed
    /// `tol`. Reports the worst combination.
    pub fn ci(&self, x: &[NodeId], y: &[NodeId], z: &[NodeId], tol: f64) -> CiReport {
        let vars: Vec<NodeId> = x.iter().chain(y).chain(z).copied().collect();
        let p_xyz = self.project(&vars, &[]);
        let size = |s: &[NodeId]| s.iter().map(|v| self.sizes[v.0]).product::<usize>();
        let (nx, ny, nz) = (size(x), size(y), size(z));
        let at = |u: usize, v: usize, w: usize| p_xyz[(u * ny + v) * nz + w];

        let mut worst: Option<CiWitnessIdx> = None;
        for w in 0..nz {
            let p_z: f64 = (0..nx)
                .flat_map(|u| (0..ny).map(move |v| (u, v)))
                .map(|(u, v)| at(u, v, w))
                .sum();
            for v in 0..ny {
                let p_yz: f64 = (0..nx).map(|u| at(u, v, w)).sum();
                if p_yz <= ZERO_SUPPORT {
                    continue;
                }
                for u in 0..nx {
                    let p_xz: f64 = (0..ny).map(|v2| at(u, v2, w)).sum();
                    let cond = at(u, v, w) / p_yz;
                    let marg = p_xz / p_z;
                    let dev = (cond - marg).abs();
                    if worst.as_ref().is_none_or(|c| dev > c.deviation) {
                        worst = Some(CiWitnessIdx {
                            u,
                            v,
                            w,
                            conditional: cond,
                            marginal: marg,
                            deviation: dev,
                        });
                    }
                }
            }
        }
        let independent = worst.as_ref().is_none_or(|c| c.deviation <= tol);
        let witness = worst.map(|c| CiWitness {
            x: self.decode(x, c.u),
            y: self.decode(y, c.v),
            z: self.decode(z, c.w),
            conditional: c.conditional,
            marginal: c.marginal,
            deviation: c.deviation,
        });
        CiReport {
            independent,
            witness,
        }
    }

    fn decode(&self, vars: &[NodeId], mut k: usize) -> Vec<(String, String)> {
        let mut out = vec![(String::new(), String::new()); vars.len()];
        for (slot, &v) in out.iter_mut().zip(vars).rev() {
            let size = self.sizes[v.0];
            *slot = (
                self.net.term(v).to_string(),
                self.net.range(v).value(k % size).to_string(),
            );
            k /= size;
        }
        out
    }
}

fn increment(values: &mut [usize], sizes: &[usize]) {
    for i in (0..values.len()).rev() {
        values[i] += 1;
        if values[i] < sizes[i] {
            return;
        }
        values[i] = 0;
    }
}

struct CiWitnessIdx {
    u: usize,
    v: usize,
    w: usize,
    conditional: f64,
    marginal: f64,
    deviation: f64,
}

/// The value combination with the largest deviation between
/// `P(X=u | Y=v, Z=w)` and `P(X=u | Z=w)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CiWitness {
    pub x: Vec<(String, String)>,
    pub y: Vec<(String, String)>,
    pub z: Vec<(String, String)>,
    pub conditional: f64,
    pub marginal: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CiReport {
    pub independent: bool,
    pub witness: Option<CiWitness>,
}

/// `P(targets | given)` by full enumeration. `Ok(None)` when the
/// conditioning event has (numerically) zero probability.
pub fn marginal_oracle(
    net: &GroundNetwork,
    targets: &[Term],
    given: &[(Term, String)],
) -> Result<Option<Vec<f64>>, AnalysisError> {
    let targets = ids_of(net, targets)?;
    let mut fixed = Vec::with_capacity(given.len());
    for (t, v) in given {
        let id = net
            .id_of(t)
            .ok_or_else(|| AnalysisError::UnknownNode(t.clone()))?;
        let idx = net
            .range(id)
            .index_of(v)
            .ok_or_else(|| AnalysisError::ValueOutOfRange {
                term: t.clone(),
                value: v.clone(),
            })?;
        fixed.push((id, idx));
    }
    Ok(JointTable::new(net)?.marginal(&targets, &fixed))
}

pub fn ci_oracle(
    net: &GroundNetwork,
    x: &[Term],
    y: &[Term],
    z: &[Term],
    tol: f64,
) -> Result<bool, AnalysisError> {
    ci_report(net, x, y, z, tol).map(|r| r.independent)
}

pub fn ci_report(
    net: &GroundNetwork,
    x: &[Term],
    y: &[Term],
    z: &[Term],
    tol: f64,
) -> Result<CiReport, AnalysisError> {
    let [x, y, z] = disjoint_ids(net, [x, y, z])?;
    Ok(JointTable::new(net)?.ci(&x, &y, &z, tol))
}

/// A node that is not independent of a non-successor given its parents.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkovFailure {
    pub node: String,
    pub other: String,
    pub deviation: f64,
}

/// Checks that every node is independent of each non-successor, given its
/// direct predecessors.
pub fn markov_check(net: &GroundNetwork, tol: f64) -> Result<Vec<MarkovFailure>, AnalysisError> {
    let table = JointTable::new(net)?;
    Ok(markov_check_with(&table, tol))
}

pub fn markov_check_with(table: &JointTable<'_>, tol: f64) -> Vec<MarkovFailure> {
    let net = table.network();
    let mut out = Vec::new();
    for t in net.ids() {
        let parents = net.parent_set(t);
        let below = net.descendant_mask(&[t]);
        for u in net.ids() {
            if below[u.0] || parents.contains(&u) {
                continue;
            }
            let r = table.ci(&[t], &[u], &parents, tol);
            if !r.independent {
                out.push(MarkovFailure {
                    node: net.term(t).to_string(),
                    other: net.term(u).to_string(),
                    deviation: r.witness.map_or(0.0, |w| w.deviation),
                });
            }
        }
    }
    out
}
