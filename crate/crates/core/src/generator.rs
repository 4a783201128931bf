//! Query-driven network generation.
//!
//! Starting from the ground query, each term is matched against the unique
//! rule concluding it; the rule is instantiated and its (ground) antecedents
//! are chained on in turn until root terms are reached. Each evidence term is
//! then chained on the same way, reusing every node already generated. Nodes
//! below the query that have no evidence below them are never created.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{Binding, KbError, KnowledgeBase, LinkMatrix, Rule, Term, ValueRange};
use crate::parser::{parse_ground_term, render_term};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetError {
    #[error("no rule concludes `{0}`")]
    MissingRule(Term),
    #[error("dependency cycle through {}", render_cycle(.0))]
    CycleDetected(Vec<Term>),
    #[error("`{value}` is not a value of `{term}`")]
    EvidenceValueOutOfRange { term: Term, value: String },
    #[error("`{0}` is not a node of the network")]
    UnknownNode(Term),
    #[error("`{0}` is not ground")]
    NonGround(Term),
    #[error("node `{0}` is declared twice")]
    DuplicateNode(Term),
    #[error("malformed network: {0}")]
    Malformed(String),
    #[error(transparent)]
    Kb(#[from] KbError),
}

fn render_cycle(terms: &[Term]) -> String {
    terms
        .iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(" -> ")
}

/// Index of a node within its network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

/// A ground term with the rule instance that defines it.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub term: Term,
    pub rule_id: String,
    /// In antecedent order; a node may appear twice when two antecedents
    /// ground to the same term.
    pub parents: Vec<NodeId>,
    pub cpt: Arc<LinkMatrix>,
}

impl Node {
    pub fn range(&self) -> &Arc<ValueRange> {
        self.cpt.consequent_range()
    }
}

/// Input to [`GroundNetwork::from_parts`].
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub term: Term,
    pub rule_id: String,
    pub parents: Vec<Term>,
    pub cpt: Arc<LinkMatrix>,
}

/// A Bayesian network over ground terms together with the query and evidence
/// it was generated for. Always acyclic.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundNetwork {
    nodes: Vec<Node>,
    index: HashMap<Term, NodeId>,
    children: Vec<Vec<NodeId>>,
    levels: Vec<usize>,
    query: NodeId,
    evidence: Vec<(NodeId, usize)>,
}

/// The unique rule whose consequent matches `g`, with the matching binding.
///
/// On an invalid knowledge base with several matching rules, the first in
/// declaration order wins.
pub fn find_rule_for<'k>(kb: &'k KnowledgeBase, g: &Term) -> Result<(&'k Rule, Binding), NetError> {
    if !g.is_ground() {
        return Err(NetError::NonGround(g.clone()));
    }
    kb.rules()
        .iter()
        .find_map(|r| r.consequent().match_ground(g).map(|b| (r, b)))
        .ok_or_else(|| NetError::MissingRule(g.clone()))
}

/// Accumulates the union of predecessor networks of several ground terms,
/// sharing nodes between them.
#[derive(Debug)]
pub struct NetworkBuilder<'k> {
    kb: &'k KnowledgeBase,
    nodes: Vec<NodeSpec>,
    index: HashMap<Term, usize>,
}

impl<'k> NetworkBuilder<'k> {
    pub fn new(kb: &'k KnowledgeBase) -> Self {
        NetworkBuilder {
            kb,
            nodes: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, t: &Term) -> bool {
        self.index.contains_key(t)
    }

    /// Terms generated so far, parents before children.
    pub fn terms(&self) -> impl Iterator<Item = &Term> {
        self.nodes.iter().map(|n| &n.term)
    }

    /// Adds `g` and all its predecessors. Terms already present are reused,
    /// so repeated calls with the same term change nothing.
    pub fn backward_chain(&mut self, g: &Term) -> Result<(), NetError> {
        let mut in_progress = Vec::new();
        self.chain(g, &mut in_progress)
    }

    fn chain(&mut self, g: &Term, in_progress: &mut Vec<Term>) -> Result<(), NetError> {
        if self.index.contains_key(g) {
            return Ok(());
        }
        if let Some(pos) = in_progress.iter().position(|t| t == g) {
            let mut cycle = in_progress[pos..].to_vec();
            cycle.push(g.clone());
            return Err(NetError::CycleDetected(cycle));
        }
        let (rule, binding) = find_rule_for(self.kb, g)?;
        let instance = rule.ground_instance(&binding)?;
        in_progress.push(g.clone());
        for a in &instance.antecedents {
            self.chain(a, in_progress)?;
        }
        in_progress.pop();
        self.index.insert(g.clone(), self.nodes.len());
        self.nodes.push(NodeSpec {
            term: instance.consequent,
            rule_id: instance.rule_id,
            parents: instance.antecedents,
            cpt: instance.matrix,
        });
        Ok(())
    }

    pub fn finish(
        self,
        query: &Term,
        evidence: &[(Term, String)],
    ) -> Result<GroundNetwork, NetError> {
        GroundNetwork::from_parts(self.nodes, query, evidence)
    }
}

/// Builds the network answering `P(query | evidence)`: the query's
/// predecessor network joined with each evidence term's, in evidence order.
pub fn generate_network(
    kb: &KnowledgeBase,
    query: &Term,
    evidence: &[(Term, String)],
) -> Result<GroundNetwork, NetError> {
    let mut builder = NetworkBuilder::new(kb);
    builder.backward_chain(query)?;
    for (term, _) in evidence {
        builder.backward_chain(term)?;
    }
    builder.finish(query, evidence)
}

impl GroundNetwork {
    /// Assembles a network from explicit nodes. Parents must be listed nodes,
    /// each CPT must be shaped for its parents, and the graph must be acyclic.
    pub fn from_parts(
        specs: Vec<NodeSpec>,
        query: &Term,
        evidence: &[(Term, String)],
    ) -> Result<GroundNetwork, NetError> {
        let mut index = HashMap::with_capacity(specs.len());
        for (i, s) in specs.iter().enumerate() {
            if !s.term.is_ground() {
                return Err(NetError::NonGround(s.term.clone()));
            }
            if index.insert(s.term.clone(), NodeId(i)).is_some() {
                return Err(NetError::DuplicateNode(s.term.clone()));
            }
        }
        let mut nodes = Vec::with_capacity(specs.len());
        for s in specs {
            let parents = s
                .parents
                .iter()
                .map(|p| {
                    index
                        .get(p)
                        .copied()
                        .ok_or_else(|| NetError::UnknownNode(p.clone()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            nodes.push(Node {
                term: s.term,
                rule_id: s.rule_id,
                parents,
                cpt: s.cpt,
            });
        }
        for n in &nodes {
            let ante = n.cpt.antecedent_ranges();
            if ante.len() != n.parents.len()
                || ante
                    .iter()
                    .zip(&n.parents)
                    .any(|(r, p)| **r != **nodes[p.0].range())
            {
                return Err(NetError::Malformed(format!(
                    "CPT of `{}` does not match the ranges of its parents",
                    n.term
                )));
            }
            if n.cpt.entries().len() != n.cpt.expected_len() {
                return Err(NetError::Malformed(format!(
                    "CPT of `{}` has {} entries, expected {}",
                    n.term,
                    n.cpt.entries().len(),
                    n.cpt.expected_len()
                )));
            }
        }

        let mut children = vec![Vec::new(); nodes.len()];
        for (i, n) in nodes.iter().enumerate() {
            for p in &n.parents {
                if !children[p.0].contains(&NodeId(i)) {
                    children[p.0].push(NodeId(i));
                }
            }
        }
        for c in &mut children {
            c.sort();
        }
        let levels = compute_levels(&nodes, &children)?;

        let query = *index
            .get(query)
            .ok_or_else(|| NetError::UnknownNode(query.clone()))?;
        let mut ev = Vec::with_capacity(evidence.len());
        for (t, v) in evidence {
            let id = *index
                .get(t)
                .ok_or_else(|| NetError::UnknownNode(t.clone()))?;
            let value = nodes[id.0].range().index_of(v).ok_or_else(|| {
                NetError::EvidenceValueOutOfRange {
                    term: t.clone(),
                    value: v.clone(),
                }
            })?;
            ev.push((id, value));
        }

        Ok(GroundNetwork {
            nodes,
            index,
            children,
            levels,
            query,
            evidence: ev,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len()).map(NodeId)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn term(&self, id: NodeId) -> &Term {
        &self.nodes[id.0].term
    }

    pub fn range(&self, id: NodeId) -> &Arc<ValueRange> {
        self.nodes[id.0].range()
    }

    pub fn id_of(&self, t: &Term) -> Option<NodeId> {
        self.index.get(t).copied()
    }

    pub fn require(&self, t: &Term) -> Result<NodeId, NetError> {
        self.id_of(t)
            .ok_or_else(|| NetError::UnknownNode(t.clone()))
    }

    pub fn contains(&self, t: &Term) -> bool {
        self.index.contains_key(t)
    }

    /// All node terms, sorted.
    pub fn terms(&self) -> BTreeSet<Term> {
        self.nodes.iter().map(|n| n.term.clone()).collect()
    }

    /// Directed edges as (parent, child) terms, sorted and deduplicated.
    pub fn edges(&self) -> BTreeSet<(Term, Term)> {
        self.ids()
            .flat_map(|c| self.parent_set(c).into_iter().map(move |p| (p, c)))
            .map(|(p, c)| (self.term(p).clone(), self.term(c).clone()))
            .collect()
    }

    pub fn query(&self) -> &Term {
        self.term(self.query)
    }

    pub fn query_id(&self) -> NodeId {
        self.query
    }

    /// Evidence as (node, value index) pairs, in the order given.
    pub fn evidence_ids(&self) -> &[(NodeId, usize)] {
        &self.evidence
    }

    pub fn evidence(&self) -> Vec<(Term, String)> {
        self.evidence
            .iter()
            .map(|&(id, v)| (self.term(id).clone(), self.range(id).value(v).to_string()))
            .collect()
    }

    pub fn is_evidence(&self, id: NodeId) -> bool {
        self.evidence.iter().any(|(e, _)| *e == id)
    }

    /// Parents in antecedent order, possibly with repeats.
    pub fn parents(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].parents
    }

    /// Distinct parents, sorted by id.
    pub fn parent_set(&self, id: NodeId) -> Vec<NodeId> {
        let mut p = self.nodes[id.0].parents.clone();
        p.sort();
        p.dedup();
        p
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.children[id.0]
    }

    /// Skeleton neighbours (parents and children), sorted and distinct.
    pub fn neighbors(&self, id: NodeId) -> Vec<NodeId> {
        let mut n = self.parent_set(id);
        n.extend_from_slice(self.children(id));
        n.sort();
        n.dedup();
        n
    }

    /// Marks `seeds` and every node with a directed path to one of them.
    pub fn ancestor_mask(&self, seeds: &[NodeId]) -> Vec<bool> {
        self.closure_mask(seeds, |id| self.parents(id).to_vec())
    }

    /// Marks `seeds` and every node reachable from one of them.
    pub fn descendant_mask(&self, seeds: &[NodeId]) -> Vec<bool> {
        self.closure_mask(seeds, |id| self.children(id).to_vec())
    }

    fn closure_mask(&self, seeds: &[NodeId], step: impl Fn(NodeId) -> Vec<NodeId>) -> Vec<bool> {
        let mut mask = vec![false; self.len()];
        let mut stack: Vec<NodeId> = seeds.to_vec();
        while let Some(u) = stack.pop() {
            if !mask[u.0] {
                mask[u.0] = true;
                stack.extend(step(u));
            }
        }
        mask
    }

    fn select(&self, mask: Vec<bool>, exclude: NodeId) -> BTreeSet<Term> {
        mask.iter()
            .enumerate()
            .filter(|&(i, &m)| m && i != exclude.0)
            .map(|(i, _)| self.nodes[i].term.clone())
            .collect()
    }

    pub fn parents_of(&self, t: &Term) -> Result<BTreeSet<Term>, NetError> {
        let id = self.require(t)?;
        Ok(self
            .parents(id)
            .iter()
            .map(|&p| self.term(p).clone())
            .collect())
    }

    pub fn children_of(&self, t: &Term) -> Result<BTreeSet<Term>, NetError> {
        let id = self.require(t)?;
        Ok(self
            .children(id)
            .iter()
            .map(|&c| self.term(c).clone())
            .collect())
    }

    /// Every term with a directed path to `t`.
    pub fn predecessors(&self, t: &Term) -> Result<BTreeSet<Term>, NetError> {
        let id = self.require(t)?;
        let mask = self.closure_mask(self.parents(id), |u| self.parents(u).to_vec());
        Ok(self.select(mask, NodeId(usize::MAX)))
    }

    /// Every term reachable from `t` along directed edges.
    pub fn successors(&self, t: &Term) -> Result<BTreeSet<Term>, NetError> {
        let id = self.require(t)?;
        let mask = self.closure_mask(self.children(id), |u| self.children(u).to_vec());
        Ok(self.select(mask, NodeId(usize::MAX)))
    }

    pub fn roots(&self) -> BTreeSet<Term> {
        self.nodes
            .iter()
            .filter(|n| n.parents.is_empty())
            .map(|n| n.term.clone())
            .collect()
    }

    pub fn leaves(&self) -> BTreeSet<Term> {
        self.ids()
            .filter(|&id| self.children(id).is_empty())
            .map(|id| self.term(id).clone())
            .collect()
    }

    /// Whether the two terms are connected by a path of edges taken in
    /// either direction.
    pub fn is_path(&self, from: &Term, to: &Term) -> Result<bool, NetError> {
        let (f, g) = (self.require(from)?, self.require(to)?);
        let mut seen = vec![false; self.len()];
        let mut queue = VecDeque::from([f]);
        seen[f.0] = true;
        while let Some(u) = queue.pop_front() {
            for v in self.neighbors(u) {
                if v == g {
                    return Ok(true);
                }
                if !seen[v.0] {
                    seen[v.0] = true;
                    queue.push_back(v);
                }
            }
        }
        Ok(false)
    }

    /// Level per node: leaves are 0, every other node is one more than its
    /// highest direct successor.
    pub fn level(&self, id: NodeId) -> usize {
        self.levels[id.0]
    }

    pub fn topological_levels(&self) -> BTreeMap<Term, usize> {
        self.ids()
            .map(|id| (self.term(id).clone(), self.levels[id.0]))
            .collect()
    }

    /// Nodes by ascending level, ties by term name: every node comes after
    /// all its successors and before all its predecessors.
    pub fn chain_rule_order(&self) -> Vec<NodeId> {
        let mut order: Vec<NodeId> = self.ids().collect();
        order.sort_by(|&a, &b| {
            self.levels[a.0]
                .cmp(&self.levels[b.0])
                .then_with(|| self.term(a).cmp(self.term(b)))
        });
        order
    }

    /// Nodes with every parent before its children.
    pub fn topological_order(&self) -> Vec<NodeId> {
        let mut order = self.chain_rule_order();
        order.reverse();
        order
    }

    /// Re-checks acyclicity of the parent relation.
    pub fn check_acyclic(&self) -> Result<(), NetError> {
        compute_levels(&self.nodes, &self.children).map(|_| ())
    }

    /// Graphviz rendering: query as a bold ellipse, evidence as boxes. Nodes
    /// and edges are sorted by name, so output is byte-stable.
    pub fn export_dot(&self) -> String {
        let mut out = String::from("digraph network {\n");
        let mut ids: Vec<NodeId> = self.ids().collect();
        ids.sort_by(|&a, &b| self.term(a).cmp(self.term(b)));
        for &id in &ids {
            let name = dot_quote(&self.term(id).to_string());
            if id == self.query {
                let _ = writeln!(out, "  {name} [shape=ellipse, style=bold];");
            } else if self.is_evidence(id) {
                let _ = writeln!(out, "  {name} [shape=box];");
            } else {
                let _ = writeln!(out, "  {name};");
            }
        }
        for (p, c) in self.edges() {
            let _ = writeln!(
                out,
                "  {} -> {};",
                dot_quote(&p.to_string()),
                dot_quote(&c.to_string())
            );
        }
        out.push_str("}\n");
        out
    }

    /// Structured dump for interchange and golden files.
    pub fn dump(&self) -> NetworkDump {
        NetworkDump {
            query: render_term(self.query()),
            evidence: self
                .evidence()
                .into_iter()
                .map(|(t, value)| EvidenceDump {
                    term: render_term(&t),
                    value,
                })
                .collect(),
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeDump {
                    term: render_term(&n.term),
                    rule: n.rule_id.clone(),
                    range: RangeDump {
                        name: n.range().name().to_string(),
                        values: n.range().values().to_vec(),
                    },
                    parents: n
                        .parents
                        .iter()
                        .map(|&p| render_term(self.term(p)))
                        .collect(),
                    cpt: n.cpt.rows().map(<[f64]>::to_vec).collect(),
                })
                .collect(),
        }
    }

    pub fn from_dump(dump: &NetworkDump) -> Result<GroundNetwork, NetError> {
        let term = |s: &str| parse_ground_term(s).map_err(|e| NetError::Malformed(e.to_string()));
        let mut ranges: HashMap<Term, Arc<ValueRange>> = HashMap::new();
        for n in &dump.nodes {
            let r = ValueRange::new(n.range.name.clone(), n.range.values.clone())?;
            ranges.insert(term(&n.term)?, Arc::new(r));
        }
        let mut specs = Vec::with_capacity(dump.nodes.len());
        for n in &dump.nodes {
            let t = term(&n.term)?;
            let parents = n
                .parents
                .iter()
                .map(|p| term(p))
                .collect::<Result<Vec<_>, _>>()?;
            let ante = parents
                .iter()
                .map(|p| {
                    ranges
                        .get(p)
                        .cloned()
                        .ok_or_else(|| NetError::UnknownNode(p.clone()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let cpt = LinkMatrix::new(ante, ranges[&t].clone(), n.cpt.concat())?;
            specs.push(NodeSpec {
                term: t,
                rule_id: n.rule.clone(),
                parents,
                cpt: Arc::new(cpt),
            });
        }
        let evidence = dump
            .evidence
            .iter()
            .map(|e| Ok((term(&e.term)?, e.value.clone())))
            .collect::<Result<Vec<_>, NetError>>()?;
        GroundNetwork::from_parts(specs, &term(&dump.query)?, &evidence)
    }

    /// Node specs in id order; the inverse of [`GroundNetwork::from_parts`].
    pub fn specs(&self) -> Vec<NodeSpec> {
        self.nodes
            .iter()
            .map(|n| NodeSpec {
                term: n.term.clone(),
                rule_id: n.rule_id.clone(),
                parents: n.parents.iter().map(|&p| self.term(p).clone()).collect(),
                cpt: n.cpt.clone(),
            })
            .collect()
    }

    /// The same structure with new CPTs.
    pub fn with_cpts(
        &self,
        mut f: impl FnMut(NodeId, &Node) -> Arc<LinkMatrix>,
    ) -> Result<GroundNetwork, NetError> {
        let mut specs = self.specs();
        for (i, s) in specs.iter_mut().enumerate() {
            s.cpt = f(NodeId(i), &self.nodes[i]);
        }
        GroundNetwork::from_parts(specs, self.query(), &self.evidence())
    }

    /// The same network with one more node.
    pub fn with_node(&self, spec: NodeSpec) -> Result<GroundNetwork, NetError> {
        let mut specs = self.specs();
        specs.push(spec);
        GroundNetwork::from_parts(specs, self.query(), &self.evidence())
    }

    /// The same network with a different query and evidence.
    pub fn with_query(
        &self,
        query: &Term,
        evidence: &[(Term, String)],
    ) -> Result<GroundNetwork, NetError> {
        GroundNetwork::from_parts(self.specs(), query, evidence)
    }
}

fn compute_levels(nodes: &[Node], children: &[Vec<NodeId>]) -> Result<Vec<usize>, NetError> {
    // Kahn's algorithm from the leaves upward.
    let n = nodes.len();
    let mut pending: Vec<usize> = children.iter().map(Vec::len).collect();
    let mut levels = vec![0usize; n];
    let mut ready: Vec<usize> = (0..n).filter(|&i| pending[i] == 0).collect();
    let mut done = 0;
    while let Some(u) = ready.pop() {
        done += 1;
        let mut parents = nodes[u].parents.clone();
        parents.sort();
        parents.dedup();
        for p in parents {
            levels[p.0] = levels[p.0].max(levels[u] + 1);
            pending[p.0] -= 1;
            if pending[p.0] == 0 {
                ready.push(p.0);
            }
        }
    }
    if done == n {
        return Ok(levels);
    }
    // Walk parents among unfinished nodes until one repeats.
    let start = (0..n)
        .find(|&i| pending[i] > 0)
        .expect("some node is on a cycle");
    let mut path = vec![start];
    let mut cur = start;
    loop {
        cur = children[cur]
            .iter()
            .find(|c| pending[c.0] > 0)
            .expect("cycle continues")
            .0;
        if let Some(pos) = path.iter().position(|&p| p == cur) {
            let mut cycle: Vec<Term> = path[pos..].iter().map(|&i| nodes[i].term.clone()).collect();
            cycle.push(nodes[cur].term.clone());
            return Err(NetError::CycleDetected(cycle));
        }
        path.push(cur);
    }
}

fn dot_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDump {
    pub query: String,
    pub evidence: Vec<EvidenceDump>,
    pub nodes: Vec<NodeDump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceDump {
    pub term: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDump {
    pub term: String,
    pub rule: String,
    pub range: RangeDump,
    pub parents: Vec<String>,
    pub cpt: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeDump {
    pub name: String,
    pub values: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse_evidence, parse_kb};

    fn burglary() -> KnowledgeBase {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/burglary.bkb");
        parse_kb(&std::fs::read_to_string(path).unwrap()).unwrap()
    }

    fn t(s: &str) -> Term {
        parse_ground_term(s).unwrap()
    }

    const EVIDENCE: &str = "Radio=+, Neighbor(Watson,Holmes)=+, Phone-call(Watson,Holmes)=+, \
                            Neighbor(Moriarty,Holmes)=+, Phone-call(Moriarty,Holmes)=+";

    fn holmes_net() -> GroundNetwork {
        let kb = burglary();
        let ev = parse_evidence(&kb, EVIDENCE).unwrap();
        generate_network(&kb, &t("Burglary(Holmes)"), &ev).unwrap()
    }

    fn set(items: &[&str]) -> BTreeSet<Term> {
        items.iter().map(|s| t(s)).collect()
    }

    #[test]
    fn find_rule_examples() {
        let kb = burglary();
        let (r, b) = find_rule_for(&kb, &t("Alarm(Holmes)")).unwrap();
        assert_eq!(r.id(), "R2");
        assert_eq!(b.get("x"), Some("Holmes"));
        let (r, b) = find_rule_for(&kb, &t("Quake")).unwrap();
        assert_eq!(r.id(), "R7");
        assert!(b.is_empty());
        assert_eq!(
            find_rule_for(&kb, &t("Unknown(A)")).unwrap_err(),
            NetError::MissingRule(t("Unknown(A)"))
        );
    }

    #[test]
    fn backward_chain_examples() {
        let kb = burglary();
        let mut b = NetworkBuilder::new(&kb);
        b.backward_chain(&t("Burglary(Holmes)")).unwrap();
        let got: BTreeSet<Term> = b.terms().cloned().collect();
        assert_eq!(got, set(&["Burglary(Holmes)", "Neighborhood(Holmes)"]));
        b.backward_chain(&t("Burglary(Holmes)")).unwrap();
        assert_eq!(b.len(), 2);

        let mut b = NetworkBuilder::new(&kb);
        b.backward_chain(&t("Quake")).unwrap();
        assert_eq!(b.len(), 1);

        let mut b = NetworkBuilder::new(&kb);
        b.backward_chain(&t("Alarm(Holmes)")).unwrap();
        let before = b.len();
        b.backward_chain(&t("Phone-call(Watson,Holmes)")).unwrap();
        assert_eq!(b.len(), before + 2);
        assert!(b.contains(&t("Neighbor(Watson,Holmes)")));
        let net = b.finish(&t("Alarm(Holmes)"), &[]).unwrap();
        let pc = net.require(&t("Phone-call(Watson,Holmes)")).unwrap();
        assert_eq!(net.term(net.parents(pc)[0]), &t("Alarm(Holmes)"));
    }

    #[test]
    fn holmes_net_nodes_and_edges() {
        let net = holmes_net();
        assert_eq!(
            net.terms(),
            set(&[
                "Neighborhood(Holmes)",
                "Burglary(Holmes)",
                "Quake",
                "Radio",
                "Alarm(Holmes)",
                "Neighbor(Watson,Holmes)",
                "Phone-call(Watson,Holmes)",
                "Neighbor(Moriarty,Holmes)",
                "Phone-call(Moriarty,Holmes)",
            ])
        );
        assert!(!net.contains(&t("Report(Holmes)")));
        assert!(!net.contains(&t("Recovered(Holmes)")));
        let expected: BTreeSet<(Term, Term)> = [
            ("Neighborhood(Holmes)", "Burglary(Holmes)"),
            ("Burglary(Holmes)", "Alarm(Holmes)"),
            ("Quake", "Alarm(Holmes)"),
            ("Quake", "Radio"),
            ("Alarm(Holmes)", "Phone-call(Watson,Holmes)"),
            ("Neighbor(Watson,Holmes)", "Phone-call(Watson,Holmes)"),
            ("Alarm(Holmes)", "Phone-call(Moriarty,Holmes)"),
            ("Neighbor(Moriarty,Holmes)", "Phone-call(Moriarty,Holmes)"),
        ]
        .iter()
        .map(|(a, b)| (t(a), t(b)))
        .collect();
        assert_eq!(net.edges(), expected);
        for n in ["Watson", "Moriarty"] {
            let id = net.require(&t(&format!("Phone-call({n},Holmes)"))).unwrap();
            assert_eq!(net.node(id).rule_id, "R4");
        }
        // one matrix shared by both instances
        let w = net.require(&t("Phone-call(Watson,Holmes)")).unwrap();
        let m = net.require(&t("Phone-call(Moriarty,Holmes)")).unwrap();
        assert!(Arc::ptr_eq(&net.node(w).cpt, &net.node(m).cpt));
    }

    #[test]
    fn query_quake_radio_evidence() {
        let kb = burglary();
        let ev = parse_evidence(&kb, "Radio=+").unwrap();
        let net = generate_network(&kb, &t("Quake"), &ev).unwrap();
        assert_eq!(net.terms(), set(&["Quake", "Radio"]));
        assert_eq!(net.edges(), BTreeSet::from([(t("Quake"), t("Radio"))]));
    }

    #[test]
    fn generation_errors() {
        let kb = burglary();
        assert!(matches!(
            generate_network(&kb, &t("Quake"), &[(t("Radio"), "maybe".into())]),
            Err(NetError::EvidenceValueOutOfRange { .. })
        ));
        assert!(matches!(
            generate_network(&kb, &t("Nope"), &[]),
            Err(NetError::MissingRule(_))
        ));
        let var = Term::new("Burglary", vec![crate::kb::Arg::var("x")]);
        assert!(matches!(
            generate_network(&kb, &var, &[]),
            Err(NetError::NonGround(_))
        ));
    }

    #[test]
    fn cycle_detected_under_force() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/c4_cycle.bkb");
        let kb = parse_kb(&std::fs::read_to_string(path).unwrap()).unwrap();
        let err = generate_network(&kb, &t("f(A)"), &[]).unwrap_err();
        assert_eq!(
            err,
            NetError::CycleDetected(vec![t("f(A)"), t("g(A)"), t("f(A)")])
        );
    }

    #[test]
    fn incomplete_binding_under_force() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/c2_unbound_var.bkb");
        let kb = parse_kb(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert!(matches!(
            generate_network(&kb, &t("g(A)"), &[]),
            Err(NetError::Kb(KbError::IncompleteBinding { .. }))
        ));
    }

    #[test]
    fn evidence_order_does_not_change_node_set() {
        let kb = burglary();
        let mut ev = parse_evidence(&kb, EVIDENCE).unwrap();
        let a = generate_network(&kb, &t("Burglary(Holmes)"), &ev).unwrap();
        ev.reverse();
        let b = generate_network(&kb, &t("Burglary(Holmes)"), &ev).unwrap();
        assert_eq!(a.terms(), b.terms());
        assert_eq!(a.edges(), b.edges());
        assert_eq!(holmes_net(), holmes_net());
    }

    #[test]
    fn graph_queries_on_holmes_net() {
        let net = holmes_net();
        assert_eq!(
            net.roots(),
            set(&[
                "Neighborhood(Holmes)",
                "Quake",
                "Neighbor(Watson,Holmes)",
                "Neighbor(Moriarty,Holmes)"
            ])
        );
        assert_eq!(
            net.successors(&t("Quake")).unwrap(),
            set(&[
                "Radio",
                "Alarm(Holmes)",
                "Phone-call(Watson,Holmes)",
                "Phone-call(Moriarty,Holmes)"
            ])
        );
        assert!(net.predecessors(&t("Quake")).unwrap().is_empty());
        assert_eq!(
            net.predecessors(&t("Alarm(Holmes)")).unwrap(),
            set(&["Burglary(Holmes)", "Neighborhood(Holmes)", "Quake"])
        );
        assert_eq!(
            net.leaves(),
            set(&[
                "Radio",
                "Phone-call(Watson,Holmes)",
                "Phone-call(Moriarty,Holmes)"
            ])
        );
        assert_eq!(net.parents_of(&t("Radio")).unwrap(), set(&["Quake"]));
        assert_eq!(
            net.children_of(&t("Quake")).unwrap(),
            set(&["Radio", "Alarm(Holmes)"])
        );
        assert!(net
            .is_path(&t("Radio"), &t("Neighbor(Moriarty,Holmes)"))
            .unwrap());
        assert_eq!(
            net.successors(&t("Zzz")).unwrap_err(),
            NetError::UnknownNode(t("Zzz"))
        );
    }

    #[test]
    fn levels_on_holmes_net() {
        let net = holmes_net();
        let lv = net.topological_levels();
        assert_eq!(lv[&t("Phone-call(Watson,Holmes)")], 0);
        assert_eq!(lv[&t("Radio")], 0);
        assert_eq!(lv[&t("Alarm(Holmes)")], 1);
        assert_eq!(lv[&t("Quake")], 2);
        assert_eq!(lv[&t("Burglary(Holmes)")], 2);
        assert_eq!(lv[&t("Neighborhood(Holmes)")], 3);
        assert_eq!(lv[&t("Neighbor(Watson,Holmes)")], 1);
    }

    fn binary() -> Arc<ValueRange> {
        Arc::new(ValueRange::new("pm", vec!["+".into(), "-".into()]).unwrap())
    }

    fn spec(name: &str, parents: &[&str]) -> NodeSpec {
        let ante = parents.iter().map(|_| binary()).collect();
        let rows = 1usize << parents.len();
        NodeSpec {
            term: t(name),
            rule_id: format!("R{name}"),
            parents: parents.iter().map(|p| t(p)).collect(),
            cpt: Arc::new(LinkMatrix::new(ante, binary(), [0.5, 0.5].repeat(rows)).unwrap()),
        }
    }

    #[test]
    fn levels_chain_and_single() {
        let net = GroundNetwork::from_parts(
            vec![spec("A", &[]), spec("B", &["A"]), spec("C", &["B"])],
            &t("A"),
            &[],
        )
        .unwrap();
        let lv = net.topological_levels();
        assert_eq!((lv[&t("A")], lv[&t("B")], lv[&t("C")]), (2, 1, 0));
        let order: Vec<String> = net
            .chain_rule_order()
            .iter()
            .map(|&i| net.term(i).to_string())
            .collect();
        assert_eq!(order, ["C", "B", "A"]);

        let single = GroundNetwork::from_parts(vec![spec("A", &[])], &t("A"), &[]).unwrap();
        assert_eq!(single.topological_levels()[&t("A")], 0);
    }

    #[test]
    fn from_parts_rejects_bad_input() {
        let err =
            GroundNetwork::from_parts(vec![spec("A", &["B"]), spec("B", &["A"])], &t("A"), &[])
                .unwrap_err();
        assert!(
            matches!(err, NetError::CycleDetected(ref c) if c.len() == 3),
            "{err}"
        );
        assert!(matches!(
            GroundNetwork::from_parts(vec![spec("A", &["Z"])], &t("A"), &[]),
            Err(NetError::UnknownNode(_))
        ));
        assert!(matches!(
            GroundNetwork::from_parts(vec![spec("A", &[]), spec("A", &[])], &t("A"), &[]),
            Err(NetError::DuplicateNode(_))
        ));
        assert!(matches!(
            GroundNetwork::from_parts(vec![spec("A", &[])], &t("B"), &[]),
            Err(NetError::UnknownNode(_))
        ));
        let mut bad = spec("B", &["A"]);
        bad.parents.clear();
        assert!(matches!(
            GroundNetwork::from_parts(vec![spec("A", &[]), bad], &t("A"), &[]),
            Err(NetError::Malformed(_))
        ));
    }

    #[test]
    fn repeated_parent_is_one_edge() {
        let net =
            GroundNetwork::from_parts(vec![spec("A", &[]), spec("B", &["A", "A"])], &t("B"), &[])
                .unwrap();
        let b = net.require(&t("B")).unwrap();
        assert_eq!(net.parents(b).len(), 2);
        assert_eq!(net.parent_set(b).len(), 1);
        assert_eq!(net.edges().len(), 1);
        assert_eq!(net.level(net.require(&t("A")).unwrap()), 1);
    }

    #[test]
    fn dot_export() {
        let net = holmes_net();
        let dot = net.export_dot();
        assert_eq!(dot, net.export_dot());
        let node_lines = dot
            .lines()
            .filter(|l| l.ends_with(';') && !l.contains("->"))
            .count();
        let edge_lines = dot.lines().filter(|l| l.contains("->")).count();
        assert_eq!(node_lines, 9);
        assert_eq!(edge_lines, 8);
        assert!(dot.contains("  \"Burglary(Holmes)\" [shape=ellipse, style=bold];\n"));
        assert!(dot.contains("  \"Radio\" [shape=box];\n"));
        assert!(dot.contains("  \"Quake\";\n"));
        assert!(dot.contains("  \"Quake\" -> \"Radio\";\n"));

        let single = GroundNetwork::from_parts(vec![spec("A", &[])], &t("A"), &[]).unwrap();
        assert_eq!(
            single.export_dot(),
            "digraph network {\n  \"A\" [shape=ellipse, style=bold];\n}\n"
        );
    }

    #[test]
    fn dump_round_trip() {
        let net = holmes_net();
        let dump = net.dump();
        let json = serde_json::to_string_pretty(&dump).unwrap();
        let back: NetworkDump = serde_json::from_str(&json).unwrap();
        let rebuilt = GroundNetwork::from_dump(&back).unwrap();
        assert_eq!(rebuilt.terms(), net.terms());
        assert_eq!(rebuilt.edges(), net.edges());
        assert_eq!(rebuilt.evidence(), net.evidence());
        assert_eq!(rebuilt.dump(), dump);
        assert_eq!(
            dump.nodes
                .iter()
                .find(|n| n.term == "Alarm(Holmes)")
                .unwrap()
                .cpt
                .len(),
            6
        );
    }
}
