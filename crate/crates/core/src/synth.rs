//! Random knowledge bases, networks and CPT fills for property testing.
//!
//! Everything is driven by a caller-supplied RNG, so a seed fixes the output.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::generator::{generate_network, GroundNetwork, NodeSpec};
use crate::kb::{Arg, KnowledgeBase, LinkMatrix, Term, ValueRange};
use crate::validator::validate;

const CONSTANTS: [&str; 3] = ["A", "B", "C"];
const VARS: [&str; 3] = ["x", "y", "z"];

/// Rows drawn uniformly from the probability simplex.
pub fn random_rows<R: Rng + ?Sized>(rng: &mut R, rows: usize, width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * width);
    for _ in 0..rows {
        let row: Vec<f64> = (0..width).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let sum: f64 = row.iter().sum();
        out.extend(row.into_iter().map(|x| x / sum));
    }
    out
}

/// The same knowledge base with every link matrix refilled at random.
pub fn randomize_kb<R: Rng + ?Sized>(kb: &KnowledgeBase, rng: &mut R) -> KnowledgeBase {
    kb.map_matrices(|r| random_rows(rng, r.matrix().row_count(), r.matrix().row_len()))
}

/// The same network with every CPT refilled at random, independently per
/// node.
pub fn randomize_network<R: Rng + ?Sized>(net: &GroundNetwork, rng: &mut R) -> GroundNetwork {
    net.with_cpts(|_, n| {
        let m = &n.cpt;
        Arc::new(m.with_entries(random_rows(rng, m.row_count(), m.row_len())))
    })
    .expect("same structure")
}

/// A random DAG over atoms `N0`..`N{n-1}`, where each earlier node is a
/// parent of each later one with probability `edge_prob`. Query `N0`, no
/// evidence.
pub fn random_dag<R: Rng + ?Sized>(rng: &mut R, n: usize, edge_prob: f64) -> GroundNetwork {
    let mut specs = Vec::with_capacity(n);
    let mut ranges: Vec<Arc<ValueRange>> = Vec::with_capacity(n);
    for i in 0..n {
        let k = rng.gen_range(2..=3);
        let range = Arc::new(
            ValueRange::new(format!("r{i}"), (0..k).map(|v| format!("v{v}")).collect())
                .expect("distinct values"),
        );
        let parents: Vec<usize> = (0..i).filter(|_| rng.gen_bool(edge_prob)).collect();
        let ante: Vec<Arc<ValueRange>> = parents.iter().map(|&p| ranges[p].clone()).collect();
        let rows = ante.iter().map(|r| r.len()).product();
        let cpt = LinkMatrix::new(ante, range.clone(), random_rows(rng, rows, k))
            .expect("random rows are valid");
        specs.push(NodeSpec {
            term: Term::atom(format!("N{i}")),
            rule_id: format!("R{i}"),
            parents: parents
                .iter()
                .map(|p| Term::atom(format!("N{p}")))
                .collect(),
            cpt: Arc::new(cpt),
        });
        ranges.push(range);
    }
    GroundNetwork::from_parts(specs, &Term::atom("N0"), &[]).expect("edges point forward")
}

/// A knowledge base that satisfies every constraint. Symbols are layered so
/// antecedents always come from earlier layers; some symbols are defined by
/// one rule per constant in their first argument instead of a single
/// general rule.
pub fn random_kb<R: Rng + ?Sized>(rng: &mut R) -> KnowledgeBase {
    let mut kb = KnowledgeBase::new();
    let label_sets: [&[&str]; 4] = [
        &["+", "-"],
        &["t", "m", "s"],
        &["lo", "hi"],
        &["a", "b", "c"],
    ];
    let n_ranges = rng.gen_range(1..=3);
    for i in 0..n_ranges {
        let labels = label_sets[rng.gen_range(0..label_sets.len())];
        kb.add_range(format!("r{i}"), labels.to_vec())
            .expect("fresh name");
    }

    let n_symbols = rng.gen_range(2..=6);
    let mut symbols: Vec<(String, usize)> = Vec::new();
    for i in 0..n_symbols {
        let name = format!("S{i}");
        let arity = rng.gen_range(0..=2);
        let params = VARS[..arity].to_vec();
        let range = format!("r{}", rng.gen_range(0..n_ranges));
        kb.add_symbol(name.clone(), params, &range)
            .expect("fresh name");

        let heads: Vec<Term> = if arity > 0 && rng.gen_bool(0.3) {
            CONSTANTS
                .iter()
                .map(|c| {
                    let mut args = vec![Arg::constant(*c)];
                    args.extend(VARS[1..arity].iter().map(|v| Arg::var(*v)));
                    Term::new(name.clone(), args)
                })
                .collect()
        } else {
            vec![Term::new(
                name.clone(),
                VARS[..arity].iter().map(|v| Arg::var(*v)).collect(),
            )]
        };
        for (h, head) in heads.into_iter().enumerate() {
            let vars: Vec<String> = head.variables().into_iter().map(String::from).collect();
            let n_ante = if symbols.is_empty() {
                0
            } else {
                rng.gen_range(0..=2.min(symbols.len()))
            };
            let antecedents: Vec<Term> = (0..n_ante)
                .map(|_| {
                    let (sym, ar) = symbols.choose(rng).expect("non-empty");
                    let args = (0..*ar)
                        .map(|_| match vars.choose(rng) {
                            Some(v) if rng.gen_bool(0.8) => Arg::var(v.clone()),
                            _ => Arg::constant(*CONSTANTS.choose(rng).expect("non-empty")),
                        })
                        .collect();
                    Term::new(sym.clone(), args)
                })
                .collect();
            let matrix = kb
                .matrix_for(&head, &antecedents, Vec::new())
                .expect("declared");
            let entries = random_rows(rng, matrix.row_count(), matrix.row_len());
            kb.add_rule_with_entries(format!("R{i}_{h}"), head, antecedents, entries)
                .expect("well-formed rule");
        }
        symbols.push((name, arity));
    }
    debug_assert!(validate(&kb).ok);
    kb
}

/// A random ground term over a symbol of `kb`.
pub fn random_ground_term<R: Rng + ?Sized>(rng: &mut R, kb: &KnowledgeBase) -> Term {
    let sym = kb.symbols().choose(rng).expect("non-empty");
    Term::ground(
        sym.name(),
        (0..sym.arity()).map(|_| *CONSTANTS.choose(rng).expect("non-empty")),
    )
}

/// A valid knowledge base with a ground query and evidence whose generated
/// network has between 2 and `max_nodes` nodes.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub kb: KnowledgeBase,
    pub query: Term,
    pub evidence: Vec<(Term, String)>,
}

impl Scenario {
    pub fn network(&self) -> GroundNetwork {
        generate_network(&self.kb, &self.query, &self.evidence).expect("scenario generates")
    }
}

pub fn random_scenario<R: Rng + ?Sized>(rng: &mut R, max_nodes: usize) -> Scenario {
    loop {
        let kb = random_kb(rng);
        let query = random_ground_term(rng, &kb);
        let n_ev = rng.gen_range(0..=3);
        let mut evidence: Vec<(Term, String)> = Vec::new();
        for _ in 0..n_ev {
            let t = random_ground_term(rng, &kb);
            if t == query || evidence.iter().any(|(e, _)| *e == t) {
                continue;
            }
            let range = kb.check_term(&t).expect("declared");
            let v = range.values().choose(rng).expect("non-empty").clone();
            evidence.push((t, v));
        }
        if let Ok(net) = generate_network(&kb, &query, &evidence) {
            if (2..=max_nodes).contains(&net.len()) {
                return Scenario {
                    kb,
                    query,
                    evidence,
                };
            }
        }
    }
}
