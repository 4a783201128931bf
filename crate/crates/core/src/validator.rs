//! Well-formedness checks for knowledge bases.
//!
//! A knowledge base can stand for a family of Bayesian networks only if:
//!
//! * C1: every antecedent symbol is the consequent symbol of some rule,
//! * C2: every antecedent variable also occurs in the consequent,
//! * C3: no two distinct rules have ground instances with the same consequent,
//! * C4: no chain of rule instances leads from a term back to itself,
//!
//! and every link matrix has the right shape with normalized rows.
//!
//! C3 is decided exactly by unifying consequents. C4 is decided on the
//! symbol dependency graph, which is sound (symbol-level acyclicity implies
//! ground-level acyclicity) but rejects some KBs whose cycles could never be
//! instantiated.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::Serialize;

use crate::kb::{unify_apart, KnowledgeBase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Constraint {
    C1,
    C2,
    C3,
    C4,
    Matrix,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Constraint::C1 => "C1",
            Constraint::C2 => "C2",
            Constraint::C3 => "C3",
            Constraint::C4 => "C4",
            Constraint::Matrix => "Matrix",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub constraint: Constraint,
    pub rule_ids: Vec<String>,
    /// The offending symbol for symbol-level C1 reports.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub symbol: Option<String>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn render_text(&self) -> String {
        if self.ok {
            return "OK\n".to_string();
        }
        let mut out = String::new();
        for v in &self.violations {
            out.push_str(&format!(
                "{} [{}]: {}\n",
                v.constraint,
                v.rule_ids.join(", "),
                v.detail
            ));
        }
        out
    }

    pub fn violations_of(&self, c: Constraint) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(move |v| v.constraint == c)
    }

    pub fn constraints(&self) -> BTreeSet<Constraint> {
        self.violations.iter().map(|v| v.constraint).collect()
    }
}

/// Every antecedent symbol needs a rule concluding it.
pub fn check_c1(kb: &KnowledgeBase) -> Vec<Violation> {
    let defined: BTreeSet<&str> = kb
        .rules()
        .iter()
        .map(|r| r.consequent().functor())
        .collect();
    let mut orphans: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for rule in kb.rules() {
        for a in rule.antecedents() {
            if !defined.contains(a.functor()) {
                orphans.entry(a.functor()).or_default().insert(rule.id());
            }
        }
    }
    orphans
        .into_iter()
        .map(|(symbol, rules)| Violation {
            constraint: Constraint::C1,
            rule_ids: rules.into_iter().map(String::from).collect(),
            symbol: Some(symbol.to_string()),
            detail: format!("antecedent `{symbol}` is not the consequent of any rule"),
        })
        .collect()
}

/// Antecedent variables must all occur in the consequent.
pub fn check_c2(kb: &KnowledgeBase) -> Vec<Violation> {
    let mut out = Vec::new();
    for rule in kb.rules() {
        let bound = rule.consequent().variables();
        let mut free: Vec<&str> = Vec::new();
        for a in rule.antecedents() {
            for v in a.variables() {
                if !bound.contains(&v) && !free.contains(&v) {
                    free.push(v);
                }
            }
        }
        if !free.is_empty() {
            out.push(Violation {
                constraint: Constraint::C2,
                rule_ids: vec![rule.id().to_string()],
                symbol: None,
                detail: format!(
                    "antecedent variable(s) {} do not occur in consequent `{}`",
                    free.iter()
                        .map(|v| format!("`{v}`"))
                        .collect::<Vec<_>>()
                        .join(", "),
                    rule.consequent()
                ),
            });
        }
    }
    out
}

/// No two rules may conclude a common ground term.
pub fn check_c3(kb: &KnowledgeBase) -> Vec<Violation> {
    let rules = kb.rules();
    let mut out = Vec::new();
    for (i, a) in rules.iter().enumerate() {
        for b in &rules[i + 1..] {
            if unify_apart(a.consequent(), b.consequent()) {
                out.push(Violation {
                    constraint: Constraint::C3,
                    rule_ids: vec![a.id().to_string(), b.id().to_string()],
                    symbol: None,
                    detail: format!(
                        "consequents `{}` and `{}` share ground instances",
                        a.consequent(),
                        b.consequent()
                    ),
                });
            }
        }
    }
    out
}

/// The symbol dependency graph must be acyclic; one violation per cyclic
/// strongly connected component.
pub fn check_c4(kb: &KnowledgeBase) -> Vec<Violation> {
    let mut graph: DiGraph<&str, ()> = DiGraph::new();
    let mut index: BTreeMap<&str, NodeIndex> = BTreeMap::new();
    for rule in kb.rules() {
        let c = symbol_node(&mut graph, &mut index, rule.consequent().functor());
        for a in rule.antecedents() {
            let f = symbol_node(&mut graph, &mut index, a.functor());
            if !graph.contains_edge(f, c) {
                graph.add_edge(f, c, ());
            }
        }
    }

    let mut out = Vec::new();
    for scc in tarjan_scc(&graph) {
        let members: BTreeSet<&str> = scc.iter().map(|&n| graph[n]).collect();
        let cyclic = scc.len() > 1 || graph.contains_edge(scc[0], scc[0]);
        if !cyclic {
            continue;
        }
        let rules: Vec<String> = kb
            .rules()
            .iter()
            .filter(|r| {
                members.contains(r.consequent().functor())
                    && r.antecedents()
                        .iter()
                        .any(|a| members.contains(a.functor()))
            })
            .map(|r| r.id().to_string())
            .collect();
        let cycle = find_cycle(&graph, &scc);
        out.push(Violation {
            constraint: Constraint::C4,
            rule_ids: rules,
            symbol: None,
            detail: format!("dependency cycle {}", cycle.join(" -> ")),
        });
    }
    out
}

fn symbol_node<'k>(
    graph: &mut DiGraph<&'k str, ()>,
    index: &mut BTreeMap<&'k str, NodeIndex>,
    name: &'k str,
) -> NodeIndex {
    *index.entry(name).or_insert_with(|| graph.add_node(name))
}

/// A concrete cycle through the lexicographically smallest member of `scc`.
fn find_cycle<'g>(graph: &DiGraph<&'g str, ()>, scc: &[NodeIndex]) -> Vec<&'g str> {
    let members: BTreeSet<NodeIndex> = scc.iter().copied().collect();
    let start = *scc
        .iter()
        .min_by_key(|&&n| graph[n])
        .expect("non-empty scc");
    // BFS inside the component back to `start`.
    let mut prev: BTreeMap<NodeIndex, NodeIndex> = BTreeMap::new();
    let mut queue = std::collections::VecDeque::from([start]);
    let mut end = None;
    'search: while let Some(u) = queue.pop_front() {
        let mut succ: Vec<NodeIndex> = graph.neighbors(u).filter(|n| members.contains(n)).collect();
        succ.sort_by_key(|&n| graph[n]);
        for v in succ {
            if v == start {
                end = Some(u);
                break 'search;
            }
            if let std::collections::btree_map::Entry::Vacant(e) = prev.entry(v) {
                e.insert(u);
                queue.push_back(v);
            }
        }
    }
    let mut path = vec![graph[start]];
    let mut cur = end.expect("component is cyclic");
    let mut back = Vec::new();
    while cur != start {
        back.push(graph[cur]);
        cur = prev[&cur];
    }
    path.extend(back.into_iter().rev());
    path.push(graph[start]);
    path
}

/// Matrix shape, entry bounds and row normalization.
pub fn check_matrices(kb: &KnowledgeBase) -> Vec<Violation> {
    kb.rules()
        .iter()
        .filter_map(|rule| {
            let problems = rule.matrix().problems();
            if problems.is_empty() {
                return None;
            }
            Some(Violation {
                constraint: Constraint::Matrix,
                rule_ids: vec![rule.id().to_string()],
                symbol: None,
                detail: problems
                    .iter()
                    .map(|p| p.to_string())
                    .collect::<Vec<_>>()
                    .join("; "),
            })
        })
        .collect()
}

/// Runs every check. Violations are ordered by rule ids, then constraint.
pub fn validate(kb: &KnowledgeBase) -> ValidationReport {
    let mut violations: Vec<Violation> = [check_c1, check_c2, check_c3, check_c4, check_matrices]
        .iter()
        .flat_map(|check| check(kb))
        .collect();
    violations.sort_by(|a, b| {
        a.rule_ids
            .cmp(&b.rule_ids)
            .then(a.constraint.cmp(&b.constraint))
    });
    ValidationReport {
        ok: violations.is_empty(),
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{Arg, Term};
    use crate::parser::parse_kb;

    fn fixture(name: &str) -> KnowledgeBase {
        let path = format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
        parse_kb(&std::fs::read_to_string(path).unwrap()).unwrap()
    }

    fn v(name: &str) -> Arg {
        Arg::var(name)
    }

    fn binary_kb(symbols: &[(&str, usize)]) -> KnowledgeBase {
        let mut kb = KnowledgeBase::new();
        kb.add_range("pm", ["+", "-"]).unwrap();
        for (s, arity) in symbols {
            let params: Vec<String> = (0..*arity).map(|i| format!("p{i}")).collect();
            kb.add_symbol(*s, params, "pm").unwrap();
        }
        kb
    }

    fn copy_entries(parents: usize) -> Vec<f64> {
        (0..1usize << parents).flat_map(|_| [0.5, 0.5]).collect()
    }

    #[test]
    fn burglary_passes_everything() {
        let kb = fixture("burglary.bkb");
        assert!(check_c1(&kb).is_empty());
        assert!(check_c2(&kb).is_empty());
        assert!(check_c3(&kb).is_empty());
        assert!(check_c4(&kb).is_empty());
        assert!(check_matrices(&kb).is_empty());
        let report = validate(&kb);
        assert!(report.ok);
        assert_eq!(report.render_text(), "OK\n");
    }

    #[test]
    fn empty_kb_is_vacuously_valid() {
        let kb = KnowledgeBase::new();
        assert!(check_c1(&kb).is_empty());
        assert!(validate(&kb).ok);
    }

    #[test]
    fn c1_missing_prior() {
        let mut kb = binary_kb(&[("f", 1), ("g", 1)]);
        kb.add_rule_with_entries(
            "R",
            Term::new("g", vec![v("x")]),
            vec![Term::new("f", vec![v("x")])],
            copy_entries(1),
        )
        .unwrap();
        let out = check_c1(&kb);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].symbol.as_deref(), Some("f"));
        assert_eq!(out[0].rule_ids, ["R"]);
    }

    #[test]
    fn c2_examples() {
        assert_eq!(check_c2(&fixture("c2_unbound_var.bkb")).len(), 1);

        let mut kb = binary_kb(&[("anc", 2)]);
        kb.add_rule_with_entries(
            "T",
            Term::new("anc", vec![v("x"), v("z")]),
            vec![
                Term::new("anc", vec![v("x"), v("y")]),
                Term::new("anc", vec![v("y"), v("z")]),
            ],
            copy_entries(2),
        )
        .unwrap();
        let out = check_c2(&kb);
        assert_eq!(out.len(), 1);
        assert!(out[0].detail.contains("`y`"), "{}", out[0].detail);
        assert!(!out[0].detail.contains("`x`"));
    }

    #[test]
    fn c3_examples() {
        let out = check_c3(&fixture("c3_shared_head.bkb"));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].rule_ids, ["Rg1", "Rg2"]);

        let mut kb = binary_kb(&[("g", 1)]);
        kb.add_rule_with_entries("Ra", Term::ground("g", ["a"]), vec![], vec![0.5, 0.5])
            .unwrap();
        kb.add_rule_with_entries("Rb", Term::ground("g", ["b"]), vec![], vec![0.5, 0.5])
            .unwrap();
        assert!(check_c3(&kb).is_empty());
        kb.add_rule_with_entries("Rx", Term::new("g", vec![v("x")]), vec![], vec![0.5, 0.5])
            .unwrap();
        assert_eq!(check_c3(&kb).len(), 2);
    }

    #[test]
    fn c4_examples() {
        let out = check_c4(&fixture("c4_cycle.bkb"));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].detail, "dependency cycle f -> g -> f");
        assert_eq!(out[0].rule_ids, ["Rf", "Rg"]);

        let mut kb = binary_kb(&[("f", 1)]);
        kb.add_rule_with_entries(
            "S",
            Term::new("f", vec![v("x")]),
            vec![Term::new("f", vec![v("x")])],
            copy_entries(1),
        )
        .unwrap();
        let out = check_c4(&kb);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].detail, "dependency cycle f -> f");
    }

    #[test]
    fn c4_reports_each_component() {
        let mut kb = binary_kb(&[("a", 0), ("b", 0), ("c", 0), ("d", 0), ("e", 0)]);
        let t = Term::atom;
        kb.add_rule_with_entries("Ra", t("a"), vec![t("b")], copy_entries(1))
            .unwrap();
        kb.add_rule_with_entries("Rb", t("b"), vec![t("c")], copy_entries(1))
            .unwrap();
        kb.add_rule_with_entries("Rc", t("c"), vec![t("a"), t("e")], copy_entries(2))
            .unwrap();
        kb.add_rule_with_entries("Rd", t("d"), vec![t("d")], copy_entries(1))
            .unwrap();
        kb.add_rule_with_entries("Re", t("e"), vec![], vec![0.5, 0.5])
            .unwrap();
        let mut details: Vec<String> = check_c4(&kb).into_iter().map(|v| v.detail).collect();
        details.sort();
        assert_eq!(
            details,
            [
                "dependency cycle a -> c -> b -> a",
                "dependency cycle d -> d"
            ]
        );
    }

    #[test]
    fn matrix_examples() {
        let kb = fixture("burglary.bkb");
        assert_eq!(kb.rule("R2").unwrap().matrix().entries().len(), 12);
        assert!(check_matrices(&kb).is_empty());

        let mut kb = binary_kb(&[("p", 0), ("q", 0)]);
        kb.add_rule_with_entries("Rp", Term::atom("p"), vec![], vec![0.5, 0.6])
            .unwrap();
        kb.add_rule_with_entries("Rq", Term::atom("q"), vec![], vec![1.0, 0.0])
            .unwrap();
        let out = check_matrices(&kb);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].rule_ids, ["Rp"]);
        assert!(out[0].detail.contains("1.1"), "{}", out[0].detail);

        let mut kb = binary_kb(&[("p", 0)]);
        kb.add_rule_with_entries("Rp", Term::atom("p"), vec![], vec![1.0])
            .unwrap();
        assert_eq!(check_matrices(&kb).len(), 1);
    }

    #[test]
    fn combined_pathologies() {
        let text = format!(
            "{}\n{}",
            std::fs::read_to_string(format!("{}/fixtures/c2_unbound_var.bkb", env!("CARGO_MANIFEST_DIR"))).unwrap(),
            "var f1(x) : pm\nvar f2(x) : pm\nvar h(x) : pm\n\
             rule Rf1 { f1(x) : cpt [0.5 0.5] }\nrule Rf2 { f2(x) : cpt [0.5 0.5] }\n\
             rule Rh1 { h(x) | f1(x) : cpt [0.5 0.5 0.5 0.5] }\nrule Rh2 { h(x) | f2(x) : cpt [0.5 0.5 0.5 0.5] }"
                .replace("range pm { +, - }", "")
        );
        let report = validate(&parse_kb(&text).unwrap());
        assert!(!report.ok);
        assert!(report.violations.len() >= 2);
        assert_eq!(report.violations_of(Constraint::C2).count(), 1);
        assert_eq!(report.violations_of(Constraint::C3).count(), 1);
        let text = report.render_text();
        assert!(text.contains("C3 [Rh1, Rh2]"), "{text}");
    }

    #[test]
    fn fixtures_fail_exactly_one_constraint() {
        for (file, c) in [
            ("c2_unbound_var.bkb", Constraint::C2),
            ("c3_shared_head.bkb", Constraint::C3),
            ("c4_cycle.bkb", Constraint::C4),
        ] {
            let report = validate(&fixture(file));
            assert_eq!(report.constraints(), BTreeSet::from([c]), "{file}");
        }
    }

    #[test]
    fn report_serializes_flat_records() {
        let report = validate(&fixture("c3_shared_head.bkb"));
        let json = serde_json::to_value(&report).unwrap();
        assert_eq!(json["ok"], false);
        assert_eq!(json["violations"][0]["constraint"], "C3");
        assert_eq!(json["violations"][0]["rule_ids"][1], "Rg2");
    }

    #[test]
    fn ordering_ignores_declaration_order() {
        let kb = fixture("c3_shared_head.bkb");
        let text = crate::parser::serialize_kb(&kb);
        let mut lines: Vec<&str> = text.lines().collect();
        let rules_start = lines.iter().position(|l| l.starts_with("rule")).unwrap();
        lines[rules_start..].reverse();
        let shuffled = parse_kb(&lines.join("\n")).unwrap();
        let mut a = validate(&kb);
        let mut b = validate(&shuffled);
        // C3 names the pair in declaration order; normalize before comparing.
        for r in [&mut a, &mut b] {
            for v in &mut r.violations {
                v.rule_ids.sort();
                v.detail.clear();
            }
        }
        assert_eq!(a, b);
    }
}
