use std::collections::BTreeSet;

use bkb::analysis::{
    d_separated, d_separated_by_paths, enumerate_paths, joint_oracle, marginal_oracle,
    markov_check, Assignment, JointTable, DEFAULT_TOL,
};
use bkb::generator::{generate_network, GroundNetwork, NetworkDump};
use bkb::inference::variable_elimination;
use bkb::parser::{parse_kb, parse_query_file};
use bkb::validator::validate;
use bkb::{parse_ground_term, KnowledgeBase, Term};

fn kb() -> KnowledgeBase {
    parse_kb(include_str!("../fixtures/burglary.bkb")).unwrap()
}

fn holmes_net() -> GroundNetwork {
    let kb = kb();
    let q = parse_query_file(
        &kb,
        include_str!("../fixtures/burglary.bqe"),
        "burglary.bqe",
    )
    .unwrap();
    generate_network(&kb, &q.query.unwrap(), &q.evidence).unwrap()
}

fn t(s: &str) -> Term {
    parse_ground_term(s).unwrap()
}

fn ts(items: &[&str]) -> Vec<Term> {
    items.iter().map(|s| t(s)).collect()
}

#[test]
fn fixture_is_valid() {
    let kb = kb();
    assert!(validate(&kb).ok);
    assert_eq!(kb.rules().len(), 9);
    let sizes: Vec<usize> = kb
        .rules()
        .iter()
        .map(|r| r.matrix().entries().len())
        .collect();
    assert_eq!(sizes, [6, 12, 6, 8, 8, 2, 3, 3, 2]);
}

const HOLMES_DOT: &str = r#"digraph network {
  "Alarm(Holmes)";
  "Burglary(Holmes)" [shape=ellipse, style=bold];
  "Neighbor(Moriarty,Holmes)" [shape=box];
  "Neighbor(Watson,Holmes)" [shape=box];
  "Neighborhood(Holmes)";
  "Phone-call(Moriarty,Holmes)" [shape=box];
  "Phone-call(Watson,Holmes)" [shape=box];
  "Quake";
  "Radio" [shape=box];
  "Alarm(Holmes)" -> "Phone-call(Moriarty,Holmes)";
  "Alarm(Holmes)" -> "Phone-call(Watson,Holmes)";
  "Burglary(Holmes)" -> "Alarm(Holmes)";
  "Neighbor(Moriarty,Holmes)" -> "Phone-call(Moriarty,Holmes)";
  "Neighbor(Watson,Holmes)" -> "Phone-call(Watson,Holmes)";
  "Neighborhood(Holmes)" -> "Burglary(Holmes)";
  "Quake" -> "Alarm(Holmes)";
  "Quake" -> "Radio";
}
"#;

#[test]
fn holmes_net_dot_golden() {
    assert_eq!(holmes_net().export_dot(), HOLMES_DOT);
}

#[test]
fn holmes_net_dump_round_trips_through_json() {
    let net = holmes_net();
    let json = serde_json::to_string(&net.dump()).unwrap();
    let back =
        GroundNetwork::from_dump(&serde_json::from_str::<NetworkDump>(&json).unwrap()).unwrap();
    assert_eq!(back.export_dot(), HOLMES_DOT);
    let (a, b) = (
        variable_elimination(&net).unwrap(),
        variable_elimination(&back).unwrap(),
    );
    assert_eq!(a.probs, b.probs);
}

// Exact rational enumeration of the fixture, done outside this crate.
const P_BURGLARY: f64 = 0.09204800477119567;
const P_EVIDENCE: f64 = 0.029890520135;

#[test]
fn burglary_posterior_matches_frozen_value() {
    let p = variable_elimination(&holmes_net()).unwrap();
    assert!((p.prob("+").unwrap() - P_BURGLARY).abs() < 1e-12);
    assert!((p.prob("-").unwrap() - (1.0 - P_BURGLARY)).abs() < 1e-12);
    assert!((p.evidence_probability - P_EVIDENCE).abs() < 1e-14);
}

#[test]
fn burglary_posterior_matches_oracle() {
    let net = holmes_net();
    let ve = variable_elimination(&net).unwrap();
    let oracle = marginal_oracle(&net, &[t("Burglary(Holmes)")], &net.evidence())
        .unwrap()
        .unwrap();
    for (a, b) in ve.probs.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn quake_given_radio_matches_frozen_value() {
    let kb = kb();
    let net = generate_network(&kb, &t("Quake"), &[(t("Radio"), "+".into())]).unwrap();
    let p = variable_elimination(&net).unwrap();
    let expected = [0.49411764705882355, 0.2823529411764706, 0.2235294117647059];
    for (a, b) in p.probs.iter().zip(expected) {
        assert!((a - b).abs() < 1e-14);
    }
    assert!((p.evidence_probability - 0.425).abs() < 1e-15);
}

#[test]
fn prior_query_is_rule_prior() {
    let kb = kb();
    let net = generate_network(&kb, &t("Quake"), &[]).unwrap();
    let p = variable_elimination(&net).unwrap();
    for (a, b) in p.probs.iter().zip([0.7, 0.2, 0.1]) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn joint_sums_to_one_over_all_assignments() {
    let net = holmes_net();
    let table = JointTable::new(&net).unwrap();
    // seven binary nodes, two ternary
    assert_eq!(table.len(), 1152);
    assert!((table.total() - 1.0).abs() < 1e-12);
}

#[test]
fn joint_oracle_on_one_assignment() {
    let net = holmes_net();
    let mut a = Assignment::new();
    for (name, v) in [
        ("Neighborhood(Holmes)", "b"),
        ("Burglary(Holmes)", "+"),
        ("Quake", "t"),
        ("Radio", "+"),
        ("Alarm(Holmes)", "+"),
        ("Neighbor(Watson,Holmes)", "+"),
        ("Phone-call(Watson,Holmes)", "+"),
        ("Neighbor(Moriarty,Holmes)", "-"),
        ("Phone-call(Moriarty,Holmes)", "-"),
    ] {
        a.insert(t(name), v.to_string());
    }
    let expected = 0.2 * 0.05 * 0.7 * 0.3 * 0.95 * 0.7 * 0.8 * 0.3 * 0.95;
    assert!((joint_oracle(&net, &a).unwrap() - expected).abs() < 1e-15);
}

#[test]
fn dsep_examples_on_holmes_net() {
    let net = holmes_net();
    assert!(d_separated(
        &net,
        &ts(&["Radio"]),
        &ts(&["Quake"]),
        &ts(&["Burglary(Holmes)"])
    )
    .unwrap());
    assert!(d_separated(&net, &ts(&["Burglary(Holmes)"]), &[], &ts(&["Quake"])).unwrap());
    // observing a call opens the collider at the alarm
    assert!(!d_separated(
        &net,
        &ts(&["Burglary(Holmes)"]),
        &ts(&["Phone-call(Watson,Holmes)"]),
        &ts(&["Quake"])
    )
    .unwrap());
    for path in enumerate_paths(&net, &t("Radio"), &t("Burglary(Holmes)")).unwrap() {
        assert!(path.nodes.contains(&t("Quake")), "{}", path.render());
    }
}

#[test]
fn markov_check_is_clean_on_holmes_net() {
    assert!(markov_check(&holmes_net(), DEFAULT_TOL).unwrap().is_empty());
}

#[test]
fn dsep_agrees_with_paths_on_all_single_triples() {
    let net = holmes_net();
    let terms: Vec<Term> = net.terms().into_iter().collect();
    for x in &terms {
        for y in &terms {
            if x >= y {
                continue;
            }
            let rest: Vec<&Term> = terms.iter().filter(|t| *t != x && *t != y).collect();
            // every subset of the remaining seven nodes as Z
            for bits in 0u32..(1 << rest.len()) {
                let z: Vec<Term> = rest
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| bits & (1 << i) != 0)
                    .map(|(_, t)| (*t).clone())
                    .collect();
                let a = d_separated(&net, std::slice::from_ref(x), &z, std::slice::from_ref(y))
                    .unwrap();
                let b = d_separated_by_paths(
                    &net,
                    std::slice::from_ref(x),
                    &z,
                    std::slice::from_ref(y),
                )
                .unwrap();
                assert_eq!(a, b, "{x} {y} {z:?}");
            }
        }
    }
}

#[test]
fn report_and_recovered_are_never_generated_for_this_query() {
    let net = holmes_net();
    let absent: BTreeSet<Term> = ts(&["Report(Holmes)", "Recovered(Holmes)"])
        .into_iter()
        .collect();
    assert!(net.terms().is_disjoint(&absent));
}
