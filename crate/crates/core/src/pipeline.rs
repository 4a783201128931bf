//! Text in, posterior out: parse, validate, generate, eliminate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::analysis::{AnalysisError, JointTable};
use crate::generator::{generate_network, GroundNetwork, NetError};
use crate::inference::{variable_elimination_with, EliminationOrder, InferenceError, Posterior};
use crate::kb::{KnowledgeBase, Term};
use crate::parser::{parse_evidence, parse_kb, parse_query, ParseError};
use crate::synth::randomize_kb;
use crate::validator::{validate, ValidationReport};

#[derive(Debug, Clone, Default)]
pub struct Options {
    /// Generate even when validation fails.
    pub force: bool,
    /// Re-check the generated network for cycles.
    pub c4_ground: bool,
    pub order: EliminationOrder,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("invalid knowledge base:\n{}", .0.render_text().trim_end())]
    Invalid(ValidationReport),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

impl PipelineError {
    /// 1 for constraint violations, 2 for malformed input, 3 for failures
    /// while generating or evaluating the network.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Invalid(_) => 1,
            PipelineError::Parse(_) => 2,
            PipelineError::Net(_) | PipelineError::Inference(_) | PipelineError::Analysis(_) => 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub kb: KnowledgeBase,
    pub report: ValidationReport,
    pub network: GroundNetwork,
    pub posterior: Posterior,
}

/// Validates `kb` (refusing to continue on violations unless forced) and
/// generates the network for the query and evidence.
pub fn build_network(
    kb: &KnowledgeBase,
    query: &Term,
    evidence: &[(Term, String)],
    opts: &Options,
) -> Result<(ValidationReport, GroundNetwork), PipelineError> {
    let report = validate(kb);
    if !report.ok && !opts.force {
        return Err(PipelineError::Invalid(report));
    }
    let network = generate_network(kb, query, evidence)?;
    if opts.c4_ground {
        network.check_acyclic()?;
    }
    Ok((report, network))
}

pub fn run(
    kb: &KnowledgeBase,
    query: &Term,
    evidence: &[(Term, String)],
    opts: &Options,
) -> Result<(ValidationReport, GroundNetwork, Posterior), PipelineError> {
    let (report, network) = build_network(kb, query, evidence, opts)?;
    let posterior = variable_elimination_with(&network, &opts.order)?;
    Ok((report, network, posterior))
}

/// The whole chain from source text.
pub fn posterior(
    kb_text: &str,
    query_text: &str,
    evidence_text: &str,
    opts: &Options,
) -> Result<Outcome, PipelineError> {
    let kb = parse_kb(kb_text)?;
    let query = parse_query(&kb, query_text)?;
    let evidence = parse_evidence(&kb, evidence_text)?;
    let (report, network, posterior) = run(&kb, &query, &evidence, opts)?;
    Ok(Outcome {
        kb,
        report,
        network,
        posterior,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedDeviation {
    pub seed: u64,
    /// Largest `|VE - oracle|` over the query's values; infinite when only
    /// one side considers the evidence possible.
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheck {
    pub tol: f64,
    pub runs: Vec<SeedDeviation>,
    pub max_deviation: f64,
    pub worst_seed: Option<u64>,
    pub ok: bool,
}

/// For each seed, refills every link matrix of `kb` at random, regenerates
/// the network and compares variable elimination with full enumeration.
pub fn oracle_check(
    kb: &KnowledgeBase,
    query: &Term,
    evidence: &[(Term, String)],
    seeds: std::ops::Range<u64>,
    tol: f64,
    opts: &Options,
) -> Result<OracleCheck, PipelineError> {
    build_network(kb, query, evidence, opts)?;
    let mut runs = Vec::new();
    for seed in seeds {
        let filled = randomize_kb(kb, &mut ChaCha8Rng::seed_from_u64(seed));
        let net = generate_network(&filled, query, evidence)?;
        let table = JointTable::new(&net)?;
        let oracle = table.marginal(&[net.query_id()], net.evidence_ids());
        let deviation = match (variable_elimination_with(&net, &opts.order), oracle) {
            (Ok(ve), Some(o)) => ve
                .probs
                .iter()
                .zip(&o)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
            (Err(InferenceError::ZeroEvidence), None) => 0.0,
            (Err(e), Some(_)) => return Err(e.into()),
            _ => f64::INFINITY,
        };
        runs.push(SeedDeviation { seed, deviation });
    }
    let worst = runs
        .iter()
        .max_by(|a, b| a.deviation.total_cmp(&b.deviation));
    let max_deviation = worst.map_or(0.0, |w| w.deviation);
    Ok(OracleCheck {
        tol,
        max_deviation,
        worst_seed: worst.map(|w| w.seed),
        ok: max_deviation <= tol,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::validator::Constraint;

    fn fixture(name: &str) -> String {
        std::fs::read_to_string(format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
    }

    const EVIDENCE: &str = "Radio=+, Neighbor(Watson,Holmes)=+, Phone-call(Watson,Holmes)=+, \
                            Neighbor(Moriarty,Holmes)=+, Phone-call(Moriarty,Holmes)=+";

    #[test]
    fn burglary_end_to_end() {
        let out = posterior(
            &fixture("burglary.bkb"),
            "Burglary(Holmes)",
            EVIDENCE,
            &Options::default(),
        )
        .unwrap();
        assert_eq!(out.network.len(), 9);
        assert_eq!(out.posterior.probs.len(), 2);
        assert!((out.posterior.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(
            out.posterior.evidence_probability > 0.0 && out.posterior.evidence_probability <= 1.0
        );
    }

    #[test]
    fn query_equal_to_evidence() {
        let out = posterior(
            &fixture("burglary.bkb"),
            "Radio",
            "Radio=-",
            &Options::default(),
        )
        .unwrap();
        assert_eq!(out.posterior.probs, vec![0.0, 1.0]);
    }

    #[test]
    fn invalid_kb_stops_before_generation() {
        let err = posterior(
            &fixture("c3_shared_head.bkb"),
            "g(A)",
            "",
            &Options::default(),
        )
        .unwrap_err();
        match &err {
            PipelineError::Invalid(r) => assert_eq!(r.constraints(), [Constraint::C3].into()),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn force_reaches_the_generator() {
        let opts = Options {
            force: true,
            ..Options::default()
        };
        let err = posterior(&fixture("c4_cycle.bkb"), "f(A)", "", &opts).unwrap_err();
        assert!(matches!(
            err,
            PipelineError::Net(NetError::CycleDetected(_))
        ));
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn oracle_check_on_burglary() {
        let kb = parse_kb(&fixture("burglary.bkb")).unwrap();
        let q =
            crate::parser::parse_query_file(&kb, &fixture("burglary.bqe"), "burglary.bqe").unwrap();
        let query = q.query.unwrap();
        let report =
            oracle_check(&kb, &query, &q.evidence, 0..10, 1e-9, &Options::default()).unwrap();
        assert!(report.ok, "{report:?}");
        assert_eq!(report.runs.len(), 10);
        let strict =
            oracle_check(&kb, &query, &q.evidence, 0..10, 0.0, &Options::default()).unwrap();
        assert_eq!(strict.ok, strict.max_deviation == 0.0);
    }

    #[test]
    fn parse_errors_exit_two() {
        let err = posterior(
            &fixture("burglary.bkb"),
            "Burglary(x)",
            "",
            &Options::default(),
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
