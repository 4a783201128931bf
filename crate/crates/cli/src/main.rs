use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use bkb::analysis::{dsep_report, AnalysisError};
use bkb::format::sig17;
use bkb::generator::GroundNetwork;
use bkb::parser::{parse_evidence, parse_kb_named, parse_query, parse_query_file, ParseError};
use bkb::pipeline::{build_network, oracle_check, Options, PipelineError};
use bkb::validator::{validate, ValidationReport};
use bkb::{KnowledgeBase, Term};

/// Writes to stdout; a closed pipe ends the program quietly.
fn emit(args: std::fmt::Arguments) {
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = stdout.write_fmt(args).and_then(|_| stdout.flush()) {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        eprintln!("error: {e}");
        std::process::exit(2);
    }
}

macro_rules! out {
    ($($arg:tt)*) => { emit(format_args!($($arg)*)) };
}

macro_rules! outln {
    ($($arg:tt)*) => { emit(format_args!("{}\n", format_args!($($arg)*))) };
}

#[derive(Parser)]
#[command(
    name = "bkb",
    version,
    about = "Compile Bayesian knowledge bases and answer queries against them"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a knowledge base against the rule constraints.
    Validate {
        kb: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Compute P(query | evidence).
    Query {
        #[command(flatten)]
        input: Input,
        /// Write the generated network as JSON.
        #[arg(long, value_name = "PATH")]
        dump_net: Option<PathBuf>,
        /// Write the generated network in Graphviz format.
        #[arg(long, value_name = "PATH")]
        dot: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Test whether Z d-separates X from Y in the generated network.
    Dsep {
        #[command(flatten)]
        input: Input,
        #[arg(long = "x", value_name = "TERM", required = true)]
        x: Vec<String>,
        #[arg(long = "z", value_name = "TERM")]
        z: Vec<String>,
        #[arg(long = "y", value_name = "TERM", required = true)]
        y: Vec<String>,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Print the generated network: Graphviz for text, the node dump for JSON.
    Export {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_name = "PATH")]
        dump_net: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        dot: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Compare variable elimination with brute-force enumeration under
    /// randomly refilled link matrices.
    OracleCheck {
        #[command(flatten)]
        input: Input,
        /// Number of random fills.
        #[arg(long, default_value_t = 50)]
        seeds: u64,
        /// First seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
}

#[derive(Args)]
struct Input {
    /// Knowledge base file.
    kb: PathBuf,
    /// Ground query term; may instead come from --bqe.
    query: Option<String>,
    /// Evidence as TERM=VALUE; repeatable.
    #[arg(short = 'e', long = "evidence", value_name = "TERM=VALUE")]
    evidence: Vec<String>,
    /// Query file with `query:` and `evidence:` lines.
    #[arg(long, value_name = "PATH")]
    bqe: Option<PathBuf>,
    /// Run even if the knowledge base fails validation.
    #[arg(long)]
    force: bool,
    /// Re-check the generated network for cycles.
    #[arg(long = "c4-ground")]
    c4_ground: bool,
}

#[derive(Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
enum Format {
    #[default]
    Text,
    Json,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn io(path: &Path, err: std::io::Error) -> Failure {
        Failure {
            code: 2,
            message: format!("{}: {err}", path.display()),
        }
    }
}

impl From<ParseError> for Failure {
    fn from(e: ParseError) -> Self {
        Failure {
            code: 2,
            message: e.to_string(),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        Failure {
            code: 3,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(command: Command) -> Result<u8, Failure> {
    match command {
        Command::Validate { kb, format } => {
            let report = validate(&load_kb(&kb)?);
            match format {
                Format::Text => out!("{}", report.render_text()),
                Format::Json => outln!("{}", to_json(&report)),
            }
            Ok(if report.ok { 0 } else { 1 })
        }
        Command::Query {
            input,
            dump_net,
            dot,
            format,
        } => {
            let loaded = Loaded::new(&input)?;
            let (network, _) = loaded.network(&input)?;
            write_outputs(&network, dump_net.as_deref(), dot.as_deref())?;
            let posterior =
                bkb::inference::variable_elimination(&network).map_err(PipelineError::from)?;
            match format {
                Format::Text => out!("{}", posterior.render_text()),
                Format::Json => {
                    let evidence: Vec<_> = network
                        .evidence()
                        .into_iter()
                        .map(|(t, v)| json!({ "term": t.to_string(), "value": v }))
                        .collect();
                    let record = posterior.record();
                    outln!(
                        "{}",
                        json!({
                            "query": record.query,
                            "evidence": evidence,
                            "distribution": record.distribution,
                            "evidence_probability": record.evidence_probability,
                            "network_nodes": network.len(),
                        })
                    );
                }
            }
            Ok(0)
        }
        Command::Dsep {
            input,
            x,
            z,
            y,
            format,
        } => {
            let loaded = Loaded::new(&input)?;
            let (network, _) = loaded.network(&input)?;
            let terms = |items: &[String]| -> Result<Vec<Term>, Failure> {
                items
                    .iter()
                    .map(|s| Ok(parse_query(&loaded.kb, s)?))
                    .collect()
            };
            let (xs, zs, ys) = (terms(&x)?, terms(&z)?, terms(&y)?);
            let result = dsep_report(&network, &xs, &zs, &ys)?;
            let names = |v: &[Term]| v.iter().map(|t| t.to_string()).collect::<Vec<_>>();
            match format {
                Format::Text => {
                    outln!("{}", result.separated);
                    match &result.witness {
                        Some(path) => outln!("active trail: {}", path.render()),
                        None if zs.is_empty() => outln!("no active trail"),
                        None => outln!("blocked by: {}", names(&zs).join(", ")),
                    }
                }
                Format::Json => outln!(
                    "{}",
                    json!({
                        "x": names(&xs),
                        "z": names(&zs),
                        "y": names(&ys),
                        "separated": result.separated,
                        "witness": result.witness.as_ref().map(|p| p.render()),
                    })
                ),
            }
            Ok(0)
        }
        Command::Export {
            input,
            dump_net,
            dot,
            format,
        } => {
            let loaded = Loaded::new(&input)?;
            let (network, _) = loaded.network(&input)?;
            write_outputs(&network, dump_net.as_deref(), dot.as_deref())?;
            match format {
                Format::Text => out!("{}", network.export_dot()),
                Format::Json => outln!("{}", to_json(&network.dump())),
            }
            Ok(0)
        }
        Command::OracleCheck {
            input,
            seeds,
            seed,
            tol,
            format,
        } => {
            let loaded = Loaded::new(&input)?;
            let (query, evidence) = loaded.query_and_evidence(&input)?;
            let opts = options(&input);
            warn_if_invalid(&loaded.kb, &opts)?;
            let end = seed.checked_add(seeds).ok_or_else(|| Failure {
                code: 2,
                message: "seed range overflows".into(),
            })?;
            let report = oracle_check(&loaded.kb, &query, &evidence, seed..end, tol, &opts)?;
            match format {
                Format::Text => {
                    outln!("seeds: {}..{}", seed, end);
                    outln!("max deviation: {}", sig17(report.max_deviation));
                    if let Some(s) = report.worst_seed {
                        outln!("worst seed: {s}");
                    }
                    outln!("tolerance: {tol:e}");
                    outln!("{}", if report.ok { "OK" } else { "FAILED" });
                }
                Format::Json => outln!("{}", to_json(&report)),
            }
            Ok(if report.ok { 0 } else { 1 })
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("records serialize")
}

fn load_kb(path: &Path) -> Result<KnowledgeBase, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    Ok(parse_kb_named(&text, &path.display().to_string())?)
}

fn options(input: &Input) -> Options {
    Options {
        force: input.force,
        c4_ground: input.c4_ground,
        ..Options::default()
    }
}

fn warn_if_invalid(kb: &KnowledgeBase, opts: &Options) -> Result<(), Failure> {
    let report = validate(kb);
    if report.ok {
        return Ok(());
    }
    if !opts.force {
        return Err(PipelineError::Invalid(report).into());
    }
    eprint!(
        "warning: continuing with an invalid knowledge base\n{}",
        indent(&report)
    );
    Ok(())
}

fn indent(report: &ValidationReport) -> String {
    report
        .render_text()
        .lines()
        .map(|l| format!("  {l}\n"))
        .collect()
}

struct Loaded {
    kb: KnowledgeBase,
}

impl Loaded {
    fn new(input: &Input) -> Result<Loaded, Failure> {
        Ok(Loaded {
            kb: load_kb(&input.kb)?,
        })
    }

    /// The query from the command line or the query file, and the
    /// evidence from both; `-e` values replace query-file values for the
    /// same term.
    fn query_and_evidence(&self, input: &Input) -> Result<(Term, Vec<(Term, String)>), Failure> {
        let mut query = None;
        let mut evidence: Vec<(Term, String)> = Vec::new();
        if let Some(path) = &input.bqe {
            let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
            let file = parse_query_file(&self.kb, &text, &path.display().to_string())?;
            query = file.query;
            evidence = file.evidence;
        }
        if let Some(q) = &input.query {
            query = Some(parse_query(&self.kb, q)?);
        }
        for item in &input.evidence {
            for (term, value) in parse_evidence(&self.kb, item)? {
                match evidence.iter_mut().find(|(t, _)| *t == term) {
                    Some((_, old)) if *old != value => {
                        eprintln!("warning: evidence {term}={value} replaces {term}={old} from the query file");
                        *old = value;
                    }
                    Some(_) => {}
                    None => evidence.push((term, value)),
                }
            }
        }
        let query = query.ok_or_else(|| Failure {
            code: 2,
            message: "no query given".into(),
        })?;
        Ok((query, evidence))
    }

    fn network(&self, input: &Input) -> Result<(GroundNetwork, ValidationReport), Failure> {
        let (query, evidence) = self.query_and_evidence(input)?;
        let opts = options(input);
        let (report, network) = build_network(&self.kb, &query, &evidence, &opts)?;
        if !report.ok {
            eprint!(
                "warning: continuing with an invalid knowledge base\n{}",
                indent(&report)
            );
        }
        Ok((network, report))
    }
}

fn write_outputs(
    network: &GroundNetwork,
    dump: Option<&Path>,
    dot: Option<&Path>,
) -> Result<(), Failure> {
    if let Some(path) = dump {
        fs::write(path, to_json(&network.dump()) + "\n").map_err(|e| Failure::io(path, e))?;
    }
    if let Some(path) = dot {
        fs::write(path, network.export_dot()).map_err(|e| Failure::io(path, e))?;
    }
    Ok(())
}
