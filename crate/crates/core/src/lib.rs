//! Bayesian knowledge bases.
//!
//! A knowledge base is a set of quantified probability rules over function
//! symbols. Given a ground query and ground evidence, [`generator`] backward
//! chains through the rules to build exactly the Bayesian network needed to
//! answer `P(query | evidence)`, and [`inference`] computes that posterior by
//! variable elimination. [`analysis`] provides d-separation and a brute-force
//! chain-rule oracle against which the whole pipeline can be checked.

pub mod analysis;
pub mod format;
pub mod generator;
pub mod inference;
pub mod kb;
pub mod parser;
pub mod pipeline;
pub mod synth;
pub mod validator;

pub use generator::{GroundNetwork, NetError, NodeId};
pub use kb::{Arg, Binding, KbError, KnowledgeBase, LinkMatrix, Rule, Term, ValueRange};
pub use parser::{parse_ground_term, ParseError, ParseErrorKind};
pub use validator::{ValidationReport, Violation};
