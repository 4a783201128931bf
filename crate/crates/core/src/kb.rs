//! Core domain types: value ranges, function symbols, terms, link matrices,
//! rules and the knowledge base that owns them.
//!
//! A rule ties a consequent term to an ordered list of antecedent terms through
//! a link matrix. Variables are scoped to a single rule and implicitly
//! universally quantified, so one matrix serves every ground instance of the
//! rule.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Row sums of a link matrix must lie within this distance of 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KbError {
    #[error("unknown range `{0}`")]
    UnknownRange(String),
    #[error("unknown function symbol `{0}`")]
    UnknownSymbol(String),
    #[error("`{symbol}` expects {expected} argument(s), found {found}")]
    ArityMismatch {
        symbol: String,
        expected: usize,
        found: usize,
    },
    #[error("duplicate {what} `{name}`")]
    DuplicateName { what: &'static str, name: String },
    #[error("range `{0}` needs at least two values")]
    RangeTooSmall(String),
    #[error("matrix has {found} entries, expected {expected}")]
    MatrixShape { expected: usize, found: usize },
    #[error("matrix entry {index} = {value} is not a probability")]
    EntryOutOfBounds { index: usize, value: f64 },
    #[error("matrix row {row} sums to {sum}")]
    RowSum { row: usize, sum: f64 },
    #[error("value `{value}` is not in range `{range}`")]
    ValueOutOfRange { range: String, value: String },
    #[error("expected {expected} parent value(s), found {found}")]
    ParentCount { expected: usize, found: usize },
    #[error("matrix ranges do not match the ranges of rule `{0}`'s terms")]
    RangeMismatch(String),
    #[error("variable `{variable}` of rule `{rule}` is unbound")]
    IncompleteBinding { rule: String, variable: String },
}

/// An ordered set of mutually exclusive, exhaustive value labels.
///
/// Declaration order is load-bearing: it fixes row and column ordering in
/// every link matrix that mentions the range.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ValueRange {
    name: String,
    values: Vec<String>,
}

impl ValueRange {
    pub fn new(name: impl Into<String>, values: Vec<String>) -> Result<Self, KbError> {
        let name = name.into();
        if values.len() < 2 {
            return Err(KbError::RangeTooSmall(name));
        }
        let mut seen = BTreeSet::new();
        for v in &values {
            if !seen.insert(v.as_str()) {
                return Err(KbError::DuplicateName {
                    what: "value",
                    name: v.clone(),
                });
            }
        }
        Ok(ValueRange { name, values })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index_of(&self, value: &str) -> Option<usize> {
        self.values.iter().position(|v| v == value)
    }

    pub fn value(&self, index: usize) -> &str {
        &self.values[index]
    }

    pub(crate) fn require(&self, value: &str) -> Result<usize, KbError> {
        self.index_of(value)
            .ok_or_else(|| KbError::ValueOutOfRange {
                range: self.name.clone(),
                value: value.to_string(),
            })
    }
}

/// A function symbol standing for a family of random variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionSymbol {
    name: String,
    /// Parameter names from the declaration; only their count matters.
    params: Vec<String>,
    range: Arc<ValueRange>,
}

impl FunctionSymbol {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn arity(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[String] {
        &self.params
    }

    pub fn range(&self) -> &Arc<ValueRange> {
        &self.range
    }
}

/// A term argument: a rule-scoped variable or a constant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arg {
    Var(String),
    Const(String),
}

impl Arg {
    pub fn var(name: impl Into<String>) -> Self {
        Arg::Var(name.into())
    }

    pub fn constant(name: impl Into<String>) -> Self {
        Arg::Const(name.into())
    }

    pub fn is_var(&self) -> bool {
        matches!(self, Arg::Var(_))
    }

    pub fn name(&self) -> &str {
        match self {
            Arg::Var(n) | Arg::Const(n) => n,
        }
    }
}

/// A function symbol applied to arguments.
///
/// Terms are ordered by their rendered name (`Alarm(Holmes)` sorts before
/// `Quake`), which is the tie-break used throughout for determinism.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Term {
    functor: String,
    args: Vec<Arg>,
}

impl Term {
    pub fn new(functor: impl Into<String>, args: Vec<Arg>) -> Self {
        Term {
            functor: functor.into(),
            args,
        }
    }

    /// A zero-arity term such as `Quake`.
    pub fn atom(functor: impl Into<String>) -> Self {
        Term::new(functor, Vec::new())
    }

    /// A ground term from constant names.
    pub fn ground<S: Into<String>>(
        functor: impl Into<String>,
        constants: impl IntoIterator<Item = S>,
    ) -> Self {
        Term::new(
            functor,
            constants
                .into_iter()
                .map(|c| Arg::Const(c.into()))
                .collect(),
        )
    }

    pub fn functor(&self) -> &str {
        &self.functor
    }

    pub fn args(&self) -> &[Arg] {
        &self.args
    }

    pub fn arity(&self) -> usize {
        self.args.len()
    }

    pub fn is_ground(&self) -> bool {
        self.args.iter().all(|a| !a.is_var())
    }

    /// Variable names in order of first occurrence.
    pub fn variables(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for a in &self.args {
            if let Arg::Var(v) = a {
                if !out.contains(&v.as_str()) {
                    out.push(v);
                }
            }
        }
        out
    }

    /// Replaces every bound variable by its constant; unbound variables pass through.
    pub fn substitute(&self, binding: &Binding) -> Term {
        let args = self
            .args
            .iter()
            .map(|a| match a {
                Arg::Var(v) => match binding.get(v) {
                    Some(c) => Arg::Const(c.to_string()),
                    None => a.clone(),
                },
                Arg::Const(_) => a.clone(),
            })
            .collect();
        Term::new(self.functor.clone(), args)
    }

    /// One-sided matching of this pattern against a ground term.
    ///
    /// Returns the unique binding `b` with `self.substitute(&b) == *ground`,
    /// or `None` when no such binding exists.
    pub fn match_ground(&self, ground: &Term) -> Option<Binding> {
        if self.functor != ground.functor || self.args.len() != ground.args.len() {
            return None;
        }
        let mut binding = Binding::new();
        for (p, g) in self.args.iter().zip(&ground.args) {
            let g = match g {
                Arg::Const(c) => c,
                Arg::Var(_) => return None,
            };
            match p {
                Arg::Const(c) if c != g => return None,
                Arg::Const(_) => {}
                Arg::Var(v) => match binding.get(v) {
                    Some(prev) if prev != g => return None,
                    Some(_) => {}
                    None => binding.bind(v.clone(), g.clone()),
                },
            }
        }
        Some(binding)
    }
}

impl serde::Serialize for Term {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.functor)?;
        if !self.args.is_empty() {
            f.write_str("(")?;
            for (i, a) in self.args.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                f.write_str(a.name())?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl Ord for Term {
    fn cmp(&self, other: &Self) -> Ordering {
        self.to_string()
            .cmp(&other.to_string())
            .then_with(|| self.functor.cmp(&other.functor))
            .then_with(|| self.args.cmp(&other.args))
    }
}

impl PartialOrd for Term {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Variable-to-constant assignment.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Binding(BTreeMap<String, String>);

impl Binding {
    pub fn new() -> Self {
        Binding::default()
    }

    pub fn bind(&mut self, var: impl Into<String>, constant: impl Into<String>) {
        self.0.insert(var.into(), constant.into());
    }

    pub fn get(&self, var: &str) -> Option<&str> {
        self.0.get(var).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for Binding {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        Binding(
            iter.into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        )
    }
}

/// Two-sided unification of two terms whose variables are scoped apart.
///
/// Arguments are flat (variables or constants), so this is a union-find over
/// argument positions: the terms unify iff they share a common ground instance.
pub fn unify_apart(left: &Term, right: &Term) -> bool {
    if left.functor != right.functor || left.args.len() != right.args.len() {
        return false;
    }
    let mut classes = Classes::default();
    for (l, r) in left.args.iter().zip(&right.args) {
        let a = classes.node(0, l);
        let b = classes.node(1, r);
        if !classes.union(a, b) {
            return false;
        }
    }
    true
}

/// Union-find over argument occurrences, tracking the constant (if any) each
/// class is pinned to.
#[derive(Default)]
struct Classes<'a> {
    parent: Vec<usize>,
    constant: Vec<Option<&'a str>>,
    vars: HashMap<(u8, &'a str), usize>,
}

impl<'a> Classes<'a> {
    fn fresh(&mut self, constant: Option<&'a str>) -> usize {
        self.parent.push(self.parent.len());
        self.constant.push(constant);
        self.parent.len() - 1
    }

    fn node(&mut self, side: u8, arg: &'a Arg) -> usize {
        match arg {
            Arg::Const(c) => self.fresh(Some(c)),
            Arg::Var(v) => match self.vars.get(&(side, v.as_str())) {
                Some(&id) => id,
                None => {
                    let id = self.fresh(None);
                    self.vars.insert((side, v), id);
                    id
                }
            },
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Merges two classes; false on a constant clash.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return true;
        }
        match (self.constant[ra], self.constant[rb]) {
            (Some(x), Some(y)) if x != y => false,
            (ca, cb) => {
                self.parent[rb] = ra;
                self.constant[ra] = ca.or(cb);
                true
            }
        }
    }
}

/// The conditional probability table attached to a rule.
///
/// Rows enumerate antecedent value combinations with the last antecedent
/// varying fastest; columns follow the consequent range order.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkMatrix {
    antecedent_ranges: Vec<Arc<ValueRange>>,
    consequent_range: Arc<ValueRange>,
    entries: Vec<f64>,
}

impl LinkMatrix {
    /// Builds a matrix, checking shape, entry bounds and row sums.
    pub fn new(
        antecedent_ranges: Vec<Arc<ValueRange>>,
        consequent_range: Arc<ValueRange>,
        entries: Vec<f64>,
    ) -> Result<Self, KbError> {
        let m = LinkMatrix::new_unchecked(antecedent_ranges, consequent_range, entries);
        if let Some(err) = m.problems().into_iter().next() {
            return Err(err);
        }
        Ok(m)
    }

    /// Builds a matrix without any numeric checks. The validator reports
    /// problems with such matrices; lookups into a misshapen matrix fail.
    pub fn new_unchecked(
        antecedent_ranges: Vec<Arc<ValueRange>>,
        consequent_range: Arc<ValueRange>,
        entries: Vec<f64>,
    ) -> Self {
        LinkMatrix {
            antecedent_ranges,
            consequent_range,
            entries,
        }
    }

    pub fn antecedent_ranges(&self) -> &[Arc<ValueRange>] {
        &self.antecedent_ranges
    }

    pub fn consequent_range(&self) -> &Arc<ValueRange> {
        &self.consequent_range
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn row_count(&self) -> usize {
        self.antecedent_ranges.iter().map(|r| r.len()).product()
    }

    pub fn row_len(&self) -> usize {
        self.consequent_range.len()
    }

    /// `|g| * |f1| * ... * |fn|`.
    pub fn expected_len(&self) -> usize {
        self.row_count() * self.row_len()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.chunks(self.row_len())
    }

    /// Every shape, bound and normalization problem, in entry order.
    pub fn problems(&self) -> Vec<KbError> {
        let expected = self.expected_len();
        if self.entries.len() != expected {
            return vec![KbError::MatrixShape {
                expected,
                found: self.entries.len(),
            }];
        }
        let mut out = Vec::new();
        for (index, &value) in self.entries.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                out.push(KbError::EntryOutOfBounds { index, value });
            }
        }
        for (row, r) in self.rows().enumerate() {
            let sum: f64 = r.iter().sum();
            if !((1.0 - ROW_SUM_TOLERANCE)..=(1.0 + ROW_SUM_TOLERANCE)).contains(&sum) {
                out.push(KbError::RowSum { row, sum });
            }
        }
        out
    }

    /// Row index for a combination of antecedent value indices.
    pub fn row_index(&self, parent_indices: &[usize]) -> usize {
        parent_indices
            .iter()
            .zip(&self.antecedent_ranges)
            .fold(0, |acc, (&i, r)| acc * r.len() + i)
    }

    /// Probability by value indices. Panics if indices are out of range or the
    /// matrix is misshapen; use [`LinkMatrix::lookup`] for checked access.
    pub fn prob(&self, parent_indices: &[usize], child_index: usize) -> f64 {
        self.entries[self.row_index(parent_indices) * self.row_len() + child_index]
    }

    /// Probability of `child_value` given one value per antecedent, by label.
    pub fn lookup(&self, parent_values: &[&str], child_value: &str) -> Result<f64, KbError> {
        if parent_values.len() != self.antecedent_ranges.len() {
            return Err(KbError::ParentCount {
                expected: self.antecedent_ranges.len(),
                found: parent_values.len(),
            });
        }
        let parents = parent_values
            .iter()
            .zip(&self.antecedent_ranges)
            .map(|(v, r)| r.require(v))
            .collect::<Result<Vec<_>, _>>()?;
        let child = self.consequent_range.require(child_value)?;
        let expected = self.expected_len();
        if self.entries.len() != expected {
            return Err(KbError::MatrixShape {
                expected,
                found: self.entries.len(),
            });
        }
        Ok(self.prob(&parents, child))
    }

    /// Same ranges, new entries.
    pub fn with_entries(&self, entries: Vec<f64>) -> LinkMatrix {
        LinkMatrix::new_unchecked(
            self.antecedent_ranges.clone(),
            self.consequent_range.clone(),
            entries,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    id: String,
    consequent: Term,
    antecedents: Vec<Term>,
    matrix: Arc<LinkMatrix>,
}

impl Rule {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn consequent(&self) -> &Term {
        &self.consequent
    }

    pub fn antecedents(&self) -> &[Term] {
        &self.antecedents
    }

    pub fn matrix(&self) -> &Arc<LinkMatrix> {
        &self.matrix
    }

    pub fn is_prior(&self) -> bool {
        self.antecedents.is_empty()
    }

    /// Variables of the rule in order of first occurrence, consequent first.
    pub fn variables(&self) -> Vec<&str> {
        let mut out = self.consequent.variables();
        for a in &self.antecedents {
            for v in a.variables() {
                if !out.contains(&v) {
                    out.push(v);
                }
            }
        }
        out
    }

    /// Grounds every term of the rule. The matrix is shared, not copied.
    pub fn ground_instance(&self, binding: &Binding) -> Result<GroundRuleInstance, KbError> {
        if let Some(v) = self
            .variables()
            .into_iter()
            .find(|v| binding.get(v).is_none())
        {
            return Err(KbError::IncompleteBinding {
                rule: self.id.clone(),
                variable: v.to_string(),
            });
        }
        Ok(GroundRuleInstance {
            rule_id: self.id.clone(),
            consequent: self.consequent.substitute(binding),
            antecedents: self
                .antecedents
                .iter()
                .map(|t| t.substitute(binding))
                .collect(),
            matrix: self.matrix.clone(),
        })
    }
}

/// A rule with all variables replaced by constants.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundRuleInstance {
    pub rule_id: String,
    pub consequent: Term,
    pub antecedents: Vec<Term>,
    pub matrix: Arc<LinkMatrix>,
}

/// Ranges, function symbols and rules, in declaration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeBase {
    ranges: Vec<Arc<ValueRange>>,
    symbols: Vec<Arc<FunctionSymbol>>,
    rules: Vec<Rule>,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        KnowledgeBase::default()
    }

    pub fn add_range<S: Into<String>>(
        &mut self,
        name: impl Into<String>,
        values: impl IntoIterator<Item = S>,
    ) -> Result<Arc<ValueRange>, KbError> {
        let range = ValueRange::new(name, values.into_iter().map(Into::into).collect())?;
        if self.range(range.name()).is_some() {
            return Err(KbError::DuplicateName {
                what: "range",
                name: range.name,
            });
        }
        let range = Arc::new(range);
        self.ranges.push(range.clone());
        Ok(range)
    }

    pub fn add_symbol<S: Into<String>>(
        &mut self,
        name: impl Into<String>,
        params: impl IntoIterator<Item = S>,
        range: &str,
    ) -> Result<Arc<FunctionSymbol>, KbError> {
        let name = name.into();
        if self.symbol(&name).is_some() {
            return Err(KbError::DuplicateName {
                what: "symbol",
                name,
            });
        }
        let range = self
            .range(range)
            .cloned()
            .ok_or_else(|| KbError::UnknownRange(range.to_string()))?;
        let symbol = Arc::new(FunctionSymbol {
            name,
            params: params.into_iter().map(Into::into).collect(),
            range,
        });
        self.symbols.push(symbol.clone());
        Ok(symbol)
    }

    /// Adds a rule. Terms must use declared symbols at the right arity and
    /// the matrix ranges must match the terms' ranges; matrix entries are not
    /// checked here (see the validator).
    pub fn add_rule(
        &mut self,
        id: impl Into<String>,
        consequent: Term,
        antecedents: Vec<Term>,
        matrix: LinkMatrix,
    ) -> Result<&Rule, KbError> {
        let id = id.into();
        if self.rule(&id).is_some() {
            return Err(KbError::DuplicateName {
                what: "rule",
                name: id,
            });
        }
        let cons_range = self.check_term(&consequent)?.clone();
        let ante_ranges = antecedents
            .iter()
            .map(|t| self.check_term(t).cloned())
            .collect::<Result<Vec<_>, _>>()?;
        if *matrix.consequent_range != *cons_range
            || matrix.antecedent_ranges.len() != ante_ranges.len()
            || matrix
                .antecedent_ranges
                .iter()
                .zip(&ante_ranges)
                .any(|(a, b)| **a != **b)
        {
            return Err(KbError::RangeMismatch(id));
        }
        self.rules.push(Rule {
            id,
            consequent,
            antecedents,
            matrix: Arc::new(matrix),
        });
        Ok(self.rules.last().expect("just pushed"))
    }

    /// Convenience for [`KnowledgeBase::add_rule`] that derives the matrix
    /// ranges from the terms.
    pub fn add_rule_with_entries(
        &mut self,
        id: impl Into<String>,
        consequent: Term,
        antecedents: Vec<Term>,
        entries: Vec<f64>,
    ) -> Result<&Rule, KbError> {
        let matrix = self.matrix_for(&consequent, &antecedents, entries)?;
        self.add_rule(id, consequent, antecedents, matrix)
    }

    /// An unchecked matrix shaped for the given terms.
    pub fn matrix_for(
        &self,
        consequent: &Term,
        antecedents: &[Term],
        entries: Vec<f64>,
    ) -> Result<LinkMatrix, KbError> {
        let cons = self.check_term(consequent)?.clone();
        let ante = antecedents
            .iter()
            .map(|t| self.check_term(t).cloned())
            .collect::<Result<Vec<_>, _>>()?;
        Ok(LinkMatrix::new_unchecked(ante, cons, entries))
    }

    /// Checks symbol and arity, returning the term's range.
    pub fn check_term(&self, term: &Term) -> Result<&Arc<ValueRange>, KbError> {
        let symbol = self
            .symbol(term.functor())
            .ok_or_else(|| KbError::UnknownSymbol(term.functor().to_string()))?;
        if symbol.arity() != term.arity() {
            return Err(KbError::ArityMismatch {
                symbol: symbol.name.clone(),
                expected: symbol.arity(),
                found: term.arity(),
            });
        }
        Ok(&symbol.range)
    }

    pub fn ranges(&self) -> &[Arc<ValueRange>] {
        &self.ranges
    }

    pub fn symbols(&self) -> &[Arc<FunctionSymbol>] {
        &self.symbols
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn range(&self, name: &str) -> Option<&Arc<ValueRange>> {
        self.ranges.iter().find(|r| r.name == name)
    }

    pub fn symbol(&self, name: &str) -> Option<&Arc<FunctionSymbol>> {
        self.symbols.iter().find(|s| s.name == name)
    }

    pub fn rule(&self, id: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.id == id)
    }

    /// The same knowledge base with every rule's matrix entries replaced.
    pub fn map_matrices(&self, mut f: impl FnMut(&Rule) -> Vec<f64>) -> KnowledgeBase {
        let rules = self
            .rules
            .iter()
            .map(|r| Rule {
                matrix: Arc::new(r.matrix.with_entries(f(r))),
                ..r.clone()
            })
            .collect();
        KnowledgeBase {
            ranges: self.ranges.clone(),
            symbols: self.symbols.clone(),
            rules,
        }
    }
}
