//! Text front end for `.bkb` knowledge bases, queries, evidence and `.bqe`
//! query files.
//!
//! ```text
//! kb         := (range_decl | var_decl | rule_decl)*
//! range_decl := "range" IDENT "{" IDENT ("," IDENT)+ "}"
//! var_decl   := "var" IDENT ("(" params? ")")? ":" IDENT
//! rule_decl  := "rule" IDENT "{" TERM ("|" TERM ("," TERM)*)? ":" "cpt" "[" NUMBER+ "]" "}"
//! ```
//!
//! The first term of a rule is the consequent; terms after `|` are the
//! antecedents. Term arguments starting with a lowercase letter are variables;
//! anything else (or a `'quoted'` name) is a constant. Names must be declared
//! before use. `#` starts a comment.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::format::sig17;
use crate::kb::{Arg, KbError, KnowledgeBase, LinkMatrix, Term, ValueRange};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceSpan {
    pub file: String,
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.file, self.line, self.column)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax,
    UnknownSymbol,
    ArityMismatch,
    MatrixShape,
    DuplicateName,
    ValueOutOfRange,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{span}: {message}")]
pub struct ParseError {
    pub span: SourceSpan,
    pub message: String,
    pub kind: ParseErrorKind,
}

pub type Evidence = Vec<(Term, String)>;

/// A parsed `.bqe` file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryFile {
    pub query: Option<Term>,
    pub evidence: Evidence,
}

const STDIN_NAME: &str = "<input>";

pub fn parse_kb(text: &str) -> Result<KnowledgeBase, ParseError> {
    parse_kb_named(text, STDIN_NAME)
}

pub fn parse_kb_named(text: &str, file: &str) -> Result<KnowledgeBase, ParseError> {
    let mut p = Parser::new(text, file, 1, 1)?;
    let mut kb = KnowledgeBase::new();
    while !p.at_eof() {
        let tok = p.next();
        match tok.word() {
            Some("range") => p.range_decl(&mut kb)?,
            Some("var") => p.var_decl(&mut kb)?,
            Some("rule") => p.rule_decl(&mut kb)?,
            _ => {
                return Err(p.error_at(
                    &tok,
                    ParseErrorKind::Syntax,
                    "expected `range`, `var` or `rule`",
                ))
            }
        }
    }
    Ok(kb)
}

/// Parses a ground query term such as `Burglary(Holmes)`.
pub fn parse_query(kb: &KnowledgeBase, text: &str) -> Result<Term, ParseError> {
    let mut p = Parser::new(text, STDIN_NAME, 1, 1)?;
    let term = p.ground_term(kb, "query")?;
    p.expect_eof()?;
    Ok(term)
}

/// Parses a ground term without checking it against any declarations.
pub fn parse_ground_term(text: &str) -> Result<Term, ParseError> {
    let mut p = Parser::new(text, STDIN_NAME, 1, 1)?;
    let (term, tok) = p.term()?;
    p.require_ground(&term, &tok, "term")?;
    p.expect_eof()?;
    Ok(term)
}

/// Parses `TERM=VALUE` items separated by commas or newlines.
pub fn parse_evidence(kb: &KnowledgeBase, text: &str) -> Result<Evidence, ParseError> {
    let mut out = Vec::new();
    let mut p = Parser::new(text, STDIN_NAME, 1, 1)?;
    p.evidence_items(kb, &mut out)?;
    Ok(out)
}

/// Parses a `.bqe` file: `query: TERM` and `evidence: TERM=VALUE` lines.
pub fn parse_query_file(
    kb: &KnowledgeBase,
    text: &str,
    file: &str,
) -> Result<QueryFile, ParseError> {
    let mut out = QueryFile::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim_end_matches('\r');
        let trimmed = content.trim_start();
        if trimmed.trim().is_empty() {
            continue;
        }
        let indent = content.len() - trimmed.len();
        let (key, rest) = match trimmed.split_once(':') {
            Some(kv) => kv,
            None => {
                return Err(error(
                    file,
                    line,
                    indent + 1,
                    ParseErrorKind::Syntax,
                    "expected `query:` or `evidence:`",
                ))
            }
        };
        let col = indent + key.len() + 2;
        let mut p = Parser::new(rest, file, line, col)?;
        match key.trim() {
            "query" => {
                if out.query.is_some() {
                    return Err(error(
                        file,
                        line,
                        indent + 1,
                        ParseErrorKind::DuplicateName,
                        "more than one `query:` line",
                    ));
                }
                out.query = Some(p.ground_term(kb, "query")?);
                p.expect_eof()?;
            }
            "evidence" => p.evidence_items(kb, &mut out.evidence)?,
            other => {
                return Err(error(
                    file,
                    line,
                    indent + 1,
                    ParseErrorKind::Syntax,
                    &format!("unknown key `{other}`"),
                ))
            }
        }
    }
    Ok(out)
}

/// Canonical text for a knowledge base; `parse_kb` of the result is
/// structurally equal to `kb`.
pub fn serialize_kb(kb: &KnowledgeBase) -> String {
    let mut out = String::new();
    for r in kb.ranges() {
        out.push_str(&format!(
            "range {} {{ {} }}\n",
            r.name(),
            r.values().join(", ")
        ));
    }
    if !kb.symbols().is_empty() && !out.is_empty() {
        out.push('\n');
    }
    for s in kb.symbols() {
        if s.arity() == 0 {
            out.push_str(&format!("var {} : {}\n", s.name(), s.range().name()));
        } else {
            out.push_str(&format!(
                "var {}({}) : {}\n",
                s.name(),
                s.params().join(", "),
                s.range().name()
            ));
        }
    }
    if !kb.rules().is_empty() && !out.is_empty() {
        out.push('\n');
    }
    for r in kb.rules() {
        out.push_str(&format!(
            "rule {} {{ {}",
            r.id(),
            render_term(r.consequent())
        ));
        if !r.is_prior() {
            let ante: Vec<String> = r.antecedents().iter().map(render_term).collect();
            out.push_str(&format!(" | {}", ante.join(", ")));
        }
        let nums: Vec<String> = r.matrix().entries().iter().map(|&x| sig17(x)).collect();
        out.push_str(&format!(" : cpt [ {} ] }}\n", nums.join(" ")));
    }
    out
}

/// Renders a term in source syntax, quoting constants that would otherwise
/// read back as variables.
pub fn render_term(t: &Term) -> String {
    if t.args().is_empty() {
        return t.functor().to_string();
    }
    let args: Vec<String> = t
        .args()
        .iter()
        .map(|a| match a {
            Arg::Var(v) => v.clone(),
            Arg::Const(c) if is_ident(c) && !starts_lower(c) => c.clone(),
            Arg::Const(c) => format!("'{c}'"),
        })
        .collect();
    format!("{}({})", t.functor(), args.join(","))
}

fn error(
    file: &str,
    line: usize,
    column: usize,
    kind: ParseErrorKind,
    message: &str,
) -> ParseError {
    ParseError {
        span: SourceSpan {
            file: file.to_string(),
            line,
            column,
        },
        message: message.to_string(),
        kind,
    }
}

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '+'))
}

fn starts_lower(s: &str) -> bool {
    s.chars().next().is_some_and(|c| c.is_ascii_lowercase())
}

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '+' | '.')
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Quoted(String),
    Punct(char),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

impl Token {
    fn word(&self) -> Option<&str> {
        match &self.tok {
            Tok::Word(w) => Some(w),
            _ => None,
        }
    }

    fn describe(&self) -> String {
        match &self.tok {
            Tok::Word(w) => format!("`{w}`"),
            Tok::Quoted(q) => format!("'{q}'"),
            Tok::Punct(c) => format!("`{c}`"),
            Tok::Eof => "end of input".into(),
        }
    }
}

fn lex(text: &str, file: &str, line0: usize, col0: usize) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let (mut line, mut col) = (line0, col0);
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        let (tl, tc) = (line, col);
        if c == '\n' {
            chars.next();
            line += 1;
            col = 1;
        } else if c.is_whitespace() {
            chars.next();
            col += 1;
        } else if c == '#' {
            while chars.peek().is_some_and(|&c| c != '\n') {
                chars.next();
            }
        } else if c == '\'' {
            chars.next();
            col += 1;
            let mut s = String::new();
            loop {
                match chars.next() {
                    Some('\'') => {
                        col += 1;
                        break;
                    }
                    Some('\n') | None => {
                        return Err(error(
                            file,
                            tl,
                            tc,
                            ParseErrorKind::Syntax,
                            "unterminated quoted name",
                        ));
                    }
                    Some(c) => {
                        col += 1;
                        s.push(c);
                    }
                }
            }
            if s.is_empty() {
                return Err(error(
                    file,
                    tl,
                    tc,
                    ParseErrorKind::Syntax,
                    "empty quoted name",
                ));
            }
            out.push(Token {
                tok: Tok::Quoted(s),
                line: tl,
                col: tc,
            });
        } else if is_word_char(c) {
            let mut s = String::new();
            while let Some(&c) = chars.peek().filter(|c| is_word_char(**c)) {
                s.push(c);
                chars.next();
                col += 1;
            }
            out.push(Token {
                tok: Tok::Word(s),
                line: tl,
                col: tc,
            });
        } else if "{}()[],|:=".contains(c) {
            chars.next();
            col += 1;
            out.push(Token {
                tok: Tok::Punct(c),
                line: tl,
                col: tc,
            });
        } else {
            return Err(error(
                file,
                tl,
                tc,
                ParseErrorKind::Syntax,
                &format!("unexpected character `{c}`"),
            ));
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    file: &'a str,
}

impl<'a> Parser<'a> {
    fn new(text: &str, file: &'a str, line: usize, col: usize) -> Result<Self, ParseError> {
        Ok(Parser {
            tokens: lex(text, file, line, col)?,
            pos: 0,
            file,
        })
    }

    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if t.tok != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn at_eof(&self) -> bool {
        self.peek().tok == Tok::Eof
    }

    fn at_punct(&self, c: char) -> bool {
        self.peek().tok == Tok::Punct(c)
    }

    fn error_at(&self, tok: &Token, kind: ParseErrorKind, message: &str) -> ParseError {
        error(self.file, tok.line, tok.col, kind, message)
    }

    fn kb_error(&self, tok: &Token, err: KbError) -> ParseError {
        let kind = match &err {
            KbError::UnknownRange(_) | KbError::UnknownSymbol(_) => ParseErrorKind::UnknownSymbol,
            KbError::ArityMismatch { .. } => ParseErrorKind::ArityMismatch,
            KbError::DuplicateName { .. } => ParseErrorKind::DuplicateName,
            KbError::MatrixShape { .. }
            | KbError::EntryOutOfBounds { .. }
            | KbError::RowSum { .. } => ParseErrorKind::MatrixShape,
            KbError::ValueOutOfRange { .. } => ParseErrorKind::ValueOutOfRange,
            _ => ParseErrorKind::Syntax,
        };
        self.error_at(tok, kind, &err.to_string())
    }

    fn expect_punct(&mut self, c: char) -> Result<Token, ParseError> {
        let t = self.next();
        if t.tok == Tok::Punct(c) {
            Ok(t)
        } else {
            Err(self.error_at(
                &t,
                ParseErrorKind::Syntax,
                &format!("expected `{c}`, found {}", t.describe()),
            ))
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        let t = self.next();
        if t.word() == Some(kw) {
            Ok(())
        } else {
            Err(self.error_at(
                &t,
                ParseErrorKind::Syntax,
                &format!("expected `{kw}`, found {}", t.describe()),
            ))
        }
    }

    fn expect_eof(&mut self) -> Result<(), ParseError> {
        let t = self.next();
        if t.tok == Tok::Eof {
            Ok(())
        } else {
            Err(self.error_at(
                &t,
                ParseErrorKind::Syntax,
                &format!("unexpected {}", t.describe()),
            ))
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, Token), ParseError> {
        let t = self.next();
        match t.word() {
            Some(w) if is_ident(w) => Ok((w.to_string(), t)),
            _ => Err(self.error_at(
                &t,
                ParseErrorKind::Syntax,
                &format!("expected {what}, found {}", t.describe()),
            )),
        }
    }

    fn range_decl(&mut self, kb: &mut KnowledgeBase) -> Result<(), ParseError> {
        let (name, name_tok) = self.ident("range name")?;
        self.expect_punct('{')?;
        let mut values = vec![self.ident("value label")?];
        while self.at_punct(',') {
            self.next();
            values.push(self.ident("value label")?);
        }
        let close = self.expect_punct('}')?;
        if values.len() < 2 {
            return Err(self.error_at(
                &close,
                ParseErrorKind::Syntax,
                "a range needs at least two values",
            ));
        }
        for (i, (v, tok)) in values.iter().enumerate() {
            if values[..i].iter().any(|(w, _)| w == v) {
                return Err(self.error_at(
                    tok,
                    ParseErrorKind::DuplicateName,
                    &format!("duplicate value `{v}`"),
                ));
            }
        }
        kb.add_range(name, values.into_iter().map(|(v, _)| v))
            .map_err(|e| self.kb_error(&name_tok, e))?;
        Ok(())
    }

    fn var_decl(&mut self, kb: &mut KnowledgeBase) -> Result<(), ParseError> {
        let (name, name_tok) = self.ident("function symbol")?;
        let mut params = Vec::new();
        if self.at_punct('(') {
            self.next();
            if !self.at_punct(')') {
                params.push(self.ident("parameter name")?);
                while self.at_punct(',') {
                    self.next();
                    params.push(self.ident("parameter name")?);
                }
            }
            self.expect_punct(')')?;
        }
        for (i, (v, tok)) in params.iter().enumerate() {
            if params[..i].iter().any(|(w, _)| w == v) {
                return Err(self.error_at(
                    tok,
                    ParseErrorKind::DuplicateName,
                    &format!("duplicate parameter `{v}`"),
                ));
            }
        }
        self.expect_punct(':')?;
        let (range, range_tok) = self.ident("range name")?;
        if kb.range(&range).is_none() {
            return Err(self.kb_error(&range_tok, KbError::UnknownRange(range)));
        }
        kb.add_symbol(name, params.into_iter().map(|(p, _)| p), &range)
            .map_err(|e| self.kb_error(&name_tok, e))?;
        Ok(())
    }

    fn rule_decl(&mut self, kb: &mut KnowledgeBase) -> Result<(), ParseError> {
        let (id, id_tok) = self.ident("rule name")?;
        if kb.rule(&id).is_some() {
            return Err(self.kb_error(
                &id_tok,
                KbError::DuplicateName {
                    what: "rule",
                    name: id,
                },
            ));
        }
        self.expect_punct('{')?;
        let (consequent, cons_range) = self.resolved_term(kb)?;
        let mut antecedents = Vec::new();
        let mut ante_ranges = Vec::new();
        if self.at_punct('|') {
            self.next();
            loop {
                let (t, r) = self.resolved_term(kb)?;
                antecedents.push(t);
                ante_ranges.push(r);
                if !self.at_punct(',') {
                    break;
                }
                self.next();
            }
        }
        self.expect_punct(':')?;
        let cpt_tok = self.peek().clone();
        self.expect_keyword("cpt")?;
        self.expect_punct('[')?;
        let mut entries = Vec::new();
        while !self.at_punct(']') {
            let t = self.next();
            let value = match &t.tok {
                Tok::Word(w) => w.parse::<f64>().ok().filter(|x| x.is_finite()),
                Tok::Punct(',') if !entries.is_empty() => continue,
                _ => None,
            };
            match value {
                Some(x) => entries.push(x),
                None => {
                    return Err(self.error_at(
                        &t,
                        ParseErrorKind::Syntax,
                        &format!("expected a number, found {}", t.describe()),
                    ))
                }
            }
        }
        self.next();
        self.expect_punct('}')?;
        let matrix = LinkMatrix::new(ante_ranges, cons_range, entries)
            .map_err(|e| self.kb_error(&cpt_tok, e))?;
        kb.add_rule(id, consequent, antecedents, matrix)
            .map_err(|e| self.kb_error(&id_tok, e))?;
        Ok(())
    }

    fn term(&mut self) -> Result<(Term, Token), ParseError> {
        let (functor, tok) = self.ident("term")?;
        let mut args = Vec::new();
        if self.at_punct('(') {
            self.next();
            if !self.at_punct(')') {
                args.push(self.arg()?);
                while self.at_punct(',') {
                    self.next();
                    args.push(self.arg()?);
                }
            }
            self.expect_punct(')')?;
        }
        Ok((Term::new(functor, args), tok))
    }

    fn arg(&mut self) -> Result<Arg, ParseError> {
        let t = self.next();
        match &t.tok {
            Tok::Quoted(q) => Ok(Arg::Const(q.clone())),
            Tok::Word(w) if is_ident(w) && starts_lower(w) => Ok(Arg::Var(w.clone())),
            Tok::Word(w) if is_ident(w) => Ok(Arg::Const(w.clone())),
            _ => Err(self.error_at(
                &t,
                ParseErrorKind::Syntax,
                &format!("expected an argument, found {}", t.describe()),
            )),
        }
    }

    fn resolved_term(&mut self, kb: &KnowledgeBase) -> Result<(Term, Arc<ValueRange>), ParseError> {
        let (term, tok) = self.term()?;
        let range = kb
            .check_term(&term)
            .map_err(|e| self.kb_error(&tok, e))?
            .clone();
        Ok((term, range))
    }

    fn ground_term(&mut self, kb: &KnowledgeBase, what: &str) -> Result<Term, ParseError> {
        let (term, tok) = self.term()?;
        kb.check_term(&term).map_err(|e| self.kb_error(&tok, e))?;
        self.require_ground(&term, &tok, what)?;
        Ok(term)
    }

    fn require_ground(&self, term: &Term, tok: &Token, what: &str) -> Result<(), ParseError> {
        match term.variables().first() {
            Some(v) => Err(self.error_at(
                tok,
                ParseErrorKind::Syntax,
                &format!("{what} `{term}` must be ground, but `{v}` is a variable"),
            )),
            None => Ok(()),
        }
    }

    fn evidence_items(&mut self, kb: &KnowledgeBase, out: &mut Evidence) -> Result<(), ParseError> {
        while !self.at_eof() {
            let start = self.peek().clone();
            let term = self.ground_term(kb, "evidence term")?;
            self.expect_punct('=')?;
            let (value, value_tok) = self.ident("value")?;
            let range = kb.check_term(&term).expect("checked above");
            if range.index_of(&value).is_none() {
                return Err(self.kb_error(
                    &value_tok,
                    KbError::ValueOutOfRange {
                        range: range.name().to_string(),
                        value,
                    },
                ));
            }
            match out.iter().find(|(t, _)| *t == term) {
                Some((_, prev)) if *prev != value => {
                    return Err(self.error_at(
                        &start,
                        ParseErrorKind::DuplicateName,
                        &format!("conflicting evidence for `{term}`: `{prev}` and `{value}`"),
                    ))
                }
                Some(_) => {}
                None => out.push((term, value)),
            }
            if self.at_punct(',') {
                self.next();
            } else if !self.at_eof() && !matches!(self.peek().tok, Tok::Word(_)) {
                let t = self.next();
                return Err(self.error_at(
                    &t,
                    ParseErrorKind::Syntax,
                    &format!("expected `,`, found {}", t.describe()),
                ));
            }
        }
        Ok(())
    }
}
