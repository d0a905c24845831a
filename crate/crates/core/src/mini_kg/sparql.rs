//! Parser for the SPARQL subset evaluated by [`TripleStore`](super::TripleStore):
//! `SELECT [DISTINCT]` with variables, `*` or a single `COUNT` aggregate; `ASK`;
//! a flat group of triple patterns (with `;` and `,` shorthand) and `FILTER`s;
//! `LIMIT`. Everything else is reported as unsupported rather than ignored.

use std::collections::HashMap;

use super::{expand_default_prefix, KgError, Term, RDF_TYPE, XSD};

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub form: QueryForm,
    pub pattern: GroupPattern,
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QueryForm {
    Select {
        distinct: bool,
        projection: Projection,
    },
    Ask,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    All,
    Vars(Vec<String>),
    /// `(COUNT([DISTINCT] ?var|*) AS ?alias)`; `var` is `None` for `*`.
    Count {
        var: Option<String>,
        distinct: bool,
        alias: String,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroupPattern {
    pub triples: Vec<TriplePattern>,
    pub filters: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PatternTerm {
    Var(String),
    Const(Term),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriplePattern {
    pub subject: PatternTerm,
    pub predicate: PatternTerm,
    pub object: PatternTerm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Contains,
    StrStarts,
    StrEnds,
    Lcase,
    Ucase,
    Lang,
    LangMatches,
    Str,
    Regex,
    Bound,
    IsIri,
    IsLiteral,
}

impl Func {
    fn from_name(name: &str) -> Option<(Func, usize, usize)> {
        let f = match name.to_ascii_uppercase().as_str() {
            "CONTAINS" => (Func::Contains, 2, 2),
            "STRSTARTS" => (Func::StrStarts, 2, 2),
            "STRENDS" => (Func::StrEnds, 2, 2),
            "LCASE" => (Func::Lcase, 1, 1),
            "UCASE" => (Func::Ucase, 1, 1),
            "LANG" => (Func::Lang, 1, 1),
            "LANGMATCHES" => (Func::LangMatches, 2, 2),
            "STR" => (Func::Str, 1, 1),
            "REGEX" => (Func::Regex, 2, 3),
            "BOUND" => (Func::Bound, 1, 1),
            "ISIRI" | "ISURI" => (Func::IsIri, 1, 1),
            "ISLITERAL" => (Func::IsLiteral, 1, 1),
            _ => return None,
        };
        Some(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Var(String),
    Const(Term),
    Bool(bool),
    Call(Func, Vec<Expr>),
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
    Neg(Box<Expr>),
}

impl Query {
    /// Variables in order of first appearance in the pattern.
    pub fn pattern_vars(&self) -> Vec<String> {
        let mut vars: Vec<String> = Vec::new();
        for t in &self.pattern.triples {
            for term in [&t.subject, &t.predicate, &t.object] {
                if let PatternTerm::Var(v) = term {
                    if !vars.contains(v) {
                        vars.push(v.clone());
                    }
                }
            }
        }
        vars
    }

    pub fn is_count(&self) -> bool {
        matches!(
            self.form,
            QueryForm::Select {
                projection: Projection::Count { .. },
                ..
            }
        )
    }
}

// ---------------------------------------------------------------------------
// Lexer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Var(String),
    Iri(String),
    PName(String, String),
    Word(String),
    Str(String),
    LangTag(String),
    Number(String),
    DoubleCaret,
    LBrace,
    RBrace,
    LParen,
    RParen,
    Dot,
    Comma,
    Semi,
    Star,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    AndAnd,
    OrOr,
    Bang,
    Minus,
    Plus,
    Slash,
    Pipe,
    Caret,
    Question,
}

fn is_name_start(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

fn is_name_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '-'
}

fn lex(input: &str) -> Result<Vec<Tok>, KgError> {
    let chars: Vec<char> = input.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    let err = |msg: String| KgError::Parse(msg);
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        match c {
            '?' | '$' => {
                if chars.get(i + 1).is_some_and(|&n| is_name_char(n)) {
                    let start = i + 1;
                    i += 1;
                    while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                        i += 1;
                    }
                    toks.push(Tok::Var(chars[start..i].iter().collect()));
                } else {
                    toks.push(Tok::Question);
                    i += 1;
                }
            }
            '<' => {
                let mut j = i + 1;
                let mut is_iri = false;
                while j < chars.len() {
                    let d = chars[j];
                    if d == '>' {
                        is_iri = true;
                        break;
                    }
                    if d.is_whitespace() || matches!(d, '<' | '"' | '{' | '}' | '|' | '^' | '`' | '\\') {
                        break;
                    }
                    j += 1;
                }
                if is_iri {
                    toks.push(Tok::Iri(chars[i + 1..j].iter().collect()));
                    i = j + 1;
                } else if chars.get(i + 1) == Some(&'=') {
                    toks.push(Tok::Le);
                    i += 2;
                } else {
                    toks.push(Tok::Lt);
                    i += 1;
                }
            }
            '"' | '\'' => {
                let quote = c;
                let mut s = String::new();
                i += 1;
                loop {
                    let Some(&d) = chars.get(i) else {
                        return Err(err("unterminated string".into()));
                    };
                    i += 1;
                    if d == quote {
                        break;
                    }
                    if d == '\\' {
                        let Some(&e) = chars.get(i) else {
                            return Err(err("unterminated escape".into()));
                        };
                        i += 1;
                        s.push(match e {
                            'n' => '\n',
                            't' => '\t',
                            'r' => '\r',
                            'b' => '\u{8}',
                            'f' => '\u{c}',
                            other => other,
                        });
                    } else {
                        s.push(d);
                    }
                }
                toks.push(Tok::Str(s));
            }
            '@' => {
                let start = i + 1;
                i += 1;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '-') {
                    i += 1;
                }
                if start == i {
                    return Err(err("empty language tag".into()));
                }
                toks.push(Tok::LangTag(chars[start..i].iter().collect()));
            }
            '^' if chars.get(i + 1) == Some(&'^') => {
                toks.push(Tok::DoubleCaret);
                i += 2;
            }
            '0'..='9' => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                if chars.get(i) == Some(&'.') && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) {
                    i += 1;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if matches!(chars.get(i), Some('e' | 'E')) {
                    let mut j = i + 1;
                    if matches!(chars.get(j), Some('+' | '-')) {
                        j += 1;
                    }
                    if chars.get(j).is_some_and(|d| d.is_ascii_digit()) {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                toks.push(Tok::Number(chars[start..i].iter().collect()));
            }
            c if is_name_start(c) || c == ':' => {
                let start = i;
                while i < chars.len() && is_name_char(chars[i]) {
                    i += 1;
                }
                if chars.get(i) == Some(&':') {
                    let prefix: String = chars[start..i].iter().collect();
                    i += 1;
                    let local_start = i;
                    while i < chars.len()
                        && (is_name_char(chars[i])
                            || (chars[i] == '.'
                                && chars.get(i + 1).is_some_and(|&n| is_name_char(n))))
                    {
                        i += 1;
                    }
                    toks.push(Tok::PName(prefix, chars[local_start..i].iter().collect()));
                } else {
                    toks.push(Tok::Word(chars[start..i].iter().collect()));
                }
            }
            _ => {
                let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
                let (tok, len) = match two.as_str() {
                    "!=" => (Tok::Ne, 2),
                    ">=" => (Tok::Ge, 2),
                    "&&" => (Tok::AndAnd, 2),
                    "||" => (Tok::OrOr, 2),
                    _ => (
                        match c {
                            '{' => Tok::LBrace,
                            '}' => Tok::RBrace,
                            '(' => Tok::LParen,
                            ')' => Tok::RParen,
                            '.' => Tok::Dot,
                            ',' => Tok::Comma,
                            ';' => Tok::Semi,
                            '*' => Tok::Star,
                            '=' => Tok::Eq,
                            '>' => Tok::Gt,
                            '!' => Tok::Bang,
                            '-' => Tok::Minus,
                            '+' => Tok::Plus,
                            '/' => Tok::Slash,
                            '|' => Tok::Pipe,
                            '^' => Tok::Caret,
                            other => return Err(err(format!("unexpected character {other:?}"))),
                        },
                        1,
                    ),
                };
                toks.push(tok);
                i += len;
            }
        }
    }
    Ok(toks)
}

// ---------------------------------------------------------------------------
// Parser

const UNSUPPORTED_KEYWORDS: &[&str] = &[
    "OPTIONAL", "UNION", "MINUS", "BIND", "VALUES", "GRAPH", "SERVICE", "ORDER", "GROUP",
    "HAVING", "OFFSET", "CONSTRUCT", "DESCRIBE", "FROM", "BASE", "INSERT", "DELETE", "EXISTS",
    "NOT", "REDUCED",
];

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
    prefixes: HashMap<String, String>,
}

fn parse_err<T>(msg: impl Into<String>) -> Result<T, KgError> {
    Err(KgError::Parse(msg.into()))
}

fn unsupported<T>(what: impl Into<String>) -> Result<T, KgError> {
    Err(KgError::UnsupportedSyntax(what.into()))
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn peek_at(&self, off: usize) -> Option<&Tok> {
        self.toks.get(self.pos + off)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<(), KgError> {
        match self.next() {
            Some(t) if t == tok => Ok(()),
            other => parse_err(format!("expected {tok:?}, found {other:?}")),
        }
    }

    fn peek_keyword(&self) -> Option<String> {
        match self.peek() {
            Some(Tok::Word(w)) => Some(w.to_ascii_uppercase()),
            _ => None,
        }
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.peek_keyword().as_deref() == Some(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn check_unsupported_keyword(&self) -> Result<(), KgError> {
        if let Some(kw) = self.peek_keyword() {
            if UNSUPPORTED_KEYWORDS.contains(&kw.as_str()) {
                return unsupported(kw);
            }
        }
        Ok(())
    }

    fn expand(&self, prefix: &str, local: &str) -> Result<String, KgError> {
        if let Some(ns) = self.prefixes.get(prefix) {
            return Ok(format!("{ns}{local}"));
        }
        expand_default_prefix(prefix, local)
            .map_or_else(|| parse_err(format!("unknown prefix {prefix:?}")), Ok)
    }

    fn query(&mut self) -> Result<Query, KgError> {
        loop {
            if self.eat_keyword("PREFIX") {
                let Some(Tok::PName(prefix, local)) = self.next() else {
                    return parse_err("expected prefix name after PREFIX");
                };
                if !local.is_empty() {
                    return parse_err("malformed PREFIX declaration");
                }
                let Some(Tok::Iri(ns)) = self.next() else {
                    return parse_err("expected IRI in PREFIX declaration");
                };
                self.prefixes.insert(prefix, ns);
                continue;
            }
            self.check_unsupported_keyword()?;
            break;
        }

        let form = if self.eat_keyword("SELECT") {
            let distinct = self.eat_keyword("DISTINCT");
            self.check_unsupported_keyword()?;
            let projection = self.projection()?;
            QueryForm::Select {
                distinct,
                projection,
            }
        } else if self.eat_keyword("ASK") {
            QueryForm::Ask
        } else {
            return parse_err(format!("expected SELECT or ASK, found {:?}", self.peek()));
        };

        self.eat_keyword("WHERE");
        let pattern = self.group()?;

        let mut limit = None;
        while self.pos < self.toks.len() {
            self.check_unsupported_keyword()?;
            if self.eat_keyword("LIMIT") {
                match self.next() {
                    Some(Tok::Number(n)) => {
                        limit = Some(n.parse().map_err(|_| KgError::Parse(format!("bad LIMIT {n}")))?)
                    }
                    other => return parse_err(format!("expected number after LIMIT, found {other:?}")),
                }
            } else {
                return parse_err(format!("unexpected trailing token {:?}", self.peek()));
            }
        }
        Ok(Query {
            form,
            pattern,
            limit,
        })
    }

    fn projection(&mut self) -> Result<Projection, KgError> {
        if self.eat(&Tok::Star) {
            return Ok(Projection::All);
        }
        let mut vars = Vec::new();
        let mut count = None;
        loop {
            match self.peek() {
                Some(Tok::Var(v)) => {
                    vars.push(v.clone());
                    self.pos += 1;
                }
                Some(Tok::LParen) => {
                    self.pos += 1;
                    if !self.eat_keyword("COUNT") {
                        return unsupported(format!("projection expression {:?}", self.peek()));
                    }
                    self.expect(Tok::LParen)?;
                    let distinct = self.eat_keyword("DISTINCT");
                    let var = match self.next() {
                        Some(Tok::Star) => None,
                        Some(Tok::Var(v)) => Some(v),
                        other => return unsupported(format!("COUNT argument {other:?}")),
                    };
                    self.expect(Tok::RParen)?;
                    if !self.eat_keyword("AS") {
                        return parse_err("expected AS in aggregate projection");
                    }
                    let Some(Tok::Var(alias)) = self.next() else {
                        return parse_err("expected variable after AS");
                    };
                    self.expect(Tok::RParen)?;
                    if count.is_some() {
                        return unsupported("multiple aggregates");
                    }
                    count = Some(Projection::Count {
                        var,
                        distinct,
                        alias,
                    });
                }
                _ => break,
            }
        }
        match (count, vars.is_empty()) {
            (Some(c), true) => Ok(c),
            (Some(_), false) => unsupported("aggregate mixed with plain variables (needs GROUP BY)"),
            (None, false) => Ok(Projection::Vars(vars)),
            (None, true) => parse_err("empty projection"),
        }
    }

    fn group(&mut self) -> Result<GroupPattern, KgError> {
        self.expect(Tok::LBrace)?;
        let mut group = GroupPattern::default();
        loop {
            self.check_unsupported_keyword()?;
            match self.peek() {
                None => return parse_err("unterminated group pattern"),
                Some(Tok::RBrace) => {
                    self.pos += 1;
                    break;
                }
                Some(Tok::Dot) => {
                    self.pos += 1;
                }
                Some(Tok::LBrace) => return unsupported("nested group pattern"),
                Some(Tok::Word(w)) if w.eq_ignore_ascii_case("FILTER") => {
                    self.pos += 1;
                    group.filters.push(self.constraint()?);
                }
                Some(Tok::Word(w)) if w.eq_ignore_ascii_case("SELECT") => {
                    return unsupported("subquery")
                }
                _ => self.triples(&mut group.triples)?,
            }
        }
        Ok(group)
    }

    fn triples(&mut self, out: &mut Vec<TriplePattern>) -> Result<(), KgError> {
        let subject = self.pattern_term(false)?;
        loop {
            let predicate = self.verb()?;
            loop {
                let object = self.pattern_term(false)?;
                out.push(TriplePattern {
                    subject: subject.clone(),
                    predicate: predicate.clone(),
                    object,
                });
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
            if !self.eat(&Tok::Semi) {
                break;
            }
            // A trailing `;` before `.` or `}` is allowed.
            if matches!(self.peek(), Some(Tok::Dot | Tok::RBrace)) {
                break;
            }
        }
        Ok(())
    }

    fn verb(&mut self) -> Result<PatternTerm, KgError> {
        if matches!(self.peek(), Some(Tok::Word(w)) if w == "a") {
            self.pos += 1;
            return Ok(PatternTerm::Const(Term::iri(RDF_TYPE)));
        }
        if matches!(self.peek(), Some(Tok::Caret | Tok::Bang | Tok::LParen)) {
            return unsupported("property path");
        }
        let term = self.pattern_term(true)?;
        if matches!(
            self.peek(),
            Some(Tok::Slash | Tok::Pipe | Tok::Star | Tok::Plus | Tok::Question)
        ) {
            return unsupported("property path");
        }
        Ok(term)
    }

    fn pattern_term(&mut self, predicate_position: bool) -> Result<PatternTerm, KgError> {
        match self.peek() {
            Some(Tok::Var(v)) => {
                let v = v.clone();
                self.pos += 1;
                Ok(PatternTerm::Var(v))
            }
            Some(Tok::LParen) if !predicate_position => unsupported("collection syntax"),
            Some(Tok::PName(p, _)) if p == "_" => unsupported("blank node"),
            Some(Tok::Word(w)) if w.eq_ignore_ascii_case("true") || w.eq_ignore_ascii_case("false") => {
                let b = w.to_ascii_lowercase();
                self.pos += 1;
                Ok(PatternTerm::Const(Term::typed_literal(b, format!("{XSD}boolean"))))
            }
            _ => Ok(PatternTerm::Const(self.constant()?)),
        }
    }

    fn constant(&mut self) -> Result<Term, KgError> {
        match self.next() {
            Some(Tok::Iri(iri)) => Ok(Term::iri(iri)),
            Some(Tok::PName(p, l)) => Ok(Term::iri(self.expand(&p, &l)?)),
            Some(Tok::Str(s)) => match self.peek() {
                Some(Tok::LangTag(lang)) => {
                    let lang = lang.clone();
                    self.pos += 1;
                    Ok(Term::lang_literal(s, &lang))
                }
                Some(Tok::DoubleCaret) => {
                    self.pos += 1;
                    let dt = match self.next() {
                        Some(Tok::Iri(iri)) => iri,
                        Some(Tok::PName(p, l)) => self.expand(&p, &l)?,
                        other => return parse_err(format!("expected datatype, found {other:?}")),
                    };
                    Ok(Term::typed_literal(s, dt))
                }
                _ => Ok(Term::literal(s)),
            },
            Some(Tok::Number(n)) => Ok(number_literal(&n)),
            Some(Tok::Minus) => match self.next() {
                Some(Tok::Number(n)) => Ok(number_literal(&format!("-{n}"))),
                other => parse_err(format!("expected number after '-', found {other:?}")),
            },
            Some(Tok::LBrace) | Some(Tok::LParen) => unsupported("nested pattern"),
            other => parse_err(format!("expected term, found {other:?}")),
        }
    }

    fn constraint(&mut self) -> Result<Expr, KgError> {
        match self.peek() {
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Some(Tok::Word(_)) => self.primary(),
            other => parse_err(format!("expected FILTER constraint, found {other:?}")),
        }
    }

    fn expr(&mut self) -> Result<Expr, KgError> {
        let mut left = self.and_expr()?;
        while self.eat(&Tok::OrOr) {
            let right = self.and_expr()?;
            left = Expr::Or(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> Result<Expr, KgError> {
        let mut left = self.relational()?;
        while self.eat(&Tok::AndAnd) {
            let right = self.relational()?;
            left = Expr::And(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn relational(&mut self) -> Result<Expr, KgError> {
        let left = self.unary()?;
        let op = match self.peek() {
            Some(Tok::Eq) => CmpOp::Eq,
            Some(Tok::Ne) => CmpOp::Ne,
            Some(Tok::Lt) => CmpOp::Lt,
            Some(Tok::Le) => CmpOp::Le,
            Some(Tok::Gt) => CmpOp::Gt,
            Some(Tok::Ge) => CmpOp::Ge,
            Some(Tok::Word(w)) if w.eq_ignore_ascii_case("IN") => return unsupported("IN"),
            Some(Tok::Plus | Tok::Minus | Tok::Star | Tok::Slash) => return unsupported("arithmetic"),
            _ => return Ok(left),
        };
        self.pos += 1;
        let right = self.unary()?;
        Ok(Expr::Cmp(op, Box::new(left), Box::new(right)))
    }

    fn unary(&mut self) -> Result<Expr, KgError> {
        if self.eat(&Tok::Bang) {
            return Ok(Expr::Not(Box::new(self.unary()?)));
        }
        if self.peek() == Some(&Tok::Minus) {
            if let Some(Tok::Number(_)) = self.peek_at(1) {
                return Ok(Expr::Const(self.constant()?));
            }
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, KgError> {
        match self.peek().cloned() {
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Some(Tok::Var(v)) => {
                self.pos += 1;
                Ok(Expr::Var(v))
            }
            Some(Tok::Word(w)) => {
                let upper = w.to_ascii_uppercase();
                if upper == "TRUE" || upper == "FALSE" {
                    self.pos += 1;
                    return Ok(Expr::Bool(upper == "TRUE"));
                }
                if UNSUPPORTED_KEYWORDS.contains(&upper.as_str()) {
                    return unsupported(upper);
                }
                let Some((func, min, max)) = Func::from_name(&w) else {
                    return unsupported(format!("function {w}"));
                };
                self.pos += 1;
                self.expect(Tok::LParen)?;
                let mut args = Vec::new();
                if !self.eat(&Tok::RParen) {
                    loop {
                        args.push(self.expr()?);
                        if self.eat(&Tok::Comma) {
                            continue;
                        }
                        self.expect(Tok::RParen)?;
                        break;
                    }
                }
                if args.len() < min || args.len() > max {
                    return parse_err(format!("{w} takes {min}..={max} arguments, got {}", args.len()));
                }
                Ok(Expr::Call(func, args))
            }
            Some(_) => Ok(Expr::Const(self.constant()?)),
            None => parse_err("unexpected end of expression"),
        }
    }
}

fn number_literal(n: &str) -> Term {
    let dt = if n.contains(['e', 'E']) {
        "double"
    } else if n.contains('.') {
        "decimal"
    } else {
        "integer"
    };
    Term::typed_literal(n, format!("{XSD}{dt}"))
}

/// Parses one `subject predicate object .` statement. Blank and comment-only
/// lines yield `None`. Terms may be `<IRI>`s, default-prefixed names or literals.
pub(super) fn parse_triple_line(line: &str) -> Result<Option<[Term; 3]>, KgError> {
    let toks = lex(line)?;
    if toks.is_empty() {
        return Ok(None);
    }
    let mut parser = Parser {
        toks,
        pos: 0,
        prefixes: HashMap::new(),
    };
    let s = parser.constant()?;
    let p = if matches!(parser.peek(), Some(Tok::Word(w)) if w == "a") {
        parser.pos += 1;
        Term::iri(RDF_TYPE)
    } else {
        parser.constant()?
    };
    let o = parser.constant()?;
    parser.expect(Tok::Dot)?;
    if parser.pos != parser.toks.len() {
        return parse_err("trailing tokens after statement");
    }
    if !s.is_iri() || !p.is_iri() {
        return parse_err("subject and predicate must be IRIs");
    }
    Ok(Some([s, p, o]))
}

/// Parses a query in the supported subset.
pub fn parse_query(text: &str) -> Result<Query, KgError> {
    let toks = lex(text)?;
    let mut parser = Parser {
        toks,
        pos: 0,
        prefixes: HashMap::new(),
    };
    parser.query()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE1: &str = "SELECT DISTINCT ?sbj ?sbj_label WHERE { ?sbj wdt:P31 wd:Q58863414 . ?sbj wdt:P2541 wd:Q62900839 . ?sbj rdfs:label ?sbj_label . FILTER(CONTAINS(lcase(?sbj_label), \"model\")) . FILTER (lang(?sbj_label) = \"en\") } LIMIT 25";

    #[test]
    fn parses_dataset_queries() {
        let q = parse_query(TABLE1).unwrap();
        assert_eq!(q.limit, Some(25));
        assert_eq!(q.pattern.triples.len(), 3);
        assert_eq!(q.pattern.filters.len(), 2);
        assert_eq!(
            q.form,
            QueryForm::Select {
                distinct: true,
                projection: Projection::Vars(vec!["sbj".into(), "sbj_label".into()])
            }
        );
        assert_eq!(
            q.pattern.triples[0].object,
            PatternTerm::Const(Term::entity("Q58863414"))
        );

        let q = parse_query("SELECT ?x WHERE { wd:Q1176417 wdt:P136 ?x }").unwrap();
        assert_eq!(q.pattern.triples.len(), 1);
        assert_eq!(q.pattern_vars(), ["x"]);
    }

    #[test]
    fn count_and_ask_forms() {
        let q = parse_query("SELECT (COUNT(?obj) AS ?value ) { wd:Q1 wdt:P2 ?obj }").unwrap();
        assert!(q.is_count());
        let q = parse_query("select (count(distinct *) as ?n) where { ?s ?p ?o }").unwrap();
        assert_eq!(
            q.form,
            QueryForm::Select {
                distinct: false,
                projection: Projection::Count { var: None, distinct: true, alias: "n".into() }
            }
        );
        let q = parse_query("ASK WHERE { wd:Q1 wdt:P2 ?obj FILTER(?obj = 46.7) }").unwrap();
        assert_eq!(q.form, QueryForm::Ask);
        assert_eq!(q.pattern.filters.len(), 1);
    }

    #[test]
    fn shorthand_and_qualifiers() {
        let q = parse_query(
            "PREFIX ex: <http://example.org/> SELECT ?v WHERE { wd:Q1 p:P2 ?st ; rdfs:label \"a\"@EN , 'b' . ?st ps:P2 ?v ; pq:P585 ?when . ?v a ex:Thing }",
        )
        .unwrap();
        assert_eq!(q.pattern.triples.len(), 6);
        assert_eq!(
            q.pattern.triples[1].object,
            PatternTerm::Const(Term::lang_literal("a", "en"))
        );
        assert_eq!(
            q.pattern.triples[5].object,
            PatternTerm::Const(Term::iri("http://example.org/Thing"))
        );
        assert_eq!(
            q.pattern.triples[5].predicate,
            PatternTerm::Const(Term::iri(RDF_TYPE))
        );
    }

    #[test]
    fn rejects_unsupported_constructs() {
        for q in [
            "SELECT ?x WHERE { ?x wdt:P31 ?y OPTIONAL { ?x wdt:P2 ?z } }",
            "SELECT ?x WHERE { { ?x wdt:P31 ?y } UNION { ?x wdt:P2 ?y } }",
            "SELECT ?x WHERE { ?x wdt:P31/wdt:P279 ?y }",
            "SELECT ?x WHERE { ?x wdt:P31* ?y }",
            "SELECT ?x WHERE { ?x wdt:P31 ?y } ORDER BY ?x",
            "SELECT ?x (COUNT(?y) AS ?n) WHERE { ?x wdt:P31 ?y }",
            "CONSTRUCT { ?s ?p ?o } WHERE { ?s ?p ?o }",
            "SELECT ?x WHERE { ?x wdt:P31 ?y FILTER(YEAR(?y) = 2000) }",
            "SELECT ?x WHERE { ?x wdt:P31 ?y } OFFSET 3",
        ] {
            assert!(
                matches!(parse_query(q), Err(KgError::UnsupportedSyntax(_))),
                "{q}: {:?}",
                parse_query(q)
            );
        }
    }

    #[test]
    fn reports_parse_errors() {
        for q in [
            "SELECT ?x WHERE { ?x wdt:P31 }",
            "SELECT WHERE { ?x ?p ?o }",
            "SELECT ?x WHERE { ?x ?p ?o",
            "SELECT ?x WHERE { ?x foo:bar ?o }",
            "hello",
            "SELECT ?x WHERE { ?x ?p \"open }",
        ] {
            assert!(matches!(parse_query(q), Err(KgError::Parse(_))), "{q}: {:?}", parse_query(q));
        }
    }

    #[test]
    fn comparison_operators_vs_iris() {
        let q = parse_query("SELECT ?x WHERE { ?x wdt:P1 ?v FILTER(?v < 3 && ?v >= -2 || !BOUND(?x)) }").unwrap();
        assert!(matches!(q.pattern.filters[0], Expr::Or(..)));
        let q = parse_query("SELECT ?x WHERE { ?x <http://ex.org/p> ?v FILTER(?v<3) }").unwrap();
        assert_eq!(
            q.pattern.triples[0].predicate,
            PatternTerm::Const(Term::iri("http://ex.org/p"))
        );
    }
}
