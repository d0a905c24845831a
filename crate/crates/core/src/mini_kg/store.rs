use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use regex::Regex;
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use super::sparql::{
    parse_query, parse_triple_line, CmpOp, Expr, Func, PatternTerm, Projection, Query, QueryForm,
};
use super::{expand_default_prefix, KgError, KnowledgeGraph, ResultSet, Term, Triple, XSD};

#[derive(Debug, Error)]
pub enum StoreLoadError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// In-memory triple store with subject, predicate and object indexes.
/// Immutable after loading, so it can be shared across threads.
#[derive(Debug, Default, Clone)]
pub struct TripleStore {
    terms: Vec<Term>,
    ids: HashMap<Term, u32>,
    triples: Vec<[u32; 3]>,
    seen: HashSet<[u32; 3]>,
    by_s: HashMap<u32, Vec<u32>>,
    by_p: HashMap<u32, Vec<u32>>,
    by_o: HashMap<u32, Vec<u32>>,
}

/// `"x"^^xsd:string` and `"x"` are the same term.
fn canonical(term: Term) -> Term {
    match term {
        Term::Literal {
            value,
            lang: None,
            datatype: Some(dt),
        } if dt == format!("{XSD}string") => Term::literal(value),
        other => other,
    }
}

impl TripleStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_triples(triples: impl IntoIterator<Item = Triple>) -> Self {
        let mut store = Self::new();
        for t in triples {
            store.insert(t);
        }
        store
    }

    fn intern(&mut self, term: Term) -> u32 {
        if let Some(&id) = self.ids.get(&term) {
            return id;
        }
        let id = self.terms.len() as u32;
        self.terms.push(term.clone());
        self.ids.insert(term, id);
        id
    }

    fn lookup(&self, term: &Term) -> Option<u32> {
        self.ids.get(&canonical(term.clone())).copied()
    }

    /// Adds a triple; returns false if it was already present.
    pub fn insert(&mut self, triple: Triple) -> bool {
        let key = [
            self.intern(canonical(triple.subject)),
            self.intern(canonical(triple.predicate)),
            self.intern(canonical(triple.object)),
        ];
        if !self.seen.insert(key) {
            return false;
        }
        let idx = self.triples.len() as u32;
        self.triples.push(key);
        self.by_s.entry(key[0]).or_default().push(idx);
        self.by_p.entry(key[1]).or_default().push(idx);
        self.by_o.entry(key[2]).or_default().push(idx);
        true
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        match (
            self.lookup(&triple.subject),
            self.lookup(&triple.predicate),
            self.lookup(&triple.object),
        ) {
            (Some(s), Some(p), Some(o)) => self.seen.contains(&[s, p, o]),
            _ => false,
        }
    }

    /// All triples in insertion order.
    pub fn triples(&self) -> impl Iterator<Item = Triple> + '_ {
        self.triples.iter().map(|[s, p, o]| {
            Triple::new(
                self.terms[*s as usize].clone(),
                self.terms[*p as usize].clone(),
                self.terms[*o as usize].clone(),
            )
        })
    }

    /// Loads N-Triples style statements, one per line.
    pub fn load_ntriples(&mut self, reader: impl BufRead) -> Result<usize, StoreLoadError> {
        let mut added = 0;
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            let parsed = parse_triple_line(&line).map_err(|e| StoreLoadError::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
            if let Some([s, p, o]) = parsed {
                added += usize::from(self.insert(Triple::new(s, p, o)));
            }
        }
        Ok(added)
    }

    /// Loads tab-separated `subject  predicate  object  [@lang]` rows. Bare
    /// `Q…` ids map to entities, a bare `P…` predicate to its direct claim,
    /// numbers to typed literals and anything else to a string literal.
    pub fn load_tsv(&mut self, reader: impl BufRead) -> Result<usize, StoreLoadError> {
        let mut added = 0;
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| StoreLoadError::Parse {
                line: n + 1,
                message,
            };
            let cols: Vec<&str> = line.split('\t').collect();
            if !(3..=4).contains(&cols.len()) {
                return Err(err(format!("expected 3 or 4 columns, found {}", cols.len())));
            }
            let subject = tsv_resource(cols[0], false)
                .ok_or_else(|| err(format!("subject {:?} is not an IRI", cols[0])))?;
            let predicate = tsv_resource(cols[1], true)
                .ok_or_else(|| err(format!("predicate {:?} is not an IRI", cols[1])))?;
            let object = match cols.get(3).map(|l| l.trim()) {
                Some(lang) if !lang.is_empty() => {
                    Term::lang_literal(cols[2], lang.trim_start_matches('@'))
                }
                _ => tsv_resource(cols[2], false).unwrap_or_else(|| tsv_literal(cols[2])),
            };
            added += usize::from(self.insert(Triple::new(subject, predicate, object)));
        }
        Ok(added)
    }

    /// Loads a file, N-Triples for `.nt`, TSV otherwise.
    pub fn load_path(&mut self, path: impl AsRef<Path>) -> Result<usize, StoreLoadError> {
        let path = path.as_ref();
        let reader = BufReader::new(File::open(path)?);
        if path.extension().is_some_and(|e| e == "nt") {
            self.load_ntriples(reader)
        } else {
            self.load_tsv(reader)
        }
    }

    pub fn evaluate(&self, query: &Query) -> Result<ResultSet, KgError> {
        let vars = query.pattern_vars();
        let rows = self.solutions(query, &vars)?;
        let var_index = |name: &str| vars.iter().position(|v| v == name);

        match &query.form {
            QueryForm::Ask => Ok(ResultSet::Boolean {
                value: !rows.is_empty(),
            }),
            QueryForm::Select {
                distinct,
                projection,
            } => match projection {
                Projection::Count {
                    var,
                    distinct: count_distinct,
                    alias,
                } => {
                    let value = match var {
                        None if *count_distinct => rows.iter().collect::<HashSet<_>>().len(),
                        None => rows.len(),
                        Some(v) => {
                            let values = rows
                                .iter()
                                .filter_map(|r| var_index(v).and_then(|i| r[i]));
                            if *count_distinct {
                                values.collect::<HashSet<_>>().len()
                            } else {
                                values.count()
                            }
                        }
                    };
                    Ok(ResultSet::Scalar {
                        var: alias.clone(),
                        value: value as i64,
                    })
                }
                Projection::All | Projection::Vars(_) => {
                    let out_vars = match projection {
                        Projection::Vars(v) => v.clone(),
                        _ => vars.clone(),
                    };
                    let cols: Vec<Option<usize>> =
                        out_vars.iter().map(|v| var_index(v)).collect();
                    let mut seen = HashSet::new();
                    let mut out = Vec::new();
                    for row in &rows {
                        if query.limit.is_some_and(|l| out.len() >= l) {
                            break;
                        }
                        let projected: Vec<Option<u32>> =
                            cols.iter().map(|c| c.and_then(|i| row[i])).collect();
                        if *distinct && !seen.insert(projected.clone()) {
                            continue;
                        }
                        out.push(
                            projected
                                .into_iter()
                                .map(|id| id.map(|id| self.terms[id as usize].clone()))
                                .collect(),
                        );
                    }
                    Ok(ResultSet::Bindings {
                        vars: out_vars,
                        rows: out,
                    })
                }
            },
        }
    }

    /// Joins the triple patterns left to right, then applies the filters.
    fn solutions(&self, query: &Query, vars: &[String]) -> Result<Vec<Vec<Option<u32>>>, KgError> {
        let var_index = |name: &str| vars.iter().position(|v| v == name).unwrap();
        let mut compiled = Vec::with_capacity(query.pattern.triples.len());
        for t in &query.pattern.triples {
            let mut slots = [Slot::Var(0); 3];
            for (slot, term) in slots.iter_mut().zip([&t.subject, &t.predicate, &t.object]) {
                *slot = match term {
                    PatternTerm::Var(v) => Slot::Var(var_index(v)),
                    PatternTerm::Const(c) => match self.lookup(c) {
                        Some(id) => Slot::Const(id),
                        None => return Ok(Vec::new()),
                    },
                };
            }
            compiled.push(slots);
        }

        let mut rows: Vec<Vec<Option<u32>>> = vec![vec![None; vars.len()]];
        for slots in &compiled {
            let mut next = Vec::new();
            for row in &rows {
                self.extend(row, slots, &mut next);
            }
            rows = next;
            if rows.is_empty() {
                break;
            }
        }

        if query.pattern.filters.is_empty() {
            return Ok(rows);
        }
        let mut ctx = FilterCtx {
            store: self,
            vars,
            regexes: HashMap::new(),
        };
        let mut kept = Vec::with_capacity(rows.len());
        for row in rows {
            let mut pass = true;
            for f in &query.pattern.filters {
                if ctx.ebv_of(f, &row) != Ok(true) {
                    pass = false;
                    break;
                }
            }
            if pass {
                kept.push(row);
            }
        }
        Ok(kept)
    }

    fn extend(&self, row: &[Option<u32>], slots: &[Slot; 3], out: &mut Vec<Vec<Option<u32>>>) {
        let bound: [Option<u32>; 3] = slots.map(|s| match s {
            Slot::Const(id) => Some(id),
            Slot::Var(i) => row[i],
        });
        let indexes = [&self.by_s, &self.by_p, &self.by_o];
        let mut best: Option<&[u32]> = None;
        for (pos, value) in bound.iter().enumerate() {
            if let Some(id) = value {
                let list = indexes[pos].get(id).map_or(&[][..], Vec::as_slice);
                if best.is_none_or(|b| list.len() < b.len()) {
                    best = Some(list);
                }
            }
        }
        let mut check = |triple: &[u32; 3]| {
            let mut new_row = row.to_vec();
            for pos in 0..3 {
                match (bound[pos], slots[pos]) {
                    (Some(id), _) => {
                        if triple[pos] != id {
                            return;
                        }
                    }
                    (None, Slot::Var(i)) => match new_row[i] {
                        Some(existing) if existing != triple[pos] => return,
                        _ => new_row[i] = Some(triple[pos]),
                    },
                    (None, Slot::Const(_)) => unreachable!(),
                }
            }
            out.push(new_row);
        };
        match best {
            Some(list) => list.iter().for_each(|&i| check(&self.triples[i as usize])),
            None => self.triples.iter().for_each(&mut check),
        }
    }
}

impl KnowledgeGraph for TripleStore {
    fn query(&self, sparql: &str) -> Result<ResultSet, KgError> {
        self.evaluate(&parse_query(sparql)?)
    }
}

fn tsv_resource(text: &str, predicate: bool) -> Option<Term> {
    let text = text.trim();
    if let Some(iri) = text.strip_prefix('<').and_then(|t| t.strip_suffix('>')) {
        return Some(Term::iri(iri));
    }
    let is_id = |prefix: char| {
        text.len() > 1
            && text.starts_with(prefix)
            && text[1..].bytes().all(|b| b.is_ascii_digit())
    };
    if is_id('Q') {
        return Some(Term::entity(text));
    }
    if predicate && is_id('P') {
        return Some(Term::direct_property(text));
    }
    let (prefix, local) = text.split_once(':')?;
    if local.is_empty() || local.contains(char::is_whitespace) {
        return None;
    }
    expand_default_prefix(prefix, local).map(Term::iri)
}

fn tsv_literal(text: &str) -> Term {
    if text.parse::<i64>().is_ok() {
        Term::typed_literal(text, format!("{XSD}integer"))
    } else if !text.contains(['e', 'E', 'n', 'N', 'i', 'I']) && text.parse::<f64>().is_ok() {
        Term::typed_literal(text, format!("{XSD}decimal"))
    } else {
        Term::literal(text)
    }
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Var(usize),
    Const(u32),
}

#[derive(Debug, Clone, PartialEq)]
enum Val {
    Term(Term),
    Bool(bool),
}

/// Evaluation failure; makes the enclosing filter reject the row.
#[derive(Debug, PartialEq)]
struct TypeError;

struct FilterCtx<'a> {
    store: &'a TripleStore,
    vars: &'a [String],
    regexes: HashMap<(String, String), Option<Regex>>,
}

fn boolean(b: bool) -> Result<Val, TypeError> {
    Ok(Val::Bool(b))
}

fn string_arg(v: &Val) -> Result<&str, TypeError> {
    match v {
        Val::Term(Term::Literal { value, .. }) => Ok(value),
        _ => Err(TypeError),
    }
}

fn nfc(s: &str) -> String {
    s.nfc().collect()
}

impl FilterCtx<'_> {
    fn lookup_var(&self, name: &str, row: &[Option<u32>]) -> Option<Term> {
        let i = self.vars.iter().position(|v| v == name)?;
        row[i].map(|id| self.store.terms[id as usize].clone())
    }

    fn ebv_of(&mut self, e: &Expr, row: &[Option<u32>]) -> Result<bool, TypeError> {
        let v = self.eval(e, row)?;
        ebv(&v)
    }

    fn eval(&mut self, e: &Expr, row: &[Option<u32>]) -> Result<Val, TypeError> {
        match e {
            Expr::Var(v) => self.lookup_var(v, row).map(Val::Term).ok_or(TypeError),
            Expr::Const(t) => Ok(Val::Term(canonical(t.clone()))),
            Expr::Bool(b) => boolean(*b),
            Expr::Not(inner) => boolean(!self.ebv_of(inner, row)?),
            Expr::Neg(inner) => match self.eval(inner, row)? {
                Val::Term(t) => {
                    let n = t.as_number().ok_or(TypeError)?;
                    Ok(Val::Term(Term::typed_literal((-n).to_string(), format!("{XSD}double"))))
                }
                Val::Bool(_) => Err(TypeError),
            },
            Expr::And(a, b) => match (self.ebv_of(a, row), self.ebv_of(b, row)) {
                (Ok(false), _) | (_, Ok(false)) => boolean(false),
                (Ok(true), Ok(true)) => boolean(true),
                _ => Err(TypeError),
            },
            Expr::Or(a, b) => match (self.ebv_of(a, row), self.ebv_of(b, row)) {
                (Ok(true), _) | (_, Ok(true)) => boolean(true),
                (Ok(false), Ok(false)) => boolean(false),
                _ => Err(TypeError),
            },
            Expr::Cmp(op, a, b) => {
                let lang_cmp = [a, b]
                    .iter()
                    .any(|x| matches!(x.as_ref(), Expr::Call(Func::Lang, _)));
                let left = self.eval(a, row)?;
                let right = self.eval(b, row)?;
                compare(*op, &left, &right, lang_cmp)
            }
            Expr::Call(Func::Bound, args) => match &args[0] {
                Expr::Var(v) => boolean(self.lookup_var(v, row).is_some()),
                _ => Err(TypeError),
            },
            Expr::Call(func, args) => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.eval(a, row)?);
                }
                self.call(*func, &vals)
            }
        }
    }

    fn call(&mut self, func: Func, args: &[Val]) -> Result<Val, TypeError> {
        match func {
            Func::Contains | Func::StrStarts | Func::StrEnds => {
                let hay = nfc(string_arg(&args[0])?);
                let needle = nfc(string_arg(&args[1])?);
                boolean(match func {
                    Func::Contains => hay.contains(&needle),
                    Func::StrStarts => hay.starts_with(&needle),
                    _ => hay.ends_with(&needle),
                })
            }
            Func::Lcase | Func::Ucase => match &args[0] {
                Val::Term(Term::Literal {
                    value,
                    lang,
                    datatype,
                }) => Ok(Val::Term(Term::Literal {
                    value: if func == Func::Lcase {
                        value.to_lowercase()
                    } else {
                        value.to_uppercase()
                    },
                    lang: lang.clone(),
                    datatype: datatype.clone(),
                })),
                _ => Err(TypeError),
            },
            Func::Lang => match &args[0] {
                Val::Term(Term::Literal { lang, .. }) => Ok(Val::Term(Term::literal(
                    lang.clone().unwrap_or_default(),
                ))),
                _ => Err(TypeError),
            },
            Func::LangMatches => {
                let tag = string_arg(&args[0])?.to_ascii_lowercase();
                let range = string_arg(&args[1])?.to_ascii_lowercase();
                boolean(if range == "*" {
                    !tag.is_empty()
                } else {
                    tag == range
                        || tag
                            .strip_prefix(range.as_str())
                            .is_some_and(|rest| rest.starts_with('-'))
                })
            }
            Func::Str => match &args[0] {
                Val::Term(t) => Ok(Val::Term(Term::literal(t.value()))),
                Val::Bool(_) => Err(TypeError),
            },
            Func::Regex => {
                let text = string_arg(&args[0])?.to_owned();
                let pattern = string_arg(&args[1])?.to_owned();
                let flags = match args.get(2) {
                    Some(f) => string_arg(f)?.to_owned(),
                    None => String::new(),
                };
                let re = self
                    .regexes
                    .entry((pattern.clone(), flags.clone()))
                    .or_insert_with(|| {
                        let mut prefix = String::new();
                        for flag in flags.chars().filter(|c| "imsx".contains(*c)) {
                            prefix.push(flag);
                        }
                        let full = if prefix.is_empty() {
                            pattern
                        } else {
                            format!("(?{prefix}){pattern}")
                        };
                        Regex::new(&full).ok()
                    });
                match re {
                    Some(re) => boolean(re.is_match(&text)),
                    None => Err(TypeError),
                }
            }
            Func::IsIri => boolean(matches!(&args[0], Val::Term(Term::Iri { .. }))),
            Func::IsLiteral => boolean(matches!(&args[0], Val::Term(Term::Literal { .. }))),
            Func::Bound => Err(TypeError),
        }
    }
}

fn ebv(v: &Val) -> Result<bool, TypeError> {
    match v {
        Val::Bool(b) => Ok(*b),
        Val::Term(t @ Term::Literal { value, datatype, .. }) => {
            if let Some(n) = t.as_number() {
                return Ok(n != 0.0 && !n.is_nan());
            }
            match datatype.as_deref() {
                Some(dt) if dt == format!("{XSD}boolean") => Ok(value == "true" || value == "1"),
                Some(_) => Err(TypeError),
                None => Ok(!value.is_empty()),
            }
        }
        Val::Term(Term::Iri { .. }) => Err(TypeError),
    }
}

fn compare(op: CmpOp, left: &Val, right: &Val, lang_cmp: bool) -> Result<Val, TypeError> {
    use std::cmp::Ordering;
    let ord: Option<Ordering> = match (left, right) {
        (Val::Bool(a), Val::Bool(b)) => Some(a.cmp(b)),
        (Val::Term(a), Val::Term(b)) => {
            if let (Some(x), Some(y)) = (a.as_number(), b.as_number()) {
                x.partial_cmp(&y)
            } else {
                match (a, b) {
                    (
                        Term::Literal {
                            value: va,
                            lang: la,
                            datatype: da,
                        },
                        Term::Literal {
                            value: vb,
                            lang: lb,
                            datatype: db,
                        },
                    ) => {
                        if lang_cmp {
                            Some(va.to_lowercase().cmp(&vb.to_lowercase()))
                        } else if la == lb && da == db {
                            Some(va.cmp(vb))
                        } else {
                            None
                        }
                    }
                    (Term::Iri { value: va }, Term::Iri { value: vb }) => {
                        if matches!(op, CmpOp::Eq | CmpOp::Ne) {
                            Some(va.cmp(vb))
                        } else {
                            return Err(TypeError);
                        }
                    }
                    _ => None,
                }
            }
        }
        _ => None,
    };
    let Some(ord) = ord else {
        // Incomparable terms: only (in)equality has an answer.
        return match op {
            CmpOp::Eq => boolean(false),
            CmpOp::Ne => boolean(true),
            _ => Err(TypeError),
        };
    };
    boolean(match op {
        CmpOp::Eq => ord == Ordering::Equal,
        CmpOp::Ne => ord != Ordering::Equal,
        CmpOp::Lt => ord == Ordering::Less,
        CmpOp::Le => ord != Ordering::Greater,
        CmpOp::Gt => ord == Ordering::Greater,
        CmpOp::Ge => ord != Ordering::Less,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> TripleStore {
        let tsv = "\
Q76\tP26\tQ13133
Q76\tP31\tQ5
Q13133\tP31\tQ5
Q76\trdfs:label\tBarack Obama\t@en
Q76\trdfs:label\tBarack Obama\t@fr
Q13133\trdfs:label\tMichelle Obama\ten
Q1\tP2044\t46.7
Q1\tP1082\t3000
Q5\trdfs:label\thuman\ten
";
        let mut s = TripleStore::new();
        s.load_tsv(tsv.as_bytes()).unwrap();
        s
    }

    fn values(rs: ResultSet) -> Vec<Vec<String>> {
        match rs {
            ResultSet::Bindings { rows, .. } => rows
                .into_iter()
                .map(|r| r.into_iter().map(|t| t.map(|t| t.compact()).unwrap_or_default()).collect())
                .collect(),
            other => panic!("expected bindings, got {other:?}"),
        }
    }

    #[test]
    fn tsv_loading_and_basic_select() {
        let s = store();
        assert_eq!(s.len(), 9);
        let rs = s.query("SELECT ?x WHERE { wd:Q76 wdt:P26 ?x }").unwrap();
        assert_eq!(values(rs), [["wd:Q13133"]]);
        assert!(s.contains(&Triple::new(
            Term::entity("Q1"),
            Term::direct_property("P2044"),
            Term::typed_literal("46.7", format!("{XSD}decimal"))
        )));
    }

    #[test]
    fn joins_and_filters() {
        let s = store();
        let rs = s
            .query(
                "SELECT DISTINCT ?p ?l WHERE { ?p wdt:P31 wd:Q5 . ?p rdfs:label ?l . FILTER(CONTAINS(lcase(?l), \"obama\")) FILTER(lang(?l) = \"EN\") }",
            )
            .unwrap();
        assert_eq!(
            values(rs),
            [["wd:Q76", "\"Barack Obama\"@en"], ["wd:Q13133", "\"Michelle Obama\"@en"]]
        );
        let rs = s
            .query("SELECT ?l WHERE { wd:Q76 rdfs:label ?l FILTER(CONTAINS(?l, \"obama\")) }")
            .unwrap();
        assert_eq!(values(rs).len(), 0);
        let rs = s
            .query("SELECT ?l WHERE { wd:Q76 rdfs:label ?l FILTER(REGEX(?l, \"^bar\", \"i\") && LANGMATCHES(LANG(?l), \"fr\")) }")
            .unwrap();
        assert_eq!(values(rs), [["\"Barack Obama\"@fr"]]);
    }

    #[test]
    fn count_ask_and_numeric_filters() {
        let s = store();
        assert_eq!(
            s.query("SELECT (COUNT(?x) AS ?n) WHERE { ?x wdt:P31 wd:Q5 }").unwrap(),
            ResultSet::Scalar { var: "n".into(), value: 2 }
        );
        assert_eq!(
            s.query("SELECT (COUNT(?x) AS ?n) WHERE { ?x wdt:P31 wd:Q515 }").unwrap(),
            ResultSet::Scalar { var: "n".into(), value: 0 }
        );
        assert_eq!(
            s.query("ASK WHERE { wd:Q1 wdt:P2044 ?h FILTER(?h = 46.7) }").unwrap(),
            ResultSet::Boolean { value: true }
        );
        assert_eq!(
            s.query("ASK { wd:Q1 wdt:P1082 ?p FILTER(?p > 5000) }").unwrap(),
            ResultSet::Boolean { value: false }
        );
    }

    #[test]
    fn distinct_limit_and_star() {
        let s = store();
        let rs = s.query("SELECT ?o WHERE { ?s wdt:P31 ?o } LIMIT 1").unwrap();
        assert_eq!(values(rs).len(), 1);
        let rs = s.query("SELECT DISTINCT ?o WHERE { ?s wdt:P31 ?o }").unwrap();
        assert_eq!(values(rs).len(), 1);
        let rs = s.query("SELECT * WHERE { ?s wdt:P26 ?o }").unwrap();
        assert!(matches!(&rs, ResultSet::Bindings { vars, .. } if vars == &["s", "o"]));
        let rs = s.query("SELECT ?x WHERE { ?x wdt:P26 ?x }").unwrap();
        assert!(rs.is_empty(false));
    }

    #[test]
    fn ntriples_loading() {
        let nt = "<http://www.wikidata.org/entity/Q76> <http://www.wikidata.org/prop/direct/P26> <http://www.wikidata.org/entity/Q13133> .\n\
                  # comment\n\
                  wd:Q76 rdfs:label \"Barack \\\"B\\\" Obama\"@en .\n\
                  wd:Q76 wdt:P1082 \"5\"^^xsd:integer .\n";
        let mut s = TripleStore::new();
        assert_eq!(s.load_ntriples(nt.as_bytes()).unwrap(), 3);
        let rs = s.query("SELECT ?l WHERE { wd:Q76 rdfs:label ?l }").unwrap();
        assert_eq!(values(rs), [["\"Barack \\\"B\\\" Obama\"@en"]]);
        let bad = "wd:Q76 wdt:P26 .\n";
        assert!(matches!(
            TripleStore::new().load_ntriples(bad.as_bytes()),
            Err(StoreLoadError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn unknown_constants_yield_no_rows() {
        let s = store();
        let rs = s.query("SELECT ?x WHERE { wd:Q999 wdt:P26 ?x }").unwrap();
        assert!(rs.is_empty(false));
        assert!(matches!(
            s.query("SELECT ?x WHERE { ?x wdt:P26 ?y OPTIONAL { ?y wdt:P31 ?z } }"),
            Err(KgError::UnsupportedSyntax(_))
        ));
    }
}
