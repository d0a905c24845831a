//! Knowledge-graph access: a common [`KnowledgeGraph`] interface with an
//! in-process triple store ([`TripleStore`]) that evaluates the SPARQL subset
//! used by the benchmark datasets, and an HTTP client for SPARQL endpoints
//! ([`EndpointClient`]).

mod endpoint;
mod results_json;
pub mod sparql;
mod store;

pub use endpoint::{endpoint_query, EndpointClient, RetryPolicy};
pub use results_json::{parse_results_json, to_results_json};
pub use store::{StoreLoadError, TripleStore};

use std::fmt;

use serde::Serialize;
use thiserror::Error;

pub const XSD: &str = "http://www.w3.org/2001/XMLSchema#";
pub const RDF_TYPE: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type";

/// Prefixes known without a `PREFIX` declaration, as on the Wikidata endpoint.
pub const DEFAULT_PREFIXES: &[(&str, &str)] = &[
    ("wd", "http://www.wikidata.org/entity/"),
    ("wdt", "http://www.wikidata.org/prop/direct/"),
    ("p", "http://www.wikidata.org/prop/"),
    ("ps", "http://www.wikidata.org/prop/statement/"),
    ("pq", "http://www.wikidata.org/prop/qualifier/"),
    ("wikibase", "http://wikiba.se/ontology#"),
    ("rdfs", "http://www.w3.org/2000/01/rdf-schema#"),
    ("rdf", "http://www.w3.org/1999/02/22-rdf-syntax-ns#"),
    ("xsd", XSD),
    ("schema", "http://schema.org/"),
    ("skos", "http://www.w3.org/2004/02/skos/core#"),
];

pub fn expand_default_prefix(prefix: &str, local: &str) -> Option<String> {
    DEFAULT_PREFIXES
        .iter()
        .find(|(p, _)| *p == prefix)
        .map(|(_, ns)| format!("{ns}{local}"))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KgError {
    #[error("SPARQL parse error: {0}")]
    Parse(String),
    #[error("unsupported SPARQL construct: {0}")]
    UnsupportedSyntax(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("endpoint returned HTTP {status}: {message}")]
    EndpointError { status: u16, message: String },
    #[error("malformed results document: {0}")]
    MalformedResults(String),
}

impl KgError {
    /// The KG could not be reached at all, as opposed to rejecting this query.
    pub fn is_unreachable(&self) -> bool {
        matches!(self, KgError::Transport(_))
    }
}

/// An RDF term. Language tags are stored lowercase.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Term {
    Iri {
        value: String,
    },
    Literal {
        value: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        lang: Option<String>,
        #[serde(skip_serializing_if = "Option::is_none")]
        datatype: Option<String>,
    },
}

impl Term {
    pub fn iri(value: impl Into<String>) -> Self {
        Term::Iri {
            value: value.into(),
        }
    }

    pub fn literal(value: impl Into<String>) -> Self {
        Term::Literal {
            value: value.into(),
            lang: None,
            datatype: None,
        }
    }

    pub fn lang_literal(value: impl Into<String>, lang: &str) -> Self {
        Term::Literal {
            value: value.into(),
            lang: Some(lang.to_ascii_lowercase()),
            datatype: None,
        }
    }

    pub fn typed_literal(value: impl Into<String>, datatype: impl Into<String>) -> Self {
        Term::Literal {
            value: value.into(),
            lang: None,
            datatype: Some(datatype.into()),
        }
    }

    pub fn integer(n: i64) -> Self {
        Self::typed_literal(n.to_string(), format!("{XSD}integer"))
    }

    /// `wd:Q76` style shorthand for Wikidata entities.
    pub fn entity(id: &str) -> Self {
        Self::iri(format!("http://www.wikidata.org/entity/{id}"))
    }

    /// `wdt:P22` style shorthand for direct-claim properties.
    pub fn direct_property(id: &str) -> Self {
        Self::iri(format!("http://www.wikidata.org/prop/direct/{id}"))
    }

    pub fn is_iri(&self) -> bool {
        matches!(self, Term::Iri { .. })
    }

    /// Lexical form for literals, IRI string for IRIs.
    pub fn value(&self) -> &str {
        match self {
            Term::Iri { value } | Term::Literal { value, .. } => value,
        }
    }

    pub fn lang(&self) -> Option<&str> {
        match self {
            Term::Literal { lang, .. } => lang.as_deref(),
            Term::Iri { .. } => None,
        }
    }

    /// Numeric value of an `xsd` numeric literal.
    pub fn as_number(&self) -> Option<f64> {
        let Term::Literal {
            value,
            datatype: Some(dt),
            ..
        } = self
        else {
            return None;
        };
        let local = dt.strip_prefix(XSD)?;
        match local {
            "integer" | "decimal" | "double" | "float" | "int" | "long" | "short"
            | "nonNegativeInteger" | "positiveInteger" | "negativeInteger"
            | "nonPositiveInteger" | "unsignedInt" | "unsignedLong" => value.trim().parse().ok(),
            _ => None,
        }
    }

    /// Shortest readable form, using the default prefixes for IRIs.
    pub fn compact(&self) -> String {
        match self {
            Term::Iri { value } => DEFAULT_PREFIXES
                .iter()
                .filter_map(|(p, ns)| value.strip_prefix(ns).map(|local| (p, local)))
                .find(|(_, local)| !local.is_empty() && !local.contains(['/', '#']))
                .map(|(p, local)| format!("{p}:{local}"))
                .unwrap_or_else(|| format!("<{value}>")),
            Term::Literal { .. } => self.to_string(),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Iri { value } => write!(f, "<{value}>"),
            Term::Literal {
                value,
                lang,
                datatype,
            } => {
                write!(f, "\"{}\"", value.replace('\\', "\\\\").replace('"', "\\\""))?;
                if let Some(lang) = lang {
                    write!(f, "@{lang}")?;
                } else if let Some(dt) = datatype {
                    write!(f, "^^<{dt}>")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Triple {
    pub subject: Term,
    pub predicate: Term,
    pub object: Term,
}

impl Triple {
    pub fn new(subject: Term, predicate: Term, object: Term) -> Self {
        Self {
            subject,
            predicate,
            object,
        }
    }
}

/// A SPARQL query response.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ResultSet {
    /// SELECT results; each row holds one optional value per variable, in `vars` order.
    Bindings {
        vars: Vec<String>,
        rows: Vec<Vec<Option<Term>>>,
    },
    /// ASK results.
    Boolean { value: bool },
    /// Single aggregate value, e.g. `SELECT (COUNT(?x) AS ?n)`.
    Scalar { var: String, value: i64 },
}

impl ResultSet {
    pub fn empty_bindings(vars: Vec<String>) -> Self {
        ResultSet::Bindings {
            vars,
            rows: Vec::new(),
        }
    }

    /// Whether this counts as "no answer". Booleans always carry an answer; a
    /// zero count does only when `count_zero_is_empty` is false.
    pub fn is_empty(&self, count_zero_is_empty: bool) -> bool {
        match self {
            ResultSet::Bindings { rows, .. } => rows.iter().all(|r| r.iter().all(Option::is_none)),
            ResultSet::Boolean { .. } => false,
            ResultSet::Scalar { value, .. } => count_zero_is_empty && *value == 0,
        }
    }

    pub fn row_count(&self) -> usize {
        match self {
            ResultSet::Bindings { rows, .. } => rows.len(),
            _ => 1,
        }
    }
}

/// Anything that answers SPARQL queries.
pub trait KnowledgeGraph: Send + Sync {
    fn query(&self, sparql: &str) -> Result<ResultSet, KgError>;
}

impl<T: KnowledgeGraph + ?Sized> KnowledgeGraph for Box<T> {
    fn query(&self, sparql: &str) -> Result<ResultSet, KgError> {
        (**self).query(sparql)
    }
}

impl<T: KnowledgeGraph + ?Sized> KnowledgeGraph for &T {
    fn query(&self, sparql: &str) -> Result<ResultSet, KgError> {
        (**self).query(sparql)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compact_forms() {
        assert_eq!(Term::entity("Q76").compact(), "wd:Q76");
        assert_eq!(Term::direct_property("P22").compact(), "wdt:P22");
        assert_eq!(Term::iri("http://example.org/x").compact(), "<http://example.org/x>");
        assert_eq!(Term::lang_literal("Obama", "EN").to_string(), "\"Obama\"@en");
        assert_eq!(Term::integer(3).as_number(), Some(3.0));
        assert_eq!(Term::literal("3").as_number(), None);
    }

    #[test]
    fn emptiness_rules() {
        let zero = ResultSet::Scalar { var: "c".into(), value: 0 };
        assert!(!zero.is_empty(false));
        assert!(zero.is_empty(true));
        assert!(!ResultSet::Boolean { value: false }.is_empty(true));
        assert!(ResultSet::empty_bindings(vec!["x".into()]).is_empty(false));
        let unbound = ResultSet::Bindings { vars: vec!["x".into()], rows: vec![vec![None]] };
        assert!(unbound.is_empty(false));
    }
}
