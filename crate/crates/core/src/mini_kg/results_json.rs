//! The `application/sparql-results+json` document format.

use serde_json::{json, Map, Value};

use super::{KgError, ResultSet, Term, XSD};

fn term_json(term: &Term) -> Value {
    match term {
        Term::Iri { value } => json!({ "type": "uri", "value": value }),
        Term::Literal {
            value,
            lang,
            datatype,
        } => {
            let mut obj = Map::new();
            obj.insert("type".into(), "literal".into());
            obj.insert("value".into(), value.clone().into());
            if let Some(lang) = lang {
                obj.insert("xml:lang".into(), lang.clone().into());
            } else if let Some(dt) = datatype {
                obj.insert("datatype".into(), dt.clone().into());
            }
            Value::Object(obj)
        }
    }
}

/// Renders a result set as a SPARQL JSON results document. A scalar becomes a
/// single-row binding of an `xsd:integer`.
pub fn to_results_json(rs: &ResultSet) -> Value {
    match rs {
        ResultSet::Boolean { value } => json!({ "head": {}, "boolean": value }),
        ResultSet::Scalar { var, value } => json!({
            "head": { "vars": [var] },
            "results": { "bindings": [ { var.clone(): term_json(&Term::integer(*value)) } ] }
        }),
        ResultSet::Bindings { vars, rows } => {
            let bindings: Vec<Value> = rows
                .iter()
                .map(|row| {
                    let mut obj = Map::new();
                    for (var, term) in vars.iter().zip(row) {
                        if let Some(t) = term {
                            obj.insert(var.clone(), term_json(t));
                        }
                    }
                    Value::Object(obj)
                })
                .collect();
            json!({ "head": { "vars": vars }, "results": { "bindings": bindings } })
        }
    }
}

fn malformed(msg: impl Into<String>) -> KgError {
    KgError::MalformedResults(msg.into())
}

fn parse_term(v: &Value) -> Result<Term, KgError> {
    let kind = v.get("type").and_then(Value::as_str).ok_or_else(|| malformed("term without type"))?;
    let value = v
        .get("value")
        .and_then(Value::as_str)
        .ok_or_else(|| malformed("term without value"))?;
    match kind {
        "uri" => Ok(Term::iri(value)),
        "literal" | "typed-literal" => {
            if let Some(lang) = v.get("xml:lang").and_then(Value::as_str) {
                Ok(Term::lang_literal(value, lang))
            } else if let Some(dt) = v.get("datatype").and_then(Value::as_str) {
                if dt == format!("{XSD}string") {
                    Ok(Term::literal(value))
                } else {
                    Ok(Term::typed_literal(value, dt))
                }
            } else {
                Ok(Term::literal(value))
            }
        }
        "bnode" => Ok(Term::iri(format!("_:{value}"))),
        other => Err(malformed(format!("unknown term type {other:?}"))),
    }
}

/// Parses a SPARQL JSON results document. With `aggregate`, a one-row,
/// one-variable integer result is returned as [`ResultSet::Scalar`].
pub fn parse_results_json(body: &str, aggregate: bool) -> Result<ResultSet, KgError> {
    let doc: Value = serde_json::from_str(body).map_err(|e| malformed(e.to_string()))?;
    if let Some(b) = doc.get("boolean") {
        return b
            .as_bool()
            .map(|value| ResultSet::Boolean { value })
            .ok_or_else(|| malformed("boolean is not a bool"));
    }
    let vars: Vec<String> = doc
        .pointer("/head/vars")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("missing head.vars"))?
        .iter()
        .map(|v| v.as_str().map(str::to_owned).ok_or_else(|| malformed("non-string var")))
        .collect::<Result<_, _>>()?;
    let bindings = doc
        .pointer("/results/bindings")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("missing results.bindings"))?;
    let mut rows = Vec::with_capacity(bindings.len());
    for b in bindings {
        let obj = b.as_object().ok_or_else(|| malformed("binding is not an object"))?;
        let row = vars
            .iter()
            .map(|v| obj.get(v).map(parse_term).transpose())
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    if aggregate && vars.len() == 1 && rows.len() == 1 {
        if let Some(Some(term)) = rows[0].first() {
            if let Some(n) = term.as_number().filter(|n| n.fract() == 0.0) {
                return Ok(ResultSet::Scalar {
                    var: vars[0].clone(),
                    value: n as i64,
                });
            }
        }
    }
    Ok(ResultSet::Bindings { vars, rows })
}
