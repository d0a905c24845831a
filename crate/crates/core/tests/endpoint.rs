use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use kgqa_core::mini_kg::{EndpointClient, KgError, KnowledgeGraph, ResultSet, RetryPolicy, Term};

/// Serves one canned response per connection, in order, and reports each raw request.
fn serve(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/sparql", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request = String::new();
            let mut content_length = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap() == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    content_length = v.trim().parse().unwrap();
                }
                request.push_str(&line);
            }
            let mut payload = vec![0; content_length];
            reader.read_exact(&mut payload).unwrap();
            request.push_str(&String::from_utf8_lossy(&payload));
            let _ = tx.send(request);
            let mut stream = stream;
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/sparql-results+json\r\n\
                 Content-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
        }
    });
    (url, rx)
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_retries: 2,
        initial_backoff: Duration::from_millis(5),
        multiplier: 2.0,
    }
}

const SPOUSE: &str = r#"{"head":{"vars":["x"]},"results":{"bindings":[
  {"x":{"type":"uri","value":"http://www.wikidata.org/entity/Q13133"}}]}}"#;

#[test]
fn select_over_http() {
    let (url, requests) = serve(vec![(200, SPOUSE.into())]);
    let client = EndpointClient::new(url, Duration::from_secs(5));
    let rs = client.query("SELECT ?x WHERE { wd:Q76 wdt:P26 ?x }").unwrap();
    assert_eq!(
        rs,
        ResultSet::Bindings {
            vars: vec!["x".into()],
            rows: vec![vec![Some(Term::entity("Q13133"))]],
        }
    );
    let req = requests.recv().unwrap();
    assert!(req.starts_with("GET /sparql?query="), "{req}");
    assert!(req.to_ascii_lowercase().contains("accept: application/sparql-results+json"));
}

#[test]
fn count_and_ask_results() {
    let count = r#"{"head":{"vars":["n"]},"results":{"bindings":[
      {"n":{"type":"literal","datatype":"http://www.w3.org/2001/XMLSchema#integer","value":"0"}}]}}"#;
    let (url, _) = serve(vec![(200, count.into()), (200, r#"{"head":{},"boolean":true}"#.into())]);
    let client = EndpointClient::new(url, Duration::from_secs(5));
    let rs = client
        .query("SELECT (COUNT(?x) AS ?n) WHERE { ?x wdt:P22 wd:Q76 }")
        .unwrap();
    assert_eq!(rs, ResultSet::Scalar { var: "n".into(), value: 0 });
    let rs = client.query("ASK { wd:Q76 wdt:P26 wd:Q13133 }").unwrap();
    assert_eq!(rs, ResultSet::Boolean { value: true });
}

#[test]
fn retries_server_errors() {
    let (url, requests) = serve(vec![
        (503, "busy".into()),
        (429, "slow down".into()),
        (200, SPOUSE.into()),
    ]);
    let client = EndpointClient::new(url, Duration::from_secs(5)).with_retry_policy(fast_retry());
    assert!(client.query("SELECT ?x WHERE { wd:Q76 wdt:P26 ?x }").is_ok());
    assert_eq!(requests.try_iter().count(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, requests) = serve(vec![(400, "bad query".into()), (200, SPOUSE.into())]);
    let client = EndpointClient::new(url, Duration::from_secs(5)).with_retry_policy(fast_retry());
    match client.query("SELECT ?x WHERE { wd:Q76 wdt:P26 ?x }") {
        Err(KgError::EndpointError { status, message }) => {
            assert_eq!(status, 400);
            assert!(message.contains("bad query"));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(requests.try_iter().count(), 1);
}

#[test]
fn gives_up_after_retry_budget() {
    let (url, _) = serve(vec![(502, "a".into()), (502, "b".into()), (502, "c".into())]);
    let client = EndpointClient::new(url, Duration::from_secs(5)).with_retry_policy(fast_retry());
    let err = client.query("ASK { ?s ?p ?o }").unwrap_err();
    assert!(matches!(err, KgError::EndpointError { status: 502, .. }), "{err:?}");
}

#[test]
fn long_queries_are_posted() {
    let (url, requests) = serve(vec![(200, SPOUSE.into())]);
    let client = EndpointClient::new(url, Duration::from_secs(5));
    let filler = "x".repeat(2500);
    let sparql = format!("SELECT ?x WHERE {{ wd:Q76 wdt:P26 ?x . FILTER(?x != \"{filler}\") }}");
    client.query(&sparql).unwrap();
    let req = requests.recv().unwrap();
    assert!(req.starts_with("POST /sparql"), "{}", &req[..40]);
    assert!(req.contains("query="));
}

#[test]
fn malformed_body_is_reported() {
    let (url, _) = serve(vec![(200, "<html>oops</html>".into())]);
    let client = EndpointClient::new(url, Duration::from_secs(5));
    let err = client.query("SELECT ?x WHERE { ?x ?p ?o }").unwrap_err();
    assert!(matches!(err, KgError::MalformedResults(_)), "{err:?}");
    assert!(!err.is_unreachable());
}
