use std::thread;
use std::time::Duration;

use ureq::Agent;

use super::{parse_results_json, KgError, KnowledgeGraph, ResultSet};

/// Longer queries are sent as a form POST instead of a GET parameter.
const MAX_GET_QUERY_LEN: usize = 2000;
const ACCEPT: &str = "application/sparql-results+json";

/// Retries for transport failures and 429/5xx responses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            initial_backoff: Duration::from_millis(250),
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, attempt: u32) -> Duration {
        self.initial_backoff
            .mul_f64(self.multiplier.powi(attempt as i32))
    }
}

/// A remote SPARQL endpoint speaking the SPARQL 1.1 protocol.
#[derive(Debug, Clone)]
pub struct EndpointClient {
    url: String,
    agent: Agent,
    retry: RetryPolicy,
}

impl EndpointClient {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .user_agent(concat!("kgqa/", env!("CARGO_PKG_VERSION")))
            .build()
            .into();
        Self {
            url: url.into(),
            agent,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry_policy(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn attempt(&self, sparql: &str) -> Result<(u16, String), KgError> {
        let sent = if sparql.len() > MAX_GET_QUERY_LEN {
            self.agent
                .post(&self.url)
                .header("Accept", ACCEPT)
                .send_form([("query", sparql)])
        } else {
            self.agent
                .get(&self.url)
                .header("Accept", ACCEPT)
                .query("query", sparql)
                .call()
        };
        let mut response = sent.map_err(map_error)?;
        let status = response.status().as_u16();
        let body = response.body_mut().read_to_string().map_err(map_error)?;
        Ok((status, body))
    }
}

fn map_error(e: ureq::Error) -> KgError {
    match e {
        ureq::Error::Timeout(_) => KgError::Timeout,
        other => KgError::Transport(other.to_string()),
    }
}

impl KnowledgeGraph for EndpointClient {
    fn query(&self, sparql: &str) -> Result<ResultSet, KgError> {
        let mut attempt = 0;
        loop {
            let outcome = self.attempt(sparql);
            let retryable = match &outcome {
                Err(KgError::Transport(_)) => true,
                Ok((status, _)) => *status == 429 || *status >= 500,
                Err(_) => false,
            };
            if retryable && attempt < self.retry.max_retries {
                let wait = self.retry.backoff(attempt);
                log::debug!("endpoint retry {} after {wait:?}", attempt + 1);
                thread::sleep(wait);
                attempt += 1;
                continue;
            }
            let (status, body) = outcome?;
            if !(200..300).contains(&status) {
                let mut message = body;
                message.truncate(500);
                return Err(KgError::EndpointError { status, message });
            }
            let aggregate = sparql.to_ascii_uppercase().contains("COUNT(");
            return parse_results_json(&body, aggregate);
        }
    }
}

/// One-off query against `url`.
pub fn endpoint_query(url: &str, sparql: &str, timeout: Duration) -> Result<ResultSet, KgError> {
    EndpointClient::new(url, timeout).query(sparql)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_grows_geometrically() {
        let p = RetryPolicy::default();
        assert_eq!(p.backoff(0), Duration::from_millis(250));
        assert_eq!(p.backoff(1), Duration::from_millis(500));
        assert_eq!(p.backoff(2), Duration::from_millis(1000));
    }

    #[test]
    fn refused_connection_is_unreachable() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let port = listener.local_addr().unwrap().port();
        drop(listener);
        let client = EndpointClient::new(format!("http://127.0.0.1:{port}/sparql"), Duration::from_secs(2))
            .with_retry_policy(RetryPolicy {
                max_retries: 1,
                initial_backoff: Duration::from_millis(1),
                multiplier: 1.0,
            });
        let err = client.query("ASK { ?s ?p ?o }").unwrap_err();
        assert!(err.is_unreachable(), "{err:?}");
    }
}
