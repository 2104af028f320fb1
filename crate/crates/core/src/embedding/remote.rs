//! HTTP embedding provider.
//!
//! Request: `POST {endpoint}` with `{"model": ..., "input": [...]}` and the
//! credential as a bearer token. The response must contain an array of objects
//! with a numeric `embedding` field, in input order; either the top-level value
//! or its `data` field.

use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use super::{EmbedError, Embedder, ProviderConfig};

pub struct RemoteEmbedder {
    config: ProviderConfig,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    pub fn new(config: ProviderConfig) -> Result<Self, EmbedError> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .connect_timeout(Duration::from_secs(10))
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| EmbedError::Config(e.to_string()))?;
        Ok(Self { config, client })
    }

    fn request_once(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let endpoint = self.config.endpoint_url.as_deref().unwrap_or_default();
        let credential = self.config.api_credential.as_deref().unwrap_or_default();
        let body = json!({ "model": self.config.model_name, "input": texts });
        let resp = self
            .client
            .post(endpoint)
            .header(self.config.auth_header.as_str(), format!("Bearer {credential}"))
            .json(&body)
            .send()
            .map_err(|e| EmbedError::Transport {
                status: e.status().map(|s| s.as_u16()),
                message: e.to_string(),
                retriable: true,
            })?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(EmbedError::Transport {
                status: Some(status.as_u16()),
                message: truncate(&text, 200),
                retriable: status.as_u16() == 429 || status.is_server_error(),
            });
        }
        let value: Value = resp
            .json()
            .map_err(|e| EmbedError::Response(e.to_string()))?;
        parse_response(&value, texts.len())
    }

    fn request_with_retries(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let mut attempt = 0;
        loop {
            match self.request_once(texts) {
                Err(EmbedError::Transport { retriable: true, .. }) if attempt < self.config.max_retries => {
                    let delay = self.config.backoff_ms.saturating_mul(1 << attempt);
                    log::warn!("embedding request failed, retry {} in {delay} ms", attempt + 1);
                    thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

pub(crate) fn parse_response(value: &Value, expected: usize) -> Result<Vec<Vec<f64>>, EmbedError> {
    let items = value
        .as_array()
        .or_else(|| value.get("data").and_then(Value::as_array))
        .ok_or_else(|| EmbedError::Response("no embedding array in response".into()))?;
    if items.len() != expected {
        return Err(EmbedError::Response(format!(
            "expected {expected} embeddings, got {}",
            items.len()
        )));
    }
    items
        .iter()
        .map(|item| {
            let arr = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| EmbedError::Response("item without `embedding` array".into()))?;
            arr.iter()
                .map(|x| {
                    x.as_f64()
                        .ok_or_else(|| EmbedError::Response("non-numeric embedding entry".into()))
                })
                .collect()
        })
        .collect()
}

impl Embedder for RemoteEmbedder {
    fn provider_tag(&self) -> String {
        self.config.provider_tag()
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        for r in self.embed_many(texts) {
            out.push(r?);
        }
        Ok(out)
    }

    /// Sends `batch_size` inputs per request with at most `max_in_flight`
    /// requests outstanding. A failed batch fails only its own inputs.
    fn embed_many(&self, texts: &[&str]) -> Vec<Result<Vec<f64>, EmbedError>> {
        let batches: Vec<&[&str]> = texts.chunks(self.config.batch_size).collect();
        let mut results: Vec<Result<Vec<f64>, EmbedError>> = Vec::with_capacity(texts.len());
        for wave in batches.chunks(self.config.max_in_flight) {
            let outcomes: Vec<_> = thread::scope(|s| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|batch| s.spawn(move || self.request_with_retries(batch)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("embedding worker panicked"))
                    .collect()
            });
            for (batch, outcome) in wave.iter().zip(outcomes) {
                match outcome {
                    Ok(vectors) => results.extend(vectors.into_iter().map(Ok)),
                    Err(e) => {
                        let (status, message, retriable) = match &e {
                            EmbedError::Transport {
                                status,
                                message,
                                retriable,
                            } => (*status, message.clone(), *retriable),
                            other => (None, other.to_string(), false),
                        };
                        let is_response = matches!(e, EmbedError::Response(_));
                        results.extend(batch.iter().map(|_| {
                            Err(if is_response {
                                EmbedError::Response(message.clone())
                            } else {
                                EmbedError::Transport {
                                    status,
                                    message: message.clone(),
                                    retriable,
                                }
                            })
                        }));
                    }
                }
            }
        }
        results
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_data_wrapper_and_bare_array() {
        let v = json!({"data": [{"embedding": [1.0, 2.0]}, {"embedding": [3.0, 4.0]}]});
        assert_eq!(parse_response(&v, 2).unwrap(), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let v = json!([{"embedding": [0.5]}]);
        assert_eq!(parse_response(&v, 1).unwrap(), vec![vec![0.5]]);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(parse_response(&json!({"data": []}), 1).is_err());
        assert!(parse_response(&json!({"x": 1}), 1).is_err());
        assert!(parse_response(&json!([{"embedding": ["a"]}]), 1).is_err());
    }
}
