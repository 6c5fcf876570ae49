//! Client for the JSON-over-HTTP inference service.
//!
//! Wire format:
//!
//! | request | response |
//! |---|---|
//! | `GET /health` | `{"models": {...}, "dim": int}` |
//! | `POST /embed {"texts": [..]}` | `{"dim": int, "vectors": [[f64..]..], "model_id": str}` |
//! | `POST /sentiment {"texts": [..]}` | `{"labels": [str..], "model_id": str}` |
//! | `POST /emotions {"texts": [..]}` | `{"distributions": [[f64; 28]..], "labels": [str; 28], "model_id": str}` |
//!
//! Requests carry at most `max_batch` texts; larger inputs are split. Every
//! response is checked for length and shape before it leaves this module.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::affect::{ClassifierProvider, SentimentLabel, EMOTION_LABELS, NUM_EMOTIONS};
use crate::semantic::{EmbeddingProvider, EmbeddingVector, ProviderError, DEFAULT_BATCH};

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct HealthResponse {
    #[serde(default)]
    pub models: BTreeMap<String, serde_json::Value>,
    pub dim: usize,
}

#[derive(Serialize)]
struct TextsRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    vectors: Vec<Vec<f64>>,
    #[allow(dead_code)]
    model_id: String,
}

#[derive(Deserialize)]
struct SentimentResponse {
    labels: Vec<String>,
    #[allow(dead_code)]
    model_id: String,
}

#[derive(Deserialize)]
struct EmotionsResponse {
    distributions: Vec<Vec<f64>>,
    labels: Vec<String>,
    #[allow(dead_code)]
    model_id: String,
}

/// Embedding and classifier provider backed by a running inference service.
#[derive(Debug)]
pub struct RemoteProvider {
    base_url: String,
    name: String,
    agent: ureq::Agent,
    dim: usize,
    max_batch: usize,
    max_retries: usize,
}

impl RemoteProvider {
    /// Connects and reads the embedding dimension from `/health`.
    pub fn connect(base_url: &str) -> Result<Self, ProviderError> {
        let base_url = base_url.trim_end_matches('/').to_string();
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(10))
            .timeout(Duration::from_secs(300))
            .build();
        let mut provider = RemoteProvider {
            name: format!("remote:{base_url}"),
            base_url,
            agent,
            dim: 0,
            max_batch: DEFAULT_BATCH,
            max_retries: 0,
        };
        let health = provider.health()?;
        if health.dim == 0 {
            return Err(ProviderError::Protocol("/health reported dim 0".into()));
        }
        provider.dim = health.dim;
        Ok(provider)
    }

    pub fn with_max_batch(mut self, max_batch: usize) -> Self {
        self.max_batch = max_batch.max(1);
        self
    }

    /// Retries transport failures (not HTTP error statuses) this many times.
    pub fn with_retries(mut self, retries: usize) -> Self {
        self.max_retries = retries;
        self
    }

    pub fn health(&self) -> Result<HealthResponse, ProviderError> {
        let url = format!("{}/health", self.base_url);
        self.call(|| self.agent.get(&url).call())
    }

    fn call<T: DeserializeOwned>(
        &self,
        send: impl Fn() -> Result<ureq::Response, ureq::Error>,
    ) -> Result<T, ProviderError> {
        let mut attempt = 0;
        let response = loop {
            match send() {
                Ok(r) => break r,
                Err(ureq::Error::Status(code, r)) => {
                    let url = r.get_url().to_string();
                    let body = r.into_string().unwrap_or_default();
                    return Err(ProviderError::Protocol(format!(
                        "{url} returned HTTP {code}: {}",
                        body.trim()
                    )));
                }
                Err(e) if attempt < self.max_retries => {
                    log::warn!("retrying after transport error: {e}");
                    attempt += 1;
                }
                Err(e) => return Err(ProviderError::Transport(e.to_string())),
            }
        };
        response
            .into_json()
            .map_err(|e| ProviderError::Protocol(format!("malformed response body: {e}")))
    }

    fn post<T: DeserializeOwned>(&self, endpoint: &str, texts: &[&str]) -> Result<T, ProviderError> {
        let url = format!("{}/{endpoint}", self.base_url);
        self.call(|| self.agent.post(&url).send_json(TextsRequest { texts }))
    }

    fn batched<T>(
        &self,
        texts: &[&str],
        mut f: impl FnMut(&[&str]) -> Result<Vec<T>, ProviderError>,
    ) -> Result<Vec<T>, ProviderError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.max_batch) {
            let items = f(chunk)?;
            if items.len() != chunk.len() {
                return Err(ProviderError::Protocol(format!(
                    "sent {} texts, received {} results",
                    chunk.len(),
                    items.len()
                )));
            }
            out.extend(items);
        }
        Ok(out)
    }
}

/// Maps distributions from the service's label order to the taxonomy order.
fn reorder_emotions(
    labels: &[String],
    distributions: Vec<Vec<f64>>,
) -> Result<Vec<Vec<f64>>, ProviderError> {
    if labels.len() != NUM_EMOTIONS {
        return Err(ProviderError::Protocol(format!(
            "expected {NUM_EMOTIONS} emotion labels, got {}",
            labels.len()
        )));
    }
    let mut source_of = [usize::MAX; NUM_EMOTIONS];
    for (pos, label) in labels.iter().enumerate() {
        let idx = EMOTION_LABELS
            .iter()
            .position(|l| l.eq_ignore_ascii_case(label))
            .ok_or_else(|| ProviderError::Protocol(format!("unknown emotion label \"{label}\"")))?;
        if source_of[idx] != usize::MAX {
            return Err(ProviderError::Protocol(format!("duplicate emotion label \"{label}\"")));
        }
        source_of[idx] = pos;
    }
    distributions
        .into_iter()
        .map(|d| {
            if d.len() != NUM_EMOTIONS {
                return Err(ProviderError::Protocol(format!(
                    "emotion distribution of length {}",
                    d.len()
                )));
            }
            Ok(source_of.iter().map(|&pos| d[pos]).collect())
        })
        .collect()
}

impl EmbeddingProvider for RemoteProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        self.batched(texts, |chunk| {
            let r: EmbedResponse = self.post("embed", chunk)?;
            if r.dim != self.dim {
                return Err(ProviderError::Protocol(format!(
                    "/embed reported dim {} but /health reported {}",
                    r.dim, self.dim
                )));
            }
            r.vectors
                .into_iter()
                .map(|v| {
                    if v.len() != self.dim {
                        return Err(ProviderError::Protocol(format!(
                            "vector of length {} for dim {}",
                            v.len(),
                            self.dim
                        )));
                    }
                    EmbeddingVector::new(v).map_err(|e| ProviderError::Protocol(e.to_string()))
                })
                .collect()
        })
    }
}

impl ClassifierProvider for RemoteProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn sentiment(&self, texts: &[&str]) -> Result<Vec<SentimentLabel>, ProviderError> {
        self.batched(texts, |chunk| {
            let r: SentimentResponse = self.post("sentiment", chunk)?;
            r.labels
                .iter()
                .map(|l| l.parse().map_err(|e: crate::affect::AffectError| ProviderError::Protocol(e.to_string())))
                .collect()
        })
    }

    fn emotions(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError> {
        self.batched(texts, |chunk| {
            let r: EmotionsResponse = self.post("emotions", chunk)?;
            reorder_emotions(&r.labels, r.distributions)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};
    use std::thread;

    /// Serves canned replies and records every (path, body) pair it receives.
    struct MockServer {
        url: String,
        requests: Arc<Mutex<Vec<(String, serde_json::Value)>>>,
    }

    type Handler = dyn Fn(&str, &serde_json::Value) -> (u16, String) + Send + Sync;

    fn serve(handler: Box<Handler>) -> MockServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&requests);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request_line = String::new();
                reader.read_line(&mut request_line).unwrap();
                let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
                let mut content_length = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = line.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            content_length = v.trim().parse().unwrap();
                        }
                    }
                }
                let mut body = vec![0; content_length];
                reader.read_exact(&mut body).unwrap();
                let json = serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null);
                let (status, reply) = handler(&path, &json);
                log.lock().unwrap().push((path, json));
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                    reply.len()
                )
                .unwrap();
            }
        });
        MockServer { url, requests }
    }

    fn texts_of(body: &serde_json::Value) -> Vec<String> {
        body["texts"]
            .as_array()
            .map(|a| a.iter().map(|t| t.as_str().unwrap().to_string()).collect())
            .unwrap_or_default()
    }

    /// A well-behaved service: 3-dim embeddings from text length, sentiment
    /// by keyword, emotions in reversed taxonomy order.
    fn good_handler(path: &str, body: &serde_json::Value) -> (u16, String) {
        let texts = texts_of(body);
        match path {
            "/health" => (200, r#"{"models":{"embed":"toy"},"dim":3}"#.into()),
            "/embed" => {
                let vectors: Vec<Vec<f64>> =
                    texts.iter().map(|t| vec![t.len() as f64, 1.0, 0.5]).collect();
                (200, serde_json::json!({"dim": 3, "vectors": vectors, "model_id": "toy"}).to_string())
            }
            "/sentiment" => {
                let labels: Vec<&str> = texts
                    .iter()
                    .map(|t| if t.contains("bad") { "Very Negative" } else { "Neutral" })
                    .collect();
                (200, serde_json::json!({"labels": labels, "model_id": "toy"}).to_string())
            }
            "/emotions" => {
                let labels: Vec<&str> = EMOTION_LABELS.iter().rev().copied().collect();
                // position 0 in reversed order is "neutral"
                let dists: Vec<Vec<f64>> = texts
                    .iter()
                    .map(|_| {
                        let mut d = vec![0.0; NUM_EMOTIONS];
                        d[0] = 0.9;
                        d
                    })
                    .collect();
                (200, serde_json::json!({"distributions": dists, "labels": labels, "model_id": "toy"}).to_string())
            }
            _ => (404, "{}".into()),
        }
    }

    #[test]
    fn health_and_embed() {
        let server = serve(Box::new(good_handler));
        let p = RemoteProvider::connect(&server.url).unwrap();
        assert_eq!(EmbeddingProvider::dim(&p), 3);
        let v = p.embed(&["ab", "abcd"]).unwrap();
        assert_eq!(v[0].values(), &[2.0, 1.0, 0.5]);
        assert_eq!(v[1].values(), &[4.0, 1.0, 0.5]);
        let reqs = server.requests.lock().unwrap();
        assert_eq!(reqs[1].0, "/embed");
        assert_eq!(reqs[1].1, serde_json::json!({"texts": ["ab", "abcd"]}));
    }

    #[test]
    fn batches_are_capped() {
        let server = serve(Box::new(good_handler));
        let p = RemoteProvider::connect(&server.url).unwrap();
        let owned: Vec<String> = (0..150).map(|i| "x".repeat(i + 1)).collect();
        let texts: Vec<&str> = owned.iter().map(String::as_str).collect();
        let v = p.embed(&texts).unwrap();
        assert_eq!(v.len(), 150);
        assert_eq!(v[149].values()[0], 150.0);
        let sizes: Vec<usize> = server
            .requests
            .lock()
            .unwrap()
            .iter()
            .filter(|(p, _)| p == "/embed")
            .map(|(_, b)| texts_of(b).len())
            .collect();
        assert_eq!(sizes, vec![64, 64, 22]);
    }

    #[test]
    fn classifier_endpoints() {
        let server = serve(Box::new(good_handler));
        let p = RemoteProvider::connect(&server.url).unwrap();
        assert_eq!(
            p.sentiment(&["fine", "bad news"]).unwrap(),
            vec![SentimentLabel::Neutral, SentimentLabel::VeryNegative]
        );
        let e = p.emotions(&["fine"]).unwrap();
        assert_eq!(e[0].len(), NUM_EMOTIONS);
        assert_eq!(e[0][NUM_EMOTIONS - 1], 0.9);
        assert_eq!(e[0][0], 0.0);
    }

    #[test]
    fn short_reply_is_protocol_error() {
        let server = serve(Box::new(|path: &str, body: &serde_json::Value| match path {
            "/health" => (200, r#"{"models":{},"dim":2}"#.into()),
            _ => {
                let n = texts_of(body).len().saturating_sub(1);
                (200, serde_json::json!({"dim": 2, "vectors": vec![vec![1.0, 0.0]; n], "model_id": "m"}).to_string())
            }
        }));
        let p = RemoteProvider::connect(&server.url).unwrap();
        assert!(matches!(p.embed(&["a", "b"]), Err(ProviderError::Protocol(_))));
    }

    #[test]
    fn wrong_dim_is_protocol_error() {
        let server = serve(Box::new(|path: &str, _: &serde_json::Value| match path {
            "/health" => (200, r#"{"models":{},"dim":2}"#.into()),
            _ => (200, r#"{"dim":2,"vectors":[[1.0,2.0,3.0]],"model_id":"m"}"#.into()),
        }));
        let p = RemoteProvider::connect(&server.url).unwrap();
        assert!(matches!(p.embed(&["a"]), Err(ProviderError::Protocol(_))));
    }

    #[test]
    fn short_emotion_vector_is_protocol_error() {
        let server = serve(Box::new(|path: &str, _: &serde_json::Value| match path {
            "/health" => (200, r#"{"models":{},"dim":2}"#.into()),
            _ => (
                200,
                serde_json::json!({"distributions": [vec![0.0; 27]], "labels": EMOTION_LABELS, "model_id": "m"})
                    .to_string(),
            ),
        }));
        let p = RemoteProvider::connect(&server.url).unwrap();
        assert!(matches!(p.emotions(&["a"]), Err(ProviderError::Protocol(_))));
    }

    #[test]
    fn http_error_status_carries_reason() {
        let server = serve(Box::new(|path: &str, _: &serde_json::Value| match path {
            "/health" => (200, r#"{"models":{},"dim":2}"#.into()),
            _ => (413, r#"{"error":"batch too large"}"#.into()),
        }));
        let p = RemoteProvider::connect(&server.url).unwrap();
        match p.embed(&["a"]) {
            Err(ProviderError::Protocol(m)) => {
                assert!(m.contains("413"), "{m}");
                assert!(m.contains("batch too large"), "{m}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unreachable_service_is_transport_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        drop(listener);
        assert!(matches!(RemoteProvider::connect(&url), Err(ProviderError::Transport(_))));
    }

    #[test]
    fn reorder_rejects_unknown_label() {
        let mut labels: Vec<String> = EMOTION_LABELS.iter().map(|s| s.to_string()).collect();
        labels[3] = "boredom".into();
        assert!(reorder_emotions(&labels, vec![vec![0.0; 28]]).is_err());
    }
}
