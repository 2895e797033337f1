use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{GatewayError, GenerationRequest, Provider, Result};

/// OpenAI-compatible HTTP backend: `/chat/completions`, `/embeddings`, and a
/// Jina-style `/rerank`.
pub struct OpenAiProvider {
    base: String,
    key: String,
    client: Client,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f32>,
}

#[derive(Deserialize)]
struct RerankResponse {
    results: Vec<RerankResult>,
}

#[derive(Deserialize)]
struct RerankResult {
    index: usize,
    relevance_score: f32,
}

impl OpenAiProvider {
    pub fn new(endpoint: &str, key: String, timeout: Duration) -> Result<Self> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Config(format!("http client: {e}")))?;
        Ok(Self {
            base: endpoint.trim_end_matches('/').to_string(),
            key,
            client,
        })
    }

    fn post<T: for<'de> Deserialize<'de>>(&self, path: &str, body: Value) -> Result<T> {
        let url = format!("{}/{path}", self.base);
        let resp = self
            .client
            .post(&url)
            .bearer_auth(&self.key)
            .json(&body)
            .send()
            .map_err(|e| GatewayError::Transport(format!("{url}: {e}")))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| GatewayError::Transport(format!("{url}: reading body: {e}")))?;
        if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            return Err(GatewayError::Transport(format!("{url}: HTTP {status}")));
        }
        if !status.is_success() {
            return Err(GatewayError::Protocol(format!("{url}: HTTP {status}: {}", snippet(&text))));
        }
        serde_json::from_str(&text)
            .map_err(|e| GatewayError::Protocol(format!("{url}: malformed response: {e}")))
    }
}

fn snippet(s: &str) -> &str {
    match s.char_indices().nth(200) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

impl Provider for OpenAiProvider {
    fn name(&self) -> &str {
        "openai"
    }

    fn generate(&self, model: &str, req: &GenerationRequest) -> Result<String> {
        let body = json!({
            "model": model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        });
        let resp: ChatResponse = self.post("chat/completions", body)?;
        resp.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| GatewayError::Protocol("completion has no content".into()))
    }

    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let resp: EmbeddingResponse = self.post("embeddings", json!({"model": model, "input": texts}))?;
        let mut out: Vec<Option<Vec<f32>>> = vec![None; texts.len()];
        for d in resp.data {
            let slot = out
                .get_mut(d.index)
                .ok_or_else(|| GatewayError::Protocol(format!("embedding index {} out of range", d.index)))?;
            *slot = Some(d.embedding);
        }
        out.into_iter()
            .enumerate()
            .map(|(i, v)| v.ok_or_else(|| GatewayError::Protocol(format!("missing embedding {i}"))))
            .collect()
    }

    fn rerank(&self, model: &str, query: &str, candidates: &[String]) -> Result<Vec<(usize, f32)>> {
        let body = json!({"model": model, "query": query, "documents": candidates});
        let resp: RerankResponse = self.post("rerank", body)?;
        Ok(resp.results.into_iter().map(|r| (r.index, r.relevance_score)).collect())
    }

    fn embedding_space(&self, model: &str) -> String {
        format!("openai:{model}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, GenerationRole, ProviderConfig};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::Arc;

    /// Serves `responses` in order, one per connection, and returns the
    /// request paths it saw.
    fn stub(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let mut paths = Vec::new();
            for (status, body) in responses {
                let (mut sock, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(sock.try_clone().unwrap());
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                paths.push(line.split_whitespace().nth(1).unwrap_or("").to_string());
                let mut len = 0usize;
                loop {
                    let mut h = String::new();
                    reader.read_line(&mut h).unwrap();
                    if h == "\r\n" || h.is_empty() {
                        break;
                    }
                    if let Some(v) = h.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                write!(
                    sock,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            paths
        });
        (format!("http://{addr}/v1"), handle)
    }

    #[test]
    fn talks_openai_protocol() {
        let (base, h) = stub(vec![
            (200, r#"{"choices":[{"message":{"content":"hi"}}]}"#.into()),
            (200, r#"{"data":[{"index":1,"embedding":[0,2]},{"index":0,"embedding":[3,4]}]}"#.into()),
            (200, r#"{"results":[{"index":1,"relevance_score":0.9},{"index":0,"relevance_score":0.1}]}"#.into()),
        ]);
        let p = OpenAiProvider::new(&base, "k".into(), Duration::from_secs(5)).unwrap();
        let gw = Gateway::new(Arc::new(p), ProviderConfig::default());
        let out = gw.generate(&GenerationRequest::new(GenerationRole::Answer, "q")).unwrap();
        assert_eq!(out, "hi");
        let v = gw.embed(&["a".into(), "b".into()]).unwrap();
        assert_eq!(v[0].values(), &[0.6, 0.8]);
        assert_eq!(v[1].values(), &[0.0, 1.0]);
        let r = gw.rerank("q", &["x".into(), "y".into()]).unwrap();
        assert_eq!(r[0].0, 1);
        assert_eq!(h.join().unwrap(), vec!["/v1/chat/completions", "/v1/embeddings", "/v1/rerank"]);
    }

    #[test]
    fn server_error_is_retried_then_succeeds() {
        let (base, h) = stub(vec![
            (503, "{}".into()),
            (200, r#"{"choices":[{"message":{"content":"ok"}}]}"#.into()),
        ]);
        let p = OpenAiProvider::new(&base, "k".into(), Duration::from_secs(5)).unwrap();
        let cfg = ProviderConfig { max_retries: 1, retry_backoff_ms: 1, ..Default::default() };
        let gw = Gateway::new(Arc::new(p), cfg);
        assert_eq!(gw.generate(&GenerationRequest::new(GenerationRole::Answer, "q")).unwrap(), "ok");
        h.join().unwrap();
    }

    #[test]
    fn client_error_is_protocol() {
        let (base, h) = stub(vec![(400, r#"{"error":"bad"}"#.into())]);
        let p = OpenAiProvider::new(&base, "k".into(), Duration::from_secs(5)).unwrap();
        let err = p.generate("m", &GenerationRequest::new(GenerationRole::Answer, "q")).unwrap_err();
        assert!(matches!(err, GatewayError::Protocol(_)), "{err}");
        h.join().unwrap();
    }

    #[test]
    fn unreachable_endpoint_is_transport_error() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let p = OpenAiProvider::new(&format!("http://127.0.0.1:{port}"), "k".into(), Duration::from_secs(2)).unwrap();
        let cfg = ProviderConfig { max_retries: 0, ..Default::default() };
        let gw = Gateway::new(Arc::new(p), cfg);
        let err = gw.embed_one("x").unwrap_err();
        assert!(matches!(err, GatewayError::Transport(_)));
    }
}
