//! Wire-level model transports.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine;
use serde::Deserialize;
use serde_json::json;

use super::AgentLabel;

/// One request as handed to a transport.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRequest {
    pub agent: AgentLabel,
    pub model: String,
    pub prompt: String,
    pub images: Vec<Vec<u8>>,
    pub max_tokens: u32,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelResponse {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message}")]
pub struct TransportError {
    /// Worth retrying (rate limit, overload, connection reset).
    pub transient: bool,
    pub message: String,
}

impl TransportError {
    pub fn transient(message: impl Into<String>) -> Self {
        Self { transient: true, message: message.into() }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        Self { transient: false, message: message.into() }
    }
}

pub trait Transport: Send + Sync {
    fn send(&self, request: &ModelRequest) -> Result<ModelResponse, TransportError>;
}

/// Anthropic Messages API over blocking HTTP.
pub struct AnthropicTransport {
    agent: ureq::Agent,
    base_url: String,
    api_key: String,
}

const API_VERSION: &str = "2023-06-01";

impl AnthropicTransport {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Self { agent, base_url: base_url.into().trim_end_matches('/').to_string(), api_key: api_key.into() }
    }

    /// Reads the key from `env_var`. Fails if it is unset.
    pub fn from_env(base_url: impl Into<String>, env_var: &str, timeout: Duration) -> Result<Self, String> {
        let key = std::env::var(env_var).map_err(|_| format!("environment variable {env_var} is not set"))?;
        Ok(Self::new(base_url, key, timeout))
    }

    fn body(request: &ModelRequest) -> serde_json::Value {
        let engine = base64::engine::general_purpose::STANDARD;
        let mut content: Vec<serde_json::Value> = request
            .images
            .iter()
            .map(|png| {
                json!({
                    "type": "image",
                    "source": {"type": "base64", "media_type": "image/png", "data": engine.encode(png)},
                })
            })
            .collect();
        content.push(json!({"type": "text", "text": request.prompt}));
        json!({
            "model": request.model,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
            "messages": [{"role": "user", "content": content}],
        })
    }
}

#[derive(Deserialize)]
struct MessagesResponse {
    content: Vec<ContentBlock>,
    usage: MessagesUsage,
}

#[derive(Deserialize)]
struct ContentBlock {
    #[serde(rename = "type")]
    kind: String,
    #[serde(default)]
    text: String,
}

#[derive(Deserialize)]
struct MessagesUsage {
    input_tokens: u64,
    output_tokens: u64,
}

impl Transport for AnthropicTransport {
    fn send(&self, request: &ModelRequest) -> Result<ModelResponse, TransportError> {
        let url = format!("{}/v1/messages", self.base_url);
        let mut response = self
            .agent
            .post(&url)
            .header("x-api-key", &self.api_key)
            .header("anthropic-version", API_VERSION)
            .header("content-type", "application/json")
            .send(Self::body(request).to_string())
            .map_err(|e| TransportError::transient(format!("request to {url} failed: {e}")))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::transient(format!("reading response body: {e}")))?;
        match status {
            200..=299 => {}
            408 | 429 | 500..=599 => {
                return Err(TransportError::transient(format!("HTTP {status}: {text}")));
            }
            _ => return Err(TransportError::fatal(format!("HTTP {status}: {text}"))),
        }
        let parsed: MessagesResponse = serde_json::from_str(&text)
            .map_err(|e| TransportError::fatal(format!("malformed response body: {e}")))?;
        let text = parsed
            .content
            .iter()
            .filter(|b| b.kind == "text")
            .map(|b| b.text.as_str())
            .collect::<Vec<_>>()
            .join("");
        Ok(ModelResponse {
            text,
            input_tokens: parsed.usage.input_tokens,
            output_tokens: parsed.usage.output_tokens,
        })
    }
}

type Responder = dyn Fn(&ModelRequest) -> Result<ModelResponse, TransportError> + Send + Sync;

/// In-process test double: answers with a closure and keeps every request.
pub struct StubTransport {
    responder: Box<Responder>,
    calls: Mutex<Vec<ModelRequest>>,
}

impl StubTransport {
    pub fn new(
        responder: impl Fn(&ModelRequest) -> Result<ModelResponse, TransportError> + Send + Sync + 'static,
    ) -> Self {
        Self { responder: Box::new(responder), calls: Mutex::new(Vec::new()) }
    }

    pub fn calls(&self) -> Vec<ModelRequest> {
        self.calls.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap().len()
    }
}

impl Transport for StubTransport {
    fn send(&self, request: &ModelRequest) -> Result<ModelResponse, TransportError> {
        self.calls.lock().unwrap().push(request.clone());
        (self.responder)(request)
    }
}

impl<T: Transport + ?Sized> Transport for std::sync::Arc<T> {
    fn send(&self, request: &ModelRequest) -> Result<ModelResponse, TransportError> {
        (**self).send(request)
    }
}

/// Fails every call and counts attempts. Used to prove a code path makes no
/// network calls.
#[derive(Default)]
pub struct FailingTransport {
    calls: AtomicUsize,
}

impl FailingTransport {
    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Transport for FailingTransport {
    fn send(&self, _request: &ModelRequest) -> Result<ModelResponse, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Err(TransportError::fatal("network access is not allowed here"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves one canned HTTP response and hands back the raw request.
    fn one_shot_server(status: &str, body: &str) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let reply = format!(
            "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
            body.len()
        );
        let handle = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut head = String::new();
            let mut content_length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    content_length = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0; content_length];
            reader.read_exact(&mut body).unwrap();
            reader.get_mut().write_all(reply.as_bytes()).unwrap();
            head + &String::from_utf8(body).unwrap()
        });
        (addr, handle)
    }

    fn request() -> ModelRequest {
        ModelRequest {
            agent: AgentLabel::Agent3Perception,
            model: "test-model".into(),
            prompt: "judge these".into(),
            images: vec![vec![1, 2, 3]],
            max_tokens: 100,
            temperature: 0.0,
        }
    }

    #[test]
    fn anthropic_transport_speaks_messages_api() {
        let body = r#"{"content":[{"type":"text","text":"VERDICT C1 | PASS | 0.9 | ok"}],"usage":{"input_tokens":12,"output_tokens":7}}"#;
        let (url, server) = one_shot_server("200 OK", body);
        let transport = AnthropicTransport::new(url, "secret", Duration::from_secs(5));
        let response = transport.send(&request()).unwrap();
        assert_eq!(response.text, "VERDICT C1 | PASS | 0.9 | ok");
        assert_eq!((response.input_tokens, response.output_tokens), (12, 7));
        let raw = server.join().unwrap();
        assert!(raw.starts_with("POST /v1/messages"));
        assert!(raw.to_ascii_lowercase().contains("x-api-key: secret"));
        assert!(raw.contains("\"media_type\":\"image/png\""));
        assert!(raw.contains("\"model\":\"test-model\""));
    }

    #[test]
    fn status_codes_map_to_transient_or_fatal() {
        let (url, server) = one_shot_server("529 Overloaded", "{}");
        let err = AnthropicTransport::new(url, "k", Duration::from_secs(5)).send(&request()).unwrap_err();
        assert!(err.transient);
        server.join().unwrap();

        let (url, server) = one_shot_server("400 Bad Request", "{}");
        let err = AnthropicTransport::new(url, "k", Duration::from_secs(5)).send(&request()).unwrap_err();
        assert!(!err.transient);
        server.join().unwrap();
    }
}
