use std::time::Duration;

use super::wire::{ChatRequest, ChatResponse};
use super::{LlmEndpoint, Transport, TransportError};

/// Blocking HTTP transport for `POST {base_url}/v1/chat/completions`.
#[derive(Debug, Clone)]
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TransportError::Connection(e.to_string()))?;
        Ok(Self { client })
    }
}

pub fn completions_url(base_url: &str) -> String {
    format!("{}/v1/chat/completions", base_url.trim_end_matches('/'))
}

impl Transport for HttpTransport {
    fn send(&self, endpoint: &LlmEndpoint, body: &ChatRequest) -> Result<ChatResponse, TransportError> {
        let mut request = self.client.post(completions_url(&endpoint.base_url)).json(body);
        if let Some(var) = &endpoint.auth_env {
            let token = std::env::var(var)
                .map_err(|_| TransportError::Auth(format!("environment variable {var} is not set")))?;
            request = request.bearer_auth(token);
        }
        let response = request.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Connection(e.to_string())
            }
        })?;
        let status = response.status();
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            return Err(TransportError::Status {
                code: status.as_u16(),
                body,
            });
        }
        let bytes = response.bytes().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Connection(e.to_string())
            }
        })?;
        serde_json::from_slice(&bytes).map_err(|e| TransportError::Decode(e.to_string()))
    }
}
