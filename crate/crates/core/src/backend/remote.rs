use std::time::Duration;

use reqwest::blocking::Client;

use super::{BackendError, BackendRequest, Transport};

/// HTTP/JSON client for an inference sidecar. Every endpoint is a POST of
/// the request payload to `<base>/<kind>`.
#[derive(Clone, Debug)]
pub struct RemoteTransport {
    base_url: String,
    client: Client,
}

impl RemoteTransport {
    pub fn new(base_url: &str) -> Result<Self, BackendError> {
        Self::with_timeout(base_url, Duration::from_secs(120))
    }

    pub fn with_timeout(base_url: &str, timeout: Duration) -> Result<Self, BackendError> {
        let base_url = base_url.trim_end_matches('/').to_string();
        if !(base_url.starts_with("http://") || base_url.starts_with("https://")) {
            return Err(BackendError::InvalidRequest(format!(
                "backend URL {base_url:?} must start with http:// or https://"
            )));
        }
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        Ok(RemoteTransport { base_url, client })
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }
}

impl Transport for RemoteTransport {
    fn call(&self, request: &BackendRequest) -> Result<Vec<u8>, BackendError> {
        let url = format!("{}{}", self.base_url, request.endpoint());
        let body = serde_json::to_vec(&request.payload()).expect("payload serializes");
        let response = self
            .client
            .post(&url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body)
            .send()
            .map_err(|e| BackendError::Unavailable(format!("POST {url}: {e}")))?;
        let status = response.status();
        let bytes = response
            .bytes()
            .map_err(|e| BackendError::Unavailable(format!("POST {url}: {e}")))?;
        if !status.is_success() {
            let snippet: String = String::from_utf8_lossy(&bytes).chars().take(200).collect();
            return Err(BackendError::Unavailable(format!(
                "POST {url}: HTTP {status}: {snippet}"
            )));
        }
        Ok(bytes.to_vec())
    }
}
