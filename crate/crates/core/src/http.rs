//! Blocking JSON-over-HTTP plumbing for the live backends.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Where a live backend lives. Secrets are read from the named environment
/// variable at call time and never stored in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpEndpoint {
    pub url: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    10_000
}

impl HttpEndpoint {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            api_key_env: None,
            timeout_ms: default_timeout_ms(),
        }
    }

    fn api_key(&self) -> Result<Option<String>, String> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| format!("environment variable {var} is not set")),
        }
    }

    fn client(&self) -> Result<reqwest::blocking::Client, String> {
        reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(self.timeout_ms))
            .build()
            .map_err(|e| e.to_string())
    }

    /// POSTs `body` and returns the decoded JSON response.
    pub fn post_json(&self, body: &Value) -> Result<Value, String> {
        let mut req = self.client()?.post(&self.url).json(body);
        if let Some(key) = self.api_key()? {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        decode(resp)
    }

    /// GETs with query parameters and returns the decoded JSON response.
    pub fn get_json(&self, params: &[(&str, String)]) -> Result<Value, String> {
        let mut req = self.client()?.get(&self.url).query(params);
        if let Some(key) = self.api_key()? {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        decode(resp)
    }
}

fn decode(resp: reqwest::blocking::Response) -> Result<Value, String> {
    let status = resp.status();
    if !status.is_success() {
        return Err(format!("HTTP {status}"));
    }
    resp.json::<Value>().map_err(|e| e.to_string())
}
