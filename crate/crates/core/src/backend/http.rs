use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::Duration;

use log::warn;

use super::{Backend, BackendError, GenerationRequest, GenerationResult};

/// Base URL of the generation server, e.g. `http://localhost:8080`.
pub const ENDPOINT_ENV: &str = "RANKDISTILL_ENDPOINT";
/// Optional bearer token sent with every request.
pub const TOKEN_ENV: &str = "RANKDISTILL_API_TOKEN";

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    pub endpoint: String,
    pub token: Option<String>,
    pub timeout: Duration,
    /// Total attempts per call, including the first.
    pub attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub backoff: Duration,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpConfig {
            endpoint: endpoint.into(),
            token: None,
            timeout: Duration::from_secs(60),
            attempts: 3,
            backoff: Duration::from_millis(250),
        }
    }

    /// Endpoint and token from the environment.
    pub fn from_env() -> Result<Self, BackendError> {
        let endpoint = std::env::var(ENDPOINT_ENV)
            .map_err(|_| BackendError::InvalidRequest(format!("{ENDPOINT_ENV} is not set")))?;
        let mut config = Self::new(endpoint);
        config.token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Ok(config)
    }

    fn url(&self) -> String {
        format!("{}/v1/generate", self.endpoint.trim_end_matches('/'))
    }
}

/// Client for `POST /v1/generate`. One request per call; transport failures
/// are retried with exponential backoff, HTTP error statuses are not.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    config: HttpConfig,
    transport_calls: AtomicU64,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        if config.attempts == 0 {
            return Err(BackendError::InvalidRequest("attempts must be at least 1".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(HttpBackend {
            client,
            config,
            transport_calls: AtomicU64::new(0),
        })
    }

    /// Number of HTTP requests sent so far, retries included.
    pub fn transport_calls(&self) -> u64 {
        self.transport_calls.load(Ordering::Relaxed)
    }

    fn send_once(&self, request: &GenerationRequest) -> Result<reqwest::blocking::Response, reqwest::Error> {
        self.transport_calls.fetch_add(1, Ordering::Relaxed);
        let mut builder = self.client.post(self.config.url()).json(request);
        if let Some(token) = &self.config.token {
            builder = builder.bearer_auth(token);
        }
        builder.send()
    }
}

impl Backend for HttpBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        request.validate()?;
        let mut delay = self.config.backoff;
        let mut last_error = String::new();
        for attempt in 1..=self.config.attempts {
            match self.send_once(request) {
                Ok(response) => {
                    let status = response.status();
                    let body = response.text().map_err(|e| BackendError::Transport {
                        attempts: attempt,
                        message: e.to_string(),
                    })?;
                    if !status.is_success() {
                        return Err(BackendError::Status {
                            status: status.as_u16(),
                            body,
                        });
                    }
                    let result: GenerationResult =
                        serde_json::from_str(&body).map_err(|e| BackendError::Protocol(e.to_string()))?;
                    result.validate()?;
                    return Ok(result);
                }
                Err(e) => {
                    last_error = e.to_string();
                    if attempt < self.config.attempts {
                        warn!("generate attempt {attempt} failed: {last_error}; retrying in {delay:?}");
                        thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(BackendError::Transport {
            attempts: self.config.attempts,
            message: last_error,
        })
    }
}
