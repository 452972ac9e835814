//! Client side of the remote LM wire protocol.
//!
//! ```text
//! POST /v1/tokenize    {"text": str}                 -> {"ids": [int]}
//! POST /v1/detokenize  {"ids": [int]}                -> {"text": str}
//! POST /v1/logits      {"prefix": [int], "top_k": n} -> {"tokens": [{"id", "logprob"}],
//!                                                        "eos_id": int, "vocab_size": int}
//! ```
//!
//! Log-probabilities are natural logs and must be finite.

use std::collections::HashSet;
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{LanguageModel, LmError, LmStep, Result, TokenId};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenizeRequest {
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenizeResponse {
    pub ids: Vec<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetokenizeRequest {
    pub ids: Vec<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetokenizeResponse {
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogitsRequest {
    pub prefix: Vec<u32>,
    pub top_k: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub id: u32,
    pub logprob: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogitsResponse {
    pub tokens: Vec<TokenLogprob>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eos_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_millis(100),
        }
    }
}

enum Failure {
    Transient(String),
    Fatal(LmError),
}

#[derive(Debug, Clone)]
struct Transport {
    base: String,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
}

impl Transport {
    fn new(endpoint: &str, retry: RetryPolicy) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| LmError::Network {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Transport {
            base: endpoint.trim_end_matches('/').to_string(),
            client,
            retry,
        })
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp> {
        let url = format!("{}{}", self.base, path);
        let mut backoff = self.retry.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=self.retry.attempts.max(1) {
            match self.try_post(&url, body) {
                Ok(resp) => return Ok(resp),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Transient(msg)) => {
                    log::debug!("POST {url} attempt {attempt} failed: {msg}");
                    last = msg;
                    if attempt < self.retry.attempts {
                        thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(LmError::Network {
            attempts: self.retry.attempts.max(1),
            message: last,
        })
    }

    fn try_post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        url: &str,
        body: &Req,
    ) -> std::result::Result<Resp, Failure> {
        let resp = self
            .client
            .post(url)
            .json(body)
            .send()
            .map_err(|e| Failure::Transient(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| Failure::Transient(e.to_string()))?;
        if status.is_server_error() {
            return Err(Failure::Transient(format!("{status}: {text}")));
        }
        if !status.is_success() {
            return Err(Failure::Fatal(LmError::Protocol(format!(
                "{url} answered {status}: {text}"
            ))));
        }
        serde_json::from_str(&text)
            .map_err(|e| Failure::Fatal(LmError::Protocol(format!("malformed response: {e}"))))
    }

    fn logits(&self, prefix: &[TokenId], top_k: usize) -> Result<(LmStep, LogitsResponse)> {
        if top_k == 0 {
            return Err(LmError::Protocol("top_k must be at least 1".into()));
        }
        let req = LogitsRequest {
            prefix: prefix.iter().map(|t| t.0).collect(),
            top_k,
        };
        let resp: LogitsResponse = self.post("/v1/logits", &req)?;
        let step = validate_logits(&resp, top_k)?;
        Ok((step, resp))
    }
}

fn validate_logits(resp: &LogitsResponse, top_k: usize) -> Result<LmStep> {
    if resp.tokens.len() > top_k {
        return Err(LmError::Protocol(format!(
            "asked for {top_k} tokens, got {}",
            resp.tokens.len()
        )));
    }
    let mut seen = HashSet::new();
    for t in &resp.tokens {
        if !t.logprob.is_finite() {
            return Err(LmError::Protocol(format!("token {} has non-finite logprob", t.id)));
        }
        if let Some(v) = resp.vocab_size {
            if t.id as usize >= v {
                return Err(LmError::Protocol(format!(
                    "token {} outside vocabulary of {v}",
                    t.id
                )));
            }
        }
        if !seen.insert(t.id) {
            return Err(LmError::Protocol(format!("token {} listed twice", t.id)));
        }
    }
    Ok(LmStep::new(
        resp.tokens
            .iter()
            .map(|t| (TokenId(t.id), t.logprob))
            .collect(),
        true,
    ))
}

/// One-shot call to `/v1/logits`. The returned step is always marked truncated.
pub fn remote_next_logits(endpoint: &str, prefix: &[TokenId], top_k: usize) -> Result<LmStep> {
    let transport = Transport::new(endpoint, RetryPolicy::default())?;
    transport.logits(prefix, top_k).map(|(step, _)| step)
}

/// [`LanguageModel`] backed by a server speaking the wire protocol.
///
/// The client is stateless apart from its connection pool, so concurrent
/// sessions may share one instance.
#[derive(Debug, Clone)]
pub struct RemoteLm {
    transport: Transport,
    top_k: usize,
    eos: TokenId,
    vocab_size: usize,
}

impl RemoteLm {
    /// Connects and probes the server once to learn its EOS id and vocabulary size.
    pub fn connect(endpoint: &str, top_k: usize) -> Result<Self> {
        Self::with_retry(endpoint, top_k, RetryPolicy::default())
    }

    pub fn with_retry(endpoint: &str, top_k: usize, retry: RetryPolicy) -> Result<Self> {
        let transport = Transport::new(endpoint, retry)?;
        let (_, probe) = transport.logits(&[], 1)?;
        let eos = probe
            .eos_id
            .ok_or_else(|| LmError::Protocol("logits response lacks eos_id".into()))?;
        let vocab_size = probe
            .vocab_size
            .ok_or_else(|| LmError::Protocol("logits response lacks vocab_size".into()))?;
        if eos as usize >= vocab_size {
            return Err(LmError::Protocol(format!(
                "eos_id {eos} outside vocabulary of {vocab_size}"
            )));
        }
        Ok(RemoteLm {
            transport,
            top_k,
            eos: TokenId(eos),
            vocab_size,
        })
    }

    pub fn top_k(&self) -> usize {
        self.top_k
    }
}

impl LanguageModel for RemoteLm {
    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        let resp: TokenizeResponse = self.transport.post(
            "/v1/tokenize",
            &TokenizeRequest {
                text: text.to_string(),
            },
        )?;
        Ok(resp.ids.into_iter().map(TokenId).collect())
    }

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        let resp: DetokenizeResponse = self.transport.post(
            "/v1/detokenize",
            &DetokenizeRequest {
                ids: tokens.iter().map(|t| t.0).collect(),
            },
        )?;
        Ok(resp.text)
    }

    fn next_logits(&self, prefix: &[TokenId]) -> Result<LmStep> {
        self.transport
            .logits(prefix, self.top_k)
            .map(|(step, _)| step)
    }

    fn eos(&self) -> TokenId {
        self.eos
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }
}
