//! Blocking client for OpenAI-compatible `/chat/completions` endpoints, with
//! retries, an in-flight limit and record/replay transcripts.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::{debug, warn};

pub const DEFAULT_API_KEY_ENV: &str = "GENIE_API_KEY";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("llm configuration: {0}")]
    Config(String),

    #[error("llm transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },

    #[error("llm endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },

    #[error("llm response malformed: {0}")]
    Protocol(String),

    #[error("no recorded response for prompt hash {0}")]
    ReplayMiss(String),

    #[error("transcript {}: {message}", path.display())]
    Transcript { path: PathBuf, message: String },
}

pub trait Completer: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, LlmError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout: Duration,
    pub max_retries: usize,
    pub max_in_flight: usize,
    /// First retry delay; doubles on each further retry.
    pub backoff_base: Duration,
}

impl EndpointConfig {
    /// Sampling temperature is pinned.
    pub const TEMPERATURE: f64 = 0.0;

    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout: Duration::from_secs(60),
            max_retries: 3,
            max_in_flight: 4,
            backoff_base: Duration::from_secs(1),
        }
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }

    fn backoff(&self, retry: usize) -> Duration {
        let exp = self.backoff_base.saturating_mul(1u32 << retry.min(16));
        let jitter = rand::thread_rng().gen_range(0.0..0.25);
        exp.mul_f64(1.0 + jitter)
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
pub struct InFlightGate {
    max: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a>(&'a InFlightGate);

impl InFlightGate {
    pub fn new(max: usize) -> Self {
        InFlightGate {
            max: max.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().unwrap();
        while *active >= self.max {
            active = self.freed.wait(active).unwrap();
        }
        *active += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

enum Attempt {
    Done(String),
    Retry(String),
    Fatal(LlmError),
}

pub struct HttpCompleter {
    cfg: EndpointConfig,
    api_key: String,
    http: reqwest::blocking::Client,
    gate: InFlightGate,
    requests: AtomicUsize,
}

impl HttpCompleter {
    /// Reads the API key from `cfg.api_key_env`.
    pub fn from_env(cfg: EndpointConfig) -> Result<Self, LlmError> {
        let key = std::env::var(&cfg.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| {
                LlmError::Config(format!("environment variable {} is not set", cfg.api_key_env))
            })?;
        Self::with_key(cfg, key)
    }

    pub fn with_key(cfg: EndpointConfig, api_key: impl Into<String>) -> Result<Self, LlmError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(HttpCompleter {
            gate: InFlightGate::new(cfg.max_in_flight),
            cfg,
            api_key: api_key.into(),
            http,
            requests: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    /// Total HTTP requests sent, retries included.
    pub fn requests_sent(&self) -> usize {
        self.requests.load(Ordering::Relaxed)
    }

    fn attempt(&self, prompt: &str) -> Attempt {
        let body = json!({
            "model": self.cfg.model,
            "messages": [{ "role": "user", "content": prompt }],
            "temperature": EndpointConfig::TEMPERATURE,
        });
        let _permit = self.gate.acquire();
        self.requests.fetch_add(1, Ordering::Relaxed);
        let resp = match self
            .http
            .post(self.cfg.endpoint())
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
        {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status().as_u16();
        let text = resp.text().unwrap_or_default();
        match status {
            200..=299 => match parse_chat_response(&text) {
                Ok(content) => Attempt::Done(content),
                Err(e) => Attempt::Fatal(e),
            },
            429 | 500..=599 => Attempt::Retry(format!("HTTP {status}")),
            401 | 403 => Attempt::Fatal(LlmError::Config(format!(
                "endpoint rejected credentials (HTTP {status})"
            ))),
            _ => Attempt::Fatal(LlmError::Http { status, body: text }),
        }
    }
}

impl Completer for HttpCompleter {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let mut last = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                let delay = self.cfg.backoff(attempt - 1);
                debug!(attempt, ?delay, reason = %last, "retrying chat completion");
                thread::sleep(delay);
            }
            match self.attempt(prompt) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(reason) => last = reason,
            }
        }
        Err(LlmError::Transport {
            attempts: self.cfg.max_retries + 1,
            message: last,
        })
    }
}

pub fn parse_chat_response(body: &str) -> Result<String, LlmError> {
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| LlmError::Protocol(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| LlmError::Protocol("missing choices[0].message.content".into()))
}

pub fn request_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub hash: String,
    pub prompt: String,
    pub response: String,
}

/// Recorded prompt/response pairs, looked up by prompt hash.
#[derive(Debug, Clone, Default)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
    by_hash: HashMap<String, usize>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let err = |message: String| LlmError::Transcript {
            path: path.to_path_buf(),
            message,
        };
        let file = fs::File::open(path).map_err(|e| err(e.to_string()))?;
        let mut t = Transcript::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry = serde_json::from_str(&line)
                .map_err(|e| err(format!("line {}: {e}", i + 1)))?;
            t.push(entry);
        }
        Ok(t)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LlmError> {
        let path = path.as_ref();
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("transcript entry serializes"));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| LlmError::Transcript {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Later entries for the same hash replace earlier ones.
    pub fn push(&mut self, entry: TranscriptEntry) {
        match self.by_hash.get(&entry.hash) {
            Some(&i) => self.entries[i] = entry,
            None => {
                self.by_hash.insert(entry.hash.clone(), self.entries.len());
                self.entries.push(entry);
            }
        }
    }

    pub fn record(&mut self, prompt: &str, response: &str) {
        self.push(TranscriptEntry {
            hash: request_hash(prompt),
            prompt: prompt.to_string(),
            response: response.to_string(),
        });
    }

    pub fn get(&self, prompt: &str) -> Option<&str> {
        self.by_hash
            .get(&request_hash(prompt))
            .map(|&i| self.entries[i].response.as_str())
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Serves responses from a transcript; never touches the network.
pub struct ReplayCompleter {
    transcript: Transcript,
}

impl ReplayCompleter {
    pub fn new(transcript: Transcript) -> Self {
        ReplayCompleter { transcript }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        Transcript::load(path).map(Self::new)
    }
}

impl Completer for ReplayCompleter {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        self.transcript
            .get(prompt)
            .map(str::to_string)
            .ok_or_else(|| LlmError::ReplayMiss(request_hash(prompt)))
    }
}

/// Forwards to an inner completer and appends every exchange to a JSONL file.
pub struct RecordingCompleter<C> {
    inner: C,
    path: PathBuf,
    sink: Mutex<()>,
}

impl<C: Completer> RecordingCompleter<C> {
    pub fn new(inner: C, path: impl Into<PathBuf>) -> Self {
        RecordingCompleter {
            inner,
            path: path.into(),
            sink: Mutex::new(()),
        }
    }
}

impl<C: Completer> Completer for RecordingCompleter<C> {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let response = self.inner.complete(prompt)?;
        let entry = TranscriptEntry {
            hash: request_hash(prompt),
            prompt: prompt.to_string(),
            response: response.clone(),
        };
        let _guard = self.sink.lock().unwrap();
        let line = serde_json::to_string(&entry).expect("transcript entry serializes");
        let written = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .and_then(|mut f| writeln!(f, "{line}"));
        if let Err(e) = written {
            warn!(path = %self.path.display(), error = %e, "could not record transcript entry");
        }
        Ok(response)
    }
}

impl<T: Completer + ?Sized> Completer for Box<T> {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        (**self).complete(prompt)
    }
}

impl<T: Completer + ?Sized> Completer for std::sync::Arc<T> {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        (**self).complete(prompt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chat_response_parsing() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"fever: null"}}]}"#;
        assert_eq!(parse_chat_response(body).unwrap(), "fever: null");
        assert!(matches!(parse_chat_response("{}"), Err(LlmError::Protocol(_))));
        assert!(matches!(parse_chat_response("not json"), Err(LlmError::Protocol(_))));
    }

    #[test]
    fn transcript_replay_is_exact() {
        let mut t = Transcript::new();
        t.record("prompt one", "answer\n  with spacing ");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        t.save(&path).unwrap();
        let replay = ReplayCompleter::load(&path).unwrap();
        assert_eq!(replay.complete("prompt one").unwrap(), "answer\n  with spacing ");
        assert!(matches!(replay.complete("prompt two"), Err(LlmError::ReplayMiss(_))));
    }

    #[test]
    fn missing_key_is_config_error() {
        let mut cfg = EndpointConfig::new("http://127.0.0.1:9", "m");
        cfg.api_key_env = "GENIE_TEST_KEY_THAT_IS_NOT_SET".into();
        assert!(matches!(HttpCompleter::from_env(cfg), Err(LlmError::Config(_))));
    }

    #[test]
    fn backoff_doubles() {
        let mut cfg = EndpointConfig::new("http://x", "m");
        cfg.backoff_base = Duration::from_millis(100);
        let d0 = cfg.backoff(0);
        let d2 = cfg.backoff(2);
        assert!(d0 >= Duration::from_millis(100) && d0 < Duration::from_millis(126));
        assert!(d2 >= Duration::from_millis(400) && d2 < Duration::from_millis(501));
    }
}
