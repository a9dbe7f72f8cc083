//! Model backend abstraction shared by generation, prediction and feedback
//! calls.
//!
//! [`Gateway`] wraps a [`Backend`] with a response cache keyed by
//! `(model_id, prompt digest, temperature, sample_index)`, bounded retries
//! with exponential backoff for transient failures, a process-wide token
//! bucket, a concurrency cap, hard budget ceilings and a call log that the
//! replay backend can read back.

mod mock;
mod remote;
mod replay;

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::sha256_hex;

pub use mock::{Matcher, MockCall, MockScript, ScriptRule, ScriptedMock};
pub use remote::RemoteBackend;
pub use replay::ReplayBackend;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Generation,
    Prediction,
    Feedback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub role: Role,
    pub model_id: String,
    pub prompt: String,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_output: Option<u32>,
    /// Opaque audit tag, e.g. `respondent/phase/question`.
    #[serde(default)]
    pub request_tag: String,
}

impl ModelRequest {
    pub fn new(role: Role, model: &ModelSpec, prompt: impl Into<String>) -> Self {
        ModelRequest {
            role,
            model_id: model.id.clone(),
            prompt: prompt.into(),
            temperature: model.temperature,
            max_output: model.max_output,
            request_tag: String::new(),
        }
    }

    pub fn tagged(mut self, tag: impl Into<String>) -> Self {
        self.request_tag = tag.into();
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub usage: Usage,
    pub cached: bool,
    pub latency_ms: u64,
    /// Transient failures retried before this response.
    pub retries: u32,
}

/// What a backend returns for a single successful call.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendReply {
    pub text: String,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendError {
    /// Worth retrying: timeouts, throttling, 5xx.
    Transient(String),
    /// Never retried: malformed request, auth failure, replay miss.
    Fatal(String),
    ScriptExhausted(String),
}

pub trait Backend: Send + Sync {
    fn kind(&self) -> &'static str;
    fn call(&self, req: &ModelRequest, sample_index: u32) -> Result<BackendReply, BackendError>;
}

/// Model id, temperature and output budget for one role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub id: String,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_output: Option<u32>,
}

impl ModelSpec {
    pub fn new(id: impl Into<String>, temperature: f64) -> Self {
        ModelSpec {
            id: id.into(),
            temperature,
            max_output: None,
        }
    }
}

/// Per-role model settings. Prediction defaults to temperature 0,
/// generation to 1.5; feedback mirrors the generation model at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub generation: ModelSpec,
    pub prediction: ModelSpec,
    pub feedback: ModelSpec,
}

impl ModelSettings {
    pub fn new(generation_model: &str, prediction_model: &str) -> Self {
        ModelSettings {
            generation: ModelSpec::new(generation_model, 1.5),
            prediction: ModelSpec::new(prediction_model, 0.0),
            feedback: ModelSpec::new(generation_model, 0.0),
        }
    }
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings::new("gemini-3.0-flash", "gemini-2.5-flash-lite")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub model_id: String,
    pub prompt_digest: String,
    /// `f64::to_bits` of the temperature, so the key is exact.
    pub temperature_bits: u64,
    pub sample_index: u32,
}

impl CacheKey {
    pub fn new(req: &ModelRequest, sample_index: u32) -> Self {
        CacheKey {
            model_id: req.model_id.clone(),
            prompt_digest: sha256_hex(req.prompt.as_bytes()),
            temperature_bits: req.temperature.to_bits(),
            sample_index,
        }
    }
}

/// One completed request, as written to a run's call log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub key: CacheKey,
    pub role: Role,
    pub temperature: f64,
    pub request_tag: String,
    pub prompt: String,
    pub text: String,
    pub usage: Usage,
    pub cached: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheLine {
    key: CacheKey,
    text: String,
    usage: Usage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    /// Retries after the first attempt for transient failures.
    pub retry_limit: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    /// Maximum requests in flight against the backend.
    pub concurrency: usize,
    /// Requests per second; `None` disables rate limiting.
    pub rate_limit_per_sec: Option<f64>,
    /// Ceiling on backend attempts (cache hits are free).
    pub max_calls: Option<u64>,
    /// Ceiling on prompt + output tokens.
    pub max_tokens: Option<u64>,
    pub cache_enabled: bool,
    /// Directory holding a persistent `cache.jsonl`.
    pub cache_dir: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            retry_limit: 3,
            backoff_base_ms: 500,
            backoff_max_ms: 30_000,
            concurrency: 4,
            rate_limit_per_sec: None,
            max_calls: None,
            max_tokens: None,
            cache_enabled: true,
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    pub requests: u64,
    pub backend_calls: u64,
    pub cache_hits: u64,
    pub retries: u64,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
}

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            permits: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut p = self.permits.lock().unwrap();
        while *p == 0 {
            p = self.cv.wait(p).unwrap();
        }
        *p -= 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

struct TokenBucket {
    rate: f64,
    burst: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    fn new(rate: f64) -> Self {
        let burst = rate.max(1.0);
        TokenBucket {
            rate,
            burst,
            state: Mutex::new((burst, Instant::now())),
        }
    }

    fn acquire(&self) {
        loop {
            let wait = {
                let mut st = self.state.lock().unwrap();
                let now = Instant::now();
                let refill = now.duration_since(st.1).as_secs_f64() * self.rate;
                st.0 = (st.0 + refill).min(self.burst);
                st.1 = now;
                if st.0 >= 1.0 {
                    st.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - st.0) / self.rate)
            };
            std::thread::sleep(wait);
        }
    }
}

pub struct Gateway {
    backend: Arc<dyn Backend>,
    config: GatewayConfig,
    cache: Mutex<HashMap<CacheKey, (String, Usage)>>,
    cache_file: Option<Mutex<File>>,
    slots: Semaphore,
    limiter: Option<TokenBucket>,
    requests: AtomicU64,
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
    retries: AtomicU64,
    prompt_tokens: AtomicU64,
    output_tokens: AtomicU64,
    log: Mutex<Vec<CallRecord>>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, config: GatewayConfig) -> Result<Self> {
        if let Some(r) = config.rate_limit_per_sec {
            if !(r > 0.0) {
                return Err(Error::Config(format!("rate limit must be positive, got {r}")));
            }
        }
        let mut cache = HashMap::new();
        let mut cache_file = None;
        if let (true, Some(dir)) = (config.cache_enabled, &config.cache_dir) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("cache.jsonl");
            if path.exists() {
                let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
                for line in BufReader::new(f).lines() {
                    let line = line.map_err(|e| Error::io(&path, e))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    // a torn final line from an interrupted run is ignored
                    match serde_json::from_str::<CacheLine>(&line) {
                        Ok(c) => {
                            cache.insert(c.key, (c.text, c.usage));
                        }
                        Err(e) => log::warn!("skipping corrupt cache line in {}: {e}", path.display()),
                    }
                }
            }
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            cache_file = Some(Mutex::new(f));
        }
        Ok(Gateway {
            backend,
            slots: Semaphore::new(config.concurrency),
            limiter: config.rate_limit_per_sec.map(TokenBucket::new),
            config,
            cache: Mutex::new(cache),
            cache_file,
            requests: AtomicU64::new(0),
            backend_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
            retries: AtomicU64::new(0),
            prompt_tokens: AtomicU64::new(0),
            output_tokens: AtomicU64::new(0),
            log: Mutex::new(Vec::new()),
        })
    }

    pub fn backend_kind(&self) -> &'static str {
        self.backend.kind()
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            requests: self.requests.load(Ordering::SeqCst),
            backend_calls: self.backend_calls.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
            retries: self.retries.load(Ordering::SeqCst),
            prompt_tokens: self.prompt_tokens.load(Ordering::SeqCst),
            output_tokens: self.output_tokens.load(Ordering::SeqCst),
        }
    }

    /// Snapshot of every completed request so far, sorted by key so the
    /// order does not depend on thread scheduling.
    pub fn call_log(&self) -> Vec<CallRecord> {
        let mut log = self.log.lock().unwrap().clone();
        log.sort_by(|a, b| {
            (&a.key.model_id, &a.key.prompt_digest, a.key.temperature_bits, a.key.sample_index)
                .cmp(&(&b.key.model_id, &b.key.prompt_digest, b.key.temperature_bits, b.key.sample_index))
                .then(a.cached.cmp(&b.cached))
        });
        log
    }

    pub fn write_call_log(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for rec in self.call_log() {
            out.push_str(&serde_json::to_string(&rec)?);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    fn reserve_call(&self) -> Result<()> {
        if let Some(max) = self.config.max_tokens {
            let used = self.prompt_tokens.load(Ordering::SeqCst)
                + self.output_tokens.load(Ordering::SeqCst);
            if used >= max {
                return Err(Error::BudgetExceeded(format!(
                    "token ceiling {max} reached ({used} used)"
                )));
            }
        }
        let prev = self.backend_calls.fetch_add(1, Ordering::SeqCst);
        if let Some(max) = self.config.max_calls {
            if prev >= max {
                self.backend_calls.fetch_sub(1, Ordering::SeqCst);
                return Err(Error::BudgetExceeded(format!("call ceiling {max} reached")));
            }
        }
        Ok(())
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .config
            .backoff_base_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.config.backoff_max_ms);
        Duration::from_millis(ms)
    }

    fn record(&self, req: &ModelRequest, key: CacheKey, text: &str, usage: Usage, cached: bool) {
        self.log.lock().unwrap().push(CallRecord {
            key,
            role: req.role,
            temperature: req.temperature,
            request_tag: req.request_tag.clone(),
            prompt: req.prompt.clone(),
            text: text.to_string(),
            usage,
            cached,
        });
    }

    pub fn complete(&self, req: &ModelRequest, sample_index: u32) -> Result<ModelResponse> {
        if req.prompt.trim().is_empty() {
            return Err(Error::InvalidRequest("empty prompt".into()));
        }
        if !(req.temperature >= 0.0) {
            return Err(Error::InvalidRequest(format!(
                "temperature must be non-negative, got {}",
                req.temperature
            )));
        }
        self.requests.fetch_add(1, Ordering::SeqCst);
        let key = CacheKey::new(req, sample_index);
        if self.config.cache_enabled {
            let hit = self.cache.lock().unwrap().get(&key).cloned();
            if let Some((text, usage)) = hit {
                self.cache_hits.fetch_add(1, Ordering::SeqCst);
                self.record(req, key, &text, usage, true);
                return Ok(ModelResponse {
                    text,
                    usage,
                    cached: true,
                    latency_ms: 0,
                    retries: 0,
                });
            }
        }

        let start = Instant::now();
        let mut attempt = 0u32;
        let reply = loop {
            self.reserve_call()?;
            if let Some(l) = &self.limiter {
                l.acquire();
            }
            let outcome = {
                let _slot = self.slots.acquire();
                self.backend.call(req, sample_index)
            };
            match outcome {
                Ok(reply) => break reply,
                Err(BackendError::Transient(msg)) => {
                    if attempt >= self.config.retry_limit {
                        return Err(Error::BackendUnavailable {
                            retries: attempt,
                            message: msg,
                        });
                    }
                    log::debug!("transient backend failure (attempt {attempt}): {msg}");
                    std::thread::sleep(self.backoff(attempt));
                    attempt += 1;
                    self.retries.fetch_add(1, Ordering::SeqCst);
                }
                Err(BackendError::Fatal(msg)) => return Err(Error::BackendRejected(msg)),
                Err(BackendError::ScriptExhausted(m)) => return Err(Error::ScriptExhausted(m)),
            }
        };
        self.prompt_tokens
            .fetch_add(reply.usage.prompt_tokens, Ordering::SeqCst);
        self.output_tokens
            .fetch_add(reply.usage.output_tokens, Ordering::SeqCst);
        if reply.text.trim().is_empty() {
            return Err(Error::EmptyCompletion);
        }
        if self.config.cache_enabled {
            self.cache
                .lock()
                .unwrap()
                .insert(key.clone(), (reply.text.clone(), reply.usage));
            if let Some(f) = &self.cache_file {
                let line = serde_json::to_string(&CacheLine {
                    key: key.clone(),
                    text: reply.text.clone(),
                    usage: reply.usage,
                })?;
                let mut f = f.lock().unwrap();
                writeln!(f, "{line}").map_err(|e| Error::io("cache.jsonl", e))?;
            }
        }
        self.record(req, key, &reply.text, reply.usage, false);
        Ok(ModelResponse {
            text: reply.text,
            usage: reply.usage,
            cached: false,
            latency_ms: start.elapsed().as_millis() as u64,
            retries: attempt,
        })
    }

    /// Runs a batch on up to `concurrency` worker threads. Results are
    /// positionally aligned with `reqs`; each item succeeds or fails on its
    /// own.
    pub fn complete_many(&self, reqs: &[(ModelRequest, u32)]) -> Vec<Result<ModelResponse>> {
        if reqs.len() <= 1 || self.config.concurrency <= 1 {
            return reqs.iter().map(|(r, i)| self.complete(r, *i)).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<ModelResponse>>>> =
            reqs.iter().map(|_| Mutex::new(None)).collect();
        let workers = self.config.concurrency.min(reqs.len());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some((req, idx)) = reqs.get(i) else {
                        break;
                    };
                    let res = self.complete(req, *idx);
                    *slots[i].lock().unwrap() = Some(res);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().unwrap().expect("every slot is filled"))
            .collect()
    }
}
