use std::collections::VecDeque;
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendReply, ModelRequest, Role, Usage};
use crate::error::{Error, Result};

/// Predicate over a request. All present conditions must hold.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Matcher {
    /// Substrings that must all appear in the prompt.
    #[serde(default)]
    pub contains: Vec<String>,
    /// Substring of the request tag.
    #[serde(default)]
    pub tag: Option<String>,
    #[serde(default)]
    pub role: Option<Role>,
}

impl Matcher {
    pub fn contains(s: impl Into<String>) -> Self {
        Matcher {
            contains: vec![s.into()],
            ..Default::default()
        }
    }

    pub fn tag(t: impl Into<String>) -> Self {
        Matcher {
            tag: Some(t.into()),
            ..Default::default()
        }
    }

    pub fn role(r: Role) -> Self {
        Matcher {
            role: Some(r),
            ..Default::default()
        }
    }

    pub fn and(mut self, s: impl Into<String>) -> Self {
        self.contains.push(s.into());
        self
    }

    pub fn with_role(mut self, r: Role) -> Self {
        self.role = Some(r);
        self
    }

    pub fn matches(&self, req: &ModelRequest) -> bool {
        self.role.is_none_or(|r| r == req.role)
            && self.tag.as_ref().is_none_or(|t| req.request_tag.contains(t.as_str()))
            && self.contains.iter().all(|c| req.prompt.contains(c.as_str()))
    }
}

impl fmt::Display for Matcher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        if let Some(r) = self.role {
            write!(f, "role={r:?} ")?;
        }
        if let Some(t) = &self.tag {
            write!(f, "tag~{t:?} ")?;
        }
        write!(f, "contains={:?}}}", self.contains)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(flatten)]
    pub matcher: Matcher,
    pub responses: Vec<String>,
}

/// File form of a mock script (JSON).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub strict: bool,
    #[serde(default)]
    pub default: Option<String>,
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MockCall {
    pub role: Role,
    pub model_id: String,
    pub prompt: String,
    pub request_tag: String,
    pub sample_index: u32,
}

type Handler = Arc<dyn Fn(&ModelRequest, u32) -> Option<String> + Send + Sync>;

/// Deterministic backend driven by a script: the first rule whose matcher
/// accepts a request answers it with the rule's next listed response.
/// Unmatched requests go to the optional handler, then to the default.
pub struct ScriptedMock {
    rules: Vec<ScriptRule>,
    cursors: Mutex<Vec<usize>>,
    default: Option<String>,
    strict: bool,
    handler: Option<Handler>,
    failures: Mutex<VecDeque<BackendError>>,
    delay: Option<Duration>,
    calls: Mutex<Vec<MockCall>>,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
}

impl Default for ScriptedMock {
    fn default() -> Self {
        Self::new()
    }
}

impl ScriptedMock {
    pub fn new() -> Self {
        ScriptedMock {
            rules: Vec::new(),
            cursors: Mutex::new(Vec::new()),
            default: None,
            strict: false,
            handler: None,
            failures: Mutex::new(VecDeque::new()),
            delay: None,
            calls: Mutex::new(Vec::new()),
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        }
    }

    pub fn from_script(script: MockScript) -> Self {
        let mut m = ScriptedMock::new().strict(script.strict);
        m.default = script.default;
        for r in script.rules {
            m = m.rule(r.matcher, r.responses);
        }
        m
    }

    pub fn rule<S: Into<String>>(mut self, matcher: Matcher, responses: impl IntoIterator<Item = S>) -> Self {
        self.rules.push(ScriptRule {
            matcher,
            responses: responses.into_iter().map(Into::into).collect(),
        });
        self.cursors.get_mut().unwrap().push(0);
        self
    }

    pub fn default_response(mut self, text: impl Into<String>) -> Self {
        self.default = Some(text.into());
        self
    }

    /// In strict mode a rule whose responses are used up fails with
    /// `ScriptExhausted`; otherwise its last response repeats.
    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    /// Fallback for requests no rule matches; returning `None` defers to
    /// the default response.
    pub fn handler(
        mut self,
        f: impl Fn(&ModelRequest, u32) -> Option<String> + Send + Sync + 'static,
    ) -> Self {
        self.handler = Some(Arc::new(f));
        self
    }

    /// The next calls fail with these errors, in order, before the script
    /// is consulted.
    pub fn fail_first(self, errors: Vec<BackendError>) -> Self {
        *self.failures.lock().unwrap() = errors.into();
        self
    }

    pub fn with_delay(mut self, d: Duration) -> Self {
        self.delay = Some(d);
        self
    }

    pub fn calls(&self) -> Vec<MockCall> {
        self.calls.lock().unwrap().clone()
    }

    pub fn calls_with_role(&self, role: Role) -> usize {
        self.calls.lock().unwrap().iter().filter(|c| c.role == role).count()
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    fn respond(&self, req: &ModelRequest, sample_index: u32) -> Result<String, BackendError> {
        if let Some(i) = self.rules.iter().position(|r| r.matcher.matches(req)) {
            let rule = &self.rules[i];
            let mut cursors = self.cursors.lock().unwrap();
            let k = cursors[i];
            cursors[i] += 1;
            if let Some(text) = rule.responses.get(k) {
                return Ok(text.clone());
            }
            if self.strict || rule.responses.is_empty() {
                return Err(BackendError::ScriptExhausted(rule.matcher.to_string()));
            }
            return Ok(rule.responses.last().cloned().unwrap_or_default());
        }
        if let Some(text) = self.handler.as_ref().and_then(|h| h(req, sample_index)) {
            return Ok(text);
        }
        self.default
            .clone()
            .ok_or_else(|| BackendError::Fatal("no mock rule matched and no default set".into()))
    }
}

impl Backend for ScriptedMock {
    fn kind(&self) -> &'static str {
        "mock"
    }

    fn call(&self, req: &ModelRequest, sample_index: u32) -> Result<BackendReply, BackendError> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        self.calls.lock().unwrap().push(MockCall {
            role: req.role,
            model_id: req.model_id.clone(),
            prompt: req.prompt.clone(),
            request_tag: req.request_tag.clone(),
            sample_index,
        });
        if let Some(d) = self.delay {
            std::thread::sleep(d);
        }
        let failure = self.failures.lock().unwrap().pop_front();
        let out = match failure {
            Some(e) => Err(e),
            None => self.respond(req, sample_index).map(|text| BackendReply {
                usage: Usage {
                    prompt_tokens: req.prompt.split_whitespace().count() as u64,
                    output_tokens: text.split_whitespace().count() as u64,
                },
                text,
            }),
        };
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        out
    }
}
