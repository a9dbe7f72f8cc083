use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendReply, ModelRequest, Usage};
use crate::error::{Error, Result};

/// Generic chat-completion HTTP backend (`POST {base_url}/chat/completions`).
pub struct RemoteBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    token: Option<String>,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl RemoteBackend {
    pub fn new(base_url: &str, token: Option<String>, timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(RemoteBackend {
            client,
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            token,
        })
    }

    /// Reads the bearer token from `env_var`; a missing variable means no
    /// auth header.
    pub fn from_env(base_url: &str, env_var: &str, timeout: Duration) -> Result<Self> {
        let token = std::env::var(env_var).ok().filter(|t| !t.is_empty());
        if token.is_none() {
            log::warn!("{env_var} is not set; sending requests without authorization");
        }
        Self::new(base_url, token, timeout)
    }
}

fn is_transient_status(code: u16) -> bool {
    matches!(code, 408 | 409 | 425 | 429) || (500..600).contains(&code)
}

impl Backend for RemoteBackend {
    fn kind(&self) -> &'static str {
        "remote"
    }

    fn call(&self, req: &ModelRequest, _sample_index: u32) -> Result<BackendReply, BackendError> {
        let body = ChatRequest {
            model: &req.model_id,
            messages: [ChatMessage {
                role: "user",
                content: &req.prompt,
            }],
            temperature: req.temperature,
            max_tokens: req.max_output,
        };
        let mut http = self.client.post(&self.endpoint).json(&body);
        if let Some(t) = &self.token {
            http = http.bearer_auth(t);
        }
        let resp = http.send().map_err(|e| {
            if e.is_builder() {
                BackendError::Fatal(e.to_string())
            } else {
                BackendError::Transient(e.to_string())
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            let detail = resp.text().unwrap_or_default();
            let msg = format!("HTTP {}: {}", status.as_u16(), detail.chars().take(300).collect::<String>());
            return Err(if is_transient_status(status.as_u16()) {
                BackendError::Transient(msg)
            } else {
                BackendError::Fatal(msg)
            });
        }
        let parsed: ChatResponse = resp
            .json()
            .map_err(|e| BackendError::Transient(format!("malformed response body: {e}")))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        let usage = parsed
            .usage
            .map(|u| Usage {
                prompt_tokens: u.prompt_tokens,
                output_tokens: u.completion_tokens,
            })
            .unwrap_or_default();
        Ok(BackendReply { text, usage })
    }
}
