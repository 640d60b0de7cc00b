use std::time::Duration;

use serde_json::{json, Value};

use super::{Gate, HttpConfig, LlmError, Provider, RetryPolicy};
use crate::decision::PromptBundle;

/// OpenAI-style chat-completion client with bounded concurrency and retries
/// on 429, 5xx and transport failures.
#[derive(Debug)]
pub struct HttpProvider {
    cfg: HttpConfig,
    retry: RetryPolicy,
    gate: Gate,
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl HttpProvider {
    pub fn new(cfg: HttpConfig, retry: RetryPolicy, max_concurrency: usize) -> Result<Self, LlmError> {
        let api_key = match &cfg.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| LlmError::MissingCredentials(var.clone()))?),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs.max(1))))
            .build()
            .into();
        Ok(Self {
            cfg,
            retry,
            gate: Gate::new(max_concurrency),
            agent,
            api_key,
        })
    }

    fn request_body(&self, prompt: &str) -> Value {
        let mut messages = Vec::new();
        if let Some(sys) = &self.cfg.system_prompt {
            messages.push(json!({"role": "system", "content": sys}));
        }
        messages.push(json!({"role": "user", "content": prompt}));
        let mut body = json!({"model": self.cfg.model, "messages": messages});
        if let Some(t) = self.cfg.temperature {
            body["temperature"] = json!(t);
        }
        if let Some(m) = self.cfg.max_tokens {
            body["max_tokens"] = json!(m);
        }
        body
    }

    fn attempt(&self, body: &[u8]) -> Attempt {
        let _permit = self.gate.acquire();
        let mut req = self
            .agent
            .post(&self.cfg.endpoint)
            .header("content-type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("authorization", format!("Bearer {key}"));
        }
        match req.send(body) {
            Err(e) => Attempt::Transport(e.to_string()),
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                let retry_after = resp
                    .headers()
                    .get("retry-after")
                    .and_then(|v| v.to_str().ok())
                    .and_then(|v| v.trim().parse::<u64>().ok())
                    .map(Duration::from_secs);
                match resp.body_mut().read_to_string() {
                    Ok(text) => Attempt::Response {
                        status,
                        text,
                        retry_after,
                    },
                    Err(e) => Attempt::Transport(e.to_string()),
                }
            }
        }
    }
}

enum Attempt {
    Transport(String),
    Response {
        status: u16,
        text: String,
        retry_after: Option<Duration>,
    },
}

fn retryable(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

/// Follows a dotted path such as `choices.0.message.content`.
pub(crate) fn extract_content(body: &Value, path: &str) -> Result<String, LlmError> {
    let mut cur = body;
    for seg in path.split('.').filter(|s| !s.is_empty()) {
        let next = match cur {
            Value::Array(items) => seg.parse::<usize>().ok().and_then(|i| items.get(i)),
            Value::Object(map) => map.get(seg),
            _ => None,
        };
        cur = next.ok_or_else(|| LlmError::MalformedResponse(format!("no value at {path:?}")))?;
    }
    cur.as_str()
        .map(str::to_string)
        .ok_or_else(|| LlmError::MalformedResponse(format!("value at {path:?} is not a string")))
}

impl Provider for HttpProvider {
    fn complete(&self, prompt: &PromptBundle) -> Result<String, LlmError> {
        let body = serde_json::to_vec(&self.request_body(&prompt.text))
            .map_err(|e| LlmError::Config(e.to_string()))?;
        let max = self.retry.max_attempts.max(1);
        let cap = Duration::from_millis(self.retry.max_backoff_ms);
        for attempt in 1..=max {
            let (delay, failure) = match self.attempt(&body) {
                Attempt::Response { status, text, .. } if (200..300).contains(&status) => {
                    let v: Value = serde_json::from_str(&text)
                        .map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
                    return extract_content(&v, &self.cfg.content_path);
                }
                Attempt::Response {
                    status,
                    text,
                    retry_after,
                } if retryable(status) => (
                    retry_after.map_or_else(|| self.retry.backoff(attempt), |d| d.min(cap)),
                    LlmError::Status {
                        status,
                        attempts: attempt,
                        body: text,
                    },
                ),
                Attempt::Response { status, text, .. } => {
                    return Err(LlmError::Status {
                        status,
                        attempts: attempt,
                        body: text,
                    })
                }
                Attempt::Transport(message) => (
                    self.retry.backoff(attempt),
                    LlmError::Transport {
                        attempts: attempt,
                        message,
                    },
                ),
            };
            if attempt == max {
                return Err(failure);
            }
            log::warn!("request attempt {attempt} failed ({failure}); retrying in {delay:?}");
            std::thread::sleep(delay);
        }
        unreachable!("loop returns on the final attempt")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn content_path_walks_arrays_and_objects() {
        let v = json!({"choices": [{"message": {"content": "Emotion: sad"}}]});
        assert_eq!(extract_content(&v, "choices.0.message.content").unwrap(), "Emotion: sad");
        assert!(extract_content(&v, "choices.1.message.content").is_err());
        assert!(extract_content(&v, "choices.0.message").is_err());
        let flat = json!({"output": "Emotion: joyful"});
        assert_eq!(extract_content(&flat, "output").unwrap(), "Emotion: joyful");
    }

    #[test]
    fn request_body_shape() {
        let p = HttpProvider::new(
            HttpConfig {
                endpoint: "http://127.0.0.1:1/v1/chat/completions".into(),
                model: "m".into(),
                api_key_env: None,
                content_path: "choices.0.message.content".into(),
                temperature: Some(0.0),
                max_tokens: None,
                system_prompt: Some("be brief".into()),
                timeout_secs: 5,
            },
            RetryPolicy::default(),
            1,
        )
        .unwrap();
        let b = p.request_body("hi");
        assert_eq!(b["model"], "m");
        assert_eq!(b["messages"][0]["role"], "system");
        assert_eq!(b["messages"][1]["content"], "hi");
        assert_eq!(b["temperature"], 0.0);
        assert!(b.get("max_tokens").is_none());
    }

    #[test]
    fn missing_credentials() {
        let cfg = HttpConfig {
            endpoint: "http://x".into(),
            model: "m".into(),
            api_key_env: Some("EICL_TEST_UNSET_KEY_VAR".into()),
            content_path: "choices.0.message.content".into(),
            temperature: None,
            max_tokens: None,
            system_prompt: None,
            timeout_secs: 5,
        };
        assert!(matches!(
            HttpProvider::new(cfg, RetryPolicy::default(), 1),
            Err(LlmError::MissingCredentials(v)) if v == "EICL_TEST_UNSET_KEY_VAR"
        ));
    }
}
