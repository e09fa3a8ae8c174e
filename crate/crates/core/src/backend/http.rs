//! Chat-completion HTTP transport with retry/backoff and a per-backend
//! in-flight gate.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use super::{BackendDescriptor, BackendError, Message};

/// Counting gate bounding concurrent in-flight requests per backend.
#[derive(Debug)]
pub struct Gate {
    capacity: usize,
    state: Mutex<usize>,
    cond: Condvar,
}

impl Gate {
    pub fn new(capacity: usize) -> Gate {
        Gate {
            capacity: capacity.max(1),
            state: Mutex::new(0),
            cond: Condvar::new(),
        }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut in_flight = self.state.lock().expect("gate poisoned");
        while *in_flight >= self.capacity {
            in_flight = self.cond.wait(in_flight).expect("gate poisoned");
        }
        *in_flight += 1;
        GateGuard { gate: self }
    }
}

struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut in_flight = self.gate.state.lock().expect("gate poisoned");
        *in_flight -= 1;
        self.gate.cond.notify_one();
    }
}

#[derive(Debug, Clone)]
pub struct HttpRuntime {
    pub descriptor: BackendDescriptor,
    gate: Arc<Gate>,
}

impl HttpRuntime {
    pub fn new(descriptor: BackendDescriptor, max_inflight: usize) -> HttpRuntime {
        HttpRuntime {
            descriptor,
            gate: Arc::new(Gate::new(max_inflight)),
        }
    }
}

pub(super) fn chat_http(rt: &HttpRuntime, messages: &[Message]) -> Result<String, BackendError> {
    let d = &rt.descriptor;
    let api_key = match &d.api_key_env {
        Some(var) => Some(std::env::var(var).map_err(|_| BackendError::MissingApiKey {
            backend: d.name.clone(),
            var: var.clone(),
        })?),
        None => None,
    };

    let body = serde_json::json!({
        "model": d.model,
        "messages": messages
            .iter()
            .map(|(role, content)| serde_json::json!({
                "role": role.as_str(),
                "content": content,
            }))
            .collect::<Vec<_>>(),
        "temperature": d.temperature,
    });

    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(d.timeout_secs))
        .build()
        .map_err(|e| BackendError::Transport {
            backend: d.name.clone(),
            attempts: 0,
            detail: e.to_string(),
        })?;

    let _guard = rt.gate.acquire();
    let attempts = d.max_retries + 1;
    let mut last_err = String::new();
    for attempt in 0..attempts {
        if attempt > 0 {
            // 1s / 2s / 4s backoff between attempts.
            std::thread::sleep(Duration::from_secs(1u64 << (attempt - 1).min(2)));
        }
        let mut request = client.post(&d.endpoint).json(&body);
        if let Some(key) = &api_key {
            request = request.bearer_auth(key);
        }
        match request.send() {
            Ok(resp) => {
                let status = resp.status();
                let text = resp.text().map_err(|e| BackendError::MalformedResponse {
                    backend: d.name.clone(),
                    detail: e.to_string(),
                })?;
                if !status.is_success() {
                    return Err(BackendError::Status {
                        backend: d.name.clone(),
                        status: status.as_u16(),
                        body: text,
                    });
                }
                return extract_content(&d.name, &text);
            }
            Err(e) => last_err = e.to_string(),
        }
    }
    Err(BackendError::Transport {
        backend: d.name.clone(),
        attempts,
        detail: last_err,
    })
}

fn extract_content(backend: &str, body: &str) -> Result<String, BackendError> {
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| BackendError::MalformedResponse {
            backend: backend.to_string(),
            detail: e.to_string(),
        })?;
    value["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| BackendError::MalformedResponse {
            backend: backend.to_string(),
            detail: "missing choices[0].message.content".to_string(),
        })
}
