//! Chat-completions HTTP backend (system/user roles, images as base64 data
//! URLs, optional native json_schema response format).

use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::Engine;

use super::schema::FieldKind;
use super::{LvlmError, LvlmRequest, RawCompletion, RawLvlm, Usage};

pub struct HttpLvlm {
    endpoint: String,
    api_key: String,
    native_structured: bool,
    min_interval: Duration,
    last_call: Mutex<Option<Instant>>,
    client: reqwest::blocking::Client,
}

impl HttpLvlm {
    pub fn new(
        endpoint: &str,
        api_key: &str,
        native_structured: bool,
        rate_limit_per_min: u32,
    ) -> Result<HttpLvlm, LvlmError> {
        let min_interval = if rate_limit_per_min == 0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(60.0 / rate_limit_per_min as f64)
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| LvlmError::Transport(e.to_string()))?;
        Ok(HttpLvlm {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            api_key: api_key.to_string(),
            native_structured,
            min_interval,
            last_call: Mutex::new(None),
            client,
        })
    }

    fn pace(&self) {
        if self.min_interval.is_zero() {
            return;
        }
        let mut last = self.last_call.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < self.min_interval {
                std::thread::sleep(self.min_interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    pub(crate) fn build_body(&self, request: &LvlmRequest) -> serde_json::Value {
        let mut content = vec![serde_json::json!({"type": "text", "text": request.user_text})];
        for img in &request.images {
            let url = format!(
                "data:{};base64,{}",
                img.mime,
                base64::engine::general_purpose::STANDARD.encode(&img.bytes)
            );
            content.push(serde_json::json!({
                "type": "image_url",
                "image_url": {"url": url},
            }));
        }
        let mut body = serde_json::json!({
            "model": request.model_id,
            "temperature": request.temperature,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": content},
            ],
        });
        if let Some(schema) = &request.response_schema {
            let mut properties = serde_json::Map::new();
            let mut required = Vec::new();
            for field in schema.fields() {
                let ty = match field.kind {
                    FieldKind::Bool => "boolean",
                    FieldKind::Str => "string",
                };
                properties.insert(field.name.clone(), serde_json::json!({"type": ty}));
                required.push(serde_json::Value::String(field.name.clone()));
            }
            body["response_format"] = serde_json::json!({
                "type": "json_schema",
                "json_schema": {
                    "name": "structured_response",
                    "strict": true,
                    "schema": {
                        "type": "object",
                        "properties": properties,
                        "required": required,
                        "additionalProperties": false,
                    },
                },
            });
        }
        body
    }
}

impl RawLvlm for HttpLvlm {
    fn complete_raw(&self, request: &LvlmRequest) -> Result<RawCompletion, LvlmError> {
        self.pace();
        let body = self.build_body(request);
        let response = self
            .client
            .post(format!("{}/chat/completions", self.endpoint))
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    LvlmError::Timeout
                } else {
                    LvlmError::Transport(e.to_string())
                }
            })?;

        let status = response.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(LvlmError::Auth(format!("provider returned {status}")));
        }
        if status.as_u16() == 429 {
            return Err(LvlmError::RateLimited);
        }
        if status.is_server_error() || status.as_u16() == 408 {
            return Err(LvlmError::Transport(format!("provider returned {status}")));
        }
        if !status.is_success() {
            let text = response.text().unwrap_or_default();
            return Err(LvlmError::Transport(format!("provider returned {status}: {text}")));
        }

        let value: serde_json::Value = response
            .json()
            .map_err(|e| LvlmError::Transport(format!("bad provider JSON: {e}")))?;
        let text = value["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| LvlmError::Transport("missing choices[0].message.content".into()))?
            .to_string();
        let usage = Usage {
            prompt_tokens: value["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            completion_tokens: value["usage"]["completion_tokens"].as_u64().unwrap_or(0),
        };
        Ok(RawCompletion { text, usage })
    }

    fn native_structured(&self) -> bool {
        self.native_structured
    }

    fn name(&self) -> &str {
        "http"
    }
}
