//! Uniform client over chat-style vision LVLMs: multi-image input, optional
//! structured-response schemas, deterministic mock backend for desk-scale
//! verification.
//!
//! [`LvlmService`] wraps a raw backend (HTTP provider or [`mock::MockLvlm`])
//! and owns the schema handling: providers with native structured output get
//! the schema passed through, everything else gets the schema rendered into
//! the prompt and the reply parsed as strict JSON.

pub mod http;
pub mod mock;
pub mod schema;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::prompting::RefusalLexicon;

pub use schema::{FieldKind, SchemaField, SchemaError, StructuredSchema};

pub const DEFAULT_MAX_IMAGES: usize = 16;

/// Request metadata keys. The mock backend keys its deterministic behavior
/// off these; HTTP backends ignore them (they never reach the wire).
pub mod meta_keys {
    pub const PURPOSE: &str = "purpose";
    pub const TOOL: &str = "tool";
    pub const SAMPLE_ID: &str = "sample_id";
    pub const TRUTH: &str = "truth";
    pub const PROPOSAL_INDEX: &str = "proposal_index";
}

/// Call purposes recorded in request metadata.
pub mod purposes {
    pub const DETECT: &str = "detect";
    pub const SELECT: &str = "select";
    pub const SMP: &str = "smp";
    pub const PREPARE: &str = "prepare";
    pub const REWRITE: &str = "rewrite";
    pub const PICK_TOOLS: &str = "pick_tools";
}

#[derive(Debug, thiserror::Error)]
pub enum LvlmError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited after retries")]
    RateLimited,
    #[error("request timed out after retries")]
    Timeout,
    #[error("provider returned unparseable structured output: {0}")]
    SchemaViolation(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid mock behavior: {0}")]
    InvalidBehavior(String),
    #[error("request has {got} images; provider limit is {limit}")]
    TooManyImages { got: usize, limit: usize },
}

impl LvlmError {
    fn transient(&self) -> bool {
        matches!(self, LvlmError::RateLimited | LvlmError::Timeout | LvlmError::Transport(_))
    }
}

/// One encoded raster image attached to a request.
#[derive(Debug, Clone)]
pub struct EncodedImage {
    pub mime: &'static str,
    pub bytes: Vec<u8>,
}

impl EncodedImage {
    pub fn png(bytes: Vec<u8>) -> EncodedImage {
        EncodedImage { mime: "image/png", bytes }
    }
}

#[derive(Debug, Clone)]
pub struct LvlmRequest {
    pub system_text: String,
    pub user_text: String,
    pub images: Vec<EncodedImage>,
    pub response_schema: Option<StructuredSchema>,
    pub temperature: f64,
    pub model_id: String,
    /// Side-channel metadata (see [`meta_keys`]); not sent to providers.
    pub meta: BTreeMap<String, String>,
}

impl LvlmRequest {
    pub fn new(model_id: &str) -> LvlmRequest {
        LvlmRequest {
            system_text: String::new(),
            user_text: String::new(),
            images: Vec::new(),
            response_schema: None,
            temperature: 0.0,
            model_id: model_id.to_string(),
            meta: BTreeMap::new(),
        }
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(|s| s.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldValue {
    Bool(bool),
    Str(String),
}

impl FieldValue {
    pub fn as_bool(&self) -> Option<bool> {
        match self {
            FieldValue::Bool(b) => Some(*b),
            FieldValue::Str(_) => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            FieldValue::Str(s) => Some(s),
            FieldValue::Bool(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone)]
pub struct LvlmResponse {
    pub raw_text: String,
    /// Present iff a schema was supplied and the reply parsed; contains
    /// exactly the schema's fields.
    pub parsed_fields: Option<BTreeMap<String, FieldValue>>,
    pub refused: bool,
    pub usage: Usage,
}

/// Raw completion backends: the HTTP provider and the deterministic mock.
pub trait RawLvlm: Send + Sync {
    fn complete_raw(&self, request: &LvlmRequest) -> Result<RawCompletion, LvlmError>;

    /// Whether the backend accepts a response schema natively; when false the
    /// service renders the schema into the prompt instead.
    fn native_structured(&self) -> bool;

    fn name(&self) -> &str;
}

#[derive(Debug, Clone)]
pub struct RawCompletion {
    pub text: String,
    pub usage: Usage,
}

const MAX_RETRIES: u32 = 3;

pub struct LvlmService {
    backend: Box<dyn RawLvlm>,
    refusals: RefusalLexicon,
    max_images: usize,
    backoff_base: Duration,
    transcript: Option<Mutex<BufWriter<File>>>,
}

impl LvlmService {
    pub fn new(backend: Box<dyn RawLvlm>, refusals: RefusalLexicon) -> LvlmService {
        LvlmService {
            backend,
            refusals,
            max_images: DEFAULT_MAX_IMAGES,
            backoff_base: Duration::from_millis(200),
            transcript: None,
        }
    }

    pub fn with_max_images(mut self, max_images: usize) -> Self {
        self.max_images = max_images;
        self
    }

    /// Log every request/response pair as line-delimited JSON. Credentials
    /// never enter the transcript; image payloads are recorded as counts.
    pub fn with_transcript(mut self, path: &Path) -> std::io::Result<Self> {
        let file = File::create(path)?;
        self.transcript = Some(Mutex::new(BufWriter::new(file)));
        Ok(self)
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn refusals(&self) -> &RefusalLexicon {
        &self.refusals
    }

    pub fn complete(&self, request: &LvlmRequest) -> Result<LvlmResponse, LvlmError> {
        if request.images.len() > self.max_images {
            return Err(LvlmError::TooManyImages {
                got: request.images.len(),
                limit: self.max_images,
            });
        }

        let schema = request.response_schema.clone();
        let wire = match (&schema, self.backend.native_structured()) {
            (Some(s), false) => {
                let mut fallback = request.clone();
                fallback.user_text = format!(
                    "{}\n\nRespond only with a JSON object whose keys and value types match \
                     this response class exactly. No prose, no code fences.\n{}",
                    request.user_text,
                    s.render_class_text()
                );
                fallback.response_schema = None;
                fallback
            }
            _ => request.clone(),
        };

        let raw = self.complete_with_retries(&wire)?;
        let response = match &schema {
            None => LvlmResponse {
                raw_text: raw.text,
                parsed_fields: None,
                refused: false,
                usage: raw.usage,
            },
            Some(s) => match parse_structured(&raw.text, s) {
                Ok(fields) => LvlmResponse {
                    raw_text: raw.text,
                    parsed_fields: Some(fields),
                    refused: false,
                    usage: raw.usage,
                },
                Err(detail) => {
                    if self.refusals.is_refusal(&raw.text) {
                        LvlmResponse {
                            raw_text: raw.text,
                            parsed_fields: None,
                            refused: true,
                            usage: raw.usage,
                        }
                    } else {
                        return Err(LvlmError::SchemaViolation(detail));
                    }
                }
            },
        };

        self.log_transcript(request, &response);
        Ok(response)
    }

    fn complete_with_retries(&self, request: &LvlmRequest) -> Result<RawCompletion, LvlmError> {
        let mut attempt = 0;
        loop {
            match self.backend.complete_raw(request) {
                Ok(raw) => return Ok(raw),
                Err(e) if e.transient() && attempt < MAX_RETRIES => {
                    attempt += 1;
                    std::thread::sleep(self.backoff_base * 2u32.pow(attempt - 1));
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn log_transcript(&self, request: &LvlmRequest, response: &LvlmResponse) {
        let Some(t) = &self.transcript else { return };
        let line = serde_json::json!({
            "model_id": request.model_id,
            "meta": request.meta,
            "system_text": request.system_text,
            "user_text": request.user_text,
            "images": request.images.len(),
            "schema": request.response_schema.as_ref().map(|s| s.field_names()),
            "temperature": request.temperature,
            "response": response.raw_text,
            "refused": response.refused,
            "usage": response.usage,
        });
        if let Ok(mut w) = t.lock() {
            let _ = writeln!(w, "{line}");
            let _ = w.flush();
        }
    }
}

/// Strict-JSON parsing of a structured reply against a schema: the object
/// must contain every schema field with a compatible kind; extra keys are
/// dropped so the parsed map always holds exactly the schema's fields.
pub fn parse_structured(
    text: &str,
    schema: &StructuredSchema,
) -> Result<BTreeMap<String, FieldValue>, String> {
    let value = extract_json_object(text).ok_or_else(|| "no JSON object found".to_string())?;
    let obj = value.as_object().ok_or_else(|| "top level is not an object".to_string())?;
    let mut out = BTreeMap::new();
    for field in schema.fields() {
        let v = obj
            .get(&field.name)
            .ok_or_else(|| format!("missing field {}", field.name))?;
        let coerced = match field.kind {
            FieldKind::Bool => match v {
                serde_json::Value::Bool(b) => FieldValue::Bool(*b),
                other => return Err(format!("field {} is not a bool: {other}", field.name)),
            },
            FieldKind::Str => match v {
                serde_json::Value::String(s) => FieldValue::Str(s.clone()),
                // Providers asked for str occasionally emit bare numbers.
                serde_json::Value::Number(n) => FieldValue::Str(n.to_string()),
                serde_json::Value::Bool(b) => FieldValue::Str(b.to_string()),
                other => return Err(format!("field {} is not a string: {other}", field.name)),
            },
        };
        out.insert(field.name.clone(), coerced);
    }
    Ok(out)
}

fn extract_json_object(text: &str) -> Option<serde_json::Value> {
    if let Ok(v) = serde_json::from_str::<serde_json::Value>(text.trim()) {
        return Some(v);
    }
    // Tolerate prose or code fences around the object: parse the first
    // balanced top-level {...} span.
    let bytes = text.as_bytes();
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_str {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_str = false;
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return serde_json::from_str(&text[start..=i]).ok();
                }
            }
            _ => {}
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> StructuredSchema {
        StructuredSchema::new(vec![
            SchemaField::bool_field(schema::VERDICT_FIELD),
            SchemaField::str_field("explanation"),
        ])
        .unwrap()
    }

    #[test]
    fn parses_exact_json() {
        let fields = parse_structured(
            r#"{"is_ai_generated": true, "explanation": "blur halos"}"#,
            &schema(),
        )
        .unwrap();
        assert_eq!(fields["is_ai_generated"], FieldValue::Bool(true));
        assert_eq!(fields["explanation"], FieldValue::Str("blur halos".into()));
    }

    #[test]
    fn parses_fenced_json_and_drops_extras() {
        let text = "Sure!\n```json\n{\"is_ai_generated\": false, \"explanation\": \"ok\", \"extra\": 1}\n```";
        let fields = parse_structured(text, &schema()).unwrap();
        assert_eq!(fields.len(), 2);
        assert_eq!(fields["is_ai_generated"], FieldValue::Bool(false));
    }

    #[test]
    fn rejects_missing_and_mistyped_fields() {
        assert!(parse_structured(r#"{"is_ai_generated": true}"#, &schema()).is_err());
        assert!(parse_structured(r#"{"is_ai_generated": "yes", "explanation": "x"}"#, &schema()).is_err());
        assert!(parse_structured("no json at all", &schema()).is_err());
    }

    #[test]
    fn coerces_numbers_for_str_fields() {
        let s = StructuredSchema::new(vec![
            SchemaField::bool_field(schema::VERDICT_FIELD),
            SchemaField::str_field("confidence_0_to_1"),
        ])
        .unwrap();
        let fields =
            parse_structured(r#"{"is_ai_generated": true, "confidence_0_to_1": 0.85}"#, &s).unwrap();
        assert_eq!(fields["confidence_0_to_1"], FieldValue::Str("0.85".into()));
    }
}
