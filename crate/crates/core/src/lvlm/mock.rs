//! Deterministic LVLM test double.
//!
//! Every reply is a pure function of the behavior seed and the request's
//! semantic key (purpose, tool, sample id, ground truth, schema fields), so
//! runs replay byte-identically regardless of call order or concurrency.
//! Outcome draws ignore any call counter on purpose: repeated pipelines and
//! parallel schedules must not change results.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::dataset::GroundTruth;
use crate::prompting::RefusalLexicon;

use super::schema::{parse_class_fields, SchemaField, FieldKind, VERDICT_FIELD};
use super::{meta_keys, purposes, LvlmError, LvlmRequest, RawCompletion, RawLvlm, Usage};

/// A behavior rule; unset matchers match everything, later matching rules
/// override earlier ones property by property.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    pub tool: Option<String>,
    pub truth: Option<GroundTruth>,
    pub structured: Option<bool>,
    /// Matches when the request's template contains this field name.
    pub template_contains: Option<String>,
    pub p_correct: Option<f64>,
    pub refusal_p: Option<f64>,
    pub confidence: Option<f64>,
}

/// Exact-response overrides, matched before any generated reply.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    pub purpose: Option<String>,
    pub tool: Option<String>,
    pub response: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockBehavior {
    #[serde(default)]
    pub seed: u64,
    /// Base probability that a detection verdict matches ground truth.
    #[serde(default = "default_p_correct")]
    pub p_correct: f64,
    #[serde(default)]
    pub refusal_p: f64,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    #[serde(default)]
    pub rules: Vec<MockRule>,
    /// Self-assessment score per tool, 0..=10.
    #[serde(default)]
    pub smp_scores: BTreeMap<String, f64>,
    #[serde(default = "default_smp")]
    pub default_smp: f64,
    #[serde(default)]
    pub preparation_response: Option<String>,
    #[serde(default)]
    pub pick_tools_response: Option<String>,
    /// Candidate field names cycled through by rewrite proposals.
    #[serde(default = "default_rewrite_fields")]
    pub rewrite_fields: Vec<String>,
    #[serde(default)]
    pub scripts: Vec<MockScript>,
    /// When false the mock mimics a provider without native structured
    /// output; the service then renders schemas into the prompt.
    #[serde(default = "default_true")]
    pub native_structured: bool,
}

fn default_p_correct() -> f64 {
    1.0
}
fn default_confidence() -> f64 {
    1.0
}
fn default_smp() -> f64 {
    7.0
}
fn default_true() -> bool {
    true
}
fn default_rewrite_fields() -> Vec<String> {
    [
        "boundary_clarity",
        "texture_consistency",
        "object_delineation",
        "spatial_anomaly_detection",
        "temporal_edge_coherence",
        "motion_smoothness",
        "lighting_uniformity",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

impl Default for MockBehavior {
    fn default() -> Self {
        MockBehavior {
            seed: 0,
            p_correct: default_p_correct(),
            refusal_p: 0.0,
            confidence: default_confidence(),
            rules: Vec::new(),
            smp_scores: BTreeMap::new(),
            default_smp: default_smp(),
            preparation_response: None,
            pick_tools_response: None,
            rewrite_fields: default_rewrite_fields(),
            scripts: Vec::new(),
            native_structured: true,
        }
    }
}

/// Per-call resolved effects and draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MockOutcome {
    pub correct: bool,
    pub refused: bool,
    pub confidence: f64,
}

pub struct MockLvlm {
    behavior: MockBehavior,
    refusals: RefusalLexicon,
    calls: AtomicU64,
}

impl MockLvlm {
    pub fn new(behavior: MockBehavior) -> Result<MockLvlm, LvlmError> {
        for (what, p) in [("p_correct", behavior.p_correct), ("refusal_p", behavior.refusal_p)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(LvlmError::InvalidBehavior(format!("{what}={p} outside [0,1]")));
            }
        }
        for (i, rule) in behavior.rules.iter().enumerate() {
            for (what, p) in [
                ("p_correct", rule.p_correct),
                ("refusal_p", rule.refusal_p),
            ] {
                if let Some(p) = p {
                    if !(0.0..=1.0).contains(&p) {
                        return Err(LvlmError::InvalidBehavior(format!(
                            "rule {i}: {what}={p} outside [0,1]"
                        )));
                    }
                }
            }
        }
        for (tool, s) in &behavior.smp_scores {
            if !(0.0..=10.0).contains(s) {
                return Err(LvlmError::InvalidBehavior(format!(
                    "smp score {s} for {tool} outside [0,10]"
                )));
            }
        }
        Ok(MockLvlm {
            behavior,
            refusals: RefusalLexicon::default(),
            calls: AtomicU64::new(0),
        })
    }

    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn template_fields(request: &LvlmRequest) -> Option<Vec<SchemaField>> {
        if let Some(s) = &request.response_schema {
            return Some(s.fields().to_vec());
        }
        // Fallback mode: the schema was rendered into the prompt.
        if request.user_text.contains("class StructuredResponse(BaseModel):") {
            let fields = parse_class_fields(&request.user_text);
            if !fields.is_empty() {
                return Some(fields);
            }
        }
        None
    }

    fn resolve_effects(
        &self,
        tool: &str,
        truth: Option<GroundTruth>,
        structured: bool,
        fields: Option<&[SchemaField]>,
    ) -> (f64, f64, f64) {
        let b = &self.behavior;
        let mut p_correct = b.p_correct;
        let mut refusal_p = b.refusal_p;
        let mut confidence = b.confidence;
        for rule in &b.rules {
            let tool_ok = rule.tool.as_deref().map_or(true, |t| t == tool);
            let truth_ok = rule.truth.map_or(true, |t| Some(t) == truth);
            let structured_ok = rule.structured.map_or(true, |s| s == structured);
            let template_ok = rule.template_contains.as_deref().map_or(true, |name| {
                fields.map_or(false, |fs| fs.iter().any(|f| f.name == name))
            });
            if tool_ok && truth_ok && structured_ok && template_ok {
                if let Some(p) = rule.p_correct {
                    p_correct = p;
                }
                if let Some(p) = rule.refusal_p {
                    refusal_p = p;
                }
                if let Some(c) = rule.confidence {
                    confidence = c;
                }
            }
        }
        (p_correct, refusal_p, confidence)
    }

    /// The deterministic draw for one detection call. Public so tests can
    /// replay the exact outcome sequence the pipeline will see.
    pub fn outcome(
        &self,
        tool: &str,
        sample_id: &str,
        truth: Option<GroundTruth>,
        structured: bool,
        fields: Option<&[SchemaField]>,
    ) -> MockOutcome {
        let (p_correct, refusal_p, confidence) = self.resolve_effects(tool, truth, structured, fields);
        let u_outcome = unit(fnv64(&[
            &self.behavior.seed.to_le_bytes(),
            b"outcome",
            tool.as_bytes(),
            sample_id.as_bytes(),
        ]));
        let u_refuse = unit(fnv64(&[
            &self.behavior.seed.to_le_bytes(),
            b"refusal",
            tool.as_bytes(),
            sample_id.as_bytes(),
            &[structured as u8],
        ]));
        MockOutcome {
            correct: u_outcome < p_correct,
            refused: u_refuse < refusal_p,
            confidence: confidence.clamp(0.0, 1.0),
        }
    }

    fn script_for(&self, purpose: &str, tool: &str) -> Option<&str> {
        self.behavior.scripts.iter().find_map(|s| {
            let purpose_ok = s.purpose.as_deref().map_or(true, |p| p == purpose);
            let tool_ok = s.tool.as_deref().map_or(true, |t| t == tool);
            (purpose_ok && tool_ok).then_some(s.response.as_str())
        })
    }

    fn detection_reply(&self, request: &LvlmRequest, tool: &str) -> String {
        let sample_id = request
            .meta_value(meta_keys::SAMPLE_ID)
            .map(|s| s.to_string())
            .unwrap_or_else(|| format!("anon-{}", fnv64(&[request.user_text.as_bytes()])));
        let truth = request
            .meta_value(meta_keys::TRUTH)
            .and_then(GroundTruth::parse);
        let fields = Self::template_fields(request);
        let structured = fields.is_some();
        let out = self.outcome(tool, &sample_id, truth, structured, fields.as_deref());

        if out.refused {
            let pick = fnv64(&[b"refusal-text", sample_id.as_bytes(), tool.as_bytes()]);
            return self.refusals.canned_refusal(pick);
        }

        let predicted_ai = match truth {
            Some(t) => {
                let predicted = if out.correct { t } else { t.flipped() };
                predicted == GroundTruth::Ai
            }
            None => unit(fnv64(&[b"unlabeled", sample_id.as_bytes()])) < 0.5,
        };

        match fields {
            Some(fields) => {
                let mut obj = serde_json::Map::new();
                for f in &fields {
                    match (f.kind, f.name.as_str()) {
                        (FieldKind::Bool, _) => {
                            obj.insert(f.name.clone(), serde_json::Value::Bool(predicted_ai));
                        }
                        (FieldKind::Str, "confidence_0_to_1") => {
                            obj.insert(
                                f.name.clone(),
                                serde_json::Value::String(format!("{:.2}", out.confidence)),
                            );
                        }
                        (FieldKind::Str, name) => {
                            let note = if predicted_ai {
                                format!("{name}: anomalies consistent with synthesis in the {tool} view")
                            } else {
                                format!("{name}: coherent and physically plausible in the {tool} view")
                            };
                            obj.insert(f.name.clone(), serde_json::Value::String(note));
                        }
                    }
                }
                serde_json::Value::Object(obj).to_string()
            }
            None => {
                if predicted_ai {
                    format!("Yes, the {tool} view shows artifacts typical of generated video.")
                } else {
                    "No.".to_string()
                }
            }
        }
    }

    fn rewrite_reply(&self, request: &LvlmRequest, tool: &str) -> String {
        let current: Vec<String> = request
            .meta_value("current_fields")
            .map(|s| s.split(',').map(|f| f.trim().to_string()).filter(|f| !f.is_empty()).collect())
            .unwrap_or_else(|| {
                vec![
                    VERDICT_FIELD.to_string(),
                    "raw_frame_analysis".to_string(),
                    format!("{tool}_analysis"),
                    "explanation".to_string(),
                ]
            });
        let index = request
            .meta_value(meta_keys::PROPOSAL_INDEX)
            .and_then(|v| v.parse::<usize>().ok())
            .unwrap_or(0);
        let pool: Vec<&String> = self
            .behavior
            .rewrite_fields
            .iter()
            .filter(|c| !current.contains(c))
            .collect();

        let mut fields: Vec<String> = current;
        if let Some(candidate) = pool.get(index % pool.len().max(1)).copied() {
            // Swap the last analysis field for the next unused candidate.
            if let Some(last) = fields.iter().rposition(|f| f != VERDICT_FIELD) {
                fields[last] = candidate.clone();
            } else {
                fields.push(candidate.clone());
            }
        }

        let mut out = String::from("class NewAnalysisResult(BaseModel):\n");
        for f in &fields {
            let kind = if f == VERDICT_FIELD { "bool" } else { "str" };
            out.push_str(&format!("    {f}: {kind}\n"));
        }
        out
    }

    fn smp_reply(&self, tool: &str) -> String {
        let score = self
            .behavior
            .smp_scores
            .get(tool)
            .copied()
            .unwrap_or(self.behavior.default_smp);
        format!("Score: {score}. Self-assessment for the {tool} feature on this task.")
    }

    fn preparation_reply(&self) -> String {
        self.behavior.preparation_response.clone().unwrap_or_else(|| {
            "Here are several methods and tools that can provide valuable additional features \
from videos:\n\n\
1. Optical Flow Extraction\nDense flow fields capture the motion between consecutive frames.\n\n\
2. Sharpening Filters\nSharpening frames enhances edges and fine details before analysis.\n\n\
3. Depth Map Estimation\nDepth maps provide per-frame depth information, aiding 3D scene understanding.\n\n\
4. Edge Detection\nEdge maps expose jagged or discontinuous object boundaries.\n\n\
5. Saturation Estimation\nSaturation maps reveal color unevenness and oversaturation.\n\n\
6. Denoising\nDenoising isolates unnatural residual noise patterns.\n\n\
7. Contrast Enhancement\nEnhancement boosts details and contrast to reveal synthetic textures.\n\n\
8. Segmentation Maps\nSegmentation identifies mismatched object regions.\n\n\
9. Facial Landmark Detection\nLandmark localization exposes misaligned key points."
                .to_string()
        })
    }
}

impl RawLvlm for MockLvlm {
    fn complete_raw(&self, request: &LvlmRequest) -> Result<RawCompletion, LvlmError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let purpose = request
            .meta_value(meta_keys::PURPOSE)
            .unwrap_or(purposes::DETECT)
            .to_string();
        let tool = request.meta_value(meta_keys::TOOL).unwrap_or("rgb").to_string();

        let text = if let Some(script) = self.script_for(&purpose, &tool) {
            script.to_string()
        } else {
            match purpose.as_str() {
                purposes::PREPARE => self.preparation_reply(),
                purposes::SMP => self.smp_reply(&tool),
                purposes::REWRITE => self.rewrite_reply(request, &tool),
                purposes::PICK_TOOLS => self
                    .behavior
                    .pick_tools_response
                    .clone()
                    .unwrap_or_default(),
                _ => self.detection_reply(request, &tool),
            }
        };

        let usage = Usage {
            prompt_tokens: (request.system_text.len() + request.user_text.len()) as u64 / 4,
            completion_tokens: text.len() as u64 / 4,
        };
        Ok(RawCompletion { text, usage })
    }

    fn native_structured(&self) -> bool {
        self.behavior.native_structured
    }

    fn name(&self) -> &str {
        "mock"
    }
}

fn fnv64(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        // Separator so part boundaries are unambiguous.
        h ^= 0xfe;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // FNV alone mixes the high bits poorly on short inputs; finish with the
    // splitmix64 avalanche so the unit-interval draws are uniform.
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^= h >> 31;
    h
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}
