//! Final per-video detection: run each selected EK tool through the LVLM,
//! parse verdicts, OR-ensemble into one real/fake prediction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{encode_png, select_window, DatasetError, GroundTruth, VideoSample};
use crate::ektools::{EKTool, EKToolError, ToolRunner};
use crate::lvlm::{meta_keys, purposes, EncodedImage, LvlmError, LvlmRequest, LvlmService};
use crate::prompting::{
    parse_yes_no, render_detection_prompt, render_pick_tools_prompt, PromptMode, PromptTemplate,
};

#[derive(Debug, thiserror::Error)]
pub enum InferenceError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Tool(#[from] EKToolError),
    #[error(transparent)]
    Lvlm(#[from] LvlmError),
}

/// One LVLM verdict for one (sample, tool) pair.
///
/// `is_ai_generated` is `None` when the model refused or when a
/// non-structured reply had no parseable Yes/No token; downstream scoring
/// treats both as non-votes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Detection {
    pub sample_id: String,
    pub tool: String,
    pub is_ai_generated: Option<bool>,
    pub confidence: f64,
    pub field_analyses: BTreeMap<String, String>,
    pub refused: bool,
    pub raw_text: String,
}

impl Detection {
    pub fn voted(&self) -> Option<bool> {
        if self.refused {
            None
        } else {
            self.is_ai_generated
        }
    }
}

/// OR-ensembled prediction for one video.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleVerdict {
    pub sample_id: String,
    pub source: String,
    pub final_label: GroundTruth,
    pub confidence: f64,
    pub tools_used: Vec<String>,
    pub all_refused: bool,
    pub degraded: bool,
    pub per_tool: Vec<Detection>,
}

/// Shared context for detection calls.
pub struct DetectCtx<'a> {
    pub runner: &'a ToolRunner,
    pub window: usize,
    pub model_id: String,
    pub temperature: f64,
    /// Recorded in request metadata; selection reuses the detection path
    /// under its own purpose tag.
    pub purpose: &'static str,
}

impl<'a> DetectCtx<'a> {
    pub fn new(runner: &'a ToolRunner, window: usize, model_id: &str) -> DetectCtx<'a> {
        DetectCtx {
            runner,
            window,
            model_id: model_id.to_string(),
            temperature: 0.0,
            purpose: purposes::DETECT,
        }
    }
}

/// Run one tool over one sample: build the middle-frame window, derive the
/// EK artifact, prompt the LVLM and parse the verdict.
pub fn detect_with_tool(
    client: &LvlmService,
    sample: &VideoSample,
    tool: &EKTool,
    template: Option<&PromptTemplate>,
    mode: PromptMode,
    ctx: &DetectCtx,
) -> Result<Detection, InferenceError> {
    let window = select_window(sample, ctx.window)?;
    let mut images: Vec<EncodedImage> =
        window.frames().iter().map(|f| EncodedImage::png(encode_png(f))).collect();
    let mut ek_count = 0usize;
    if tool.name != "rgb" {
        let artifact = ctx.runner.apply_cached(&sample.id, tool, &window)?;
        ek_count = artifact.frames.len();
        images.extend(artifact.frames.frames().iter().map(|f| EncodedImage::png(encode_png(f))));
    }

    let prompt = render_detection_prompt(tool, mode, template, window.len(), ek_count);
    let mut request = LvlmRequest::new(&ctx.model_id);
    request.system_text = prompt.system_text;
    request.user_text = prompt.user_text;
    request.images = images;
    request.response_schema = prompt.schema.clone();
    request.temperature = ctx.temperature;
    request.meta.insert(meta_keys::PURPOSE.into(), ctx.purpose.into());
    request.meta.insert(meta_keys::TOOL.into(), tool.name.into());
    request.meta.insert(meta_keys::SAMPLE_ID.into(), sample.id.clone());
    request.meta.insert(meta_keys::TRUTH.into(), sample.label.as_str().into());

    let response = client.complete(&request)?;

    let mut detection = Detection {
        sample_id: sample.id.clone(),
        tool: tool.name.to_string(),
        is_ai_generated: None,
        confidence: 1.0,
        field_analyses: BTreeMap::new(),
        refused: response.refused,
        raw_text: response.raw_text.clone(),
    };

    match (&prompt.schema, &response.parsed_fields) {
        (Some(_), Some(fields)) => {
            for (name, value) in fields {
                match name.as_str() {
                    "is_ai_generated" => detection.is_ai_generated = value.as_bool(),
                    "confidence_0_to_1" => {
                        detection.confidence = value
                            .as_str()
                            .and_then(|s| s.trim().parse::<f64>().ok())
                            .map(|c| c.clamp(0.0, 1.0))
                            .unwrap_or(1.0);
                    }
                    _ => {
                        if let Some(s) = value.as_str() {
                            detection.field_analyses.insert(name.clone(), s.to_string());
                        }
                    }
                }
            }
        }
        (Some(_), None) => {
            // Refusal on a structured call: verdict stays absent.
        }
        (None, _) => {
            let outcome = parse_yes_no(&response.raw_text, client.refusals());
            detection.is_ai_generated = outcome.verdict;
            detection.refused = detection.refused || outcome.refused;
        }
    }

    Ok(detection)
}

/// Ask the LVLM to choose a per-video subset of the toolkit from the raw
/// frames. Empty, unparseable or out-of-toolkit answers fall back to the
/// full toolkit.
pub fn pick_tools_for_video(
    client: &LvlmService,
    sample: &VideoSample,
    toolkit: &[&'static EKTool],
    ctx: &DetectCtx,
) -> Result<Vec<&'static EKTool>, InferenceError> {
    let window = select_window(sample, ctx.window)?;
    let mut request = LvlmRequest::new(&ctx.model_id);
    request.system_text = crate::prompting::DETECT_SYSTEM.to_string();
    request.user_text = render_pick_tools_prompt(toolkit, window.len());
    request.images = window.frames().iter().map(|f| EncodedImage::png(encode_png(f))).collect();
    request.temperature = ctx.temperature;
    request.meta.insert(meta_keys::PURPOSE.into(), purposes::PICK_TOOLS.into());
    request.meta.insert(meta_keys::SAMPLE_ID.into(), sample.id.clone());

    let response = client.complete(&request)?;
    let tokens: Vec<String> = response
        .raw_text
        .split(|c: char| c == ',' || c == '\n' || c == ';')
        .map(|t| {
            t.trim()
                .trim_matches(|c: char| !c.is_ascii_alphanumeric() && c != '_')
                .to_ascii_lowercase()
                .replace(' ', "_")
        })
        .filter(|t| !t.is_empty())
        .collect();

    if tokens.is_empty() {
        return Ok(toolkit.to_vec());
    }
    if tokens.iter().any(|t| !toolkit.iter().any(|tool| tool.name == t.as_str())) {
        log::warn!(
            "sample {}: per-video selection named tools outside the toolkit; using all of it",
            sample.id
        );
        return Ok(toolkit.to_vec());
    }
    let picked: Vec<&'static EKTool> = toolkit
        .iter()
        .filter(|tool| tokens.iter().any(|t| t == tool.name))
        .copied()
        .collect();
    Ok(if picked.is_empty() { toolkit.to_vec() } else { picked })
}

/// OR-ensemble core: AI iff any non-refused vote says AI. Returns the
/// prediction, its confidence, and whether every tool abstained.
pub fn or_ensemble(per_tool: &[Detection]) -> (GroundTruth, f64, bool) {
    let votes: Vec<&Detection> = per_tool.iter().filter(|d| d.voted().is_some()).collect();
    if votes.is_empty() {
        return (GroundTruth::Real, 0.0, true);
    }
    let ai_votes: Vec<&&Detection> = votes.iter().filter(|d| d.voted() == Some(true)).collect();
    if ai_votes.is_empty() {
        let conf = votes.iter().map(|d| d.confidence).fold(0.0, f64::max);
        (GroundTruth::Real, conf, false)
    } else {
        let conf = ai_votes.iter().map(|d| d.confidence).fold(0.0, f64::max);
        (GroundTruth::Ai, conf, false)
    }
}

/// Detect one video with the selected toolkit and OR-ensemble the verdicts.
///
/// Tools whose adapter is unavailable are skipped with the `degraded` flag;
/// provider errors propagate.
pub fn detect(
    client: &LvlmService,
    sample: &VideoSample,
    toolkit: &[&'static EKTool],
    templates: &BTreeMap<String, PromptTemplate>,
    mode: PromptMode,
    video_specific: bool,
    ctx: &DetectCtx,
) -> Result<EnsembleVerdict, InferenceError> {
    let tools_used = if video_specific {
        pick_tools_for_video(client, sample, toolkit, ctx)?
    } else {
        toolkit.to_vec()
    };

    let mut per_tool = Vec::with_capacity(tools_used.len());
    let mut degraded = false;
    for tool in &tools_used {
        let template;
        let template_ref = match mode {
            PromptMode::Structured => {
                template = templates
                    .get(tool.name)
                    .cloned()
                    .unwrap_or_else(|| PromptTemplate::initial(tool.name));
                Some(&template)
            }
            PromptMode::NonStructured => None,
        };
        match detect_with_tool(client, sample, tool, template_ref, mode, ctx) {
            Ok(d) => per_tool.push(d),
            Err(InferenceError::Tool(EKToolError::AdapterUnavailable { tool, reason })) => {
                log::warn!("sample {}: skipping {tool}: {reason}", sample.id);
                degraded = true;
            }
            Err(other) => return Err(other),
        }
    }

    let (final_label, confidence, all_refused) = or_ensemble(&per_tool);
    Ok(EnsembleVerdict {
        sample_id: sample.id.clone(),
        source: sample.source.clone(),
        final_label,
        confidence,
        tools_used: tools_used.iter().map(|t| t.name.to_string()).collect(),
        all_refused,
        degraded,
        per_tool,
    })
}
