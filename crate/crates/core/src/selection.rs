//! Model-specific EK selection: toolkit proposal, confidence-weighted F1 on
//! the reference set, subjective self-assessment scoring, and thresholded
//! selection of the optimal tool set against the raw-RGB baseline.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{GroundTruth, VideoSample};
use crate::ektools::{lookup, EKTool, ToolRunner, RGB};
use crate::inference::{detect_with_tool, DetectCtx, InferenceError};
use crate::lvlm::schema::{SchemaField, StructuredSchema, VERDICT_FIELD};
use crate::lvlm::{meta_keys, purposes, LvlmError, LvlmRequest, LvlmService};
use crate::pipeline::parallel_map;
use crate::prompting::{
    parse_smp_score, render_preparation_prompt, render_smp_prompt, PromptMode, PromptTemplate,
    Provenance,
};

#[derive(Debug, thiserror::Error)]
pub enum SelectionError {
    #[error("no prediction records")]
    EmptyRecords,
    #[error(transparent)]
    Lvlm(#[from] LvlmError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// One reference-set prediction for one (sample, tool) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub truth: GroundTruth,
    pub predicted: GroundTruth,
    pub confidence: f64,
}

impl PredictionRecord {
    pub fn correct(&self) -> bool {
        self.truth == self.predicted
    }
}

/// Confidence-weighted precision/recall/F1 with `positive` as the positive
/// class. Weighted counts: each record contributes its confidence instead of
/// 1. All 0/0 ratios evaluate to 0.
pub fn weighted_f1_for(
    records: &[PredictionRecord],
    positive: GroundTruth,
) -> Result<(f64, f64, f64), SelectionError> {
    if records.is_empty() {
        return Err(SelectionError::EmptyRecords);
    }
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    for r in records {
        match (r.truth == positive, r.predicted == positive) {
            (true, true) => tp += r.confidence,
            (false, true) => fp += r.confidence,
            (true, false) => fn_ += r.confidence,
            (false, false) => {}
        }
    }
    let ratio = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f1 = ratio(2.0 * p * r, p + r);
    Ok((p, r, f1))
}

/// Confidence-weighted F1 with the positive class fixed to `real`, matching
/// the weighted true-positive definition used for tool scoring.
pub fn weighted_f1(records: &[PredictionRecord]) -> Result<(f64, f64, f64), SelectionError> {
    weighted_f1_for(records, GroundTruth::Real)
}

/// Macro-averaged variant for sensitivity studies: mean of the two
/// per-class F1 scores.
pub fn weighted_f1_macro(records: &[PredictionRecord]) -> Result<f64, SelectionError> {
    let (_, _, f_real) = weighted_f1_for(records, GroundTruth::Real)?;
    let (_, _, f_ai) = weighted_f1_for(records, GroundTruth::Ai)?;
    Ok(0.5 * (f_real + f_ai))
}

/// Per-tool score: `s_tool = alpha * f1_weighted + (1 - alpha) * s_mp`,
/// with the raw 0..=10 self-assessment normalized to `s_mp = s_mp_raw / 10`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolScore {
    pub tool: String,
    pub f1_weighted: f64,
    pub s_mp_raw: f64,
    pub s_mp: f64,
    pub s_tool: f64,
    pub alpha: f64,
}

impl ToolScore {
    pub fn compute(tool: &str, f1_weighted: f64, s_mp_raw: f64, alpha: f64) -> ToolScore {
        assert!((0.0..=1.0).contains(&alpha), "alpha outside [0,1]");
        // Evaluated on the 0..=10 scale and divided once, so decimal-grid
        // inputs (f1=0.6, s_mp_raw=7, alpha=0.5 -> 0.65) come out exact.
        let s_tool = (alpha * (f1_weighted * 10.0) + (1.0 - alpha) * s_mp_raw) / 10.0;
        ToolScore {
            tool: tool.to_string(),
            f1_weighted,
            s_mp_raw,
            s_mp: s_mp_raw / 10.0,
            s_tool,
            alpha,
        }
    }
}

/// Outcome of selection: per-tool scores and the thresholded optimal set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionReport {
    pub alpha: f64,
    pub baseline: ToolScore,
    pub scores: Vec<ToolScore>,
    pub selected: Vec<String>,
}

impl SelectionReport {
    /// Recompute the selected set: every tool whose score meets or exceeds
    /// the baseline (ties included).
    pub fn threshold(baseline: &ToolScore, scores: &[ToolScore]) -> Vec<String> {
        scores
            .iter()
            .filter(|s| s.s_tool >= baseline.s_tool)
            .map(|s| s.tool.clone())
            .collect()
    }
}

/// Ask the LVLM for candidate tools and intersect the reply with the
/// canonical registry. Matching is alias-based over the response text;
/// candidates come back in order of first mention.
pub fn propose_toolkit(client: &LvlmService, model_id: &str) -> Result<Vec<String>, SelectionError> {
    let mut request = LvlmRequest::new(model_id);
    request.user_text = render_preparation_prompt().to_string();
    request.meta.insert(meta_keys::PURPOSE.into(), purposes::PREPARE.into());
    let response = client.complete(&request)?;
    let candidates = extract_tool_names(&response.raw_text);
    if candidates.is_empty() {
        log::warn!("toolkit proposal named no known tools; candidate list is empty");
    }
    Ok(candidates)
}

/// Map free text onto canonical tool names, ordered by first mention.
pub fn extract_tool_names(text: &str) -> Vec<String> {
    const ALIASES: &[(&str, &str)] = &[
        ("optical flow", "optical_flow"),
        ("optical_flow", "optical_flow"),
        ("sharpen", "sharpen"),
        ("depth", "depth"),
        ("saturation", "saturation"),
        ("denois", "denoise"),
        ("segmentation", "segmentation"),
        ("segment anything", "segmentation"),
        ("landmark", "landmark"),
        ("edge", "edge"),
        ("enhance", "enhance"),
        ("contrast stretch", "enhance"),
    ];
    let lower = text.to_ascii_lowercase();
    let mut found: Vec<(usize, &str)> = Vec::new();
    for (alias, canonical) in ALIASES {
        if let Some(pos) = lower.find(alias) {
            if !found.iter().any(|(_, c)| c == canonical) {
                found.push((pos, canonical));
            } else if let Some(entry) = found.iter_mut().find(|(_, c)| c == canonical) {
                entry.0 = entry.0.min(pos);
            }
        }
    }
    found.sort();
    found
        .into_iter()
        .filter(|(_, name)| lookup(name).is_some())
        .map(|(_, name)| name.to_string())
        .collect()
}

/// Self-assessment score for a tool given serialized few-shot results;
/// an unparseable reply scores 0.
pub fn score_smp(
    client: &LvlmService,
    tool_name: &str,
    fewshot_results: &str,
    model_id: &str,
) -> Result<f64, SelectionError> {
    let mut request = LvlmRequest::new(model_id);
    request.user_text = render_smp_prompt(tool_name, fewshot_results);
    request.meta.insert(meta_keys::PURPOSE.into(), purposes::SMP.into());
    request.meta.insert(meta_keys::TOOL.into(), tool_name.into());
    let response = client.complete(&request)?;
    Ok(parse_smp_score(&response.raw_text).unwrap_or(0.0))
}

/// Schema used for reference-set evaluation: the verdict plus an explicit
/// confidence field, so F1 weighting has something to weight.
pub fn selection_template() -> PromptTemplate {
    let schema = StructuredSchema::new(vec![
        SchemaField::bool_field(VERDICT_FIELD),
        SchemaField::str_field("confidence_0_to_1"),
        SchemaField::str_field("explanation"),
    ])
    .expect("selection schema is valid");
    PromptTemplate { schema, version: 0, provenance: Provenance::Initial }
}

pub struct SelectionContext<'a> {
    pub runner: &'a ToolRunner,
    pub window: usize,
    pub model_id: String,
    pub alpha: f64,
    pub macro_f1: bool,
    pub jobs: usize,
    /// Per-tool progress is persisted here; an interrupted run resumes by
    /// skipping completed tools.
    pub checkpoint_path: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct SelectionCheckpoint {
    done: BTreeMap<String, ToolScore>,
}

/// Score every candidate (and the rgb baseline) over the reference set and
/// select `EK* = { t : s_tool(t) >= s_baseline }`.
pub fn select_toolkit(
    client: &LvlmService,
    candidates: &[&'static EKTool],
    reference: &[VideoSample],
    ctx: &SelectionContext,
) -> Result<SelectionReport, SelectionError> {
    assert!(!candidates.is_empty(), "candidate set must be non-empty");
    let mut reference: Vec<&VideoSample> = reference.iter().collect();
    reference.sort_by(|a, b| a.id.cmp(&b.id));

    let mut checkpoint = load_checkpoint(ctx.checkpoint_path.as_deref())?;

    let mut order: Vec<&'static EKTool> = vec![&RGB];
    order.extend(candidates.iter().copied());

    let mut scored: BTreeMap<String, ToolScore> = BTreeMap::new();
    for tool in &order {
        if let Some(done) = checkpoint.done.get(tool.name) {
            scored.insert(tool.name.to_string(), done.clone());
            continue;
        }
        let score = score_one_tool(client, tool, &reference, ctx)?;
        checkpoint.done.insert(tool.name.to_string(), score.clone());
        save_checkpoint(ctx.checkpoint_path.as_deref(), &checkpoint)?;
        scored.insert(tool.name.to_string(), score);
    }

    let baseline = scored.remove("rgb").expect("baseline scored first");
    let scores: Vec<ToolScore> = candidates
        .iter()
        .map(|t| scored[t.name].clone())
        .collect();
    let selected = SelectionReport::threshold(&baseline, &scores);
    Ok(SelectionReport { alpha: ctx.alpha, baseline, scores, selected })
}

fn score_one_tool(
    client: &LvlmService,
    tool: &'static EKTool,
    reference: &[&VideoSample],
    ctx: &SelectionContext,
) -> Result<ToolScore, SelectionError> {
    let template = selection_template();
    let detect_ctx = DetectCtx {
        runner: ctx.runner,
        window: ctx.window,
        model_id: ctx.model_id.clone(),
        temperature: 0.0,
        purpose: purposes::SELECT,
    };

    let results = parallel_map(reference, ctx.jobs, |sample| {
        detect_with_tool(client, sample, tool, Some(&template), PromptMode::Structured, &detect_ctx)
            .map(|detection| to_record(sample, &detection))
    });
    let mut records = Vec::with_capacity(results.len());
    for r in results {
        records.push(r?);
    }

    let f1 = if ctx.macro_f1 {
        weighted_f1_macro(&records)?
    } else {
        weighted_f1(&records)?.2
    };
    let correct = records.iter().filter(|r| r.correct()).count();
    let fewshot = format!(
        "correct: {correct}, incorrect: {} over {} reference samples",
        records.len() - correct,
        records.len()
    );
    let s_mp_raw = score_smp(client, tool.name, &fewshot, &ctx.model_id)?;
    Ok(ToolScore::compute(tool.name, f1, s_mp_raw, ctx.alpha))
}

/// Refusals and parse misses score as an incorrect prediction with
/// confidence 0, so they hurt neither weighted count but count as misses in
/// the few-shot summary.
fn to_record(sample: &VideoSample, detection: &crate::inference::Detection) -> PredictionRecord {
    match detection.voted() {
        Some(is_ai) => PredictionRecord {
            sample_id: sample.id.clone(),
            truth: sample.label,
            predicted: if is_ai { GroundTruth::Ai } else { GroundTruth::Real },
            confidence: detection.confidence,
        },
        None => PredictionRecord {
            sample_id: sample.id.clone(),
            truth: sample.label,
            predicted: sample.label.flipped(),
            confidence: 0.0,
        },
    }
}

fn load_checkpoint(path: Option<&Path>) -> Result<SelectionCheckpoint, SelectionError> {
    let Some(path) = path else {
        return Ok(SelectionCheckpoint::default());
    };
    if !path.exists() {
        return Ok(SelectionCheckpoint::default());
    }
    let text = fs::read_to_string(path).map_err(|e| SelectionError::Checkpoint(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| SelectionError::Checkpoint(e.to_string()))
}

fn save_checkpoint(path: Option<&Path>, checkpoint: &SelectionCheckpoint) -> Result<(), SelectionError> {
    let Some(path) = path else { return Ok(()) };
    let text = serde_json::to_string_pretty(checkpoint)
        .map_err(|e| SelectionError::Checkpoint(e.to_string()))?;
    fs::write(path, text).map_err(|e| SelectionError::Checkpoint(e.to_string()))
}
