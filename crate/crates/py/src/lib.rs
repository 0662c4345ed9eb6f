//! Python bindings for the detection pipeline primitives.
//!
//! Compiled as the native module `lavid_py`; see `python/smoke_test.py` for
//! build-and-import usage. Exposes the pure computations (scoring, parsing,
//! template validation, EK filters, ensembling) — orchestration stays with
//! the `lavid` CLI.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use lavid_core::adaptation::{self, RewriteConstraints, TemplateChain};
use lavid_core::dataset::{self, FrameSequence, GroundTruth};
use lavid_core::ektools;
use lavid_core::inference;
use lavid_core::lvlm::schema::{FieldKind, SchemaField};
use lavid_core::prompting;
use lavid_core::selection;

fn value_err(msg: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(msg.to_string())
}

fn parse_label(s: &str) -> PyResult<GroundTruth> {
    GroundTruth::parse(s).ok_or_else(|| value_err(format!("unknown label {s:?}; use real/ai")))
}

fn parse_fields(fields: Vec<(String, String)>) -> PyResult<Vec<SchemaField>> {
    fields
        .into_iter()
        .map(|(name, kind)| {
            let kind = FieldKind::parse(&kind)
                .ok_or_else(|| value_err(format!("unknown field kind {kind:?}; use bool/str")))?;
            Ok(SchemaField { name, kind })
        })
        .collect()
}

fn fields_out(fields: &[SchemaField]) -> Vec<(String, String)> {
    fields
        .iter()
        .map(|f| (f.name.clone(), f.kind.as_str().to_string()))
        .collect()
}

/// Confidence-weighted precision/recall/F1 with positive class `real`.
/// Records are `(truth, predicted, confidence)` with labels "real"/"ai".
#[pyfunction]
fn weighted_f1(records: Vec<(String, String, f64)>) -> PyResult<(f64, f64, f64)> {
    let records: Vec<selection::PredictionRecord> = records
        .into_iter()
        .enumerate()
        .map(|(i, (truth, predicted, confidence))| {
            Ok(selection::PredictionRecord {
                sample_id: i.to_string(),
                truth: parse_label(&truth)?,
                predicted: parse_label(&predicted)?,
                confidence,
            })
        })
        .collect::<PyResult<_>>()?;
    selection::weighted_f1(&records).map_err(value_err)
}

/// Blended tool score `alpha * f1 + (1 - alpha) * s_mp_raw / 10`.
#[pyfunction]
fn score_tool(f1_weighted: f64, s_mp_raw: f64, alpha: f64) -> f64 {
    selection::ToolScore::compute("tool", f1_weighted, s_mp_raw, alpha).s_tool
}

/// `(start, len)` of the middle-window frame selection.
#[pyfunction]
fn window_bounds(frame_count: usize, window: usize) -> PyResult<(usize, usize)> {
    if window == 0 {
        return Err(value_err("window must be >= 1"));
    }
    Ok(dataset::window_bounds(frame_count, window))
}

/// Parse a free-form reply into `(verdict, refused)`; verdict `True` means
/// AI-generated.
#[pyfunction]
fn parse_yes_no(text: &str) -> (Option<bool>, bool) {
    let out = prompting::parse_yes_no(text, &prompting::RefusalLexicon::default());
    (out.verdict, out.refused)
}

/// First number in the reply clamped to [0, 10], or None.
#[pyfunction]
fn parse_smp_score(text: &str) -> Option<f64> {
    prompting::parse_smp_score(text).ok()
}

/// Canonical tool names mentioned in free text, ordered by first mention.
#[pyfunction]
fn extract_tool_names(text: &str) -> Vec<String> {
    selection::extract_tool_names(text)
}

/// Validate a template against previously proposed templates. `fields` and
/// each entry of `previous` are `(name, kind)` lists; returns
/// `(valid, violations)`.
#[pyfunction]
#[pyo3(signature = (fields, previous, seed=None))]
fn validate_template(
    fields: Vec<(String, String)>,
    previous: Vec<Vec<String>>,
    seed: Option<Vec<String>>,
) -> PyResult<(bool, Vec<String>)> {
    let fields = parse_fields(fields)?;
    let chain = TemplateChain { seed, proposals: previous };
    let result = adaptation::validate_template(&fields, &chain, &RewriteConstraints::default());
    Ok((
        result.valid,
        result.violations.iter().map(|v| v.to_string()).collect(),
    ))
}

/// Change distance between two field-name lists (renames count once).
#[pyfunction]
fn changed_fields(a: Vec<String>, b: Vec<String>) -> usize {
    adaptation::changed_fields(&a, &b)
}

/// The seed template for a tool as a `(name, kind)` list.
#[pyfunction]
fn initial_template(tool: &str) -> Vec<(String, String)> {
    fields_out(prompting::PromptTemplate::initial(tool).schema.fields())
}

/// Render the detection prompt. Returns `(system, user, schema_fields)`;
/// `schema_fields` is None in non-structured mode.
#[pyfunction]
#[pyo3(signature = (tool, structured, raw_frames=8, ek_frames=8))]
fn render_detection_prompt(
    tool: &str,
    structured: bool,
    raw_frames: usize,
    ek_frames: usize,
) -> PyResult<(String, String, Option<Vec<(String, String)>>)> {
    let tool = ektools::lookup(tool).ok_or_else(|| value_err(format!("unknown tool {tool:?}")))?;
    let template = prompting::PromptTemplate::initial(tool.name);
    let (mode, template_ref) = if structured {
        (prompting::PromptMode::Structured, Some(&template))
    } else {
        (prompting::PromptMode::NonStructured, None)
    };
    let p = prompting::render_detection_prompt(tool, mode, template_ref, raw_frames, ek_frames);
    Ok((
        p.system_text,
        p.user_text,
        p.schema.map(|s| fields_out(s.fields())),
    ))
}

/// Self-assessment prompt for a tool given serialized few-shot results.
#[pyfunction]
fn render_smp_prompt(tool: &str, fewshot_results: &str) -> String {
    prompting::render_smp_prompt(tool, fewshot_results)
}

/// The toolkit-preparation prompt.
#[pyfunction]
fn render_preparation_prompt() -> String {
    prompting::render_preparation_prompt().to_string()
}

/// Template-rewrite prompt; `history` is a list of `(field_names, f1)`.
#[pyfunction]
fn render_rewrite_prompt(tool: &str, history: Vec<(Vec<String>, f64)>) -> String {
    let entries: Vec<adaptation::HistoryEntry> = history
        .into_iter()
        .enumerate()
        .map(|(i, (fields, f1))| adaptation::HistoryEntry {
            slot: 0,
            attempt: i,
            fields,
            f1,
            accepted: false,
            timestamp: i as u64,
        })
        .collect();
    adaptation::render_rewrite_prompt(tool, &entries)
}

/// Apply a builtin EK tool to PNG-encoded frames; returns PNG-encoded
/// derived frames (`optical_flow` yields one fewer).
#[pyfunction]
fn apply_tool(tool: &str, frames: Vec<Vec<u8>>) -> PyResult<Vec<Vec<u8>>> {
    let tool = ektools::lookup(tool).ok_or_else(|| value_err(format!("unknown tool {tool:?}")))?;
    let decoded = frames
        .iter()
        .map(|bytes| dataset::decode_png(bytes).map_err(value_err))
        .collect::<PyResult<Vec<_>>>()?;
    let sequence = FrameSequence::new(decoded).map_err(value_err)?;
    let artifact =
        ektools::apply_tool(tool, &sequence, &Default::default()).map_err(value_err)?;
    Ok(artifact.frames.to_png_bytes())
}

/// OR-ensemble a list of per-tool votes (`True`/`False`/`None` for
/// refusal or parse miss). Returns `(label, all_refused)`.
#[pyfunction]
fn or_ensemble(votes: Vec<Option<bool>>) -> (String, bool) {
    let detections: Vec<inference::Detection> = votes
        .into_iter()
        .enumerate()
        .map(|(i, v)| inference::Detection {
            sample_id: "s".into(),
            tool: format!("t{i}"),
            is_ai_generated: v,
            confidence: 1.0,
            field_analyses: Default::default(),
            refused: v.is_none(),
            raw_text: String::new(),
        })
        .collect();
    let (label, _, all_refused) = inference::or_ensemble(&detections);
    (label.as_str().to_string(), all_refused)
}

/// The canonical tool registry as `(name, category, kind)` rows.
#[pyfunction]
fn registry() -> Vec<(String, String, String)> {
    ektools::REGISTRY
        .iter()
        .map(|t| {
            (
                t.name.to_string(),
                format!("{:?}", t.category),
                format!("{:?}", t.kind),
            )
        })
        .collect()
}

#[pymodule]
fn lavid_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(weighted_f1, m)?)?;
    m.add_function(wrap_pyfunction!(score_tool, m)?)?;
    m.add_function(wrap_pyfunction!(window_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(parse_yes_no, m)?)?;
    m.add_function(wrap_pyfunction!(parse_smp_score, m)?)?;
    m.add_function(wrap_pyfunction!(extract_tool_names, m)?)?;
    m.add_function(wrap_pyfunction!(validate_template, m)?)?;
    m.add_function(wrap_pyfunction!(changed_fields, m)?)?;
    m.add_function(wrap_pyfunction!(initial_template, m)?)?;
    m.add_function(wrap_pyfunction!(render_detection_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(render_smp_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(render_preparation_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(render_rewrite_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(apply_tool, m)?)?;
    m.add_function(wrap_pyfunction!(or_ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(registry, m)?)?;
    Ok(())
}
