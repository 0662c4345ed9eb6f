//! Online adaptation of structured templates: slot-based batches, LVLM-driven
//! rewriting under hard constraints, F1-gated acceptance, and a persistent
//! history ledger.
//!
//! Each slot draws a fresh batch (per-class) from the adaptation stream and
//! re-evaluates the incumbent template on all samples seen so far. A slot
//! whose cumulative F1 already meets the threshold performs zero rewrites;
//! otherwise up to `attempts_per_slot` propose/evaluate cycles run, accepting
//! a proposal only on strict cumulative-F1 improvement, all bounded by the
//! global rewrite budget.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{GroundTruth, VideoSample};
use crate::ektools::{EKTool, ToolRunner};
use crate::inference::{detect_with_tool, DetectCtx, InferenceError};
use crate::lvlm::schema::{parse_class_fields, FieldKind, SchemaField, StructuredSchema, VERDICT_FIELD};
use crate::lvlm::{meta_keys, purposes, LvlmError, LvlmRequest, LvlmService};
use crate::pipeline::parallel_map;
use crate::prompting::{PromptMode, PromptTemplate};
use crate::selection::{weighted_f1, PredictionRecord};

#[derive(Debug, thiserror::Error)]
pub enum AdaptationError {
    #[error("adaptation set needs >= {needed} samples of class {label}, got {got}")]
    InsufficientData { label: GroundTruth, needed: usize, got: usize },
    #[error("rewrite proposal failed to parse after {0} attempts")]
    RewriteParseFailed(usize),
    #[error("rewrite budget exhausted")]
    BudgetExhausted,
    #[error(transparent)]
    Lvlm(#[from] LvlmError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("ledger: {0}")]
    Ledger(String),
}

/// Hard constraints every rewritten template must satisfy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewriteConstraints {
    pub max_fields: usize,
    pub required_bool_field: String,
    pub min_changed_fields: usize,
    pub max_changed_fields: usize,
    /// Case-insensitive stems; any field name containing one is rejected.
    pub prohibited_stems: BTreeSet<String>,
}

impl Default for RewriteConstraints {
    fn default() -> Self {
        RewriteConstraints {
            max_fields: 5,
            required_bool_field: VERDICT_FIELD.to_string(),
            min_changed_fields: 1,
            max_changed_fields: 2,
            prohibited_stems: ["frame_rate", "resolution", "format", "duration"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

impl RewriteConstraints {
    pub fn with_prohibited(mut self, extra: &[String]) -> Self {
        self.prohibited_stems.extend(extra.iter().map(|s| s.to_ascii_lowercase()));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Violation {
    MissingVerdictField,
    NonStringField(String),
    TooManyFields { count: usize, max: usize },
    ProhibitedName { field: String, stem: String },
    DuplicateFieldName(String),
    InvalidIdentifier(String),
    TooFewChanges { changed: usize, min: usize },
    TooManyChanges { changed: usize, max: usize },
    DuplicateOfPrevious { index: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::MissingVerdictField => write!(f, "missing required bool verdict field"),
            Violation::NonStringField(n) => write!(f, "field {n} must be str"),
            Violation::TooManyFields { count, max } => write!(f, "{count} fields exceeds cap {max}"),
            Violation::ProhibitedName { field, stem } => {
                write!(f, "field {field} matches prohibited stem {stem}")
            }
            Violation::DuplicateFieldName(n) => write!(f, "duplicate field {n}"),
            Violation::InvalidIdentifier(n) => write!(f, "invalid identifier {n:?}"),
            Violation::TooFewChanges { changed, min } => {
                write!(f, "{changed} changed fields is below the minimum {min}")
            }
            Violation::TooManyChanges { changed, max } => {
                write!(f, "{changed} changed fields exceeds the maximum {max}")
            }
            Violation::DuplicateOfPrevious { index } => {
                write!(f, "identical to previous template #{index}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TemplateValidation {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

/// The schemas a rewrite is judged against: the hand-written seed template
/// plus every LVLM proposal so far (accepted or not).
///
/// The change-distance rule anchors on the most recent proposal; the first
/// proposal off the seed may restructure broadly (the max-change cap is
/// waived against the seed) but must still differ from it.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TemplateChain {
    pub seed: Option<Vec<String>>,
    pub proposals: Vec<Vec<String>>,
}

impl TemplateChain {
    pub fn from_seed(seed: &PromptTemplate) -> TemplateChain {
        TemplateChain { seed: Some(seed.schema.field_names()), proposals: Vec::new() }
    }

    pub fn from_proposals(proposals: Vec<Vec<String>>) -> TemplateChain {
        TemplateChain { seed: None, proposals }
    }

    fn all(&self) -> impl Iterator<Item = &Vec<String>> {
        self.seed.iter().chain(self.proposals.iter())
    }

    fn is_empty(&self) -> bool {
        self.seed.is_none() && self.proposals.is_empty()
    }
}

/// Symmetric-difference change distance between two field-name sets:
/// one rename counts as one change, a bare add or remove also counts as one.
pub fn changed_fields(a: &[String], b: &[String]) -> usize {
    let sa: BTreeSet<&String> = a.iter().collect();
    let sb: BTreeSet<&String> = b.iter().collect();
    let sym = sa.symmetric_difference(&sb).count();
    sym.div_ceil(2)
}

/// Validate a proposed field list against the constraints and the chain of
/// previously seen templates. Total: every violation is reported.
pub fn validate_template(
    fields: &[SchemaField],
    previous: &TemplateChain,
    constraints: &RewriteConstraints,
) -> TemplateValidation {
    let mut violations = Vec::new();
    let names: Vec<String> = fields.iter().map(|f| f.name.clone()).collect();

    let verdict_ok = fields
        .iter()
        .any(|f| f.name == constraints.required_bool_field && f.kind == FieldKind::Bool);
    if !verdict_ok {
        violations.push(Violation::MissingVerdictField);
    }
    for f in fields {
        if f.name != constraints.required_bool_field && f.kind != FieldKind::Str {
            violations.push(Violation::NonStringField(f.name.clone()));
        }
        if !crate::lvlm::schema::is_identifier(&f.name) {
            violations.push(Violation::InvalidIdentifier(f.name.clone()));
        }
        let lower = f.name.to_ascii_lowercase();
        for stem in &constraints.prohibited_stems {
            if lower.contains(stem.as_str()) {
                violations.push(Violation::ProhibitedName {
                    field: f.name.clone(),
                    stem: stem.clone(),
                });
            }
        }
    }
    if fields.len() > constraints.max_fields {
        violations.push(Violation::TooManyFields { count: fields.len(), max: constraints.max_fields });
    }
    let mut seen = BTreeSet::new();
    for n in &names {
        if !seen.insert(n.clone()) {
            violations.push(Violation::DuplicateFieldName(n.clone()));
        }
    }

    if !previous.is_empty() {
        let (anchor, anchor_is_seed) = match previous.proposals.last() {
            Some(p) => (p, false),
            None => (previous.seed.as_ref().expect("non-empty chain"), true),
        };
        let changed = changed_fields(&names, anchor);
        if changed < constraints.min_changed_fields {
            violations.push(Violation::TooFewChanges {
                changed,
                min: constraints.min_changed_fields,
            });
        }
        if changed > constraints.max_changed_fields && !anchor_is_seed {
            violations.push(Violation::TooManyChanges {
                changed,
                max: constraints.max_changed_fields,
            });
        }
        let name_set: BTreeSet<&String> = names.iter().collect();
        for (index, prev) in previous.all().enumerate() {
            let prev_set: BTreeSet<&String> = prev.iter().collect();
            if name_set == prev_set {
                violations.push(Violation::DuplicateOfPrevious { index });
            }
        }
    }

    TemplateValidation { valid: violations.is_empty(), violations }
}

/// One evaluated template: every template the loop ever scores lands here,
/// accepted or not. `timestamp` is a logical step counter so ledgers replay
/// byte-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub slot: usize,
    pub attempt: usize,
    pub fields: Vec<String>,
    pub f1: f64,
    pub accepted: bool,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptationParams {
    pub batch_size_per_class: usize,
    pub f1_threshold: f64,
    pub rewrite_budget: usize,
    pub attempts_per_slot: usize,
}

impl Default for AdaptationParams {
    fn default() -> Self {
        AdaptationParams {
            batch_size_per_class: 25,
            f1_threshold: 0.8,
            rewrite_budget: 20,
            attempts_per_slot: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptationState {
    pub tool: String,
    pub current_template: PromptTemplate,
    pub incumbent_f1: f64,
    pub history: Vec<HistoryEntry>,
    pub chain: TemplateChain,
    pub slot_index: usize,
    pub total_rewrites: usize,
    pub proposal_counter: usize,
    pub params: AdaptationParams,
}

impl AdaptationState {
    pub fn new(tool: &str, params: AdaptationParams) -> AdaptationState {
        let current_template = PromptTemplate::initial(tool);
        let chain = TemplateChain::from_seed(&current_template);
        AdaptationState {
            tool: tool.to_string(),
            current_template,
            incumbent_f1: 0.0,
            history: Vec::new(),
            chain,
            slot_index: 0,
            total_rewrites: 0,
            proposal_counter: 0,
            params,
        }
    }

    fn next_timestamp(&self) -> u64 {
        self.history.len() as u64
    }
}

/// Render the rewrite system prompt with the tool name substituted and the
/// evaluated history serialized most recent last.
pub fn render_rewrite_prompt(tool_name: &str, history: &[HistoryEntry]) -> String {
    let history_str = if history.is_empty() {
        "(none)".to_string()
    } else {
        history
            .iter()
            .map(|h| format!("fields: [{}] | F1: {:.4}", h.fields.join(", "), h.f1))
            .collect::<Vec<_>>()
            .join("\n")
    };
    format!(
        "As a Python developer, your task is to create a new Pydantic class for analyzing video \
data using the tool {tool_name}.\n\n\
Requirements:\n\
- The class must include the field 'is_ai_generated: bool'.\n\
- You may add any other fields you deem necessary to analyze video data with {tool_name}.\n\
- All additional fields must be of type 'str'.\n\
- Fields should represent analysis perspectives specific to the capabilities of {tool_name}.\n\n\
Analysis Guidelines:\n\
- Consider the aspects of videos that {tool_name} excels at analyzing.\n\
- Reflect on patterns or anomalies that {tool_name} might reveal.\n\
- Emphasize high-level analysis perspectives that leverage the strengths of {tool_name}.\n\n\
Constraints:\n\
- You may modify only one or two fields from previous class definitions at a time.\n\
- Focus on high-level abstractions specific to the purpose of {tool_name}.\n\n\
Prohibited Fields:\n\
- Technical parameters (e.g., frame_rate, resolution, format, duration).\n\
- Algorithm or implementation specifics.\n\n\
Additional Notes:\n\
- The total number of fields must not exceed five (5).\n\
- There must be at least one field that differs from previous class definitions.\n\n\
Previous outputs: {history_str}"
    )
}

const PARSE_RETRIES: usize = 3;

/// Ask the LVLM for a rewritten template; invalid or unparseable proposals
/// are re-requested up to three times.
pub fn propose_rewrite(
    client: &LvlmService,
    tool: &EKTool,
    state: &mut AdaptationState,
    constraints: &RewriteConstraints,
    model_id: &str,
) -> Result<StructuredSchema, AdaptationError> {
    if state.total_rewrites >= state.params.rewrite_budget {
        return Err(AdaptationError::BudgetExhausted);
    }
    for _ in 0..PARSE_RETRIES {
        let mut request = LvlmRequest::new(model_id);
        request.user_text = render_rewrite_prompt(tool.name, &state.history);
        request.meta.insert(meta_keys::PURPOSE.into(), purposes::REWRITE.into());
        request.meta.insert(meta_keys::TOOL.into(), tool.name.into());
        request
            .meta
            .insert(meta_keys::PROPOSAL_INDEX.into(), state.proposal_counter.to_string());
        request.meta.insert(
            "current_fields".into(),
            state.current_template.schema.field_names().join(","),
        );
        state.proposal_counter += 1;

        let response = client.complete(&request)?;
        let fields = parse_class_fields(&response.raw_text);
        if fields.is_empty() {
            log::debug!("{}: rewrite reply had no parseable fields", tool.name);
            continue;
        }
        let validation = validate_template(&fields, &state.chain, constraints);
        if !validation.valid {
            log::debug!("{}: rewrite rejected: {:?}", tool.name, validation.violations);
            continue;
        }
        match StructuredSchema::new(fields) {
            Ok(schema) => {
                state.chain.proposals.push(schema.field_names());
                return Ok(schema);
            }
            Err(e) => {
                log::debug!("{}: rewrite schema invalid: {e}", tool.name);
                continue;
            }
        }
    }
    Err(AdaptationError::RewriteParseFailed(PARSE_RETRIES))
}

pub struct AdaptCtx<'a> {
    pub runner: &'a ToolRunner,
    pub window: usize,
    pub model_id: String,
    pub params: AdaptationParams,
    pub constraints: RewriteConstraints,
    pub jobs: usize,
    /// Ledger of evaluated templates, one JSON object per line.
    pub ledger_path: Option<PathBuf>,
    /// State snapshot between slots; enables resuming.
    pub checkpoint_path: Option<PathBuf>,
}

/// Evaluate a template on a sample set: plain (unweighted) F1 with positive
/// class real; refusals and parse misses score as incorrect.
fn evaluate_template(
    client: &LvlmService,
    tool: &EKTool,
    template: &PromptTemplate,
    samples: &[&VideoSample],
    ctx: &AdaptCtx,
) -> Result<f64, AdaptationError> {
    let detect_ctx = DetectCtx {
        runner: ctx.runner,
        window: ctx.window,
        model_id: ctx.model_id.clone(),
        temperature: 0.0,
        purpose: purposes::DETECT,
    };
    let results = parallel_map(samples, ctx.jobs, |sample| {
        detect_with_tool(client, sample, tool, Some(template), PromptMode::Structured, &detect_ctx)
    });
    let mut records = Vec::with_capacity(results.len());
    for (sample, result) in samples.iter().zip(results) {
        let detection = result?;
        let predicted = match detection.voted() {
            Some(true) => GroundTruth::Ai,
            Some(false) => GroundTruth::Real,
            None => sample.label.flipped(),
        };
        records.push(PredictionRecord {
            sample_id: sample.id.clone(),
            truth: sample.label,
            predicted,
            confidence: 1.0,
        });
    }
    let (_, _, f1) = weighted_f1(&records).map_err(|_| AdaptationError::InsufficientData {
        label: GroundTruth::Real,
        needed: 1,
        got: 0,
    })?;
    Ok(f1)
}

/// Run the slot loop for one tool over the adaptation stream.
///
/// Returns the final incumbent template and the full state (history ledger
/// included). `resume` continues a previously checkpointed run.
pub fn run_adaptation(
    client: &LvlmService,
    tool: &EKTool,
    adaptation_set: &[VideoSample],
    ctx: &AdaptCtx,
    resume: Option<AdaptationState>,
) -> Result<(PromptTemplate, AdaptationState), AdaptationError> {
    let params = &ctx.params;
    let reals: Vec<&VideoSample> =
        adaptation_set.iter().filter(|s| s.label == GroundTruth::Real).collect();
    let ais: Vec<&VideoSample> =
        adaptation_set.iter().filter(|s| s.label == GroundTruth::Ai).collect();
    for (label, got) in [(GroundTruth::Real, reals.len()), (GroundTruth::Ai, ais.len())] {
        if got < params.batch_size_per_class {
            return Err(AdaptationError::InsufficientData {
                label,
                needed: params.batch_size_per_class,
                got,
            });
        }
    }

    let per_class = reals.len().min(ais.len());
    let mut slots = per_class / params.batch_size_per_class;
    if params.attempts_per_slot > 0 {
        slots = slots.min(params.rewrite_budget / params.attempts_per_slot);
    }

    let mut state = resume.unwrap_or_else(|| AdaptationState::new(tool.name, params.clone()));
    let mut ledger = Ledger::open(ctx.ledger_path.as_deref(), &state)?;

    while state.slot_index < slots {
        let slot = state.slot_index;
        // Streaming draw: each batch is seen exactly once; evaluation is
        // cumulative over everything seen so far this run.
        let upto = (slot + 1) * params.batch_size_per_class;
        let mut cumulative: Vec<&VideoSample> = Vec::with_capacity(2 * upto);
        cumulative.extend(&reals[..upto]);
        cumulative.extend(&ais[..upto]);

        let f1 = evaluate_template(client, tool, &state.current_template, &cumulative, ctx)?;
        state.incumbent_f1 = f1;
        push_entry(&mut state, &mut ledger, slot, 0, f1, false)?;

        if f1 >= params.f1_threshold {
            log::info!("{}: slot {slot}: incumbent performs well (F1 {f1:.4}); no rewrites", tool.name);
            state.slot_index += 1;
            checkpoint(ctx.checkpoint_path.as_deref(), &state)?;
            continue;
        }

        for attempt in 1..=params.attempts_per_slot {
            if state.total_rewrites >= params.rewrite_budget {
                break;
            }
            state.total_rewrites += 1;
            let schema = match propose_rewrite(client, tool, &mut state, &ctx.constraints, &ctx.model_id)
            {
                Ok(s) => s,
                Err(AdaptationError::RewriteParseFailed(n)) => {
                    log::warn!("{}: slot {slot} attempt {attempt}: parse failed {n} times", tool.name);
                    continue;
                }
                Err(other) => return Err(other),
            };
            let candidate = PromptTemplate::rewritten(schema, state.current_template.version + 1);
            let f1 = evaluate_template(client, tool, &candidate, &cumulative, ctx)?;
            let accepted = f1 > state.incumbent_f1;
            let fields = candidate.schema.field_names();
            if accepted {
                state.current_template = candidate;
                state.incumbent_f1 = f1;
            }
            push_entry_fields(&mut state, &mut ledger, slot, attempt, fields, f1, accepted)?;
            if state.incumbent_f1 >= params.f1_threshold {
                break;
            }
        }

        state.slot_index += 1;
        checkpoint(ctx.checkpoint_path.as_deref(), &state)?;
    }

    Ok((state.current_template.clone(), state))
}

fn push_entry(
    state: &mut AdaptationState,
    ledger: &mut Ledger,
    slot: usize,
    attempt: usize,
    f1: f64,
    accepted: bool,
) -> Result<(), AdaptationError> {
    let fields = state.current_template.schema.field_names();
    push_entry_fields(state, ledger, slot, attempt, fields, f1, accepted)
}

fn push_entry_fields(
    state: &mut AdaptationState,
    ledger: &mut Ledger,
    slot: usize,
    attempt: usize,
    fields: Vec<String>,
    f1: f64,
    accepted: bool,
) -> Result<(), AdaptationError> {
    let entry = HistoryEntry { slot, attempt, fields, f1, accepted, timestamp: state.next_timestamp() };
    ledger.append(&entry)?;
    state.history.push(entry);
    Ok(())
}

struct Ledger {
    file: Option<fs::File>,
}

impl Ledger {
    /// On a fresh run the ledger is truncated; on resume it is extended and
    /// already holds the checkpointed entries.
    fn open(path: Option<&Path>, state: &AdaptationState) -> Result<Ledger, AdaptationError> {
        let Some(path) = path else { return Ok(Ledger { file: None }) };
        let mut file = fs::OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(state.history.is_empty())
            .append(!state.history.is_empty())
            .open(path)
            .map_err(|e| AdaptationError::Ledger(e.to_string()))?;
        if state.history.is_empty() {
            file.flush().ok();
        }
        Ok(Ledger { file: Some(file) })
    }

    fn append(&mut self, entry: &HistoryEntry) -> Result<(), AdaptationError> {
        let Some(file) = &mut self.file else { return Ok(()) };
        let line = serde_json::to_string(entry).map_err(|e| AdaptationError::Ledger(e.to_string()))?;
        writeln!(file, "{line}").map_err(|e| AdaptationError::Ledger(e.to_string()))
    }
}

fn checkpoint(path: Option<&Path>, state: &AdaptationState) -> Result<(), AdaptationError> {
    let Some(path) = path else { return Ok(()) };
    let text =
        serde_json::to_string_pretty(state).map_err(|e| AdaptationError::Ledger(e.to_string()))?;
    fs::write(path, text).map_err(|e| AdaptationError::Ledger(e.to_string()))
}

pub fn load_checkpoint(path: &Path) -> Result<AdaptationState, AdaptationError> {
    let text = fs::read_to_string(path).map_err(|e| AdaptationError::Ledger(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| AdaptationError::Ledger(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(names: &[&str]) -> Vec<SchemaField> {
        names
            .iter()
            .map(|n| {
                if *n == VERDICT_FIELD {
                    SchemaField::bool_field(n)
                } else {
                    SchemaField::str_field(n)
                }
            })
            .collect()
    }

    fn names(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    fn initial_fields() -> Vec<SchemaField> {
        f(&[VERDICT_FIELD, "raw_frame_analysis", "edge_analysis", "explanation"])
    }

    #[test]
    fn change_distance_counts_renames_as_one() {
        let a = names(&["is_ai_generated", "x", "y"]);
        let swap = names(&["is_ai_generated", "x", "z"]);
        assert_eq!(changed_fields(&a, &swap), 1);
        let add = names(&["is_ai_generated", "x", "y", "z"]);
        assert_eq!(changed_fields(&a, &add), 1);
        let two = names(&["is_ai_generated", "p", "q"]);
        assert_eq!(changed_fields(&a, &two), 2);
        assert_eq!(changed_fields(&a, &a), 0);
    }

    #[test]
    fn initial_template_validates_against_empty_chain() {
        let v = validate_template(
            &initial_fields(),
            &TemplateChain::default(),
            &RewriteConstraints::default(),
        );
        assert!(v.valid, "{:?}", v.violations);
    }

    #[test]
    fn structural_violations_reported() {
        let c = RewriteConstraints::default();
        let chain = TemplateChain::default();

        let six = f(&[VERDICT_FIELD, "a", "b", "c", "d", "e"]);
        let v = validate_template(&six, &chain, &c);
        assert!(v.violations.contains(&Violation::TooManyFields { count: 6, max: 5 }));

        let missing = f(&["a", "b"]);
        assert!(validate_template(&missing, &chain, &c)
            .violations
            .contains(&Violation::MissingVerdictField));

        let prohibited = f(&[VERDICT_FIELD, "video_frame_rate_check"]);
        let v = validate_template(&prohibited, &chain, &c);
        assert!(v
            .violations
            .iter()
            .any(|x| matches!(x, Violation::ProhibitedName { stem, .. } if stem == "frame_rate")));

        let mut bad_kind = f(&[VERDICT_FIELD]);
        bad_kind.push(SchemaField::bool_field("flag"));
        assert!(validate_template(&bad_kind, &chain, &c)
            .violations
            .contains(&Violation::NonStringField("flag".into())));
    }

    #[test]
    fn first_proposal_off_seed_may_restructure_but_not_echo() {
        let c = RewriteConstraints::default();
        let seed_chain = TemplateChain {
            seed: Some(names(&[VERDICT_FIELD, "raw_frame_analysis", "edge_analysis", "explanation"])),
            proposals: vec![],
        };
        // Broad slot-1 style rewrite: 4 changed fields vs the seed; allowed.
        let slot1 = f(&[
            VERDICT_FIELD,
            "boundary_clarity",
            "texture_consistency",
            "object_delineation",
            "spatial_anomaly_detection",
        ]);
        let v = validate_template(&slot1, &seed_chain, &c);
        assert!(v.valid, "{:?}", v.violations);

        // Echoing the seed is still rejected.
        let echo = initial_fields();
        let v = validate_template(&echo, &seed_chain, &c);
        assert!(!v.valid);
        assert!(v.violations.contains(&Violation::TooFewChanges { changed: 0, min: 1 }));
        assert!(v.violations.contains(&Violation::DuplicateOfPrevious { index: 0 }));
    }

    #[test]
    fn proposal_to_proposal_distance_is_capped() {
        let c = RewriteConstraints::default();
        let slot1 = names(&[
            VERDICT_FIELD,
            "boundary_clarity",
            "texture_consistency",
            "object_delineation",
            "spatial_anomaly_detection",
        ]);
        let chain = TemplateChain {
            seed: Some(names(&[VERDICT_FIELD, "raw_frame_analysis", "edge_analysis", "explanation"])),
            proposals: vec![slot1],
        };
        // Slot-2 style single swap: valid, exactly 1 changed field.
        let slot2 = f(&[
            VERDICT_FIELD,
            "boundary_clarity",
            "texture_consistency",
            "object_delineation",
            "temporal_edge_coherence",
        ]);
        let v = validate_template(&slot2, &chain, &c);
        assert!(v.valid, "{:?}", v.violations);

        // A wild jump vs the latest proposal is rejected.
        let wild = f(&[VERDICT_FIELD, "a1", "b2", "c3", "d4"]);
        let v = validate_template(&wild, &chain, &c);
        assert!(v.violations.iter().any(|x| matches!(x, Violation::TooManyChanges { .. })));
    }

    #[test]
    fn duplicate_of_any_previous_is_rejected() {
        let c = RewriteConstraints::default();
        let p1 = names(&[VERDICT_FIELD, "x", "y"]);
        let p2 = names(&[VERDICT_FIELD, "x", "z"]);
        let chain = TemplateChain { seed: None, proposals: vec![p1.clone(), p2] };
        // Re-proposing p1: 1 change vs p2 (fine) but identical to history.
        let v = validate_template(&f(&[VERDICT_FIELD, "x", "y"]), &chain, &c);
        assert!(!v.valid);
        assert!(v.violations.contains(&Violation::DuplicateOfPrevious { index: 0 }));
    }

    #[test]
    fn rewrite_prompt_has_all_sections_and_history() {
        let history = vec![
            HistoryEntry {
                slot: 0,
                attempt: 0,
                fields: names(&[VERDICT_FIELD, "raw_frame_analysis"]),
                f1: 0.8494,
                accepted: false,
                timestamp: 0,
            },
            HistoryEntry {
                slot: 0,
                attempt: 1,
                fields: names(&[VERDICT_FIELD, "boundary_clarity"]),
                f1: 0.9362,
                accepted: true,
                timestamp: 1,
            },
        ];
        let p = render_rewrite_prompt("edge", &history);
        for section in [
            "Requirements:",
            "Analysis Guidelines:",
            "Constraints:",
            "Prohibited Fields:",
            "Additional Notes:",
        ] {
            assert!(p.contains(section), "missing {section}");
        }
        assert!(p.contains("the tool edge"));
        assert!(p.contains("F1: 0.8494"));
        assert!(p.contains("F1: 0.9362"));
        let empty = render_rewrite_prompt("edge", &[]);
        assert!(empty.contains("Previous outputs: (none)"));
    }
}
