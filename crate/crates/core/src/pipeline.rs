//! Stage orchestration shared by the CLI and the Python bindings.
//!
//! Each stage reads its inputs from plain files under the output directory
//! and writes its artifact there, so any stage can be inspected or re-run on
//! its own:
//!
//! - prepare:  `prepared_manifest.jsonl`, `split.json`
//! - select:   `toolkit_candidates.json`, `selection_report.json`
//! - adapt:    `adaptation_<tool>.jsonl`, `best_templates.json`
//! - detect:   `verdicts.jsonl` (`verdicts_run<i>.jsonl` for extra repeats)
//! - evaluate: `eval_report.{json,csv,txt}`

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::adaptation::{self, AdaptCtx, AdaptationError, AdaptationParams, RewriteConstraints};
use crate::config::{PipelineConfig, ProviderKind, ENV_API_KEY};
use crate::dataset::{
    prepare_sample, read_manifest, read_samples, split_manifest, write_samples, DatasetError,
    DatasetSplit, GroundTruth,
};
use crate::ektools::{lookup, EKTool, ToolRunner};
use crate::inference::{detect, DetectCtx, EnsembleVerdict, InferenceError};
use crate::lvlm::http::HttpLvlm;
use crate::lvlm::mock::MockLvlm;
use crate::lvlm::{LvlmError, LvlmService};
use crate::metrics::{evaluate_runs, write_reports, EvalReport, MetricsError};
use crate::prompting::{PromptTemplate, RefusalLexicon};
use crate::selection::{
    propose_toolkit, select_toolkit, SelectionContext, SelectionError, SelectionReport,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("missing artifact {0}; run the earlier stage first")]
    MissingArtifact(PathBuf),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Provider(#[from] LvlmError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Adaptation(#[from] AdaptationError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

impl PipelineError {
    /// Process exit code: 2 config, 3 missing artifact, 4 provider, 1 other.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::MissingArtifact(_) => 3,
            PipelineError::Provider(_) => 4,
            PipelineError::Selection(SelectionError::Lvlm(_)) => 4,
            PipelineError::Adaptation(AdaptationError::Lvlm(_)) => 4,
            PipelineError::Inference(InferenceError::Lvlm(_)) => 4,
            _ => 1,
        }
    }
}

/// Well-known artifact locations under one output directory.
pub struct StagePaths {
    pub out: PathBuf,
}

impl StagePaths {
    pub fn new(out: &Path) -> StagePaths {
        StagePaths { out: out.to_path_buf() }
    }

    pub fn frames_root(&self) -> PathBuf {
        self.out.join("frames")
    }
    pub fn prepared_manifest(&self) -> PathBuf {
        self.out.join("prepared_manifest.jsonl")
    }
    pub fn split(&self) -> PathBuf {
        self.out.join("split.json")
    }
    pub fn toolkit_candidates(&self) -> PathBuf {
        self.out.join("toolkit_candidates.json")
    }
    pub fn selection_report(&self) -> PathBuf {
        self.out.join("selection_report.json")
    }
    pub fn selection_checkpoint(&self) -> PathBuf {
        self.out.join("selection_checkpoint.json")
    }
    pub fn adaptation_ledger(&self, tool: &str) -> PathBuf {
        self.out.join(format!("adaptation_{tool}.jsonl"))
    }
    pub fn adaptation_checkpoint(&self, tool: &str) -> PathBuf {
        self.out.join(format!("adaptation_checkpoint_{tool}.json"))
    }
    pub fn best_templates(&self) -> PathBuf {
        self.out.join("best_templates.json")
    }
    pub fn verdicts(&self, run: usize) -> PathBuf {
        if run == 0 {
            self.out.join("verdicts.jsonl")
        } else {
            self.out.join(format!("verdicts_run{run}.jsonl"))
        }
    }
}

/// Order-preserving bounded-concurrency map. `jobs <= 1` runs inline.
pub fn parallel_map<T: Sync, R: Send>(
    items: &[T],
    jobs: usize,
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut collected: Vec<(usize, R)> = Vec::with_capacity(items.len());
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for _ in 0..jobs.min(items.len()) {
            handles.push(scope.spawn(|| {
                let mut local = Vec::new();
                loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if i >= items.len() {
                        break;
                    }
                    local.push((i, f(&items[i])));
                }
                local
            }));
        }
        for handle in handles {
            collected.extend(handle.join().expect("worker panicked"));
        }
    });
    collected.sort_by_key(|(i, _)| *i);
    collected.into_iter().map(|(_, r)| r).collect()
}

/// Build the LVLM service from config: mock behavior or HTTP provider with
/// credentials from the environment.
pub fn build_service(
    config: &PipelineConfig,
    transcript: Option<&Path>,
) -> Result<LvlmService, PipelineError> {
    let refusals = match &config.refusal_patterns_path {
        Some(path) => RefusalLexicon::from_file(path)?,
        None => RefusalLexicon::default(),
    };
    let backend: Box<dyn crate::lvlm::RawLvlm> = match config.provider.kind {
        ProviderKind::Mock => Box::new(MockLvlm::new(config.mock.clone())?),
        ProviderKind::Http => {
            let api_key = std::env::var(ENV_API_KEY).unwrap_or_default();
            if api_key.is_empty() {
                return Err(PipelineError::Provider(LvlmError::Auth(format!(
                    "{ENV_API_KEY} is not set"
                ))));
            }
            Box::new(HttpLvlm::new(
                &config.provider.endpoint,
                &api_key,
                config.provider.native_structured,
                config.provider.rate_limit_per_min,
            )?)
        }
    };
    let mut service =
        LvlmService::new(backend, refusals).with_max_images(config.provider.max_images);
    if let Some(path) = transcript {
        service = service.with_transcript(path)?;
    }
    Ok(service)
}

fn require(path: PathBuf) -> Result<PathBuf, PipelineError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(PipelineError::MissingArtifact(path))
    }
}

fn read_split(paths: &StagePaths) -> Result<DatasetSplit, PipelineError> {
    let path = require(paths.split())?;
    let text = fs::read_to_string(&path)?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Other(format!("bad split file: {e}")))
}

fn read_selection_report(paths: &StagePaths) -> Result<SelectionReport, PipelineError> {
    let path = require(paths.selection_report())?;
    let text = fs::read_to_string(&path)?;
    serde_json::from_str(&text)
        .map_err(|e| PipelineError::Other(format!("bad selection report: {e}")))
}

fn read_best_templates(paths: &StagePaths) -> Result<BTreeMap<String, PromptTemplate>, PipelineError> {
    let path = paths.best_templates();
    if !path.exists() {
        return Ok(BTreeMap::new());
    }
    let text = fs::read_to_string(&path)?;
    serde_json::from_str(&text)
        .map_err(|e| PipelineError::Other(format!("bad templates file: {e}")))
}

/// Prepare stage: extract/validate frames for every manifest entry and write
/// the prepared manifest plus the deterministic three-way split.
pub fn prepare_stage(
    config: &PipelineConfig,
    manifest_path: &Path,
    paths: &StagePaths,
) -> Result<DatasetSplit, PipelineError> {
    fs::create_dir_all(&paths.out)?;
    let entries = read_manifest(manifest_path)?;
    let frames_root = paths.frames_root();
    let results = parallel_map(&entries, config.jobs, |entry| {
        prepare_sample(entry, &frames_root, config.max_frames, &config.extraction_command)
    });
    let mut samples = Vec::with_capacity(results.len());
    for r in results {
        samples.push(r?);
    }
    write_samples(&paths.prepared_manifest(), &samples)?;

    let split = split_manifest(&samples, config.reference_fraction, config.seed)?;
    fs::write(paths.split(), serde_json::to_string_pretty(&split).expect("split serializes"))?;
    log::info!(
        "prepared {} samples: reference {}, adaptation {}, inference {}",
        samples.len(),
        split.reference.len(),
        split.adaptation.len(),
        split.inference.len()
    );
    Ok(split)
}

/// Select stage: propose candidates, score them over the reference set and
/// persist the selection report.
pub fn select_stage(
    config: &PipelineConfig,
    paths: &StagePaths,
    candidates_override: Option<&[String]>,
    resume: bool,
    transcript: Option<&Path>,
) -> Result<SelectionReport, PipelineError> {
    let split = read_split(paths)?;
    let service = build_service(config, transcript)?;
    let runner = ToolRunner::new(&config.adapters);

    let proposed: Vec<String> = match candidates_override {
        Some(names) => names.to_vec(),
        None => propose_toolkit(&service, &config.provider.model_id)?,
    };
    fs::write(
        paths.toolkit_candidates(),
        serde_json::to_string_pretty(&proposed).expect("candidates serialize"),
    )?;

    // Keep candidates that exist in the registry and are runnable here
    // (builtin, or adapter configured).
    let mut candidates: Vec<&'static EKTool> = Vec::new();
    for name in &proposed {
        match lookup(name) {
            None => log::warn!("proposed tool {name} is not in the registry; skipped"),
            Some(tool) if tool.name == "rgb" => {}
            Some(tool) => {
                if runner.is_available(tool) {
                    candidates.push(tool);
                } else {
                    log::warn!("tool {name} has no adapter configured; skipped");
                }
            }
        }
    }
    if candidates.is_empty() {
        return Err(PipelineError::Other("no runnable candidate tools".into()));
    }

    if !resume && paths.selection_checkpoint().exists() {
        fs::remove_file(paths.selection_checkpoint())?;
    }
    let ctx = SelectionContext {
        runner: &runner,
        window: config.window,
        model_id: config.provider.model_id.clone(),
        alpha: config.alpha,
        macro_f1: config.macro_f1,
        jobs: config.jobs,
        checkpoint_path: Some(paths.selection_checkpoint()),
    };
    let report = select_toolkit(&service, &candidates, &split.reference, &ctx)?;
    fs::write(
        paths.selection_report(),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    log::info!("selected tools: {:?}", report.selected);
    Ok(report)
}

/// Adapt stage: evolve one structured template per selected tool over the
/// adaptation split; write per-tool ledgers and the best-template map.
pub fn adapt_stage(
    config: &PipelineConfig,
    paths: &StagePaths,
    resume: bool,
    transcript: Option<&Path>,
) -> Result<BTreeMap<String, PromptTemplate>, PipelineError> {
    let split = read_split(paths)?;
    let report = read_selection_report(paths)?;
    let service = build_service(config, transcript)?;
    let runner = ToolRunner::new(&config.adapters);

    let params = AdaptationParams {
        batch_size_per_class: config.batch_size_per_class,
        f1_threshold: config.f1_threshold,
        rewrite_budget: config.rewrite_budget,
        attempts_per_slot: config.attempts_per_slot,
    };
    let constraints = RewriteConstraints::default().with_prohibited(&config.prohibited_fields);

    let mut best = BTreeMap::new();
    for name in &report.selected {
        let tool = lookup(name)
            .ok_or_else(|| PipelineError::Other(format!("selected tool {name} unknown")))?;
        let ctx = AdaptCtx {
            runner: &runner,
            window: config.window,
            model_id: config.provider.model_id.clone(),
            params: params.clone(),
            constraints: constraints.clone(),
            jobs: config.jobs,
            ledger_path: Some(paths.adaptation_ledger(name)),
            checkpoint_path: Some(paths.adaptation_checkpoint(name)),
        };
        let resume_state = if resume && paths.adaptation_checkpoint(name).exists() {
            Some(adaptation::load_checkpoint(&paths.adaptation_checkpoint(name))?)
        } else {
            None
        };
        let (template, state) =
            adaptation::run_adaptation(&service, tool, &split.adaptation, &ctx, resume_state)?;
        log::info!(
            "{name}: adaptation done after {} rewrites; final F1 {:.4}",
            state.total_rewrites,
            state.incumbent_f1
        );
        best.insert(name.clone(), template);
    }
    fs::write(
        paths.best_templates(),
        serde_json::to_string_pretty(&best).expect("templates serialize"),
    )?;
    Ok(best)
}

/// Detect stage: run the ensemble over the inference split, once per repeat.
pub fn detect_stage(
    config: &PipelineConfig,
    paths: &StagePaths,
    transcript: Option<&Path>,
) -> Result<Vec<Vec<EnsembleVerdict>>, PipelineError> {
    let split = read_split(paths)?;
    let report = read_selection_report(paths)?;
    let templates = read_best_templates(paths)?;
    let service = build_service(config, transcript)?;
    let runner = ToolRunner::new(&config.adapters);

    let toolkit: Vec<&'static EKTool> = report
        .selected
        .iter()
        .filter_map(|name| lookup(name))
        .collect();
    if toolkit.is_empty() {
        return Err(PipelineError::Other("selection report has no selected tools".into()));
    }

    let ctx = DetectCtx::new(&runner, config.window, &config.provider.model_id);
    let mut runs = Vec::with_capacity(config.repeats);
    for run in 0..config.repeats {
        let results = parallel_map(&split.inference, config.jobs, |sample| {
            detect(
                &service,
                sample,
                &toolkit,
                &templates,
                config.mode,
                config.video_specific,
                &ctx,
            )
        });
        let mut verdicts = Vec::with_capacity(results.len());
        for r in results {
            verdicts.push(r?);
        }
        let mut file = fs::File::create(paths.verdicts(run))?;
        for v in &verdicts {
            writeln!(file, "{}", serde_json::to_string(v).expect("verdict serializes"))?;
        }
        runs.push(verdicts);
    }
    Ok(runs)
}

/// Evaluate stage: read verdicts (all repeats), join with ground truth from
/// the prepared manifest and write the report files.
pub fn evaluate_stage(
    config: &PipelineConfig,
    paths: &StagePaths,
) -> Result<Vec<EvalReport>, PipelineError> {
    let manifest = require(paths.prepared_manifest())?;
    let samples = read_samples(&manifest)?;
    let truths: BTreeMap<String, GroundTruth> =
        samples.iter().map(|s| (s.id.clone(), s.label)).collect();

    let mut runs = Vec::new();
    for run in 0..config.repeats.max(1) {
        let path = require(paths.verdicts(run))?;
        let reader = BufReader::new(fs::File::open(&path)?);
        let mut verdicts = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            verdicts.push(
                serde_json::from_str::<EnsembleVerdict>(&line)
                    .map_err(|e| PipelineError::Other(format!("bad verdict line: {e}")))?,
            );
        }
        runs.push(verdicts);
    }

    let reports = evaluate_runs(&runs, &truths)?;
    write_reports(&paths.out, &reports)?;
    Ok(reports)
}

/// Run every stage in order.
pub fn run_all(
    config: &PipelineConfig,
    manifest_path: &Path,
    paths: &StagePaths,
    transcript: Option<&Path>,
) -> Result<Vec<EvalReport>, PipelineError> {
    prepare_stage(config, manifest_path, paths)?;
    select_stage(config, paths, None, false, transcript)?;
    adapt_stage(config, paths, false, transcript)?;
    detect_stage(config, paths, transcript)?;
    evaluate_stage(config, paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_preserves_order() {
        let items: Vec<usize> = (0..100).collect();
        let seq = parallel_map(&items, 1, |x| x * 2);
        let par = parallel_map(&items, 8, |x| x * 2);
        assert_eq!(seq, par);
        assert_eq!(par[7], 14);
    }

    #[test]
    fn exit_codes_map_by_error_class() {
        let e = PipelineError::MissingArtifact(PathBuf::from("x"));
        assert_eq!(e.exit_code(), 3);
        let e = PipelineError::Provider(LvlmError::RateLimited);
        assert_eq!(e.exit_code(), 4);
        let e = PipelineError::Config(crate::config::ConfigError::Invalid("x".into()));
        assert_eq!(e.exit_code(), 2);
    }
}
