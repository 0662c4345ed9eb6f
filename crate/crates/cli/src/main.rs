//! `lavid` — batch CLI for the EK-enhanced video detection pipeline.
//!
//! Stages write plain artifacts under the output directory so each can be
//! re-run or inspected independently:
//!
//! ```text
//! lavid prepare  --config lavid.toml --manifest videos.jsonl --out out/
//! lavid select   --config lavid.toml --out out/
//! lavid adapt    --config lavid.toml --out out/
//! lavid detect   --config lavid.toml --out out/
//! lavid evaluate --config lavid.toml --out out/
//! lavid run-all  --config lavid.toml --manifest videos.jsonl --out out/
//! ```
//!
//! Exit codes: 0 ok, 2 config error, 3 missing stage artifact, 4 provider
//! failure, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lavid_core::config::PipelineConfig;
use lavid_core::metrics::render_report_text;
use lavid_core::pipeline::{self, PipelineError, StagePaths};

#[derive(Parser)]
#[command(name = "lavid", version, about = "EK-enhanced AI-generated video detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Pipeline configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for stage artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Bound on concurrent LVLM calls.
    #[arg(long)]
    jobs: Option<usize>,
    /// Use the deterministic mock provider regardless of config.
    #[arg(long)]
    provider: Option<String>,
    /// Write a line-delimited JSON request/response transcript.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Extract frames and compute the reference/adaptation/inference split.
    Prepare {
        #[command(flatten)]
        common: Common,
        /// Manifest: one JSON object per line.
        #[arg(long)]
        manifest: PathBuf,
        /// Cap on consecutive frames kept per video.
        #[arg(long)]
        max_frames: Option<usize>,
        /// Detection window size (middle frames).
        #[arg(long)]
        window: Option<usize>,
    },
    /// Propose candidate tools and score them over the reference set.
    Select {
        #[command(flatten)]
        common: Common,
        /// Comma-separated candidate tool names, overriding the proposal.
        #[arg(long, value_delimiter = ',')]
        candidates: Option<Vec<String>>,
        /// Resume from the selection checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Adapt structured templates online for every selected tool.
    Adapt {
        #[command(flatten)]
        common: Common,
        /// Resume from per-tool adaptation checkpoints.
        #[arg(long)]
        resume: bool,
    },
    /// Run ensemble detection over the inference split.
    Detect {
        #[command(flatten)]
        common: Common,
        /// Number of repeated runs to average at evaluation time.
        #[arg(long)]
        repeats: Option<usize>,
        /// Prompt mode: structured or non_structured.
        #[arg(long)]
        mode: Option<String>,
        /// Let the model pick a per-video tool subset first.
        #[arg(long)]
        video_specific: bool,
    },
    /// Aggregate verdicts into accuracy/F1 reports.
    Evaluate {
        #[command(flatten)]
        common: Common,
    },
    /// Run every stage in order.
    RunAll {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        max_frames: Option<usize>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        video_specific: bool,
    },
    /// Print the default configuration as TOML.
    DefaultConfig,
}

fn load_config(common: &Common) -> Result<PipelineConfig, PipelineError> {
    let mut config = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => {
            let mut c = PipelineConfig::default();
            c.apply_env_overrides();
            c
        }
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(jobs) = common.jobs {
        config.jobs = jobs;
    }
    if let Some(provider) = &common.provider {
        config.provider.kind = match provider.as_str() {
            "mock" => lavid_core::config::ProviderKind::Mock,
            "http" => lavid_core::config::ProviderKind::Http,
            other => {
                return Err(PipelineError::Config(lavid_core::config::ConfigError::Invalid(
                    format!("unknown provider {other}"),
                )))
            }
        };
    }
    config.validate()?;
    Ok(config)
}

fn parse_mode(mode: &str) -> Result<lavid_core::prompting::PromptMode, PipelineError> {
    match mode {
        "structured" => Ok(lavid_core::prompting::PromptMode::Structured),
        "non_structured" | "non-structured" => Ok(lavid_core::prompting::PromptMode::NonStructured),
        other => Err(PipelineError::Config(lavid_core::config::ConfigError::Invalid(format!(
            "unknown mode {other}"
        )))),
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Prepare { common, manifest, max_frames, window } => {
            let mut config = load_config(&common)?;
            if let Some(m) = max_frames {
                config.max_frames = m;
            }
            if let Some(w) = window {
                config.window = w;
            }
            let paths = StagePaths::new(&common.out);
            let split = pipeline::prepare_stage(&config, &manifest, &paths)?;
            println!(
                "prepared: reference={} adaptation={} inference={}",
                split.reference.len(),
                split.adaptation.len(),
                split.inference.len()
            );
            Ok(())
        }
        Command::Select { common, candidates, resume } => {
            let config = load_config(&common)?;
            let paths = StagePaths::new(&common.out);
            let report = pipeline::select_stage(
                &config,
                &paths,
                candidates.as_deref(),
                resume,
                common.transcript.as_deref(),
            )?;
            println!(
                "baseline s_tool={:.4}; selected: {}",
                report.baseline.s_tool,
                report.selected.join(", ")
            );
            Ok(())
        }
        Command::Adapt { common, resume } => {
            let config = load_config(&common)?;
            let paths = StagePaths::new(&common.out);
            let best = pipeline::adapt_stage(&config, &paths, resume, common.transcript.as_deref())?;
            for (tool, template) in &best {
                println!("{tool}: v{} [{}]", template.version, template.schema.field_names().join(", "));
            }
            Ok(())
        }
        Command::Detect { common, repeats, mode, video_specific } => {
            let mut config = load_config(&common)?;
            if let Some(r) = repeats {
                config.repeats = r;
            }
            if let Some(m) = &mode {
                config.mode = parse_mode(m)?;
            }
            if video_specific {
                config.video_specific = true;
            }
            let paths = StagePaths::new(&common.out);
            let runs = pipeline::detect_stage(&config, &paths, common.transcript.as_deref())?;
            println!("detected {} videos x {} runs", runs.first().map_or(0, |r| r.len()), runs.len());
            Ok(())
        }
        Command::Evaluate { common } => {
            let config = load_config(&common)?;
            let paths = StagePaths::new(&common.out);
            let reports = pipeline::evaluate_stage(&config, &paths)?;
            print!("{}", render_report_text(&reports));
            Ok(())
        }
        Command::RunAll { common, manifest, max_frames, window, repeats, mode, video_specific } => {
            let mut config = load_config(&common)?;
            if let Some(m) = max_frames {
                config.max_frames = m;
            }
            if let Some(w) = window {
                config.window = w;
            }
            if let Some(r) = repeats {
                config.repeats = r;
            }
            if let Some(m) = &mode {
                config.mode = parse_mode(m)?;
            }
            if video_specific {
                config.video_specific = true;
            }
            let paths = StagePaths::new(&common.out);
            let reports = pipeline::run_all(&config, &manifest, &paths, common.transcript.as_deref())?;
            print!("{}", render_report_text(&reports));
            Ok(())
        }
        Command::DefaultConfig => {
            print!("{}", PipelineConfig::default().to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
