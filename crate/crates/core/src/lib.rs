//! Training-free detection of AI-generated (diffusion-generated) video.
//!
//! The pipeline extracts explicit-knowledge (EK) features from video frames
//! (saturation maps, optical flow, edge maps, ...), scores and selects the EK
//! tools that actually help a given vision LVLM, adapts a structured response
//! template online against batched feedback, and OR-ensembles the per-tool
//! verdicts into one real/fake prediction per video.
//!
//! Modules follow the stage order of the pipeline:
//!
//! - [`dataset`]: manifests, frame extraction/windowing, reference/adaptation/
//!   inference splits
//! - [`ektools`]: the EK extractors (builtin filters, dense flow, external
//!   adapters)
//! - [`lvlm`]: provider-agnostic chat client plus the deterministic mock used
//!   for verification
//! - [`prompting`]: all prompt text and free-text parsing
//! - [`selection`]: confidence-weighted F1 scoring and toolkit selection
//! - [`adaptation`]: online self-rewriting of structured templates
//! - [`inference`]: per-video detection and OR-ensembling
//! - [`metrics`]: evaluation reports
//! - [`config`] / [`pipeline`]: configuration and stage orchestration shared
//!   by the CLI and the Python bindings

pub mod adaptation;
pub mod config;
pub mod dataset;
pub mod ektools;
pub mod fixtures;
pub mod inference;
pub mod lvlm;
pub mod metrics;
pub mod pipeline;
pub mod prompting;
pub mod selection;

pub use dataset::{DatasetSplit, FrameSequence, GroundTruth, VideoSample};
pub use ektools::{EKArtifact, EKTool, ToolRunner};
pub use lvlm::{LvlmRequest, LvlmResponse, LvlmService, StructuredSchema};
