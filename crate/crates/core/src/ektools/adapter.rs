//! Subprocess protocol for model-based tools (segmentation, depth, landmark).
//!
//! A configured adapter command is invoked as
//! `<cmd> --tool <name> --in <frames_dir> --out <out_dir>` and must emit one
//! output image per input frame with identical filenames. Nonzero exit or
//! missing outputs surface as `AdapterUnavailable`.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::dataset::{decode_png, frame_file_name, FrameSequence};

use super::EKToolError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterSpec {
    /// Program plus fixed leading arguments, split on whitespace.
    pub command: String,
    /// Adapters are serialized per command unless declared safe.
    #[serde(default)]
    pub concurrency_safe: bool,
}

pub struct ExternalAdapter {
    tool: String,
    spec: AdapterSpec,
    // Guards non-concurrency-safe commands.
    gate: Mutex<()>,
}

impl ExternalAdapter {
    pub fn new(tool: &str, spec: AdapterSpec) -> Self {
        ExternalAdapter {
            tool: tool.to_string(),
            spec,
            gate: Mutex::new(()),
        }
    }

    pub fn run(&self, input: &FrameSequence) -> Result<FrameSequence, EKToolError> {
        let _serial;
        if !self.spec.concurrency_safe {
            _serial = self.gate.lock().unwrap_or_else(|e| e.into_inner());
        }

        let work = tempdir(&self.tool)?;
        let in_dir = work.join("in");
        let out_dir = work.join("out");
        fs::create_dir_all(&in_dir).map_err(|e| self.unavailable(e.to_string()))?;
        fs::create_dir_all(&out_dir).map_err(|e| self.unavailable(e.to_string()))?;
        for (i, frame) in input.frames().iter().enumerate() {
            frame
                .save(in_dir.join(frame_file_name(i)))
                .map_err(|e| self.unavailable(e.to_string()))?;
        }

        let status = self.invoke(&in_dir, &out_dir);
        let result = status.and_then(|()| self.collect(&out_dir, input));
        let _ = fs::remove_dir_all(&work);
        result
    }

    fn invoke(&self, in_dir: &Path, out_dir: &Path) -> Result<(), EKToolError> {
        let mut parts = self.spec.command.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| self.unavailable("empty adapter command".into()))?;
        let output = Command::new(program)
            .args(parts)
            .arg("--tool")
            .arg(&self.tool)
            .arg("--in")
            .arg(in_dir)
            .arg("--out")
            .arg(out_dir)
            .output()
            .map_err(|e| self.unavailable(format!("failed to spawn {program}: {e}")))?;
        if !output.status.success() {
            return Err(self.unavailable(format!(
                "exit {:?}: {}",
                output.status.code(),
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        Ok(())
    }

    fn collect(&self, out_dir: &Path, input: &FrameSequence) -> Result<FrameSequence, EKToolError> {
        let mut frames = Vec::with_capacity(input.len());
        for i in 0..input.len() {
            let path = out_dir.join(frame_file_name(i));
            let bytes = fs::read(&path)
                .map_err(|_| self.unavailable(format!("missing output {}", path.display())))?;
            frames.push(
                decode_png(&bytes)
                    .map_err(|e| self.unavailable(format!("bad output {}: {e}", path.display())))?,
            );
        }
        FrameSequence::new(frames).map_err(|e| self.unavailable(e))
    }

    fn unavailable(&self, reason: String) -> EKToolError {
        EKToolError::AdapterUnavailable {
            tool: self.tool.clone(),
            reason,
        }
    }
}

fn tempdir(tool: &str) -> Result<std::path::PathBuf, EKToolError> {
    let base = std::env::temp_dir().join(format!(
        "lavid-adapter-{tool}-{}-{}",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0)
    ));
    fs::create_dir_all(&base).map_err(|e| EKToolError::AdapterUnavailable {
        tool: tool.to_string(),
        reason: e.to_string(),
    })?;
    Ok(base)
}
