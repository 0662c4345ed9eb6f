//! Explicit-knowledge (EK) tools: derived frame sequences that expose
//! generation artifacts to the detector.
//!
//! Five appearance tools, two motion tools and two geometry tools form the
//! candidate set; `rgb` is the identity pass-through used only as the
//! selection baseline. Model-based tools (segmentation, depth, landmark)
//! delegate to external adapter commands.

pub mod adapter;
pub mod filters;
pub mod flow;

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::dataset::FrameSequence;

pub use adapter::{AdapterSpec, ExternalAdapter};

#[derive(Debug, thiserror::Error)]
pub enum EKToolError {
    #[error("unknown tool {0}")]
    UnknownTool(String),
    #[error("adapter for {tool} unavailable: {reason}")]
    AdapterUnavailable { tool: String, reason: String },
    #[error("optical flow needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("tool {tool}: {source}")]
    Tool {
        tool: String,
        #[source]
        source: Box<EKToolError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ToolCategory {
    Appearance,
    Motion,
    Geometry,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ToolKind {
    BuiltinFilter,
    BuiltinFlow,
    ExternalAdapter,
}

/// A named explicit-knowledge extractor from the canonical registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EKTool {
    pub name: &'static str,
    pub category: ToolCategory,
    pub kind: ToolKind,
}

/// Identity pass-through; the selection baseline, never part of EK*.
pub const RGB: EKTool = EKTool {
    name: "rgb",
    category: ToolCategory::Raw,
    kind: ToolKind::BuiltinFilter,
};

/// The nine candidate tools plus the `rgb` baseline.
pub const REGISTRY: [EKTool; 10] = [
    EKTool { name: "saturation", category: ToolCategory::Appearance, kind: ToolKind::BuiltinFilter },
    EKTool { name: "denoise", category: ToolCategory::Appearance, kind: ToolKind::BuiltinFilter },
    EKTool { name: "sharpen", category: ToolCategory::Appearance, kind: ToolKind::BuiltinFilter },
    EKTool { name: "enhance", category: ToolCategory::Appearance, kind: ToolKind::BuiltinFilter },
    EKTool { name: "segmentation", category: ToolCategory::Appearance, kind: ToolKind::ExternalAdapter },
    EKTool { name: "optical_flow", category: ToolCategory::Motion, kind: ToolKind::BuiltinFlow },
    EKTool { name: "landmark", category: ToolCategory::Motion, kind: ToolKind::ExternalAdapter },
    EKTool { name: "depth", category: ToolCategory::Geometry, kind: ToolKind::ExternalAdapter },
    EKTool { name: "edge", category: ToolCategory::Geometry, kind: ToolKind::BuiltinFilter },
    RGB,
];

/// Candidate tools, i.e. the registry without the `rgb` baseline.
pub fn candidates() -> impl Iterator<Item = &'static EKTool> {
    REGISTRY.iter().filter(|t| t.name != "rgb")
}

pub fn lookup(name: &str) -> Option<&'static EKTool> {
    REGISTRY.iter().find(|t| t.name == name)
}

/// A derived frame sequence with the parameters that produced it.
#[derive(Debug, Clone)]
pub struct EKArtifact {
    pub tool: String,
    pub frames: FrameSequence,
    pub meta: BTreeMap<String, String>,
}

/// Applies tools to frame sequences; owns adapter configuration and a
/// per-(sample, tool) artifact cache for repeated evaluations.
pub struct ToolRunner {
    adapters: BTreeMap<String, ExternalAdapter>,
    cache: Mutex<BTreeMap<(String, String), EKArtifact>>,
}

impl ToolRunner {
    pub fn new(adapter_specs: &BTreeMap<String, AdapterSpec>) -> Self {
        let adapters = adapter_specs
            .iter()
            .map(|(name, spec)| (name.clone(), ExternalAdapter::new(name, spec.clone())))
            .collect();
        ToolRunner {
            adapters,
            cache: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn has_adapter(&self, tool: &str) -> bool {
        self.adapters.contains_key(tool)
    }

    /// A tool is available when builtin or when its adapter is configured.
    pub fn is_available(&self, tool: &EKTool) -> bool {
        tool.kind != ToolKind::ExternalAdapter || self.has_adapter(tool.name)
    }

    pub fn apply(&self, tool: &EKTool, input: &FrameSequence) -> Result<EKArtifact, EKToolError> {
        apply_tool(tool, input, &self.adapters)
    }

    /// Apply with memoization keyed by `(sample_id, tool)`; used where the
    /// same artifact is re-evaluated across templates or repeats.
    pub fn apply_cached(
        &self,
        sample_id: &str,
        tool: &EKTool,
        input: &FrameSequence,
    ) -> Result<EKArtifact, EKToolError> {
        let key = (sample_id.to_string(), tool.name.to_string());
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let artifact = self.apply(tool, input)?;
        self.cache.lock().unwrap().insert(key, artifact.clone());
        Ok(artifact)
    }
}

/// Apply one EK tool to a frame sequence.
///
/// All builtin outputs preserve dimensions; every tool maps n frames to n
/// frames except `optical_flow`, which yields n-1 pairwise flow frames.
pub fn apply_tool(
    tool: &EKTool,
    input: &FrameSequence,
    adapters: &BTreeMap<String, ExternalAdapter>,
) -> Result<EKArtifact, EKToolError> {
    let mut meta = BTreeMap::new();
    let frames = match (tool.kind, tool.name) {
        (_, "rgb") => input.clone(),
        (_, "saturation") => {
            meta.insert("colorspace".into(), "hsv".into());
            map_frames(input, filters::saturation_map)
        }
        (_, "denoise") => {
            meta.insert("kernel".into(), filters::DENOISE_KERNEL.to_string());
            meta.insert("sigma".into(), filters::DENOISE_SIGMA.to_string());
            map_frames(input, filters::denoise)
        }
        (_, "sharpen") => {
            meta.insert("kernel".into(), filters::SHARPEN_KERNEL.to_string());
            meta.insert("sigma".into(), filters::SHARPEN_SIGMA.to_string());
            meta.insert("amount".into(), filters::SHARPEN_AMOUNT.to_string());
            map_frames(input, filters::sharpen)
        }
        (_, "enhance") => {
            meta.insert("stretch".into(), "minmax".into());
            map_frames(input, filters::enhance)
        }
        (_, "edge") => {
            meta.insert("operator".into(), "sobel3x3".into());
            map_frames(input, filters::edge_map)
        }
        (_, "optical_flow") => {
            if input.len() < 2 {
                return Err(EKToolError::TooFewFrames(input.len()));
            }
            meta.insert("lambda".into(), flow::FLOW_LAMBDA.to_string());
            meta.insert("max_iters".into(), flow::FLOW_MAX_ITERS.to_string());
            meta.insert("tol".into(), flow::FLOW_TOL.to_string());
            let frames = input
                .frames()
                .windows(2)
                .map(|pair| {
                    let field = flow::horn_schunck(
                        &pair[0],
                        &pair[1],
                        flow::FLOW_LAMBDA,
                        flow::FLOW_MAX_ITERS,
                        flow::FLOW_TOL,
                    );
                    flow::flow_to_image(&field)
                })
                .collect();
            FrameSequence::new(frames).expect("n-1 flow frames from n >= 2 inputs")
        }
        (ToolKind::ExternalAdapter, name) => {
            let adapter = adapters.get(name).ok_or_else(|| EKToolError::AdapterUnavailable {
                tool: name.to_string(),
                reason: "no adapter command configured".into(),
            })?;
            meta.insert("adapter".into(), "external".into());
            adapter.run(input)?
        }
        _ => return Err(EKToolError::UnknownTool(tool.name.to_string())),
    };
    Ok(EKArtifact {
        tool: tool.name.to_string(),
        frames,
        meta,
    })
}

/// Apply several tools in order; the first failing tool aborts with its name
/// attached.
pub fn apply_toolkit(
    tools: &[&EKTool],
    input: &FrameSequence,
    adapters: &BTreeMap<String, ExternalAdapter>,
) -> Result<Vec<EKArtifact>, EKToolError> {
    tools
        .iter()
        .map(|tool| {
            apply_tool(tool, input, adapters).map_err(|e| match e {
                err @ EKToolError::Tool { .. } => err,
                other => EKToolError::Tool {
                    tool: tool.name.to_string(),
                    source: Box::new(other),
                },
            })
        })
        .collect()
}

fn map_frames(input: &FrameSequence, f: impl Fn(&image::RgbImage) -> image::RgbImage) -> FrameSequence {
    FrameSequence::new(input.frames().iter().map(f).collect())
        .expect("per-frame map preserves count and dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};

    fn seq(frames: Vec<RgbImage>) -> FrameSequence {
        FrameSequence::new(frames).unwrap()
    }

    fn no_adapters() -> BTreeMap<String, ExternalAdapter> {
        BTreeMap::new()
    }

    #[test]
    fn registry_matches_category_table() {
        assert_eq!(REGISTRY.len(), 10);
        assert_eq!(candidates().count(), 9);
        let by_cat = |c: ToolCategory| candidates().filter(|t| t.category == c).count();
        assert_eq!(by_cat(ToolCategory::Appearance), 5);
        assert_eq!(by_cat(ToolCategory::Motion), 2);
        assert_eq!(by_cat(ToolCategory::Geometry), 2);
        for name in ["segmentation", "depth", "landmark"] {
            assert_eq!(lookup(name).unwrap().kind, ToolKind::ExternalAdapter);
        }
        assert_eq!(lookup("rgb").unwrap().category, ToolCategory::Raw);
    }

    #[test]
    fn rgb_is_identity() {
        let input = seq(vec![
            RgbImage::from_pixel(3, 3, Rgb([1, 2, 3])),
            RgbImage::from_pixel(3, 3, Rgb([4, 5, 6])),
        ]);
        let out = apply_tool(lookup("rgb").unwrap(), &input, &no_adapters()).unwrap();
        assert_eq!(out.frames.len(), 2);
        for (a, b) in input.frames().iter().zip(out.frames.frames()) {
            assert_eq!(a.as_raw(), b.as_raw());
        }
    }

    #[test]
    fn frame_count_law() {
        let gray = RgbImage::from_fn(8, 8, |x, y| {
            let v = ((x + y * 3) % 256) as u8;
            Rgb([v, v, v])
        });
        let input = seq(vec![gray.clone(), gray.clone(), gray.clone()]);
        for tool in ["saturation", "denoise", "sharpen", "enhance", "edge", "rgb"] {
            let out = apply_tool(lookup(tool).unwrap(), &input, &no_adapters()).unwrap();
            assert_eq!(out.frames.len(), 3, "{tool}");
            assert_eq!(out.frames.dimensions(), (8, 8), "{tool}");
        }
        let out = apply_tool(lookup("optical_flow").unwrap(), &input, &no_adapters()).unwrap();
        assert_eq!(out.frames.len(), 2);
        assert_eq!(out.frames.dimensions(), (8, 8));
    }

    #[test]
    fn flow_on_single_frame_fails() {
        let input = seq(vec![RgbImage::new(4, 4)]);
        assert!(matches!(
            apply_tool(lookup("optical_flow").unwrap(), &input, &no_adapters()),
            Err(EKToolError::TooFewFrames(1))
        ));
    }

    #[test]
    fn adapter_tools_require_configuration() {
        let input = seq(vec![RgbImage::new(4, 4)]);
        let err = apply_tool(lookup("depth").unwrap(), &input, &no_adapters()).unwrap_err();
        assert!(matches!(err, EKToolError::AdapterUnavailable { .. }));
    }

    #[test]
    fn toolkit_maps_in_order_and_names_failures() {
        let gray = RgbImage::from_pixel(4, 4, Rgb([9, 9, 9]));
        let input = seq(vec![gray.clone(), gray]);
        let tools = [lookup("saturation").unwrap(), lookup("edge").unwrap()];
        let outs = apply_toolkit(&tools, &input, &no_adapters()).unwrap();
        assert_eq!(outs[0].tool, "saturation");
        assert_eq!(outs[1].tool, "edge");
        // Constant gray input: both are zero maps.
        for out in &outs {
            assert!(out.frames.frames().iter().all(|f| f.pixels().all(|p| p.0 == [0, 0, 0])));
        }

        let tools = [lookup("edge").unwrap(), lookup("depth").unwrap()];
        let err = apply_toolkit(&tools, &input, &no_adapters()).unwrap_err();
        match err {
            EKToolError::Tool { tool, .. } => assert_eq!(tool, "depth"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn builtin_tools_are_deterministic() {
        let img = RgbImage::from_fn(16, 16, |x, y| Rgb([(x * 16) as u8, (y * 16) as u8, 128]));
        let input = seq(vec![img.clone(), img]);
        for tool in ["saturation", "denoise", "sharpen", "enhance", "edge", "optical_flow"] {
            let a = apply_tool(lookup(tool).unwrap(), &input, &no_adapters()).unwrap();
            let b = apply_tool(lookup(tool).unwrap(), &input, &no_adapters()).unwrap();
            for (fa, fb) in a.frames.frames().iter().zip(b.frames.frames()) {
                assert_eq!(fa.as_raw(), fb.as_raw(), "{tool}");
            }
        }
    }

    #[test]
    fn runner_caches_by_sample_and_tool() {
        let runner = ToolRunner::new(&BTreeMap::new());
        let img = RgbImage::from_pixel(4, 4, Rgb([10, 20, 30]));
        let input = seq(vec![img.clone(), img]);
        let a = runner.apply_cached("s1", lookup("edge").unwrap(), &input).unwrap();
        let b = runner.apply_cached("s1", lookup("edge").unwrap(), &input).unwrap();
        assert_eq!(a.frames.frames()[0].as_raw(), b.frames.frames()[0].as_raw());
    }
}
