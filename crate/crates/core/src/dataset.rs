//! Video manifests, frame preparation and deterministic dataset splits.
//!
//! A manifest is line-delimited JSON, one video per line, with fields
//! `{id, source, label, video_path | frames_dir}`. Frame extraction shells
//! out to a configurable ffmpeg-compatible command that emits
//! `frame_%05d.png` files (0-based); already-extracted `frames_dir` entries
//! are used in place.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("frame extraction command failed for {video}: {reason}")]
    ExtractionFailed { video: PathBuf, reason: String },
    #[error("no frames produced from {0}; not a decodable video")]
    NotAVideo(PathBuf),
    #[error("label {0} has no samples; stratified split impossible")]
    EmptyClass(GroundTruth),
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("duplicate sample id {0} in manifest")]
    DuplicateId(String),
    #[error("manifest line {line}: {reason}")]
    BadManifestLine { line: usize, reason: String },
    #[error("sample {id}: frames_dir {dir} has no frames")]
    NoFrames { id: String, dir: PathBuf },
    #[error("frame {0}: {1}")]
    BadFrame(PathBuf, String),
    #[error("reference fraction {0} outside (0, 1)")]
    BadFraction(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ground-truth label of a video. Serializes to `"real"` / `"ai"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundTruth {
    Real,
    Ai,
}

impl GroundTruth {
    pub fn as_str(&self) -> &'static str {
        match self {
            GroundTruth::Real => "real",
            GroundTruth::Ai => "ai",
        }
    }

    pub fn parse(s: &str) -> Option<GroundTruth> {
        match s.trim().to_ascii_lowercase().as_str() {
            "real" => Some(GroundTruth::Real),
            "ai" | "fake" => Some(GroundTruth::Ai),
            _ => None,
        }
    }

    pub fn flipped(&self) -> GroundTruth {
        match self {
            GroundTruth::Real => GroundTruth::Ai,
            GroundTruth::Ai => GroundTruth::Real,
        }
    }
}

impl fmt::Display for GroundTruth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A labeled video with prepared frames on disk; the unit of detection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoSample {
    pub id: String,
    /// Generator or collection name, e.g. `"kling"`, `"panda70m"`.
    pub source: String,
    pub label: GroundTruth,
    pub frames_dir: PathBuf,
    pub frame_count: usize,
}

/// One manifest line. Exactly one of `video_path` / `frames_dir` must be set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub source: String,
    pub label: GroundTruth,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames_dir: Option<PathBuf>,
}

/// Ordered RGB frames of one video; all frames share the same dimensions.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    frames: Vec<RgbImage>,
}

impl FrameSequence {
    pub fn new(frames: Vec<RgbImage>) -> Result<Self, String> {
        if frames.is_empty() {
            return Err("frame sequence must be non-empty".into());
        }
        let (w, h) = frames[0].dimensions();
        if let Some(i) = frames.iter().position(|f| f.dimensions() != (w, h)) {
            return Err(format!(
                "frame {i} is {:?}, expected {:?}",
                frames[i].dimensions(),
                (w, h)
            ));
        }
        Ok(FrameSequence { frames })
    }

    pub fn frames(&self) -> &[RgbImage] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dimensions(&self) -> (u32, u32) {
        self.frames[0].dimensions()
    }

    /// Encode every frame as PNG bytes, in order.
    pub fn to_png_bytes(&self) -> Vec<Vec<u8>> {
        self.frames.iter().map(encode_png).collect()
    }
}

/// Encode one RGB image as PNG bytes.
pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut buf = std::io::Cursor::new(Vec::new());
    image::DynamicImage::ImageRgb8(img.clone())
        .write_to(&mut buf, image::ImageFormat::Png)
        .expect("in-memory PNG encoding cannot fail");
    buf.into_inner()
}

/// Decode PNG (or any supported format) bytes into an RGB image.
pub fn decode_png(bytes: &[u8]) -> Result<RgbImage, String> {
    image::load_from_memory(bytes)
        .map(|d| d.to_rgb8())
        .map_err(|e| e.to_string())
}

/// Reference (selection), adaptation and inference partitions of a manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub reference: Vec<VideoSample>,
    pub adaptation: Vec<VideoSample>,
    pub inference: Vec<VideoSample>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn all(&self) -> impl Iterator<Item = &VideoSample> {
        self.reference
            .iter()
            .chain(self.adaptation.iter())
            .chain(self.inference.iter())
    }
}

pub const FRAME_FILE_PREFIX: &str = "frame_";

/// Name of the `i`-th frame file: `frame_%05d.png`, 0-based.
pub fn frame_file_name(index: usize) -> String {
    format!("{FRAME_FILE_PREFIX}{index:05}.png")
}

/// List frame files in a directory, sorted by name.
pub fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension().map(|e| e == "png").unwrap_or(false)
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .map(|n| n.starts_with(FRAME_FILE_PREFIX))
                    .unwrap_or(false)
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Extract up to `max_frames` consecutive frames from the start of a video
/// into `out_dir` by running the configured external command.
///
/// `command_template` is split on whitespace; the placeholders `{input}`,
/// `{out_dir}` and `{max_frames}` are substituted per argument. The command
/// must emit `frame_%05d.png` files into `out_dir`.
pub fn prepare_frames(
    video_path: &Path,
    out_dir: &Path,
    max_frames: usize,
    command_template: &str,
) -> Result<usize, DatasetError> {
    assert!(max_frames >= 1, "max_frames must be >= 1");
    fs::create_dir_all(out_dir)?;

    let mut parts = command_template.split_whitespace().map(|p| {
        p.replace("{input}", &video_path.to_string_lossy())
            .replace("{out_dir}", &out_dir.to_string_lossy())
            .replace("{max_frames}", &max_frames.to_string())
    });
    let program = parts.next().ok_or_else(|| DatasetError::ExtractionFailed {
        video: video_path.to_path_buf(),
        reason: "empty extraction command".into(),
    })?;
    let output = Command::new(&program)
        .args(parts)
        .output()
        .map_err(|e| DatasetError::ExtractionFailed {
            video: video_path.to_path_buf(),
            reason: format!("failed to spawn {program}: {e}"),
        })?;
    if !output.status.success() {
        return Err(DatasetError::ExtractionFailed {
            video: video_path.to_path_buf(),
            reason: format!(
                "exit {:?}: {}",
                output.status.code(),
                String::from_utf8_lossy(&output.stderr).trim()
            ),
        });
    }

    let mut files = list_frame_files(out_dir)?;
    if files.is_empty() {
        return Err(DatasetError::NotAVideo(video_path.to_path_buf()));
    }
    // Extraction tools are asked to cap output via {max_frames}; trim any
    // extras so the on-disk count matches the contract.
    if files.len() > max_frames {
        for extra in files.split_off(max_frames) {
            fs::remove_file(extra)?;
        }
    }
    Ok(files.len())
}

/// Index window for the "middle `window` frames" policy.
///
/// Returns `(start, len)` with `start = floor((n - w) / 2)`; videos shorter
/// than the window yield all their frames.
pub fn window_bounds(frame_count: usize, window: usize) -> (usize, usize) {
    assert!(window >= 1, "window must be >= 1");
    if frame_count <= window {
        (0, frame_count)
    } else {
        ((frame_count - window) / 2, window)
    }
}

/// Load the middle `window` frames of a prepared sample from disk.
pub fn select_window(sample: &VideoSample, window: usize) -> Result<FrameSequence, DatasetError> {
    let files = list_frame_files(&sample.frames_dir)?;
    if files.is_empty() {
        return Err(DatasetError::NoFrames {
            id: sample.id.clone(),
            dir: sample.frames_dir.clone(),
        });
    }
    // frame_count may cap the usable prefix below what is on disk.
    let usable = files.len().min(sample.frame_count.max(1));
    let (start, len) = window_bounds(usable, window);
    let mut frames = Vec::with_capacity(len);
    for path in &files[start..start + len] {
        let bytes = fs::read(path)?;
        let img = decode_png(&bytes).map_err(|e| DatasetError::BadFrame(path.clone(), e))?;
        frames.push(img);
    }
    FrameSequence::new(frames).map_err(|e| DatasetError::BadFrame(sample.frames_dir.clone(), e))
}

/// Read a line-delimited JSON manifest.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, DatasetError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut entries = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry =
            serde_json::from_str(&line).map_err(|e| DatasetError::BadManifestLine {
                line: i + 1,
                reason: e.to_string(),
            })?;
        if entry.video_path.is_none() && entry.frames_dir.is_none() {
            return Err(DatasetError::BadManifestLine {
                line: i + 1,
                reason: "entry needs video_path or frames_dir".into(),
            });
        }
        if !seen.insert(entry.id.clone()) {
            return Err(DatasetError::DuplicateId(entry.id));
        }
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(DatasetError::EmptyManifest);
    }
    Ok(entries)
}

/// Write prepared samples as a line-delimited JSON manifest.
pub fn write_samples(path: &Path, samples: &[VideoSample]) -> Result<(), DatasetError> {
    let mut f = fs::File::create(path)?;
    for s in samples {
        serde_json::to_writer(&mut f, s).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::Other, e.to_string())
        })?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

/// Read prepared samples back from a line-delimited JSON manifest.
pub fn read_samples(path: &Path) -> Result<Vec<VideoSample>, DatasetError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: VideoSample =
            serde_json::from_str(&line).map_err(|e| DatasetError::BadManifestLine {
                line: i + 1,
                reason: e.to_string(),
            })?;
        samples.push(s);
    }
    Ok(samples)
}

/// Turn a manifest entry into a prepared sample, extracting frames if needed.
pub fn prepare_sample(
    entry: &ManifestEntry,
    frames_root: &Path,
    max_frames: usize,
    command_template: &str,
) -> Result<VideoSample, DatasetError> {
    let (frames_dir, frame_count) = match (&entry.frames_dir, &entry.video_path) {
        (Some(dir), _) => {
            let files = list_frame_files(dir)?;
            if files.is_empty() {
                return Err(DatasetError::NoFrames {
                    id: entry.id.clone(),
                    dir: dir.clone(),
                });
            }
            (dir.clone(), files.len().min(max_frames))
        }
        (None, Some(video)) => {
            let dir = frames_root.join(&entry.id);
            let count = prepare_frames(video, &dir, max_frames, command_template)?;
            (dir, count)
        }
        (None, None) => unreachable!("validated at manifest read"),
    };
    Ok(VideoSample {
        id: entry.id.clone(),
        source: entry.source.clone(),
        label: entry.label,
        frames_dir,
        frame_count,
    })
}

/// Stratified, seeded three-way split of a prepared manifest.
///
/// Strata are `(label, source)` pairs. The per-label reference quota is
/// `floor(fraction * label_count)`; within a label, per-stratum floors are
/// topped up on the largest strata until the label quota is met. The
/// remainder splits adaptation/inference 50/50 (odd sample to inference).
pub fn split_manifest(
    manifest: &[VideoSample],
    reference_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit, DatasetError> {
    if manifest.is_empty() {
        return Err(DatasetError::EmptyManifest);
    }
    if !(reference_fraction > 0.0 && reference_fraction < 1.0) {
        return Err(DatasetError::BadFraction(reference_fraction));
    }
    for label in [GroundTruth::Real, GroundTruth::Ai] {
        if !manifest.iter().any(|s| s.label == label) {
            return Err(DatasetError::EmptyClass(label));
        }
    }

    let mut strata: BTreeMap<(GroundTruth, String), Vec<&VideoSample>> = BTreeMap::new();
    for s in manifest {
        strata
            .entry((s.label, s.source.clone()))
            .or_default()
            .push(s);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled: BTreeMap<(GroundTruth, String), Vec<&VideoSample>> = BTreeMap::new();
    for (key, mut members) in strata {
        members.sort_by(|a, b| a.id.cmp(&b.id));
        members.shuffle(&mut rng);
        shuffled.insert(key, members);
    }

    // Reference quota per label, then per-stratum floor + top-up of the
    // strata with the most remaining samples.
    let mut ref_take: BTreeMap<(GroundTruth, String), usize> = BTreeMap::new();
    for label in [GroundTruth::Real, GroundTruth::Ai] {
        let label_strata: Vec<_> = shuffled.keys().filter(|k| k.0 == label).cloned().collect();
        let label_total: usize = label_strata.iter().map(|k| shuffled[k].len()).sum();
        let quota = (reference_fraction * label_total as f64).floor() as usize;
        let mut assigned = 0usize;
        for key in &label_strata {
            let take = (reference_fraction * shuffled[key].len() as f64).floor() as usize;
            ref_take.insert(key.clone(), take);
            assigned += take;
        }
        while assigned < quota {
            // Largest remaining stratum; ties resolve to the first key.
            let key = label_strata
                .iter()
                .max_by_key(|k| (shuffled[*k].len() - ref_take[*k], std::cmp::Reverse(*k)))
                .cloned()
                .expect("label has at least one stratum");
            if shuffled[&key].len() == ref_take[&key] {
                break;
            }
            *ref_take.get_mut(&key).unwrap() += 1;
            assigned += 1;
        }
    }

    let mut reference = Vec::new();
    let mut adaptation = Vec::new();
    let mut inference = Vec::new();
    for (key, members) in &shuffled {
        let take = ref_take[key];
        reference.extend(members[..take].iter().map(|s| (*s).clone()));
        let rest = &members[take..];
        let adapt_n = rest.len() / 2;
        adaptation.extend(rest[..adapt_n].iter().map(|s| (*s).clone()));
        inference.extend(rest[adapt_n..].iter().map(|s| (*s).clone()));
    }

    Ok(DatasetSplit {
        reference,
        adaptation,
        inference,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn sample(id: &str, source: &str, label: GroundTruth) -> VideoSample {
        VideoSample {
            id: id.into(),
            source: source.into(),
            label,
            frames_dir: PathBuf::from("/nonexistent"),
            frame_count: 10,
        }
    }

    fn manifest(n_real: usize, n_ai: usize) -> Vec<VideoSample> {
        let mut m = Vec::new();
        for i in 0..n_real {
            m.push(sample(&format!("r{i:03}"), "panda70m", GroundTruth::Real));
        }
        for i in 0..n_ai {
            m.push(sample(&format!("a{i:03}"), "kling", GroundTruth::Ai));
        }
        m
    }

    #[test]
    fn window_is_centered_floor() {
        assert_eq!(window_bounds(100, 8), (46, 8));
        assert_eq!(window_bounds(8, 8), (0, 8));
        assert_eq!(window_bounds(5, 8), (0, 5));
        assert_eq!(window_bounds(9, 8), (0, 8));
        assert_eq!(window_bounds(10, 8), (1, 8));
    }

    #[test]
    fn window_len_is_min_of_count_and_window() {
        for n in 1..40usize {
            for w in 1..12usize {
                let (start, len) = window_bounds(n, w);
                assert_eq!(len, n.min(w));
                assert!(start + len <= n);
            }
        }
    }

    #[test]
    fn split_is_stratified_and_deterministic() {
        let m = manifest(100, 100);
        let a = split_manifest(&m, 0.25, 7).unwrap();
        let b = split_manifest(&m, 0.25, 7).unwrap();
        let refs_real = a.reference.iter().filter(|s| s.label == GroundTruth::Real).count();
        let refs_ai = a.reference.iter().filter(|s| s.label == GroundTruth::Ai).count();
        assert_eq!((refs_real, refs_ai), (25, 25));
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let c = split_manifest(&m, 0.25, 8).unwrap();
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&c).unwrap()
        );
    }

    #[test]
    fn split_floor_rule_on_uneven_classes() {
        let m = manifest(7, 9);
        let s = split_manifest(&m, 0.25, 1).unwrap();
        let real = s.reference.iter().filter(|x| x.label == GroundTruth::Real).count();
        let ai = s.reference.iter().filter(|x| x.label == GroundTruth::Ai).count();
        assert_eq!((real, ai), (1, 2));
    }

    #[test]
    fn split_partitions_manifest() {
        let m = manifest(13, 17);
        let s = split_manifest(&m, 0.3, 99).unwrap();
        let mut ids: Vec<&str> = s.all().map(|x| x.id.as_str()).collect();
        ids.sort();
        let mut expect: Vec<&str> = m.iter().map(|x| x.id.as_str()).collect();
        expect.sort();
        assert_eq!(ids, expect);
    }

    #[test]
    fn split_top_up_fills_label_quota_across_strata() {
        let mut m = Vec::new();
        for i in 0..10 {
            m.push(sample(&format!("k{i}"), "kling", GroundTruth::Ai));
            m.push(sample(&format!("p{i}"), "pika", GroundTruth::Ai));
        }
        for i in 0..20 {
            m.push(sample(&format!("r{i}"), "panda70m", GroundTruth::Real));
        }
        let s = split_manifest(&m, 0.25, 3).unwrap();
        let ai = s.reference.iter().filter(|x| x.label == GroundTruth::Ai).count();
        // floor(0.25*10)=2 per stratum, label quota floor(0.25*20)=5: top-up adds 1.
        assert_eq!(ai, 5);
    }

    #[test]
    fn split_rejects_missing_class() {
        let m = manifest(4, 0);
        assert!(matches!(
            split_manifest(&m, 0.25, 0),
            Err(DatasetError::EmptyClass(GroundTruth::Ai))
        ));
    }

    #[test]
    fn frame_sequence_requires_uniform_dimensions() {
        let a = RgbImage::from_pixel(4, 4, Rgb([0, 0, 0]));
        let b = RgbImage::from_pixel(5, 4, Rgb([0, 0, 0]));
        assert!(FrameSequence::new(vec![a.clone(), a.clone()]).is_ok());
        assert!(FrameSequence::new(vec![a, b]).is_err());
        assert!(FrameSequence::new(vec![]).is_err());
    }

    #[test]
    fn prepare_counts_and_caps_extracted_frames() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("frames");
        // Stand-in extractor: copies a fixture directory of N pngs.
        let src = tmp.path().join("src");
        fs::create_dir_all(&src).unwrap();
        for i in 0..5 {
            let img = RgbImage::from_pixel(2, 2, Rgb([i as u8, 0, 0]));
            img.save(src.join(frame_file_name(i))).unwrap();
        }
        let cmd = format!("cp -r {}/. {{out_dir}}", src.display());
        // `cp` has no {max_frames} placeholder; prepare_frames trims extras.
        let n = prepare_frames(Path::new("clip.mp4"), &out, 3, &cmd).unwrap();
        assert_eq!(n, 3);
        assert_eq!(list_frame_files(&out).unwrap().len(), 3);

        let n = prepare_frames(Path::new("clip.mp4"), &tmp.path().join("f2"), 100, &cmd).unwrap();
        assert_eq!(n, 5);
    }

    #[test]
    fn prepare_reports_failure_and_empty_output() {
        let tmp = tempfile::tempdir().unwrap();
        let err = prepare_frames(Path::new("x.mp4"), &tmp.path().join("a"), 10, "false").unwrap_err();
        assert!(matches!(err, DatasetError::ExtractionFailed { .. }));
        let err = prepare_frames(Path::new("x.mp4"), &tmp.path().join("b"), 10, "true").unwrap_err();
        assert!(matches!(err, DatasetError::NotAVideo(_)));
    }
}
