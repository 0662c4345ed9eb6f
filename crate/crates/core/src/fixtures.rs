//! Procedural synthetic clips: deterministic frame sets plus a manifest,
//! used by the test suites and for zero-dependency demo runs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{frame_file_name, GroundTruth, ManifestEntry};

/// Write one clip: smooth drifting texture, lightly different per clip.
/// "AI-labeled" clips get a saturation bump and a hard seam so the frames
/// look plausibly different; detection behavior is driven by the mock, not
/// by these pixels.
pub fn write_clip(
    dir: &Path,
    frames: usize,
    size: u32,
    seed: u64,
    label: GroundTruth,
) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase_x: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let phase_y: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let freq: f32 = rng.random_range(2.0..5.0);
    for t in 0..frames {
        let drift = t as f32 * 0.7;
        let img = RgbImage::from_fn(size, size, |x, y| {
            let fx = (x as f32 + drift) / size as f32 * std::f32::consts::TAU;
            let fy = y as f32 / size as f32 * std::f32::consts::TAU;
            let v = 127.5 + 70.0 * (freq * fx + phase_x).sin() * (fy + phase_y).cos();
            let v = v.clamp(0.0, 255.0) as u8;
            match label {
                GroundTruth::Real => Rgb([v, v, (v as f32 * 0.9) as u8]),
                GroundTruth::Ai => {
                    if x == size / 2 {
                        Rgb([255, 0, 255])
                    } else {
                        Rgb([v, (v as f32 * 0.6) as u8, v])
                    }
                }
            }
        });
        img.save(dir.join(frame_file_name(t)))
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::Other, e.to_string()))?;
    }
    Ok(())
}

/// Generate `n_real + n_ai` clips under `root/clips` and write a manifest
/// (line-delimited JSON with `frames_dir` entries). Returns the manifest
/// path. Fully deterministic in `seed`.
pub fn generate_fixture(
    root: &Path,
    n_real: usize,
    n_ai: usize,
    frames_per_clip: usize,
    size: u32,
    seed: u64,
) -> std::io::Result<PathBuf> {
    let clips = root.join("clips");
    fs::create_dir_all(&clips)?;
    let manifest_path = root.join("manifest.jsonl");
    let mut manifest = fs::File::create(&manifest_path)?;

    let mut write_entry = |id: String, source: &str, label: GroundTruth, clip_seed: u64| -> std::io::Result<()> {
        let dir = clips.join(&id);
        write_clip(&dir, frames_per_clip, size, clip_seed, label)?;
        let entry = ManifestEntry {
            id,
            source: source.to_string(),
            label,
            video_path: None,
            frames_dir: Some(dir),
        };
        writeln!(manifest, "{}", serde_json::to_string(&entry).expect("entry serializes"))
    };

    for i in 0..n_real {
        write_entry(format!("real_{i:04}"), "panda70m", GroundTruth::Real, seed ^ (i as u64) << 1)?;
    }
    for i in 0..n_ai {
        write_entry(format!("ai_{i:04}"), "kling", GroundTruth::Ai, seed ^ ((i as u64) << 1 | 1))?;
    }
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{list_frame_files, read_manifest};

    #[test]
    fn fixture_is_deterministic_and_well_formed() {
        let tmp = tempfile::tempdir().unwrap();
        let a = tmp.path().join("a");
        let b = tmp.path().join("b");
        let ma = generate_fixture(&a, 2, 2, 3, 16, 9).unwrap();
        let mb = generate_fixture(&b, 2, 2, 3, 16, 9).unwrap();
        let entries = read_manifest(&ma).unwrap();
        assert_eq!(entries.len(), 4);
        for entry in &entries {
            let files = list_frame_files(entry.frames_dir.as_ref().unwrap()).unwrap();
            assert_eq!(files.len(), 3);
        }
        // Same seed, same bytes.
        let fa = fs::read(a.join("clips/real_0000").join(frame_file_name(0))).unwrap();
        let fb = fs::read(b.join("clips/real_0000").join(frame_file_name(0))).unwrap();
        assert_eq!(fa, fb);
        let _ = mb;
    }
}
