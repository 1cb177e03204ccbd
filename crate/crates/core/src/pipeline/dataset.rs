use std::path::{Path, PathBuf};

use nalgebra::{Vector2, Vector3};

use super::io::{read_depth_png, read_image_png};
use super::PipelineError;
use crate::geometry::{CameraIntrinsics, DepthMap, Image, RigidPose};
use crate::sparse_prior::{Landmark, Observation};

/// Default meters per unit of 16-bit depth images.
pub const DEFAULT_DEPTH_SCALE: f64 = 1.0 / 5000.0;
/// Pose timestamps and image names match when they agree this closely (s).
const TIMESTAMP_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub intrinsics: PathBuf,
    pub poses: PathBuf,
    pub images: PathBuf,
    pub depth: Option<PathBuf>,
    pub landmarks: Option<PathBuf>,
    pub depth_scale: f64,
}

impl DatasetManifest {
    /// Standard layout under `root`; `depth/` and `landmarks.txt` are used when present.
    pub fn from_root(root: impl Into<PathBuf>) -> Self {
        let root = root.into();
        let depth = root.join("depth");
        let landmarks = root.join("landmarks.txt");
        Self {
            intrinsics: root.join("intrinsics.txt"),
            poses: root.join("poses.txt"),
            images: root.join("images"),
            depth: depth.is_dir().then_some(depth),
            landmarks: landmarks.is_file().then_some(landmarks),
            depth_scale: DEFAULT_DEPTH_SCALE,
            root,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub timestamp: f64,
    pub image: Image,
    /// World-from-camera.
    pub pose: RigidPose,
    pub gt_depth: Option<DepthMap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub intrinsics: CameraIntrinsics,
    /// Sorted by timestamp.
    pub frames: Vec<Frame>,
    /// Observation keyframe ids are frame indices.
    pub landmarks: Option<Vec<Landmark>>,
}

impl Dataset {
    pub fn has_gt_depth(&self) -> bool {
        !self.frames.is_empty() && self.frames.iter().all(|f| f.gt_depth.is_some())
    }
}

fn parse_error(file: &Path, line: usize, reason: impl Into<String>) -> PipelineError {
    PipelineError::Parse {
        file: file.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|e| PipelineError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_numbers(file: &Path, line: usize, text: &str) -> Result<Vec<f64>, PipelineError> {
    text.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_error(file, line, format!("`{tok}` is not a finite number")))
        })
        .collect()
}

/// One line: `fx fy cx cy width height`.
pub fn parse_intrinsics(file: &Path, text: &str) -> Result<CameraIntrinsics, PipelineError> {
    let mut lines = content_lines(text);
    let (line, body) = lines.next().ok_or_else(|| parse_error(file, 1, "file is empty"))?;
    let v = parse_numbers(file, line, body)?;
    if v.len() != 6 {
        return Err(parse_error(file, line, format!("expected 6 fields, found {}", v.len())));
    }
    if v[4].fract() != 0.0 || v[5].fract() != 0.0 || v[4] < 1.0 || v[5] < 1.0 {
        return Err(parse_error(file, line, "width and height must be positive integers"));
    }
    if let Some((extra, _)) = lines.next() {
        return Err(parse_error(file, extra, "unexpected extra line"));
    }
    CameraIntrinsics::new(v[0], v[1], v[2], v[3], v[4] as usize, v[5] as usize).map_err(|e| parse_error(file, line, e.to_string()))
}

/// Lines `timestamp tx ty tz qx qy qz qw`, world-from-camera, sorted by timestamp on return.
pub fn parse_poses(file: &Path, text: &str) -> Result<Vec<(f64, RigidPose)>, PipelineError> {
    let mut poses = Vec::new();
    for (line, body) in content_lines(text) {
        let v = parse_numbers(file, line, body)?;
        if v.len() != 8 {
            return Err(parse_error(file, line, format!("expected 8 fields, found {}", v.len())));
        }
        let pose = RigidPose::from_quaternion(v[4], v[5], v[6], v[7], Vector3::new(v[1], v[2], v[3]))
            .map_err(|e| parse_error(file, line, e.to_string()))?;
        poses.push((v[0], pose));
    }
    poses.sort_by(|a, b| a.0.total_cmp(&b.0));
    if let Some(w) = poses.windows(2).find(|w| (w[1].0 - w[0].0).abs() <= TIMESTAMP_TOLERANCE) {
        return Err(parse_error(file, 0, format!("duplicate timestamp {}", w[0].0)));
    }
    Ok(poses)
}

/// Lines `id x y z` followed by zero or more `frame u v` observation triples.
pub fn parse_landmarks(file: &Path, text: &str, frame_count: usize) -> Result<Vec<Landmark>, PipelineError> {
    let mut out = Vec::new();
    for (line, body) in content_lines(text) {
        let v = parse_numbers(file, line, body)?;
        if v.len() < 4 || (v.len() - 4) % 3 != 0 {
            return Err(parse_error(file, line, "expected `id x y z` plus `frame u v` triples"));
        }
        let index = |x: f64, what: &str| {
            if x >= 0.0 && x.fract() == 0.0 && x < u64::MAX as f64 {
                Ok(x as u64)
            } else {
                Err(parse_error(file, line, format!("{what} `{x}` is not a non-negative integer")))
            }
        };
        let id = index(v[0], "id")?;
        let mut observations = Vec::with_capacity((v.len() - 4) / 3);
        for t in v[4..].chunks_exact(3) {
            let frame = index(t[0], "frame")?;
            if frame as usize >= frame_count {
                return Err(parse_error(file, line, format!("frame {frame} out of range")));
            }
            observations.push(Observation {
                keyframe_id: frame,
                pixel: Vector2::new(t[1], t[2]),
            });
        }
        out.push(Landmark {
            id,
            position: Vector3::new(v[1], v[2], v[3]),
            observations,
        });
    }
    Ok(out)
}

/// Files in `dir` with extension `png` keyed by the timestamp in their stem, sorted.
fn timestamped_pngs(dir: &Path) -> Result<Vec<(f64, PathBuf)>, PipelineError> {
    let entries = std::fs::read_dir(dir).map_err(|e| PipelineError::Io {
        path: dir.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|e| PipelineError::Io {
                path: dir.to_path_buf(),
                reason: e.to_string(),
            })?
            .path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let t = stem
            .parse::<f64>()
            .ok()
            .filter(|t| t.is_finite())
            .ok_or_else(|| parse_error(&path, 0, "file name is not a timestamp"))?;
        files.push((t, path));
    }
    files.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(files)
}

/// Pairs each pose with the file of the same timestamp; both lists must match one to one.
fn match_files(poses: &[(f64, RigidPose)], files: &[(f64, PathBuf)]) -> Result<Vec<PathBuf>, PipelineError> {
    let mut out = Vec::with_capacity(poses.len());
    let mut j = 0;
    for (t, _) in poses {
        if j < files.len() && files[j].0 < t - TIMESTAMP_TOLERANCE {
            return Err(PipelineError::MissingFrame { timestamp: files[j].0 });
        }
        if j < files.len() && (files[j].0 - t).abs() <= TIMESTAMP_TOLERANCE {
            out.push(files[j].1.clone());
            j += 1;
        } else {
            return Err(PipelineError::MissingFrame { timestamp: *t });
        }
    }
    if let Some((t, _)) = files.get(j) {
        return Err(PipelineError::MissingFrame { timestamp: *t });
    }
    Ok(out)
}

/// Reads every frame of the dataset into memory, in timestamp order.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<Dataset, PipelineError> {
    if !(manifest.depth_scale > 0.0) || !manifest.depth_scale.is_finite() {
        return Err(PipelineError::Config("depth scale must be positive".into()));
    }
    let intrinsics = parse_intrinsics(&manifest.intrinsics, &read_text(&manifest.intrinsics)?)?;
    let poses = parse_poses(&manifest.poses, &read_text(&manifest.poses)?)?;
    let image_files = match_files(&poses, &timestamped_pngs(&manifest.images)?)?;
    let depth_files = match &manifest.depth {
        Some(dir) => Some(match_files(&poses, &timestamped_pngs(dir)?)?),
        None => None,
    };
    let mut frames = Vec::with_capacity(poses.len());
    for (i, (timestamp, pose)) in poses.iter().enumerate() {
        let image = read_image_png(&image_files[i])?;
        let dims_ok = |w: usize, h: usize| w == intrinsics.width && h == intrinsics.height;
        if !dims_ok(image.width(), image.height()) {
            return Err(parse_error(&image_files[i], 0, "image size differs from intrinsics"));
        }
        let gt_depth = match &depth_files {
            Some(files) => {
                let d = read_depth_png(&files[i], manifest.depth_scale)?;
                if !dims_ok(d.width(), d.height()) {
                    return Err(parse_error(&files[i], 0, "depth size differs from intrinsics"));
                }
                Some(d)
            }
            None => None,
        };
        frames.push(Frame {
            timestamp: *timestamp,
            image,
            pose: *pose,
            gt_depth,
        });
    }
    let landmarks = match &manifest.landmarks {
        Some(path) => Some(parse_landmarks(path, &read_text(path)?, frames.len())?),
        None => None,
    };
    Ok(Dataset {
        intrinsics,
        frames,
        landmarks,
    })
}
