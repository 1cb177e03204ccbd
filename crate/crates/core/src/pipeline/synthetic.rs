use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Frame, DEFAULT_DEPTH_SCALE};
use super::io::{write_atomic, write_depth_png, write_image_png};
use super::PipelineError;
use crate::geometry::CameraIntrinsics;
use crate::synth::{orbit_trajectory, render, scene_landmarks, Scene};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub frames: usize,
    /// Distance between consecutive camera centers (m).
    pub baseline: f64,
    pub intrinsics: CameraIntrinsics,
    /// Zero writes no landmark file.
    pub landmarks: usize,
    pub seed: u64,
    pub depth_scale: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            frames: 100,
            baseline: 0.05,
            intrinsics: CameraIntrinsics::centered(250.0, 320, 240),
            landmarks: 0,
            seed: 0,
            depth_scale: DEFAULT_DEPTH_SCALE,
        }
    }
}

/// Renders an orbit around `scene` into an in-memory dataset with exact depth.
pub fn synthesize(scene: &Scene, spec: &SynthSpec) -> Result<Dataset, PipelineError> {
    let config_error = |e: crate::synth::SynthError| PipelineError::Config(e.to_string());
    scene.validate().map_err(config_error)?;
    spec.intrinsics.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    let traj = orbit_trajectory(scene, spec.frames, spec.baseline).map_err(config_error)?;
    let intr = &spec.intrinsics;
    let frames = traj
        .frames
        .par_iter()
        .map(|f| {
            let (image, depth) = render(scene, &f.pose, intr);
            Frame {
                timestamp: f.timestamp,
                image,
                pose: f.pose,
                gt_depth: Some(depth),
            }
        })
        .collect();
    let landmarks = if spec.landmarks > 0 {
        Some(scene_landmarks(scene, &traj, intr, spec.landmarks, spec.seed).map_err(config_error)?)
    } else {
        None
    };
    Ok(Dataset {
        intrinsics: *intr,
        frames,
        landmarks,
    })
}

fn timestamp_name(t: f64) -> String {
    format!("{t:.6}.png")
}

/// Writes the on-disk layout read by `load_dataset`. Depth is quantized by `depth_scale`.
pub fn write_dataset(dataset: &Dataset, root: &Path, depth_scale: f64) -> Result<(), PipelineError> {
    let io = |path: &Path, e: std::io::Error| PipelineError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    for sub in ["images", "depth"] {
        std::fs::create_dir_all(root.join(sub)).map_err(|e| io(root, e))?;
    }
    let k = &dataset.intrinsics;
    let line = format!("{} {} {} {} {} {}\n", k.fx, k.fy, k.cx, k.cy, k.width, k.height);
    write_atomic(&root.join("intrinsics.txt"), |w| w.write_all(line.as_bytes()))?;

    let mut poses = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for f in &dataset.frames {
        let t = f.pose.translation;
        let [qx, qy, qz, qw] = f.pose.quaternion();
        writeln!(poses, "{:.6} {} {} {} {} {} {} {}", f.timestamp, t.x, t.y, t.z, qx, qy, qz, qw).expect("string write");
    }
    write_atomic(&root.join("poses.txt"), |w| w.write_all(poses.as_bytes()))?;

    dataset.frames.par_iter().try_for_each(|f| {
        let name = timestamp_name(f.timestamp);
        write_image_png(&root.join("images").join(&name), &f.image)?;
        if let Some(d) = &f.gt_depth {
            write_depth_png(&root.join("depth").join(&name), d, depth_scale)?;
        }
        Ok::<_, PipelineError>(())
    })?;

    if let Some(landmarks) = &dataset.landmarks {
        let mut text = String::from("# id x y z [frame u v]...\n");
        for lm in landmarks {
            let p = lm.position;
            write!(text, "{} {} {} {}", lm.id, p.x, p.y, p.z).expect("string write");
            for ob in &lm.observations {
                write!(text, " {} {} {}", ob.keyframe_id, ob.pixel.x, ob.pixel.y).expect("string write");
            }
            text.push('\n');
        }
        write_atomic(&root.join("landmarks.txt"), |w| w.write_all(text.as_bytes()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{load_dataset, DatasetManifest};

    #[test]
    fn written_dataset_loads_back() {
        let spec = SynthSpec {
            frames: 3,
            intrinsics: CameraIntrinsics::centered(40.0, 32, 24),
            landmarks: 20,
            ..SynthSpec::default()
        };
        let data = synthesize(&Scene::room(), &spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&data, dir.path(), spec.depth_scale).unwrap();
        let back = load_dataset(&DatasetManifest::from_root(dir.path())).unwrap();
        assert_eq!(back.intrinsics, data.intrinsics);
        assert_eq!(back.frames.len(), 3);
        for (a, b) in data.frames.iter().zip(&back.frames) {
            assert!((a.timestamp - b.timestamp).abs() < 1e-9);
            assert!((a.pose.rotation - b.pose.rotation).abs().max() < 1e-12);
            assert_eq!(a.pose.translation, b.pose.translation);
            let (da, db) = (a.gt_depth.as_ref().unwrap(), b.gt_depth.as_ref().unwrap());
            for (x, y) in da.as_slice().iter().zip(db.as_slice()) {
                assert!((x - y).abs() <= spec.depth_scale, "{x} {y}");
            }
            for (x, y) in a.image.pixels().iter().zip(b.image.pixels()) {
                assert!((x - y).abs() < 1e-4);
            }
        }
        let (la, lb) = (data.landmarks.unwrap(), back.landmarks.unwrap());
        assert_eq!(la, lb);
    }
}
