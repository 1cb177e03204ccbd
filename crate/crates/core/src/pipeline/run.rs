use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::time::Instant;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::config::{PipelineConfig, PriorSource};
use super::dataset::Dataset;
use super::io::{write_depth, write_json, write_mesh};
use super::PipelineError;
use crate::eval::{depth_metrics, mesh_metrics, prune_to_frustums, sample_mesh, DepthMetrics, EvalError, MeshMetrics};
use crate::fusion::{extract_mesh, TriangleMesh, TsdfVolume};
use crate::geometry::{project, relative_pose, CameraIntrinsics, DepthMap, RigidPose};
use crate::keyframe::{select_window, KeyframeError, KeyframeRecord, SelectionConfig};
use crate::mvs::{predict, SourceView};
use crate::sparse_prior::{densify, project_landmarks, simulate_noisy_sparse, PriorError, SparseDepthMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolvedPrior {
    Landmarks,
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeRow {
    pub index: usize,
    pub timestamp: f64,
    /// Source frame indices, best first.
    pub sources: Vec<usize>,
    pub prior_points: usize,
    pub valid_pixels: usize,
    pub depth: Option<DepthMetrics>,
    pub prior: Option<DepthMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub prior_source: ResolvedPrior,
    pub keyframes: Vec<KeyframeRow>,
    /// Per-keyframe metrics averaged over keyframes that have them.
    pub mean_depth: Option<DepthMetrics>,
    pub mean_prior: Option<DepthMetrics>,
    pub mesh: Option<MeshMetrics>,
    pub mesh_vertices: usize,
    pub mesh_triangles: usize,
    pub allocated_blocks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedKeyframe {
    pub index: usize,
    pub reason: String,
}

/// Seconds spent per stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub select: f64,
    pub prior: f64,
    pub mvs: f64,
    pub fusion: f64,
}

impl StageTimings {
    fn add(&mut self, other: &StageTimings) {
        self.select += other.select;
        self.prior += other.prior;
        self.mvs += other.mvs;
        self.fusion += other.fusion;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeTiming {
    pub index: usize,
    #[serde(flatten)]
    pub stages: StageTimings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub metrics: RunMetrics,
    pub skipped: Vec<SkippedKeyframe>,
    pub keyframe_timings: Vec<KeyframeTiming>,
    pub stage_totals: StageTimings,
    pub extract_seconds: f64,
    pub eval_seconds: f64,
    pub total_seconds: f64,
}

fn resolve_prior(dataset: &Dataset, source: PriorSource) -> Result<ResolvedPrior, PipelineError> {
    let has_landmarks = dataset.landmarks.as_ref().is_some_and(|l| !l.is_empty());
    match source {
        PriorSource::Landmarks if has_landmarks => Ok(ResolvedPrior::Landmarks),
        PriorSource::Landmarks => Err(PipelineError::Config("prior source `landmarks` needs a landmark file".into())),
        PriorSource::Simulated if dataset.has_gt_depth() => Ok(ResolvedPrior::Simulated),
        PriorSource::Simulated => Err(PipelineError::Config("prior source `simulated` needs ground-truth depth".into())),
        PriorSource::Auto if has_landmarks => Ok(ResolvedPrior::Landmarks),
        PriorSource::Auto if dataset.has_gt_depth() => Ok(ResolvedPrior::Simulated),
        PriorSource::Auto => Err(PipelineError::Config(
            "no prior source: dataset has neither landmarks nor ground-truth depth".into(),
        )),
    }
}

/// Landmarks each frame sees: its listed observations, or for landmarks without
/// observations, every frame they project into within `max_depth`.
fn frame_landmarks(dataset: &Dataset, max_depth: f64) -> Vec<HashSet<u64>> {
    let mut sets = vec![HashSet::new(); dataset.frames.len()];
    let Some(landmarks) = &dataset.landmarks else {
        return sets;
    };
    let intr = &dataset.intrinsics;
    let inverses: Vec<RigidPose> = dataset.frames.iter().map(|f| f.pose.inverse()).collect();
    for lm in landmarks {
        if lm.observations.is_empty() {
            for (i, inv) in inverses.iter().enumerate() {
                if let Ok((px, d)) = project(&inv.transform_point(&lm.position), intr) {
                    if d <= max_depth && intr.contains(&px) {
                        sets[i].insert(lm.id);
                    }
                }
            }
        } else {
            for ob in &lm.observations {
                sets[ob.keyframe_id as usize].insert(lm.id);
            }
        }
    }
    sets
}

/// Keyframe records for every frame, with ids equal to frame indices.
pub fn keyframe_records(dataset: &Dataset, cfg: &PipelineConfig) -> Vec<KeyframeRecord> {
    frame_landmarks(dataset, cfg.landmark_filter.d_th)
        .into_iter()
        .zip(&dataset.frames)
        .enumerate()
        .map(|(i, (ids, f))| KeyframeRecord {
            id: i as u64,
            pose: f.pose,
            landmark_ids: ids,
            timestamp: f.timestamp,
        })
        .collect()
}

/// Selection settings used by `run`. Covisibility cannot be counted without
/// landmarks, so the covisibility filter is disabled for such datasets.
pub fn effective_selection(dataset: &Dataset, cfg: &PipelineConfig) -> SelectionConfig {
    let mut sel = cfg.selection.clone();
    if dataset.landmarks.as_ref().is_none_or(|l| l.is_empty()) {
        sel.min_covisibility = 0;
    }
    sel
}

fn mean_metrics<'a>(rows: impl Iterator<Item = &'a DepthMetrics>) -> Option<DepthMetrics> {
    let mut n = 0usize;
    let mut acc = [0.0f64; 5];
    for m in rows {
        n += 1;
        for (a, v) in acc.iter_mut().zip([m.abs_diff, m.sq_rel, m.rmse, m.delta_105, m.delta_125]) {
            *a += v;
        }
    }
    (n > 0).then(|| {
        let k = n as f64;
        DepthMetrics {
            abs_diff: acc[0] / k,
            sq_rel: acc[1] / k,
            rmse: acc[2] / k,
            delta_105: acc[3] / k,
            delta_125: acc[4] / k,
        }
    })
}

/// World points back-projected from every `stride`-th pixel of `depth` up to `max_depth`.
fn backproject(depth: &DepthMap, pose: &RigidPose, intr: &CameraIntrinsics, stride: usize, max_depth: f64) -> Vec<Vector3<f64>> {
    let mut out = Vec::new();
    for y in (0..depth.height()).step_by(stride) {
        for x in (0..depth.width()).step_by(stride) {
            if let Some(d) = depth.get(x, y).filter(|d| *d <= max_depth) {
                out.push(pose.transform_point(&(intr.ray(&Vector2::new(x as f64, y as f64)) * d)));
            }
        }
    }
    out
}

fn stage_error(keyframe: usize, stage: &'static str) -> impl Fn(String) -> PipelineError {
    move |reason| PipelineError::Stage { keyframe, stage, reason }
}

fn elapsed(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

enum PriorOutcome {
    Ready(SparseDepthMap),
    Skip(String),
}

fn sparse_prior(
    dataset: &Dataset,
    cfg: &PipelineConfig,
    source: ResolvedPrior,
    index: usize,
    observer_poses: &HashMap<u64, RigidPose>,
) -> Result<PriorOutcome, PipelineError> {
    let frame = &dataset.frames[index];
    let intr = &dataset.intrinsics;
    match source {
        ResolvedPrior::Landmarks => {
            let landmarks = dataset.landmarks.as_deref().unwrap_or_default();
            let sparse = project_landmarks(landmarks, &frame.pose, intr, &cfg.landmark_filter, observer_poses);
            Ok(if sparse.valid_count() == 0 {
                PriorOutcome::Skip("no landmark survives projection filtering".into())
            } else {
                PriorOutcome::Ready(sparse)
            })
        }
        ResolvedPrior::Simulated => {
            let gt = frame.gt_depth.as_ref().expect("simulation requires ground truth");
            let noise = crate::sparse_prior::NoiseConfig {
                seed: cfg.noise.seed.wrapping_add(index as u64),
                ..cfg.noise.clone()
            };
            match simulate_noisy_sparse(gt, &frame.image, &noise, intr, &frame.pose) {
                Ok(s) if s.valid_count() > 0 => Ok(PriorOutcome::Ready(s)),
                Ok(_) | Err(PriorError::NoValidKeypoints) => Ok(PriorOutcome::Skip("no simulated prior point".into())),
                Err(e) => Err(stage_error(index, "prior")(e.to_string())),
            }
        }
    }
}

/// Runs selection, prior, stereo and fusion for every `stride`-th frame, then
/// extracts and scores the mesh. With `out_dir`, writes per-keyframe depth
/// rasters, `mesh.ply`, `metrics.json`, `report.json` and `config.json`.
pub fn run(dataset: &Dataset, cfg: &PipelineConfig, out_dir: Option<&Path>) -> Result<RunReport, PipelineError> {
    let started = Instant::now();
    cfg.validate()?;
    let source = resolve_prior(dataset, cfg.prior_source)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir.join("depth")).map_err(|e| PipelineError::Io {
            path: dir.to_path_buf(),
            reason: e.to_string(),
        })?;
    }
    let intr = &dataset.intrinsics;
    let records = keyframe_records(dataset, cfg);
    let selection = effective_selection(dataset, cfg);
    let observer_poses: HashMap<u64, RigidPose> = records.iter().map(|r| (r.id, r.pose)).collect();
    let mut volume = TsdfVolume::new(cfg.fusion).map_err(|e| PipelineError::Config(e.to_string()))?;

    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut timings = Vec::new();
    let mut totals = StageTimings::default();
    for index in (0..dataset.frames.len()).step_by(cfg.stride) {
        let frame = &dataset.frames[index];
        let mut t = StageTimings::default();

        let clock = Instant::now();
        let window = match select_window(&records[index], &records[..index], &selection) {
            Ok(w) => w,
            Err(KeyframeError::InsufficientKeyframes { needed, available }) => {
                skipped.push(SkippedKeyframe {
                    index,
                    reason: format!("{available} of {needed} source keyframes available"),
                });
                continue;
            }
            Err(e) => return Err(stage_error(index, "select")(e.to_string())),
        };
        let sources: Vec<usize> = window[1..].iter().map(|r| r.id as usize).collect();
        t.select = elapsed(clock);

        let clock = Instant::now();
        let sparse = match sparse_prior(dataset, cfg, source, index, &observer_poses)? {
            PriorOutcome::Ready(s) => s,
            PriorOutcome::Skip(reason) => {
                skipped.push(SkippedKeyframe { index, reason });
                continue;
            }
        };
        let prior = densify(&sparse, &frame.image, &cfg.densifier).map_err(|e| stage_error(index, "prior")(e.to_string()))?;
        t.prior = elapsed(clock);

        let clock = Instant::now();
        let views = sources
            .iter()
            .map(|&s| {
                let rel = relative_pose(&frame.pose, &dataset.frames[s].pose).map_err(|e| stage_error(index, "mvs")(e.to_string()))?;
                Ok(SourceView {
                    image: &dataset.frames[s].image,
                    rel,
                })
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        let (depth, confidence) =
            predict(&frame.image, &views, intr, Some(&prior), &cfg.mvs).map_err(|e| stage_error(index, "mvs")(e.to_string()))?;
        t.mvs = elapsed(clock);

        let clock = Instant::now();
        volume
            .integrate(&depth, Some(&confidence), &frame.pose, intr)
            .map_err(|e| stage_error(index, "fusion")(e.to_string()))?;
        t.fusion = elapsed(clock);

        let score = |pred: &DepthMap| -> Result<Option<DepthMetrics>, PipelineError> {
            match frame.gt_depth.as_ref().map(|gt| depth_metrics(pred, gt, Some(cfg.eval.max_depth))) {
                None | Some(Err(EvalError::NoOverlap)) => Ok(None),
                Some(Ok(m)) => Ok(Some(m)),
                Some(Err(e)) => Err(stage_error(index, "eval")(e.to_string())),
            }
        };
        rows.push(KeyframeRow {
            index,
            timestamp: frame.timestamp,
            sources,
            prior_points: sparse.valid_count(),
            valid_pixels: depth.valid_count(),
            depth: score(&depth)?,
            prior: score(&prior)?,
        });
        if let Some(dir) = out_dir {
            write_depth(&dir.join("depth").join(format!("{index:06}.dmap")), &depth)?;
        }
        totals.add(&t);
        timings.push(KeyframeTiming { index, stages: t });
    }

    let clock = Instant::now();
    let mesh = extract_mesh(&volume);
    let extract_seconds = elapsed(clock);

    let clock = Instant::now();
    let mesh_scores = if dataset.has_gt_depth() {
        score_mesh(dataset, cfg, &mesh, &rows)?
    } else {
        None
    };
    let eval_seconds = elapsed(clock);

    let metrics = RunMetrics {
        prior_source: source,
        mean_depth: mean_metrics(rows.iter().filter_map(|r| r.depth.as_ref())),
        mean_prior: mean_metrics(rows.iter().filter_map(|r| r.prior.as_ref())),
        keyframes: rows,
        mesh: mesh_scores,
        mesh_vertices: mesh.vertices.len(),
        mesh_triangles: mesh.triangles.len(),
        allocated_blocks: volume.block_count(),
    };
    let mut report = RunReport {
        metrics,
        skipped,
        keyframe_timings: timings,
        stage_totals: totals,
        extract_seconds,
        eval_seconds,
        total_seconds: 0.0,
    };
    if let Some(dir) = out_dir {
        write_mesh(&dir.join("mesh.ply"), &mesh)?;
        write_json(&dir.join("metrics.json"), &report.metrics)?;
        write_json(&dir.join("config.json"), cfg)?;
    }
    report.total_seconds = elapsed(started);
    if let Some(dir) = out_dir {
        write_json(&dir.join("report.json"), &report)?;
    }
    Ok(report)
}

/// Paired comparison of a prior-guided and a uniform run over the same keyframes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    /// Keyframes scored in both runs.
    pub keyframes: usize,
    /// Keyframes where the guided AbsDiff is at most the uniform one.
    pub guided_wins: usize,
    pub guided_mean_abs_diff: f64,
    pub uniform_mean_abs_diff: f64,
    pub guided: Option<DepthMetrics>,
    pub uniform: Option<DepthMetrics>,
}

impl AblationSummary {
    pub fn compare(guided: &RunMetrics, uniform: &RunMetrics) -> Self {
        let by_index: HashMap<usize, &DepthMetrics> =
            uniform.keyframes.iter().filter_map(|r| Some((r.index, r.depth.as_ref()?))).collect();
        let pairs: Vec<(&DepthMetrics, &DepthMetrics)> = guided
            .keyframes
            .iter()
            .filter_map(|r| Some((r.depth.as_ref()?, *by_index.get(&r.index)?)))
            .collect();
        let n = pairs.len();
        let mean = |f: fn(&(&DepthMetrics, &DepthMetrics)) -> f64| {
            if n == 0 {
                f64::NAN
            } else {
                pairs.iter().map(f).sum::<f64>() / n as f64
            }
        };
        Self {
            keyframes: n,
            guided_wins: pairs.iter().filter(|(g, u)| g.abs_diff <= u.abs_diff).count(),
            guided_mean_abs_diff: mean(|p| p.0.abs_diff),
            uniform_mean_abs_diff: mean(|p| p.1.abs_diff),
            guided: mean_metrics(pairs.iter().map(|p| p.0)),
            uniform: mean_metrics(pairs.iter().map(|p| p.1)),
        }
    }
}

/// Mesh samples against ground-truth depth of the processed keyframes, both
/// restricted to the keyframe frusta up to the evaluation depth.
fn score_mesh(dataset: &Dataset, cfg: &PipelineConfig, mesh: &TriangleMesh, rows: &[KeyframeRow]) -> Result<Option<MeshMetrics>, PipelineError> {
    if rows.is_empty() || mesh.triangles.is_empty() {
        return Ok(None);
    }
    let ev = &cfg.eval;
    let intr = &dataset.intrinsics;
    let poses: Vec<RigidPose> = rows.iter().map(|r| dataset.frames[r.index].pose).collect();
    let gt: Vec<Vector3<f64>> = rows
        .iter()
        .flat_map(|r| {
            let f = &dataset.frames[r.index];
            backproject(f.gt_depth.as_ref().expect("checked by caller"), &f.pose, intr, ev.gt_pixel_stride, ev.max_depth)
        })
        .collect();
    let internal = |e: EvalError| PipelineError::Internal(e.to_string());
    let samples = sample_mesh(mesh, ev.mesh_samples, ev.seed).map_err(internal)?;
    let pred = prune_to_frustums(&samples, &poses, intr, ev.max_depth);
    match mesh_metrics(&pred, &gt, ev.threshold_cm) {
        Ok(m) => Ok(Some(m)),
        Err(EvalError::EmptySet) => Ok(None),
        Err(e) => Err(internal(e)),
    }
}
