use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use priormap::eval::{depth_metrics, mesh_metrics, sample_mesh, EvalError, DEFAULT_THRESHOLD_CM};
use priormap::fusion::read_ply;
use priormap::geometry::{CameraIntrinsics, DepthMap};
use priormap::mvs::HypothesisMode;
use priormap::pipeline::{
    load_dataset, read_depth, read_depth_png, run, synthesize, write_dataset, write_json, AblationSummary, DatasetManifest,
    PipelineConfig, PipelineError, PriorSource, SynthSpec, DEFAULT_DEPTH_SCALE,
};
use priormap::synth::Scene;

#[derive(Parser)]
#[command(name = "priormap", version, about = "Prior-guided dense mapping from posed images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the mapping pipeline over a dataset directory.
    Run(RunArgs),
    /// Run the pipeline twice, prior-guided and uniform, and compare depth errors.
    Ablate(RunArgs),
    /// Score a predicted depth map against ground truth.
    EvalDepth(EvalDepthArgs),
    /// Score a predicted mesh against a ground-truth mesh.
    EvalMesh(EvalMeshArgs),
    /// Render a synthetic dataset from a scene description.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum CostVolume {
    Guided,
    Uniform,
}

#[derive(Clone, Copy, ValueEnum)]
enum PriorArg {
    Auto,
    Landmarks,
    Simulated,
}

#[derive(Args)]
struct RunArgs {
    /// Dataset root with intrinsics.txt, poses.txt and images/.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON file overriding default settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted override, e.g. `--set mvs.hypothesis.interval=0.02`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, value_enum)]
    cost_volume: Option<CostVolume>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long, value_enum)]
    prior: Option<PriorArg>,
    /// Meters per unit of 16-bit depth images.
    #[arg(long, default_value_t = DEFAULT_DEPTH_SCALE)]
    depth_scale: f64,
}

#[derive(Args)]
struct EvalDepthArgs {
    /// Predicted depth, `.dmap` raster or 16-bit PNG.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Meters per unit for PNG inputs.
    #[arg(long, default_value_t = DEFAULT_DEPTH_SCALE)]
    depth_scale: f64,
    /// Ignore ground truth beyond this depth (m).
    #[arg(long)]
    max_depth: Option<f64>,
}

#[derive(Args)]
struct EvalMeshArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Points sampled on each mesh.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD_CM)]
    threshold_cm: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    /// Scene JSON; the built-in room when omitted.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    frames: usize,
    /// Distance between consecutive camera centers (m).
    #[arg(long, default_value_t = 0.05)]
    baseline: f64,
    #[arg(long, default_value_t = 320)]
    width: usize,
    #[arg(long, default_value_t = 240)]
    height: usize,
    /// Focal length in pixels.
    #[arg(long, default_value_t = 250.0)]
    focal: f64,
    /// Number of ground-truth landmarks to write; 0 writes none.
    #[arg(long, default_value_t = 0)]
    landmarks: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_DEPTH_SCALE)]
    depth_scale: f64,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Self {
            code: e.exit_code(),
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn data(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn build_config(args: &RunArgs) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            PipelineConfig::from_json_str(&text)?
        }
        None => PipelineConfig::default(),
    };
    cfg.apply_overrides(&args.overrides)?;
    if let Some(cv) = args.cost_volume {
        cfg.mvs.hypothesis.mode = match cv {
            CostVolume::Guided => HypothesisMode::PriorGuided,
            CostVolume::Uniform => HypothesisMode::Uniform,
        };
    }
    if let Some(s) = args.stride {
        cfg.stride = s;
    }
    if let Some(p) = args.prior {
        cfg.prior_source = match p {
            PriorArg::Auto => PriorSource::Auto,
            PriorArg::Landmarks => PriorSource::Landmarks,
            PriorArg::Simulated => PriorSource::Simulated,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn manifest(args: &RunArgs) -> DatasetManifest {
    DatasetManifest {
        depth_scale: args.depth_scale,
        ..DatasetManifest::from_root(&args.dataset)
    }
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let cfg = build_config(args)?;
    let dataset = load_dataset(&manifest(args))?;
    let report = run(&dataset, &cfg, Some(&args.out))?;
    let m = &report.metrics;
    eprintln!(
        "{} keyframes, {} skipped, {} triangles, {:.1} s",
        m.keyframes.len(),
        report.skipped.len(),
        m.mesh_triangles,
        report.total_seconds
    );
    if let Some(d) = &m.mean_depth {
        eprintln!("mean AbsDiff {:.4} m, RMSE {:.4} m", d.abs_diff, d.rmse);
    }
    Ok(())
}

fn cmd_ablate(args: &RunArgs) -> Result<(), Failure> {
    let base = build_config(args)?;
    let dataset = load_dataset(&manifest(args))?;
    let mut metrics = Vec::new();
    for (name, mode) in [("guided", HypothesisMode::PriorGuided), ("uniform", HypothesisMode::Uniform)] {
        let mut cfg = base.clone();
        cfg.mvs.hypothesis.mode = mode;
        let out = args.out.join(name);
        metrics.push(run(&dataset, &cfg, Some(&out))?.metrics);
    }
    let summary = AblationSummary::compare(&metrics[0], &metrics[1]);
    write_json(&args.out.join("ablation.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

fn load_depth_any(path: &Path, scale: f64) -> Result<DepthMap, Failure> {
    let is_png = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"));
    Ok(if is_png { read_depth_png(path, scale)? } else { read_depth(path)? })
}

fn eval_failure(e: EvalError) -> Failure {
    data(e.to_string())
}

fn cmd_eval_depth(args: &EvalDepthArgs) -> Result<(), Failure> {
    if !(args.depth_scale > 0.0) {
        return Err(usage("--depth-scale must be positive"));
    }
    let pred = load_depth_any(&args.pred, args.depth_scale)?;
    let gt = load_depth_any(&args.gt, args.depth_scale)?;
    let m = depth_metrics(&pred, &gt, args.max_depth).map_err(eval_failure)?;
    println!("{}", serde_json::to_string_pretty(&m).expect("metrics serialize"));
    Ok(())
}

fn cmd_eval_mesh(args: &EvalMeshArgs) -> Result<(), Failure> {
    if args.samples == 0 || !(args.threshold_cm > 0.0) {
        return Err(usage("--samples and --threshold-cm must be positive"));
    }
    let load = |p: &Path| {
        let f = File::open(p).map_err(|e| data(format!("{}: {e}", p.display())))?;
        read_ply(f).map_err(|e| data(format!("{}: {e}", p.display())))
    };
    let (pred, gt) = (load(&args.pred)?, load(&args.gt)?);
    let pred = sample_mesh(&pred, args.samples, args.seed).map_err(eval_failure)?;
    let gt = sample_mesh(&gt, args.samples, args.seed.wrapping_add(1)).map_err(eval_failure)?;
    let m = mesh_metrics(&pred, &gt, args.threshold_cm).map_err(eval_failure)?;
    println!("{}", serde_json::to_string_pretty(&m).expect("metrics serialize"));
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<(), Failure> {
    let scene = match &args.scene {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<Scene>(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => Scene::room(),
    };
    if !(args.depth_scale > 0.0) {
        return Err(usage("--depth-scale must be positive"));
    }
    let spec = SynthSpec {
        frames: args.frames,
        baseline: args.baseline,
        intrinsics: CameraIntrinsics::centered(args.focal, args.width, args.height),
        landmarks: args.landmarks,
        seed: args.seed,
        depth_scale: args.depth_scale,
    };
    let dataset = synthesize(&scene, &spec)?;
    write_dataset(&dataset, &args.out, spec.depth_scale)?;
    eprintln!("wrote {} frames to {}", dataset.frames.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::EvalDepth(a) => cmd_eval_depth(a),
        Command::EvalMesh(a) => cmd_eval_mesh(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
