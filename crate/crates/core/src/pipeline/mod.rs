//! Dataset ingestion, per-keyframe orchestration and output files.

mod config;
mod dataset;
mod io;
mod run;
mod synthetic;

pub use config::{EvalConfig, PipelineConfig, PriorSource};
pub use dataset::{load_dataset, parse_intrinsics, parse_landmarks, parse_poses, Dataset, DatasetManifest, Frame, DEFAULT_DEPTH_SCALE};
pub use io::{
    decode_depth, encode_depth, read_depth, read_depth_png, read_image_png, write_atomic, write_depth, write_depth_png,
    write_image_png, write_json, write_mesh, DEPTH_MAGIC,
};
pub use run::{
    effective_selection, keyframe_records, run, AblationSummary, KeyframeRow, KeyframeTiming, ResolvedPrior, RunMetrics, RunReport,
    SkippedKeyframe, StageTimings,
};
pub use synthetic::{synthesize, write_dataset, SynthSpec};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{}{}: {reason}", file.display(), if *line > 0 { format!(":{line}") } else { String::new() })]
    Parse { file: PathBuf, line: usize, reason: String },
    #[error("no matching frame for timestamp {timestamp}")]
    MissingFrame { timestamp: f64 },
    #[error("{}: {reason}", path.display())]
    Io { path: PathBuf, reason: String },
    #[error("keyframe {keyframe}, {stage}: {reason}")]
    Stage {
        keyframe: usize,
        stage: &'static str,
        reason: String,
    },
    #[error("internal error: {0}")]
    Internal(String),
}

impl PipelineError {
    /// Process exit status: 1 config, 2 data or I/O, 3 internal.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 1,
            Self::Parse { .. } | Self::MissingFrame { .. } | Self::Io { .. } => 2,
            Self::Stage { .. } | Self::Internal(_) => 3,
        }
    }
}
