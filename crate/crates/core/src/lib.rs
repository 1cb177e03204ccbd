//! Dense mapping from posed images guided by sparse landmark depth.

pub mod geometry;
pub mod keyframe;
pub mod sparse_prior;
pub mod mvs;
pub mod fusion;
pub mod eval;
pub mod synth;
pub mod pipeline;
