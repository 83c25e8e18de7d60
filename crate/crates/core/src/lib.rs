//! Scale-aware semi-dense image matching on synthetic homography pairs.
//!
//! The pipeline extracts a handcrafted descriptor pyramid, estimates
//! co-visibility and the scale ratio from row-softmax entropy, matches
//! coarse patches with an adaptive mutual-nearest-neighbour rule over a
//! max-pooled dual-softmax, and refines the resulting flow through a
//! correlation cascade to full resolution.

pub mod coarse;
pub mod error;
pub mod features;
pub mod flow;
pub mod grid;
pub mod image;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod synth;

pub use coarse::{CoVisibilityReport, Match, MatchSet, PooledSide};
pub use error::{Error, Result};
pub use features::{FeatureConfig, FeaturePyramid};
pub use flow::RefinementConfig;
pub use grid::{CertaintyMap, FeatureGrid, FlowField, Matrix, ScoreMatrix};
pub use image::GrayImage;
pub use pipeline::{Matcher, PipelineConfig, PipelineOutput};
pub use synth::{GroundTruth, Homography, SceneSpec, ScenePair};
