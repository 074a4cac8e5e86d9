//! Skeleton extraction for single orchard trees from pre-registered 3D point
//! clouds: preprocessing and random-forest segmentation, trunk and branch
//! clustering, shortest-path graph assembly, and graph/point evaluation.

pub mod cloud;
pub mod error;

pub use error::{Error, Result};
pub mod geometry;
pub mod features;
pub mod classifier;
pub mod skeleton;
pub mod evaluation;
pub mod synthetic;
pub mod pipeline;

pub use cloud::{Point3, PointCloud};
pub use geometry::{CylinderModel, PlaneModel};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineOutput};
pub use skeleton::{BranchLabel, Skeleton, SkeletonDoc};
