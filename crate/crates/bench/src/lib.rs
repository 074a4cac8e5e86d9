//! Shared fixtures for the benchmarks in `benches/`.

use arbor_core::classifier::Stage;
use arbor_core::pipeline::training_view;
use arbor_core::synthetic::{generate_tree, TreeSpec};
use arbor_core::{CylinderModel, PipelineConfig, PointCloud};

/// Major and minor points of a default synthetic tree in the aligned frame,
/// with the fitted trunk cylinder.
pub fn tree_fixture(seed: u64) -> (PointCloud, CylinderModel) {
    let scene = generate_tree(&TreeSpec { seed, ..TreeSpec::default() }).expect("default spec generates");
    let (cloud, cyl) = training_view(&scene.cloud, Stage::MajorMinor, &PipelineConfig::default()).expect("trunk fits");
    (cloud, cyl.expect("stage 3 view has a trunk"))
}
