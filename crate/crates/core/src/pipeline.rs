//! End-to-end orchestration: preprocessing, the three classification stages,
//! trunk fitting and skeletonization, plus helpers to train the stage models.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    evaluate, split_train_validation, stage_dataset, train_forest, ClassCode, Evaluation, ForestParams,
    RandomForest, Stage, StageModels, CLASS_FIELD,
};
use crate::cloud::{
    connected_components, sor_filter, subsample_min_distance, PointCloud, ScalarField, SpatialIndex,
};
use crate::error::{Error, Result};
use crate::geometry::{
    align_to_ground, fit_trunk_cylinder, ransac_plane, scale_by_trunk_circumference, CylinderModel, PlaneModel,
    RansacParams, RigidTransform,
};
use crate::skeleton::{skeletonize, BranchLabel, Skeleton, SkeletonDoc, SkeletonParams};

/// Integer field holding per-point branch codes in labeled output clouds.
pub const BRANCH_FIELD: &str = "branch_id";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelPaths {
    pub ground: Option<PathBuf>,
    pub noise: Option<PathBuf>,
    pub branch: Option<PathBuf>,
}

impl ModelPaths {
    pub fn get(&self, stage: Stage) -> Option<&PathBuf> {
        match stage {
            Stage::GroundTree => self.ground.as_ref(),
            Stage::NoiseTree => self.noise.as_ref(),
            Stage::MajorMinor => self.branch.as_ref(),
        }
    }

    /// Loads every configured model.
    pub fn load(&self) -> Result<StageModels> {
        let mut models = StageModels::default();
        for stage in Stage::ALL {
            if let Some(p) = self.get(stage) {
                models.set(stage, RandomForest::load(p)?);
            }
        }
        Ok(models)
    }
}

/// Every tunable of the pipeline. Lengths carry their unit in the name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub subsample_mm: f64,
    pub plane_threshold_mm: f64,
    pub plane_iterations: usize,
    pub cylinder_threshold_mm: f64,
    pub cylinder_iterations: usize,
    /// Height band above ground used for the trunk fit (m).
    pub cylinder_z_range_m: [f64; 2],
    pub sor_k: usize,
    pub sor_nsigma: f64,
    pub link_radius_mm: f64,
    pub trunk_dist_cm: f64,
    pub trunk_link_mm: f64,
    pub voxel_cm: f64,
    pub clusters_per_100_voxels: f64,
    pub edge_max_mm: f64,
    pub match_radius_mm: f64,
    pub lb_min_fraction: f64,
    pub kmeans_restarts: usize,
    pub kmeans_max_iterations: usize,
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Features examined per split; 0 means floor(sqrt(d)).
    pub features_per_split: usize,
    pub train_fraction: f64,
    /// Stratified cap on training rows per stage; 0 disables the cap.
    pub max_training_samples: usize,
    /// Measured trunk circumference (m) for metric rescaling.
    pub trunk_circumference_m: Option<f64>,
    pub circumference_height_m: f64,
    pub seed: u64,
    pub models: ModelPaths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            subsample_mm: 5.0,
            plane_threshold_mm: 10.0,
            plane_iterations: 1000,
            cylinder_threshold_mm: 10.0,
            cylinder_iterations: 2000,
            cylinder_z_range_m: [0.2, 1.2],
            sor_k: 6,
            sor_nsigma: 1.0,
            link_radius_mm: 10.0,
            trunk_dist_cm: 5.0,
            trunk_link_mm: 20.0,
            voxel_cm: 1.0,
            clusters_per_100_voxels: 2.0,
            edge_max_mm: 30.0,
            match_radius_mm: 50.0,
            lb_min_fraction: 0.05,
            kmeans_restarts: 5,
            kmeans_max_iterations: 100,
            n_trees: 200,
            max_depth: 30,
            min_samples_split: 10,
            features_per_split: 0,
            train_fraction: 0.75,
            max_training_samples: 20_000,
            trunk_circumference_m: None,
            circumference_height_m: 0.5,
            seed: 0,
            models: ModelPaths::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("subsample_mm", self.subsample_mm),
            ("plane_threshold_mm", self.plane_threshold_mm),
            ("cylinder_threshold_mm", self.cylinder_threshold_mm),
            ("sor_nsigma", self.sor_nsigma),
            ("link_radius_mm", self.link_radius_mm),
            ("trunk_dist_cm", self.trunk_dist_cm),
            ("trunk_link_mm", self.trunk_link_mm),
            ("voxel_cm", self.voxel_cm),
            ("clusters_per_100_voxels", self.clusters_per_100_voxels),
            ("edge_max_mm", self.edge_max_mm),
            ("match_radius_mm", self.match_radius_mm),
            ("lb_min_fraction", self.lb_min_fraction),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        let counts = [
            ("plane_iterations", self.plane_iterations),
            ("cylinder_iterations", self.cylinder_iterations),
            ("sor_k", self.sor_k),
            ("kmeans_restarts", self.kmeans_restarts),
            ("kmeans_max_iterations", self.kmeans_max_iterations),
            ("n_trees", self.n_trees),
            ("max_depth", self.max_depth),
            ("min_samples_split", self.min_samples_split),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::param(format!("{name} must be at least 1")));
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::param(format!("train_fraction must be in (0, 1), got {}", self.train_fraction)));
        }
        if self.lb_min_fraction >= 1.0 {
            return Err(Error::param("lb_min_fraction must be below 1"));
        }
        let [z0, z1] = self.cylinder_z_range_m;
        if !(z0 < z1) {
            return Err(Error::param(format!("cylinder_z_range_m must be increasing, got [{z0}, {z1}]")));
        }
        if let Some(c) = self.trunk_circumference_m {
            if !(c > 0.0) {
                return Err(Error::param(format!("trunk_circumference_m must be positive, got {c}")));
            }
        }
        if !(self.circumference_height_m >= 0.0) {
            return Err(Error::param("circumference_height_m must be non-negative"));
        }
        Ok(())
    }

    pub fn plane_params(&self) -> RansacParams {
        RansacParams {
            distance_threshold: self.plane_threshold_mm / 1000.0,
            max_iterations: self.plane_iterations,
            seed: self.seed,
        }
    }

    pub fn cylinder_params(&self) -> RansacParams {
        RansacParams {
            distance_threshold: self.cylinder_threshold_mm / 1000.0,
            max_iterations: self.cylinder_iterations,
            seed: self.seed,
        }
    }

    pub fn forest_params(&self, stage: Stage) -> ForestParams {
        ForestParams {
            n_trees: self.n_trees,
            max_depth: self.max_depth,
            min_samples_split: self.min_samples_split,
            features_per_split: self.features_per_split,
            seed: crate::classifier::derive_seed(self.seed, stage as u64),
        }
    }

    pub fn skeleton_params(&self) -> SkeletonParams {
        SkeletonParams {
            trunk_dist: self.trunk_dist_cm / 100.0,
            trunk_link: self.trunk_link_mm / 1000.0,
            voxel_size: self.voxel_cm / 100.0,
            clusters_per_100_voxels: self.clusters_per_100_voxels,
            edge_max: self.edge_max_mm / 1000.0,
            lb_min_fraction: self.lb_min_fraction,
            kmeans_restarts: self.kmeans_restarts,
            kmeans_max_iterations: self.kmeans_max_iterations,
            seed: self.seed,
        }
    }

    fn z_range(&self) -> Option<(f64, f64)> {
        Some((self.cylinder_z_range_m[0], self.cylinder_z_range_m[1]))
    }
}

/// Prefixes fitting failures with the stage that produced them.
fn in_stage(stage: &str, e: Error) -> Error {
    match e {
        Error::Fit(m) => Error::Fit(format!("{stage}: {m}")),
        other => other,
    }
}

/// Subsampled cloud rotated and shifted so the ground plane is `z = 0`.
#[derive(Debug, Clone)]
pub struct AlignedCloud {
    pub cloud: PointCloud,
    pub plane: PlaneModel,
    pub transform: RigidTransform,
}

/// Subsampling, ground plane fit and alignment. The output carries a
/// `ground_dist` field.
pub fn prepare_geometry(raw: &PointCloud, cfg: &PipelineConfig) -> Result<AlignedCloud> {
    cfg.validate()?;
    if raw.is_empty() {
        return Err(Error::data("input cloud is empty"));
    }
    let sub = subsample_min_distance(raw, cfg.subsample_mm / 1000.0)?;
    let (plane, _) = ransac_plane(&sub, &cfg.plane_params()).map_err(|e| in_stage("ground plane", e))?;
    let (cloud, transform) = align_to_ground(&sub, &plane);
    Ok(AlignedCloud { cloud, plane, transform })
}

/// Point counts after each step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageCounts {
    pub input: usize,
    pub subsampled: usize,
    pub after_ground: usize,
    pub after_noise: usize,
    pub after_sor: usize,
    pub after_components: usize,
    pub after_branch: usize,
}

/// Result of stages 1 and 2 followed by outlier removal and the largest
/// connected component.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub cloud: PointCloud,
    /// Predicted class per point of the aligned cloud.
    pub classes: Vec<ClassCode>,
    pub counts: StageCounts,
}

fn positions_by_source(cloud: &PointCloud) -> Vec<(usize, usize)> {
    let mut v: Vec<(usize, usize)> = cloud.source_ids().into_iter().enumerate().map(|(i, s)| (s, i)).collect();
    v.sort_unstable();
    v
}

/// Maps every point of `sub` back to its index in `parent` via `source_id`.
fn parent_indices(parent: &[(usize, usize)], sub: &PointCloud) -> Result<Vec<usize>> {
    sub.source_ids()
        .into_iter()
        .map(|s| {
            parent
                .binary_search_by_key(&s, |&(k, _)| k)
                .map(|pos| parent[pos].1)
                .map_err(|_| Error::data(format!("source_id {s} lost between stages")))
        })
        .collect()
}

/// Applies the ground and noise stages, SOR and component filtering to an
/// aligned cloud. Points removed by a stage get that stage's class; SOR and
/// component removals count as noise.
pub fn preprocess(aligned: &PointCloud, models: &StageModels, cfg: &PipelineConfig) -> Result<Preprocessed> {
    cfg.validate()?;
    let lookup = positions_by_source(aligned);
    if lookup.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::data("source_id values must be unique"));
    }
    let mut classes = vec![ClassCode::Major; aligned.len()];
    let mut counts = StageCounts { subsampled: aligned.len(), ..Default::default() };

    let keep = models.keep_mask(Stage::GroundTree, aligned, None)?;
    for (c, &k) in classes.iter_mut().zip(&keep) {
        if !k {
            *c = ClassCode::Ground;
        }
    }
    let tree = aligned.filter_mask(&keep);
    counts.after_ground = tree.len();

    let keep = models.keep_mask(Stage::NoiseTree, &tree, None)?;
    let idx = parent_indices(&lookup, &tree)?;
    for (&i, &k) in idx.iter().zip(&keep) {
        if !k {
            classes[i] = ClassCode::Noise;
        }
    }
    let tree = tree.filter_mask(&keep);
    counts.after_noise = tree.len();
    if tree.is_empty() {
        return Err(Error::data("no tree points left after the ground and noise stages"));
    }

    let tree = sor_filter(&tree, cfg.sor_k, cfg.sor_nsigma)?;
    counts.after_sor = tree.len();
    let comps = connected_components(&tree, cfg.link_radius_mm / 1000.0)?;
    let largest = comps.into_iter().next().unwrap_or_default();
    let tree = tree.select(&largest);
    counts.after_components = tree.len();

    let mut kept = vec![false; aligned.len()];
    for i in parent_indices(&lookup, &tree)? {
        kept[i] = true;
    }
    for (c, k) in classes.iter_mut().zip(kept) {
        if !k && *c == ClassCode::Major {
            *c = ClassCode::Noise;
        }
    }
    Ok(Preprocessed { cloud: tree, classes, counts })
}

/// Trunk cylinder fit, optional metric rescaling and the branch stage.
#[derive(Debug, Clone)]
pub struct BranchCloud {
    /// Major-branch points, in the working frame (aligned, then scaled).
    pub cloud: PointCloud,
    /// Minor-branch points removed by stage 3 (source ids).
    pub minor: Vec<usize>,
    pub trunk: CylinderModel,
    /// Scale applied after alignment (1 without a circumference).
    pub scale: f64,
}

pub fn fit_trunk(cloud: &PointCloud, cfg: &PipelineConfig) -> Result<(PointCloud, CylinderModel, f64)> {
    let cyl = fit_trunk_cylinder(cloud, &cfg.cylinder_params(), cfg.z_range()).map_err(|e| in_stage("trunk cylinder", e))?;
    match cfg.trunk_circumference_m {
        Some(c) => scale_by_trunk_circumference(cloud, c, cfg.circumference_height_m, &cyl),
        None => Ok((cloud.clone(), cyl, 1.0)),
    }
}

pub fn classify_branches(tree: &PointCloud, models: &StageModels, cfg: &PipelineConfig) -> Result<BranchCloud> {
    let (scaled, trunk, scale) = fit_trunk(tree, cfg)?;
    let keep = models.keep_mask(Stage::MajorMinor, &scaled, Some(&trunk))?;
    let minor = scaled.points().iter().zip(&keep).filter(|(_, &k)| !k).map(|(p, _)| p.source_id).collect();
    let cloud = scaled.filter_mask(&keep);
    if cloud.is_empty() {
        return Err(Error::data("no major-branch points left after the branch stage"));
    }
    Ok(BranchCloud { cloud, minor, trunk, scale })
}

/// Stages 1 to 3 on a raw cloud. Per-point classes are indexed like the raw
/// input.
#[derive(Debug, Clone)]
pub struct Segmentation {
    pub aligned: AlignedCloud,
    pub preprocessed: Preprocessed,
    pub branches: BranchCloud,
    pub classes: Vec<ClassCode>,
    pub counts: StageCounts,
}

/// Copies of `raw` with `source_id` = position, so ids index the raw cloud.
fn renumbered(raw: &PointCloud) -> PointCloud {
    let mut work = raw.clone();
    for (i, p) in work.points_mut().iter_mut().enumerate() {
        p.source_id = i;
    }
    work
}

/// For every raw point, the raw index of the subsampled point carrying its
/// labels: itself when it was kept, else the nearest kept point.
fn label_sources(work: &PointCloud, kept: &[usize], cell: f64) -> Vec<usize> {
    let mut is_kept = vec![false; work.len()];
    for &k in kept {
        is_kept[k] = true;
    }
    let index = SpatialIndex::from_coords(kept.iter().map(|&i| work.point(i).coords()).collect(), cell);
    (0..work.len())
        .map(|i| {
            if is_kept[i] {
                i
            } else {
                let (j, _) = index.nearest(work.point(i).coords()).expect("subsampled cloud is non-empty");
                kept[j]
            }
        })
        .collect()
}

/// Runs subsampling, alignment, the three classification stages, SOR and
/// component filtering. Points dropped by subsampling take the class of
/// their nearest subsampled point.
pub fn segment(raw: &PointCloud, models: &StageModels, cfg: &PipelineConfig) -> Result<Segmentation> {
    let work = renumbered(raw);
    let aligned = prepare_geometry(&work, cfg)?;
    let preprocessed = preprocess(&aligned.cloud, models, cfg)?;
    let branches = classify_branches(&preprocessed.cloud, models, cfg)?;

    let mut sub_class: Vec<Option<ClassCode>> = vec![None; raw.len()];
    for (p, &c) in aligned.cloud.points().iter().zip(&preprocessed.classes) {
        sub_class[p.source_id] = Some(c);
    }
    for &s in &branches.minor {
        sub_class[s] = Some(ClassCode::Minor);
    }
    let src = label_sources(&work, &aligned.cloud.source_ids(), cfg.subsample_mm / 1000.0 * 2.0);
    let classes = src.iter().map(|&s| sub_class[s].expect("kept point has a class")).collect();

    let mut counts = preprocessed.counts.clone();
    counts.input = raw.len();
    counts.after_branch = branches.cloud.len();
    Ok(Segmentation { aligned, preprocessed, branches, classes, counts })
}

/// Everything a full run produces. Per-point vectors are indexed like the
/// raw input cloud.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub segmentation: Segmentation,
    pub skeleton: Skeleton,
    /// Skeleton in the output frame (see [`run_pipeline`]).
    pub doc: SkeletonDoc,
    pub labels: Vec<BranchLabel>,
}

impl PipelineOutput {
    pub fn n_leading(&self) -> usize {
        self.skeleton.labeling.n_leading
    }

    pub fn counts(&self) -> &StageCounts {
        &self.segmentation.counts
    }

    /// Share of input points labeled Rest.
    pub fn rest_fraction(&self) -> f64 {
        let n = self.labels.len().max(1) as f64;
        self.labels.iter().filter(|l| **l == BranchLabel::Rest).count() as f64 / n
    }

    /// The input cloud with `class` and `branch_id` fields added.
    pub fn labeled_cloud(&self, raw: &PointCloud) -> Result<PointCloud> {
        let mut out = raw.clone();
        let n = self.n_leading();
        let classes = self.segmentation.classes.iter().map(|&c| c as i64).collect();
        out.set_field(CLASS_FIELD, ScalarField::Int(classes))?;
        out.set_field(BRANCH_FIELD, ScalarField::Int(self.labels.iter().map(|l| l.code(n)).collect()))?;
        Ok(out)
    }
}

/// Maps working-frame positions back to the input frame, keeping metric
/// scale: `p = R^T (q - s t)`. Without rescaling this is the exact input
/// frame; with it, the input frame uniformly scaled about its origin.
fn to_output_frame(q: &Vector3<f64>, transform: &RigidTransform, scale: f64) -> Vector3<f64> {
    transform.rotation.transpose() * (q - transform.translation * scale)
}

/// Runs the whole chain on a raw cloud. Points dropped by subsampling take
/// the class and branch label of their nearest subsampled point.
pub fn run_pipeline(raw: &PointCloud, models: &StageModels, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let seg = segment(raw, models, cfg)?;
    let skeleton = skeletonize(&seg.branches.cloud, &seg.branches.trunk, &cfg.skeleton_params())?;

    let mut doc = skeleton.to_doc();
    for node in &mut doc.nodes {
        let c = to_output_frame(&Vector3::from(node.centroid), &seg.aligned.transform, seg.branches.scale);
        node.centroid = [c.x, c.y, c.z];
    }

    let mut sub_label = vec![BranchLabel::Rest; raw.len()];
    for (p, &l) in seg.branches.cloud.points().iter().zip(&skeleton.labeling.labels) {
        sub_label[p.source_id] = l;
    }
    let work = renumbered(raw);
    let src = label_sources(&work, &seg.aligned.cloud.source_ids(), cfg.subsample_mm / 1000.0 * 2.0);
    let labels = src.iter().map(|&s| sub_label[s]).collect();
    Ok(PipelineOutput { segmentation: seg, skeleton, doc, labels })
}

/// Branch stage and skeletonization on a preprocessed cloud (the output of
/// [`preprocess`], in the ground-aligned frame). The skeleton stays in that
/// frame, scaled when a circumference is configured.
pub fn skeletonize_preprocessed(
    cloud: &PointCloud,
    models: &StageModels,
    cfg: &PipelineConfig,
) -> Result<(BranchCloud, Skeleton)> {
    cfg.validate()?;
    let branches = classify_branches(cloud, models, cfg)?;
    let skeleton = skeletonize(&branches.cloud, &branches.trunk, &cfg.skeleton_params())?;
    Ok((branches, skeleton))
}

/// A trained stage model with its validation report.
#[derive(Debug, Clone)]
pub struct TrainedStage {
    pub forest: RandomForest,
    pub validation: Evaluation,
    pub n_train: usize,
    pub n_validation: usize,
}

/// Prepares the cloud a stage is trained on from a labeled raw cloud. The
/// ground stage needs the aligned cloud; later stages also need the trunk.
pub fn training_view(raw: &PointCloud, stage: Stage, cfg: &PipelineConfig) -> Result<(PointCloud, Option<CylinderModel>)> {
    if raw.int_field(CLASS_FIELD).is_none() {
        return Err(Error::data(format!("cloud has no integer {CLASS_FIELD:?} field")));
    }
    let aligned = prepare_geometry(raw, cfg)?.cloud;
    if stage != Stage::MajorMinor {
        return Ok((aligned, None));
    }
    let classes = aligned.int_field(CLASS_FIELD).expect("checked above");
    let idx: Vec<usize> = (0..aligned.len())
        .filter(|&i| matches!(ClassCode::from_code(classes[i]), Some(ClassCode::Major | ClassCode::Minor)))
        .collect();
    let tree = aligned.select(&idx);
    let (scaled, cyl, _) = fit_trunk(&tree, cfg)?;
    Ok((scaled, Some(cyl)))
}

/// Stratified 75/25 split (with an optional cap on rows), forest training
/// and validation.
pub fn train_stage(raw: &PointCloud, stage: Stage, cfg: &PipelineConfig) -> Result<TrainedStage> {
    cfg.validate()?;
    let (cloud, trunk) = training_view(raw, stage, cfg)?;
    let mut ds = stage_dataset(stage, &cloud, trunk.as_ref())?;
    let seed = crate::classifier::derive_seed(cfg.seed, 100 + stage as u64);
    if cfg.max_training_samples > 0 && ds.len() > cfg.max_training_samples {
        let frac = cfg.max_training_samples as f64 / ds.len() as f64;
        ds = split_train_validation(&ds, frac, seed)?.0;
    }
    let (train, valid) = split_train_validation(&ds, cfg.train_fraction, seed.wrapping_add(1))?;
    let forest = train_forest(&train, &cfg.forest_params(stage))?;
    let validation = evaluate(&forest, &valid)?;
    Ok(TrainedStage { forest, validation, n_train: train.len(), n_validation: valid.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate_tree, TreeSpec};

    fn small_spec(seed: u64) -> TreeSpec {
        TreeSpec {
            seed,
            ground_density: 1500.0,
            sky_noise_count: 300,
            leading_branch_count: 3,
            recursion_depth: 1,
            ..TreeSpec::default()
        }
    }

    fn fast_cfg() -> PipelineConfig {
        PipelineConfig { n_trees: 20, max_training_samples: 4000, ..PipelineConfig::default() }
    }

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        let partial: PipelineConfig = serde_json::from_str(r#"{"sor_k": 8}"#).unwrap();
        assert_eq!(partial.sor_k, 8);
        assert_eq!(partial.subsample_mm, 5.0);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"sork": 8}"#).is_err());
    }

    #[test]
    fn rejects_non_positive() {
        let cfg = PipelineConfig { edge_max_mm: 0.0, ..PipelineConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = PipelineConfig { train_fraction: 1.0, ..PipelineConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn output_frame_inverts_alignment() {
        let t = RigidTransform {
            rotation: *nalgebra::Rotation3::from_euler_angles(0.1, -0.2, 0.3).matrix(),
            translation: Vector3::new(0.0, 0.0, -0.4),
        };
        let p = Vector3::new(1.0, 2.0, 3.0);
        let back = to_output_frame(&t.apply(&p), &t, 1.0);
        assert!((back - p).norm() < 1e-12);
        let s = 1.5;
        let scaled = to_output_frame(&(t.apply(&p) * s), &t, s);
        assert!((scaled - p * s).norm() < 1e-12);
    }

    #[test]
    fn missing_model_is_reported() {
        let gt = generate_tree(&small_spec(3)).unwrap();
        let err = run_pipeline(&gt.cloud, &StageModels::default(), &fast_cfg()).unwrap_err();
        assert!(matches!(err, Error::MissingModel(_)));
    }

    #[test]
    fn end_to_end_small_tree() {
        let cfg = fast_cfg();
        let train = generate_tree(&small_spec(11)).unwrap();
        let mut models = StageModels::default();
        for stage in Stage::ALL {
            let t = train_stage(&train.cloud, stage, &cfg).unwrap();
            assert!(t.validation.overall_accuracy.unwrap() > 0.9, "{stage}");
            models.set(stage, t.forest);
        }
        let test = generate_tree(&small_spec(12)).unwrap();
        let out = run_pipeline(&test.cloud, &models, &cfg).unwrap();
        out.doc.validate().unwrap();
        out.skeleton.graph.validate().unwrap();
        assert_eq!(out.labels.len(), test.cloud.len());
        assert!(out.n_leading() >= 1);
        let c = out.counts().clone();
        assert!(c.input >= c.subsampled && c.subsampled >= c.after_ground && c.after_ground >= c.after_noise);
        assert!(c.after_noise >= c.after_sor && c.after_sor >= c.after_components && c.after_components >= c.after_branch);
    }
}
