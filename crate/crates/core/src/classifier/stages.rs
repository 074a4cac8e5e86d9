use std::fmt;
use std::str::FromStr;

use super::{Dataset, RandomForest};
use crate::cloud::{rgb_to_cielab, PointCloud};
use crate::error::{Error, Result};
use crate::features::{compute_all_features, verticality_all};
use crate::geometry::CylinderModel;

/// Integer scalar field carrying per-point semantic classes.
pub const CLASS_FIELD: &str = "class";

/// Semantic class codes stored in the `class` field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(i64)]
pub enum ClassCode {
    Ground = 0,
    Noise = 1,
    Major = 2,
    Minor = 3,
}

impl ClassCode {
    pub fn from_code(v: i64) -> Option<Self> {
        match v {
            0 => Some(ClassCode::Ground),
            1 => Some(ClassCode::Noise),
            2 => Some(ClassCode::Major),
            3 => Some(ClassCode::Minor),
            _ => None,
        }
    }
}

/// The three binary segmentation stages, applied in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    /// Height above ground and 15 cm verticality: ground vs tree.
    GroundTree,
    /// CIELAB color: sky noise vs tree.
    NoiseTree,
    /// Geometric features f1..f20: major vs minor branches.
    MajorMinor,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::GroundTree, Stage::NoiseTree, Stage::MajorMinor];

    pub fn class_names(self) -> Vec<String> {
        let n: [&str; 2] = match self {
            Stage::GroundTree => ["ground", "tree"],
            Stage::NoiseTree => ["noise", "tree"],
            Stage::MajorMinor => ["major", "minor"],
        };
        n.iter().map(|s| s.to_string()).collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::GroundTree => "ground",
            Stage::NoiseTree => "noise",
            Stage::MajorMinor => "branch",
        }
    }

    /// Binary label of a semantic class within this stage, or `None` when the
    /// class does not take part in the stage.
    fn label_of(self, c: ClassCode) -> Option<usize> {
        match (self, c) {
            (Stage::GroundTree, ClassCode::Ground) => Some(0),
            (Stage::GroundTree, _) => Some(1),
            (Stage::NoiseTree, ClassCode::Ground) => None,
            (Stage::NoiseTree, ClassCode::Noise) => Some(0),
            (Stage::NoiseTree, _) => Some(1),
            (Stage::MajorMinor, ClassCode::Major) => Some(0),
            (Stage::MajorMinor, ClassCode::Minor) => Some(1),
            (Stage::MajorMinor, _) => None,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "ground" => Ok(Stage::GroundTree),
            "2" | "noise" => Ok(Stage::NoiseTree),
            "3" | "branch" | "branches" => Ok(Stage::MajorMinor),
            _ => Err(Error::param(format!("unknown stage {s:?} (expected ground, noise or branch)"))),
        }
    }
}

/// Feature rows for a stage, one per point of `cloud`.
///
/// The ground stage expects a ground-aligned cloud and uses its
/// `ground_dist` field (falling back to z).
pub fn stage_features(stage: Stage, cloud: &PointCloud, trunk: Option<&CylinderModel>) -> Result<Vec<Vec<f64>>> {
    match stage {
        Stage::GroundTree => {
            let vert = verticality_all(cloud);
            let heights: Vec<f64> = match cloud.real_field("ground_dist") {
                Some(h) => h.to_vec(),
                None => cloud.points().iter().map(|p| p.z).collect(),
            };
            Ok(heights.into_iter().zip(vert).map(|(h, v)| vec![h, v]).collect())
        }
        Stage::NoiseTree => cloud
            .points()
            .iter()
            .map(|p| {
                let [r, g, b] = p
                    .color
                    .ok_or_else(|| Error::data("noise stage needs colored points"))?;
                rgb_to_cielab(r as i32, g as i32, b as i32).map(|lab| lab.to_vec())
            })
            .collect(),
        Stage::MajorMinor => {
            let trunk = trunk.ok_or_else(|| Error::data("branch stage needs a fitted trunk cylinder"))?;
            Ok(compute_all_features(cloud, trunk)?.to_rows())
        }
    }
}

/// Training data for one stage from a cloud labeled with the `class` field.
///
/// Only the points taking part in the stage are used, and features are
/// computed on that sub-cloud, mirroring what the stage sees at inference.
pub fn stage_dataset(stage: Stage, cloud: &PointCloud, trunk: Option<&CylinderModel>) -> Result<Dataset> {
    let classes = cloud
        .int_field(CLASS_FIELD)
        .ok_or_else(|| Error::data(format!("cloud has no integer {CLASS_FIELD:?} field")))?;
    let mut idx = Vec::new();
    let mut labels = Vec::new();
    for (i, &c) in classes.iter().enumerate() {
        let code = ClassCode::from_code(c)
            .ok_or_else(|| Error::data(format!("point {i} has unknown class code {c}")))?;
        if let Some(l) = stage.label_of(code) {
            idx.push(i);
            labels.push(l);
        }
    }
    if idx.is_empty() {
        return Err(Error::data(format!("no points take part in the {stage} stage")));
    }
    // The ground stage sees the whole cloud, later stages only what survived.
    let rows = if stage == Stage::GroundTree {
        stage_features(stage, cloud, trunk)?
    } else {
        stage_features(stage, &cloud.select(&idx), trunk)?
    };
    let rows = if stage == Stage::GroundTree { idx.iter().map(|&i| rows[i].clone()).collect() } else { rows };
    Dataset::new(rows, labels, stage.class_names())
}

/// Trained forests for the three stages.
#[derive(Debug, Clone, Default)]
pub struct StageModels {
    pub ground: Option<RandomForest>,
    pub noise: Option<RandomForest>,
    pub branch: Option<RandomForest>,
}

impl StageModels {
    pub fn get(&self, stage: Stage) -> Option<&RandomForest> {
        match stage {
            Stage::GroundTree => self.ground.as_ref(),
            Stage::NoiseTree => self.noise.as_ref(),
            Stage::MajorMinor => self.branch.as_ref(),
        }
    }

    pub fn set(&mut self, stage: Stage, model: RandomForest) {
        match stage {
            Stage::GroundTree => self.ground = Some(model),
            Stage::NoiseTree => self.noise = Some(model),
            Stage::MajorMinor => self.branch = Some(model),
        }
    }

    /// Indices of points the stage keeps (label 1 for ground/noise, label 0
    /// for the branch stage).
    pub fn keep_mask(&self, stage: Stage, cloud: &PointCloud, trunk: Option<&CylinderModel>) -> Result<Vec<bool>> {
        let model = self.get(stage).ok_or(Error::MissingModel(stage.name()))?;
        if cloud.is_empty() {
            return Ok(Vec::new());
        }
        let rows = stage_features(stage, cloud, trunk)?;
        let labels = model.predict_labels(&rows)?;
        let keep_label = if stage == Stage::MajorMinor { 0 } else { 1 };
        Ok(labels.into_iter().map(|l| l == keep_label).collect())
    }
}
