//! Random-forest classification for the three segmentation stages
//! (ground/tree, noise/tree, major/minor branches) and accuracy reporting.

mod confusion;
mod forest;
mod stages;

pub use confusion::ConfusionMatrix;
pub use forest::{
    derive_seed, evaluate, split_train_validation, train_forest, Dataset, DecisionTree, Evaluation,
    ForestParams, RandomForest, TreeNode,
};
pub use stages::{
    stage_dataset, stage_features, ClassCode, Stage, StageModels, CLASS_FIELD,
};
