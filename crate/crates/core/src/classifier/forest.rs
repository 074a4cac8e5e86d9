use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ConfusionMatrix;
use crate::error::{Error, Result};

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_features: usize,
    features: Vec<f64>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::data("dataset has no samples"));
        }
        if rows.len() != labels.len() {
            return Err(Error::data(format!("{} rows but {} labels", rows.len(), labels.len())));
        }
        let d = rows[0].len();
        if d == 0 {
            return Err(Error::data("dataset has no features"));
        }
        let mut features = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::data(format!("row {i} has {} features, expected {d}", r.len())));
            }
            features.extend_from_slice(r);
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::data(format!("label {bad} outside {} classes", class_names.len())));
        }
        Ok(Dataset { n_features: d, features, labels, class_names })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    #[inline]
    fn value(&self, i: usize, f: usize) -> f64 {
        self.features[i * self.n_features + f]
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(idx.len() * self.n_features);
        for &i in idx {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            n_features: self.n_features,
            features,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes()];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

/// Deterministic per-item seed from a master seed (splitmix64 finalizer).
pub fn derive_seed(master: u64, item: u64) -> u64 {
    let mut z = master ^ item.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stratified split. Each class contributes its share of `round(fraction * n)`
/// training samples (largest remainder), and at least one sample to each side.
pub fn split_train_validation(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::param(format!("train fraction must be in (0, 1), got {train_fraction}")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes()];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for (c, members) in by_class.iter().enumerate() {
        if members.len() == 1 {
            return Err(Error::data(format!(
                "class {:?} has a single sample; stratification needs at least 2",
                ds.class_names[c]
            )));
        }
    }
    let target = (train_fraction * ds.len() as f64).round() as usize;
    let ideal: Vec<f64> = by_class.iter().map(|m| m.len() as f64 * train_fraction).collect();
    let mut quota: Vec<usize> = ideal.iter().map(|v| v.floor() as usize).collect();
    let mut order: Vec<usize> = (0..quota.len()).filter(|&c| !by_class[c].is_empty()).collect();
    order.sort_by(|&a, &b| (ideal[b] - ideal[b].floor()).total_cmp(&(ideal[a] - ideal[a].floor())).then(a.cmp(&b)));
    let mut assigned: usize = quota.iter().sum();
    for &c in order.iter().cycle().take(order.len()) {
        if assigned >= target {
            break;
        }
        quota[c] += 1;
        assigned += 1;
    }
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for (c, members) in by_class.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, c as u64));
        let mut m = members.clone();
        m.shuffle(&mut rng);
        let q = quota[c].clamp(1, m.len() - 1);
        train.extend_from_slice(&m[..q]);
        valid.extend_from_slice(&m[q..]);
    }
    train.sort_unstable();
    valid.sort_unstable();
    Ok((ds.subset(&train), ds.subset(&valid)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Features examined per split; 0 means `floor(sqrt(d))`.
    pub features_per_split: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { n_trees: 200, max_depth: 30, min_samples_split: 10, features_per_split: 0, seed: 0 }
    }
}

impl ForestParams {
    fn mtry(&self, d: usize) -> usize {
        if self.features_per_split == 0 {
            ((d as f64).sqrt().floor() as usize).max(1)
        } else {
            self.features_per_split.min(d)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { probs: Vec<f64> },
}

/// CART tree; node 0 is the root. Samples with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub fn leaf(probs: Vec<f64>) -> Self {
        DecisionTree { nodes: vec![TreeNode::Leaf { probs }] }
    }

    pub fn predict_proba(&self, x: &[f64]) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Split { feature, threshold, left, right } => {
                    at = if x[*feature] <= *threshold { *left } else { *right };
                }
                TreeNode::Leaf { probs } => return probs,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &DecisionTree, at: usize) -> usize {
            match &t.nodes[at] {
                TreeNode::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
                TreeNode::Leaf { .. } => 0,
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub params: ForestParams,
    pub n_features: usize,
    pub class_names: Vec<String>,
    pub trees: Vec<DecisionTree>,
}

struct Grower<'a> {
    ds: &'a Dataset,
    params: &'a ForestParams,
    mtry: usize,
    nodes: Vec<TreeNode>,
    rng: ChaCha8Rng,
}

impl Grower<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.ds.n_classes()];
        for &i in idx {
            c[self.ds.labels[i]] += 1;
        }
        c
    }

    fn leaf(&mut self, counts: &[usize]) -> usize {
        let n: usize = counts.iter().sum();
        let probs = counts.iter().map(|&c| c as f64 / n as f64).collect();
        self.nodes.push(TreeNode::Leaf { probs });
        self.nodes.len() - 1
    }

    /// Best Gini split on one feature: (weighted impurity, threshold).
    fn best_on_feature(&self, idx: &mut [usize], f: usize, total: &[usize]) -> Option<(f64, f64)> {
        let ds = self.ds;
        idx.sort_unstable_by(|&a, &b| ds.value(a, f).total_cmp(&ds.value(b, f)));
        let n = idx.len();
        let mut left = vec![0usize; total.len()];
        let mut best: Option<(f64, f64)> = None;
        // Running sums of squared class counts turn each Gini update into O(1).
        let mut sq_left = 0.0f64;
        let mut sq_right: f64 = total.iter().map(|&c| (c * c) as f64).sum();
        for k in 0..n - 1 {
            let l = ds.labels[idx[k]];
            let (lc, rc) = (left[l] as f64, (total[l] - left[l]) as f64);
            sq_left += 2.0 * lc + 1.0;
            sq_right -= 2.0 * rc - 1.0;
            left[l] += 1;
            let (v, w) = (ds.value(idx[k], f), ds.value(idx[k + 1], f));
            if v >= w {
                continue;
            }
            let nl = (k + 1) as f64;
            let nr = (n - k - 1) as f64;
            // n_l * gini_l + n_r * gini_r
            let impurity = (nl - sq_left / nl) + (nr - sq_right / nr);
            if best.is_none_or(|(b, _)| impurity < b) {
                let mut thr = 0.5 * (v + w);
                if thr >= w {
                    thr = v;
                }
                best = Some((impurity, thr));
            }
        }
        best
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let counts = self.counts(idx);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.params.max_depth || idx.len() < self.params.min_samples_split.max(2) {
            return self.leaf(&counts);
        }
        let mut feats: Vec<usize> = (0..self.ds.n_features).collect();
        feats.shuffle(&mut self.rng);
        let mut best: Option<(f64, usize, f64)> = None;
        for (k, &f) in feats.iter().enumerate() {
            // Keep looking past mtry only while no valid split has been found.
            if k >= self.mtry && best.is_some() {
                break;
            }
            if let Some((imp, thr)) = self.best_on_feature(idx, f, &counts) {
                if best.is_none_or(|(b, _, _)| imp < b) {
                    best = Some((imp, f, thr));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return self.leaf(&counts);
        };
        let ds = self.ds;
        idx.sort_unstable_by(|&a, &b| ds.value(a, feature).total_cmp(&ds.value(b, feature)));
        let split = idx.partition_point(|&i| ds.value(i, feature) <= threshold);
        let me = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { probs: Vec::new() });
        let (l, r) = idx.split_at_mut(split);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[me] = TreeNode::Split { feature, threshold, left, right };
        me
    }
}

/// Bootstrap-aggregated CART forest with Gini splits. Tree `t` draws its
/// randomness from `derive_seed(params.seed, t)`, so parallel and serial
/// training agree.
pub fn train_forest(ds: &Dataset, params: &ForestParams) -> Result<RandomForest> {
    if ds.is_empty() {
        return Err(Error::data("cannot train on an empty dataset"));
    }
    if params.n_trees == 0 || params.max_depth == 0 || params.min_samples_split == 0 {
        return Err(Error::param(format!("forest parameters must be positive: {params:?}")));
    }
    let mtry = params.mtry(ds.n_features);
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, t as u64));
            let n = ds.len();
            let mut sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut g = Grower { ds, params, mtry, nodes: Vec::new(), rng };
            g.grow(&mut sample, 0);
            DecisionTree { nodes: g.nodes }
        })
        .collect();
    Ok(RandomForest { params: *params, n_features: ds.n_features, class_names: ds.class_names.clone(), trees })
}

impl RandomForest {
    pub fn from_trees(trees: Vec<DecisionTree>, n_features: usize, class_names: Vec<String>) -> Self {
        let params = ForestParams { n_trees: trees.len(), ..ForestParams::default() };
        RandomForest { params, n_features, class_names, trees }
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Mean leaf distribution over trees and its argmax (lowest class on ties).
    pub fn predict(&self, x: &[f64]) -> Result<(usize, Vec<f64>)> {
        if x.len() != self.n_features {
            return Err(Error::data(format!(
                "feature row has {} values, model expects {}",
                x.len(),
                self.n_features
            )));
        }
        let mut probs = vec![0.0; self.n_classes()];
        for t in &self.trees {
            for (p, q) in probs.iter_mut().zip(t.predict_proba(x)) {
                *p += q;
            }
        }
        let nt = self.trees.len().max(1) as f64;
        probs.iter_mut().for_each(|p| *p /= nt);
        Ok((argmax(&probs), probs))
    }

    pub fn predict_labels(&self, rows: &[Vec<f64>]) -> Result<Vec<usize>> {
        rows.par_iter().map(|r| self.predict(r).map(|(l, _)| l)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub matrix: ConfusionMatrix,
    pub overall_accuracy: Option<f64>,
    pub producers_accuracy: Vec<Option<f64>>,
    pub users_accuracy: Vec<Option<f64>>,
}

impl Evaluation {
    pub fn from_matrix(matrix: ConfusionMatrix) -> Self {
        let c = matrix.n_classes();
        Evaluation {
            overall_accuracy: matrix.overall_accuracy(),
            producers_accuracy: (0..c).map(|k| matrix.producers_accuracy(k)).collect(),
            users_accuracy: (0..c).map(|k| matrix.users_accuracy(k)).collect(),
            matrix,
        }
    }
}

pub fn evaluate(forest: &RandomForest, ds: &Dataset) -> Result<Evaluation> {
    if ds.is_empty() {
        return Err(Error::data("cannot evaluate on an empty dataset"));
    }
    let preds: Vec<usize> = (0..ds.len())
        .into_par_iter()
        .map(|i| forest.predict(ds.row(i)).map(|(l, _)| l))
        .collect::<Result<_>>()?;
    let matrix = ConfusionMatrix::from_pairs(
        ds.class_names.clone(),
        ds.labels.iter().copied().zip(preds),
    );
    Ok(Evaluation::from_matrix(matrix))
}
