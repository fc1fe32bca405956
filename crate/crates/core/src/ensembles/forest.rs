//! Random forest: bootstrap resampling, per-node feature subsampling and
//! majority vote.
//!
//! Tree `t` draws its bootstrap sample from the stream `(seed, t)` and the
//! candidate features of node `n` from `(seed, t, n)`, so trees can be fitted
//! on any number of workers and still produce the same model.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use super::EnsembleError;
use crate::dataset::LabeledDataset;
use crate::rng;
use crate::tree::{grow_classifier, DecisionTree, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features considered per node; `None` means `floor(sqrt(d))`.
    pub mtry: Option<usize>,
    pub tree: TreeParams,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { n_trees: 100, mtry: None, tree: TreeParams::default(), bootstrap: true, seed: 0 }
    }
}

impl ForestParams {
    /// The mtry actually used for `d` features.
    pub fn resolved_mtry(&self, d: usize) -> usize {
        self.mtry.unwrap_or_else(|| default_mtry(d))
    }
}

/// `floor(sqrt(d))`, at least 1.
pub fn default_mtry(d: usize) -> usize {
    ((d as f64).sqrt().floor() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub(crate) trees: Vec<DecisionTree>,
    pub(crate) params: ForestParams,
    pub(crate) n_classes: usize,
    pub(crate) n_features: usize,
}

impl ForestModel {
    pub(crate) fn from_parts(
        trees: Vec<DecisionTree>,
        params: ForestParams,
        n_classes: usize,
        n_features: usize,
    ) -> Result<Self, EnsembleError> {
        if trees.is_empty() {
            return Err(EnsembleError::Contract("forest has no trees".into()));
        }
        if let Some(t) = trees.iter().find(|t| t.n_features() != n_features) {
            return Err(EnsembleError::Contract(format!(
                "tree expects {} features, forest {n_features}",
                t.n_features()
            )));
        }
        let bad_leaf =
            trees.iter().flat_map(|t| t.nodes()).any(|n| matches!(n, crate::tree::Node::Leaf(c) if *c >= n_classes));
        if bad_leaf {
            return Err(EnsembleError::Contract("leaf class outside the vocabulary".into()));
        }
        Ok(ForestModel { trees, params, n_classes, n_features })
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }
}

pub fn train_forest(train: &LabeledDataset, params: &ForestParams) -> Result<ForestModel, EnsembleError> {
    params.tree.validate()?;
    if train.is_empty() {
        return Err(EnsembleError::Tree(crate::tree::TreeError::Empty));
    }
    if params.n_trees == 0 {
        return Err(EnsembleError::Contract("n_trees must be at least 1".into()));
    }
    let d = train.n_features();
    let mtry = params.resolved_mtry(d);
    if mtry == 0 || mtry > d {
        return Err(EnsembleError::Contract(format!("mtry must lie in 1..={d}, got {mtry}")));
    }
    let mut resolved = *params;
    resolved.mtry = Some(mtry);
    let trees = (0..params.n_trees).into_par_iter().map(|t| fit_member(train, &resolved, mtry, t as u64)).collect();
    Ok(ForestModel { trees, params: resolved, n_classes: train.n_classes(), n_features: d })
}

fn fit_member(train: &LabeledDataset, params: &ForestParams, mtry: usize, t: u64) -> DecisionTree {
    let n = train.len();
    let rows: Vec<usize> = if params.bootstrap {
        let mut r = rng::stream(&[params.seed, rng::DOMAIN_BOOTSTRAP, t]);
        (0..n).map(|_| r.gen_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let d = train.n_features();
    if mtry == d {
        return grow_classifier(train, rows, &params.tree, None);
    }
    let seed = params.seed;
    let mut sampler = |node: usize| {
        let mut r = rng::stream(&[seed, rng::DOMAIN_MTRY, t, node as u64]);
        let mut f = index::sample(&mut r, d, mtry).into_vec();
        f.sort_unstable();
        f
    };
    grow_classifier(train, rows, &params.tree, Some(&mut sampler))
}

/// Majority vote. Returns the winning class (ties to the lowest index) and
/// the per-class vote counts.
pub fn predict_forest(model: &ForestModel, x: &[f64]) -> (usize, Vec<u32>) {
    let mut votes = vec![0u32; model.n_classes];
    for t in &model.trees {
        votes[t.leaf_value(x)] += 1;
    }
    let mut best = 0;
    for (c, &v) in votes.iter().enumerate() {
        if v > votes[best] {
            best = c;
        }
    }
    (best, votes)
}

/// Vote fractions `votes_c / n_trees`, used as per-class scores.
pub fn vote_fractions(votes: &[u32]) -> Vec<f64> {
    let n: u32 = votes.iter().sum();
    votes.iter().map(|&v| v as f64 / n.max(1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FeatureMatrix;
    use crate::tree::{train_tree, Tree};

    fn noisy_blobs(n: usize, seed: u64) -> LabeledDataset {
        let mut r = rng::stream(&[seed]);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 3;
            let row: Vec<f64> = (0..5).map(|j| (c * (j + 1)) as f64 + r.gen_range(-2.0..2.0)).collect();
            rows.push(row);
            labels.push(c);
        }
        LabeledDataset::new(FeatureMatrix::from_rows(&rows), labels, vec!["a".into(), "b".into(), "c".into()])
    }

    #[test]
    fn default_mtry_for_schema_width() {
        assert_eq!(default_mtry(18), 4);
        assert_eq!(default_mtry(1), 1);
    }

    #[test]
    fn single_full_sample_tree_matches_plain_tree() {
        let d = noisy_blobs(90, 1);
        let p = ForestParams { n_trees: 1, mtry: Some(5), bootstrap: false, ..ForestParams::default() };
        let f = train_forest(&d, &p).unwrap();
        let t = train_tree(&d, &p.tree).unwrap();
        assert_eq!(f.trees[0], t);
        for i in 0..d.len() {
            assert_eq!(predict_forest(&f, d.features.row(i)).0, t.leaf_value(d.features.row(i)));
        }
    }

    #[test]
    fn same_seed_same_forest_and_seed_matters() {
        let d = noisy_blobs(60, 2);
        let p = ForestParams { n_trees: 8, seed: 5, ..ForestParams::default() };
        assert_eq!(train_forest(&d, &p).unwrap(), train_forest(&d, &p).unwrap());
        let q = ForestParams { seed: 6, ..p };
        assert_ne!(train_forest(&d, &p).unwrap().trees, train_forest(&d, &q).unwrap().trees);
    }

    #[test]
    fn pure_data_votes_unanimously() {
        let rows: Vec<[f64; 2]> = (0..10).map(|i| [i as f64, 1.0]).collect();
        let d = LabeledDataset::new(FeatureMatrix::from_rows(&rows), vec![1; 10], vec!["a".into(), "b".into()]);
        let f = train_forest(&d, &ForestParams { n_trees: 7, ..ForestParams::default() }).unwrap();
        assert!(f.trees.iter().all(|t| t.n_leaves() == 1));
        let (c, votes) = predict_forest(&f, &[3.0, 1.0]);
        assert_eq!(c, 1);
        assert_eq!(vote_fractions(&votes), vec![0.0, 1.0]);
    }

    fn stump_forest(classes: &[usize], k: usize) -> ForestModel {
        let trees = classes.iter().map(|&c| Tree::leaf(c, 1)).collect();
        ForestModel::from_parts(trees, ForestParams::default(), k, 1).unwrap()
    }

    #[test]
    fn vote_counting_and_ties() {
        let (c, votes) = predict_forest(&stump_forest(&[0, 0, 1], 2), &[0.0]);
        assert_eq!(c, 0);
        let s = vote_fractions(&votes);
        assert!((s[0] - 2.0 / 3.0).abs() < 1e-15 && (s[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(predict_forest(&stump_forest(&[1, 0], 2), &[0.0]).0, 0);
        assert_eq!(predict_forest(&stump_forest(&[2, 2], 3), &[0.0]), (2, vec![0, 0, 2]));
    }

    #[test]
    fn rejects_bad_params() {
        let d = noisy_blobs(10, 3);
        assert!(train_forest(&d, &ForestParams { n_trees: 0, ..ForestParams::default() }).is_err());
        assert!(train_forest(&d, &ForestParams { mtry: Some(6), ..ForestParams::default() }).is_err());
        assert!(train_forest(&d, &ForestParams { mtry: Some(0), ..ForestParams::default() }).is_err());
    }
}
