//! Multi-class gradient boosting with second-order (gradient + hessian) trees,
//! in the style of XGBoost's softmax objective. Not format-compatible with it.
//!
//! Each round computes `p = softmax(F)` per row, gradients `g = p − 1[y = c]`
//! and hessians `h = p(1 − p)`, fits one regression tree per class on `(g, h)`
//! and updates `F_c += η · tree_c(x)`.

use rayon::prelude::*;

use super::{argmax, EnsembleError};
use crate::dataset::LabeledDataset;
use crate::tree::{grow_second_order, RegressionTree, TreeError, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbtParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            n_rounds: 100,
            learning_rate: 0.1,
            max_depth: 6,
            min_samples_split: 2,
            lambda: 1.0,
            gamma: 0.0,
            seed: 0,
        }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<(), EnsembleError> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(EnsembleError::Contract(format!(
                "learning rate must lie in (0, 1], got {}",
                self.learning_rate
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) || !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(EnsembleError::Contract("lambda and gamma must be finite and >= 0".into()));
        }
        self.tree_params().validate()?;
        Ok(())
    }

    fn tree_params(&self) -> TreeParams {
        TreeParams { max_depth: self.max_depth, min_samples_split: self.min_samples_split, min_impurity_decrease: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostedModel {
    /// `rounds[r][c]` is the tree for class `c` in round `r`.
    pub(crate) rounds: Vec<Vec<RegressionTree>>,
    pub(crate) base_score: Vec<f64>,
    pub(crate) params: GbtParams,
    pub(crate) n_features: usize,
    /// Training log-loss after each round.
    pub(crate) train_loss: Vec<f64>,
}

impl BoostedModel {
    pub(crate) fn from_parts(
        rounds: Vec<Vec<RegressionTree>>,
        base_score: Vec<f64>,
        params: GbtParams,
        n_features: usize,
        train_loss: Vec<f64>,
    ) -> Result<Self, EnsembleError> {
        let k = base_score.len();
        if k < 2 {
            return Err(EnsembleError::Contract("boosted model needs at least 2 classes".into()));
        }
        if let Some(r) = rounds.iter().position(|r| r.len() != k) {
            return Err(EnsembleError::Contract(format!("round {r} does not hold {k} trees")));
        }
        if rounds.iter().flatten().any(|t| t.n_features() != n_features) {
            return Err(EnsembleError::Contract("tree feature count differs from the model".into()));
        }
        params.validate()?;
        Ok(BoostedModel { rounds, base_score, params, n_features, train_loss })
    }

    /// A model that has not been boosted yet: uniform predictions.
    pub fn untrained(n_classes: usize, n_features: usize, params: GbtParams) -> Self {
        BoostedModel {
            rounds: Vec::new(),
            base_score: vec![0.0; n_classes],
            params,
            n_features,
            train_loss: Vec::new(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.base_score.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn rounds(&self) -> &[Vec<RegressionTree>] {
        &self.rounds
    }

    pub fn params(&self) -> &GbtParams {
        &self.params
    }

    pub fn train_loss(&self) -> &[f64] {
        &self.train_loss
    }

    /// Accumulated raw class scores `F(x)`.
    pub fn raw_scores(&self, x: &[f64]) -> Vec<f64> {
        let eta = self.params.learning_rate;
        let mut f = self.base_score.clone();
        for round in &self.rounds {
            for (c, tree) in round.iter().enumerate() {
                f[c] += eta * tree.leaf_value(x);
            }
        }
        f
    }
}

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Multiclass log-loss `−log softmax(F)_y` of one row.
pub fn row_log_loss(scores: &[f64], y: usize) -> f64 {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
    lse - scores[y]
}

/// Analytic gradient `p − onehot(y)` and diagonal hessian `p(1 − p)` of the
/// row log-loss with respect to the class scores.
pub fn row_grad_hess(scores: &[f64], y: usize) -> (Vec<f64>, Vec<f64>) {
    let p = softmax(scores);
    let g = p.iter().enumerate().map(|(c, &pc)| pc - if c == y { 1.0 } else { 0.0 }).collect();
    let h = p.iter().map(|&pc| pc * (1.0 - pc)).collect();
    (g, h)
}

fn mean_log_loss(f: &[f64], labels: &[usize], k: usize) -> f64 {
    let total: f64 = labels.iter().enumerate().map(|(i, &y)| row_log_loss(&f[i * k..(i + 1) * k], y)).sum();
    total / labels.len() as f64
}

pub fn train_gbt(train: &LabeledDataset, params: &GbtParams) -> Result<BoostedModel, EnsembleError> {
    params.validate()?;
    if train.is_empty() {
        return Err(TreeError::Empty.into());
    }
    if train.classes_present() < 2 {
        return Err(EnsembleError::Contract("boosting needs at least 2 classes in the training data".into()));
    }
    let n = train.len();
    let k = train.n_classes();
    let x = &train.features;
    let tree_params = params.tree_params();
    let mut model = BoostedModel::untrained(k, train.n_features(), *params);
    // Row-major scores: f[i * k + c].
    let mut f: Vec<f64> = (0..n).flat_map(|_| model.base_score.clone()).collect();
    let mut grad = vec![vec![0.0; n]; k];
    let mut hess = vec![vec![0.0; n]; k];
    for _ in 0..params.n_rounds {
        for (i, &y) in train.labels.iter().enumerate() {
            let (g, h) = row_grad_hess(&f[i * k..(i + 1) * k], y);
            for c in 0..k {
                grad[c][i] = g[c];
                hess[c][i] = h[c];
            }
        }
        let trees: Vec<RegressionTree> = (0..k)
            .into_par_iter()
            .map(|c| grow_second_order(x, &grad[c], &hess[c], params.lambda, params.gamma, &tree_params))
            .collect();
        for (i, row) in x.rows().enumerate() {
            for (c, t) in trees.iter().enumerate() {
                f[i * k + c] += params.learning_rate * t.leaf_value(row);
            }
        }
        model.rounds.push(trees);
        model.train_loss.push(mean_log_loss(&f, &train.labels, k));
    }
    Ok(model)
}

/// Predicted class (argmax of the raw scores, ties to the lowest index) and
/// class probabilities.
pub fn predict_gbt(model: &BoostedModel, x: &[f64]) -> (usize, Vec<f64>) {
    let f = model.raw_scores(x);
    (argmax(&f), softmax(&f))
}
