//! One-vs-rest linear SVM trained by Pegasos-style subgradient descent.
//!
//! Features are standardized with statistics stored in the model; a constant
//! training column has `σ = 0` and is mapped to 0. Each class `c` gets a
//! binary problem (`+1` for class `c`, `−1` otherwise) minimizing
//! `λ/2 ‖(w, b)‖² + mean hinge loss` with step `1/(λ t)`, a projection onto
//! the ball of radius `1/√λ`, and a seeded shuffle per epoch. The returned
//! weights are the average of the iterates over the second half of training.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{FeatureMatrix, LabeledDataset};
use crate::ensembles::argmax;
use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum SvmError {
    #[error("{0}")]
    Contract(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams { lambda: 1e-4, epochs: 20, seed: 0 }
    }
}

/// Per-feature mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &FeatureMatrix) -> Self {
        let n = x.n_rows() as f64;
        let d = x.n_cols();
        let mut mean = vec![0.0; d];
        let mut std = vec![0.0; d];
        for j in 0..d {
            let col = || x.rows().map(move |r| r[j]);
            let first = x.get(0, j);
            if col().all(|v| v == first) {
                mean[j] = first;
                continue;
            }
            let mu = col().sum::<f64>() / n;
            let var = col().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            mean[j] = mu;
            std[j] = var.sqrt();
        }
        Standardizer { mean, std }
    }

    pub fn transform(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(x.iter().zip(self.mean.iter().zip(&self.std)).map(
            |(v, (mu, sd))| {
                if *sd > 0.0 {
                    (v - mu) / sd
                } else {
                    0.0
                }
            },
        ));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvmSet {
    pub(crate) weights: Vec<Vec<f64>>,
    pub(crate) biases: Vec<f64>,
    pub(crate) scaler: Standardizer,
    pub(crate) params: SvmParams,
}

impl LinearSvmSet {
    pub(crate) fn from_parts(
        weights: Vec<Vec<f64>>,
        biases: Vec<f64>,
        scaler: Standardizer,
        params: SvmParams,
    ) -> Result<Self, SvmError> {
        let d = scaler.mean.len();
        if scaler.std.len() != d {
            return Err(SvmError::Contract("mean and std lengths differ".into()));
        }
        if scaler.std.iter().any(|s| *s < 0.0) {
            return Err(SvmError::Contract("negative standard deviation".into()));
        }
        if weights.len() != biases.len() || weights.len() < 2 {
            return Err(SvmError::Contract("need one weight vector and bias per class, at least 2".into()));
        }
        if weights.iter().any(|w| w.len() != d) {
            return Err(SvmError::Contract("weight vector length differs from feature count".into()));
        }
        Ok(LinearSvmSet { weights, biases, scaler, params })
    }

    pub fn n_classes(&self) -> usize {
        self.weights.len()
    }

    pub fn n_features(&self) -> usize {
        self.scaler.mean.len()
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn scaler(&self) -> &Standardizer {
        &self.scaler
    }

    pub fn params(&self) -> &SvmParams {
        &self.params
    }

    /// `w_c · x' + b_c` for every class.
    pub fn margins(&self, x: &[f64]) -> Vec<f64> {
        let mut z = Vec::with_capacity(x.len());
        self.scaler.transform(x, &mut z);
        self.weights.iter().zip(&self.biases).map(|(w, b)| dot(w, &z) + b).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `λ/2 ‖w‖² + mean max(0, 1 − y (w·x + b))` over standardized rows.
pub fn hinge_objective(w: &[f64], b: f64, xs: &[Vec<f64>], ys: &[f64], lambda: f64) -> f64 {
    let reg = 0.5 * lambda * dot(w, w);
    let loss: f64 = xs.iter().zip(ys).map(|(x, y)| (1.0 - y * (dot(w, x) + b)).max(0.0)).sum();
    reg + loss / xs.len() as f64
}

/// Binary Pegasos on standardized rows with labels in {−1, +1}.
pub fn pegasos(xs: &[Vec<f64>], ys: &[f64], lambda: f64, epochs: usize, stream: &[u64]) -> (Vec<f64>, f64) {
    let d = xs.first().map_or(0, Vec::len);
    let n = xs.len();
    let total_steps = (epochs * n) as u64;
    let average_from = total_steps / 2;
    let radius = 1.0 / lambda.sqrt();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut avg_w = vec![0.0; d];
    let mut avg_b = 0.0;
    let mut averaged = 0u64;
    let mut order: Vec<usize> = (0..n).collect();
    let mut t = 0u64;
    for epoch in 0..epochs {
        let mut parts = stream.to_vec();
        parts.push(epoch as u64);
        order.shuffle(&mut rng::stream(&parts));
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let violated = ys[i] * (dot(&w, &xs[i]) + b) < 1.0;
            let shrink = 1.0 - eta * lambda;
            for wj in w.iter_mut() {
                *wj *= shrink;
            }
            b *= shrink;
            if violated {
                for (wj, xj) in w.iter_mut().zip(&xs[i]) {
                    *wj += eta * ys[i] * xj;
                }
                b += eta * ys[i];
            }
            let norm = (dot(&w, &w) + b * b).sqrt();
            if norm > radius {
                let s = radius / norm;
                for wj in w.iter_mut() {
                    *wj *= s;
                }
                b *= s;
            }
            if t > average_from {
                averaged += 1;
                let k = averaged as f64;
                for (a, wj) in avg_w.iter_mut().zip(&w) {
                    *a += (wj - *a) / k;
                }
                avg_b += (b - avg_b) / k;
            }
        }
    }
    (avg_w, avg_b)
}

pub fn train_svm(train: &LabeledDataset, params: &SvmParams) -> Result<LinearSvmSet, SvmError> {
    if train.len() < 2 {
        return Err(SvmError::Contract("SVM training needs at least 2 rows".into()));
    }
    if train.classes_present() < 2 {
        return Err(SvmError::Contract("SVM training needs at least 2 classes".into()));
    }
    if !(params.lambda > 0.0 && params.lambda.is_finite()) {
        return Err(SvmError::Contract(format!("lambda must be positive, got {}", params.lambda)));
    }
    if params.epochs == 0 {
        return Err(SvmError::Contract("epochs must be at least 1".into()));
    }
    let scaler = Standardizer::fit(&train.features);
    let xs: Vec<Vec<f64>> = train
        .features
        .rows()
        .map(|r| {
            let mut z = Vec::new();
            scaler.transform(r, &mut z);
            z
        })
        .collect();
    let fitted: Vec<(Vec<f64>, f64)> = (0..train.n_classes())
        .into_par_iter()
        .map(|c| {
            let ys: Vec<f64> = train.labels.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect();
            pegasos(&xs, &ys, params.lambda, params.epochs, &[params.seed, rng::DOMAIN_SVM, c as u64])
        })
        .collect();
    let (weights, biases) = fitted.into_iter().unzip();
    Ok(LinearSvmSet { weights, biases, scaler, params: *params })
}

/// Highest-margin class (ties to the lowest index) and the raw margins.
pub fn predict_svm(model: &LinearSvmSet, x: &[f64]) -> (usize, Vec<f64>) {
    let m = model.margins(x);
    (argmax(&m), m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class(rows: &[[f64; 1]], labels: &[usize]) -> LabeledDataset {
        LabeledDataset::new(FeatureMatrix::from_rows(rows), labels.to_vec(), vec!["neg".into(), "pos".into()])
    }

    #[test]
    fn separable_pair() {
        let d = two_class(&[[-1.0], [1.0]], &[0, 1]);
        let m = train_svm(&d, &SvmParams::default()).unwrap();
        assert_eq!(predict_svm(&m, &[-1.0]).0, 0);
        assert_eq!(predict_svm(&m, &[1.0]).0, 1);
        let (_, margins) = predict_svm(&m, &[1.0]);
        assert!(margins[1] > margins[0]);
    }

    #[test]
    fn constant_column_contributes_nothing() {
        let rows = [[-1.0, 7.0], [-2.0, 7.0], [1.0, 7.0], [2.0, 7.0]];
        let d = LabeledDataset::new(FeatureMatrix::from_rows(&rows), vec![0, 0, 1, 1], vec!["a".into(), "b".into()]);
        let m = train_svm(&d, &SvmParams::default()).unwrap();
        assert_eq!(m.scaler.std[1], 0.0);
        assert_eq!(m.margins(&[1.0, 7.0]), m.margins(&[1.0, -1e9]));
        let mut z = Vec::new();
        m.scaler.transform(&[0.0, 123.0], &mut z);
        assert_eq!(z[1], 0.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let d = two_class(&[[-1.0], [-0.5], [0.3], [1.0], [0.1]], &[0, 0, 1, 1, 0]);
        let p = SvmParams { seed: 3, ..SvmParams::default() };
        assert_eq!(train_svm(&d, &p).unwrap(), train_svm(&d, &p).unwrap());
    }

    #[test]
    fn equal_margins_pick_class_zero() {
        let m = LinearSvmSet::from_parts(
            vec![vec![1.0], vec![-1.0]],
            vec![0.0, 0.0],
            Standardizer { mean: vec![0.0], std: vec![1.0] },
            SvmParams::default(),
        )
        .unwrap();
        let (c, margins) = predict_svm(&m, &[0.0]);
        assert_eq!(margins, vec![0.0, -0.0]);
        assert_eq!(c, 0);
    }

    fn separable(n: usize, scale: f64) -> LabeledDataset {
        use rand::Rng;
        let mut r = rng::stream(&[77]);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let side = if c == 1 { 1.0 } else { -1.0 };
            let row = vec![
                scale * (side * r.gen_range(0.5..3.0)),
                r.gen_range(-5.0..5.0),
                side * r.gen_range(0.0..1.0) + r.gen_range(-0.2..0.2),
            ];
            rows.push(row);
            labels.push(c);
        }
        LabeledDataset::new(FeatureMatrix::from_rows(&rows), labels, vec!["a".into(), "b".into()])
    }

    #[test]
    fn fits_separable_data_and_lowers_objective() {
        let d = separable(200, 1.0);
        let m = train_svm(&d, &SvmParams { seed: 9, ..SvmParams::default() }).unwrap();
        let hits = (0..d.len()).filter(|&i| predict_svm(&m, d.features.row(i)).0 == d.labels[i]).count();
        assert!(hits as f64 / d.len() as f64 >= 0.95, "accuracy {hits}/200");
        let xs: Vec<Vec<f64>> = d
            .features
            .rows()
            .map(|r| {
                let mut z = Vec::new();
                m.scaler.transform(r, &mut z);
                z
            })
            .collect();
        for c in 0..2 {
            let ys: Vec<f64> = d.labels.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect();
            let obj = hinge_objective(&m.weights[c], m.biases[c], &xs, &ys, m.params.lambda);
            assert!(obj <= 1.0, "class {c} objective {obj}");
        }
    }

    #[test]
    fn predictions_ignore_feature_scale() {
        let a = separable(100, 1.0);
        let b = separable(100, 10.0);
        let p = SvmParams { seed: 4, ..SvmParams::default() };
        let ma = train_svm(&a, &p).unwrap();
        let mb = train_svm(&b, &p).unwrap();
        for i in 0..a.len() {
            assert_eq!(predict_svm(&ma, a.features.row(i)).0, predict_svm(&mb, b.features.row(i)).0);
        }
    }

    #[test]
    fn contract_violations() {
        let one = two_class(&[[1.0], [2.0]], &[1, 1]);
        assert!(train_svm(&one, &SvmParams::default()).is_err());
        let single = two_class(&[[1.0]], &[1]);
        assert!(train_svm(&single, &SvmParams::default()).is_err());
        let ok = two_class(&[[1.0], [2.0]], &[0, 1]);
        assert!(train_svm(&ok, &SvmParams { lambda: 0.0, ..SvmParams::default() }).is_err());
        assert!(train_svm(&ok, &SvmParams { epochs: 0, ..SvmParams::default() }).is_err());
    }
}
