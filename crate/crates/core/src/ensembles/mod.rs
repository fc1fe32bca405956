//! Tree ensembles built on [`crate::tree`].

pub mod forest;
pub mod gbt;

use thiserror::Error;

use crate::tree::TreeError;

pub use forest::{predict_forest, train_forest, ForestModel, ForestParams};
pub use gbt::{predict_gbt, train_gbt, BoostedModel, GbtParams};

#[derive(Debug, Error, PartialEq)]
pub enum EnsembleError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("{0}")]
    Contract(String),
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}
