//! CART-style binary trees.
//!
//! Classification trees split on Gini impurity decrease. Regression trees,
//! used by the boosted ensemble, split on the second-order gain
//! `½[G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)] − γ` with leaf value
//! `−G/(H+λ)`; with unit hessians, λ = γ = 0 and `g = −y` this is plain
//! variance reduction with the mean target as leaf value, which is what
//! [`fit_regression`] uses.
//!
//! Routing convention: `x[feature] <= threshold` goes left. Thresholds are
//! midpoints between consecutive distinct values of the node's samples. Among
//! equally good splits the lowest feature index wins, then the lowest
//! threshold. A split is made only if it strictly improves the criterion.
//!
//! Nodes are stored in pre-order: the left child of node `i` is node `i + 1`.

use thiserror::Error;

use crate::dataset::{FeatureMatrix, LabeledDataset};

/// Improvements below this are treated as zero; absorbs rounding noise.
const GAIN_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("cannot train on an empty dataset")]
    Empty,
    #[error("invalid tree parameters: {0}")]
    InvalidParams(String),
    #[error("expected {expected} features, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("malformed tree: {0}")]
    Structure(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_impurity_decrease: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams { max_depth: 20, min_samples_split: 2, min_impurity_decrease: 0.0 }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<(), TreeError> {
        if self.max_depth < 1 {
            return Err(TreeError::InvalidParams("max_depth must be at least 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(TreeError::InvalidParams("min_samples_split must be at least 2".into()));
        }
        if !(self.min_impurity_decrease >= 0.0 && self.min_impurity_decrease.is_finite()) {
            return Err(TreeError::InvalidParams("min_impurity_decrease must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node<L> {
    /// Left child is the next node; `right` is the index of the right child.
    Split {
        feature: usize,
        threshold: f64,
        right: usize,
    },
    Leaf(L),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree<L> {
    nodes: Vec<Node<L>>,
    n_features: usize,
}

/// Classification tree; leaves hold class indices.
pub type DecisionTree = Tree<usize>;
/// Regression tree; leaves hold real values.
pub type RegressionTree = Tree<f64>;

impl<L: Copy> Tree<L> {
    /// A tree with a single leaf.
    pub fn leaf(value: L, n_features: usize) -> Self {
        Tree { nodes: vec![Node::Leaf(value)], n_features }
    }

    /// Rebuilds a tree from a pre-order node list, checking its shape.
    pub fn from_nodes(nodes: Vec<Node<L>>, n_features: usize) -> Result<Self, TreeError> {
        let end = check_subtree(&nodes, 0, n_features)?;
        if end != nodes.len() {
            return Err(TreeError::Structure(format!("{} trailing nodes after the root subtree", nodes.len() - end)));
        }
        Ok(Tree { nodes, n_features })
    }

    pub fn nodes(&self) -> &[Node<L>] {
        &self.nodes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    /// Length of the longest root-to-leaf path, in edges.
    pub fn depth(&self) -> usize {
        fn walk<L>(nodes: &[Node<L>], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { right, .. } => 1 + walk(nodes, i + 1).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Routes `x` to a leaf. `x` must have `n_features` entries.
    pub fn leaf_value(&self, x: &[f64]) -> L {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, right } => {
                    i = if x[feature] <= threshold { i + 1 } else { right };
                }
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<L, TreeError> {
        if x.len() != self.n_features {
            return Err(TreeError::Dimension { expected: self.n_features, got: x.len() });
        }
        Ok(self.leaf_value(x))
    }
}

fn check_subtree<L>(nodes: &[Node<L>], i: usize, n_features: usize) -> Result<usize, TreeError> {
    match nodes.get(i) {
        None => Err(TreeError::Structure(format!("node {i} is missing"))),
        Some(Node::Leaf(_)) => Ok(i + 1),
        Some(Node::Split { feature, threshold, right }) => {
            if *feature >= n_features {
                return Err(TreeError::Structure(format!("node {i} splits on feature {feature}")));
            }
            if !threshold.is_finite() {
                return Err(TreeError::Structure(format!("node {i} has a non-finite threshold")));
            }
            let left_end = check_subtree(nodes, i + 1, n_features)?;
            if *right != left_end {
                return Err(TreeError::Structure(format!("node {i} points right to {right}, expected {left_end}")));
            }
            check_subtree(nodes, left_end, n_features)
        }
    }
}

/// Sufficient statistics and scoring for one split criterion.
pub(crate) trait Criterion {
    type Stats: Clone;
    type Leaf: Copy;

    fn empty(&self) -> Self::Stats;
    fn push(&self, s: &mut Self::Stats, row: usize);
    /// `parent - left`.
    fn rest(&self, parent: &Self::Stats, left: &Self::Stats) -> Self::Stats;
    fn gain(&self, parent: &Self::Stats, left: &Self::Stats, right: &Self::Stats) -> f64;
    fn leaf(&self, s: &Self::Stats) -> Self::Leaf;
    fn is_pure(&self, s: &Self::Stats) -> bool;
    /// Smallest gain that justifies a split (exclusive).
    fn min_gain(&self) -> f64;
}

pub(crate) struct Gini<'a> {
    pub labels: &'a [usize],
    pub n_classes: usize,
    pub min_decrease: f64,
}

#[derive(Clone)]
pub(crate) struct ClassCounts {
    counts: Vec<u64>,
    n: u64,
}

impl ClassCounts {
    fn sum_sq_over_n(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let ss: u64 = self.counts.iter().map(|c| c * c).sum();
        ss as f64 / self.n as f64
    }
}

/// Gini impurity `1 − Σ p_c²` of a class-count vector.
pub fn gini_impurity(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

impl Criterion for Gini<'_> {
    type Stats = ClassCounts;
    type Leaf = usize;

    fn empty(&self) -> ClassCounts {
        ClassCounts { counts: vec![0; self.n_classes], n: 0 }
    }

    fn push(&self, s: &mut ClassCounts, row: usize) {
        s.counts[self.labels[row]] += 1;
        s.n += 1;
    }

    fn rest(&self, parent: &ClassCounts, left: &ClassCounts) -> ClassCounts {
        ClassCounts {
            counts: parent.counts.iter().zip(&left.counts).map(|(p, l)| p - l).collect(),
            n: parent.n - left.n,
        }
    }

    /// Node-local impurity decrease `G(P) − (n_L/n)G(L) − (n_R/n)G(R)`.
    fn gain(&self, parent: &ClassCounts, left: &ClassCounts, right: &ClassCounts) -> f64 {
        (left.sum_sq_over_n() + right.sum_sq_over_n() - parent.sum_sq_over_n()) / parent.n as f64
    }

    fn leaf(&self, s: &ClassCounts) -> usize {
        majority(&s.counts)
    }

    fn is_pure(&self, s: &ClassCounts) -> bool {
        s.counts.iter().filter(|&&c| c > 0).count() <= 1
    }

    fn min_gain(&self) -> f64 {
        self.min_decrease
    }
}

/// Index of the largest count; ties go to the lowest index.
pub fn majority(counts: &[u64]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

pub(crate) struct SecondOrder<'a> {
    pub grad: &'a [f64],
    pub hess: &'a [f64],
    pub lambda: f64,
    pub gamma: f64,
}

#[derive(Clone)]
pub(crate) struct GradSums {
    g: f64,
    h: f64,
}

/// Optimal leaf weight `−G/(H+λ)`.
pub fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    -g / (h + lambda)
}

/// Second-order split gain; see the module docs.
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    let score = |g: f64, h: f64| g * g / (h + lambda);
    0.5 * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr)) - gamma
}

impl Criterion for SecondOrder<'_> {
    type Stats = GradSums;
    type Leaf = f64;

    fn empty(&self) -> GradSums {
        GradSums { g: 0.0, h: 0.0 }
    }

    fn push(&self, s: &mut GradSums, row: usize) {
        s.g += self.grad[row];
        s.h += self.hess[row];
    }

    fn rest(&self, parent: &GradSums, left: &GradSums) -> GradSums {
        GradSums { g: parent.g - left.g, h: parent.h - left.h }
    }

    fn gain(&self, _parent: &GradSums, left: &GradSums, right: &GradSums) -> f64 {
        split_gain(left.g, left.h, right.g, right.h, self.lambda, self.gamma)
    }

    fn leaf(&self, s: &GradSums) -> f64 {
        let w = leaf_weight(s.g, s.h, self.lambda);
        if w.is_finite() {
            w
        } else {
            0.0
        }
    }

    fn is_pure(&self, _s: &GradSums) -> bool {
        false
    }

    fn min_gain(&self) -> f64 {
        0.0
    }
}

/// The split chosen for a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = 0.5 * a + 0.5 * b;
    if m >= a && m < b {
        m
    } else {
        a
    }
}

/// Exhaustive search over `features` for the best split of `rows`.
pub(crate) fn best_split<C: Criterion>(
    crit: &C,
    x: &FeatureMatrix,
    rows: &[usize],
    parent: &C::Stats,
    features: &[usize],
    scratch: &mut Vec<(f64, usize)>,
) -> Option<SplitChoice> {
    let mut best: Option<SplitChoice> = None;
    for &f in features {
        scratch.clear();
        scratch.extend(rows.iter().map(|&r| (x.get(r, f), r)));
        scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut left = crit.empty();
        for k in 0..scratch.len() - 1 {
            crit.push(&mut left, scratch[k].1);
            let (v, next) = (scratch[k].0, scratch[k + 1].0);
            if v == next {
                continue;
            }
            let right = crit.rest(parent, &left);
            let gain = crit.gain(parent, &left, &right);
            let better = match &best {
                None => true,
                Some(b) => gain > b.gain + GAIN_EPS,
            };
            if better {
                best = Some(SplitChoice { feature: f, threshold: midpoint(v, next), gain });
            }
        }
    }
    best.filter(|b| b.gain > crit.min_gain() + GAIN_EPS)
}

struct Task {
    rows: Vec<usize>,
    depth: usize,
    /// Index of the split node whose right child this task builds.
    parent: Option<usize>,
}

/// Greedy recursive partitioning over the sample multiset `rows`.
///
/// `features_for(node_index)` returns the candidate features for the node
/// about to be created (ascending order); `None` means every feature.
pub(crate) fn grow<C: Criterion>(
    crit: &C,
    x: &FeatureMatrix,
    rows: Vec<usize>,
    params: &TreeParams,
    mut features_for: Option<&mut dyn FnMut(usize) -> Vec<usize>>,
) -> Tree<C::Leaf> {
    let all_features: Vec<usize> = (0..x.n_cols()).collect();
    let mut nodes: Vec<Node<C::Leaf>> = Vec::new();
    let mut stack = vec![Task { rows, depth: 0, parent: None }];
    let mut scratch = Vec::new();
    while let Some(task) = stack.pop() {
        let index = nodes.len();
        if let Some(p) = task.parent {
            if let Node::Split { right, .. } = &mut nodes[p] {
                *right = index;
            }
        }
        let mut stats = crit.empty();
        for &r in &task.rows {
            crit.push(&mut stats, r);
        }
        let splittable =
            task.depth < params.max_depth && task.rows.len() >= params.min_samples_split && !crit.is_pure(&stats);
        let choice = if splittable {
            let candidates = match features_for.as_mut() {
                Some(f) => f(index),
                None => all_features.clone(),
            };
            best_split(crit, x, &task.rows, &stats, &candidates, &mut scratch)
        } else {
            None
        };
        match choice {
            None => nodes.push(Node::Leaf(crit.leaf(&stats))),
            Some(s) => {
                let (left, right): (Vec<usize>, Vec<usize>) =
                    task.rows.iter().partition(|&&r| x.get(r, s.feature) <= s.threshold);
                nodes.push(Node::Split { feature: s.feature, threshold: s.threshold, right: usize::MAX });
                stack.push(Task { rows: right, depth: task.depth + 1, parent: Some(index) });
                stack.push(Task { rows: left, depth: task.depth + 1, parent: None });
            }
        }
    }
    Tree { nodes, n_features: x.n_cols() }
}

/// Trains a classification tree on every row of `train`.
pub fn train_tree(train: &LabeledDataset, params: &TreeParams) -> Result<DecisionTree, TreeError> {
    params.validate()?;
    if train.is_empty() {
        return Err(TreeError::Empty);
    }
    let rows = (0..train.len()).collect();
    Ok(grow_classifier(train, rows, params, None))
}

pub(crate) fn grow_classifier(
    train: &LabeledDataset,
    rows: Vec<usize>,
    params: &TreeParams,
    features_for: Option<&mut dyn FnMut(usize) -> Vec<usize>>,
) -> DecisionTree {
    let crit = Gini { labels: &train.labels, n_classes: train.n_classes(), min_decrease: params.min_impurity_decrease };
    grow(&crit, &train.features, rows, params, features_for)
}

/// Fits a regression tree to `grad`/`hess` with the second-order criterion.
pub(crate) fn grow_second_order(
    x: &FeatureMatrix,
    grad: &[f64],
    hess: &[f64],
    lambda: f64,
    gamma: f64,
    params: &TreeParams,
) -> RegressionTree {
    let crit = SecondOrder { grad, hess, lambda, gamma };
    grow(&crit, x, (0..x.n_rows()).collect(), params, None)
}

/// Least-squares regression tree: variance-reduction splits, mean-target leaves.
pub fn fit_regression(x: &FeatureMatrix, targets: &[f64], params: &TreeParams) -> Result<RegressionTree, TreeError> {
    params.validate()?;
    if targets.is_empty() {
        return Err(TreeError::Empty);
    }
    if targets.len() != x.n_rows() {
        return Err(TreeError::Dimension { expected: x.n_rows(), got: targets.len() });
    }
    let grad: Vec<f64> = targets.iter().map(|t| -t).collect();
    let hess = vec![1.0; targets.len()];
    Ok(grow_second_order(x, &grad, &hess, 0.0, 0.0, params))
}

/// Root split chosen by the classification criterion, if any.
pub fn root_split(train: &LabeledDataset, params: &TreeParams) -> Option<SplitChoice> {
    let crit = Gini { labels: &train.labels, n_classes: train.n_classes(), min_decrease: params.min_impurity_decrease };
    let rows: Vec<usize> = (0..train.len()).collect();
    let mut stats = crit.empty();
    for &r in &rows {
        crit.push(&mut stats, r);
    }
    let features: Vec<usize> = (0..train.n_features()).collect();
    best_split(&crit, &train.features, &rows, &stats, &features, &mut Vec::new())
}
