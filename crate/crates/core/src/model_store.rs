//! Line-oriented text format for trained models.
//!
//! ```text
//! file      := MAGIC NL header "---" NL body "end" NL
//! MAGIC     := "flowsentry-model"
//! header    := (key " = " value NL)*        format_version, model_kind, feature_schema,
//!                                            n_features, n_labels, label.<i>, seed, param.<name>
//! body      := (section "---" NL)*
//! tree      := "tree " id " nodes = " n NL node{n}
//! node      := "S " feature " " threshold " " right | "L " value
//! ```
//!
//! Nodes are listed in pre-order; a split's left child is the next line and
//! `right` is the index of its right child. Reals use Rust's shortest
//! round-trip representation, so a loaded model predicts exactly like the
//! saved one. The `feature_schema` hash ties a model to its column order.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::SCHEMA_VERSION;
use crate::ensembles::forest::vote_fractions;
use crate::ensembles::{predict_forest, predict_gbt, BoostedModel, ForestModel, ForestParams, GbtParams};
use crate::flowmeter::{FEATURE_COUNT, FEATURE_NAMES};
use crate::svm::{predict_svm, LinearSvmSet, Standardizer, SvmParams};
use crate::tree::{DecisionTree, Node, RegressionTree, Tree, TreeParams};

pub const MAGIC: &str = "flowsentry-model";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelStoreError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("unsupported format_version {found}, expected {FORMAT_VERSION}")]
    VersionMismatch { found: String },
    #[error("feature schema mismatch: expected {expected}, found {found}")]
    SchemaMismatch { expected: String, found: String },
    #[error("file ends early at line {line}")]
    Truncated { line: usize },
    #[error("line {line}: non-finite value {value}")]
    NonFinite { line: usize, value: String },
    #[error("inconsistent model: {0}")]
    Invalid(String),
}

/// Short hash of the column names a model with `n_features` inputs expects.
/// Models of the canonical width bind to the flow feature names; other widths
/// (synthetic data) bind to positional names.
pub fn feature_schema_hash(n_features: usize) -> String {
    let mut h = Sha256::new();
    h.update(SCHEMA_VERSION.as_bytes());
    if n_features == FEATURE_COUNT {
        for name in FEATURE_NAMES {
            h.update(b"\n");
            h.update(name.as_bytes());
        }
    } else {
        for j in 0..n_features {
            h.update(format!("\nx{j}").as_bytes());
        }
    }
    hex::encode(h.finalize())[..16].to_string()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Tree { tree: DecisionTree, params: TreeParams },
    Forest(ForestModel),
    Boosted(BoostedModel),
    Svm(LinearSvmSet),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub classifier: Classifier,
    pub labels: Vec<String>,
    pub seed: u64,
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self.classifier {
            Classifier::Tree { .. } => "dt",
            Classifier::Forest(_) => "rf",
            Classifier::Boosted(_) => "gbt",
            Classifier::Svm(_) => "svm",
        }
    }

    pub fn n_features(&self) -> usize {
        match &self.classifier {
            Classifier::Tree { tree, .. } => tree.n_features(),
            Classifier::Forest(m) => m.n_features(),
            Classifier::Boosted(m) => m.n_features(),
            Classifier::Svm(m) => m.n_features(),
        }
    }

    /// Predicted class index and one score per class: one-hot for a single
    /// tree, vote fractions for a forest, probabilities for boosting and
    /// margins for the SVM.
    pub fn predict(&self, x: &[f64]) -> (usize, Vec<f64>) {
        match &self.classifier {
            Classifier::Tree { tree, .. } => {
                let c = tree.leaf_value(x);
                let mut s = vec![0.0; self.labels.len()];
                s[c] = 1.0;
                (c, s)
            }
            Classifier::Forest(m) => {
                let (c, votes) = predict_forest(m, x);
                (c, vote_fractions(&votes))
            }
            Classifier::Boosted(m) => predict_gbt(m, x),
            Classifier::Svm(m) => predict_svm(m, x),
        }
    }
}

fn write_tree<L: Copy>(out: &mut String, id: &str, tree: &Tree<L>, leaf: impl Fn(L) -> String) {
    let _ = writeln!(out, "tree {id} nodes = {}", tree.nodes().len());
    for n in tree.nodes() {
        match n {
            Node::Split { feature, threshold, right } => {
                let _ = writeln!(out, "S {feature} {threshold:?} {right}");
            }
            Node::Leaf(v) => {
                let _ = writeln!(out, "L {}", leaf(*v));
            }
        }
    }
    out.push_str("---\n");
}

/// Serializes a model. The same model always yields the same text.
pub fn to_text(model: &Model) -> String {
    let mut out = String::new();
    let d = model.n_features();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "format_version = {FORMAT_VERSION}");
    let _ = writeln!(out, "model_kind = {}", model.kind());
    let _ = writeln!(out, "feature_schema = {}", feature_schema_hash(d));
    let _ = writeln!(out, "n_features = {d}");
    let _ = writeln!(out, "n_labels = {}", model.labels.len());
    for (i, l) in model.labels.iter().enumerate() {
        let _ = writeln!(out, "label.{i} = {l}");
    }
    let _ = writeln!(out, "seed = {}", model.seed);
    let mut param = |k: &str, v: String| {
        let _ = writeln!(out, "param.{k} = {v}");
    };
    match &model.classifier {
        Classifier::Tree { params, .. } => tree_params_out(&mut param, params),
        Classifier::Forest(m) => {
            let p = m.params();
            param("n_trees", m.trees().len().to_string());
            param("mtry", p.resolved_mtry(d).to_string());
            param("bootstrap", p.bootstrap.to_string());
            tree_params_out(&mut param, &p.tree);
        }
        Classifier::Boosted(m) => {
            let p = m.params();
            param("n_rounds", m.rounds().len().to_string());
            param("learning_rate", format!("{:?}", p.learning_rate));
            param("max_depth", p.max_depth.to_string());
            param("min_samples_split", p.min_samples_split.to_string());
            param("lambda", format!("{:?}", p.lambda));
            param("gamma", format!("{:?}", p.gamma));
        }
        Classifier::Svm(m) => {
            param("lambda", format!("{:?}", m.params().lambda));
            param("epochs", m.params().epochs.to_string());
        }
    }
    out.push_str("---\n");
    match &model.classifier {
        Classifier::Tree { tree, .. } => write_tree(&mut out, "0", tree, |c| c.to_string()),
        Classifier::Forest(m) => {
            for (i, t) in m.trees().iter().enumerate() {
                write_tree(&mut out, &i.to_string(), t, |c| c.to_string());
            }
        }
        Classifier::Boosted(m) => {
            let _ = writeln!(out, "base_score n = {}", m.n_classes());
            for v in &m.base_score {
                let _ = writeln!(out, "B {v:?}");
            }
            let _ = writeln!(out, "train_loss n = {}", m.train_loss().len());
            for v in m.train_loss() {
                let _ = writeln!(out, "T {v:?}");
            }
            out.push_str("---\n");
            for (r, round) in m.rounds().iter().enumerate() {
                for (c, t) in round.iter().enumerate() {
                    write_tree(&mut out, &format!("{r}.{c}"), t, |v: f64| format!("{v:?}"));
                }
            }
        }
        Classifier::Svm(m) => {
            let _ = writeln!(out, "scaler n = {d}");
            for (mu, sd) in m.scaler().mean.iter().zip(&m.scaler().std) {
                let _ = writeln!(out, "F {mu:?} {sd:?}");
            }
            out.push_str("---\n");
            for (c, (w, b)) in m.weights().iter().zip(m.biases()).enumerate() {
                let _ = writeln!(out, "class {c} bias = {b:?}");
                for v in w {
                    let _ = writeln!(out, "W {v:?}");
                }
                out.push_str("---\n");
            }
        }
    }
    out.push_str("end\n");
    out
}

fn tree_params_out(param: &mut impl FnMut(&str, String), p: &TreeParams) {
    param("max_depth", p.max_depth.to_string());
    param("min_samples_split", p.min_samples_split.to_string());
    param("min_impurity_decrease", format!("{:?}", p.min_impurity_decrease));
}

pub fn save<W: Write>(model: &Model, mut out: W) -> Result<(), ModelStoreError> {
    out.write_all(to_text(model).as_bytes())?;
    out.flush()?;
    Ok(())
}

pub fn save_file(model: &Model, path: &Path) -> Result<(), ModelStoreError> {
    fs::write(path, to_text(model))?;
    Ok(())
}

pub fn load<R: Read>(mut input: R) -> Result<Model, ModelStoreError> {
    let mut text = String::new();
    input.read_to_string(&mut text).map_err(|e| {
        if e.kind() == io::ErrorKind::InvalidData {
            ModelStoreError::Format { line: 0, msg: "file is not UTF-8".into() }
        } else {
            e.into()
        }
    })?;
    from_text(&text)
}

pub fn load_file(path: &Path) -> Result<Model, ModelStoreError> {
    load(fs::File::open(path)?)
}

struct Cursor<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> Cursor<'a> {
    /// 1-based number of the line most recently returned.
    fn line(&self) -> usize {
        self.pos
    }

    fn next(&mut self) -> Result<&'a str, ModelStoreError> {
        let l = *self.lines.get(self.pos).ok_or(ModelStoreError::Truncated { line: self.pos + 1 })?;
        self.pos += 1;
        Ok(l)
    }

    fn peek(&self) -> Option<&'a str> {
        self.lines.get(self.pos).copied()
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ModelStoreError> {
        Err(ModelStoreError::Format { line: self.line(), msg: msg.into() })
    }

    fn key_value(&mut self) -> Result<(&'a str, &'a str), ModelStoreError> {
        let l = self.next()?;
        match l.split_once(" = ") {
            Some(kv) => Ok(kv),
            None => self.err(format!("expected `key = value`, got {l:?}")),
        }
    }

    fn expect_key(&mut self, key: &str) -> Result<&'a str, ModelStoreError> {
        let (k, v) = self.key_value()?;
        if k != key {
            return self.err(format!("expected key {key:?}, got {k:?}"));
        }
        Ok(v)
    }

    fn key_parse<T: FromStr>(&mut self, key: &str) -> Result<T, ModelStoreError> {
        let v = self.expect_key(key)?;
        self.parse(v, key)
    }

    fn key_real(&mut self, key: &str) -> Result<f64, ModelStoreError> {
        let v = self.expect_key(key)?;
        self.real(v)
    }

    fn parse<T: FromStr>(&self, s: &str, what: &str) -> Result<T, ModelStoreError> {
        s.parse().or_else(|_| self.err(format!("invalid {what}: {s:?}")))
    }

    fn real(&self, s: &str) -> Result<f64, ModelStoreError> {
        let v: f64 = self.parse(s, "number")?;
        if !v.is_finite() {
            return Err(ModelStoreError::NonFinite { line: self.line(), value: s.to_string() });
        }
        Ok(v)
    }

    fn separator(&mut self) -> Result<(), ModelStoreError> {
        let l = self.next()?;
        if l != "---" {
            return self.err(format!("expected `---`, got {l:?}"));
        }
        Ok(())
    }

    /// `<tag> <fields...>` line with exactly `n` fields.
    fn tagged(&mut self, tag: &str, n: usize) -> Result<Vec<&'a str>, ModelStoreError> {
        let l = self.next()?;
        let mut parts = l.split(' ');
        if parts.next() != Some(tag) {
            return self.err(format!("expected a `{tag}` line, got {l:?}"));
        }
        let fields: Vec<&str> = parts.collect();
        if fields.len() != n {
            return self.err(format!("`{tag}` line needs {n} fields, got {l:?}"));
        }
        Ok(fields)
    }

    fn tree<L: Copy>(
        &mut self,
        id: &str,
        n_features: usize,
        leaf: impl Fn(&Self, &str) -> Result<L, ModelStoreError>,
    ) -> Result<Tree<L>, ModelStoreError> {
        let (k, v) = self.key_value()?;
        if k != format!("tree {id} nodes") {
            return self.err(format!("expected tree {id}, got {k:?}"));
        }
        let n: usize = self.parse(v, "node count")?;
        if n == 0 {
            return self.err("tree without nodes");
        }
        let mut nodes = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let l = self.next()?;
            let parts: Vec<&str> = l.split(' ').collect();
            match parts.as_slice() {
                ["S", f, t, r] => nodes.push(Node::Split {
                    feature: self.parse(f, "feature index")?,
                    threshold: self.real(t)?,
                    right: self.parse(r, "child index")?,
                }),
                ["L", v] => nodes.push(Node::Leaf(leaf(self, v)?)),
                _ => return self.err(format!("expected a node line, got {l:?}")),
            }
        }
        self.separator()?;
        Tree::from_nodes(nodes, n_features).map_err(|e| ModelStoreError::Invalid(format!("tree {id}: {e}")))
    }
}

pub fn from_text(text: &str) -> Result<Model, ModelStoreError> {
    let mut c = Cursor { lines: text.split('\n').collect(), pos: 0 };
    // A complete file ends with a newline, leaving one empty trailing piece.
    if c.lines.last() == Some(&"") {
        c.lines.pop();
    }
    if c.next().map_err(|_| ModelStoreError::Format { line: 1, msg: "empty file".into() })? != MAGIC {
        return c.err(format!("missing `{MAGIC}` magic line"));
    }
    let version = c.expect_key("format_version")?;
    if version != FORMAT_VERSION.to_string() {
        return Err(ModelStoreError::VersionMismatch { found: version.to_string() });
    }
    let kind = c.expect_key("model_kind")?;
    let schema = c.expect_key("feature_schema")?.to_string();
    let d: usize = c.key_parse("n_features")?;
    if d == 0 {
        return c.err("n_features must be positive");
    }
    let expected = feature_schema_hash(d);
    if schema != expected {
        return Err(ModelStoreError::SchemaMismatch { expected, found: schema });
    }
    let k: usize = c.key_parse("n_labels")?;
    let mut labels = Vec::with_capacity(k.min(1024));
    for i in 0..k {
        labels.push(c.expect_key(&format!("label.{i}"))?.to_string());
    }
    if k < 2 {
        return Err(ModelStoreError::Invalid("a model needs at least 2 labels".into()));
    }
    let seed: u64 = c.key_parse("seed")?;
    let mut params = Vec::new();
    while c.peek().is_some_and(|l| l.starts_with("param.")) {
        let (key, v) = c.key_value()?;
        params.push((key["param.".len()..].to_string(), v, c.line()));
    }
    c.separator()?;
    let header_end = c.line();
    let param = |name: &str| -> Result<(&str, usize), ModelStoreError> {
        params
            .iter()
            .find(|(k, _, _)| k == name)
            .map(|(_, v, l)| (*v, *l))
            .ok_or_else(|| ModelStoreError::Format { line: header_end, msg: format!("missing param.{name}") })
    };
    fn typed<T: FromStr>((v, line): (&str, usize), name: &str) -> Result<T, ModelStoreError> {
        v.parse().map_err(|_| ModelStoreError::Format { line, msg: format!("invalid param.{name}: {v:?}") })
    }
    fn real((v, line): (&str, usize), name: &str) -> Result<f64, ModelStoreError> {
        let x: f64 = typed((v, line), name)?;
        if !x.is_finite() {
            return Err(ModelStoreError::NonFinite { line, value: v.to_string() });
        }
        Ok(x)
    }
    let tree_params = || -> Result<TreeParams, ModelStoreError> {
        Ok(TreeParams {
            max_depth: typed(param("max_depth")?, "max_depth")?,
            min_samples_split: typed(param("min_samples_split")?, "min_samples_split")?,
            min_impurity_decrease: real(param("min_impurity_decrease")?, "min_impurity_decrease")?,
        })
    };
    let class_leaf = |c: &Cursor, v: &str| -> Result<usize, ModelStoreError> {
        let l: usize = c.parse(v, "class index")?;
        if l >= k {
            return c.err(format!("leaf class {l} outside {k} labels"));
        }
        Ok(l)
    };
    let invalid = |e: &dyn std::fmt::Display| ModelStoreError::Invalid(e.to_string());
    let classifier = match kind {
        "dt" => {
            let params = tree_params()?;
            let tree = c.tree("0", d, class_leaf)?;
            Classifier::Tree { tree, params }
        }
        "rf" => {
            let n_trees: usize = typed(param("n_trees")?, "n_trees")?;
            let p = ForestParams {
                n_trees,
                mtry: Some(typed(param("mtry")?, "mtry")?),
                tree: tree_params()?,
                bootstrap: typed(param("bootstrap")?, "bootstrap")?,
                seed,
            };
            let mut trees = Vec::with_capacity(n_trees.min(1 << 16));
            for i in 0..n_trees {
                trees.push(c.tree(&i.to_string(), d, class_leaf)?);
            }
            Classifier::Forest(ForestModel::from_parts(trees, p, k, d).map_err(|e| invalid(&e))?)
        }
        "gbt" => {
            let n_rounds: usize = typed(param("n_rounds")?, "n_rounds")?;
            let p = GbtParams {
                n_rounds,
                learning_rate: real(param("learning_rate")?, "learning_rate")?,
                max_depth: typed(param("max_depth")?, "max_depth")?,
                min_samples_split: typed(param("min_samples_split")?, "min_samples_split")?,
                lambda: real(param("lambda")?, "lambda")?,
                gamma: real(param("gamma")?, "gamma")?,
                seed,
            };
            let n_base: usize = c.key_parse("base_score n")?;
            if n_base != k {
                return c.err(format!("{n_base} base scores for {k} labels"));
            }
            let mut base = Vec::with_capacity(k);
            for _ in 0..k {
                let f = c.tagged("B", 1)?;
                base.push(c.real(f[0])?);
            }
            let n_loss: usize = c.key_parse("train_loss n")?;
            let mut loss = Vec::with_capacity(n_loss.min(1 << 20));
            for _ in 0..n_loss {
                let f = c.tagged("T", 1)?;
                loss.push(c.real(f[0])?);
            }
            c.separator()?;
            let mut rounds: Vec<Vec<RegressionTree>> = Vec::with_capacity(n_rounds.min(1 << 16));
            for r in 0..n_rounds {
                let mut round = Vec::with_capacity(k);
                for cl in 0..k {
                    round.push(c.tree(&format!("{r}.{cl}"), d, |c: &Cursor, v: &str| c.real(v))?);
                }
                rounds.push(round);
            }
            Classifier::Boosted(BoostedModel::from_parts(rounds, base, p, d, loss).map_err(|e| invalid(&e))?)
        }
        "svm" => {
            let p = SvmParams {
                lambda: real(param("lambda")?, "lambda")?,
                epochs: typed(param("epochs")?, "epochs")?,
                seed,
            };
            let n: usize = c.key_parse("scaler n")?;
            if n != d {
                return c.err(format!("scaler has {n} features, model {d}"));
            }
            let mut scaler = Standardizer { mean: Vec::with_capacity(d), std: Vec::with_capacity(d) };
            for _ in 0..d {
                let f = c.tagged("F", 2)?;
                scaler.mean.push(c.real(f[0])?);
                scaler.std.push(c.real(f[1])?);
            }
            c.separator()?;
            let mut weights = Vec::with_capacity(k);
            let mut biases = Vec::with_capacity(k);
            for cl in 0..k {
                biases.push(c.key_real(&format!("class {cl} bias"))?);
                let mut w = Vec::with_capacity(d);
                for _ in 0..d {
                    let f = c.tagged("W", 1)?;
                    w.push(c.real(f[0])?);
                }
                c.separator()?;
                weights.push(w);
            }
            Classifier::Svm(LinearSvmSet::from_parts(weights, biases, scaler, p).map_err(|e| invalid(&e))?)
        }
        other => return Err(ModelStoreError::Format { line: 3, msg: format!("unknown model_kind {other:?}") }),
    };
    if c.next()? != "end" {
        return c.err("expected the `end` marker");
    }
    if c.peek().is_some() {
        return Err(ModelStoreError::Format { line: c.line() + 1, msg: "content after `end`".into() });
    }
    Ok(Model { classifier, labels, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FeatureMatrix, LabeledDataset};
    use crate::ensembles::{train_forest, train_gbt};
    use crate::rng;
    use crate::svm::train_svm;
    use crate::tree::train_tree;
    use rand::Rng;

    fn data(n: usize, d: usize) -> LabeledDataset {
        let mut r = rng::stream(&[11]);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 3;
            rows.push((0..d).map(|j| c as f64 * (j as f64 + 0.5) + r.gen_range(-1.5..1.5)).collect::<Vec<_>>());
            labels.push(c);
        }
        LabeledDataset::new(FeatureMatrix::from_rows(&rows), labels, vec!["A".into(), "B".into(), "C".into()])
    }

    fn all_kinds(d: usize) -> Vec<Model> {
        let ds = data(90, d);
        let labels = ds.label_names.clone();
        let wrap = |classifier| Model { classifier, labels: labels.clone(), seed: 3 };
        vec![
            wrap(Classifier::Tree {
                tree: train_tree(&ds, &TreeParams::default()).unwrap(),
                params: TreeParams::default(),
            }),
            wrap(Classifier::Forest(
                train_forest(&ds, &ForestParams { n_trees: 5, seed: 3, ..ForestParams::default() }).unwrap(),
            )),
            wrap(Classifier::Boosted(
                train_gbt(&ds, &GbtParams { n_rounds: 4, seed: 3, ..GbtParams::default() }).unwrap(),
            )),
            wrap(Classifier::Svm(train_svm(&ds, &SvmParams { seed: 3, ..SvmParams::default() }).unwrap())),
        ]
    }

    #[test]
    fn round_trip_is_exact() {
        for m in all_kinds(4) {
            let text = to_text(&m);
            assert_eq!(text, to_text(&m));
            let back = from_text(&text).unwrap();
            assert_eq!(back, m, "{}", m.kind());
            assert_eq!(to_text(&back), text);
        }
    }

    #[test]
    fn single_leaf_tree_has_one_node_line() {
        let m = Model {
            classifier: Classifier::Tree { tree: Tree::leaf(1, 2), params: TreeParams::default() },
            labels: vec!["a".into(), "b".into()],
            seed: 0,
        };
        let text = to_text(&m);
        assert!(text.contains("tree 0 nodes = 1\nL 1\n---\nend\n"));
        assert_eq!(from_text(&text).unwrap(), m);
    }

    #[test]
    fn bad_magic_and_version() {
        let text = to_text(&all_kinds(2)[0]);
        let broken = text.replacen(MAGIC, "flowsentry-mode1", 1);
        assert!(matches!(from_text(&broken), Err(ModelStoreError::Format { line: 1, .. })));
        let v2 = text.replacen("format_version = 1", "format_version = 2", 1);
        assert!(matches!(from_text(&v2), Err(ModelStoreError::VersionMismatch { .. })));
    }

    #[test]
    fn schema_mismatch_names_both_hashes() {
        let text = to_text(&all_kinds(2)[0]);
        let h = feature_schema_hash(2);
        let forged = text.replacen(&h, "0123456789abcdef", 1);
        match from_text(&forged) {
            Err(e @ ModelStoreError::SchemaMismatch { .. }) => {
                let msg = e.to_string();
                assert!(msg.contains(&h) && msg.contains("0123456789abcdef"));
            }
            other => panic!("{other:?}"),
        }
        assert_ne!(feature_schema_hash(18), feature_schema_hash(17));
    }

    #[test]
    fn truncation_and_non_finite() {
        for m in all_kinds(3) {
            let text = to_text(&m);
            let cut = &text[..text.len() / 2];
            let cut = &cut[..cut.rfind('\n').unwrap() + 1];
            assert!(matches!(from_text(cut), Err(ModelStoreError::Truncated { .. })), "{}", m.kind());
        }
        let svm = to_text(&all_kinds(3)[3]);
        let pos = svm.find("\nW ").unwrap() + 3;
        let end = pos + svm[pos..].find('\n').unwrap();
        let poisoned = format!("{}NaN{}", &svm[..pos], &svm[end..]);
        assert!(matches!(from_text(&poisoned), Err(ModelStoreError::NonFinite { .. })));
    }

    #[test]
    fn forest_file_lists_every_tree() {
        let m = &all_kinds(2)[1];
        let text = to_text(m);
        assert!(text.contains("param.n_trees = 5\n"));
        assert_eq!(text.matches("\ntree ").count(), 5);
    }
}
