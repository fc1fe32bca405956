//! Confusion-matrix metrics, per-label reports and one-vs-rest ROC curves.
//!
//! Binary counts follow the usual layout: `P` true positives, `Q` true
//! negatives, `R` false positives, `S` false negatives. A metric whose
//! denominator is zero is [`Metric::Undefined`] and renders as `0.00*`.

use std::fmt;
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{0}")]
    Contract(String),
}

fn contract<T>(msg: impl Into<String>) -> Result<T, MetricsError> {
    Err(MetricsError::Contract(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<u64>,
    labels: Vec<String>,
}

impl ConfusionMatrix {
    /// Number of samples of actual class `i` predicted as `j`.
    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.labels.len() + j]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.get(i, i)).sum()
    }

    /// Multi-class accuracy `trace / total`.
    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    /// Row `i` (actual class) as a slice.
    pub fn row(&self, i: usize) -> &[u64] {
        let k = self.labels.len();
        &self.counts[i * k..(i + 1) * k]
    }
}

/// Counts label pairs. Labels are indices into `labels`.
pub fn confusion_matrix(
    actual: &[usize],
    predicted: &[usize],
    labels: &[String],
) -> Result<ConfusionMatrix, MetricsError> {
    if actual.len() != predicted.len() {
        return contract(format!("{} actual labels but {} predictions", actual.len(), predicted.len()));
    }
    if actual.is_empty() {
        return contract("confusion matrix needs at least one sample");
    }
    let k = labels.len();
    let mut counts = vec![0u64; k * k];
    for (n, (&a, &p)) in actual.iter().zip(predicted).enumerate() {
        if a >= k || p >= k {
            return contract(format!("sample {n}: label index outside a vocabulary of {k}"));
        }
        counts[a * k + p] += 1;
    }
    Ok(ConfusionMatrix { counts, labels: labels.to_vec() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BinaryCounts {
    pub p: u64,
    pub q: u64,
    pub r: u64,
    pub s: u64,
}

impl BinaryCounts {
    pub fn total(&self) -> u64 {
        self.p + self.q + self.r + self.s
    }
}

pub fn one_vs_rest(cm: &ConfusionMatrix, label: usize) -> BinaryCounts {
    let k = cm.n_labels();
    let p = cm.get(label, label);
    let s = (0..k).filter(|&j| j != label).map(|j| cm.get(label, j)).sum();
    let r = (0..k).filter(|&i| i != label).map(|i| cm.get(i, label)).sum();
    BinaryCounts { p, q: cm.total() - p - s - r, r, s }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Defined(f64),
    Undefined,
}

impl Metric {
    fn ratio(num: u64, den: u64) -> Metric {
        if den == 0 {
            Metric::Undefined
        } else {
            Metric::Defined(num as f64 / den as f64)
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Metric::Defined(v) => Some(v),
            Metric::Undefined => None,
        }
    }

    /// The value, or 0 when undefined.
    pub fn or_zero(self) -> f64 {
        self.value().unwrap_or(0.0)
    }

    pub fn is_defined(self) -> bool {
        matches!(self, Metric::Defined(_))
    }

    fn key_value(self) -> String {
        match self {
            Metric::Defined(v) => format!("{v:.6}"),
            Metric::Undefined => "undefined".to_string(),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Defined(v) => write!(f, "{v:.2}"),
            Metric::Undefined => f.write_str("0.00*"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSuite {
    pub accuracy: Metric,
    pub recall: Metric,
    pub precision: Metric,
    /// Harmonic mean of precision and recall.
    pub f1: Metric,
}

pub fn metric_suite(bc: &BinaryCounts) -> Result<MetricSuite, MetricsError> {
    if bc.total() == 0 {
        return contract("metrics need at least one sample");
    }
    let accuracy = Metric::ratio(bc.p + bc.q, bc.total());
    let recall = Metric::ratio(bc.p, bc.p + bc.s);
    let precision = Metric::ratio(bc.p, bc.p + bc.r);
    let f1 = match (precision, recall) {
        (Metric::Defined(a), Metric::Defined(b)) if a + b > 0.0 => Metric::Defined(2.0 * a * b / (a + b)),
        _ => Metric::Undefined,
    };
    Ok(MetricSuite { accuracy, recall, precision, f1 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub precision: Metric,
    pub recall: Metric,
    pub f1: Metric,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub rows: Vec<ReportRow>,
    pub accuracy: f64,
    pub total: u64,
    pub macro_precision: Metric,
    pub macro_recall: Metric,
    pub macro_f1: Metric,
}

fn macro_mean(values: impl Iterator<Item = Metric>) -> Metric {
    let defined: Vec<f64> = values.filter_map(Metric::value).collect();
    if defined.is_empty() {
        Metric::Undefined
    } else {
        Metric::Defined(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

pub fn classification_report(cm: &ConfusionMatrix) -> Result<ClassificationReport, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return contract("report needs at least one sample");
    }
    let mut rows = Vec::with_capacity(cm.n_labels());
    for (l, label) in cm.labels().iter().enumerate() {
        let bc = one_vs_rest(cm, l);
        let m = metric_suite(&bc)?;
        rows.push(ReportRow {
            label: label.clone(),
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            support: bc.p + bc.s,
        });
    }
    Ok(ClassificationReport {
        macro_precision: macro_mean(rows.iter().map(|r| r.precision)),
        macro_recall: macro_mean(rows.iter().map(|r| r.recall)),
        macro_f1: macro_mean(rows.iter().map(|r| r.f1)),
        accuracy: cm.accuracy(),
        total,
        rows,
    })
}

impl ClassificationReport {
    /// Human-readable table; `0.00*` marks an undefined value.
    pub fn render_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(12);
        let mut out = String::new();
        let _ =
            writeln!(out, "{:>width$} {:>10} {:>10} {:>10} {:>10}", "", "precision", "recall", "f1-score", "support");
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:>width$} {:>10} {:>10} {:>10} {:>10}",
                r.label,
                r.precision.to_string(),
                r.recall.to_string(),
                r.f1.to_string(),
                r.support
            );
        }
        out.push('\n');
        let _ =
            writeln!(out, "{:>width$} {:>10} {:>10} {:>10.2} {:>10}", "accuracy", "", "", self.accuracy, self.total);
        let _ = writeln!(
            out,
            "{:>width$} {:>10} {:>10} {:>10} {:>10}",
            "macro avg",
            self.macro_precision.to_string(),
            self.macro_recall.to_string(),
            self.macro_f1.to_string(),
            self.total
        );
        if self.rows.iter().any(|r| !(r.precision.is_defined() && r.recall.is_defined() && r.f1.is_defined())) {
            out.push_str("\n* undefined (zero denominator), shown as 0\n");
        }
        out
    }

    /// Flat `key = value` lines for machine consumption.
    pub fn render_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "total = {}", self.total);
        let _ = writeln!(out, "accuracy = {:.6}", self.accuracy);
        let _ = writeln!(out, "macro.precision = {}", self.macro_precision.key_value());
        let _ = writeln!(out, "macro.recall = {}", self.macro_recall.key_value());
        let _ = writeln!(out, "macro.f1 = {}", self.macro_f1.key_value());
        for r in &self.rows {
            let _ = writeln!(out, "label.{}.precision = {}", r.label, r.precision.key_value());
            let _ = writeln!(out, "label.{}.recall = {}", r.label, r.recall.key_value());
            let _ = writeln!(out, "label.{}.f1 = {}", r.label, r.f1.key_value());
            let _ = writeln!(out, "label.{}.support = {}", r.label, r.support);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// One-vs-rest ROC curve of `positive` against every other label.
///
/// Samples with equal scores move the curve in a single step, so the area
/// equals the probability that a random positive outranks a random negative
/// with ties counted as one half.
pub fn roc_curve(scores: &[f64], actual: &[usize], positive: usize) -> Result<RocCurve, MetricsError> {
    if scores.len() != actual.len() {
        return contract(format!("{} scores but {} labels", scores.len(), actual.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return contract("ROC scores must not be NaN");
    }
    let n_pos = actual.iter().filter(|&&a| a == positive).count() as u64;
    let n_neg = actual.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return contract("ROC needs at least one positive and one negative sample");
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    // Twice the area, scaled by n_pos * n_neg, kept exact in integers.
    let mut area2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if actual[order[i]] == positive {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += ((fp - fp0) as u128) * ((tp + tp0) as u128);
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    let auc = area2 as f64 / (2.0 * n_pos as f64 * n_neg as f64);
    Ok(RocCurve { points, auc })
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr\n");
        for (x, y) in &self.points {
            let _ = writeln!(out, "{x},{y}");
        }
        out
    }
}

/// Unweighted mean AUC; `None` when no curve is given.
pub fn macro_auc<'a>(curves: impl IntoIterator<Item = &'a RocCurve>) -> Option<f64> {
    let aucs: Vec<f64> = curves.into_iter().map(|c| c.auc).collect();
    if aucs.is_empty() {
        None
    } else {
        Some(aucs.iter().sum::<f64>() / aucs.len() as f64)
    }
}

const SVG_PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Minimal SVG plot with one polyline per labelled curve.
pub fn roc_svg(curves: &[(String, RocCurve)]) -> String {
    const SIZE: f64 = 400.0;
    const PAD: f64 = 40.0;
    let map = |(x, y): (f64, f64)| (PAD + x * SIZE, PAD + (1.0 - y) * SIZE);
    let full = SIZE + 2.0 * PAD;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = full + 200.0,
        h = full
    );
    let _ = writeln!(out, r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#);
    let _ = writeln!(
        out,
        r##"<line x1="{PAD}" y1="{}" x2="{}" y2="{PAD}" stroke="#999" stroke-dasharray="4"/>"##,
        PAD + SIZE,
        PAD + SIZE
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">false positive rate</text>"#,
        PAD + SIZE / 2.0,
        full - 8.0
    );
    let _ = writeln!(
        out,
        r#"<text x="12" y="{}" transform="rotate(-90 12 {})" text-anchor="middle">true positive rate</text>"#,
        PAD + SIZE / 2.0,
        PAD + SIZE / 2.0
    );
    for (i, (label, curve)) in curves.iter().enumerate() {
        let color = SVG_PALETTE[i % SVG_PALETTE.len()];
        let pts: Vec<String> = curve
            .points
            .iter()
            .map(|&p| {
                let (x, y) = map(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ =
            writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" fill="{color}">{} (AUC {:.3})</text>"#,
            full + 4.0,
            PAD + 14.0 * (i as f64 + 1.0),
            escape_xml(label),
            curve.auc
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
