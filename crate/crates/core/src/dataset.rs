//! Labelled feature tables: CSV ingestion, class balancing and stratified splits.
//!
//! Input files may use either the CICDDoS2019 column names (surrounding
//! whitespace is ignored, so `" Flow Duration"` matches) or the canonical names
//! written by the flow extractor. Everything outside the 18 schema columns and
//! the label, including `Timestamp` and `Flow ID`, is discarded on load.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use thiserror::Error;

use crate::flowmeter::{parse_ipv4, FEATURE_COUNT, FEATURE_NAMES};
use crate::rng;

pub const SCHEMA_VERSION: &str = "flowsentry-features-v1";

/// CICDDoS2019 spelling of each canonical column, in feature order.
pub const CIC_COLUMN_NAMES: [&str; FEATURE_COUNT] = [
    "Source IP",
    "Source Port",
    "Destination IP",
    "Destination Port",
    "Flow Duration",
    "Fwd Header Length",
    "min_seg_size_forward",
    "Total Length of Fwd Packets",
    "Fwd Packet Length Min",
    "Fwd Packet Length Max",
    "Fwd Packet Length Mean",
    "Avg Fwd Segment Size",
    "Fwd IAT Total",
    "Subflow Fwd Bytes",
    "Min Packet Length",
    "Max Packet Length",
    "Packet Length Mean",
    "Average Packet Size",
];

pub const LABEL_COLUMN: &str = "label";

/// Columns holding dotted-quad addresses in CIC files.
const IP_COLUMNS: [usize; 2] = [0, 2];

/// The closed traffic class vocabulary. `Benign` is index 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Benign,
    DrdosDns,
    DrdosLdap,
    DrdosMssql,
    DrdosNetbios,
    DrdosNtp,
    DrdosSnmp,
    DrdosSsdp,
    DrdosUdp,
    Portmap,
    Syn,
    Tftp,
    UdpLag,
}

impl Label {
    pub const ALL: [Label; 13] = [
        Label::Benign,
        Label::DrdosDns,
        Label::DrdosLdap,
        Label::DrdosMssql,
        Label::DrdosNetbios,
        Label::DrdosNtp,
        Label::DrdosSnmp,
        Label::DrdosSsdp,
        Label::DrdosUdp,
        Label::Portmap,
        Label::Syn,
        Label::Tftp,
        Label::UdpLag,
    ];

    /// Too few WebDDoS records exist to learn from; such rows are dropped on load.
    pub const EXCLUDED: &'static str = "WebDDoS";

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Benign => "BENIGN",
            Label::DrdosDns => "DrDoS_DNS",
            Label::DrdosLdap => "DrDoS_LDAP",
            Label::DrdosMssql => "DrDoS_MSSQL",
            Label::DrdosNetbios => "DrDoS_NetBIOS",
            Label::DrdosNtp => "DrDoS_NTP",
            Label::DrdosSnmp => "DrDoS_SNMP",
            Label::DrdosSsdp => "DrDoS_SSDP",
            Label::DrdosUdp => "DrDoS_UDP",
            Label::Portmap => "Portmap",
            Label::Syn => "Syn",
            Label::Tftp => "TFTP",
            Label::UdpLag => "UDP-lag",
        }
    }

    /// Vocabulary names in index order.
    pub fn vocabulary() -> Vec<String> {
        Label::ALL.iter().map(|l| l.name().to_string()).collect()
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        // Captures from different days spell the same class differently
        // (`DrDoS_LDAP` vs `LDAP`, `UDP-lag` vs `UDPLag`).
        fn fold(s: &str) -> String {
            let lower = s.trim().to_ascii_lowercase();
            let bare = lower.strip_prefix("drdos_").unwrap_or(&lower);
            bare.chars().filter(|c| *c != '-' && *c != '_').collect()
        }
        let key = fold(s);
        Label::ALL
            .iter()
            .copied()
            .find(|l| fold(l.name()) == key)
            .ok_or_else(|| format!("unknown label {:?}", s.trim()))
    }
}

/// Dense row-major matrix of feature values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    n_cols: usize,
}

impl FeatureMatrix {
    pub fn new(data: Vec<f64>, n_cols: usize) -> Self {
        assert!(n_cols > 0, "matrix needs at least one column");
        assert_eq!(data.len() % n_cols, 0, "data length is not a multiple of n_cols");
        FeatureMatrix { data, n_cols }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let n_cols = rows.first().map_or(1, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), n_cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        FeatureMatrix::new(data, n_cols)
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.n_cols
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n_cols + col]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.n_cols)
    }

    pub fn select(&self, indices: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.n_cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix { data, n_cols: self.n_cols }
    }

    /// Applies `f(col, value)` to every entry.
    pub fn map(&self, f: impl Fn(usize, f64) -> f64) -> FeatureMatrix {
        let n = self.n_cols;
        let data = self.data.iter().enumerate().map(|(k, &v)| f(k % n, v)).collect();
        FeatureMatrix { data, n_cols: n }
    }
}

/// Feature matrix plus one class index per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: FeatureMatrix,
    pub labels: Vec<usize>,
    pub label_names: Vec<String>,
    pub schema_version: String,
    pub provenance: Vec<String>,
}

impl LabeledDataset {
    pub fn new(features: FeatureMatrix, labels: Vec<usize>, label_names: Vec<String>) -> Self {
        assert_eq!(features.n_rows(), labels.len(), "row count differs from label count");
        assert!(labels.iter().all(|&l| l < label_names.len()), "label index outside the vocabulary");
        LabeledDataset {
            features,
            labels,
            label_names,
            schema_version: SCHEMA_VERSION.to_string(),
            provenance: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.n_cols()
    }

    pub fn n_classes(&self) -> usize {
        self.label_names.len()
    }

    /// Row count per vocabulary index.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn classes_present(&self) -> usize {
        self.class_counts().iter().filter(|&&c| c > 0).count()
    }

    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            label_names: self.label_names.clone(),
            schema_version: self.schema_version.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Row indices of each class, in dataset order.
    fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.n_classes()];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        by_class
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: missing required column {column:?}")]
    MissingColumn { path: String, column: String },
    #[error("{path}: row {row}: unknown label {label:?}")]
    UnknownLabel { path: String, row: u64, label: String },
    #[error("no usable rows remain after cleaning")]
    Empty,
    #[error("{0}")]
    Contract(String),
}

/// Rows discarded during loading, by reason.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DropCounters {
    pub excluded_label: u64,
    pub non_finite: u64,
    pub unparseable: u64,
}

impl DropCounters {
    pub fn total(&self) -> u64 {
        self.excluded_label + self.non_finite + self.unparseable
    }

    fn merge(&mut self, other: &DropCounters) {
        self.excluded_label += other.excluded_label;
        self.non_finite += other.non_finite;
        self.unparseable += other.unparseable;
    }
}

#[derive(Debug, Clone)]
pub struct LoadReport {
    pub dataset: LabeledDataset,
    pub rows_read: u64,
    pub drops: DropCounters,
}

/// Where each schema column (and optionally the label) lives in a CSV header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    pub features: [usize; FEATURE_COUNT],
    pub label: Option<usize>,
}

/// Matches header names against canonical and CICDDoS2019 column names.
pub fn resolve_columns(
    headers: &csv::StringRecord,
    require_label: bool,
    path: &str,
) -> Result<ColumnMap, DatasetError> {
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    let find = |cands: &[&str]| names.iter().position(|h| cands.iter().any(|c| h.eq_ignore_ascii_case(c)));
    let mut features = [0usize; FEATURE_COUNT];
    for (i, slot) in features.iter_mut().enumerate() {
        *slot = find(&[FEATURE_NAMES[i], CIC_COLUMN_NAMES[i]]).ok_or_else(|| DatasetError::MissingColumn {
            path: path.to_string(),
            column: format!("{} (or {:?})", FEATURE_NAMES[i], CIC_COLUMN_NAMES[i]),
        })?;
    }
    let label = find(&[LABEL_COLUMN]);
    if require_label && label.is_none() {
        return Err(DatasetError::MissingColumn { path: path.to_string(), column: LABEL_COLUMN.to_string() });
    }
    Ok(ColumnMap { features, label })
}

/// Outcome of parsing one feature cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Value(f64),
    NonFinite,
    Unparseable,
}

/// Parses a numeric cell; IP columns also accept dotted quads.
pub fn parse_cell(text: &str, col: usize) -> Cell {
    let t = text.trim();
    if IP_COLUMNS.contains(&col) {
        if let Some(ip) = parse_ipv4(t) {
            return Cell::Value(ip as f64);
        }
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Cell::Value(v),
        Ok(_) => Cell::NonFinite,
        Err(_) => Cell::Unparseable,
    }
}

/// Parses the 18 schema cells of one record.
pub fn parse_feature_row(record: &csv::StringRecord, map: &ColumnMap) -> Result<[f64; FEATURE_COUNT], Cell> {
    let mut row = [0.0; FEATURE_COUNT];
    let mut worst = None;
    for (i, &col) in map.features.iter().enumerate() {
        match record.get(col).map_or(Cell::Unparseable, |t| parse_cell(t, i)) {
            Cell::Value(v) => row[i] = v,
            Cell::Unparseable => return Err(Cell::Unparseable),
            Cell::NonFinite => worst = Some(Cell::NonFinite),
        }
    }
    match worst {
        Some(c) => Err(c),
        None => Ok(row),
    }
}

struct FileRows {
    data: Vec<f64>,
    labels: Vec<usize>,
    rows_read: u64,
    drops: DropCounters,
}

fn read_rows<R: Read>(reader: R, path: &str) -> Result<FileRows, DatasetError> {
    let csv_err = |source| DatasetError::Csv { path: path.to_string(), source };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let map = resolve_columns(&headers, true, path)?;
    let label_col = map.label.expect("label column required");
    let mut out = FileRows { data: Vec::new(), labels: Vec::new(), rows_read: 0, drops: DropCounters::default() };
    let mut record = csv::StringRecord::new();
    while rdr.read_record(&mut record).map_err(csv_err)? {
        out.rows_read += 1;
        let raw_label = record.get(label_col).unwrap_or("").trim();
        if raw_label.eq_ignore_ascii_case(Label::EXCLUDED) {
            out.drops.excluded_label += 1;
            continue;
        }
        let label: Label = raw_label.parse().map_err(|_| DatasetError::UnknownLabel {
            path: path.to_string(),
            row: out.rows_read,
            label: raw_label.to_string(),
        })?;
        match parse_feature_row(&record, &map) {
            Ok(row) => {
                out.data.extend_from_slice(&row);
                out.labels.push(label.index());
            }
            Err(Cell::NonFinite) => out.drops.non_finite += 1,
            Err(_) => out.drops.unparseable += 1,
        }
    }
    Ok(out)
}

fn assemble(parts: Vec<FileRows>, provenance: Vec<String>) -> Result<LoadReport, DatasetError> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut drops = DropCounters::default();
    let mut rows_read = 0;
    for p in parts {
        data.extend(p.data);
        labels.extend(p.labels);
        drops.merge(&p.drops);
        rows_read += p.rows_read;
    }
    if labels.is_empty() {
        return Err(DatasetError::Empty);
    }
    let mut dataset = LabeledDataset::new(FeatureMatrix::new(data, FEATURE_COUNT), labels, Label::vocabulary());
    dataset.provenance = provenance;
    Ok(LoadReport { dataset, rows_read, drops })
}

/// Loads and cleans one or more CSV files. Files are parsed in parallel and
/// concatenated in argument order.
pub fn load_csv<P: AsRef<Path> + Sync>(paths: &[P]) -> Result<LoadReport, DatasetError> {
    let parts = paths
        .par_iter()
        .map(|p| {
            let name = p.as_ref().display().to_string();
            let file = File::open(p.as_ref()).map_err(|source| DatasetError::Io { path: name.clone(), source })?;
            read_rows(io::BufReader::new(file), &name)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let provenance = paths.iter().map(|p| p.as_ref().display().to_string()).collect();
    assemble(parts, provenance)
}

/// Like [`load_csv`] for a single in-memory source.
pub fn load_reader<R: Read>(reader: R, name: &str) -> Result<LoadReport, DatasetError> {
    let part = read_rows(reader, name)?;
    assemble(vec![part], vec![name.to_string()])
}

/// Writes the dataset in canonical layout: 18 schema columns then `label`.
/// Values use the shortest representation that parses back exactly.
pub fn write_csv<W: Write>(ds: &LabeledDataset, mut out: W) -> io::Result<()> {
    let mut header: Vec<&str> = FEATURE_NAMES.to_vec();
    header.push(LABEL_COLUMN);
    writeln!(out, "{}", header.join(","))?;
    let mut line = String::new();
    for (row, &label) in ds.features.rows().zip(&ds.labels) {
        line.clear();
        for v in row {
            line.push_str(&format!("{v},"));
        }
        line.push_str(&ds.label_names[label]);
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    out.flush()
}

pub fn write_csv_file(ds: &LabeledDataset, path: &Path) -> Result<(), DatasetError> {
    let io_err = |source| DatasetError::Io { path: path.display().to_string(), source };
    let file = File::create(path).map_err(io_err)?;
    write_csv(ds, io::BufWriter::new(file)).map_err(io_err)
}

#[derive(Debug, Clone)]
pub struct BalanceReport {
    pub dataset: LabeledDataset,
    /// Selected rows per vocabulary index.
    pub selected: Vec<usize>,
    /// Classes that had fewer than `per_class` rows and were used in full.
    pub short_classes: Vec<usize>,
}

/// Samples `min(per_class, available)` rows of every present class without
/// replacement, then shuffles the result. Never upsamples.
pub fn balance(ds: &LabeledDataset, per_class: usize, seed: u64) -> Result<BalanceReport, DatasetError> {
    if per_class == 0 {
        return Err(DatasetError::Contract("per_class must be at least 1".into()));
    }
    if ds.is_empty() {
        return Err(DatasetError::Empty);
    }
    let mut chosen = Vec::new();
    let mut selected = vec![0; ds.n_classes()];
    let mut short_classes = Vec::new();
    for (class, mut idx) in ds.indices_by_class().into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < per_class {
            warn!(
                "class {} has {} rows, fewer than the requested {per_class}; using all of them",
                ds.label_names[class],
                idx.len()
            );
            short_classes.push(class);
        }
        let take = per_class.min(idx.len());
        let mut r = rng::stream(&[seed, rng::DOMAIN_BALANCE, class as u64]);
        let (picked, _) = idx.partial_shuffle(&mut r, take);
        selected[class] = take;
        chosen.extend_from_slice(picked);
    }
    chosen.shuffle(&mut rng::stream(&[seed, rng::DOMAIN_BALANCE_ORDER]));
    Ok(BalanceReport { dataset: ds.select(&chosen), selected, short_classes })
}

#[derive(Debug, Clone)]
pub struct SplitReport {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    /// Classes with a single row, which was sent to the training side.
    pub singleton_classes: Vec<usize>,
}

/// Number of training rows a class of `count` rows contributes.
pub fn train_share(count: usize, train_fraction: f64) -> usize {
    if count == 1 {
        return 1;
    }
    // The epsilon keeps products such as 0.29 * 100 from flooring to 28.
    ((count as f64 * train_fraction + 1e-9).floor() as usize).min(count)
}

/// Stratified partition: each class sends `train_share(count, fraction)`
/// seeded-shuffled rows to train and the rest to test. Both outputs keep the
/// input's row order.
pub fn split(ds: &LabeledDataset, train_fraction: f64, seed: u64) -> Result<SplitReport, DatasetError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::Contract(format!(
            "train fraction must lie strictly between 0 and 1, got {train_fraction}"
        )));
    }
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    let mut singleton_classes = Vec::new();
    for (class, mut idx) in ds.indices_by_class().into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() == 1 {
            warn!("class {} has a single row; it goes to the training split", ds.label_names[class]);
            singleton_classes.push(class);
        }
        let n_train = train_share(idx.len(), train_fraction);
        idx.shuffle(&mut rng::stream(&[seed, rng::DOMAIN_SPLIT, class as u64]));
        train_idx.extend_from_slice(&idx[..n_train]);
        test_idx.extend_from_slice(&idx[n_train..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok(SplitReport {
        train: ds.select(&train_idx),
        test: ds.select(&test_idx),
        train_indices: train_idx,
        test_indices: test_idx,
        singleton_classes,
    })
}

/// Per-class row counts keyed by label name, for manifests.
pub fn class_count_map(ds: &LabeledDataset) -> BTreeMap<String, usize> {
    ds.class_counts()
        .into_iter()
        .enumerate()
        .filter(|(_, c)| *c > 0)
        .map(|(i, c)| (ds.label_names[i].clone(), c))
        .collect()
}
