//! Peak resident memory of `predict` must not grow with the number of rows.

#![cfg(target_os = "linux")]

mod common;

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::process::{Command, Stdio};

use flowsentry::dataset::Label;
use flowsentry::ensembles::{train_forest, ForestParams};
use flowsentry::flowmeter::{FEATURE_COUNT, FEATURE_NAMES};
use flowsentry::model_store::{self, Classifier, Model};

const SLACK_KB: u64 = 8 * 1024;

fn peak_rss_kb(pid: u32) -> u64 {
    let status = fs::read_to_string(format!("/proc/{pid}/status")).unwrap();
    let line = status.lines().find(|l| l.starts_with("VmHWM:")).expect("VmHWM line");
    line.split_whitespace().nth(1).unwrap().parse().unwrap()
}

/// Pipes `rows` generated rows through `predict` and returns its peak RSS
/// sampled just before stdin is closed.
fn stream(model: &Path, rows: usize) -> u64 {
    let mut child = Command::new(env!("CARGO_BIN_EXE_flowsentry"))
        .args(["predict", "--in", "-", "--out", "-", "--model"])
        .arg(model)
        .stdin(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let mut input = BufWriter::with_capacity(1 << 16, child.stdin.take().unwrap());
    writeln!(input, "flow_id,{}", FEATURE_NAMES.join(",")).unwrap();
    let mut line = String::new();
    for i in 0..rows {
        line.clear();
        write!(line, "f{i}").unwrap();
        for j in 0..FEATURE_COUNT {
            write!(line, ",{}", (i * 31 + j * 7) % 1500).unwrap();
        }
        line.push('\n');
        input.write_all(line.as_bytes()).unwrap();
    }
    input.flush().unwrap();
    let stdin = input.into_inner().map_err(io::IntoInnerError::into_error).unwrap();
    // Give the reader time to drain the pipe before sampling.
    std::thread::sleep(std::time::Duration::from_millis(200));
    let peak = peak_rss_kb(child.id());
    drop(stdin);
    assert!(child.wait().unwrap().success());
    peak
}

#[test]
fn peak_memory_is_flat_in_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut ds = common::blobs(2000, FEATURE_COUNT, 13, 2.0, 5);
    ds.label_names = Label::vocabulary();
    let forest = train_forest(&ds, &ForestParams { n_trees: 20, seed: 5, ..ForestParams::default() }).unwrap();
    let path = dir.path().join("rf.model");
    model_store::save_file(
        &Model { classifier: Classifier::Forest(forest), labels: ds.label_names.clone(), seed: 5 },
        &path,
    )
    .unwrap();

    let small = stream(&path, 10_000);
    let large = stream(&path, 1_000_000);
    assert!(large <= small + SLACK_KB, "peak RSS grew from {small} kB to {large} kB");
}
