mod common;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use common::{cli, Traffic};

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    /// Extracts three labelled captures and prepares a balanced split.
    fn prepared() -> Workspace {
        let ws = Workspace { dir: tempfile::tempdir().unwrap() };
        let mut csvs = Vec::new();
        for (i, (traffic, label)) in
            [(Traffic::Web, "BENIGN"), (Traffic::SynFlood, "Syn"), (Traffic::DnsReflection, "DrDoS_DNS")]
                .iter()
                .enumerate()
        {
            let pcap = ws.path(&format!("{label}.pcap"));
            common::write_capture(&pcap, *traffic, 90, 7 + i as u64);
            let csv = ws.path(&format!("{label}.csv"));
            assert_eq!(
                cli(&[
                    os("extract"),
                    os("--pcap"),
                    pcap.into(),
                    os("--out"),
                    csv.clone().into(),
                    os("--label"),
                    os(label)
                ]),
                0
            );
            csvs.push(csv);
        }
        let mut args = vec![os("prepare")];
        for c in &csvs {
            args.push(os("--in"));
            args.push(c.into());
        }
        args.extend([os("--out"), ws.path("split").into(), os("--per-class"), os("60"), os("--seed"), os("3")]);
        assert_eq!(cli(&args), 0);
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, algo: &str, model: &str, extra: &[&str]) -> Vec<u8> {
        let mut args: Vec<String> = ["train", "--algo", algo, "--seed", "7", "--train"].map(String::from).to_vec();
        args.push(self.path("split/train.csv").display().to_string());
        args.push("--model".into());
        args.push(self.path(model).display().to_string());
        args.extend(extra.iter().map(|s| s.to_string()));
        assert_eq!(cli(&args), 0, "train {algo}");
        fs::read(self.path(model)).unwrap()
    }
}

fn os(s: &str) -> std::ffi::OsString {
    s.into()
}

#[test]
fn predict_reproduces_evaluate_row_for_row() {
    let ws = Workspace::prepared();
    let manifest = fs::read_to_string(ws.path("split/manifest.txt")).unwrap();
    assert!(manifest.lines().any(|l| l == "selected_rows = 180"), "{manifest}");

    for algo in ["dt", "rf", "gbt", "svm"] {
        let model = format!("{algo}.model");
        ws.train(algo, &model, &[]);
        let (eval_preds, pred_out) = (ws.path(&format!("{algo}.eval.csv")), ws.path(&format!("{algo}.pred.csv")));
        let code = cli(&[
            os("evaluate"),
            os("--model"),
            ws.path(&model).into(),
            os("--test"),
            ws.path("split/test.csv").into(),
            os("--report"),
            ws.path(&format!("{algo}.report.txt")).into(),
            os("--roc-dir"),
            ws.path(&format!("{algo}-roc")).into(),
            os("--predictions"),
            eval_preds.clone().into(),
        ]);
        assert_eq!(code, 0);
        let code = cli(&[
            os("predict"),
            os("--model"),
            ws.path(&model).into(),
            os("--in"),
            ws.path("split/test.csv").into(),
            os("--out"),
            pred_out.clone().into(),
        ]);
        assert_eq!(code, 0);
        let (a, b) = (fs::read_to_string(&eval_preds).unwrap(), fs::read_to_string(&pred_out).unwrap());
        assert_eq!(a, b, "{algo}");
        assert_eq!(a.lines().count(), 1 + 36);
        assert!(ws.path(&format!("{algo}.report.txt.manifest.txt")).exists());
        assert!(ws.path(&format!("{algo}-roc/roc_Syn.csv")).exists());
    }
}

#[test]
fn training_is_reproducible_across_runs_and_workers() {
    let ws = Workspace::prepared();
    for algo in ["rf", "gbt", "svm"] {
        let a = ws.train(algo, "a.model", &[]);
        let b = ws.train(algo, "b.model", &[]);
        assert_eq!(a, b, "{algo} twice");
        let one = ws.train(algo, "one.model", &["--jobs", "1"]);
        let four = ws.train(algo, "four.model", &["--jobs", "4"]);
        assert_eq!(one, four, "{algo} with 1 and 4 workers");
        assert_eq!(one, a);
    }
    let other_seed = {
        let mut args: Vec<String> = ["train", "--algo", "rf", "--seed", "8", "--train"].map(String::from).to_vec();
        args.push(ws.path("split/train.csv").display().to_string());
        args.push("--model".into());
        args.push(ws.path("c.model").display().to_string());
        assert_eq!(cli(&args), 0);
        fs::read(ws.path("c.model")).unwrap()
    };
    assert_ne!(other_seed, ws.train("rf", "a.model", &[]));
}

#[test]
fn bad_inputs_exit_with_data_error() {
    let ws = Workspace::prepared();
    ws.train("dt", "dt.model", &[]);

    let corrupt = ws.path("corrupt.model");
    let text = fs::read_to_string(ws.path("dt.model")).unwrap();
    fs::write(&corrupt, &text[..text.len() / 2]).unwrap();
    let test = ws.path("split/test.csv");
    assert_eq!(
        cli(&[
            os("predict"),
            os("--model"),
            corrupt.into(),
            os("--in"),
            test.clone().into(),
            os("--out"),
            ws.path("p.csv").into()
        ]),
        2
    );

    let narrow = ws.path("narrow.csv");
    fs::write(&narrow, "a,b,Label\n1,2,BENIGN\n").unwrap();
    assert_eq!(
        cli(&[
            os("train"),
            os("--algo"),
            os("dt"),
            os("--train"),
            narrow.into(),
            os("--model"),
            ws.path("x.model").into()
        ]),
        2
    );

    let unknown = ws.path("unknown.csv");
    let mut lines: Vec<String> = fs::read_to_string(&test).unwrap().lines().take(3).map(String::from).collect();
    let last = lines.pop().unwrap();
    lines.push(format!("{},NotAnAttack", last.rsplit_once(',').unwrap().0));
    fs::write(&unknown, lines.join("\n") + "\n").unwrap();
    assert_eq!(
        cli(&[os("prepare"), os("--in"), unknown.into(), os("--out"), ws.path("u").into(), os("--per-class"), os("1")]),
        2
    );

    assert_eq!(cli(&[os("extract"), os("--pcap"), test.into(), os("--out"), ws.path("f.csv").into()]), 2);
}

#[test]
fn bad_flags_exit_with_usage_error() {
    assert_eq!(cli(&["train", "--algo", "knn", "--train", "a.csv", "--model", "m"]), 1);
    assert_eq!(cli(&["prepare", "--in", "a.csv", "--out", "d"]), 1);
    assert_eq!(cli(&["frobnicate"]), 1);
    assert_eq!(cli(&["evaluate", "--model"]), 1);
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flowsentry"))
}

fn run_piped(args: &[&Path], input: &[u8]) -> (i32, Vec<u8>, String) {
    let mut child =
        binary().args(args).stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::piped()).spawn().unwrap();
    child.stdin.take().unwrap().write_all(input).unwrap();
    let out = child.wait_with_output().unwrap();
    (out.status.code().unwrap(), out.stdout, String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn predict_streams_between_stdin_and_stdout() {
    let ws = Workspace::prepared();
    ws.train("gbt", "gbt.model", &["--n-rounds", "5"]);
    let file_out = ws.path("p.csv");
    assert_eq!(
        cli(&[
            os("predict"),
            os("--model"),
            ws.path("gbt.model").into(),
            os("--in"),
            ws.path("split/test.csv").into(),
            os("--out"),
            file_out.clone().into()
        ]),
        0
    );
    let input = fs::read(ws.path("split/test.csv")).unwrap();
    let model = ws.path("gbt.model");
    let (code, stdout, stderr) = run_piped(
        &[
            Path::new("predict"),
            Path::new("--model"),
            &model,
            Path::new("--in"),
            Path::new("-"),
            Path::new("--out"),
            Path::new("-"),
        ],
        &input,
    );
    assert_eq!(code, 0, "{stderr}");
    assert_eq!(stdout, fs::read(&file_out).unwrap());
}

#[test]
fn errors_name_the_offending_file() {
    let ws = Workspace::prepared();
    let missing = ws.path("nope.model");
    let test = ws.path("split/test.csv");
    let (code, _, stderr) = run_piped(
        &[
            Path::new("predict"),
            Path::new("--model"),
            &missing,
            Path::new("--in"),
            &test,
            Path::new("--out"),
            Path::new("-"),
        ],
        b"",
    );
    assert_eq!(code, 2);
    assert!(stderr.contains("nope.model"), "{stderr}");
}

#[test]
fn config_file_supplies_defaults_that_flags_override() {
    let ws = Workspace::prepared();
    let config = ws.path("train.conf");
    fs::write(
        &config,
        format!(
            "# forest settings\nalgo = rf\ntrain = {}\nn-trees = 5\nseed = 99\n",
            ws.path("split/train.csv").display()
        ),
    )
    .unwrap();
    let via_config = ws.path("cfg.model");
    assert_eq!(
        cli(&[
            os("train"),
            os("--config"),
            config.into(),
            os("--seed"),
            os("7"),
            os("--model"),
            via_config.clone().into()
        ]),
        0
    );
    let direct = ws.train("rf", "direct.model", &["--n-trees", "5"]);
    assert_eq!(fs::read(via_config).unwrap(), direct);
}
