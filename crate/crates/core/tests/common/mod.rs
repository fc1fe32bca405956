#![allow(dead_code)]

use std::ffi::OsStr;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use flowsentry::dataset::{FeatureMatrix, LabeledDataset};
use flowsentry::flowmeter::synth::{tcp_frame, udp_frame, PcapWriter};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn class_names(k: usize) -> Vec<String> {
    (0..k).map(|c| format!("c{c}")).collect()
}

/// `k` Gaussian-ish blobs in `d` dimensions with uniform noise of half-width `spread`.
pub fn blobs(n: usize, d: usize, k: usize, spread: f64, seed: u64) -> LabeledDataset {
    let mut r = rng(seed);
    let centers: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| r.gen_range(-3.0..3.0)).collect()).collect();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % k;
        rows.push(centers[c].iter().map(|m| m + r.gen_range(-spread..spread)).collect::<Vec<f64>>());
        labels.push(c);
    }
    LabeledDataset::new(FeatureMatrix::from_rows(&rows), labels, class_names(k))
}

/// Blobs whose labels are flipped to a random class with probability `noise`.
pub fn noisy_blobs(n: usize, d: usize, k: usize, spread: f64, noise: f64, seed: u64) -> LabeledDataset {
    let mut ds = blobs(n, d, k, spread, seed);
    let mut r = rng(seed ^ 0x5eed);
    for l in ds.labels.iter_mut() {
        if r.gen_bool(noise) {
            *l = r.gen_range(0..k);
        }
    }
    ds
}

/// Two classes separated by a margin along a random direction, plus nuisance features.
pub fn separable_two_class(n: usize, d: usize, seed: u64) -> LabeledDataset {
    let mut r = rng(seed);
    let dir: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    while rows.len() < n {
        let x: Vec<f64> = (0..d).map(|j| r.gen_range(-5.0..5.0) * (j + 1) as f64).collect();
        let proj = x.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>() / norm;
        if proj.abs() < 0.5 {
            continue;
        }
        labels.push(usize::from(proj > 0.0));
        rows.push(x);
    }
    LabeledDataset::new(FeatureMatrix::from_rows(&rows), labels, class_names(2))
}

pub fn random_vectors(n: usize, d: usize, lo: f64, hi: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..n).map(|_| (0..d).map(|_| r.gen_range(lo..hi)).collect()).collect()
}

#[derive(Debug, Clone, Copy)]
pub enum Traffic {
    /// Short bidirectional TCP sessions with mixed payloads.
    Web,
    /// Single SYN packets from many spoofed sources.
    SynFlood,
    /// Large UDP responses from port 53.
    DnsReflection,
}

/// Writes a capture of `flows` flows of the given traffic shape.
pub fn write_capture(path: &Path, traffic: Traffic, flows: usize, seed: u64) {
    let mut r = rng(seed);
    let mut packets: Vec<(u64, Vec<u8>)> = Vec::new();
    for i in 0..flows {
        let start = 1_000_000 + i as u64 * 40_000 + r.gen_range(0..20_000);
        match traffic {
            Traffic::Web => {
                let client = [10, 0, (i / 200) as u8, (i % 200) as u8 + 1];
                let server = [93, 184, 216, 34];
                let port = 40_000 + i as u16;
                let mut t = start;
                for k in 0..r.gen_range(3..10) {
                    let frame = if k % 2 == 0 {
                        tcp_frame(client, server, port, 443, 0x18, r.gen_range(0..600))
                    } else {
                        tcp_frame(server, client, 443, port, 0x18, r.gen_range(200..1400))
                    };
                    packets.push((t, frame));
                    t += r.gen_range(1_000..300_000);
                }
            }
            Traffic::SynFlood => {
                let src = [172, 16, r.gen(), r.gen()];
                let port = r.gen_range(1024..65535);
                for k in 0..r.gen_range(1..3u64) {
                    packets.push((start + k * 3_000_000, tcp_frame(src, [10, 0, 0, 5], port, 80, 0x02, 0)));
                }
            }
            Traffic::DnsReflection => {
                let src = [8, 8, r.gen(), r.gen()];
                let port = r.gen_range(1024..65535);
                let mut t = start;
                for _ in 0..r.gen_range(1..4) {
                    packets.push((t, udp_frame(src, [10, 0, 0, 5], 53, port, r.gen_range(400..1400))));
                    t += r.gen_range(100..5_000);
                }
            }
        }
    }
    packets.sort_by_key(|(t, _)| *t);
    let mut w = PcapWriter::new(BufWriter::new(File::create(path).unwrap())).unwrap();
    for (t, frame) in &packets {
        w.write_frame(*t, frame).unwrap();
    }
    drop(w.into_inner());
}

/// Runs the command-line tool in-process.
pub fn cli<S: AsRef<OsStr>>(args: &[S]) -> i32 {
    let mut argv = vec![OsStr::new("flowsentry").to_os_string()];
    argv.extend(args.iter().map(|a| a.as_ref().to_os_string()));
    flowsentry::cli::dispatch(argv)
}

/// Fraction of rows whose prediction equals the label.
pub fn accuracy(ds: &LabeledDataset, predict: impl Fn(&[f64]) -> usize) -> f64 {
    let hits = (0..ds.len()).filter(|&i| predict(ds.features.row(i)) == ds.labels[i]).count();
    hits as f64 / ds.len() as f64
}
