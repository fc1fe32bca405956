//! The 18-column flow feature schema.
//!
//! "Packet length" everywhere in this schema means transport payload bytes,
//! not the IP total length. `min_seg_size_fwd` is the smallest forward
//! header length (IPv4 + transport). `avg_fwd_segment_size` intentionally
//! repeats `fwd_pkt_len_mean`, and `avg_packet_size` repeats `pkt_len_mean`,
//! so the named columns of the public CICDDoS2019 feature list are all kept.
//! Flow ID is not a numeric feature; it is written as metadata only, as is the
//! flow's first timestamp.

use std::io::{self, Write};

use super::{FlowRecord, FlowmeterError};

pub const FEATURE_COUNT: usize = 18;

/// Canonical column names, in feature order.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "src_ip_enc",
    "src_port",
    "dst_ip_enc",
    "dst_port",
    "flow_duration_us",
    "fwd_header_len_bytes",
    "min_seg_size_fwd",
    "total_len_fwd_payload",
    "fwd_pkt_len_min",
    "fwd_pkt_len_max",
    "fwd_pkt_len_mean",
    "avg_fwd_segment_size",
    "fwd_iat_total_us",
    "subflow_fwd_bytes",
    "pkt_len_min",
    "pkt_len_max",
    "pkt_len_mean",
    "avg_packet_size",
];

/// Column positions within a [`FeatureVector`].
pub mod idx {
    pub const SRC_IP: usize = 0;
    pub const SRC_PORT: usize = 1;
    pub const DST_IP: usize = 2;
    pub const DST_PORT: usize = 3;
    pub const FLOW_DURATION: usize = 4;
    pub const FWD_HEADER_LEN: usize = 5;
    pub const MIN_SEG_SIZE_FWD: usize = 6;
    pub const TOTAL_LEN_FWD: usize = 7;
    pub const FWD_LEN_MIN: usize = 8;
    pub const FWD_LEN_MAX: usize = 9;
    pub const FWD_LEN_MEAN: usize = 10;
    pub const AVG_FWD_SEGMENT: usize = 11;
    pub const FWD_IAT_TOTAL: usize = 12;
    pub const SUBFLOW_FWD_BYTES: usize = 13;
    pub const LEN_MIN: usize = 14;
    pub const LEN_MAX: usize = 15;
    pub const LEN_MEAN: usize = 16;
    pub const AVG_PACKET_SIZE: usize = 17;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_COUNT]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Checks finiteness, non-negativity and the min/mean/max orderings.
    pub fn check_invariants(&self) -> Result<(), String> {
        let v = &self.0;
        if let Some(i) = v.iter().position(|x| !x.is_finite() || *x < 0.0) {
            return Err(format!("{} = {} is not a finite non-negative value", FEATURE_NAMES[i], v[i]));
        }
        let ordered = |lo: usize, mid: usize, hi: usize| v[lo] <= v[mid] && v[mid] <= v[hi];
        if !ordered(idx::FWD_LEN_MIN, idx::FWD_LEN_MEAN, idx::FWD_LEN_MAX) {
            return Err("forward min <= mean <= max violated".into());
        }
        if !ordered(idx::LEN_MIN, idx::LEN_MEAN, idx::LEN_MAX) {
            return Err("packet min <= mean <= max violated".into());
        }
        if v[idx::AVG_FWD_SEGMENT] != v[idx::FWD_LEN_MEAN] {
            return Err("avg_fwd_segment_size differs from fwd_pkt_len_mean".into());
        }
        if v[idx::TOTAL_LEN_FWD] < v[idx::SUBFLOW_FWD_BYTES] {
            return Err("subflow_fwd_bytes exceeds total_len_fwd_payload".into());
        }
        Ok(())
    }
}

/// Computes the feature vector of a finished flow.
pub fn finalize_features(rec: &FlowRecord) -> Result<FeatureVector, FlowmeterError> {
    let fwd = &rec.fwd;
    let bwd = &rec.bwd;
    if fwd.pkt_count == 0 {
        return Err(FlowmeterError::NoForwardPackets);
    }
    let src = rec.fwd_initiator;
    let dst = rec.responder();

    let fwd_mean = fwd.payload_sum as f64 / fwd.pkt_count as f64;
    let total_pkts = fwd.pkt_count + bwd.pkt_count;
    let total_payload = fwd.payload_sum + bwd.payload_sum;
    let all_mean = total_payload as f64 / total_pkts as f64;
    let (all_min, all_max) = if bwd.pkt_count == 0 {
        (fwd.payload_min, fwd.payload_max)
    } else {
        (fwd.payload_min.min(bwd.payload_min), fwd.payload_max.max(bwd.payload_max))
    };

    let mut v = [0.0; FEATURE_COUNT];
    v[idx::SRC_IP] = src.ip as f64;
    v[idx::SRC_PORT] = src.port as f64;
    v[idx::DST_IP] = dst.ip as f64;
    v[idx::DST_PORT] = dst.port as f64;
    v[idx::FLOW_DURATION] = (rec.last_ts_us - rec.first_ts_us) as f64;
    v[idx::FWD_HEADER_LEN] = fwd.header_sum as f64;
    v[idx::MIN_SEG_SIZE_FWD] = rec.min_header_len_fwd as f64;
    v[idx::TOTAL_LEN_FWD] = fwd.payload_sum as f64;
    v[idx::FWD_LEN_MIN] = fwd.payload_min as f64;
    v[idx::FWD_LEN_MAX] = fwd.payload_max as f64;
    v[idx::FWD_LEN_MEAN] = fwd_mean;
    v[idx::AVG_FWD_SEGMENT] = fwd_mean;
    v[idx::FWD_IAT_TOTAL] = rec.fwd_iat_total_us as f64;
    v[idx::SUBFLOW_FWD_BYTES] = (fwd.payload_sum / rec.fwd_subflow_count) as f64;
    v[idx::LEN_MIN] = all_min as f64;
    v[idx::LEN_MAX] = all_max as f64;
    v[idx::LEN_MEAN] = all_mean;
    v[idx::AVG_PACKET_SIZE] = all_mean;
    Ok(FeatureVector(v))
}

/// Integers unpadded; other reals with at most 6 fractional digits.
pub fn format_feature(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 9.0e15 {
        return format!("{}", v as i64);
    }
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

/// Writes finished flows as CSV rows: 18 features, then flow metadata.
pub struct FlowCsvWriter<W: Write> {
    out: W,
    label: Option<String>,
    rows: u64,
}

impl<W: Write> FlowCsvWriter<W> {
    /// `label`, when given, is appended to every row under a `label` column.
    pub fn new(mut out: W, label: Option<String>) -> io::Result<Self> {
        let mut header: Vec<&str> = FEATURE_NAMES.to_vec();
        header.extend(["flow_id", "first_timestamp_us", "protocol"]);
        if label.is_some() {
            header.push("label");
        }
        writeln!(out, "{}", header.join(","))?;
        Ok(FlowCsvWriter { out, label, rows: 0 })
    }

    pub fn write_flow(&mut self, rec: &FlowRecord, fv: &FeatureVector) -> io::Result<()> {
        let mut line = String::with_capacity(256);
        for (i, v) in fv.0.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&format_feature(*v));
        }
        line.push(',');
        line.push_str(&rec.flow_id());
        line.push(',');
        line.push_str(&rec.first_ts_us.to_string());
        line.push(',');
        line.push_str(&rec.key.protocol.to_string());
        if let Some(label) = &self.label {
            line.push(',');
            line.push_str(label);
        }
        line.push('\n');
        self.out.write_all(line.as_bytes())?;
        self.rows += 1;
        Ok(())
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}
