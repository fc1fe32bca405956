//! Packet capture to flow feature extraction.
//!
//! Pipeline: [`pcap::PcapReader`] decodes packets, [`flow::FlowTable`] merges
//! them into bidirectional flows, and [`features::finalize_features`] turns a
//! finished flow into its 18-value [`features::FeatureVector`].

pub mod features;
pub mod flow;
pub mod pcap;
pub mod synth;

use std::io;
use std::net::Ipv4Addr;

use thiserror::Error;

pub use features::{finalize_features, FeatureVector, FEATURE_COUNT, FEATURE_NAMES};
pub use flow::{FlowKey, FlowMeter, FlowRecord, FlowTable, MeterConfig};
pub use pcap::{parse_pcap, ParsedCapture, PcapReader, SkipCounters};

pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;

pub const DEFAULT_ACTIVITY_TIMEOUT_US: u64 = 1_000_000;
pub const DEFAULT_IDLE_TIMEOUT_US: u64 = 120_000_000;

#[derive(Debug, Error)]
pub enum FlowmeterError {
    #[error("pcap format error: {0}")]
    PcapFormat(String),
    #[error("flow has no forward packets")]
    NoForwardPackets,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One decoded IPv4 TCP/UDP packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketEvent {
    pub timestamp_us: u64,
    pub src_ip: u32,
    pub dst_ip: u32,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
    /// IPv4 header plus transport header.
    pub header_len_bytes: u32,
    /// Transport payload: IPv4 total length minus `header_len_bytes`.
    pub payload_len_bytes: u32,
    pub tcp_flags: u8,
}

impl PacketEvent {
    pub fn source(&self) -> Endpoint {
        Endpoint::new(self.src_ip, self.src_port)
    }

    pub fn destination(&self) -> Endpoint {
        Endpoint::new(self.dst_ip, self.dst_port)
    }
}

/// An (address, port) pair. Ordering is lexicographic on (ip, port).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Endpoint {
    pub ip: u32,
    pub port: u16,
}

impl Endpoint {
    pub fn new(ip: u32, port: u16) -> Self {
        Endpoint { ip, port }
    }

    pub fn addr(&self) -> Ipv4Addr {
        Ipv4Addr::from(self.ip)
    }
}

/// Big-endian dotted-quad encoding: `a.b.c.d` maps to `a·2²⁴ + b·2¹⁶ + c·2⁸ + d`.
pub fn encode_ipv4(addr: Ipv4Addr) -> u32 {
    u32::from(addr)
}

/// Parses a dotted quad such as `192.168.1.1` into its 32-bit encoding.
pub fn parse_ipv4(text: &str) -> Option<u32> {
    text.trim().parse::<Ipv4Addr>().ok().map(encode_ipv4)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_quad_encoding() {
        assert_eq!(parse_ipv4("192.168.1.1"), Some(3_232_235_777));
        assert_eq!(192u32 * (1 << 24) + 168 * (1 << 16) + (1 << 8) + 1, 3_232_235_777);
        assert_eq!(parse_ipv4(" 0.0.0.0 "), Some(0));
        assert_eq!(parse_ipv4("255.255.255.255"), Some(u32::MAX));
        assert_eq!(parse_ipv4("256.1.1.1"), None);
        assert_eq!(parse_ipv4("fe80::1"), None);
    }
}
