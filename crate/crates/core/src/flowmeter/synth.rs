//! Builders for synthetic Ethernet/IPv4 frames and classic pcap files.
//!
//! Used by the test suites and handy for producing small replayable captures.

use std::io::{self, Write};

use super::{PROTO_TCP, PROTO_UDP};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteOrder {
    Little,
    Big,
}

impl ByteOrder {
    fn u16(self, v: u16) -> [u8; 2] {
        match self {
            ByteOrder::Little => v.to_le_bytes(),
            ByteOrder::Big => v.to_be_bytes(),
        }
    }

    fn u32(self, v: u32) -> [u8; 4] {
        match self {
            ByteOrder::Little => v.to_le_bytes(),
            ByteOrder::Big => v.to_be_bytes(),
        }
    }
}

pub fn global_header(order: ByteOrder, nanosecond: bool) -> Vec<u8> {
    let magic = if nanosecond { 0xa1b2_3c4d } else { 0xa1b2_c3d4 };
    let mut out = Vec::with_capacity(24);
    out.extend(order.u32(magic));
    out.extend(order.u16(2));
    out.extend(order.u16(4));
    out.extend(order.u32(0)); // thiszone
    out.extend(order.u32(0)); // sigfigs
    out.extend(order.u32(65_535));
    out.extend(order.u32(1));
    out
}

/// One record: 16-byte record header followed by the frame bytes.
pub fn record(order: ByteOrder, ts_sec: u32, ts_frac: u32, frame: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + frame.len());
    out.extend(order.u32(ts_sec));
    out.extend(order.u32(ts_frac));
    out.extend(order.u32(frame.len() as u32));
    out.extend(order.u32(frame.len() as u32));
    out.extend(frame);
    out
}

fn ethernet_header(ethertype: u16) -> Vec<u8> {
    let mut out = vec![0x02, 0, 0, 0, 0, 0x02, 0x02, 0, 0, 0, 0, 0x01];
    out.extend(ethertype.to_be_bytes());
    out
}

fn ipv4_header(src: [u8; 4], dst: [u8; 4], protocol: u8, total_len: u16) -> Vec<u8> {
    let mut h = vec![0x45, 0];
    h.extend(total_len.to_be_bytes());
    h.extend([0, 0, 0x40, 0, 64, protocol, 0, 0]);
    h.extend(src);
    h.extend(dst);
    let mut sum: u32 = h.chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as u32).sum();
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    let csum = !(sum as u16);
    h[10..12].copy_from_slice(&csum.to_be_bytes());
    h
}

/// Ethernet + IPv4 (IHL 5) + UDP frame with `payload_len` zero bytes of payload.
pub fn udp_frame(src: [u8; 4], dst: [u8; 4], sport: u16, dport: u16, payload_len: u16) -> Vec<u8> {
    let total = 20 + 8 + payload_len;
    let mut f = ethernet_header(0x0800);
    f.extend(ipv4_header(src, dst, PROTO_UDP, total));
    f.extend(sport.to_be_bytes());
    f.extend(dport.to_be_bytes());
    f.extend((8 + payload_len).to_be_bytes());
    f.extend([0, 0]);
    f.resize(f.len() + payload_len as usize, 0);
    f
}

/// Ethernet + IPv4 (IHL 5) + 20-byte TCP header frame.
pub fn tcp_frame(src: [u8; 4], dst: [u8; 4], sport: u16, dport: u16, flags: u8, payload_len: u16) -> Vec<u8> {
    let total = 20 + 20 + payload_len;
    let mut f = ethernet_header(0x0800);
    f.extend(ipv4_header(src, dst, PROTO_TCP, total));
    f.extend(sport.to_be_bytes());
    f.extend(dport.to_be_bytes());
    f.extend([0, 0, 0, 1, 0, 0, 0, 0]); // seq, ack
    f.extend([0x50, flags, 0xff, 0xff, 0, 0, 0, 0]);
    f.resize(f.len() + payload_len as usize, 0);
    f
}

pub fn arp_frame() -> Vec<u8> {
    let mut f = ethernet_header(0x0806);
    f.extend([0, 1, 0x08, 0, 6, 4, 0, 1]);
    f.resize(f.len() + 20, 0);
    f
}

/// Minimal little-endian microsecond pcap writer.
pub struct PcapWriter<W: Write> {
    out: W,
}

impl<W: Write> PcapWriter<W> {
    pub fn new(mut out: W) -> io::Result<Self> {
        out.write_all(&global_header(ByteOrder::Little, false))?;
        Ok(PcapWriter { out })
    }

    pub fn write_frame(&mut self, timestamp_us: u64, frame: &[u8]) -> io::Result<()> {
        let sec = (timestamp_us / 1_000_000) as u32;
        let usec = (timestamp_us % 1_000_000) as u32;
        self.out.write_all(&record(ByteOrder::Little, sec, usec, frame))
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
