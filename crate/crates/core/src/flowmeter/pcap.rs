//! Classic (libpcap) capture reader.
//!
//! Only Ethernet captures are decoded. Frames that are not IPv4 carrying TCP or
//! UDP are skipped and counted; a truncated trailing record stops the reader
//! with whatever was decoded so far.

use std::io::{self, Read};

use log::warn;

use super::{FlowmeterError, PacketEvent, PROTO_TCP, PROTO_UDP};

const MAGIC_MICROS: u32 = 0xa1b2_c3d4;
const MAGIC_NANOS: u32 = 0xa1b2_3c4d;
const LINKTYPE_ETHERNET: u32 = 1;

const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_VLAN: u16 = 0x8100;
const ETH_HEADER_LEN: usize = 14;
const VLAN_TAG_LEN: usize = 4;
const IPV4_MIN_HEADER: usize = 20;
const TCP_MIN_HEADER: usize = 20;
const UDP_HEADER: usize = 8;

/// Largest record body accepted regardless of the advertised snaplen.
const MAX_RECORD_LEN: u32 = 256 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Endian {
    Little,
    Big,
}

impl Endian {
    fn u16(self, b: [u8; 2]) -> u16 {
        match self {
            Endian::Little => u16::from_le_bytes(b),
            Endian::Big => u16::from_be_bytes(b),
        }
    }

    fn u32(self, b: [u8; 4]) -> u32 {
        match self {
            Endian::Little => u32::from_le_bytes(b),
            Endian::Big => u32::from_be_bytes(b),
        }
    }
}

/// Fields of the 24-byte global header that influence decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PcapHeader {
    pub version_major: u16,
    pub version_minor: u16,
    pub snaplen: u32,
    pub linktype: u32,
    pub nanosecond: bool,
    pub big_endian: bool,
}

/// Why a frame did not produce a [`PacketEvent`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    /// ARP, IPv6, LLDP and every other non-IPv4 ethertype.
    NotIpv4,
    /// IPv4 with a transport other than TCP or UDP, or a non-initial fragment.
    UnsupportedTransport,
    /// Headers too short or inconsistent with each other.
    Malformed,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SkipCounters {
    pub not_ipv4: u64,
    pub unsupported_transport: u64,
    pub malformed: u64,
}

impl SkipCounters {
    pub fn total(&self) -> u64 {
        self.not_ipv4 + self.unsupported_transport + self.malformed
    }

    fn record(&mut self, reason: SkipReason) {
        match reason {
            SkipReason::NotIpv4 => self.not_ipv4 += 1,
            SkipReason::UnsupportedTransport => self.unsupported_transport += 1,
            SkipReason::Malformed => self.malformed += 1,
        }
    }
}

/// Streaming reader over pcap records.
pub struct PcapReader<R> {
    inner: R,
    header: PcapHeader,
    endian: Endian,
    skipped: SkipCounters,
    frames: u64,
    truncated: bool,
    done: bool,
    buf: Vec<u8>,
}

impl<R: Read> PcapReader<R> {
    pub fn new(mut inner: R) -> Result<Self, FlowmeterError> {
        let mut raw = [0u8; 24];
        read_exact_or(&mut inner, &mut raw, || {
            FlowmeterError::PcapFormat("global header shorter than 24 bytes".into())
        })?;
        let magic = [raw[0], raw[1], raw[2], raw[3]];
        let (endian, nanosecond) = match (u32::from_le_bytes(magic), u32::from_be_bytes(magic)) {
            (MAGIC_MICROS, _) => (Endian::Little, false),
            (MAGIC_NANOS, _) => (Endian::Little, true),
            (_, MAGIC_MICROS) => (Endian::Big, false),
            (_, MAGIC_NANOS) => (Endian::Big, true),
            _ => {
                return Err(FlowmeterError::PcapFormat(format!(
                    "unrecognised magic number {:02x}{:02x}{:02x}{:02x}",
                    raw[0], raw[1], raw[2], raw[3]
                )))
            }
        };
        let version_major = endian.u16([raw[4], raw[5]]);
        let version_minor = endian.u16([raw[6], raw[7]]);
        let snaplen = endian.u32([raw[16], raw[17], raw[18], raw[19]]);
        let linktype = endian.u32([raw[20], raw[21], raw[22], raw[23]]);
        if version_major != 2 {
            return Err(FlowmeterError::PcapFormat(format!(
                "unsupported pcap version {version_major}.{version_minor}"
            )));
        }
        if linktype != LINKTYPE_ETHERNET {
            return Err(FlowmeterError::PcapFormat(format!(
                "unsupported link type {linktype} (only Ethernet is decoded)"
            )));
        }
        Ok(PcapReader {
            inner,
            header: PcapHeader {
                version_major,
                version_minor,
                snaplen,
                linktype,
                nanosecond,
                big_endian: endian == Endian::Big,
            },
            endian,
            skipped: SkipCounters::default(),
            frames: 0,
            truncated: false,
            done: false,
            buf: Vec::new(),
        })
    }

    pub fn header(&self) -> &PcapHeader {
        &self.header
    }

    pub fn skipped(&self) -> SkipCounters {
        self.skipped
    }

    /// Number of records read, decoded or not.
    pub fn frames(&self) -> u64 {
        self.frames
    }

    /// True when the capture ended in the middle of a record.
    pub fn truncated(&self) -> bool {
        self.truncated
    }

    fn stop_truncated(&mut self, what: &str) {
        warn!("pcap truncated after {} records: {what}", self.frames);
        self.truncated = true;
        self.done = true;
    }

    /// Reads the next record that decodes into a packet event.
    pub fn next_event(&mut self) -> Result<Option<PacketEvent>, FlowmeterError> {
        while !self.done {
            let mut rec = [0u8; 16];
            match read_full(&mut self.inner, &mut rec)? {
                0 => {
                    self.done = true;
                    return Ok(None);
                }
                16 => {}
                _ => {
                    self.stop_truncated("partial record header");
                    return Ok(None);
                }
            }
            let e = self.endian;
            let ts_sec = e.u32([rec[0], rec[1], rec[2], rec[3]]) as u64;
            let ts_frac = e.u32([rec[4], rec[5], rec[6], rec[7]]) as u64;
            let incl_len = e.u32([rec[8], rec[9], rec[10], rec[11]]);
            let limit = self.header.snaplen.clamp(65_535, MAX_RECORD_LEN);
            if incl_len > limit {
                self.stop_truncated("record length exceeds snaplen");
                return Ok(None);
            }
            self.buf.resize(incl_len as usize, 0);
            let got = read_full(&mut self.inner, &mut self.buf)?;
            if got < incl_len as usize {
                self.stop_truncated("partial record body");
                return Ok(None);
            }
            self.frames += 1;
            let frac_us = if self.header.nanosecond { ts_frac / 1_000 } else { ts_frac };
            let timestamp_us = ts_sec * 1_000_000 + frac_us;
            match decode_ethernet(&self.buf, timestamp_us) {
                Ok(ev) => return Ok(Some(ev)),
                Err(reason) => self.skipped.record(reason),
            }
        }
        Ok(None)
    }
}

impl<R: Read> Iterator for PcapReader<R> {
    type Item = Result<PacketEvent, FlowmeterError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_event().transpose()
    }
}

/// Result of reading a whole capture into memory.
#[derive(Debug, Clone, Default)]
pub struct ParsedCapture {
    pub events: Vec<PacketEvent>,
    pub skipped: SkipCounters,
    pub frames: u64,
    pub truncated: bool,
}

/// Decodes every record of a capture.
pub fn parse_pcap<R: Read>(stream: R) -> Result<ParsedCapture, FlowmeterError> {
    let mut reader = PcapReader::new(stream)?;
    let mut events = Vec::new();
    while let Some(ev) = reader.next_event()? {
        events.push(ev);
    }
    Ok(ParsedCapture { events, skipped: reader.skipped(), frames: reader.frames(), truncated: reader.truncated() })
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize, FlowmeterError> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(FlowmeterError::Io(e)),
        }
    }
    Ok(filled)
}

fn read_exact_or<R: Read>(
    r: &mut R,
    buf: &mut [u8],
    short: impl FnOnce() -> FlowmeterError,
) -> Result<(), FlowmeterError> {
    if read_full(r, buf)? < buf.len() {
        return Err(short());
    }
    Ok(())
}

fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

fn be32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decodes one Ethernet-II frame.
pub fn decode_ethernet(frame: &[u8], timestamp_us: u64) -> Result<PacketEvent, SkipReason> {
    if frame.len() < ETH_HEADER_LEN {
        return Err(SkipReason::Malformed);
    }
    let mut ethertype = be16(frame, 12);
    let mut offset = ETH_HEADER_LEN;
    if ethertype == ETHERTYPE_VLAN {
        if frame.len() < ETH_HEADER_LEN + VLAN_TAG_LEN {
            return Err(SkipReason::Malformed);
        }
        ethertype = be16(frame, 16);
        offset += VLAN_TAG_LEN;
    }
    if ethertype != ETHERTYPE_IPV4 {
        return Err(SkipReason::NotIpv4);
    }
    decode_ipv4(&frame[offset..], timestamp_us)
}

fn decode_ipv4(ip: &[u8], timestamp_us: u64) -> Result<PacketEvent, SkipReason> {
    if ip.len() < IPV4_MIN_HEADER {
        return Err(SkipReason::Malformed);
    }
    if ip[0] >> 4 != 4 {
        return Err(SkipReason::Malformed);
    }
    let ihl = ((ip[0] & 0x0f) as usize) * 4;
    let total_len = be16(ip, 2) as usize;
    if ihl < IPV4_MIN_HEADER || total_len < ihl || ip.len() < ihl {
        return Err(SkipReason::Malformed);
    }
    let protocol = ip[9];
    if protocol != PROTO_TCP && protocol != PROTO_UDP {
        return Err(SkipReason::UnsupportedTransport);
    }
    // Non-initial fragments carry no transport header.
    let frag_offset = be16(ip, 6) & 0x1fff;
    if frag_offset != 0 {
        return Err(SkipReason::UnsupportedTransport);
    }
    let src_ip = be32(ip, 12);
    let dst_ip = be32(ip, 16);
    let l4 = &ip[ihl..];
    let (src_port, dst_port, l4_header, tcp_flags) = if protocol == PROTO_TCP {
        if l4.len() < 14 {
            return Err(SkipReason::Malformed);
        }
        let data_offset = ((l4[12] >> 4) as usize) * 4;
        if data_offset < TCP_MIN_HEADER {
            return Err(SkipReason::Malformed);
        }
        (be16(l4, 0), be16(l4, 2), data_offset, l4[13])
    } else {
        if l4.len() < 4 {
            return Err(SkipReason::Malformed);
        }
        (be16(l4, 0), be16(l4, 2), UDP_HEADER, 0)
    };
    let header_len = ihl + l4_header;
    if header_len > total_len {
        return Err(SkipReason::Malformed);
    }
    Ok(PacketEvent {
        timestamp_us,
        src_ip,
        dst_ip,
        src_port,
        dst_port,
        protocol,
        header_len_bytes: header_len as u32,
        payload_len_bytes: (total_len - header_len) as u32,
        tcp_flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowmeter::synth::{arp_frame, global_header, record, tcp_frame, udp_frame, ByteOrder as FixtureEndian};

    #[test]
    fn header_only_capture_is_empty() {
        let bytes = global_header(FixtureEndian::Little, false);
        let cap = parse_pcap(&bytes[..]).unwrap();
        assert!(cap.events.is_empty());
        assert_eq!(cap.skipped.total(), 0);
        assert!(!cap.truncated);
    }

    #[test]
    fn single_udp_packet_header_and_payload_split() {
        // IPv4 total length 60 with IHL 5: 20 + 8 header bytes, 32 payload bytes.
        let mut bytes = global_header(FixtureEndian::Little, false);
        let frame = udp_frame([10, 0, 0, 1], [10, 0, 0, 2], 5353, 53, 32);
        assert_eq!(u16::from_be_bytes([frame[16], frame[17]]), 60);
        bytes.extend(record(FixtureEndian::Little, 1, 250, &frame));
        let cap = parse_pcap(&bytes[..]).unwrap();
        assert_eq!(cap.events.len(), 1);
        let ev = cap.events[0];
        assert_eq!(ev.header_len_bytes, 28);
        assert_eq!(ev.payload_len_bytes, 32);
        assert_eq!(ev.protocol, PROTO_UDP);
        assert_eq!(ev.src_port, 5353);
        assert_eq!(ev.dst_port, 53);
        assert_eq!(ev.src_ip, 0x0a00_0001);
        assert_eq!(ev.timestamp_us, 1_000_250);
        assert_eq!(ev.tcp_flags, 0);
    }

    #[test]
    fn arp_frame_is_skipped_and_counted() {
        let mut bytes = global_header(FixtureEndian::Little, false);
        bytes.extend(record(FixtureEndian::Little, 0, 0, &arp_frame()));
        bytes.extend(record(FixtureEndian::Little, 0, 10, &tcp_frame([1, 2, 3, 4], [5, 6, 7, 8], 40000, 80, 0x02, 0)));
        let cap = parse_pcap(&bytes[..]).unwrap();
        assert_eq!(cap.events.len(), 1);
        assert_eq!(cap.skipped.total(), 1);
        assert_eq!(cap.skipped.not_ipv4, 1);
        assert_eq!(cap.events[0].header_len_bytes, 40);
        assert_eq!(cap.events[0].tcp_flags, 0x02);
    }

    #[test]
    fn big_endian_and_nanosecond_magics() {
        for (endian, nanos) in [(FixtureEndian::Big, false), (FixtureEndian::Big, true), (FixtureEndian::Little, true)]
        {
            let mut bytes = global_header(endian, nanos);
            let frac = if nanos { 250_000 } else { 250 };
            bytes.extend(record(endian, 3, frac, &udp_frame([1, 1, 1, 1], [2, 2, 2, 2], 1, 2, 0)));
            let cap = parse_pcap(&bytes[..]).unwrap();
            assert_eq!(cap.events.len(), 1, "{endian:?} nanos={nanos}");
            assert_eq!(cap.events[0].timestamp_us, 3_000_250);
        }
    }

    #[test]
    fn vlan_tagged_frame_decodes() {
        let plain = udp_frame([1, 1, 1, 1], [2, 2, 2, 2], 1000, 2000, 10);
        let mut tagged = plain[..12].to_vec();
        tagged.extend([0x81, 0x00, 0x00, 0x05]);
        tagged.extend(&plain[12..]);
        let ev = decode_ethernet(&tagged, 0).unwrap();
        assert_eq!(ev.payload_len_bytes, 10);
        assert_eq!(ev.dst_port, 2000);
    }

    #[test]
    fn bad_magic_is_fatal() {
        let mut bytes = global_header(FixtureEndian::Little, false);
        bytes[0] = 0;
        assert!(matches!(parse_pcap(&bytes[..]), Err(FlowmeterError::PcapFormat(_))));
        assert!(matches!(parse_pcap(&bytes[..10]), Err(FlowmeterError::PcapFormat(_))));
    }

    #[test]
    fn truncated_record_keeps_partial_results() {
        let mut bytes = global_header(FixtureEndian::Little, false);
        let frame = udp_frame([1, 1, 1, 1], [2, 2, 2, 2], 1, 2, 4);
        bytes.extend(record(FixtureEndian::Little, 0, 0, &frame));
        let second = record(FixtureEndian::Little, 0, 1, &frame);
        bytes.extend(&second[..second.len() - 3]);
        let cap = parse_pcap(&bytes[..]).unwrap();
        assert_eq!(cap.events.len(), 1);
        assert!(cap.truncated);
    }

    #[test]
    fn snapped_payload_still_reports_ip_length() {
        let frame = udp_frame([1, 1, 1, 1], [2, 2, 2, 2], 1, 2, 400);
        // Keep only the headers, as a 42-byte snaplen would.
        let ev = decode_ethernet(&frame[..42], 0).unwrap();
        assert_eq!(ev.payload_len_bytes, 400);
    }

    #[test]
    fn malformed_ip_header_is_skipped() {
        let mut frame = udp_frame([1, 1, 1, 1], [2, 2, 2, 2], 1, 2, 4);
        frame[16] = 0;
        frame[17] = 10; // total length shorter than the IHL
        assert_eq!(decode_ethernet(&frame, 0), Err(SkipReason::Malformed));
        let mut icmp = udp_frame([1, 1, 1, 1], [2, 2, 2, 2], 1, 2, 4);
        icmp[14 + 9] = 1;
        assert_eq!(decode_ethernet(&icmp, 0), Err(SkipReason::UnsupportedTransport));
    }
}
