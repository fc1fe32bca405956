//! Bidirectional flow accounting.

use std::collections::HashMap;

use super::{Endpoint, PacketEvent, DEFAULT_ACTIVITY_TIMEOUT_US, DEFAULT_IDLE_TIMEOUT_US};

/// Canonical 5-tuple: `a <= b`, so both directions of a conversation share a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowKey {
    pub a: Endpoint,
    pub b: Endpoint,
    pub protocol: u8,
}

impl FlowKey {
    pub fn new(x: Endpoint, y: Endpoint, protocol: u8) -> Self {
        let (a, b) = if x <= y { (x, y) } else { (y, x) };
        FlowKey { a, b, protocol }
    }

    pub fn of(pkt: &PacketEvent) -> Self {
        FlowKey::new(pkt.source(), pkt.destination(), pkt.protocol)
    }
}

/// Packet and byte accumulators for one direction of a flow.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DirectionStats {
    pub pkt_count: u64,
    pub payload_sum: u64,
    pub header_sum: u64,
    pub payload_min: u32,
    pub payload_max: u32,
}

impl DirectionStats {
    fn add(&mut self, pkt: &PacketEvent) {
        if self.pkt_count == 0 {
            self.payload_min = pkt.payload_len_bytes;
            self.payload_max = pkt.payload_len_bytes;
        } else {
            self.payload_min = self.payload_min.min(pkt.payload_len_bytes);
            self.payload_max = self.payload_max.max(pkt.payload_len_bytes);
        }
        self.pkt_count += 1;
        self.payload_sum += pkt.payload_len_bytes as u64;
        self.header_sum += pkt.header_len_bytes as u64;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowRecord {
    pub key: FlowKey,
    /// Source of the first observed packet; defines the forward direction.
    pub fwd_initiator: Endpoint,
    pub first_ts_us: u64,
    pub last_ts_us: u64,
    pub fwd: DirectionStats,
    pub bwd: DirectionStats,
    pub fwd_iat_total_us: u64,
    pub last_fwd_ts_us: u64,
    pub fwd_subflow_count: u64,
    pub min_header_len_fwd: u32,
    /// Creation order inside the owning table; used only to order emissions.
    pub(crate) seq: u64,
}

impl FlowRecord {
    pub fn new(pkt: &PacketEvent) -> Self {
        let mut fwd = DirectionStats::default();
        fwd.add(pkt);
        FlowRecord {
            key: FlowKey::of(pkt),
            fwd_initiator: pkt.source(),
            first_ts_us: pkt.timestamp_us,
            last_ts_us: pkt.timestamp_us,
            fwd,
            bwd: DirectionStats::default(),
            fwd_iat_total_us: 0,
            last_fwd_ts_us: pkt.timestamp_us,
            fwd_subflow_count: 1,
            min_header_len_fwd: pkt.header_len_bytes,
            seq: 0,
        }
    }

    /// The endpoint opposite the initiator.
    pub fn responder(&self) -> Endpoint {
        if self.key.a == self.fwd_initiator {
            self.key.b
        } else {
            self.key.a
        }
    }

    pub fn is_forward(&self, pkt: &PacketEvent) -> bool {
        pkt.source() == self.fwd_initiator
    }

    /// Merges a packet already known to belong to this flow.
    pub fn add(&mut self, pkt: &PacketEvent, activity_timeout_us: u64) {
        let ts = pkt.timestamp_us;
        self.first_ts_us = self.first_ts_us.min(ts);
        self.last_ts_us = self.last_ts_us.max(ts);
        if !self.is_forward(pkt) {
            self.bwd.add(pkt);
            return;
        }
        self.fwd.add(pkt);
        self.min_header_len_fwd = self.min_header_len_fwd.min(pkt.header_len_bytes);
        // Gaps are measured against the latest forward timestamp so that
        // reordered captures can never push the IAT total past the duration.
        let gap = ts.saturating_sub(self.last_fwd_ts_us);
        self.fwd_iat_total_us += gap;
        if gap > activity_timeout_us {
            self.fwd_subflow_count += 1;
        }
        self.last_fwd_ts_us = self.last_fwd_ts_us.max(ts);
    }

    /// `"srcip-dstip-srcport-dstport-proto"` from the initiator's point of view.
    pub fn flow_id(&self) -> String {
        let src = self.fwd_initiator;
        let dst = self.responder();
        format!("{}-{}-{}-{}-{}", src.addr(), dst.addr(), src.port, dst.port, self.key.protocol)
    }
}

/// Active flows keyed by canonical 5-tuple. Single writer.
#[derive(Debug, Default)]
pub struct FlowTable {
    flows: HashMap<FlowKey, FlowRecord>,
    next_seq: u64,
}

impl FlowTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    pub fn get(&self, key: &FlowKey) -> Option<&FlowRecord> {
        self.flows.get(key)
    }

    pub fn ingest_packet(&mut self, pkt: &PacketEvent, activity_timeout_us: u64) {
        let key = FlowKey::of(pkt);
        match self.flows.get_mut(&key) {
            Some(rec) => rec.add(pkt, activity_timeout_us),
            None => {
                let mut rec = FlowRecord::new(pkt);
                rec.seq = self.next_seq;
                self.next_seq += 1;
                self.flows.insert(key, rec);
            }
        }
    }

    /// Removes one flow if it has been idle longer than `idle_timeout_us` at `now_us`.
    pub fn expire_key(&mut self, key: &FlowKey, now_us: u64, idle_timeout_us: u64) -> Option<FlowRecord> {
        let idle = self.flows.get(key).is_some_and(|r| now_us.saturating_sub(r.last_ts_us) > idle_timeout_us);
        if idle {
            self.flows.remove(key)
        } else {
            None
        }
    }

    /// Removes and returns every flow idle longer than `idle_timeout_us`,
    /// ordered by (first timestamp, creation order).
    pub fn expire_flows(&mut self, now_us: u64, idle_timeout_us: u64) -> Vec<FlowRecord> {
        let stale: Vec<FlowKey> = self
            .flows
            .iter()
            .filter(|(_, r)| now_us.saturating_sub(r.last_ts_us) > idle_timeout_us)
            .map(|(k, _)| *k)
            .collect();
        let mut out: Vec<FlowRecord> = stale.iter().filter_map(|k| self.flows.remove(k)).collect();
        sort_emissions(&mut out);
        out
    }

    /// Removes every remaining flow (end of capture).
    pub fn flush(&mut self) -> Vec<FlowRecord> {
        let mut out: Vec<FlowRecord> = self.flows.drain().map(|(_, r)| r).collect();
        sort_emissions(&mut out);
        out
    }
}

fn sort_emissions(recs: &mut [FlowRecord]) {
    recs.sort_by_key(|r| (r.first_ts_us, r.seq));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeterConfig {
    pub activity_timeout_us: u64,
    pub idle_timeout_us: u64,
    /// Capture-time interval between full idle sweeps of the table.
    pub sweep_interval_us: u64,
}

impl Default for MeterConfig {
    fn default() -> Self {
        MeterConfig {
            activity_timeout_us: DEFAULT_ACTIVITY_TIMEOUT_US,
            idle_timeout_us: DEFAULT_IDLE_TIMEOUT_US,
            sweep_interval_us: 1_000_000,
        }
    }
}

/// A flow table plus the timeout policy that drives it over a capture.
#[derive(Debug)]
pub struct FlowMeter {
    table: FlowTable,
    config: MeterConfig,
    next_sweep_us: Option<u64>,
    packets: u64,
}

impl FlowMeter {
    pub fn new(config: MeterConfig) -> Self {
        FlowMeter { table: FlowTable::new(), config, next_sweep_us: None, packets: 0 }
    }

    pub fn config(&self) -> &MeterConfig {
        &self.config
    }

    pub fn packets(&self) -> u64 {
        self.packets
    }

    pub fn active_flows(&self) -> usize {
        self.table.len()
    }

    /// Feeds one packet; returns flows that finished before it arrived.
    pub fn push(&mut self, pkt: &PacketEvent) -> Vec<FlowRecord> {
        let now = pkt.timestamp_us;
        let mut finished = Vec::new();
        let due = self.next_sweep_us.is_none_or(|at| now >= at);
        if due {
            finished = self.table.expire_flows(now, self.config.idle_timeout_us);
            self.next_sweep_us = Some(now + self.config.sweep_interval_us.max(1));
        }
        let key = FlowKey::of(pkt);
        if let Some(rec) = self.table.expire_key(&key, now, self.config.idle_timeout_us) {
            finished.push(rec);
        }
        self.table.ingest_packet(pkt, self.config.activity_timeout_us);
        self.packets += 1;
        finished
    }

    /// Flushes every residual flow at end of capture.
    pub fn finish(mut self) -> Vec<FlowRecord> {
        self.table.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowmeter::PROTO_UDP;

    fn pkt(ts: u64, src: (u32, u16), dst: (u32, u16), payload: u32) -> PacketEvent {
        PacketEvent {
            timestamp_us: ts,
            src_ip: src.0,
            dst_ip: dst.0,
            src_port: src.1,
            dst_port: dst.1,
            protocol: PROTO_UDP,
            header_len_bytes: 28,
            payload_len_bytes: payload,
            tcp_flags: 0,
        }
    }

    const C: (u32, u16) = (0x0a00_0002, 40000);
    const S: (u32, u16) = (0x0a00_0001, 53);

    #[test]
    fn key_is_direction_free() {
        let fwd = pkt(0, C, S, 1);
        let bwd = pkt(1, S, C, 1);
        assert_eq!(FlowKey::of(&fwd), FlowKey::of(&bwd));
        let k = FlowKey::of(&fwd);
        assert!(k.a <= k.b);
    }

    #[test]
    fn first_packet_initializes_forward_state() {
        let mut t = FlowTable::new();
        let p = pkt(5, C, S, 32);
        t.ingest_packet(&p, 1_000_000);
        let r = t.get(&FlowKey::of(&p)).unwrap();
        assert_eq!(r.fwd.pkt_count, 1);
        assert_eq!(r.fwd_iat_total_us, 0);
        assert_eq!(r.fwd_subflow_count, 1);
        assert_eq!(r.fwd_initiator, Endpoint::new(C.0, C.1));
        assert_eq!(r.bwd.pkt_count, 0);
    }

    #[test]
    fn iat_and_subflows_follow_activity_timeout() {
        let mut t = FlowTable::new();
        t.ingest_packet(&pkt(0, C, S, 1), 1_000_000);
        t.ingest_packet(&pkt(500_000, C, S, 1), 1_000_000);
        let r = t.get(&FlowKey::of(&pkt(0, C, S, 1))).unwrap();
        assert_eq!(r.fwd_iat_total_us, 500_000);
        assert_eq!(r.fwd_subflow_count, 1);

        let mut t = FlowTable::new();
        t.ingest_packet(&pkt(0, C, S, 1), 1_000_000);
        t.ingest_packet(&pkt(1_500_000, C, S, 1), 1_000_000);
        let r = t.get(&FlowKey::of(&pkt(0, C, S, 1))).unwrap();
        assert_eq!(r.fwd_subflow_count, 2);
        assert_eq!(r.fwd_iat_total_us, 1_500_000);
    }

    #[test]
    fn reverse_packets_only_touch_backward_stats() {
        let mut t = FlowTable::new();
        t.ingest_packet(&pkt(0, C, S, 10), 1_000_000);
        t.ingest_packet(&pkt(3_000_000, S, C, 90), 1_000_000);
        let r = t.get(&FlowKey::of(&pkt(0, C, S, 1))).unwrap();
        assert_eq!(r.fwd.pkt_count, 1);
        assert_eq!(r.bwd.pkt_count, 1);
        assert_eq!(r.bwd.payload_max, 90);
        assert_eq!(r.fwd_iat_total_us, 0);
        assert_eq!(r.fwd_subflow_count, 1);
        assert_eq!(r.last_ts_us, 3_000_000);
    }

    #[test]
    fn expiry_threshold_is_strict() {
        let mut t = FlowTable::new();
        assert!(t.expire_flows(0, 120_000_000).is_empty());

        t.ingest_packet(&pkt(0, C, S, 1), 1_000_000);
        assert!(t.expire_flows(119_000_000, 120_000_000).is_empty());
        assert_eq!(t.len(), 1);
        assert!(t.expire_flows(120_000_000, 120_000_000).is_empty());
        let out = t.expire_flows(121_000_000, 120_000_000);
        assert_eq!(out.len(), 1);
        assert!(t.is_empty());
    }

    #[test]
    fn meter_splits_a_conversation_after_idle_timeout() {
        let cfg = MeterConfig { idle_timeout_us: 10_000_000, ..MeterConfig::default() };
        let mut m = FlowMeter::new(cfg);
        assert!(m.push(&pkt(0, C, S, 1)).is_empty());
        assert!(m.push(&pkt(1_000, S, C, 1)).is_empty());
        let done = m.push(&pkt(20_000_000, C, S, 1));
        assert_eq!(done.len(), 1);
        assert_eq!(done[0].fwd.pkt_count, 1);
        assert_eq!(done[0].bwd.pkt_count, 1);
        let rest = m.finish();
        assert_eq!(rest.len(), 1);
        assert_eq!(rest[0].first_ts_us, 20_000_000);
    }

    #[test]
    fn flush_orders_by_first_timestamp_then_creation() {
        let mut t = FlowTable::new();
        t.ingest_packet(&pkt(50, (3, 3), (4, 4), 1), 1);
        t.ingest_packet(&pkt(10, (5, 5), (6, 6), 1), 1);
        t.ingest_packet(&pkt(50, (1, 1), (2, 2), 1), 1);
        let out: Vec<u32> = t.flush().iter().map(|r| r.fwd_initiator.ip).collect();
        assert_eq!(out, vec![5, 3, 1]);
    }

    #[test]
    fn flow_id_uses_initiator_view() {
        let r = FlowRecord::new(&pkt(0, (0xc0a8_0101, 1234), (0x0a00_0001, 80), 0));
        assert_eq!(r.flow_id(), "192.168.1.1-10.0.0.1-1234-80-17");
    }
}
