//! Discrete-event core: simulated clock, event queue, frame sizes and link
//! transit arithmetic.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

use crate::error::EngineError;

/// Largest payload a single packet may carry. Larger transfers are segmented.
pub const MAX_PAYLOAD: u32 = 4096;
/// RoCEv2 header and trailer bytes: Ethernet (26, incl. preamble), IPv4 (20),
/// UDP (8), InfiniBand (14) and the RoCEv2 CRC (4).
pub const ROCE_OVERHEAD: u32 = 62;
/// Ethernet header bytes (incl. preamble) that the enhanced framing omits.
pub const ETHERNET_HEADER: u32 = 26;
pub const ROCE_MIN_FRAME: u32 = 64;
pub const ENHANCED_MIN_FRAME: u32 = 32;
/// Standard Ethernet inter-packet gap, charged only in RoCE framing.
pub const INTER_PACKET_GAP: u32 = 20;

/// Integer nanoseconds since the start of the simulation.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_ns(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_us(us: u64) -> Self {
        SimTime(us * 1_000)
    }

    pub const fn from_ms(ms: u64) -> Self {
        SimTime(ms * 1_000_000)
    }

    pub const fn as_ns(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-9
    }

    pub fn saturating_sub(self, other: SimTime) -> u64 {
        self.0.saturating_sub(other.0)
    }
}

impl Add<u64> for SimTime {
    type Output = SimTime;
    fn add(self, ns: u64) -> SimTime {
        SimTime(self.0 + ns)
    }
}

impl AddAssign<u64> for SimTime {
    fn add_assign(&mut self, ns: u64) {
        self.0 += ns;
    }
}

impl Sub for SimTime {
    type Output = u64;
    fn sub(self, other: SimTime) -> u64 {
        self.0 - other.0
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

/// Handle returned by [`EventQueue::schedule`]. Ids grow with insertion order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(pub u64);

struct Entry<E> {
    time: SimTime,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // BinaryHeap is a max-heap; invert so the earliest (time, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Time-ordered event queue with FIFO tie-break among equal timestamps.
pub struct EventQueue<E> {
    heap: BinaryHeap<Entry<E>>,
    now: SimTime,
    next_seq: u64,
    processed: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            now: SimTime::ZERO,
            next_seq: 0,
            processed: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Number of events popped so far.
    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn try_schedule(&mut self, time: SimTime, event: E) -> Result<EventId, EngineError> {
        if time < self.now {
            return Err(EngineError::Causality {
                now: self.now.0,
                requested: time.0,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry { time, seq, event });
        Ok(EventId(seq))
    }

    /// Schedules `event` at `time`.
    ///
    /// Scheduling before the current clock is a logic error in the caller and
    /// aborts with a diagnostic.
    pub fn schedule(&mut self, time: SimTime, event: E) -> EventId {
        match self.try_schedule(time, event) {
            Ok(id) => id,
            Err(e) => panic!("{e}"),
        }
    }

    pub fn schedule_in(&mut self, delay_ns: u64, event: E) -> EventId {
        self.schedule(self.now + delay_ns, event)
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.time)
    }

    pub fn pop(&mut self) -> Option<(SimTime, E)> {
        let entry = self.heap.pop()?;
        debug_assert!(entry.time >= self.now);
        self.now = entry.time;
        self.processed += 1;
        Some((entry.time, entry.event))
    }
}

/// Wire framing. RoCE is standard RoCEv2 over Ethernet; Enhanced drops the
/// Ethernet header, lowers the minimum frame and removes the inter-packet gap.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameMode {
    #[serde(alias = "RoCE")]
    Roce,
    #[default]
    Enhanced,
}

impl FrameMode {
    pub fn min_frame(self) -> u32 {
        match self {
            FrameMode::Roce => ROCE_MIN_FRAME,
            FrameMode::Enhanced => ENHANCED_MIN_FRAME,
        }
    }

    pub fn inter_packet_gap(self) -> u32 {
        match self {
            FrameMode::Roce => INTER_PACKET_GAP,
            FrameMode::Enhanced => 0,
        }
    }

    /// Frame size of a full 4 KiB packet.
    pub fn max_frame(self) -> u32 {
        frame_overhead(self, MAX_PAYLOAD).expect("max payload is valid")
    }
}

/// Bytes on the wire for a packet carrying `payload_bytes`.
pub fn frame_overhead(mode: FrameMode, payload_bytes: u32) -> Result<u32, EngineError> {
    if payload_bytes > MAX_PAYLOAD {
        return Err(EngineError::PayloadTooLarge(payload_bytes));
    }
    Ok(match mode {
        FrameMode::Roce => (payload_bytes + ROCE_OVERHEAD).max(ROCE_MIN_FRAME),
        FrameMode::Enhanced => {
            (payload_bytes + ROCE_OVERHEAD - ETHERNET_HEADER).max(ENHANCED_MIN_FRAME)
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Medium {
    Copper,
    Optical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkKind {
    /// NIC to switch.
    Endpoint,
    /// Switch to switch inside a group.
    Intra,
    /// Switch to switch across groups.
    Global,
}

impl LinkKind {
    pub fn medium(self) -> Medium {
        match self {
            LinkKind::Endpoint | LinkKind::Intra => Medium::Copper,
            LinkKind::Global => Medium::Optical,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LinkKind::Endpoint => "endpoint",
            LinkKind::Intra => "intra",
            LinkKind::Global => "global",
        }
    }
}

/// One side of a cable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Attach {
    Switch { switch: usize, port: usize },
    Nic { endpoint: usize },
}

impl Attach {
    pub fn switch(&self) -> Option<usize> {
        match *self {
            Attach::Switch { switch, .. } => Some(switch),
            Attach::Nic { .. } => None,
        }
    }
}

/// A full-duplex cable. Each direction is an independent channel of
/// `bandwidth_gbps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: usize,
    pub kind: LinkKind,
    pub a: Attach,
    pub b: Attach,
    pub bandwidth_gbps: f64,
    pub propagation_ns: u64,
}

impl Link {
    pub fn medium(&self) -> Medium {
        self.kind.medium()
    }

    /// The attachment opposite `side`.
    pub fn other(&self, side: &Attach) -> Attach {
        if *side == self.a {
            self.b
        } else {
            self.a
        }
    }
}

/// Time for a frame to cross `link`: serialization plus propagation, in ns.
/// RoCE framing also serializes the inter-packet gap.
pub fn link_transit(link: &Link, frame_bytes: u32, mode: FrameMode) -> f64 {
    let wire = (frame_bytes + mode.inter_packet_gap()) as f64;
    wire * 8.0 / link.bandwidth_gbps + link.propagation_ns as f64
}

/// Serializes frames onto one direction of a link at integer-ns granularity,
/// carrying sub-ns remainders forward so long runs do not drift.
#[derive(Clone, Debug)]
pub struct Serializer {
    mbps: u64,
    carry_ps: u64,
}

impl Serializer {
    pub fn new(bandwidth_gbps: f64) -> Self {
        let mbps = (bandwidth_gbps * 1000.0).round() as u64;
        Serializer {
            mbps: mbps.max(1),
            carry_ps: 0,
        }
    }

    pub fn bandwidth_gbps(&self) -> f64 {
        self.mbps as f64 / 1000.0
    }

    /// Whole nanoseconds to put `wire_bytes` on the wire.
    pub fn serialize_ns(&mut self, wire_bytes: u32) -> u64 {
        let ps = wire_bytes as u64 * 8 * 1_000_000 / self.mbps + self.carry_ps;
        self.carry_ps = ps % 1000;
        ps / 1000
    }

    /// Serialization time without touching the carry, rounded up.
    pub fn peek_ns(&self, wire_bytes: u32) -> u64 {
        (wire_bytes as u64 * 8 * 1_000_000).div_ceil(self.mbps * 1000)
    }
}
