//! Packet-level simulation of a whole fabric: NICs, switches, links, end-to-end
//! congestion control and the jobs that load it.
//!
//! Timing of one switch hop: the packet head arrives, a request reaches the
//! output tile after the request-plane latency, the output arbitrates, the
//! grant returns to the input, and the data crosses the crossbar. With an
//! idle output the head leaves one sampled traversal latency after it
//! arrived (cut-through). Lossless classes use credit-based flow control per
//! hop-indexed virtual channel; every hop moves a packet to the next channel,
//! so credit dependencies cannot form a cycle.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::congestion::{Admission, CcConfig, CongestionControl};
use crate::engine::{frame_overhead, Attach, EventQueue, FrameMode, Serializer, SimTime};
use crate::error::{ConfigError, SimError};
use crate::qos::QosConfig;
use crate::routing::{self, CongestionTable, RoutingConfig};
use crate::switch::{BufferPool, OutputArbiter, SwitchConfig};
use crate::topology::{Path, PathClass, Topology, SWITCH_RADIX};
use crate::traffic::{segment, Action, Job, JobRole, WorkloadSpec};

/// Hop-indexed virtual channels: the source switch receives on channel 0 and
/// the k-th switch-to-switch hop delivers on channel k.
pub const VIRTUAL_CHANNELS: usize = 6;

fn d_epoch() -> u64 {
    10_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FabricConfig {
    pub switch: SwitchConfig,
    pub routing: RoutingConfig,
    pub cc: CcConfig,
    pub qos: QosConfig,
    pub frame_mode: FrameMode,
    pub seed: u64,
    /// Interval at which output ports recompute class shares.
    #[serde(default = "d_epoch")]
    pub qos_epoch_ns: u64,
    /// Per-job delivered-bandwidth sampling window, if wanted.
    pub series_window_ns: Option<u64>,
    /// Keep every packet's end-to-end latency.
    #[serde(default)]
    pub record_latency: bool,
}

impl Default for FabricConfig {
    fn default() -> Self {
        FabricConfig {
            switch: SwitchConfig::default(),
            routing: RoutingConfig::default(),
            cc: CcConfig::default(),
            qos: QosConfig::default(),
            frame_mode: FrameMode::default(),
            seed: 0,
            qos_epoch_ns: d_epoch(),
            series_window_ns: None,
            record_latency: false,
        }
    }
}

impl FabricConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.switch.validate()?;
        self.cc.validate()?;
        self.qos.validate()?;
        if !(self.routing.bias.is_finite() && self.routing.bias >= 0.0) {
            return Err(ConfigError::Invalid("routing.bias must be non-negative".into()));
        }
        if self.routing.candidates.minimal + self.routing.candidates.nonminimal > 4 {
            return Err(ConfigError::Invalid(
                "routing considers at most four candidates".into(),
            ));
        }
        if self.qos_epoch_ns == 0 || self.series_window_ns == Some(0) {
            return Err(ConfigError::Invalid("time windows must be positive".into()));
        }
        Ok(())
    }
}

/// A job as placed on the fabric.
#[derive(Clone, Debug)]
pub struct JobSetup {
    pub spec: WorkloadSpec,
    pub role: JobRole,
    pub nodes: Vec<usize>,
    /// DSCP marking of every packet; None uses the default class.
    pub dscp: Option<u8>,
}

#[derive(Clone, Debug)]
pub struct Packet {
    pub id: u64,
    pub src: u32,
    pub dst: u32,
    pub payload: u32,
    pub frame: u32,
    pub class: u8,
    pub path: Path,
    pub inject_time: u64,
    pub deliver_time: u64,
    msg: u32,
    /// Index of the switch the packet is at (or heading to) along `path`.
    hop: u8,
    in_port: u8,
    tail_at: u64,
    key: u64,
}

#[derive(Clone, Debug)]
struct Message {
    job: u16,
    src_rank: u32,
    dst_rank: u32,
    src: u32,
    dst: u32,
    tag: u64,
    class: u8,
    payloads: Vec<u32>,
    next: u32,
    delivered: u32,
    acked: u32,
    key: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Peer {
    None,
    Switch { sw: u32, port: u8 },
    Nic(u32),
}

#[derive(Clone, Debug)]
struct PortState {
    peer: Peer,
    prop: u64,
    ser: Serializer,
    link_free: u64,
    arb: OutputArbiter,
    arb_pending: bool,
    next_arb: u64,
    /// View of the downstream switch's input buffer, per channel.
    credit: Vec<BufferPool>,
    /// This port's input buffer, per channel.
    input: Vec<BufferPool>,
    depth_pending: bool,
}

#[derive(Clone, Debug)]
struct SwitchState {
    ports: Vec<PortState>,
    voq: Vec<VecDeque<u32>>,
    requests: Vec<u32>,
    table: CongestionTable,
}

#[derive(Clone, Debug)]
struct Nic {
    switch: u32,
    port: u8,
    prop: u64,
    ser: Serializer,
    link_free: u64,
    credit: BufferPool,
    cursors: VecDeque<u32>,
    retx: VecDeque<u32>,
    wake_at: Option<u64>,
}

#[derive(Clone, Debug)]
enum Ev {
    NicWake(u32),
    Arrive { sw: u32, port: u8, pkt: u32 },
    Request { sw: u32, out: u8, class: u8, inp: u8 },
    Arbitrate { sw: u32, out: u8 },
    Deliver { pkt: u32 },
    SwitchCredit { sw: u32, out: u8, vc: u8, class: u8, bytes: u32 },
    NicCredit { ep: u32, class: u8, bytes: u32 },
    Ack { pkt: u32 },
    Nack { pkt: u32 },
    Depths { sw: u32, port: u8, from_sw: u32, from_port: u8, ts: u64, depths: Box<[u64]> },
    MsgInjected { msg: u32 },
    CcTick,
    JobStart(u16),
    JobTimer { job: u16, rank: u32, tag: u64 },
}

/// One line of the optional switch trace.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TraceRecord {
    pub time_ns: u64,
    pub switch: u32,
    pub kind: &'static str,
    pub in_port: u8,
    pub out_port: u8,
    pub packet: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FabricStats {
    pub injected: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub retransmitted: u64,
    pub minimal: u64,
    pub nonminimal: u64,
    pub delivered_bytes: Vec<u64>,
    pub payload_bytes: Vec<u64>,
    /// Per job, delivered payload bytes per series window.
    pub series: Vec<Vec<u64>>,
    /// Injection to tail delivery, when recording is enabled.
    pub latencies: Vec<u64>,
    pub events: u64,
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const PURPOSE_ROUTE: u64 = 0x524f_5554;
const PURPOSE_HOP: u64 = 0x484f_50;

pub struct Fabric {
    topo: Arc<Topology>,
    cfg: FabricConfig,
    queue: EventQueue<Ev>,
    switches: Vec<SwitchState>,
    nics: Vec<Nic>,
    packets: Vec<Option<Packet>>,
    free_packets: Vec<u32>,
    messages: Vec<Option<Message>>,
    free_messages: Vec<u32>,
    jobs: Vec<Job>,
    job_class: Vec<u8>,
    msg_seq: Vec<Vec<u64>>,
    cc: CongestionControl,
    cc_ticking: bool,
    minimal_cache: Vec<Option<Arc<Vec<Path>>>>,
    next_packet_id: u64,
    nclass: usize,
    max_frame: u32,
    stats: FabricStats,
    trace: Option<Vec<TraceRecord>>,
    actions: Vec<Action>,
}

fn input_pools(cfg: &FabricConfig, from_nic: bool) -> Vec<BufferPool> {
    let cap = cfg.switch.input_buffer_bytes;
    let per_vc = cap / (VIRTUAL_CHANNELS as u64 - 1);
    (0..VIRTUAL_CHANNELS)
        .map(|vc| {
            let c = match (from_nic, vc) {
                (true, 0) => cap,
                (false, v) if v > 0 => per_vc,
                _ => 0,
            };
            BufferPool::new(c, cfg.switch.reserved_fraction, &cfg.qos, 2 * cfg.frame_mode.max_frame() as u64)
        })
        .collect()
}

impl Fabric {
    pub fn new(topo: Arc<Topology>, cfg: FabricConfig, jobs: Vec<JobSetup>) -> Result<Self, SimError> {
        cfg.validate()?;
        let nclass = cfg.qos.classes.len();
        let max_frame = cfg.frame_mode.max_frame();
        let burst = 2.0 * max_frame as f64;
        let n_ep = topo.num_endpoints();
        for j in &jobs {
            if let Some(&bad) = j.nodes.iter().find(|&&n| n >= n_ep) {
                return Err(ConfigError::Invalid(format!("job node {bad} does not exist")).into());
            }
        }
        let switches = (0..topo.num_switches())
            .map(|sw| {
                let ports = (0..SWITCH_RADIX)
                    .map(|p| {
                        let (peer, prop, bw) = match topo.port_map[sw][p] {
                            None => (Peer::None, 0, 1.0),
                            Some(l) => {
                                let link = &topo.links[l];
                                let me = Attach::Switch { switch: sw, port: p };
                                let peer = match link.other(&me) {
                                    Attach::Nic { endpoint } => Peer::Nic(endpoint as u32),
                                    Attach::Switch { switch, port } => Peer::Switch {
                                        sw: switch as u32,
                                        port: port as u8,
                                    },
                                };
                                (peer, link.propagation_ns, link.bandwidth_gbps)
                            }
                        };
                        PortState {
                            peer,
                            prop,
                            ser: Serializer::new(bw),
                            link_free: 0,
                            arb: OutputArbiter::new(&cfg.qos, bw, cfg.qos_epoch_ns, burst),
                            arb_pending: false,
                            next_arb: 0,
                            credit: match peer {
                                Peer::Switch { .. } => input_pools(&cfg, false),
                                _ => Vec::new(),
                            },
                            input: match peer {
                                Peer::Switch { .. } => input_pools(&cfg, false),
                                Peer::Nic(_) => input_pools(&cfg, true),
                                Peer::None => Vec::new(),
                            },
                            depth_pending: false,
                        }
                    })
                    .collect();
                let nq = SWITCH_RADIX * nclass * SWITCH_RADIX;
                SwitchState {
                    ports,
                    voq: vec![VecDeque::new(); nq],
                    requests: vec![0; nq],
                    table: CongestionTable::new(nclass).with_max_age(cfg.routing.depth_max_age_ns),
                }
            })
            .collect();
        let nics = topo
            .endpoints
            .iter()
            .map(|e| {
                let link = &topo.links[e.link];
                Nic {
                    switch: e.switch as u32,
                    port: e.port as u8,
                    prop: link.propagation_ns,
                    ser: Serializer::new(link.bandwidth_gbps),
                    link_free: 0,
                    credit: input_pools(&cfg, true).swap_remove(0),
                    cursors: VecDeque::new(),
                    retx: VecDeque::new(),
                    wake_at: None,
                }
            })
            .collect();
        let mut job_class = Vec::new();
        let mut built = Vec::new();
        let mut msg_seq = Vec::new();
        for j in jobs {
            let class_id = j.dscp.map_or(cfg.qos.default_class, |d| cfg.qos.classify(d));
            job_class.push(cfg.qos.index_of(class_id).expect("validated class") as u8);
            msg_seq.push(vec![0; j.nodes.len()]);
            built.push(Job::new(j.spec, j.role, j.nodes));
        }
        let access = topo.params.link_bandwidth;
        let mut fabric = Fabric {
            cc: CongestionControl::new(&cfg.cc, n_ep, max_frame, access),
            topo,
            queue: EventQueue::new(),
            switches,
            nics,
            packets: Vec::new(),
            free_packets: Vec::new(),
            messages: Vec::new(),
            free_messages: Vec::new(),
            stats: FabricStats {
                delivered_bytes: vec![0; built.len()],
                payload_bytes: vec![0; built.len()],
                series: vec![Vec::new(); built.len()],
                ..FabricStats::default()
            },
            jobs: built,
            job_class,
            msg_seq,
            cc_ticking: false,
            minimal_cache: Vec::new(),
            next_packet_id: 0,
            nclass,
            max_frame,
            trace: cfg.switch.trace.then(Vec::new),
            actions: Vec::new(),
            cfg,
        };
        let n_sw = fabric.topo.num_switches();
        if n_sw <= 4096 {
            fabric.minimal_cache = vec![None; n_sw * n_sw];
        }
        for j in 0..fabric.jobs.len() {
            let t = fabric.jobs[j].spec.start_ns;
            fabric.queue.schedule(SimTime(t), Ev::JobStart(j as u16));
        }
        Ok(fabric)
    }

    pub fn now(&self) -> u64 {
        self.queue.now().as_ns()
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn config(&self) -> &FabricConfig {
        &self.cfg
    }

    pub fn job(&self, i: usize) -> &Job {
        &self.jobs[i]
    }

    pub fn jobs(&self) -> &[Job] {
        &self.jobs
    }

    pub fn stats(&self) -> &FabricStats {
        &self.stats
    }

    pub fn congestion(&self) -> &CongestionControl {
        &self.cc
    }

    pub fn trace(&self) -> Option<&[TraceRecord]> {
        self.trace.as_deref()
    }

    /// Packets injected and not yet delivered or dropped.
    pub fn in_flight(&self) -> u64 {
        self.stats.injected - self.stats.delivered - self.stats.dropped
    }

    /// Live packet records, counted independently of the counters.
    pub fn live_packets(&self) -> usize {
        self.packets.len() - self.free_packets.len()
    }

    /// Reverse-direction bytes spent on depth advertisements.
    pub fn ack_overhead_bytes(&self) -> u64 {
        self.switches.iter().map(|s| s.table.overhead_bytes).sum()
    }

    /// Processes events until `stop` holds, the next event lies beyond
    /// `limit_ns`, or nothing is left. Returns whether `stop` was met.
    pub fn run_until(&mut self, limit_ns: u64, mut stop: impl FnMut(&Fabric) -> bool) -> Result<bool, SimError> {
        loop {
            if stop(self) {
                return Ok(true);
            }
            match self.queue.peek_time() {
                Some(t) if t.as_ns() <= limit_ns => {}
                _ => return Ok(false),
            }
            let (t, ev) = self.queue.pop().expect("peeked");
            self.stats.events += 1;
            self.handle(t.as_ns(), ev)?;
        }
    }

    /// Runs until job `job` has completed `iterations` timed iterations.
    pub fn run_iterations(&mut self, job: usize, iterations: usize, limit_ns: u64) -> Result<(), SimError> {
        let done = self.run_until(limit_ns, |f| {
            f.jobs[job].samples.len() >= iterations || f.jobs[job].finished
        })?;
        if done {
            return Ok(());
        }
        let msg = if self.queue.is_empty() {
            "no events left before the job finished".to_string()
        } else {
            format!("time limit {limit_ns} ns reached")
        };
        Err(SimError::Stalled {
            at_ns: self.now(),
            msg,
        })
    }

    /// Runs every event up to `until_ns`.
    pub fn run_for(&mut self, until_ns: u64) -> Result<(), SimError> {
        self.run_until(until_ns, |_| false).map(|_| ())
    }

    fn class_lossless(&self, class: u8) -> bool {
        self.cfg.qos.classes[class as usize].lossless
    }

    fn voq_index(&self, out: usize, class: usize, inp: usize) -> usize {
        (out * self.nclass + class) * SWITCH_RADIX + inp
    }

    fn minimal_paths(&mut self, s: usize, t: usize) -> Arc<Vec<Path>> {
        let n = self.topo.num_switches();
        if self.minimal_cache.is_empty() {
            return Arc::new(self.topo.minimal_switch_paths(s, t));
        }
        let i = s * n + t;
        if let Some(p) = &self.minimal_cache[i] {
            return p.clone();
        }
        let p = Arc::new(self.topo.minimal_switch_paths(s, t));
        self.minimal_cache[i] = Some(p.clone());
        p
    }

    fn record(&mut self, time_ns: u64, switch: u32, kind: &'static str, in_port: u8, out_port: u8, packet: u64) {
        if let Some(t) = &mut self.trace {
            t.push(TraceRecord {
                time_ns,
                switch,
                kind,
                in_port,
                out_port,
                packet,
            });
        }
    }

    fn alloc_packet(&mut self, p: Packet) -> u32 {
        match self.free_packets.pop() {
            Some(i) => {
                self.packets[i as usize] = Some(p);
                i
            }
            None => {
                self.packets.push(Some(p));
                (self.packets.len() - 1) as u32
            }
        }
    }

    fn pkt(&self, slot: u32) -> &Packet {
        self.packets[slot as usize].as_ref().expect("live packet")
    }

    fn pkt_mut(&mut self, slot: u32) -> &mut Packet {
        self.packets[slot as usize].as_mut().expect("live packet")
    }

    fn msg(&self, m: u32) -> &Message {
        self.messages[m as usize].as_ref().expect("live message")
    }

    fn msg_mut(&mut self, m: u32) -> &mut Message {
        self.messages[m as usize].as_mut().expect("live message")
    }
}

impl Fabric {
    fn handle(&mut self, now: u64, ev: Ev) -> Result<(), SimError> {
        match ev {
            Ev::NicWake(ep) => {
                let nic = &mut self.nics[ep as usize];
                if nic.wake_at == Some(now) {
                    nic.wake_at = None;
                }
                self.nic_try_send(ep, now);
            }
            Ev::Arrive { sw, port, pkt } => self.on_arrive(now, sw, port, pkt),
            Ev::Request { sw, out, class, inp } => {
                let i = self.voq_index(out as usize, class as usize, inp as usize);
                let s = &mut self.switches[sw as usize];
                s.requests[i] += 1;
                s.ports[out as usize].arb.requests[class as usize] |= 1u64 << inp;
                let head = s.voq[i].get(s.requests[i] as usize - 1).copied();
                if let Some(slot) = head {
                    let id = self.pkt(slot).id;
                    self.record(now, sw, "request", inp, out, id);
                }
                self.kick(sw, out, now);
            }
            Ev::Arbitrate { sw, out } => self.arbitrate(now, sw, out),
            Ev::Deliver { pkt } => self.on_deliver(now, pkt),
            Ev::SwitchCredit { sw, out, vc, class, bytes } => {
                let port = &mut self.switches[sw as usize].ports[out as usize];
                port.credit[vc as usize].release(class as usize, bytes as u64);
                if port.arb.has_requests() {
                    self.kick(sw, out, now);
                }
            }
            Ev::NicCredit { ep, class, bytes } => {
                self.nics[ep as usize].credit.release(class as usize, bytes as u64);
                self.nic_try_send(ep, now);
            }
            Ev::Ack { pkt } => self.on_ack(now, pkt),
            Ev::Nack { pkt } => {
                let p = self.pkt(pkt);
                let (id, src) = (p.id, p.src);
                self.cc.on_ack(id, now);
                self.nics[src as usize].retx.push_back(pkt);
                self.nic_try_send(src, now);
            }
            Ev::Depths { sw, port, from_sw, from_port, ts, depths } => {
                let overhead = self.cfg.switch.ack_overhead_bytes;
                self.switches[sw as usize]
                    .table
                    .on_ack_info(port as usize, ts, &depths, overhead);
                self.switches[from_sw as usize].ports[from_port as usize].depth_pending = false;
            }
            Ev::MsgInjected { msg } => {
                let m = self.msg(msg);
                let (job, rank, tag) = (m.job as usize, m.src_rank as usize, m.tag);
                let mut acts = std::mem::take(&mut self.actions);
                self.jobs[job].on_injected(rank, tag, now, &mut acts);
                self.apply_actions(job, now, acts);
            }
            Ev::CcTick => {
                if self.cc.tick(now) {
                    self.queue
                        .schedule(SimTime(now + self.cfg.cc.tick_ns), Ev::CcTick);
                } else {
                    self.cc_ticking = false;
                }
                for ep in 0..self.nics.len() {
                    if !self.nics[ep].cursors.is_empty() {
                        self.nic_try_send(ep as u32, now);
                    }
                }
            }
            Ev::JobStart(j) => {
                let mut acts = std::mem::take(&mut self.actions);
                self.jobs[j as usize].start(now, &mut acts);
                self.apply_actions(j as usize, now, acts);
            }
            Ev::JobTimer { job, rank, tag } => {
                let mut acts = std::mem::take(&mut self.actions);
                let r = if rank == u32::MAX { usize::MAX } else { rank as usize };
                self.jobs[job as usize].on_timer(r, tag, now, &mut acts);
                self.apply_actions(job as usize, now, acts);
            }
        }
        Ok(())
    }

    fn apply_actions(&mut self, job: usize, now: u64, mut acts: Vec<Action>) {
        for a in acts.drain(..) {
            match a {
                Action::Send { src, dst, bytes, tag } => self.post_message(job, src, dst, bytes, tag, now),
                Action::Timer { rank, delay_ns, tag } => {
                    let rank = if rank == usize::MAX { u32::MAX } else { rank as u32 };
                    self.queue.schedule(
                        SimTime(now + delay_ns),
                        Ev::JobTimer {
                            job: job as u16,
                            rank,
                            tag,
                        },
                    );
                }
            }
        }
        self.actions = acts;
    }

    fn post_message(&mut self, job: usize, src_rank: usize, dst_rank: usize, bytes: u64, tag: u64, now: u64) {
        let nodes = &self.jobs[job].nodes;
        let (src, dst) = (nodes[src_rank] as u32, nodes[dst_rank] as u32);
        let seq = self.msg_seq[job][src_rank];
        self.msg_seq[job][src_rank] += 1;
        let key = mix(mix(self.cfg.seed, job as u64), mix(src_rank as u64, seq));
        let m = Message {
            job: job as u16,
            src_rank: src_rank as u32,
            dst_rank: dst_rank as u32,
            src,
            dst,
            tag,
            class: self.job_class[job],
            payloads: segment(bytes),
            next: 0,
            delivered: 0,
            acked: 0,
            key,
        };
        let slot = match self.free_messages.pop() {
            Some(i) => {
                self.messages[i as usize] = Some(m);
                i
            }
            None => {
                self.messages.push(Some(m));
                (self.messages.len() - 1) as u32
            }
        };
        self.nics[src as usize].cursors.push_back(slot);
        self.nic_try_send(src, now);
    }

    fn schedule_wake(&mut self, ep: u32, t: u64) {
        let nic = &mut self.nics[ep as usize];
        if nic.wake_at.is_none_or(|w| w > t) {
            nic.wake_at = Some(t);
            self.queue.schedule(SimTime(t), Ev::NicWake(ep));
        }
    }

    fn nic_try_send(&mut self, ep: u32, now: u64) {
        let e = ep as usize;
        if self.nics[e].link_free > now {
            let t = self.nics[e].link_free;
            self.schedule_wake(ep, t);
            return;
        }
        if let Some(slot) = self.nics[e].retx.pop_front() {
            self.stats.retransmitted += 1;
            self.send_from_nic(ep, slot, now, false);
            return;
        }
        let n = self.nics[e].cursors.len();
        for _ in 0..n {
            let m = self.nics[e].cursors.pop_front().expect("counted");
            let msg = self.msg(m);
            let (src, dst, class) = (msg.src, msg.dst, msg.class);
            let payload = msg.payloads[msg.next as usize];
            let frame = frame_overhead(self.cfg.frame_mode, payload).expect("segmented payload");
            let credit_ok = !self.class_lossless(class)
                || self.nics[e].credit.can_admit(class as usize, frame as u64);
            if credit_ok && self.cc.can_inject(src, dst) {
                let slot = self.create_packet(m, now);
                let more = {
                    let msg = self.msg(m);
                    (msg.next as usize) < msg.payloads.len()
                };
                if more {
                    self.nics[e].cursors.push_back(m);
                }
                self.send_from_nic(ep, slot, now, !more);
                return;
            }
            self.nics[e].cursors.push_back(m);
        }
    }

    fn create_packet(&mut self, m: u32, now: u64) -> u32 {
        let (src, dst, class, payload, index, key) = {
            let msg = self.msg_mut(m);
            let i = msg.next;
            msg.next += 1;
            (msg.src, msg.dst, msg.class, msg.payloads[i as usize], i, mix(msg.key, i as u64))
        };
        let frame = frame_overhead(self.cfg.frame_mode, payload).expect("segmented payload");
        let path = self.route(src, dst, class, key, now);
        match path.class {
            PathClass::Minimal => self.stats.minimal += 1,
            PathClass::Nonminimal => self.stats.nonminimal += 1,
        }
        let _ = index;
        let id = self.next_packet_id;
        self.next_packet_id += 1;
        self.alloc_packet(Packet {
            id,
            src,
            dst,
            payload,
            frame,
            class,
            path,
            inject_time: now,
            deliver_time: 0,
            msg: m,
            hop: 0,
            in_port: 0,
            tail_at: 0,
            key,
        })
    }

    fn route(&mut self, src: u32, dst: u32, class: u8, key: u64, now: u64) -> Path {
        let s = self.topo.endpoint_switch(src as usize);
        let t = self.topo.endpoint_switch(dst as usize);
        let minimal = self.minimal_paths(s, t);
        if s == t {
            return minimal[0].clone();
        }
        let spec = &self.cfg.qos.classes[class as usize];
        if spec.ordered {
            return routing::flow_path(&minimal, mix(src as u64, dst as u64)).clone();
        }
        let mut rng = SmallRng::seed_from_u64(mix(key, PURPOSE_ROUTE));
        if !self.cfg.routing.adaptive {
            return minimal[rng.gen_range(0..minimal.len())].clone();
        }
        let bias = spec.routing_bias.unwrap_or(self.cfg.routing.bias);
        let cands = routing::candidates(
            &self.topo,
            &self.switches[s].table,
            class as usize,
            now,
            &minimal,
            t,
            self.cfg.routing.candidates,
            &mut rng,
        );
        let pick = routing::select(&cands, bias, minimal[0].hops());
        cands.into_iter().nth(pick).expect("selected index").path
    }

    fn send_from_nic(&mut self, ep: u32, slot: u32, now: u64, last_of_message: bool) {
        let e = ep as usize;
        let ipg = self.cfg.frame_mode.inter_packet_gap();
        let (id, src, dst, frame, class, msg) = {
            let p = self.pkt(slot);
            (p.id, p.src, p.dst, p.frame, p.class, p.msg)
        };
        let lossless = self.class_lossless(class);
        let nic = &mut self.nics[e];
        let ser = nic.ser.serialize_ns(frame + ipg);
        nic.link_free = now + ser;
        if lossless {
            let ok = nic.credit.admit(class as usize, frame as u64);
            debug_assert!(ok, "NIC sent without credit");
        }
        let (sw, port, prop) = (nic.switch, nic.port, nic.prop);
        {
            let p = self.pkt_mut(slot);
            p.hop = 0;
            p.in_port = port;
            p.tail_at = now + ser + prop;
        }
        let admitted = self.cc.on_inject(id, src, dst, frame, now);
        debug_assert!(admitted == Admission::Admit || !self.cc.enabled());
        self.stats.injected += 1;
        self.queue
            .schedule(SimTime(now + prop), Ev::Arrive { sw, port, pkt: slot });
        if last_of_message {
            self.queue
                .schedule(SimTime(now + ser), Ev::MsgInjected { msg });
        }
        if self.cc.enabled() && !self.cc_ticking {
            self.cc_ticking = true;
            self.queue
                .schedule(SimTime(now + self.cfg.cc.tick_ns), Ev::CcTick);
        }
        self.schedule_wake(ep, now + ser);
    }

    fn out_port_for(&self, sw: usize, p: &Packet) -> usize {
        let hop = p.hop as usize;
        if hop < p.path.links.len() {
            self.topo
                .port_on(sw, p.path.links[hop])
                .expect("path link attached to switch")
        } else {
            self.topo.endpoints[p.dst as usize].port
        }
    }

    /// Control-plane latency back to the source from switch `upto` on the path.
    fn reverse_latency(&self, p: &Packet, upto: usize, delivered: bool) -> u64 {
        let per_switch = self.cfg.switch.request_ns;
        let links: u64 = p.path.links[..upto]
            .iter()
            .map(|&l| self.topo.links[l].propagation_ns)
            .sum();
        let src_prop = self.nics[p.src as usize].prop;
        let dst_prop = if delivered { self.nics[p.dst as usize].prop } else { 0 };
        links + src_prop + dst_prop + per_switch * (upto as u64 + 1)
    }

    fn on_arrive(&mut self, now: u64, sw: u32, port: u8, slot: u32) {
        let s = sw as usize;
        let (id, class, frame, vc) = {
            let p = self.pkt(slot);
            (p.id, p.class, p.frame, p.hop as usize)
        };
        let lossless = self.class_lossless(class);
        let admitted = self.switches[s].ports[port as usize].input[vc].admit(class as usize, frame as u64);
        if !admitted {
            assert!(!lossless, "lossless packet arrived without buffer space");
            self.stats.dropped += 1;
            let p = self.pkt(slot);
            let back = self.reverse_latency(p, p.hop as usize, false);
            self.queue.schedule(SimTime(now + back), Ev::Nack { pkt: slot });
            self.record(now, sw, "drop", port, 0, id);
            return;
        }
        let peer = self.switches[s].ports[port as usize].peer;
        if let Peer::Switch { sw: usw, port: uport } = peer {
            let ps = &mut self.switches[s].ports[port as usize];
            if !ps.depth_pending {
                ps.depth_pending = true;
                let prop = ps.prop;
                let depths: Box<[u64]> = self.switches[s].table.local.clone().into_boxed_slice();
                self.queue.schedule(
                    SimTime(now + prop),
                    Ev::Depths {
                        sw: usw,
                        port: uport,
                        from_sw: sw,
                        from_port: port,
                        ts: now,
                        depths,
                    },
                );
            }
        }
        let out = self.out_port_for(s, self.pkt(slot));
        let i = self.voq_index(out, class as usize, port as usize);
        let st = &mut self.switches[s];
        st.voq[i].push_back(slot);
        st.table.add(out, class as usize, frame as u64);
        self.record(now, sw, "arrive", port, out as u8, id);
        self.queue.schedule(
            SimTime(now + self.cfg.switch.request_ns),
            Ev::Request {
                sw,
                out: out as u8,
                class,
                inp: port,
            },
        );
    }

    fn kick(&mut self, sw: u32, out: u8, now: u64) {
        let port = &mut self.switches[sw as usize].ports[out as usize];
        if !port.arb_pending {
            port.arb_pending = true;
            let t = now.max(port.next_arb);
            self.queue.schedule(SimTime(t), Ev::Arbitrate { sw, out });
        }
    }

    /// Position within the requested prefix of a VOQ of the first packet the
    /// next hop can accept.
    fn first_fit(&self, sw: usize, out: usize, class: usize, inp: usize) -> Option<usize> {
        let i = self.voq_index(out, class, inp);
        let st = &self.switches[sw];
        let n = st.requests[i] as usize;
        let port = &st.ports[out];
        let needs_credit = matches!(port.peer, Peer::Switch { .. }) && self.class_lossless(class as u8);
        if !needs_credit {
            return (n > 0).then_some(0);
        }
        let mut last_vc = usize::MAX;
        for (j, &slot) in st.voq[i].iter().take(n).enumerate() {
            let p = self.pkt(slot);
            let vc = p.hop as usize + 1;
            if vc == last_vc {
                continue;
            }
            if port.credit[vc].can_admit(class, self.max_frame as u64) {
                return Some(j);
            }
            last_vc = vc;
        }
        None
    }

    fn arbitrate(&mut self, now: u64, sw: u32, out: u8) {
        let (s, o) = (sw as usize, out as usize);
        self.switches[s].ports[o].arb_pending = false;
        if !self.switches[s].ports[o].arb.has_requests() {
            return;
        }
        let mut fit = vec![0u64; self.nclass];
        let mut pos = vec![[0u16; SWITCH_RADIX]; self.nclass];
        for (c, f) in fit.iter_mut().enumerate() {
            let mut mask = self.switches[s].ports[o].arb.requests[c];
            while mask != 0 {
                let inp = mask.trailing_zeros() as usize;
                mask &= mask - 1;
                if let Some(j) = self.first_fit(s, o, c, inp) {
                    *f |= 1 << inp;
                    pos[c][inp] = j as u16;
                }
            }
        }
        let qos = &self.cfg.qos;
        let grant = self.switches[s].ports[o].arb.grant_from(qos, now, &fit);
        let Some((class, inp)) = grant else {
            if fit.iter().any(|&m| m != 0) {
                // every sendable class is held back by its rate cap
                let ok: Vec<bool> = fit.iter().map(|&m| m != 0).collect();
                if let Some(t) = self.switches[s].ports[o].arb.sched.next_token_time(&ok) {
                    let port = &mut self.switches[s].ports[o];
                    port.arb_pending = true;
                    self.queue
                        .schedule(SimTime(t.max(now + 1)), Ev::Arbitrate { sw, out });
                }
            }
            return;
        };
        let i = self.voq_index(o, class, inp);
        let j = pos[class][inp] as usize;
        let slot = {
            let st = &mut self.switches[s];
            let slot = st.voq[i].remove(j).expect("fit position");
            st.requests[i] -= 1;
            if st.requests[i] == 0 {
                st.ports[o].arb.requests[class] &= !(1u64 << inp);
            }
            slot
        };
        let (id, frame, vc, tail_at, key, hop) = {
            let p = self.pkt(slot);
            (p.id, p.frame, p.hop as usize, p.tail_at, p.key, p.hop as u64)
        };
        let sc = &self.cfg.switch;
        let mut rng = SmallRng::seed_from_u64(mix(key, PURPOSE_HOP + hop));
        let traversal = sc.traversal_latency(&mut rng);
        let crossbar = sc.crossbar_ns(traversal);
        let (grant_ns, lead) = (sc.grant_ns, sc.grant_ns + sc.max_crossbar_ns());
        let wire = frame + self.cfg.frame_mode.inter_packet_gap();
        let lossless = self.class_lossless(class as u8);

        let st = &mut self.switches[s];
        st.table.remove(o, class as usize, frame as u64);
        let backlogged = st.ports[o].arb.backlogged();
        let port = &mut st.ports[o];
        let ser = port.ser.serialize_ns(wire);
        let start = (now + grant_ns + crossbar).max(port.link_free).max(tail_at);
        port.link_free = start + ser;
        port.arb.sched.charge(class, wire as u64, &backlogged);
        port.next_arb = (now + 1).max(port.link_free.saturating_sub(lead));
        let (peer, prop) = (port.peer, port.prop);
        if let Peer::Switch { .. } = peer {
            if lossless {
                let ok = port.credit[vc + 1].admit(class, frame as u64);
                debug_assert!(ok, "granted without downstream credit");
            }
        }
        let more = port.arb.has_requests();
        let inport = &mut st.ports[inp];
        inport.input[vc].release(class, frame as u64);
        let in_prop = inport.prop;
        if lossless {
            match inport.peer {
                Peer::Switch { sw: usw, port: uport } => self.queue.schedule(
                    SimTime(start + in_prop),
                    Ev::SwitchCredit {
                        sw: usw,
                        out: uport,
                        vc: vc as u8,
                        class: class as u8,
                        bytes: frame,
                    },
                ),
                Peer::Nic(ep) => self.queue.schedule(
                    SimTime(start + in_prop),
                    Ev::NicCredit {
                        ep,
                        class: class as u8,
                        bytes: frame,
                    },
                ),
                Peer::None => unreachable!("packets arrive over links"),
            };
        }
        self.record(now + grant_ns, sw, "grant", inp as u8, out, id);
        self.record(start, sw, "data", inp as u8, out, id);
        match peer {
            Peer::Switch { sw: dsw, port: dport } => {
                let p = self.pkt_mut(slot);
                p.hop += 1;
                p.in_port = dport;
                p.tail_at = start + ser + prop;
                self.queue.schedule(
                    SimTime(start + prop),
                    Ev::Arrive {
                        sw: dsw,
                        port: dport,
                        pkt: slot,
                    },
                );
            }
            Peer::Nic(_) => {
                self.queue
                    .schedule(SimTime(start + ser + prop), Ev::Deliver { pkt: slot });
            }
            Peer::None => unreachable!("routed to an unconnected port"),
        }
        if more {
            self.kick(sw, out, now);
        }
    }

    fn on_deliver(&mut self, now: u64, slot: u32) {
        let (msg, payload, hops, sent) = {
            let p = self.pkt_mut(slot);
            p.deliver_time = now;
            (p.msg, p.payload, p.path.links.len(), p.inject_time)
        };
        if self.cfg.record_latency {
            self.stats.latencies.push(now - sent);
        }
        self.stats.delivered += 1;
        let (job, dst_rank, tag, done) = {
            let m = self.msg_mut(msg);
            m.delivered += 1;
            (m.job as usize, m.dst_rank as usize, m.tag, m.delivered as usize == m.payloads.len())
        };
        let frame = self.pkt(slot).frame;
        self.stats.delivered_bytes[job] += frame as u64;
        self.stats.payload_bytes[job] += payload as u64;
        if let Some(w) = self.cfg.series_window_ns {
            let bin = (now / w) as usize;
            let series = &mut self.stats.series[job];
            if series.len() <= bin {
                series.resize(bin + 1, 0);
            }
            series[bin] += payload as u64;
        }
        let back = self.reverse_latency(self.pkt(slot), hops, true);
        self.queue.schedule(SimTime(now + back), Ev::Ack { pkt: slot });
        if done {
            let mut acts = std::mem::take(&mut self.actions);
            self.jobs[job].on_received(dst_rank, tag, now, &mut acts);
            self.apply_actions(job, now, acts);
        }
    }

    fn on_ack(&mut self, now: u64, slot: u32) {
        let p = self.packets[slot as usize].take().expect("live packet");
        self.free_packets.push(slot);
        if let Some(out) = self.cc.on_ack(p.id, now) {
            if out.drained {
                let nic = &self.nics[p.src as usize];
                let pending = nic
                    .cursors
                    .iter()
                    .any(|&m| self.msg(m).dst == p.dst)
                    || nic.retx.iter().any(|&q| self.pkt(q).dst == p.dst);
                if !pending {
                    self.cc.forget(p.src, p.dst);
                }
            }
        }
        let (job, src_rank, tag, complete) = {
            let m = self.msg_mut(p.msg);
            m.acked += 1;
            (m.job as usize, m.src_rank as usize, m.tag, m.acked as usize == m.payloads.len())
        };
        if complete {
            self.messages[p.msg as usize] = None;
            self.free_messages.push(p.msg);
            let mut acts = std::mem::take(&mut self.actions);
            self.jobs[job].on_acked(src_rank, tag, now, &mut acts);
            self.apply_actions(job, now, acts);
        }
        self.nic_try_send(p.src, now);
    }
}
