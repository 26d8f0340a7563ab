//! Synthetic workloads, node allocation, and the per-job state machines that
//! drive them.
//!
//! Collective kinds (alltoall, allreduce, halo3d, pingpong, and the victim
//! forms of incast and bisection streams) run as rounds: a rank moves to its
//! next round once its sends have left the NIC and its expected receives
//! have arrived. Streaming kinds used as background load post messages back
//! to back, each after the previous one is acknowledged.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::MAX_PAYLOAD;
use crate::error::ConfigError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKind {
    Incast,
    Alltoall,
    BurstyIncast,
    Allreduce,
    Pingpong,
    BisectionStream,
    Halo3d,
}

impl WorkloadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            WorkloadKind::Incast => "incast",
            WorkloadKind::Alltoall => "alltoall",
            WorkloadKind::BurstyIncast => "bursty_incast",
            WorkloadKind::Allreduce => "allreduce",
            WorkloadKind::Pingpong => "pingpong",
            WorkloadKind::BisectionStream => "bisection_stream",
            WorkloadKind::Halo3d => "halo3d",
        }
    }

    fn streams(self) -> bool {
        matches!(
            self,
            WorkloadKind::Incast | WorkloadKind::BurstyIncast | WorkloadKind::BisectionStream
        )
    }
}

/// How alltoall rounds are separated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundSync {
    /// A round ends for everyone when all its messages are delivered.
    #[default]
    Global,
    /// Each rank moves on once its own exchange of the round is done.
    Pairwise,
    /// Every exchange is posted at once; the NIC interleaves them.
    Concurrent,
}

fn d_one() -> usize {
    1
}
fn d_overhead() -> u64 {
    500
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub msg_bytes: u64,
    /// Victims: stop after this many iterations (the harness normally
    /// decides). Streams: messages per source. None runs until the scenario ends.
    #[serde(default)]
    pub iterations: Option<u64>,
    #[serde(default)]
    pub burst_size: Option<u64>,
    #[serde(default)]
    pub burst_gap_ns: Option<u64>,
    #[serde(default)]
    pub grid: Option<[usize; 3]>,
    /// Traffic class, resolved to a DSCP value of that class.
    #[serde(default)]
    pub tclass: Option<u8>,
    /// Explicit DSCP marking; takes precedence over `tclass`.
    #[serde(default)]
    pub dscp: Option<u8>,
    #[serde(default)]
    pub start_ns: u64,
    #[serde(default)]
    pub stop_ns: Option<u64>,
    /// Idle time between victim iterations.
    #[serde(default)]
    pub compute_ns: u64,
    /// Messages a streaming source may have unacknowledged.
    #[serde(default = "d_one")]
    pub max_outstanding: usize,
    /// Host time to post a message after the previous one completes.
    #[serde(default = "d_overhead")]
    pub post_overhead_ns: u64,
    #[serde(default)]
    pub round_sync: RoundSync,
    /// Rank that incast sources target.
    #[serde(default)]
    pub target: usize,
    /// Rotate the incast target by one rank after every burst.
    #[serde(default)]
    pub rotate_target: bool,
}

impl WorkloadSpec {
    pub fn new(kind: WorkloadKind, msg_bytes: u64) -> Self {
        WorkloadSpec {
            kind,
            msg_bytes,
            iterations: None,
            burst_size: None,
            burst_gap_ns: None,
            grid: None,
            tclass: None,
            dscp: None,
            start_ns: 0,
            stop_ns: None,
            compute_ns: 0,
            max_outstanding: 1,
            post_overhead_ns: d_overhead(),
            round_sync: RoundSync::Global,
            target: 0,
            rotate_target: false,
        }
    }

    pub fn validate(&self, nodes: usize) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let k = self.kind.as_str();
        if self.max_outstanding == 0 {
            return bad(format!("{k}: max_outstanding must be at least 1"));
        }
        let bursty = self.kind == WorkloadKind::BurstyIncast;
        if bursty != self.burst_size.is_some() || (!bursty && self.burst_gap_ns.is_some()) {
            return bad(format!(
                "{k}: burst_size/burst_gap_ns belong to bursty_incast only"
            ));
        }
        if bursty && self.burst_size == Some(0) {
            return bad(format!("{k}: burst_size must be at least 1"));
        }
        let halo = self.kind == WorkloadKind::Halo3d;
        if halo != self.grid.is_some() {
            return bad(format!("{k}: grid belongs to halo3d only"));
        }
        if let Some(g) = self.grid {
            if g.iter().product::<usize>() != nodes {
                return bad(format!(
                    "halo3d grid {}x{}x{} does not match {nodes} nodes",
                    g[0], g[1], g[2]
                ));
            }
        }
        let min_nodes = match self.kind {
            WorkloadKind::Halo3d => 1,
            _ => 2,
        };
        if nodes < min_nodes {
            return bad(format!("{k} needs at least {min_nodes} nodes"));
        }
        if self.kind == WorkloadKind::Pingpong && nodes != 2 {
            return bad("pingpong runs on exactly 2 nodes".into());
        }
        if self.kind == WorkloadKind::BisectionStream && nodes % 2 != 0 {
            return bad("bisection_stream needs an even node count".into());
        }
        if self.kind.streams() && self.target >= nodes {
            return bad(format!("{k}: target rank {} out of range", self.target));
        }
        Ok(())
    }
}

/// Packets per message: ceil(msg/4096), at least one.
pub fn segment(msg_bytes: u64) -> Vec<u32> {
    let full = (msg_bytes / MAX_PAYLOAD as u64) as usize;
    let rest = (msg_bytes % MAX_PAYLOAD as u64) as u32;
    let mut out = vec![MAX_PAYLOAD; full];
    if rest > 0 || out.is_empty() {
        out.push(rest);
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Allocation {
    #[default]
    Linear,
    Interleaved,
    Random,
}

/// Splits endpoints between a victim and an aggressor job.
pub fn allocate_nodes(
    strategy: Allocation,
    victim: usize,
    aggressor: usize,
    n_endpoints: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), ConfigError> {
    if victim + aggressor > n_endpoints {
        return Err(ConfigError::Invalid(format!(
            "split {victim}+{aggressor} exceeds {n_endpoints} endpoints"
        )));
    }
    let total = victim + aggressor;
    let mut v = Vec::with_capacity(victim);
    let mut a = Vec::with_capacity(aggressor);
    match strategy {
        Allocation::Linear => {
            v.extend(0..victim);
            a.extend(victim..total);
        }
        Allocation::Interleaved => {
            // hand each id to whichever job is furthest behind its quota
            for id in 0..total {
                let take_victim = a.len() == aggressor
                    || (v.len() < victim && v.len() * aggressor <= a.len() * victim);
                if take_victim {
                    v.push(id);
                } else {
                    a.push(id);
                }
            }
        }
        Allocation::Random => {
            let mut ids: Vec<usize> = (0..n_endpoints).collect();
            ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            v.extend_from_slice(&ids[..victim]);
            a.extend_from_slice(&ids[victim..total]);
        }
    }
    Ok((v, a))
}

/// What a job asks the network to do.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    /// Post a message between two ranks of the job.
    Send {
        src: usize,
        dst: usize,
        bytes: u64,
        tag: u64,
    },
    /// Call back `on_timer` after `delay_ns`.
    Timer { rank: usize, delay_ns: u64, tag: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JobRole {
    /// Measured: iterations are timed and recorded.
    Victim,
    /// Load that runs until the scenario ends.
    Background,
}

const JOB_TIMER: usize = usize::MAX;
const TAG_NEXT_ITERATION: u64 = 0;
const TAG_POST: u64 = 1;
const TAG_GAP: u64 = 2;

#[derive(Clone, Debug, Default)]
struct RankRounds {
    round: u32,
    pending_sends: u32,
    needed: u32,
    got: Vec<u32>,
    waiting_sync: bool,
    done: bool,
}

/// Start offset of a bursty source within one gap, spread by a
/// low-discrepancy sequence so sources do not burst in lockstep.
fn stagger(rank: usize, gap: u64) -> u64 {
    const PHI_FRAC: f64 = 0.618_033_988_749_894_9;
    ((rank as f64 * PHI_FRAC).fract() * gap as f64) as u64
}

#[derive(Clone, Debug, Default)]
struct Source {
    outstanding: usize,
    in_burst: u64,
    sent: u64,
    target: usize,
    timer_armed: bool,
}

#[derive(Clone, Debug)]
enum Mode {
    Rounds {
        ranks: Vec<RankRounds>,
        done: usize,
        synced: usize,
    },
    Stream {
        sources: Vec<Option<Source>>,
    },
}

#[derive(Clone, Debug)]
pub struct Job {
    pub spec: WorkloadSpec,
    pub role: JobRole,
    /// Rank -> endpoint.
    pub nodes: Vec<usize>,
    mode: Mode,
    pub iteration: u64,
    iter_start: u64,
    /// Completed iteration durations (victims).
    pub samples: Vec<u64>,
    pub finished: bool,
    pub started: bool,
}

fn halo_neighbors(grid: [usize; 3], rank: usize) -> Vec<usize> {
    let [x, y, z] = grid;
    let (i, j, k) = (rank % x, (rank / x) % y, rank / (x * y));
    let id = |i: usize, j: usize, k: usize| i + x * (j + y * k);
    let mut out = Vec::with_capacity(6);
    if i > 0 {
        out.push(id(i - 1, j, k));
    }
    if i + 1 < x {
        out.push(id(i + 1, j, k));
    }
    if j > 0 {
        out.push(id(i, j - 1, k));
    }
    if j + 1 < y {
        out.push(id(i, j + 1, k));
    }
    if k > 0 {
        out.push(id(i, j, k - 1));
    }
    if k + 1 < z {
        out.push(id(i, j, k + 1));
    }
    out
}

impl Job {
    pub fn new(spec: WorkloadSpec, role: JobRole, nodes: Vec<usize>) -> Self {
        let p = nodes.len();
        let stream = role == JobRole::Background && spec.kind.streams();
        let mode = if stream {
            let sources = (0..p)
                .map(|r| {
                    let is_source = match spec.kind {
                        WorkloadKind::BisectionStream => r < p / 2,
                        _ => r != spec.target,
                    };
                    is_source.then(|| Source {
                        target: match spec.kind {
                            WorkloadKind::BisectionStream => r + p / 2,
                            _ => spec.target,
                        },
                        ..Source::default()
                    })
                })
                .collect();
            Mode::Stream { sources }
        } else {
            Mode::Rounds {
                ranks: vec![RankRounds::default(); p],
                done: 0,
                synced: 0,
            }
        };
        Job {
            spec,
            role,
            nodes,
            mode,
            iteration: 0,
            iter_start: 0,
            samples: Vec::new(),
            finished: false,
            started: false,
        }
    }

    pub fn ranks(&self) -> usize {
        self.nodes.len()
    }

    /// Destination ranks a rank sends to in one round, and how many
    /// messages it receives in that round. None once the rank is finished.
    pub fn plan(&self, rank: usize, round: u32) -> Option<(Vec<usize>, u32)> {
        let p = self.ranks();
        let r = round as usize;
        let target = self.spec.target;
        match self.spec.kind {
            WorkloadKind::Alltoall if self.spec.round_sync == RoundSync::Concurrent => {
                (r == 0).then(|| ((1..p).map(|k| (rank + k) % p).collect(), p as u32 - 1))
            }
            WorkloadKind::Alltoall => {
                (r < p - 1).then(|| (vec![(rank + r + 1) % p], 1))
            }
            WorkloadKind::Allreduce => {
                let p2 = 1usize << (usize::BITS - 1 - p.leading_zeros());
                let extra = p - p2;
                let levels = p2.trailing_zeros() as usize;
                if r == 0 {
                    Some(if rank >= p2 {
                        (vec![rank - p2], 0)
                    } else if rank < extra {
                        (vec![], 1)
                    } else {
                        (vec![], 0)
                    })
                } else if r <= levels {
                    Some(if rank < p2 {
                        (vec![rank ^ (1 << (r - 1))], 1)
                    } else {
                        (vec![], 0)
                    })
                } else if r == levels + 1 {
                    Some(if rank < extra {
                        (vec![rank + p2], 0)
                    } else if rank >= p2 {
                        (vec![], 1)
                    } else {
                        (vec![], 0)
                    })
                } else {
                    None
                }
            }
            WorkloadKind::Pingpong => match (r, rank) {
                (0, 0) => Some((vec![1], 0)),
                (0, _) => Some((vec![], 1)),
                (1, 0) => Some((vec![], 1)),
                (1, _) => Some((vec![0], 0)),
                _ => None,
            },
            WorkloadKind::Halo3d => (r == 0).then(|| {
                let n = halo_neighbors(self.spec.grid.expect("validated grid"), rank);
                let k = n.len() as u32;
                (n, k)
            }),
            WorkloadKind::Incast | WorkloadKind::BurstyIncast => (r == 0).then(|| {
                let burst = self.spec.burst_size.unwrap_or(1) as usize;
                if rank == target {
                    (vec![], ((p - 1) * burst) as u32)
                } else {
                    (vec![target; burst], 0)
                }
            }),
            WorkloadKind::BisectionStream => (r == 0).then(|| {
                if rank < p / 2 {
                    (vec![rank + p / 2], 0)
                } else {
                    (vec![], 1)
                }
            }),
        }
    }

    fn tag(&self, round: u32) -> u64 {
        (self.iteration << 32) | round as u64
    }

    pub fn start(&mut self, now: u64, out: &mut Vec<Action>) {
        self.started = true;
        if self.stopped(now) {
            self.finished = true;
            return;
        }
        match &mut self.mode {
            Mode::Rounds { .. } => self.start_iteration(now, out),
            Mode::Stream { sources } => {
                let n = sources.len();
                let gap = self.spec.burst_gap_ns.unwrap_or(0);
                for r in 0..n {
                    let offset = stagger(r, gap);
                    let Mode::Stream { sources } = &mut self.mode else {
                        unreachable!()
                    };
                    match sources[r].as_mut() {
                        Some(s) if offset > 0 => {
                            s.timer_armed = true;
                            out.push(Action::Timer {
                                rank: r,
                                delay_ns: offset,
                                tag: TAG_POST,
                            });
                        }
                        _ => self.post_stream(r, now, out),
                    }
                }
            }
        }
    }

    fn stopped(&self, now: u64) -> bool {
        self.spec.stop_ns.is_some_and(|s| now >= s)
    }

    fn start_iteration(&mut self, now: u64, out: &mut Vec<Action>) {
        self.iter_start = now;
        let p = self.ranks();
        if let Mode::Rounds { ranks, done, synced } = &mut self.mode {
            *ranks = vec![RankRounds::default(); p];
            *done = 0;
            *synced = 0;
        }
        for r in 0..p {
            self.enter_round(r, now, out);
        }
    }

    fn global_sync(&self) -> bool {
        self.spec.kind == WorkloadKind::Alltoall && self.spec.round_sync == RoundSync::Global
    }

    fn enter_round(&mut self, rank: usize, now: u64, out: &mut Vec<Action>) {
        let round = match &self.mode {
            Mode::Rounds { ranks, .. } => ranks[rank].round,
            Mode::Stream { .. } => return,
        };
        match self.plan(rank, round) {
            None => {
                let all_done = {
                    let Mode::Rounds { ranks, done, .. } = &mut self.mode else {
                        unreachable!()
                    };
                    ranks[rank].done = true;
                    *done += 1;
                    *done == ranks.len()
                };
                if all_done {
                    self.finish_iteration(now, out);
                }
            }
            Some((dsts, needed)) => {
                let tag = self.tag(round);
                for &d in &dsts {
                    out.push(Action::Send {
                        src: rank,
                        dst: d,
                        bytes: self.spec.msg_bytes,
                        tag,
                    });
                }
                if let Mode::Rounds { ranks, .. } = &mut self.mode {
                    let st = &mut ranks[rank];
                    st.pending_sends = dsts.len() as u32;
                    st.needed = needed;
                    if st.got.len() <= round as usize {
                        st.got.resize(round as usize + 1, 0);
                    }
                }
                self.try_advance(rank, now, out);
            }
        }
    }

    fn try_advance(&mut self, rank: usize, now: u64, out: &mut Vec<Action>) {
        let global = self.global_sync();
        let Mode::Rounds { ranks, synced, .. } = &mut self.mode else {
            return;
        };
        let st = &mut ranks[rank];
        if st.done || st.waiting_sync {
            return;
        }
        let r = st.round as usize;
        let got = st.got.get(r).copied().unwrap_or(0);
        if st.pending_sends > 0 || got < st.needed {
            return;
        }
        if global {
            st.waiting_sync = true;
            *synced += 1;
            if *synced == ranks.len() {
                *synced = 0;
                for s in ranks.iter_mut() {
                    s.waiting_sync = false;
                    s.round += 1;
                }
                for r in 0..self.ranks() {
                    self.enter_round(r, now, out);
                }
            }
        } else {
            st.round += 1;
            self.enter_round(rank, now, out);
        }
    }

    fn finish_iteration(&mut self, now: u64, out: &mut Vec<Action>) {
        if self.role == JobRole::Victim {
            self.samples.push(now - self.iter_start);
        }
        self.iteration += 1;
        let limit_hit = self.spec.iterations.is_some_and(|n| self.iteration >= n);
        if limit_hit || self.stopped(now) {
            self.finished = true;
            return;
        }
        out.push(Action::Timer {
            rank: JOB_TIMER,
            delay_ns: self.spec.compute_ns,
            tag: TAG_NEXT_ITERATION,
        });
    }

    /// The last packet of a message left the sender's NIC.
    pub fn on_injected(&mut self, src: usize, _tag: u64, now: u64, out: &mut Vec<Action>) {
        if let Mode::Rounds { ranks, .. } = &mut self.mode {
            ranks[src].pending_sends -= 1;
            self.try_advance(src, now, out);
        }
    }

    /// Every packet of a message has been acknowledged to the sender.
    pub fn on_acked(&mut self, src: usize, _tag: u64, _now: u64, out: &mut Vec<Action>) {
        let (overhead, burst) = (self.spec.post_overhead_ns, self.spec.burst_size);
        let gap = self.spec.burst_gap_ns.unwrap_or(0);
        if let Mode::Stream { sources } = &mut self.mode {
            let s = sources[src].as_mut().expect("acks reach sources only");
            s.outstanding -= 1;
            let burst_over = burst.is_some_and(|b| s.in_burst >= b);
            if burst_over {
                if s.outstanding == 0 {
                    out.push(Action::Timer {
                        rank: src,
                        delay_ns: gap,
                        tag: TAG_GAP,
                    });
                }
            } else if !s.timer_armed {
                s.timer_armed = true;
                out.push(Action::Timer {
                    rank: src,
                    delay_ns: overhead,
                    tag: TAG_POST,
                });
            }
        }
    }

    /// Every packet of a message reached its destination rank.
    pub fn on_received(&mut self, dst: usize, tag: u64, now: u64, out: &mut Vec<Action>) {
        if tag >> 32 != self.iteration {
            return;
        }
        if let Mode::Rounds { ranks, .. } = &mut self.mode {
            let round = (tag & 0xFFFF_FFFF) as usize;
            let st = &mut ranks[dst];
            if st.got.len() <= round {
                st.got.resize(round + 1, 0);
            }
            st.got[round] += 1;
            self.try_advance(dst, now, out);
        }
    }

    pub fn on_timer(&mut self, rank: usize, tag: u64, now: u64, out: &mut Vec<Action>) {
        if rank == JOB_TIMER {
            if !self.finished {
                self.start_iteration(now, out);
            }
            return;
        }
        let rotate = self.spec.rotate_target;
        let p = self.ranks();
        if let Mode::Stream { sources } = &mut self.mode {
            let s = sources[rank].as_mut().expect("timers belong to sources");
            match tag {
                TAG_GAP => {
                    s.in_burst = 0;
                    if rotate {
                        s.target = (s.target + 1) % p;
                        if s.target == rank {
                            s.target = (s.target + 1) % p;
                        }
                    }
                }
                _ => s.timer_armed = false,
            }
        }
        self.post_stream(rank, now, out);
    }

    fn post_stream(&mut self, rank: usize, now: u64, out: &mut Vec<Action>) {
        let stopped = self.stopped(now);
        let spec = &self.spec;
        let Mode::Stream { sources } = &mut self.mode else {
            return;
        };
        let Some(s) = sources[rank].as_mut() else {
            return;
        };
        if stopped {
            self.finished = true;
            return;
        }
        while s.outstanding < spec.max_outstanding
            && spec.burst_size.is_none_or(|b| s.in_burst < b)
            && spec.iterations.is_none_or(|n| s.sent < n)
        {
            s.outstanding += 1;
            s.in_burst += 1;
            s.sent += 1;
            out.push(Action::Send {
                src: rank,
                dst: s.target,
                bytes: spec.msg_bytes,
                tag: s.sent,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn segmentation() {
        assert_eq!(segment(131_072).len(), 32);
        assert_eq!(segment(8), vec![8]);
        assert_eq!(segment(0), vec![0]);
        assert_eq!(segment(5000), vec![4096, 904]);
    }

    #[test]
    fn allocation_strategies() {
        let (v, a) = allocate_nodes(Allocation::Linear, 4, 4, 8, 0).unwrap();
        assert_eq!((v, a), (vec![0, 1, 2, 3], vec![4, 5, 6, 7]));
        let (v, a) = allocate_nodes(Allocation::Interleaved, 2, 2, 4, 0).unwrap();
        assert_eq!((v, a), (vec![0, 2], vec![1, 3]));
        let (v, a) = allocate_nodes(Allocation::Interleaved, 460, 52, 512, 0).unwrap();
        assert_eq!((v.len(), a.len()), (460, 52));
        let r1 = allocate_nodes(Allocation::Random, 20, 12, 64, 7).unwrap();
        let r2 = allocate_nodes(Allocation::Random, 20, 12, 64, 7).unwrap();
        assert_eq!(r1, r2);
        assert!(allocate_nodes(Allocation::Linear, 5, 5, 8, 0).is_err());
    }

    /// Runs a round-based job with instant delivery; returns messages sent
    /// per iteration and rounds observed.
    fn drive(spec: WorkloadSpec, p: usize) -> (usize, u32) {
        let mut spec = spec;
        spec.iterations = Some(1);
        let mut job = Job::new(spec, JobRole::Victim, (0..p).collect());
        let mut queue = Vec::new();
        job.start(0, &mut queue);
        let mut sends = 0;
        let mut max_round = 0;
        let mut t = 0;
        while let Some(a) = queue.pop() {
            t += 1;
            let mut out = Vec::new();
            match a {
                Action::Send { src, dst, tag, .. } => {
                    sends += 1;
                    max_round = max_round.max((tag & 0xFFFF_FFFF) as u32);
                    job.on_injected(src, tag, t, &mut out);
                    job.on_received(dst, tag, t, &mut out);
                }
                Action::Timer { rank, tag, .. } => job.on_timer(rank, tag, t, &mut out),
            }
            queue.extend(out);
        }
        assert!(job.finished);
        assert_eq!(job.samples.len(), 1);
        (sends, max_round)
    }

    #[test]
    fn collective_message_counts() {
        let a2a = WorkloadSpec::new(WorkloadKind::Alltoall, 128);
        assert_eq!(drive(a2a.clone(), 2), (2, 0));
        assert_eq!(drive(a2a.clone(), 4), (12, 2));
        let mut pw = a2a;
        pw.round_sync = RoundSync::Pairwise;
        assert_eq!(drive(pw, 5).0, 20);
        let ar = WorkloadSpec::new(WorkloadKind::Allreduce, 8);
        assert_eq!(drive(ar.clone(), 2), (2, 1));
        assert_eq!(drive(ar.clone(), 8), (24, 3));
        // 6 ranks: 2 fold into 4 core ranks, which run 2 levels
        assert_eq!(drive(ar, 6).0, 2 + 4 * 2 + 2);
        let pp = WorkloadSpec::new(WorkloadKind::Pingpong, 64);
        assert_eq!(drive(pp, 2).0, 2);
        let mut halo = WorkloadSpec::new(WorkloadKind::Halo3d, 1024);
        halo.grid = Some([4, 4, 4]);
        // 3 * 2 * (4-1) * 16 directed face pairs
        assert_eq!(drive(halo, 64).0, 288);
    }

    #[test]
    fn halo_interior_has_six_neighbors() {
        assert_eq!(halo_neighbors([4, 4, 4], 21).len(), 6);
        assert_eq!(halo_neighbors([4, 4, 4], 0).len(), 3);
    }

    #[test]
    fn stream_posts_after_acks() {
        let mut spec = WorkloadSpec::new(WorkloadKind::BurstyIncast, 4096);
        spec.burst_size = Some(3);
        spec.burst_gap_ns = Some(1000);
        let mut job = Job::new(spec, JobRole::Background, vec![10, 11, 12]);
        let mut out = Vec::new();
        job.start(0, &mut out);
        // two sources, one message each
        assert_eq!(out.len(), 2);
        let mut per_src: HashMap<usize, usize> = HashMap::new();
        let mut gaps = 0;
        let mut queue = out;
        let mut steps = 0;
        while let Some(a) = queue.pop() {
            steps += 1;
            if steps > 100 {
                break;
            }
            let mut next = Vec::new();
            match a {
                Action::Send { src, dst, tag, .. } => {
                    assert_eq!(dst, 0);
                    *per_src.entry(src).or_default() += 1;
                    job.on_acked(src, tag, steps, &mut next);
                }
                Action::Timer { rank, tag, .. } => {
                    if tag == TAG_GAP {
                        gaps += 1;
                        if gaps > 2 {
                            continue;
                        }
                    }
                    job.on_timer(rank, tag, steps, &mut next);
                }
            }
            queue.extend(next);
        }
        assert!(per_src.values().all(|&n| n % 3 == 0 && n > 0));
    }
}
