//! End-to-end congestion control over endpoint pairs.
//!
//! Every in-flight packet is tracked per (source, destination). A
//! destination whose inbound outstanding bytes exceed a multiple of its
//! access link's bandwidth-delay product is congested; only pairs sending to
//! it have their windows cut. Windows recover additively once the backlog
//! drains below three quarters of the threshold.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

fn d_true() -> bool {
    true
}
fn d_threshold() -> f64 {
    2.0
}
fn d_decrease() -> f64 {
    0.5
}
fn d_increase() -> u32 {
    1
}
fn d_tick() -> u64 {
    2000
}
fn d_window() -> u32 {
    24
}
fn d_rtt() -> u64 {
    2000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CcConfig {
    #[serde(default = "d_true", with = "crate::routing::on_off")]
    pub enabled: bool,
    #[serde(default = "d_threshold")]
    pub threshold_bdp_multiple: f64,
    #[serde(default = "d_decrease")]
    pub decrease: f64,
    #[serde(default = "d_increase")]
    pub increase_frames: u32,
    #[serde(default = "d_tick")]
    pub tick_ns: u64,
    #[serde(default = "d_window")]
    pub default_window_frames: u32,
    /// Round trip used for the bandwidth-delay product.
    #[serde(default = "d_rtt")]
    pub base_rtt_ns: u64,
    #[serde(default)]
    pub window_log: bool,
}

impl Default for CcConfig {
    fn default() -> Self {
        CcConfig {
            enabled: true,
            threshold_bdp_multiple: d_threshold(),
            decrease: d_decrease(),
            increase_frames: d_increase(),
            tick_ns: d_tick(),
            default_window_frames: d_window(),
            base_rtt_ns: d_rtt(),
            window_log: false,
        }
    }
}

impl CcConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if !(self.decrease > 0.0 && self.decrease < 1.0) {
            return bad("cc.decrease must lie in (0, 1)");
        }
        if !(self.threshold_bdp_multiple.is_finite() && self.threshold_bdp_multiple > 0.0) {
            return bad("cc.threshold_bdp_multiple must be positive");
        }
        if self.tick_ns == 0 || self.base_rtt_ns == 0 {
            return bad("cc.tick_ns and cc.base_rtt_ns must be positive");
        }
        if self.default_window_frames == 0 {
            return bad("cc.default_window_frames must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Admission {
    Admit,
    Defer,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairState {
    pub outstanding_packets: u32,
    pub outstanding_bytes: u64,
    pub window: u64,
    pub last_rtt_ns: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowChange {
    pub time_ns: u64,
    pub src: u32,
    pub dst: u32,
    pub old: u64,
    pub new: u64,
}

#[derive(Clone, Copy, Debug)]
struct InFlight {
    src: u32,
    dst: u32,
    bytes: u32,
    sent: u64,
}

/// Result of an acknowledgement.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AckOutcome {
    pub src: u32,
    pub dst: u32,
    pub rtt_ns: u64,
    /// The pair has nothing in flight any more.
    pub drained: bool,
}

#[derive(Clone, Debug)]
pub struct CongestionControl {
    cfg: CcConfig,
    max_frame: u64,
    default_window: u64,
    threshold: u64,
    pairs: BTreeMap<(u32, u32), PairState>,
    inflight: HashMap<u64, InFlight>,
    aggregate: Vec<u64>,
    congested: Vec<bool>,
    pub duplicate_acks: u64,
    pub log: Vec<WindowChange>,
}

impl CongestionControl {
    /// `access_gbps` is the destination access link rate used for the
    /// bandwidth-delay product.
    pub fn new(cfg: &CcConfig, endpoints: usize, max_frame: u32, access_gbps: f64) -> Self {
        let bdp = access_gbps / 8.0 * cfg.base_rtt_ns as f64;
        CongestionControl {
            cfg: cfg.clone(),
            max_frame: max_frame as u64,
            default_window: cfg.default_window_frames as u64 * max_frame as u64,
            threshold: (bdp * cfg.threshold_bdp_multiple) as u64,
            pairs: BTreeMap::new(),
            inflight: HashMap::new(),
            aggregate: vec![0; endpoints],
            congested: vec![false; endpoints],
            duplicate_acks: 0,
            log: Vec::new(),
        }
    }

    pub fn enabled(&self) -> bool {
        self.cfg.enabled
    }

    pub fn threshold(&self) -> u64 {
        self.threshold
    }

    pub fn default_window(&self) -> u64 {
        self.default_window
    }

    pub fn pair(&self, src: u32, dst: u32) -> Option<&PairState> {
        self.pairs.get(&(src, dst))
    }

    pub fn window(&self, src: u32, dst: u32) -> u64 {
        self.pairs
            .get(&(src, dst))
            .map_or(self.default_window, |p| p.window)
    }

    pub fn aggregate(&self, dst: u32) -> u64 {
        self.aggregate[dst as usize]
    }

    pub fn is_congested(&self, dst: u32) -> bool {
        self.congested[dst as usize]
    }

    pub fn in_flight(&self) -> usize {
        self.inflight.len()
    }

    /// Whether a new packet of the pair may enter the network now.
    pub fn can_inject(&self, src: u32, dst: u32) -> bool {
        if !self.cfg.enabled {
            return true;
        }
        self.pairs
            .get(&(src, dst))
            .is_none_or(|p| p.outstanding_bytes < p.window)
    }

    pub fn on_inject(&mut self, id: u64, src: u32, dst: u32, bytes: u32, now: u64) -> Admission {
        if !self.can_inject(src, dst) {
            return Admission::Defer;
        }
        // a new pair toward a destination already known to be congested
        // starts throttled
        let w = if self.cfg.enabled && self.congested[dst as usize] {
            self.max_frame
        } else {
            self.default_window
        };
        let p = self.pairs.entry((src, dst)).or_insert(PairState {
            outstanding_packets: 0,
            outstanding_bytes: 0,
            window: w,
            last_rtt_ns: 0,
        });
        p.outstanding_packets += 1;
        p.outstanding_bytes += bytes as u64;
        self.aggregate[dst as usize] += bytes as u64;
        self.inflight.insert(
            id,
            InFlight {
                src,
                dst,
                bytes,
                sent: now,
            },
        );
        self.refresh(dst);
        // the source sees the destination's backlog at admission time
        if self.cfg.enabled && self.congested[dst as usize] {
            self.cut(src, dst, now);
        }
        Admission::Admit
    }

    fn refresh(&mut self, dst: u32) {
        self.congested[dst as usize] = self.aggregate[dst as usize] > self.threshold;
    }

    fn set_window(&mut self, src: u32, dst: u32, new: u64, now: u64) {
        let log = self.cfg.window_log;
        if let Some(p) = self.pairs.get_mut(&(src, dst)) {
            if p.window != new {
                if log {
                    self.log.push(WindowChange {
                        time_ns: now,
                        src,
                        dst,
                        old: p.window,
                        new,
                    });
                }
                p.window = new;
            }
        }
    }

    fn cut(&mut self, src: u32, dst: u32, now: u64) {
        if let Some(p) = self.pairs.get(&(src, dst)) {
            let new = ((p.window as f64 * self.cfg.decrease) as u64).max(self.max_frame);
            self.set_window(src, dst, new, now);
        }
    }

    /// Retires packet `id`. Duplicate or unknown acks are counted and ignored.
    pub fn on_ack(&mut self, id: u64, now: u64) -> Option<AckOutcome> {
        let Some(f) = self.inflight.remove(&id) else {
            self.duplicate_acks += 1;
            return None;
        };
        let p = self
            .pairs
            .get_mut(&(f.src, f.dst))
            .expect("in-flight packet has pair state");
        p.outstanding_packets -= 1;
        p.outstanding_bytes -= f.bytes as u64;
        p.last_rtt_ns = now - f.sent;
        let drained = p.outstanding_packets == 0;
        self.aggregate[f.dst as usize] -= f.bytes as u64;
        self.refresh(f.dst);
        if self.cfg.enabled && self.congested[f.dst as usize] {
            self.cut(f.src, f.dst, now);
        }
        Some(AckOutcome {
            src: f.src,
            dst: f.dst,
            rtt_ns: now - f.sent,
            drained,
        })
    }

    /// Drops the state of a pair with nothing in flight and a fully
    /// recovered window. A throttled pair keeps its window while idle.
    pub fn forget(&mut self, src: u32, dst: u32) {
        let full = self.default_window;
        if self
            .pairs
            .get(&(src, dst))
            .is_some_and(|p| p.outstanding_packets == 0 && p.window >= full)
        {
            self.pairs.remove(&(src, dst));
        }
    }

    /// Pairs sending to `dst` when it is congested, and every other tracked
    /// pair. Both empty when `dst` is not congested.
    pub fn classify(&self, dst: u32) -> (Vec<(u32, u32)>, Vec<(u32, u32)>) {
        if !self.congested[dst as usize] {
            return (Vec::new(), Vec::new());
        }
        self.pairs.keys().partition(|&&(_, d)| d != dst)
    }

    /// Periodic adjustment: cut contributors of congested destinations and
    /// ramp active pairs whose destination has drained. Returns whether
    /// anything is in flight (the tick should keep running).
    pub fn tick(&mut self, now: u64) -> bool {
        if !self.cfg.enabled {
            return false;
        }
        let low = self.threshold * 3 / 4;
        let step = self.cfg.increase_frames as u64 * self.max_frame;
        let keys: Vec<(u32, u32)> = self.pairs.keys().copied().collect();
        for (s, d) in keys {
            let agg = self.aggregate[d as usize];
            if self.congested[d as usize] {
                self.cut(s, d, now);
            } else if agg < low {
                let p = &self.pairs[&(s, d)];
                let w = p.window;
                if w < self.default_window && p.outstanding_packets > 0 {
                    self.set_window(s, d, (w + step).min(self.default_window), now);
                }
            }
        }
        let full = self.default_window;
        self.pairs
            .retain(|_, p| p.outstanding_packets > 0 || p.window < full);
        !self.inflight.is_empty()
    }
}
