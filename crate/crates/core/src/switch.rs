//! Tiled 64-port switch model: port geometry, traversal latency, input
//! buffer partitioning, and the per-output request arbiter.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::qos::{DeficitScheduler, QosConfig};
use crate::topology::SWITCH_RADIX;

pub const TILE_ROWS: usize = 4;
pub const TILE_COLS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileCoord {
    pub row: usize,
    pub col: usize,
}

impl TileCoord {
    pub fn index(self) -> usize {
        self.row * TILE_COLS + self.col
    }
}

pub fn tile_of_port(port: usize) -> Option<TileCoord> {
    if port >= SWITCH_RADIX {
        return None;
    }
    let t = port / 2;
    Some(TileCoord {
        row: t / TILE_COLS,
        col: t % TILE_COLS,
    })
}

/// Crossbar hops between two ports: the row bus alone reaches tiles in the
/// input's row, anything else also needs a column channel.
pub fn internal_hops(in_port: usize, out_port: usize) -> Option<u8> {
    let a = tile_of_port(in_port)?;
    let b = tile_of_port(out_port)?;
    Some(if a.row == b.row { 1 } else { 2 })
}

fn d_min() -> u64 {
    300
}
fn d_max() -> u64 {
    400
}
fn d_plane() -> u64 {
    50
}
fn d_buffer() -> u64 {
    256 * 1024
}
fn d_reserved() -> f64 {
    0.5
}
fn d_ack_bytes() -> u32 {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchConfig {
    #[serde(default = "d_min")]
    pub traversal_min_ns: u64,
    #[serde(default = "d_max")]
    pub traversal_max_ns: u64,
    #[serde(default = "d_plane")]
    pub request_ns: u64,
    #[serde(default = "d_plane")]
    pub grant_ns: u64,
    /// Input buffer per port, shared by all traffic classes.
    #[serde(default = "d_buffer")]
    pub input_buffer_bytes: u64,
    /// Portion of the input buffer reserved per class in proportion to
    /// `min_bw`; the rest is a shared pool.
    #[serde(default = "d_reserved")]
    pub reserved_fraction: f64,
    /// Reverse-direction bytes charged per link-level ack.
    #[serde(default = "d_ack_bytes")]
    pub ack_overhead_bytes: u32,
    #[serde(default)]
    pub trace: bool,
}

impl Default for SwitchConfig {
    fn default() -> Self {
        SwitchConfig {
            traversal_min_ns: d_min(),
            traversal_max_ns: d_max(),
            request_ns: d_plane(),
            grant_ns: d_plane(),
            input_buffer_bytes: d_buffer(),
            reserved_fraction: d_reserved(),
            ack_overhead_bytes: d_ack_bytes(),
            trace: false,
        }
    }
}

impl SwitchConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.traversal_min_ns > self.traversal_max_ns {
            return Err(ConfigError::Invalid(
                "switch.traversal_min_ns exceeds traversal_max_ns".into(),
            ));
        }
        if self.request_ns + self.grant_ns > self.traversal_min_ns {
            return Err(ConfigError::Invalid(
                "switch request and grant latency exceed the minimum traversal".into(),
            ));
        }
        if self.input_buffer_bytes < 2 * 4158 {
            return Err(ConfigError::Invalid(
                "switch.input_buffer_bytes must hold two maximum frames".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.reserved_fraction) {
            return Err(ConfigError::Invalid(
                "switch.reserved_fraction must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Port-to-port latency of one packet through an idle switch.
    pub fn traversal_latency<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        rng.gen_range(self.traversal_min_ns..=self.traversal_max_ns)
    }

    /// Crossbar data time left after the request and grant planes.
    pub fn crossbar_ns(&self, traversal: u64) -> u64 {
        traversal - self.request_ns - self.grant_ns
    }

    pub fn max_crossbar_ns(&self) -> u64 {
        self.crossbar_ns(self.traversal_max_ns)
    }
}

/// Input buffer split into per-class reservations plus a shared pool.
#[derive(Clone, Debug, PartialEq)]
pub struct BufferPool {
    reserved: Vec<u64>,
    used_reserved: Vec<u64>,
    used_shared: Vec<u64>,
    shared_cap: u64,
    shared_used: u64,
}

impl BufferPool {
    /// Each class reserves its share of `capacity * reserved_fraction`, but
    /// never less than `min_reserve` (typically two maximum frames) while
    /// that still fits.
    pub fn new(capacity: u64, reserved_fraction: f64, qos: &QosConfig, min_reserve: u64) -> Self {
        let n = qos.classes.len() as u64;
        let floor = if n > 0 && min_reserve * n <= capacity { min_reserve } else { 0 };
        let mut reserved: Vec<u64> = qos
            .classes
            .iter()
            .map(|c| ((capacity as f64 * reserved_fraction * c.min_bw).floor() as u64).max(floor))
            .collect();
        if reserved.iter().sum::<u64>() > capacity {
            let scale = capacity as f64 / reserved.iter().sum::<u64>() as f64;
            reserved.iter_mut().for_each(|r| *r = (*r as f64 * scale).floor() as u64);
        }
        let n = reserved.len();
        let shared_cap = capacity - reserved.iter().sum::<u64>();
        BufferPool {
            reserved,
            used_reserved: vec![0; n],
            used_shared: vec![0; n],
            shared_cap,
            shared_used: 0,
        }
    }

    pub fn available(&self, class: usize) -> u64 {
        self.reserved[class] - self.used_reserved[class] + (self.shared_cap - self.shared_used)
    }

    pub fn used(&self, class: usize) -> u64 {
        self.used_reserved[class] + self.used_shared[class]
    }

    pub fn total_used(&self) -> u64 {
        self.used_reserved.iter().sum::<u64>() + self.shared_used
    }

    pub fn can_admit(&self, class: usize, bytes: u64) -> bool {
        self.available(class) >= bytes
    }

    /// Takes reserved space first. Returns false (and changes nothing) when
    /// the class cannot fit `bytes`.
    pub fn admit(&mut self, class: usize, bytes: u64) -> bool {
        if !self.can_admit(class, bytes) {
            return false;
        }
        let from_res = bytes.min(self.reserved[class] - self.used_reserved[class]);
        self.used_reserved[class] += from_res;
        let rest = bytes - from_res;
        self.used_shared[class] += rest;
        self.shared_used += rest;
        true
    }

    /// Returns shared space first.
    pub fn release(&mut self, class: usize, bytes: u64) {
        let from_shared = bytes.min(self.used_shared[class]);
        self.used_shared[class] -= from_shared;
        self.shared_used -= from_shared;
        let rest = bytes - from_shared;
        assert!(
            rest <= self.used_reserved[class],
            "buffer release exceeds occupancy"
        );
        self.used_reserved[class] -= rest;
    }
}

/// Round-robin pointer over a 64-bit request mask.
#[derive(Clone, Copy, Debug, Default)]
pub struct RoundRobin {
    next: u32,
}

impl RoundRobin {
    /// Lowest set bit at or after the pointer (wrapping); advances past it.
    pub fn pick(&mut self, mask: u64) -> Option<usize> {
        if mask == 0 {
            return None;
        }
        let rotated = mask.rotate_right(self.next);
        let chosen = (rotated.trailing_zeros() + self.next) % 64;
        self.next = (chosen + 1) % 64;
        Some(chosen as usize)
    }
}

/// Per-output arbitration state: one request mask and round-robin pointer
/// per class, and the class scheduler.
#[derive(Clone, Debug)]
pub struct OutputArbiter {
    pub requests: Vec<u64>,
    rr: Vec<RoundRobin>,
    pub sched: DeficitScheduler,
}

impl OutputArbiter {
    pub fn new(qos: &QosConfig, link_gbps: f64, epoch_ns: u64, burst: f64) -> Self {
        let n = qos.classes.len();
        OutputArbiter {
            requests: vec![0; n],
            rr: vec![RoundRobin::default(); n],
            sched: DeficitScheduler::new(qos, link_gbps, epoch_ns, burst),
        }
    }

    pub fn has_requests(&self) -> bool {
        self.requests.iter().any(|&m| m != 0)
    }

    pub fn backlogged(&self) -> Vec<bool> {
        self.requests.iter().map(|&m| m != 0).collect()
    }

    /// Grants one (class, input) among the requesting inputs; `eligible`
    /// says which classes may send now (downstream credit, caps).
    pub fn grant(&mut self, qos: &QosConfig, now: u64, eligible: &[bool]) -> Option<(usize, usize)> {
        let backlogged = self.backlogged();
        let ok: Vec<bool> = backlogged
            .iter()
            .zip(eligible)
            .map(|(&b, &e)| b && e)
            .collect();
        let class = self.sched.pick(qos, now, &backlogged, &ok)?;
        let input = self.rr[class].pick(self.requests[class])?;
        Some((class, input))
    }

    /// Like [`OutputArbiter::grant`], restricted to the inputs in `fit[class]`
    /// (those holding a packet the next hop can take).
    pub fn grant_from(&mut self, qos: &QosConfig, now: u64, fit: &[u64]) -> Option<(usize, usize)> {
        let backlogged = self.backlogged();
        let ok: Vec<bool> = fit.iter().map(|&m| m != 0).collect();
        let class = self.sched.pick(qos, now, &backlogged, &ok)?;
        let input = self.rr[class].pick(fit[class])?;
        Some((class, input))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qos::TrafficClassSpec;
    use rand::SeedableRng;

    #[test]
    fn tile_mapping() {
        assert_eq!(tile_of_port(0), Some(TileCoord { row: 0, col: 0 }));
        assert_eq!(tile_of_port(19), Some(TileCoord { row: 1, col: 1 }));
        assert_eq!(tile_of_port(19).unwrap().index(), 9);
        assert_eq!(tile_of_port(63), Some(TileCoord { row: 3, col: 7 }));
        assert_eq!(tile_of_port(64), None);
    }

    #[test]
    fn crossbar_hops() {
        assert_eq!(internal_hops(4, 5), Some(1));
        assert_eq!(internal_hops(19, 56), Some(2));
        assert_eq!(internal_hops(16, 31), Some(1));
        for a in 0..64 {
            for b in 0..64 {
                assert!(internal_hops(a, b).unwrap() <= 2);
            }
        }
    }

    #[test]
    fn traversal_distribution() {
        let cfg = SwitchConfig::default();
        let mut rng = rand::rngs::SmallRng::seed_from_u64(3);
        let n = 100_000;
        let mut sum = 0u64;
        for _ in 0..n {
            let x = cfg.traversal_latency(&mut rng);
            assert!((300..=400).contains(&x));
            sum += x;
        }
        let mean = sum as f64 / n as f64;
        assert!((mean - 350.0).abs() <= 2.0, "{mean}");
        let fixed = SwitchConfig {
            traversal_min_ns: 350,
            traversal_max_ns: 350,
            ..SwitchConfig::default()
        };
        assert_eq!(fixed.traversal_latency(&mut rng), 350);
    }

    #[test]
    fn round_robin_fairness() {
        let mut rr = RoundRobin::default();
        let mask: u64 = 0xFFFF << 8;
        let mut counts = [0u32; 64];
        for _ in 0..160 {
            counts[rr.pick(mask).unwrap()] += 1;
        }
        for i in 8..24 {
            assert!((9..=11).contains(&counts[i]), "{:?}", counts);
        }
        assert_eq!(rr.pick(0), None);
        let mut single = RoundRobin::default();
        assert_eq!(single.pick(1 << 40), Some(40));
        assert_eq!(single.pick(1 << 40), Some(40));
    }

    #[test]
    fn strict_priority_in_arbiter() {
        let mut lo = TrafficClassSpec::new(0, 0.5);
        lo.priority = 0;
        let mut hi = TrafficClassSpec::new(1, 0.5);
        hi.priority = 7;
        let qos = QosConfig {
            classes: vec![lo, hi],
            default_class: 0,
        };
        let mut arb = OutputArbiter::new(&qos, 200.0, 10_000, 8316.0);
        arb.requests[0] = 0b1111;
        arb.requests[1] = 0b10000;
        // equal credit: the higher-priority class is served in the slot
        arb.sched.charge(0, 1, &[true, true]);
        arb.sched.charge(1, 1, &[true, true]);
        let (class, input) = arb.grant(&qos, 0, &[true, true]).unwrap();
        assert_eq!((class, input), (1, 4));
    }

    #[test]
    fn buffer_pool_partitioning() {
        let mut a = TrafficClassSpec::new(1, 0.8);
        a.dscp = vec![1];
        let b = TrafficClassSpec::new(2, 0.1);
        let qos = QosConfig {
            classes: vec![a, b],
            default_class: 2,
        };
        let mut pool = BufferPool::new(1000, 0.5, &qos, 0);
        assert_eq!(pool.available(0), 400 + 550);
        assert_eq!(pool.available(1), 50 + 550);
        assert!(pool.admit(1, 600));
        assert_eq!(pool.available(0), 400);
        assert!(!pool.admit(0, 401));
        assert!(pool.admit(0, 400));
        pool.release(1, 600);
        pool.release(0, 400);
        assert_eq!(pool.total_used(), 0);
        assert_eq!(pool.available(1), 600);
    }
}
