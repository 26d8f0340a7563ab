//! Traffic classes: DSCP classification, min/max bandwidth shares, and the
//! per-link deficit scheduler that realizes them.

use serde::{Deserialize, Serialize};

use crate::error::QosError;

fn default_max_bw() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficClassSpec {
    pub id: u8,
    #[serde(default, alias = "dscp_values")]
    pub dscp: Vec<u8>,
    /// Larger values are served first.
    #[serde(default)]
    pub priority: i32,
    #[serde(default)]
    pub min_bw: f64,
    #[serde(default = "default_max_bw")]
    pub max_bw: f64,
    #[serde(default)]
    pub ordered: bool,
    #[serde(default = "default_true")]
    pub lossless: bool,
    /// Per-extra-hop penalty replacing `routing.bias` for this class.
    #[serde(default)]
    pub routing_bias: Option<f64>,
}

impl TrafficClassSpec {
    pub fn new(id: u8, min_bw: f64) -> Self {
        TrafficClassSpec {
            id,
            dscp: Vec::new(),
            priority: 0,
            min_bw,
            max_bw: 1.0,
            ordered: false,
            lossless: true,
            routing_bias: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QosConfig {
    pub classes: Vec<TrafficClassSpec>,
    #[serde(default)]
    pub default_class: u8,
}

impl Default for QosConfig {
    fn default() -> Self {
        QosConfig {
            classes: vec![TrafficClassSpec::new(0, 0.0)],
            default_class: 0,
        }
    }
}

impl QosConfig {
    pub fn validate(&self) -> Result<(), QosError> {
        let mut owner: [Option<u8>; 64] = [None; 64];
        let mut total_min = 0.0;
        for (i, c) in self.classes.iter().enumerate() {
            if self.classes[..i].iter().any(|o| o.id == c.id) {
                return Err(QosError::InvalidClass {
                    class: c.id,
                    msg: "duplicate class id".into(),
                });
            }
            for (name, v) in [("min_bw", c.min_bw), ("max_bw", c.max_bw)] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(QosError::InvalidClass {
                        class: c.id,
                        msg: format!("{name} must lie in [0, 1]"),
                    });
                }
            }
            if c.max_bw <= 0.0 {
                return Err(QosError::InvalidClass {
                    class: c.id,
                    msg: "max_bw must be positive".into(),
                });
            }
            if c.min_bw > c.max_bw {
                return Err(QosError::MinExceedsMax {
                    class: c.id,
                    min: c.min_bw,
                    max: c.max_bw,
                });
            }
            if let Some(b) = c.routing_bias {
                if !(b.is_finite() && b >= 0.0) {
                    return Err(QosError::InvalidClass {
                        class: c.id,
                        msg: "routing_bias must be non-negative".into(),
                    });
                }
            }
            for &d in &c.dscp {
                if d > 63 {
                    return Err(QosError::InvalidClass {
                        class: c.id,
                        msg: format!("dscp {d} out of range"),
                    });
                }
                if let Some(first) = owner[d as usize] {
                    return Err(QosError::OverlappingDscp {
                        dscp: d,
                        first,
                        second: c.id,
                    });
                }
                owner[d as usize] = Some(c.id);
            }
            total_min += c.min_bw;
        }
        if total_min > 1.0 + 1e-9 {
            return Err(QosError::OverSubscribedMin(total_min));
        }
        if !self.classes.iter().any(|c| c.id == self.default_class) {
            return Err(QosError::UnknownDefault(self.default_class));
        }
        Ok(())
    }

    /// Position of class `id` in `classes`.
    pub fn index_of(&self, id: u8) -> Option<usize> {
        self.classes.iter().position(|c| c.id == id)
    }

    /// Class id for a DSCP value; unmapped values go to the default class.
    pub fn classify(&self, dscp: u8) -> u8 {
        self.classes
            .iter()
            .find(|c| c.dscp.contains(&dscp))
            .map_or(self.default_class, |c| c.id)
    }

    /// DSCP value that maps to class `id` (the first listed, else one that no
    /// class claims when `id` is the default).
    pub fn dscp_for(&self, id: u8) -> Option<u8> {
        let c = &self.classes[self.index_of(id)?];
        if let Some(&d) = c.dscp.first() {
            return Some(d);
        }
        (0..64u8).find(|&d| self.classify(d) == id)
    }

    /// Bandwidth fractions for the backlogged classes (indexed like `classes`).
    ///
    /// Backlogged classes first receive their minimum; whatever is left goes
    /// to the backlogged class holding the smallest share (lower id on ties)
    /// until it reaches its maximum, then to the next.
    pub fn allocate_shares(&self, backlogged: &[bool]) -> Vec<f64> {
        let n = self.classes.len();
        let mut share = vec![0.0; n];
        let mut remaining = 1.0;
        for i in 0..n {
            if backlogged.get(i).copied().unwrap_or(false) {
                share[i] = self.classes[i].min_bw;
                remaining -= share[i];
            }
        }
        let mut open: Vec<usize> = (0..n)
            .filter(|&i| backlogged.get(i).copied().unwrap_or(false))
            .collect();
        while remaining > 1e-12 && !open.is_empty() {
            let pick = *open
                .iter()
                .min_by(|&&x, &&y| {
                    share[x]
                        .total_cmp(&share[y])
                        .then(self.classes[x].id.cmp(&self.classes[y].id))
                })
                .unwrap();
            let room = self.classes[pick].max_bw - share[pick];
            let give = room.min(remaining).max(0.0);
            share[pick] += give;
            remaining -= give;
            open.retain(|&i| i != pick);
        }
        share
    }
}

/// Per-link class scheduler.
///
/// Backlogged classes accrue credit in proportion to their share of every
/// byte the link sends; the sender is debited the bytes it sent. Among
/// classes holding non-negative credit (a class returning from idle holds
/// zero) the highest priority wins; if none holds
/// credit the richest class sends, so the link never idles for lack of
/// credit. A token bucket per class enforces `max_bw` and takes precedence
/// over work conservation.
#[derive(Clone, Debug)]
pub struct DeficitScheduler {
    priority: Vec<i32>,
    ids: Vec<u8>,
    max_bw: Vec<f64>,
    shares: Vec<f64>,
    credit: Vec<f64>,
    tokens: Vec<f64>,
    last_refill: u64,
    bytes_per_ns: f64,
    burst: f64,
    seen: Vec<bool>,
    epoch_ns: u64,
    epoch_end: u64,
}

impl DeficitScheduler {
    /// `burst` is the token-bucket depth in bytes (one or two max frames).
    pub fn new(cfg: &QosConfig, link_gbps: f64, epoch_ns: u64, burst: f64) -> Self {
        let n = cfg.classes.len();
        let all = vec![true; n];
        DeficitScheduler {
            priority: cfg.classes.iter().map(|c| c.priority).collect(),
            ids: cfg.classes.iter().map(|c| c.id).collect(),
            max_bw: cfg.classes.iter().map(|c| c.max_bw).collect(),
            shares: cfg.allocate_shares(&all),
            credit: vec![0.0; n],
            tokens: vec![burst; n],
            last_refill: 0,
            bytes_per_ns: link_gbps / 8.0,
            burst,
            seen: vec![false; n],
            epoch_ns: epoch_ns.max(1),
            epoch_end: epoch_ns.max(1),
        }
    }

    pub fn shares(&self) -> &[f64] {
        &self.shares
    }

    fn refill(&mut self, now: u64) {
        if now > self.last_refill {
            let dt = (now - self.last_refill) as f64 * self.bytes_per_ns;
            for (t, m) in self.tokens.iter_mut().zip(&self.max_bw) {
                *t = (*t + dt * m).min(self.burst);
            }
            self.last_refill = now;
        }
    }

    fn roll_epoch(&mut self, cfg: &QosConfig, now: u64, backlogged: &[bool]) {
        if now < self.epoch_end {
            for (s, &b) in self.seen.iter_mut().zip(backlogged) {
                *s |= b;
            }
            return;
        }
        let active: Vec<bool> = self
            .seen
            .iter()
            .zip(backlogged)
            .map(|(&s, &b)| s || b)
            .collect();
        self.shares = cfg.allocate_shares(&active);
        self.seen.copy_from_slice(backlogged);
        let skipped = (now - self.epoch_end) / self.epoch_ns + 1;
        self.epoch_end += skipped * self.epoch_ns;
    }

    /// Class to serve next among `eligible` (has a sendable packet), or None.
    /// `backlogged` marks classes with queued packets whether sendable or not.
    pub fn pick(
        &mut self,
        cfg: &QosConfig,
        now: u64,
        backlogged: &[bool],
        eligible: &[bool],
    ) -> Option<usize> {
        self.roll_epoch(cfg, now, backlogged);
        self.refill(now);
        for (i, &b) in backlogged.iter().enumerate() {
            if !b {
                self.credit[i] = 0.0;
            }
        }
        let capped_ok = |s: &Self, i: usize| s.max_bw[i] >= 1.0 || s.tokens[i] > 0.0;
        let cands = (0..eligible.len()).filter(|&i| eligible[i] && capped_ok(self, i));
        let positive = cands
            .clone()
            .filter(|&i| self.credit[i] >= 0.0)
            .max_by(|&x, &y| {
                self.priority[x]
                    .cmp(&self.priority[y])
                    .then(self.credit[x].total_cmp(&self.credit[y]))
                    .then(self.ids[y].cmp(&self.ids[x]))
            });
        positive.or_else(|| {
            cands.max_by(|&x, &y| {
                self.credit[x]
                    .total_cmp(&self.credit[y])
                    .then(self.priority[x].cmp(&self.priority[y]))
                    .then(self.ids[y].cmp(&self.ids[x]))
            })
        })
    }

    /// Earliest time a capped class regains tokens, when every eligible class
    /// is held back by its cap.
    pub fn next_token_time(&self, eligible: &[bool]) -> Option<u64> {
        (0..eligible.len())
            .filter(|&i| eligible[i] && self.max_bw[i] < 1.0)
            .map(|i| {
                let deficit = (-self.tokens[i]).max(0.0) + 1e-6;
                let rate = self.bytes_per_ns * self.max_bw[i];
                self.last_refill + (deficit / rate).ceil() as u64
            })
            .min()
    }

    /// Charge `bytes` sent by `class` at `now`.
    pub fn charge(&mut self, class: usize, bytes: u64, backlogged: &[bool]) {
        let b = bytes as f64;
        let active: f64 = (0..self.shares.len())
            .filter(|&i| backlogged[i] || i == class)
            .map(|i| self.shares[i])
            .sum();
        if active > 0.0 {
            for i in 0..self.shares.len() {
                if backlogged[i] || i == class {
                    self.credit[i] += b * self.shares[i] / active;
                }
            }
        }
        self.credit[class] -= b;
        // bound the history a class can bank
        let cap = 4.0 * self.burst;
        for c in &mut self.credit {
            *c = c.clamp(-cap, cap);
        }
        self.tokens[class] -= b;
    }
}
