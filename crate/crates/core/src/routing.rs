//! Source-adaptive path selection: sample minimal and non-minimal candidates,
//! score each by queued bytes along its first two hops, and bias the choice
//! toward minimal paths.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::topology::{Path, PathClass, Topology, SWITCH_RADIX};

fn d_bias() -> f64 {
    4158.0
}
fn d_max_age() -> u64 {
    1000
}
fn d_two() -> usize {
    2
}
fn d_true() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateCounts {
    #[serde(default = "d_two")]
    pub minimal: usize,
    #[serde(default = "d_two")]
    pub nonminimal: usize,
}

impl Default for CandidateCounts {
    fn default() -> Self {
        CandidateCounts {
            minimal: 2,
            nonminimal: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingConfig {
    /// Penalty in bytes per hop a candidate adds over the minimal length.
    #[serde(default = "d_bias")]
    pub bias: f64,
    #[serde(default)]
    pub candidates: CandidateCounts,
    #[serde(default = "d_true", with = "on_off")]
    pub adaptive: bool,
    /// Neighbor depth reports older than this are treated as empty queues.
    #[serde(default = "d_max_age")]
    pub depth_max_age_ns: u64,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        RoutingConfig {
            bias: d_bias(),
            candidates: CandidateCounts::default(),
            adaptive: true,
            depth_max_age_ns: d_max_age(),
        }
    }
}

/// Accepts `on`/`off` strings as well as booleans.
pub(crate) mod on_off {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(if *v { "on" } else { "off" })
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            B(bool),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::B(b) => Ok(b),
            Raw::S(s) => match s.as_str() {
                "on" | "true" => Ok(true),
                "off" | "false" => Ok(false),
                other => Err(de::Error::custom(format!("expected on or off, got `{other}`"))),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathCandidate {
    pub path: Path,
    /// Queued bytes seen on the first two hops, scaled by the path's hop
    /// count so a detour pays for every link it occupies.
    pub congestion: f64,
}

/// Depths a neighbor advertised, stamped with the time they were measured.
#[derive(Clone, Debug, PartialEq)]
pub struct RemoteInfo {
    pub timestamp: u64,
    pub depths: Vec<u64>,
}

/// Per-switch view of output queue depths, kept per traffic class since
/// each class has its own virtual queues and bandwidth guarantee.
#[derive(Clone, Debug, PartialEq)]
pub struct CongestionTable {
    classes: usize,
    /// Bytes queued toward each local output port, indexed by
    /// `port * classes + class`.
    pub local: Vec<u64>,
    /// Per local port, the depths advertised by the switch on the other end,
    /// laid out like `local`.
    pub remote: Vec<Option<RemoteInfo>>,
    max_age_ns: u64,
    /// Reverse-direction bytes spent carrying depth information.
    pub overhead_bytes: u64,
}

impl Default for CongestionTable {
    fn default() -> Self {
        Self::new(1)
    }
}

impl CongestionTable {
    pub fn new(classes: usize) -> Self {
        let classes = classes.max(1);
        CongestionTable {
            classes,
            local: vec![0; SWITCH_RADIX * classes],
            remote: vec![None; SWITCH_RADIX],
            max_age_ns: u64::MAX,
            overhead_bytes: 0,
        }
    }

    pub fn with_max_age(mut self, ns: u64) -> Self {
        self.max_age_ns = ns;
        self
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn add(&mut self, port: usize, class: usize, bytes: u64) {
        self.local[port * self.classes + class] += bytes;
    }

    pub fn remove(&mut self, port: usize, class: usize, bytes: u64) {
        self.local[port * self.classes + class] -= bytes;
    }

    pub fn local_depth(&self, port: usize, class: usize) -> u64 {
        self.local[port * self.classes + class]
    }

    /// Bytes queued toward `port` across all classes.
    pub fn port_depth(&self, port: usize) -> u64 {
        self.local[port * self.classes..(port + 1) * self.classes].iter().sum()
    }

    /// Applies ack-borne depths from the neighbor on `port`; older
    /// information than what is held is ignored. Returns whether it applied.
    pub fn on_ack_info(&mut self, port: usize, timestamp: u64, depths: &[u64], overhead: u32) -> bool {
        self.overhead_bytes += overhead as u64;
        match &mut self.remote[port] {
            Some(r) if r.timestamp > timestamp => false,
            Some(r) => {
                r.timestamp = timestamp;
                r.depths.clear();
                r.depths.extend_from_slice(depths);
                true
            }
            slot => {
                *slot = Some(RemoteInfo {
                    timestamp,
                    depths: depths.to_vec(),
                });
                true
            }
        }
    }

    pub fn remote_depth(&self, port: usize, remote_port: usize, class: usize) -> u64 {
        self.remote_depth_at(port, remote_port, class, 0)
    }

    /// Advertised depth as known at `now`; expired reports count as empty.
    pub fn remote_depth_at(&self, port: usize, remote_port: usize, class: usize, now: u64) -> u64 {
        self.remote[port]
            .as_ref()
            .filter(|r| now.saturating_sub(r.timestamp) <= self.max_age_ns)
            .and_then(|r| r.depths.get(remote_port * self.classes + class).copied())
            .unwrap_or(0)
    }

    /// Congestion estimate for `path` as seen from its source switch by a
    /// packet of `class` at time `now`.
    pub fn path_congestion(&self, topo: &Topology, path: &Path, class: usize, now: u64) -> u64 {
        let Some(&l0) = path.links.first() else {
            return 0;
        };
        let src = path.switches[0];
        let p0 = topo.port_on(src, l0).expect("path link leaves the source");
        let mut c = self.local_depth(p0, class);
        if let Some(&l1) = path.links.get(1) {
            let p1 = topo
                .port_on(path.switches[1], l1)
                .expect("path link leaves the second switch");
            c += self.remote_depth_at(p0, p1, class, now);
        }
        c
    }
}

pub fn score(c: &PathCandidate, bias: f64) -> f64 {
    match c.path.class {
        PathClass::Minimal => c.congestion,
        PathClass::Nonminimal => c.congestion + bias,
    }
}

/// Index of the best candidate: lowest score, then minimal before
/// non-minimal, then the lexicographically smallest switch sequence.
/// `bias_per_hop` is scaled by how many hops a candidate adds over
/// `minimal_hops`.
pub fn select(cands: &[PathCandidate], bias_per_hop: f64, minimal_hops: usize) -> usize {
    assert!(!cands.is_empty(), "select needs at least one candidate");
    let key = |c: &PathCandidate| {
        let extra = c.path.hops().saturating_sub(minimal_hops).max(1) as f64;
        score(c, bias_per_hop * extra)
    };
    (0..cands.len())
        .min_by(|&x, &y| {
            let (a, b) = (&cands[x], &cands[y]);
            key(a)
                .total_cmp(&key(b))
                .then(a.path.class.cmp(&b.path.class))
                .then(a.path.switches.cmp(&b.path.switches))
                .then(a.path.links.cmp(&b.path.links))
        })
        .unwrap()
}

fn weighted(table: &CongestionTable, topo: &Topology, path: Path, class: usize, now: u64) -> PathCandidate {
    let depth = table.path_congestion(topo, &path, class, now) as f64;
    PathCandidate {
        congestion: depth * path.hops().max(1) as f64,
        path,
    }
}

/// Up to `counts.minimal` sampled minimal paths followed by up to
/// `counts.nonminimal` sampled detours, scored against `table`.
pub fn candidates<R: Rng + ?Sized>(
    topo: &Topology,
    table: &CongestionTable,
    class: usize,
    now: u64,
    minimal: &[Path],
    dst_switch: usize,
    counts: CandidateCounts,
    rng: &mut R,
) -> Vec<PathCandidate> {
    let src = minimal[0].source();
    let mut out = Vec::with_capacity(counts.minimal + counts.nonminimal);
    let take = counts.minimal.min(minimal.len()).max(1);
    for i in index::sample(rng, minimal.len(), take) {
        out.push(weighted(table, topo, minimal[i].clone(), class, now));
    }
    if src != dst_switch {
        for path in topo.nonminimal_switch_paths(src, dst_switch, counts.nonminimal, rng) {
            out.push(weighted(table, topo, path, class, now));
        }
    }
    out
}

/// Deterministic minimal path for ordered traffic.
pub fn flow_path(minimal: &[Path], flow_hash: u64) -> &Path {
    &minimal[(flow_hash % minimal.len() as u64) as usize]
}
