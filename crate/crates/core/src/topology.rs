//! Dragonfly construction, path enumeration, and analytic bandwidth bounds.
//!
//! Groups are fully connected sets of switches; every pair of groups is
//! joined by the same number of global links. Ports are assigned lowest
//! free first: endpoints, then intra-group links, then global links, with
//! global links dealt round-robin over the switches of each group.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::engine::{Attach, Link, LinkKind};
use crate::error::TopologyError;

/// Ports per switch.
pub const SWITCH_RADIX: usize = 64;

/// Node-to-switch copper cable.
pub const DEFAULT_ENDPOINT_DELAY_NS: u64 = 10;
/// Intra-group copper cable. The calibrated switch traversal distribution is
/// a switch-to-switch measurement, so it already spans this cable.
pub const DEFAULT_INTRA_DELAY_NS: u64 = 0;
pub const DEFAULT_OPTICAL_DELAY_NS: u64 = 250;

fn default_endpoints_per_switch() -> usize {
    16
}
fn default_one() -> usize {
    1
}
fn default_bandwidth() -> f64 {
    200.0
}
fn default_taper() -> f64 {
    1.0
}
fn default_endpoint_delay() -> u64 {
    DEFAULT_ENDPOINT_DELAY_NS
}
fn default_intra_delay() -> u64 {
    DEFAULT_INTRA_DELAY_NS
}
fn default_optical() -> u64 {
    DEFAULT_OPTICAL_DELAY_NS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DragonflyParams {
    #[serde(alias = "groups")]
    pub num_groups: usize,
    pub switches_per_group: usize,
    #[serde(default = "default_endpoints_per_switch")]
    pub endpoints_per_switch: usize,
    #[serde(default = "default_one")]
    pub intra_links_per_pair: usize,
    #[serde(default = "default_one")]
    pub global_links_per_group_pair: usize,
    #[serde(default = "default_bandwidth", alias = "link_bandwidth_gbps")]
    pub link_bandwidth: f64,
    /// Fraction of `link_bandwidth` provisioned on global links.
    #[serde(default = "default_taper")]
    pub global_bandwidth_taper: f64,
    #[serde(default = "default_endpoint_delay")]
    pub endpoint_delay_ns: u64,
    #[serde(default = "default_intra_delay")]
    pub intra_delay_ns: u64,
    #[serde(default = "default_optical")]
    pub optical_delay_ns: u64,
}

impl DragonflyParams {
    pub fn new(
        num_groups: usize,
        switches_per_group: usize,
        endpoints_per_switch: usize,
        intra_links_per_pair: usize,
        global_links_per_group_pair: usize,
    ) -> Self {
        DragonflyParams {
            num_groups,
            switches_per_group,
            endpoints_per_switch,
            intra_links_per_pair,
            global_links_per_group_pair,
            link_bandwidth: default_bandwidth(),
            global_bandwidth_taper: default_taper(),
            endpoint_delay_ns: DEFAULT_ENDPOINT_DELAY_NS,
            intra_delay_ns: DEFAULT_INTRA_DELAY_NS,
            optical_delay_ns: DEFAULT_OPTICAL_DELAY_NS,
        }
    }

    pub fn num_switches(&self) -> usize {
        self.num_groups * self.switches_per_group
    }

    pub fn num_endpoints(&self) -> usize {
        self.num_switches() * self.endpoints_per_switch
    }

    pub fn global_bandwidth(&self) -> f64 {
        self.link_bandwidth * self.global_bandwidth_taper
    }

    /// Most global ports any switch receives under round-robin assignment.
    pub fn max_global_ports(&self) -> usize {
        let per_group = (self.num_groups.saturating_sub(1)) * self.global_links_per_group_pair;
        per_group.div_ceil(self.switches_per_group.max(1))
    }

    /// Port usage of the busiest switch.
    pub fn ports_needed(&self) -> usize {
        self.endpoints_per_switch
            + (self.switches_per_group.saturating_sub(1)) * self.intra_links_per_pair
            + self.max_global_ports()
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        let bad = |m: &str| Err(TopologyError::InvalidParams(m.to_string()));
        if self.num_groups == 0 {
            return bad("num_groups must be at least 1");
        }
        if self.switches_per_group == 0 {
            return bad("switches_per_group must be at least 1");
        }
        if self.endpoints_per_switch == 0 {
            return bad("endpoints_per_switch must be at least 1");
        }
        if self.switches_per_group > 1 && self.intra_links_per_pair == 0 {
            return bad("intra_links_per_pair must be at least 1");
        }
        if !(self.link_bandwidth.is_finite() && self.link_bandwidth > 0.0) {
            return bad("link_bandwidth must be positive");
        }
        if !(self.global_bandwidth_taper > 0.0 && self.global_bandwidth_taper <= 1.0) {
            return bad("global_bandwidth_taper must lie in (0, 1]");
        }
        if self.num_groups > 1 && self.global_links_per_group_pair == 0 {
            return Err(TopologyError::AsymmetricGlobal(
                "groups cannot be connected with zero global links per pair".into(),
            ));
        }
        let needed = self.ports_needed();
        if needed > SWITCH_RADIX {
            // round-robin hands the extra global port to the lowest switches first
            return Err(TopologyError::PortBudgetExceeded {
                switch: 0,
                needed,
                radix: SWITCH_RADIX,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchInfo {
    pub group: usize,
    pub index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointInfo {
    pub switch: usize,
    pub port: usize,
    pub link: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathClass {
    Minimal,
    Nonminimal,
}

/// Switch sequence from the source switch to the destination switch, with
/// the link taken on each hop (parallel links are distinct paths).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Path {
    pub switches: SmallVec<[usize; 6]>,
    pub links: SmallVec<[usize; 5]>,
    pub class: PathClass,
}

impl Path {
    pub fn local(switch: usize) -> Self {
        Path {
            switches: SmallVec::from_slice(&[switch]),
            links: SmallVec::new(),
            class: PathClass::Minimal,
        }
    }

    /// Switch-to-switch hops.
    pub fn hops(&self) -> usize {
        self.links.len()
    }

    pub fn source(&self) -> usize {
        self.switches[0]
    }

    pub fn destination(&self) -> usize {
        *self.switches.last().expect("path has a source switch")
    }
}

/// Maximum-scale construction for a given radix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct MaxSystem {
    pub switches_per_group: usize,
    pub global_ports_per_switch: usize,
    pub groups: usize,
    pub endpoints: usize,
}

/// Largest full-global-bandwidth Dragonfly built from `radix`-port switches.
///
/// Groups hold `2 * endpoints_per_switch` fully connected switches (reduced
/// only when the radix leaves no global port); every remaining port is global,
/// and one global link per group pair gives `a * h + 1` groups.
pub fn max_system(
    radix: usize,
    endpoints_per_switch: usize,
    addressing_limit: Option<usize>,
) -> Result<MaxSystem, TopologyError> {
    if endpoints_per_switch == 0 || radix <= endpoints_per_switch {
        return Err(TopologyError::InvalidParams(format!(
            "radix {radix} must exceed endpoints per switch {endpoints_per_switch}"
        )));
    }
    let mut a = 2 * endpoints_per_switch;
    while a > 1 && endpoints_per_switch + (a - 1) >= radix {
        a -= 1;
    }
    let h = radix - endpoints_per_switch - (a - 1);
    let mut groups = a * h + 1;
    if let Some(limit) = addressing_limit {
        groups = groups.min(limit);
    }
    Ok(MaxSystem {
        switches_per_group: a,
        global_ports_per_switch: h,
        groups,
        endpoints: groups * a * endpoints_per_switch,
    })
}

#[derive(Clone, Debug)]
pub struct Topology {
    pub params: DragonflyParams,
    pub switches: Vec<SwitchInfo>,
    pub endpoints: Vec<EndpointInfo>,
    pub links: Vec<Link>,
    /// Per switch, port -> link id.
    pub port_map: Vec<Vec<Option<usize>>>,
    /// Per switch, (neighbor switch, link id) over switch-to-switch links.
    neighbors: Vec<Vec<(usize, usize)>>,
    intra: Vec<Vec<usize>>,
    global: Vec<Vec<usize>>,
}

impl PartialEq for Topology {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
            && self.switches == other.switches
            && self.endpoints == other.endpoints
            && self.links == other.links
            && self.port_map == other.port_map
    }
}

pub fn build_dragonfly(params: &DragonflyParams) -> Result<Topology, TopologyError> {
    params.validate()?;
    let p = params;
    let a = p.switches_per_group;
    let num_sw = p.num_switches();
    let mut b = Builder::new(p.clone(), num_sw);

    for sw in 0..num_sw {
        for k in 0..p.endpoints_per_switch {
            let ep = sw * p.endpoints_per_switch + k;
            b.add_endpoint(ep, sw)?;
        }
    }
    for g in 0..p.num_groups {
        for i in 0..a {
            for j in (i + 1)..a {
                for _ in 0..p.intra_links_per_pair {
                    b.add_switch_link(LinkKind::Intra, g * a + i, g * a + j)?;
                }
            }
        }
    }
    let mut rr = vec![0usize; p.num_groups];
    for g in 0..p.num_groups {
        for h in (g + 1)..p.num_groups {
            for _ in 0..p.global_links_per_group_pair {
                let si = g * a + rr[g] % a;
                rr[g] += 1;
                let sj = h * a + rr[h] % a;
                rr[h] += 1;
                b.add_switch_link(LinkKind::Global, si, sj)?;
            }
        }
    }
    Ok(b.finish())
}

struct Builder {
    params: DragonflyParams,
    endpoints: Vec<Option<EndpointInfo>>,
    links: Vec<Link>,
    port_map: Vec<Vec<Option<usize>>>,
}

impl Builder {
    fn new(params: DragonflyParams, num_sw: usize) -> Self {
        let n_ep = params.num_endpoints();
        Builder {
            params,
            endpoints: vec![None; n_ep],
            links: Vec::new(),
            port_map: vec![vec![None; SWITCH_RADIX]; num_sw],
        }
    }

    fn free_port(&self, sw: usize) -> Result<usize, TopologyError> {
        self.port_map[sw]
            .iter()
            .position(Option::is_none)
            .ok_or(TopologyError::PortBudgetExceeded {
                switch: sw,
                needed: SWITCH_RADIX + 1,
                radix: SWITCH_RADIX,
            })
    }

    fn delay(&self, kind: LinkKind) -> u64 {
        match kind {
            LinkKind::Global => self.params.optical_delay_ns,
            LinkKind::Intra => self.params.intra_delay_ns,
            LinkKind::Endpoint => self.params.endpoint_delay_ns,
        }
    }

    fn bandwidth(&self, kind: LinkKind) -> f64 {
        match kind {
            LinkKind::Global => self.params.global_bandwidth(),
            _ => self.params.link_bandwidth,
        }
    }

    fn add_endpoint(&mut self, ep: usize, sw: usize) -> Result<(), TopologyError> {
        let port = self.free_port(sw)?;
        self.push_endpoint(ep, sw, port, None, None)
    }

    fn push_endpoint(
        &mut self,
        ep: usize,
        sw: usize,
        port: usize,
        bw: Option<f64>,
        delay: Option<u64>,
    ) -> Result<(), TopologyError> {
        let id = self.links.len();
        self.links.push(Link {
            id,
            kind: LinkKind::Endpoint,
            a: Attach::Nic { endpoint: ep },
            b: Attach::Switch { switch: sw, port },
            bandwidth_gbps: bw.unwrap_or_else(|| self.bandwidth(LinkKind::Endpoint)),
            propagation_ns: delay.unwrap_or_else(|| self.delay(LinkKind::Endpoint)),
        });
        self.port_map[sw][port] = Some(id);
        self.endpoints[ep] = Some(EndpointInfo {
            switch: sw,
            port,
            link: id,
        });
        Ok(())
    }

    fn add_switch_link(&mut self, kind: LinkKind, s: usize, t: usize) -> Result<(), TopologyError> {
        let ps = self.free_port(s)?;
        self.port_map[s][ps] = Some(usize::MAX);
        let pt = self.free_port(t)?;
        self.push_switch_link(kind, (s, ps), (t, pt), None, None);
        Ok(())
    }

    fn push_switch_link(
        &mut self,
        kind: LinkKind,
        (s, ps): (usize, usize),
        (t, pt): (usize, usize),
        bw: Option<f64>,
        delay: Option<u64>,
    ) {
        let id = self.links.len();
        self.links.push(Link {
            id,
            kind,
            a: Attach::Switch { switch: s, port: ps },
            b: Attach::Switch { switch: t, port: pt },
            bandwidth_gbps: bw.unwrap_or_else(|| self.bandwidth(kind)),
            propagation_ns: delay.unwrap_or_else(|| self.delay(kind)),
        });
        self.port_map[s][ps] = Some(id);
        self.port_map[t][pt] = Some(id);
    }

    fn finish(self) -> Topology {
        let p = &self.params;
        let a = p.switches_per_group;
        let g = p.num_groups;
        let num_sw = p.num_switches();
        let switches = (0..num_sw)
            .map(|s| SwitchInfo {
                group: s / a,
                index: s % a,
            })
            .collect();
        let mut neighbors = vec![Vec::new(); num_sw];
        let mut intra = vec![Vec::new(); g * a * a];
        let mut global = vec![Vec::new(); g * g];
        for l in &self.links {
            if let (Attach::Switch { switch: s, .. }, Attach::Switch { switch: t, .. }) = (l.a, l.b)
            {
                neighbors[s].push((t, l.id));
                neighbors[t].push((s, l.id));
                let (gs, gt) = (s / a, t / a);
                if gs == gt {
                    intra[(gs * a + s % a) * a + t % a].push(l.id);
                    intra[(gs * a + t % a) * a + s % a].push(l.id);
                } else {
                    global[gs * g + gt].push(l.id);
                    global[gt * g + gs].push(l.id);
                }
            }
        }
        Topology {
            params: self.params.clone(),
            switches,
            endpoints: self
                .endpoints
                .into_iter()
                .map(|e| e.expect("every endpoint attached"))
                .collect(),
            links: self.links,
            port_map: self.port_map,
            neighbors,
            intra,
            global,
        }
    }
}

impl Topology {
    pub fn num_switches(&self) -> usize {
        self.switches.len()
    }

    pub fn num_endpoints(&self) -> usize {
        self.endpoints.len()
    }

    pub fn num_groups(&self) -> usize {
        self.params.num_groups
    }

    pub fn group_of(&self, switch: usize) -> usize {
        self.switches[switch].group
    }

    pub fn endpoint_switch(&self, ep: usize) -> usize {
        self.endpoints[ep].switch
    }

    pub fn neighbors(&self, switch: usize) -> &[(usize, usize)] {
        &self.neighbors[switch]
    }

    /// Parallel intra-group links between two switches of one group.
    pub fn intra_links(&self, s: usize, t: usize) -> &[usize] {
        let a = self.params.switches_per_group;
        let g = self.group_of(s);
        if g != self.group_of(t) {
            return &[];
        }
        &self.intra[(g * a + s % a) * a + t % a]
    }

    /// Global links between two groups.
    pub fn global_links(&self, g: usize, h: usize) -> &[usize] {
        &self.global[g * self.num_groups() + h]
    }

    /// Port of `link` on `switch`.
    pub fn port_on(&self, switch: usize, link: usize) -> Option<usize> {
        let l = &self.links[link];
        for side in [l.a, l.b] {
            if let Attach::Switch { switch: s, port } = side {
                if s == switch {
                    return Some(port);
                }
            }
        }
        None
    }

    /// Switch at the far end of `link` as seen from `switch`.
    pub fn peer(&self, switch: usize, link: usize) -> Option<usize> {
        let l = &self.links[link];
        match (l.a.switch(), l.b.switch()) {
            (Some(s), Some(t)) if s == switch => Some(t),
            (Some(s), Some(t)) if t == switch => Some(s),
            _ => None,
        }
    }

    pub fn ports_used(&self, switch: usize) -> usize {
        self.port_map[switch].iter().filter(|p| p.is_some()).count()
    }

    /// Global links attached to each group (each physical link counts once
    /// for each of its two groups).
    pub fn global_link_ends(&self) -> usize {
        self.links
            .iter()
            .filter(|l| l.kind == LinkKind::Global)
            .count()
            * 2
    }

    pub fn global_links_of_group(&self, g: usize) -> usize {
        (0..self.num_groups())
            .filter(|&h| h != g)
            .map(|h| self.global_links(g, h).len())
            .sum()
    }

    /// Switch-to-switch BFS diameter. Quadratic in switch count; intended for
    /// desk-scale instances.
    pub fn switch_diameter(&self) -> usize {
        let n = self.num_switches();
        let mut worst = 0;
        let mut dist = vec![usize::MAX; n];
        let mut queue = VecDeque::new();
        for s in 0..n {
            dist.iter_mut().for_each(|d| *d = usize::MAX);
            dist[s] = 0;
            queue.push_back(s);
            while let Some(u) = queue.pop_front() {
                for &(v, _) in &self.neighbors[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            worst = worst.max(*dist.iter().max().unwrap_or(&0));
        }
        worst
    }

    fn check_endpoint(&self, ep: usize) -> Result<usize, TopologyError> {
        self.endpoints
            .get(ep)
            .map(|e| e.switch)
            .ok_or(TopologyError::UnknownEndpoint(ep))
    }

    /// All shortest switch sequences between the endpoints' switches.
    pub fn minimal_paths(&self, src_ep: usize, dst_ep: usize) -> Result<Vec<Path>, TopologyError> {
        let s = self.check_endpoint(src_ep)?;
        let t = self.check_endpoint(dst_ep)?;
        Ok(self.minimal_switch_paths(s, t))
    }

    /// Shortest paths between two switches, found by iterative deepening.
    pub fn minimal_switch_paths(&self, s: usize, t: usize) -> Vec<Path> {
        if s == t {
            return vec![Path::local(s)];
        }
        let mut out = Vec::new();
        let mut switches: SmallVec<[usize; 6]> = SmallVec::from_slice(&[s]);
        let mut links: SmallVec<[usize; 5]> = SmallVec::new();
        for depth in 1..=self.num_switches() {
            self.deepen(t, depth, &mut switches, &mut links, &mut out);
            if !out.is_empty() {
                break;
            }
        }
        out.sort();
        out
    }

    fn deepen(
        &self,
        t: usize,
        remaining: usize,
        switches: &mut SmallVec<[usize; 6]>,
        links: &mut SmallVec<[usize; 5]>,
        out: &mut Vec<Path>,
    ) {
        let u = *switches.last().unwrap();
        for &(v, l) in &self.neighbors[u] {
            if switches.contains(&v) {
                continue;
            }
            if remaining == 1 {
                if v == t {
                    let mut sw = switches.clone();
                    sw.push(v);
                    let mut ls = links.clone();
                    ls.push(l);
                    out.push(Path {
                        switches: sw,
                        links: ls,
                        class: PathClass::Minimal,
                    });
                }
            } else if v != t {
                switches.push(v);
                links.push(l);
                self.deepen(t, remaining - 1, switches, links, out);
                switches.pop();
                links.pop();
            }
        }
    }

    /// Up to `k` detours between the endpoints' switches, each through one
    /// intermediate switch (same group) or one intermediate group.
    pub fn nonminimal_paths<R: Rng + ?Sized>(
        &self,
        src_ep: usize,
        dst_ep: usize,
        k: usize,
        rng: &mut R,
    ) -> Result<Vec<Path>, TopologyError> {
        let s = self.check_endpoint(src_ep)?;
        let t = self.check_endpoint(dst_ep)?;
        Ok(self.nonminimal_switch_paths(s, t, k, rng))
    }

    pub fn nonminimal_switch_paths<R: Rng + ?Sized>(
        &self,
        s: usize,
        t: usize,
        k: usize,
        rng: &mut R,
    ) -> Vec<Path> {
        if k == 0 || s == t {
            return Vec::new();
        }
        let a = self.params.switches_per_group;
        let (gs, gt) = (self.group_of(s), self.group_of(t));
        let mut out = Vec::new();
        if gs == gt {
            let base = gs * a;
            let mids: Vec<usize> = (base..base + a).filter(|&w| w != s && w != t).collect();
            for i in index::sample(rng, mids.len(), k.min(mids.len())) {
                let w = mids[i];
                let mut p = Path::local(s);
                self.extend_intra(&mut p, w, rng);
                self.extend_intra(&mut p, t, rng);
                p.class = PathClass::Nonminimal;
                out.push(p);
            }
        } else {
            let mids: Vec<usize> = (0..self.num_groups())
                .filter(|&g| g != gs && g != gt)
                .collect();
            for i in index::sample(rng, mids.len(), k.min(mids.len())) {
                let gm = mids[i];
                let mut p = Path::local(s);
                self.extend_global(&mut p, gm, rng);
                self.extend_global(&mut p, gt, rng);
                self.extend_intra(&mut p, t, rng);
                p.class = PathClass::Nonminimal;
                out.push(p);
            }
        }
        out
    }

    fn extend_intra<R: Rng + ?Sized>(&self, p: &mut Path, to: usize, rng: &mut R) {
        let from = p.destination();
        if from == to {
            return;
        }
        let cands = self.intra_links(from, to);
        let l = cands[rng.gen_range(0..cands.len())];
        p.switches.push(to);
        p.links.push(l);
    }

    /// Walks to a uniformly chosen global link toward `group` and crosses it.
    fn extend_global<R: Rng + ?Sized>(&self, p: &mut Path, group: usize, rng: &mut R) {
        let from = p.destination();
        let cands = self.global_links(self.group_of(from), group);
        let l = cands[rng.gen_range(0..cands.len())];
        let link = &self.links[l];
        let (near, far) = match (link.a.switch(), link.b.switch()) {
            (Some(x), Some(y)) if self.group_of(x) == self.group_of(from) => (x, y),
            (Some(x), Some(y)) => (y, x),
            _ => unreachable!("global links join switches"),
        };
        self.extend_intra(p, near, rng);
        p.switches.push(far);
        p.links.push(l);
    }

    fn validate_partition(&self, half: &[usize]) -> Result<Vec<bool>, TopologyError> {
        let g = self.num_groups();
        let err = TopologyError::OddPartition { groups: g };
        if g % 2 != 0 || half.len() * 2 != g {
            return Err(err);
        }
        let mut side = vec![false; g];
        for &x in half {
            if x >= g || side[x] {
                return Err(err);
            }
            side[x] = true;
        }
        Ok(side)
    }

    /// Peak bisection bandwidth in Gb/s: capacity of the global links crossing
    /// the cut, counted in both directions.
    pub fn bisection_bound(&self, half: &[usize]) -> Result<f64, TopologyError> {
        let side = self.validate_partition(half)?;
        let cut: f64 = self
            .links
            .iter()
            .filter(|l| l.kind == LinkKind::Global)
            .filter(|l| {
                let x = self.group_of(l.a.switch().unwrap());
                let y = self.group_of(l.b.switch().unwrap());
                side[x] != side[y]
            })
            .map(|l| l.bandwidth_gbps)
            .sum();
        Ok(cut * 2.0)
    }

    /// Global links crossing the cut.
    pub fn cut_links(&self, half: &[usize]) -> Result<usize, TopologyError> {
        let side = self.validate_partition(half)?;
        Ok(self
            .links
            .iter()
            .filter(|l| l.kind == LinkKind::Global)
            .filter(|l| {
                side[self.group_of(l.a.switch().unwrap())]
                    != side[self.group_of(l.b.switch().unwrap())]
            })
            .count())
    }

    /// Peak all-to-all bandwidth in Gb/s: with G groups, (G-1)/G of uniform
    /// traffic crosses a global link once, so the fabric sustains
    /// G/(G-1) times the global capacity summed over every group's links.
    pub fn all_to_all_bound(&self) -> Result<f64, TopologyError> {
        let g = self.num_groups();
        if g < 2 {
            return Err(TopologyError::InvalidParams(
                "all-to-all bound needs at least two groups".into(),
            ));
        }
        let capacity: f64 = self
            .links
            .iter()
            .filter(|l| l.kind == LinkKind::Global)
            .map(|l| l.bandwidth_gbps * 2.0)
            .sum();
        Ok(g as f64 / (g as f64 - 1.0) * capacity)
    }

    /// Plain-text adjacency listing, one link per line.
    pub fn to_adjacency(&self) -> String {
        let p = &self.params;
        let mut out = String::new();
        let _ = writeln!(out, "# slingsim dragonfly adjacency");
        let _ = writeln!(out, "# type a b bandwidth_gbps [delay_ns]");
        let _ = writeln!(
            out,
            "dragonfly groups={} switches_per_group={} endpoints_per_switch={}",
            p.num_groups, p.switches_per_group, p.endpoints_per_switch
        );
        for l in &self.links {
            let fmt_side = |s: &Attach| match *s {
                Attach::Switch { switch, port } => format!("S{switch}:{port}"),
                Attach::Nic { endpoint } => format!("N{endpoint}"),
            };
            let _ = write!(
                out,
                "{} {} {} {}",
                l.kind.as_str(),
                fmt_side(&l.a),
                fmt_side(&l.b),
                l.bandwidth_gbps
            );
            let default = default_delay(l.kind);
            if l.propagation_ns != default {
                let _ = write!(out, " {}", l.propagation_ns);
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`Topology::to_adjacency`] output and checks that it describes a
    /// well-formed Dragonfly.
    pub fn from_adjacency(text: &str) -> Result<Topology, TopologyError> {
        parse_adjacency(text)
    }
}

fn default_delay(kind: LinkKind) -> u64 {
    match kind {
        LinkKind::Endpoint => DEFAULT_ENDPOINT_DELAY_NS,
        LinkKind::Intra => DEFAULT_INTRA_DELAY_NS,
        LinkKind::Global => DEFAULT_OPTICAL_DELAY_NS,
    }
}

fn perr(line: usize, msg: impl Into<String>) -> TopologyError {
    TopologyError::Parse {
        line,
        msg: msg.into(),
    }
}

enum Side {
    Switch(usize, usize),
    Nic(usize),
}

fn parse_side(tok: &str, line: usize) -> Result<Side, TopologyError> {
    if let Some(rest) = tok.strip_prefix('N') {
        let ep = rest
            .parse::<usize>()
            .map_err(|_| perr(line, format!("bad endpoint `{tok}`")))?;
        return Ok(Side::Nic(ep));
    }
    let rest = tok
        .strip_prefix('S')
        .ok_or_else(|| perr(line, format!("expected S<switch>:<port> or N<endpoint>, got `{tok}`")))?;
    let (sw, port) = rest
        .split_once(':')
        .ok_or_else(|| perr(line, format!("missing port in `{tok}`")))?;
    let sw = sw
        .parse::<usize>()
        .map_err(|_| perr(line, format!("bad switch in `{tok}`")))?;
    let port = port
        .parse::<usize>()
        .map_err(|_| perr(line, format!("bad port in `{tok}`")))?;
    if port >= SWITCH_RADIX {
        return Err(perr(line, format!("port {port} out of range")));
    }
    Ok(Side::Switch(sw, port))
}

// Generous enough for the largest constructible system.
const MAX_IMPORT_SWITCHES: usize = 1 << 16;

fn parse_adjacency(text: &str) -> Result<Topology, TopologyError> {
    let mut header: Option<(usize, usize, usize)> = None;
    let mut builder: Option<Builder> = None;
    let mut delays: [Option<u64>; 3] = [None; 3];
    let mut bw_local: Option<f64> = None;
    let mut bw_global: Option<f64> = None;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks[0] == "dragonfly" {
            if header.is_some() {
                return Err(perr(line, "duplicate dragonfly header"));
            }
            let mut vals = [None; 3];
            for t in &toks[1..] {
                let (k, v) = t
                    .split_once('=')
                    .ok_or_else(|| perr(line, format!("expected key=value, got `{t}`")))?;
                let v = v
                    .parse::<usize>()
                    .map_err(|_| perr(line, format!("bad value in `{t}`")))?;
                let slot = match k {
                    "groups" => 0,
                    "switches_per_group" => 1,
                    "endpoints_per_switch" => 2,
                    _ => return Err(perr(line, format!("unknown header key `{k}`"))),
                };
                vals[slot] = Some(v);
            }
            let [Some(g), Some(a), Some(e)] = vals else {
                return Err(perr(line, "header needs groups, switches_per_group, endpoints_per_switch"));
            };
            if g == 0 || a == 0 || e == 0 {
                return Err(perr(line, "header counts must be positive"));
            }
            let sw = g
                .checked_mul(a)
                .filter(|&n| n <= MAX_IMPORT_SWITCHES)
                .ok_or_else(|| perr(line, "too many switches"))?;
            if e > SWITCH_RADIX {
                return Err(perr(line, "too many endpoints per switch"));
            }
            header = Some((g, a, e));
            let mut params = DragonflyParams::new(g, a, e, 1, 1);
            params.intra_links_per_pair = 0;
            params.global_links_per_group_pair = 0;
            builder = Some(Builder::new(params, sw));
            continue;
        }
        let (g, a, _) = header.ok_or_else(|| perr(line, "link before dragonfly header"))?;
        let b = builder.as_mut().unwrap();
        if toks.len() != 4 && toks.len() != 5 {
            return Err(perr(line, "expected `type a b bandwidth [delay_ns]`"));
        }
        let kind = match toks[0] {
            "endpoint" => LinkKind::Endpoint,
            "intra" => LinkKind::Intra,
            "global" => LinkKind::Global,
            other => return Err(perr(line, format!("unknown link type `{other}`"))),
        };
        let bw: f64 = toks[3]
            .parse()
            .map_err(|_| perr(line, format!("bad bandwidth `{}`", toks[3])))?;
        if !(bw.is_finite() && bw > 0.0) {
            return Err(perr(line, "bandwidth must be positive"));
        }
        let delay = match toks.get(4) {
            Some(t) => Some(
                t.parse::<u64>()
                    .map_err(|_| perr(line, format!("bad delay `{t}`")))?,
            ),
            None => None,
        };
        let side_a = parse_side(toks[1], line)?;
        let side_b = parse_side(toks[2], line)?;
        let n_sw = g * a;
        let claim = |b: &mut Builder, sw: usize, port: usize| -> Result<(), TopologyError> {
            if sw >= n_sw {
                return Err(perr(line, format!("switch {sw} out of range")));
            }
            if b.port_map[sw][port].is_some() {
                return Err(perr(line, format!("port S{sw}:{port} used twice")));
            }
            Ok(())
        };
        let (slot_bw, slot_delay) = match kind {
            LinkKind::Global => (&mut bw_global, &mut delays[2]),
            LinkKind::Intra => (&mut bw_local, &mut delays[1]),
            LinkKind::Endpoint => (&mut bw_local, &mut delays[0]),
        };
        match slot_bw {
            Some(x) if *x != bw => return Err(perr(line, "inconsistent bandwidth for link type")),
            _ => *slot_bw = Some(bw),
        }
        let d = delay.unwrap_or(default_delay(kind));
        if slot_delay.is_none() {
            *slot_delay = Some(d);
        }
        match (kind, side_a, side_b) {
            (LinkKind::Endpoint, Side::Nic(ep), Side::Switch(sw, port)) => {
                claim(b, sw, port)?;
                if ep >= b.endpoints.len() || b.endpoints[ep].is_some() {
                    return Err(perr(line, format!("endpoint N{ep} invalid or repeated")));
                }
                if ep / b.params.endpoints_per_switch != sw {
                    return Err(perr(line, format!("endpoint N{ep} must attach to S{}", ep / b.params.endpoints_per_switch)));
                }
                b.push_endpoint(ep, sw, port, Some(bw), Some(d))?;
            }
            (LinkKind::Intra | LinkKind::Global, Side::Switch(s, ps), Side::Switch(t, pt)) => {
                claim(b, s, ps)?;
                claim(b, t, pt)?;
                if s == t {
                    return Err(perr(line, "self loop"));
                }
                let same = s / a == t / a;
                if same != (kind == LinkKind::Intra) {
                    return Err(perr(line, "intra links stay in a group, global links leave it"));
                }
                b.push_switch_link(kind, (s, ps), (t, pt), Some(bw), Some(d));
            }
            _ => return Err(perr(line, "link ends do not match link type")),
        }
    }

    let mut b = builder.ok_or_else(|| perr(0, "missing dragonfly header"))?;
    let (g, a, _) = header.unwrap();
    if b.endpoints.iter().any(Option::is_none) {
        return Err(perr(0, "not every endpoint is attached"));
    }
    // derive and check the symmetric link counts
    let mut intra_counts = std::collections::HashMap::new();
    let mut global_counts = std::collections::HashMap::new();
    for l in &b.links {
        if let (Some(s), Some(t)) = (l.a.switch(), l.b.switch()) {
            let key = (s.min(t), s.max(t));
            if l.kind == LinkKind::Intra {
                *intra_counts.entry(key).or_insert(0usize) += 1;
            } else {
                let gk = ((s / a).min(t / a), (s / a).max(t / a));
                *global_counts.entry(gk).or_insert(0usize) += 1;
            }
        }
    }
    let intra_per = if a > 1 {
        let n = intra_counts.values().next().copied().unwrap_or(0);
        if n == 0 || intra_counts.len() != g * a * (a - 1) / 2 || intra_counts.values().any(|&c| c != n) {
            return Err(perr(0, "switches inside a group must be fully and evenly connected"));
        }
        n
    } else {
        1
    };
    let global_per = if g > 1 {
        let n = global_counts.values().next().copied().unwrap_or(0);
        if n == 0 || global_counts.len() != g * (g - 1) / 2 || global_counts.values().any(|&c| c != n) {
            return Err(TopologyError::AsymmetricGlobal(
                "every group pair needs the same number of global links".into(),
            ));
        }
        n
    } else {
        1
    };
    let local_bw = bw_local.unwrap_or(200.0);
    b.params.intra_links_per_pair = intra_per;
    b.params.global_links_per_group_pair = global_per;
    b.params.link_bandwidth = local_bw;
    b.params.global_bandwidth_taper = bw_global.map_or(1.0, |x| x / local_bw);
    b.params.endpoint_delay_ns = delays[0].unwrap_or(DEFAULT_ENDPOINT_DELAY_NS);
    b.params.intra_delay_ns = delays[1].unwrap_or(DEFAULT_INTRA_DELAY_NS);
    b.params.optical_delay_ns = delays[2].unwrap_or(DEFAULT_OPTICAL_DELAY_NS);
    if !(b.params.global_bandwidth_taper > 0.0 && b.params.global_bandwidth_taper <= 1.0) {
        return Err(perr(0, "global bandwidth exceeds local link bandwidth"));
    }
    Ok(b.finish())
}
