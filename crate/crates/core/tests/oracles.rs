//! Topology checks against independent brute-force computations.

use std::collections::VecDeque;

use proptest::prelude::*;
use slingsim::topology::{build_dragonfly, DragonflyParams, Topology};

fn bfs(topo: &Topology, from: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; topo.num_switches()];
    dist[from] = 0;
    let mut q = VecDeque::from([from]);
    while let Some(u) = q.pop_front() {
        for &(v, _) in topo.neighbors(u) {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                q.push_back(v);
            }
        }
    }
    dist
}

/// Every shortest (switches, links) walk from `s` to `t`, parallel links
/// counted separately.
fn oracle_paths(topo: &Topology, s: usize, t: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    let to_t = bfs(topo, t);
    let mut out = Vec::new();
    let mut stack = vec![(vec![s], Vec::new())];
    while let Some((sw, links)) = stack.pop() {
        let u = *sw.last().unwrap();
        if u == t {
            out.push((sw, links));
            continue;
        }
        for &(v, l) in topo.neighbors(u) {
            if to_t[v] + 1 == to_t[u] {
                let mut sw2 = sw.clone();
                sw2.push(v);
                let mut l2 = links.clone();
                l2.push(l);
                stack.push((sw2, l2));
            }
        }
    }
    out.sort();
    out
}

/// Global links crossing the split, counted from the switch adjacency.
fn oracle_cut(topo: &Topology, side: &[bool]) -> usize {
    let mut n = 0;
    for u in 0..topo.num_switches() {
        for &(v, _) in topo.neighbors(u) {
            if u < v && side[topo.group_of(u)] != side[topo.group_of(v)] {
                n += 1;
            }
        }
    }
    n
}

fn small_instances() -> Vec<Topology> {
    let mut out = Vec::new();
    for g in 2..=6 {
        for a in 1..=4 {
            for intra in 1..=2 {
                for global in 1..=2 {
                    if a == 1 && intra > 1 {
                        continue;
                    }
                    if let Ok(t) = build_dragonfly(&DragonflyParams::new(g, a, 2, intra, global)) {
                        out.push(t);
                    }
                }
            }
        }
    }
    out
}

#[test]
fn minimal_paths_match_bfs_enumeration() {
    let instances = small_instances();
    assert!(instances.len() > 30);
    for topo in &instances {
        for s in 0..topo.num_switches() {
            for t in 0..topo.num_switches() {
                let mut got: Vec<(Vec<usize>, Vec<usize>)> = topo
                    .minimal_switch_paths(s, t)
                    .into_iter()
                    .map(|p| (p.switches.to_vec(), p.links.to_vec()))
                    .collect();
                got.sort();
                assert_eq!(got, oracle_paths(topo, s, t), "{:?} {s}->{t}", topo.params);
            }
        }
    }
}

#[test]
fn endpoint_paths_use_endpoint_switches() {
    let topo = build_dragonfly(&DragonflyParams::new(3, 2, 2, 1, 1)).unwrap();
    for src in 0..topo.num_endpoints() {
        for dst in 0..topo.num_endpoints() {
            for p in topo.minimal_paths(src, dst).unwrap() {
                assert_eq!(p.source(), topo.endpoint_switch(src));
                assert_eq!(p.destination(), topo.endpoint_switch(dst));
            }
        }
    }
    assert!(topo.minimal_paths(0, topo.num_endpoints()).is_err());
}

fn halves(g: usize) -> Vec<Vec<usize>> {
    (0u32..1 << g)
        .filter(|m| m.count_ones() as usize * 2 == g)
        .map(|m| (0..g).filter(|&i| m >> i & 1 == 1).collect())
        .collect()
}

#[test]
fn bisection_matches_exhaustive_min_cut() {
    for topo in small_instances().iter().filter(|t| t.num_groups() % 2 == 0) {
        let g = topo.num_groups();
        let bw = topo.params.global_bandwidth();
        let mut best_model = f64::INFINITY;
        let mut best_oracle = usize::MAX;
        for half in halves(g) {
            let mut side = vec![false; g];
            half.iter().for_each(|&x| side[x] = true);
            let cut = oracle_cut(topo, &side);
            assert_eq!(topo.cut_links(&half).unwrap(), cut);
            let b = topo.bisection_bound(&half).unwrap();
            assert_eq!(b, cut as f64 * bw * 2.0);
            best_model = best_model.min(b);
            best_oracle = best_oracle.min(cut);
        }
        assert_eq!(best_model, best_oracle as f64 * bw * 2.0);
    }
}

#[test]
fn unbalanced_partitions_rejected() {
    let topo = build_dragonfly(&DragonflyParams::new(4, 2, 1, 1, 1)).unwrap();
    assert!(topo.bisection_bound(&[0]).is_err());
    assert!(topo.bisection_bound(&[0, 0]).is_err());
    let odd = build_dragonfly(&DragonflyParams::new(3, 2, 1, 1, 1)).unwrap();
    assert!(odd.bisection_bound(&[0]).is_err());
}

fn params() -> impl Strategy<Value = DragonflyParams> {
    (2usize..=17, 1usize..=8, 1usize..=8, 1usize..=2, 1usize..=3)
        .prop_map(|(g, a, ep, intra, global)| DragonflyParams::new(g, a, ep, intra, global))
        .prop_filter("valid dragonfly", |p| p.validate().is_ok())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn diameter_at_most_three(p in params()) {
        let topo = build_dragonfly(&p).unwrap();
        let worst = (0..topo.num_switches())
            .map(|s| bfs(&topo, s).into_iter().max().unwrap())
            .max()
            .unwrap();
        prop_assert!(worst <= 3);
        prop_assert_eq!(worst, topo.switch_diameter());
    }

    #[test]
    fn ports_within_radix(p in params()) {
        let topo = build_dragonfly(&p).unwrap();
        for s in 0..topo.num_switches() {
            prop_assert!(topo.ports_used(s) <= 64);
        }
        prop_assert_eq!(topo.num_endpoints(), p.num_groups * p.switches_per_group * p.endpoints_per_switch);
    }

    #[test]
    fn adjacency_roundtrips(p in params()) {
        let topo = build_dragonfly(&p).unwrap();
        let text = topo.to_adjacency();
        let back = Topology::from_adjacency(&text).unwrap();
        prop_assert_eq!(back.to_adjacency(), text);
        prop_assert_eq!(back.num_endpoints(), topo.num_endpoints());
    }
}
