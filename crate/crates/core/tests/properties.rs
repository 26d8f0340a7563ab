use std::sync::Arc;

use proptest::prelude::*;
use slingsim::config::ScenarioConfig;
use slingsim::engine::{EventQueue, SimTime};
use slingsim::fabric::{Fabric, FabricConfig, JobSetup};
use slingsim::harness::{percentile, run_victim, summarize};
use slingsim::qos::{QosConfig, TrafficClassSpec};
use slingsim::report::{parse_report, report_to_string, ReportRow};
use slingsim::topology::{build_dragonfly, DragonflyParams};
use slingsim::traffic::{JobRole, WorkloadKind, WorkloadSpec};

const KINDS: [WorkloadKind; 6] = [
    WorkloadKind::Incast,
    WorkloadKind::Alltoall,
    WorkloadKind::Allreduce,
    WorkloadKind::Pingpong,
    WorkloadKind::BisectionStream,
    WorkloadKind::BurstyIncast,
];

fn job(kind: WorkloadKind, msg: u64, nodes: Vec<usize>, role: JobRole) -> JobSetup {
    let mut spec = WorkloadSpec::new(kind, msg);
    if kind == WorkloadKind::BurstyIncast {
        spec.burst_size = Some(3);
        spec.burst_gap_ns = Some(2_000);
    }
    JobSetup { spec, role, nodes, dscp: None }
}

fn mixed_run(seed: u64, kind: WorkloadKind, msg: u64, cc: bool, lossy: bool) -> Fabric {
    let topo = Arc::new(build_dragonfly(&DragonflyParams::new(3, 2, 2, 1, 1)).unwrap());
    let mut cfg = FabricConfig { seed, ..FabricConfig::default() };
    cfg.cc.enabled = cc;
    cfg.qos.classes[0].lossless = !lossy;
    let jobs = vec![
        job(kind, msg, vec![0, 3, 5, 6, 9], JobRole::Victim),
        job(WorkloadKind::Incast, 16_384, vec![1, 2, 4, 7, 8, 10, 11], JobRole::Background),
    ];
    let mut f = Fabric::new(topo, cfg, jobs).unwrap();
    f.run_for(60_000).unwrap();
    f
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn packets_are_conserved(seed in any::<u64>(), k in 0..KINDS.len(), msg in 1u64..20_000, cc in any::<bool>()) {
        let f = mixed_run(seed, KINDS[k], msg, cc, false);
        let s = f.stats();
        prop_assert!(s.injected > 0);
        prop_assert_eq!(s.dropped, 0);
        prop_assert_eq!(s.injected, s.delivered + f.in_flight());
        // delivered packets hold their record until the link ack returns
        prop_assert!(f.live_packets() >= f.in_flight() as usize);
    }

    #[test]
    fn lossy_class_conserves_with_drops(seed in any::<u64>(), msg in 1u64..20_000) {
        let f = mixed_run(seed, WorkloadKind::Alltoall, msg, false, true);
        let s = f.stats();
        prop_assert_eq!(s.injected, s.delivered + s.dropped + f.in_flight());
        prop_assert!(s.retransmitted <= s.dropped);
    }

    #[test]
    fn runs_are_reproducible(seed in any::<u64>(), k in 0..KINDS.len()) {
        let a = mixed_run(seed, KINDS[k], 3_000, true, false);
        let b = mixed_run(seed, KINDS[k], 3_000, true, false);
        prop_assert_eq!(format!("{:?}", a.stats()), format!("{:?}", b.stats()));
        prop_assert_eq!(&a.job(0).samples, &b.job(0).samples);
    }

    #[test]
    fn percentiles_are_ordered(mut v in prop::collection::vec(0u64..1_000_000, 1..400)) {
        let s = summarize(v.clone(), 0.0, false);
        prop_assert!(s.median <= s.p95 && s.p95 <= s.p99);
        v.sort_unstable();
        prop_assert!(v[0] <= s.median && s.p99 <= v[v.len() - 1]);
        prop_assert_eq!(percentile(&v, 100.0), v[v.len() - 1]);
    }

    #[test]
    fn report_csv_roundtrips(rows in prop::collection::vec(row(), 0..8)) {
        let text = report_to_string(&rows);
        prop_assert_eq!(parse_report(&text).unwrap(), rows);
    }

    #[test]
    fn shares_respect_guarantees(
        mins in prop::collection::vec(0.0f64..0.3, 1..5),
        caps in prop::collection::vec(0.3f64..=1.0, 5),
        active in prop::collection::vec(any::<bool>(), 5),
    ) {
        let classes: Vec<TrafficClassSpec> = mins
            .iter()
            .enumerate()
            .map(|(i, &m)| {
                let mut c = TrafficClassSpec::new(i as u8, m);
                c.max_bw = caps[i];
                c.dscp = vec![i as u8];
                c
            })
            .collect();
        let qos = QosConfig { classes, default_class: 0 };
        prop_assume!(qos.validate().is_ok());
        let act = &active[..mins.len()];
        let s = qos.allocate_shares(act);
        let total: f64 = s.iter().sum();
        prop_assert!(total <= 1.0 + 1e-9);
        for i in 0..mins.len() {
            if act[i] {
                prop_assert!(s[i] + 1e-12 >= mins[i] && s[i] <= caps[i] + 1e-12);
            } else {
                prop_assert_eq!(s[i], 0.0);
            }
        }
        // work-conserving up to the caps
        let cap_sum: f64 = (0..mins.len()).filter(|&i| act[i]).map(|i| caps[i]).sum();
        if act.iter().any(|&a| a) {
            prop_assert!((total - cap_sum.min(1.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn events_pop_in_time_then_fifo_order(times in prop::collection::vec(0u64..50, 1..200)) {
        let mut q = EventQueue::new();
        for (i, &t) in times.iter().enumerate() {
            q.schedule(SimTime(t), i);
        }
        let mut last = (0u64, None::<usize>);
        while let Some((t, i)) = q.pop() {
            prop_assert!(t.0 >= last.0);
            if t.0 == last.0 {
                if let Some(j) = last.1 {
                    prop_assert!(i > j);
                }
            }
            last = (t.0, Some(i));
        }
    }
}

fn row() -> impl Strategy<Value = ReportRow> {
    (
        0usize..1000,
        prop::collection::vec(("[a-z.]{1,12}", "[a-z0-9\"]{0,8}"), 0..4),
        (0.0f64..1e9, 0.0f64..1e9, 0.0f64..10.0, 0.0f64..1.0),
        (any::<u32>(), any::<u32>(), any::<u32>()),
        (0usize..100_000, any::<bool>(), prop::option::of("[ -~]{1,30}")),
    )
        .prop_map(|(cell, params, (ti, tc, c, ci), (m, p95, p99), (it, unstable, error))| ReportRow {
            cell,
            params,
            t_i_ns: ti,
            t_c_ns: tc,
            c,
            median_ns: m as u64,
            p95_ns: p95 as u64,
            p99_ns: p99 as u64,
            ci_rel: ci,
            iterations: it,
            unstable,
            error,
        })
}

const SCENARIO: &str = r#"
seed = 9
[topology]
groups = 2
switches_per_group = 2
endpoints_per_switch = 2
[victim]
kind = "allreduce"
msg_bytes = 8
[aggressor]
kind = "incast"
msg_bytes = 8192
[allocation]
strategy = "interleaved"
victim_nodes = 4
aggressor_nodes = 4
[harness]
min_iterations = 100
min_time_s = 0.0
"#;

#[test]
fn scenario_csv_is_identical_across_runs() {
    let cfg = ScenarioConfig::from_toml(SCENARIO).unwrap();
    let topo = Arc::new(cfg.build_topology().unwrap());
    let csv = || {
        let o = run_victim(&cfg, &topo, true).unwrap();
        assert_eq!(o.fabric.dropped, 0);
        assert_eq!(o.fabric.injected, o.fabric.delivered + o.in_flight);
        let s = o.stats;
        report_to_string(&[ReportRow {
            cell: 0,
            params: vec![],
            t_i_ns: s.mean,
            t_c_ns: s.mean,
            c: 1.0,
            median_ns: s.median,
            p95_ns: s.p95,
            p99_ns: s.p99,
            ci_rel: s.ci95_halfwidth_rel,
            iterations: s.samples.len(),
            unstable: s.unstable,
            error: None,
        }])
    };
    assert_eq!(csv(), csv());
}
