//! Measurement: repeat the victim until its timing is statistically stable,
//! compare contended against isolated runs, and sweep parameter grids.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{HarnessConfig, HarnessMode, ScenarioConfig};
use crate::congestion::WindowChange;
use crate::error::{ConfigError, SimError};
use crate::fabric::{Fabric, FabricStats, TraceRecord};
use crate::report::{series_points, ReportRow, SeriesPoint};
use crate::topology::Topology;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    /// Per-iteration victim completion times, slowest rank each.
    pub samples: Vec<u64>,
    pub mean: f64,
    pub median: u64,
    pub p95: u64,
    pub p99: u64,
    /// Bootstrap 95% CI half-width of the median, relative to the median.
    pub ci95_halfwidth_rel: f64,
    pub unstable: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CongestionReport {
    pub t_i: f64,
    pub t_c: f64,
    pub c: f64,
}

/// Nearest-rank percentile of sorted data, `p` in (0, 100].
pub fn percentile(sorted: &[u64], p: f64) -> u64 {
    assert!(!sorted.is_empty(), "percentile of no data");
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn median_of(buf: &mut [u64]) -> u64 {
    let mid = (buf.len() + 1) / 2 - 1;
    *buf.select_nth_unstable(mid).1
}

/// Half-width of the bootstrap 95% interval of the median, relative to the
/// sample median.
pub fn bootstrap_median_ci(samples: &[u64], resamples: usize, seed: u64) -> f64 {
    let n = samples.len();
    if n == 0 {
        return f64::INFINITY;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let median = percentile(&sorted, 50.0) as f64;
    if sorted[0] == sorted[n - 1] {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = vec![0u64; n];
    let mut medians: Vec<u64> = (0..resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = samples[rng.gen_range(0..n)];
            }
            median_of(&mut buf)
        })
        .collect();
    medians.sort_unstable();
    let lo = percentile(&medians, 2.5) as f64;
    let hi = percentile(&medians, 97.5) as f64;
    if median <= 0.0 {
        return f64::INFINITY;
    }
    (hi - lo) / 2.0 / median
}

pub fn summarize(samples: Vec<u64>, ci95_halfwidth_rel: f64, unstable: bool) -> RunStats {
    let mut sorted = samples.clone();
    sorted.sort_unstable();
    let mean = samples.iter().map(|&x| x as f64).sum::<f64>() / samples.len().max(1) as f64;
    let (median, p95, p99) = if sorted.is_empty() {
        (0, 0, 0)
    } else {
        (
            percentile(&sorted, 50.0),
            percentile(&sorted, 95.0),
            percentile(&sorted, 99.0),
        )
    };
    RunStats {
        samples,
        mean,
        median,
        p95,
        p99,
        ci95_halfwidth_rel,
        unstable,
    }
}

/// Draws samples until the stopping rule holds: at least
/// `min_iterations` samples, at least the scaled minimum runtime, and a
/// median CI within `ci_rel`. `draw(n)` must return the first `n` samples
/// (fewer only if the source is exhausted). Stops with `unstable` at
/// `max_iterations` or when the source runs dry.
pub fn run_until_stable_with(
    h: &HarnessConfig,
    seed: u64,
    mut draw: impl FnMut(usize) -> Result<Vec<u64>, SimError>,
) -> Result<RunStats, SimError> {
    let min_time = h.min_time_ns();
    let mut target = h.min_iterations;
    loop {
        let samples = draw(target)?;
        let n = samples.len();
        let total: u64 = samples.iter().sum();
        let ci = bootstrap_median_ci(&samples, h.resamples, seed ^ n as u64);
        let floors = n >= h.min_iterations && total >= min_time;
        if floors && ci <= h.ci_rel {
            return Ok(summarize(samples, ci, false));
        }
        if n < target || n >= h.max_iterations {
            log::warn!(
                "victim not stable after {n} iterations (ci {:.3}, {total} ns)",
                ci
            );
            return Ok(summarize(samples, ci, true));
        }
        let mut next = n + (n / 4).max(1);
        if total < min_time && total > 0 {
            // jump to the iteration count the time floor implies
            let per = total as f64 / n as f64;
            next = next.max((min_time as f64 / per).ceil() as usize);
        }
        target = next.min(h.max_iterations);
    }
}

pub fn congestion_impact(t_i: f64, t_c: f64) -> Result<f64, SimError> {
    if !(t_i > 0.0 && t_i.is_finite()) {
        return Err(SimError::NonPositiveBaseline(t_i));
    }
    Ok(t_c / t_i)
}

/// Everything one simulated run leaves behind.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub stats: RunStats,
    pub fabric: FabricStats,
    pub in_flight: u64,
    pub trace: Option<Vec<TraceRecord>>,
    pub window_log: Vec<WindowChange>,
}

/// Runs the victim (with or without the aggressor) under the stopping rule.
pub fn run_victim(cfg: &ScenarioConfig, topo: &Arc<Topology>, with_aggressor: bool) -> Result<RunOutput, SimError> {
    let jobs = cfg.jobs(topo, with_aggressor)?;
    let mut fabric = Fabric::new(topo.clone(), cfg.fabric_config(), jobs)?;
    let limit = cfg.harness.time_limit_ns;
    let stats = run_until_stable_with(&cfg.harness, cfg.seed, |n| {
        if fabric.job(0).samples.len() < n && !fabric.job(0).finished {
            if let Err(e) = fabric.run_iterations(0, n, limit) {
                if !fabric.job(0).finished {
                    return Err(e);
                }
            }
        }
        let s = &fabric.job(0).samples;
        Ok(s[..n.min(s.len())].to_vec())
    })?;
    Ok(RunOutput {
        stats,
        fabric: fabric.stats().clone(),
        in_flight: fabric.in_flight(),
        trace: fabric.trace().map(|t| t.to_vec()),
        window_log: fabric.congestion().log.clone(),
    })
}

#[derive(Clone, Debug)]
pub struct ImpactOutcome {
    pub isolated: RunOutput,
    pub contended: RunOutput,
    pub report: CongestionReport,
}

pub fn run_impact(cfg: &ScenarioConfig, topo: &Arc<Topology>) -> Result<ImpactOutcome, SimError> {
    let isolated = run_victim(cfg, topo, false)?;
    let contended = run_victim(cfg, topo, true)?;
    let (t_i, t_c) = (isolated.stats.mean, contended.stats.mean);
    let c = congestion_impact(t_i, t_c)?;
    Ok(ImpactOutcome {
        isolated,
        contended,
        report: CongestionReport { t_i, t_c, c },
    })
}

#[derive(Clone, Debug)]
pub struct TimeseriesOutcome {
    pub points: Vec<SeriesPoint>,
    pub fabric: FabricStats,
    pub in_flight: u64,
    pub trace: Option<Vec<TraceRecord>>,
    pub window_log: Vec<WindowChange>,
}

/// Runs every job as a stream for the configured duration and samples each
/// job's delivered bandwidth.
pub fn run_timeseries(cfg: &ScenarioConfig, topo: &Arc<Topology>) -> Result<TimeseriesOutcome, SimError> {
    let (Some(duration), Some(window)) = (cfg.harness.duration_ns, cfg.harness.window_ns) else {
        return Err(ConfigError::Invalid("timeseries mode needs duration_ns and window_ns".into()).into());
    };
    let jobs = cfg.jobs(topo, true)?;
    let mut fabric = Fabric::new(topo.clone(), cfg.fabric_config(), jobs)?;
    fabric.run_for(duration)?;
    let points = series_points(&fabric.stats().series, window, duration);
    Ok(TimeseriesOutcome {
        points,
        fabric: fabric.stats().clone(),
        in_flight: fabric.in_flight(),
        trace: fabric.trace().map(|t| t.to_vec()),
        window_log: fabric.congestion().log.clone(),
    })
}

/// Key under which an isolated baseline is shared: the scenario minus
/// everything that only affects the aggressor.
pub fn baseline_key(cfg: &ScenarioConfig) -> String {
    let mut c = cfg.clone();
    c.aggressor = None;
    c.ppn = 1;
    c.sweep = None;
    c.hash()
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub rows: Vec<ReportRow>,
    /// Cells whose isolated time came from the shared cache.
    pub baseline_hits: u64,
    pub baselines_computed: u64,
}

fn value_text(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn failed_row(cell: usize, params: Vec<(String, String)>, e: &SimError) -> ReportRow {
    ReportRow {
        cell,
        params,
        t_i_ns: 0.0,
        t_c_ns: 0.0,
        c: 0.0,
        median_ns: 0,
        p95_ns: 0,
        p99_ns: 0,
        ci_rel: 0.0,
        iterations: 0,
        unstable: false,
        error: Some(e.to_string()),
    }
}

/// Runs every cell of the scenario's sweep (a single cell without one) on
/// `threads` workers. Isolated baselines are computed once per distinct
/// victim setup. Rows come back in cell order; failed cells carry their
/// error and the sweep continues.
pub fn run_sweep(cfg: &ScenarioConfig, threads: usize) -> Result<SweepOutcome, SimError> {
    if cfg.harness.mode != HarnessMode::Impact {
        return Err(ConfigError::Invalid("sweeps measure congestion impact; use mode = \"impact\"".into()).into());
    }
    let cells: Vec<(Vec<(String, String)>, Result<ScenarioConfig, SimError>)> = cfg
        .sweep_cells()
        .into_iter()
        .map(|overrides| {
            let params = overrides
                .iter()
                .map(|(k, v)| (k.clone(), value_text(v)))
                .collect();
            let mut c = Ok(cfg.clone());
            for (k, v) in &overrides {
                c = c.and_then(|c| c.with_override(k, v).map_err(SimError::from));
            }
            (params, c.map(|mut c| {
                c.sweep = None;
                c
            }))
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| SimError::Report(e.to_string()))?;

    // distinct baselines in order of first use
    let mut keys: Vec<(String, ScenarioConfig)> = Vec::new();
    for (_, c) in &cells {
        if let Ok(c) = c {
            let k = baseline_key(c);
            if !keys.iter().any(|(x, _)| *x == k) {
                keys.push((k, c.clone()));
            }
        }
    }
    let baselines: HashMap<String, Result<RunStats, String>> = pool.install(|| {
        keys.par_iter()
            .map(|(k, c)| {
                let r = c
                    .build_topology()
                    .map_err(SimError::from)
                    .and_then(|t| run_victim(c, &Arc::new(t), false))
                    .map(|o| o.stats)
                    .map_err(|e| e.to_string());
                (k.clone(), r)
            })
            .collect()
    });

    let used: Mutex<HashMap<String, ()>> = Mutex::new(HashMap::new());
    let hits = AtomicU64::new(0);
    let rows: Vec<ReportRow> = pool.install(|| {
        cells
            .par_iter()
            .enumerate()
            .map(|(i, (params, c))| {
                let c = match c {
                    Ok(c) => c,
                    Err(e) => return failed_row(i, params.clone(), e),
                };
                let key = baseline_key(c);
                if used.lock().expect("cache lock").insert(key.clone(), ()).is_some() {
                    hits.fetch_add(1, Ordering::Relaxed);
                }
                let run = || -> Result<ReportRow, SimError> {
                    let base = baselines[&key].as_ref().map_err(|e| SimError::Report(e.clone()))?;
                    let topo = Arc::new(c.build_topology()?);
                    let cont = run_victim(c, &topo, true)?.stats;
                    let ci = congestion_impact(base.mean, cont.mean)?;
                    Ok(ReportRow {
                        cell: i,
                        params: params.clone(),
                        t_i_ns: base.mean,
                        t_c_ns: cont.mean,
                        c: ci,
                        median_ns: cont.median,
                        p95_ns: cont.p95,
                        p99_ns: cont.p99,
                        ci_rel: cont.ci95_halfwidth_rel.max(base.ci95_halfwidth_rel),
                        iterations: cont.samples.len(),
                        unstable: cont.unstable || base.unstable,
                        error: None,
                    })
                };
                run().unwrap_or_else(|e| failed_row(i, params.clone(), &e))
            })
            .collect()
    });
    Ok(SweepOutcome {
        rows,
        baseline_hits: hits.into_inner(),
        baselines_computed: keys.len() as u64,
    })
}

/// Provenance record written next to a report.
#[derive(Clone, Debug, Serialize)]
pub struct Summary<'a> {
    pub config_hash: String,
    pub seed: u64,
    pub config: &'a ScenarioConfig,
    pub report: Option<CongestionReport>,
    pub rows: &'a [ReportRow],
    pub baseline_hits: u64,
}

impl Summary<'_> {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}
