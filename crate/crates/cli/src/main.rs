use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use slingsim::config::{HarnessMode, ScenarioConfig};
use slingsim::error::{ConfigError, SimError};
use slingsim::harness::{run_impact, run_sweep, run_timeseries, Summary};
use slingsim::report::{self, ReportRow};
use slingsim::topology::{build_dragonfly, max_system, DragonflyParams, Topology};

#[derive(Parser, Debug)]
#[command(name = "slingsim", version, about = "Dragonfly interconnect simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct ShapeArgs {
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long, default_value_t = 4)]
    switches_per_group: usize,
    #[arg(long, default_value_t = 16)]
    endpoints_per_switch: usize,
    #[arg(long, default_value_t = 1)]
    intra_links: usize,
    #[arg(long, default_value_t = 1)]
    global_links: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a topology and write its adjacency file.
    TopoBuild {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        shape: ShapeArgs,
    },
    /// Print size, diameter and bandwidth bounds of a topology.
    TopoInfo {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        shape: ShapeArgs,
        /// Adjacency file to inspect.
        #[arg(long)]
        topology_file: Option<PathBuf>,
        /// Size the largest system a switch radix allows instead.
        #[arg(long)]
        radix: Option<usize>,
        /// Cap on the number of groups when sizing by radix.
        #[arg(long, requires = "radix")]
        addressing_limit: Option<usize>,
    },
    /// Check a scenario file without running it.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Run one scenario.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Run every cell of the scenario's sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Parallel cells.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Summarize a report CSV.
    Report {
        /// Report produced by `run` or `sweep`.
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Format {
    Table,
    Json,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => Failure::Config(c.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::TopoBuild { common, shape } => topo_build(&common, &shape),
        Command::TopoInfo { common, shape, topology_file, radix, addressing_limit } => {
            topo_info(&common, &shape, topology_file, radix, addressing_limit)
        }
        Command::Validate { common } => {
            let cfg = load(&common)?;
            println!("ok {}", cfg.hash());
            Ok(())
        }
        Command::Run { common } => run(&common),
        Command::Sweep { common, jobs } => sweep(&common, jobs),
        Command::Report { input, format, common } => summarize(&input, format, &common),
    }
}

fn load(common: &Common) -> Result<ScenarioConfig, Failure> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| Failure::Config("--config is required".into()))?;
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Topology from explicit shape flags, else from the scenario file.
fn topology_from(common: &Common, shape: &ShapeArgs) -> Result<Topology, Failure> {
    if let Some(g) = shape.groups {
        let p = DragonflyParams::new(
            g,
            shape.switches_per_group,
            shape.endpoints_per_switch,
            shape.intra_links,
            shape.global_links,
        );
        return build_dragonfly(&p).map_err(|e| Failure::Config(e.to_string()));
    }
    if common.config.is_none() {
        return Err(Failure::Config("give --groups or --config".into()));
    }
    Ok(load(common)?.build_topology()?)
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_failure(path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn topo_build(common: &Common, shape: &ShapeArgs) -> Result<(), Failure> {
    let topo = topology_from(common, shape)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("topology.adj"));
    write(&out, &topo.to_adjacency())
}

fn topo_info(
    common: &Common,
    shape: &ShapeArgs,
    file: Option<PathBuf>,
    radix: Option<usize>,
    limit: Option<usize>,
) -> Result<(), Failure> {
    if let Some(r) = radix {
        let m = max_system(r, shape.endpoints_per_switch, limit)
            .map_err(|e| Failure::Config(e.to_string()))?;
        println!(
            "groups={} switches_per_group={} global_ports_per_switch={} endpoints={}",
            m.groups, m.switches_per_group, m.global_ports_per_switch, m.endpoints
        );
        return Ok(());
    }
    let topo = match file {
        Some(f) => {
            let text = fs::read_to_string(&f).map_err(|e| Failure::Config(format!("{}: {e}", f.display())))?;
            Topology::from_adjacency(&text).map_err(|e| Failure::Config(e.to_string()))?
        }
        None => topology_from(common, shape)?,
    };
    let g = topo.num_groups();
    println!(
        "groups={g} switches={} endpoints={} diameter={}",
        topo.num_switches(),
        topo.num_endpoints(),
        topo.switch_diameter()
    );
    if g >= 2 && g % 2 == 0 {
        let half: Vec<usize> = (0..g / 2).collect();
        let b = topo.bisection_bound(&half).map_err(|e| Failure::Runtime(e.to_string()))?;
        println!("bisection_gbps={b}");
    }
    if let Ok(a) = topo.all_to_all_bound() {
        println!("all_to_all_gbps={a}");
    }
    Ok(())
}

fn out_dir(common: &Common) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn csv_text(f: impl FnOnce(&mut Vec<u8>) -> Result<(), SimError>) -> Result<String, Failure> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Failure::Runtime(e.to_string()))
}

fn run(common: &Common) -> Result<(), Failure> {
    let cfg = load(common)?;
    let topo = Arc::new(cfg.build_topology()?);
    let dir = out_dir(common);
    let (rows, cc, trace, windows) = match cfg.harness.mode {
        HarnessMode::Impact => {
            let o = run_impact(&cfg, &topo)?;
            let s = &o.contended.stats;
            let row = ReportRow {
                cell: 0,
                params: Vec::new(),
                t_i_ns: o.report.t_i,
                t_c_ns: o.report.t_c,
                c: o.report.c,
                median_ns: s.median,
                p95_ns: s.p95,
                p99_ns: s.p99,
                ci_rel: s.ci95_halfwidth_rel.max(o.isolated.stats.ci95_halfwidth_rel),
                iterations: s.samples.len(),
                unstable: s.unstable || o.isolated.stats.unstable,
                error: None,
            };
            println!("t_i_ns={:.1} t_c_ns={:.1} c={:.4}", o.report.t_i, o.report.t_c, o.report.c);
            (vec![row], Some(o.report), o.contended.trace, o.contended.window_log)
        }
        HarnessMode::Timeseries => {
            let o = run_timeseries(&cfg, &topo)?;
            let text = csv_text(|b| report::write_series(&o.points, b))?;
            write(&dir.join("series.csv"), &text)?;
            (Vec::new(), None, o.trace, o.window_log)
        }
    };
    if cfg.harness.mode == HarnessMode::Impact {
        write(&dir.join("report.csv"), &report::report_to_string(&rows))?;
    }
    if let Some(t) = trace {
        write(&dir.join("trace.csv"), &csv_text(|b| report::write_trace(&t, b))?)?;
    }
    if cfg.cc.window_log {
        write(&dir.join("windows.csv"), &csv_text(|b| report::write_window_log(&windows, b))?)?;
    }
    let summary = Summary {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        config: &cfg,
        report: cc,
        rows: &rows,
        baseline_hits: 0,
    };
    write(&dir.join("summary.json"), &summary.to_json())
}

fn sweep(common: &Common, jobs: usize) -> Result<(), Failure> {
    let cfg = load(common)?;
    let o = run_sweep(&cfg, jobs)?;
    let dir = out_dir(common);
    write(&dir.join("report.csv"), &report::report_to_string(&o.rows))?;
    let summary = Summary {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        config: &cfg,
        report: None,
        rows: &o.rows,
        baseline_hits: o.baseline_hits,
    };
    write(&dir.join("summary.json"), &summary.to_json())?;
    let failed = o.rows.iter().filter(|r| r.error.is_some()).count();
    println!(
        "cells={} failed={failed} baselines={} baseline_hits={}",
        o.rows.len(),
        o.baselines_computed,
        o.baseline_hits
    );
    Ok(())
}

fn summarize(input: &Path, format: Format, common: &Common) -> Result<(), Failure> {
    let text = fs::read_to_string(input).map_err(|e| Failure::Config(format!("{}: {e}", input.display())))?;
    let rows = report::parse_report(&text).map_err(|e| Failure::Config(e.to_string()))?;
    let body = match format {
        Format::Json => serde_json::to_string_pretty(&rows).map_err(|e| Failure::Runtime(e.to_string()))? + "\n",
        Format::Table => {
            let mut s = format!("{:>5} {:>8} {:>12} {:>12} {:>9}  params\n", "cell", "c", "t_i_ns", "t_c_ns", "ci_rel");
            for r in &rows {
                let params: Vec<String> = r.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
                match &r.error {
                    Some(e) => s += &format!("{:>5} {:>8}  error: {e}  {}\n", r.cell, "-", params.join(" ")),
                    None => {
                        s += &format!(
                            "{:>5} {:>8.4} {:>12.1} {:>12.1} {:>9.4}  {}{}\n",
                            r.cell,
                            r.c,
                            r.t_i_ns,
                            r.t_c_ns,
                            r.ci_rel,
                            params.join(" "),
                            if r.unstable { " (unstable)" } else { "" }
                        )
                    }
                }
            }
            s
        }
    };
    match &common.out {
        Some(p) => write(p, &body),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}
