use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_slingsim"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("slingsim-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &str = r#"
seed = 3
[topology]
groups = 2
switches_per_group = 2
endpoints_per_switch = 2
[victim]
kind = "pingpong"
msg_bytes = 64
[aggressor]
kind = "incast"
msg_bytes = 4096
[allocation]
victim_nodes = 2
aggressor_nodes = 4
[harness]
min_iterations = 50
min_time_s = 0.0
ci_rel = 0.5
"#;

fn tiny(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, format!("{TINY}{extra}")).unwrap();
    p
}

#[test]
fn validates_shipped_configs() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let o = bin().arg("validate").arg("--config").arg(&path).output().unwrap();
        assert!(o.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).starts_with("ok "));
    }
}

#[test]
fn max_scale_topology_info() {
    let o = bin()
        .args(["topo-info", "--radix", "64", "--endpoints-per-switch", "16"])
        .output()
        .unwrap();
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("groups=545") && s.contains("endpoints=279040"), "{s}");
}

#[test]
fn unknown_flag_exits_one_with_usage() {
    let o = bin().args(["run", "--frobnicate"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert!(o.stdout.is_empty());
}

#[test]
fn invalid_config_exits_one_without_running() {
    let dir = scratch("invalid");
    let cfg = tiny(&dir, "[cc]\ndecrease = 1.5\n");
    let out = dir.join("out");
    let o = bin().arg("run").arg("--config").arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn runtime_failure_exits_two() {
    let dir = scratch("stall");
    let cfg = tiny(&dir, "time_limit_ns = 3\n");
    let o = bin().arg("run").arg("--config").arg(&cfg).arg("--out").arg(dir.join("o")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_is_deterministic_and_announces_outputs() {
    let dir = scratch("det");
    let cfg = tiny(&dir, "");
    let mut reports = Vec::new();
    for k in 0..2 {
        let out = dir.join(format!("o{k}"));
        let o = bin()
            .arg("run")
            .arg("--config")
            .arg(&cfg)
            .args(["--seed", "42", "--out"])
            .arg(&out)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let s = stdout(&o);
        for f in ["report.csv", "summary.json"] {
            let p = out.join(f);
            assert!(p.exists());
            assert!(s.contains(&format!("wrote {}", p.display())), "{s}");
        }
        reports.push(std::fs::read(out.join("report.csv")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);

    let o = bin().arg("report").arg(dir.join("o0/report.csv")).args(["--format", "json"]).output().unwrap();
    assert!(o.status.success());
    assert!(stdout(&o).contains("\"t_i_ns\""));
}

#[test]
fn seed_flag_changes_the_run() {
    let dir = scratch("seed");
    let cfg = tiny(&dir, "");
    let run = |seed: &str, name: &str| {
        let out = dir.join(name);
        let o = bin().arg("run").arg("--config").arg(&cfg).args(["--seed", seed, "--out"]).arg(&out).output().unwrap();
        assert!(o.status.success());
        std::fs::read_to_string(out.join("summary.json")).unwrap()
    };
    let a = run("1", "a");
    let b = run("2", "b");
    assert!(a.contains("\"seed\": 1") && b.contains("\"seed\": 2"));
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let dir = scratch("sweep");
    let cfg = tiny(&dir, "[[sweep.axes]]\nkey = \"aggressor.msg_bytes\"\nvalues = [64, 4096]\n");
    let out = dir.join("o");
    let o = bin()
        .arg("sweep")
        .arg("--config")
        .arg(&cfg)
        .args(["--jobs", "2", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(stdout(&o).contains("baselines=1 baseline_hits=1"), "{}", stdout(&o));
}

#[test]
fn topology_file_roundtrip() {
    let dir = scratch("topo");
    let adj = dir.join("net.adj");
    let o = bin()
        .args(["topo-build", "--groups", "8", "--switches-per-group", "4", "--endpoints-per-switch", "2", "--global-links", "8", "--out"])
        .arg(&adj)
        .output()
        .unwrap();
    assert!(o.status.success());
    let o = bin().arg("topo-info").arg("--topology-file").arg(&adj).output().unwrap();
    let s = stdout(&o);
    assert!(s.contains("groups=8") && s.contains("bisection_gbps=51200") && s.contains("all_to_all_gbps=102400"), "{s}");
}
