//! Scenario files: one TOML document describing the fabric, the victim and
//! aggressor workloads, the measurement rule and an optional sweep.

use std::path::{Path as FsPath, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::congestion::CcConfig;
use crate::engine::FrameMode;
use crate::error::ConfigError;
use crate::fabric::{FabricConfig, JobSetup};
use crate::qos::QosConfig;
use crate::routing::RoutingConfig;
use crate::switch::SwitchConfig;
use crate::topology::{build_dragonfly, DragonflyParams, Topology};
use crate::traffic::{allocate_nodes, Allocation, JobRole, WorkloadSpec};

/// Environment variable that selects the victim's traffic class.
pub const TCLASS_ENV: &str = "SIM_TCLASS";

fn d_one() -> usize {
    1
}
fn d_epoch() -> u64 {
    10_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationConfig {
    #[serde(default)]
    pub strategy: Allocation,
    pub victim_nodes: usize,
    #[serde(default)]
    pub aggressor_nodes: usize,
}

/// How a scenario is measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HarnessMode {
    /// Repeat the victim until the stopping rule holds, with and without the
    /// aggressor, and report the congestion impact.
    #[default]
    Impact,
    /// Run every job as a stream for a fixed time and sample bandwidth.
    Timeseries,
}

fn d_min_iter() -> usize {
    200
}
fn d_min_time() -> f64 {
    4.0
}
fn d_scale() -> f64 {
    0.01
}
fn d_ci() -> f64 {
    0.05
}
fn d_resamples() -> usize {
    1000
}
fn d_max_iter() -> usize {
    100_000
}
fn d_limit() -> u64 {
    10_000_000_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    #[serde(default)]
    pub mode: HarnessMode,
    #[serde(default = "d_min_iter")]
    pub min_iterations: usize,
    /// Minimum victim runtime in seconds before `time_scale` is applied.
    #[serde(default = "d_min_time")]
    pub min_time_s: f64,
    #[serde(default = "d_scale")]
    pub time_scale: f64,
    /// Largest accepted 95% CI half-width of the median, relative to it.
    #[serde(default = "d_ci")]
    pub ci_rel: f64,
    #[serde(default = "d_resamples")]
    pub resamples: usize,
    #[serde(default = "d_max_iter")]
    pub max_iterations: usize,
    /// Simulated-time cap for one run.
    #[serde(default = "d_limit")]
    pub time_limit_ns: u64,
    /// Timeseries mode: how long to run.
    #[serde(default)]
    pub duration_ns: Option<u64>,
    /// Timeseries mode: sampling window.
    #[serde(default)]
    pub window_ns: Option<u64>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            mode: HarnessMode::Impact,
            min_iterations: d_min_iter(),
            min_time_s: d_min_time(),
            time_scale: d_scale(),
            ci_rel: d_ci(),
            resamples: d_resamples(),
            max_iterations: d_max_iter(),
            time_limit_ns: d_limit(),
            duration_ns: None,
            window_ns: None,
        }
    }
}

impl HarnessConfig {
    /// Simulated victim time the stopping rule requires.
    pub fn min_time_ns(&self) -> u64 {
        (self.min_time_s * self.time_scale * 1e9).round() as u64
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.min_iterations == 0 || self.max_iterations < self.min_iterations {
            return bad("harness: need 0 < min_iterations <= max_iterations");
        }
        if !(self.min_time_s >= 0.0 && self.time_scale > 0.0 && self.time_scale.is_finite()) {
            return bad("harness: min_time_s must be >= 0 and time_scale positive");
        }
        if !(self.ci_rel > 0.0 && self.ci_rel.is_finite()) || self.resamples == 0 {
            return bad("harness: ci_rel and resamples must be positive");
        }
        if self.mode == HarnessMode::Timeseries {
            match (self.duration_ns, self.window_ns) {
                (Some(d), Some(w)) if d > 0 && w > 0 => {}
                _ => return bad("harness: timeseries mode needs positive duration_ns and window_ns"),
            }
        }
        Ok(())
    }
}

/// One swept parameter: a dotted key into the scenario and its values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub key: String,
    pub values: Vec<toml::Value>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axes: Vec<SweepAxis>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub frame_mode: FrameMode,
    /// Concurrent copies of the aggressor pattern on every aggressor node.
    #[serde(default = "d_one")]
    pub ppn: usize,
    #[serde(default = "d_epoch")]
    pub qos_epoch_ns: u64,
    /// Adjacency file to load instead of generating from `topology`.
    #[serde(default)]
    pub topology_file: Option<PathBuf>,
    #[serde(default)]
    pub topology: Option<DragonflyParams>,
    #[serde(default)]
    pub switch: SwitchConfig,
    #[serde(default)]
    pub routing: RoutingConfig,
    #[serde(default)]
    pub cc: CcConfig,
    #[serde(default)]
    pub qos: QosConfig,
    pub victim: WorkloadSpec,
    #[serde(default)]
    pub aggressor: Option<WorkloadSpec>,
    pub allocation: AllocationConfig,
    #[serde(default)]
    pub harness: HarnessConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Reads, parses and validates a scenario file; a relative
    /// `topology_file` is resolved against the file's directory.
    pub fn load(path: &FsPath) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(f), Some(dir)) = (cfg.topology_file.as_mut(), path.parent()) {
            if f.is_relative() {
                *f = dir.join(&*f);
            }
        }
        cfg.apply_tclass(std::env::var(TCLASS_ENV).ok().as_deref())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Applies a `SIM_TCLASS` value to the victim.
    pub fn apply_tclass(&mut self, value: Option<&str>) -> Result<(), ConfigError> {
        let Some(v) = value else { return Ok(()) };
        let class: u8 = v
            .trim()
            .parse()
            .map_err(|_| ConfigError::Invalid(format!("{TCLASS_ENV}={v} is not a class id")))?;
        self.victim.tclass = Some(class);
        self.victim.dscp = None;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        match (&self.topology, &self.topology_file) {
            (Some(p), None) => p.validate()?,
            (None, Some(_)) => {}
            _ => return bad("give exactly one of [topology] or topology_file".into()),
        }
        if self.ppn == 0 {
            return bad("ppn must be at least 1".into());
        }
        self.fabric_config().validate()?;
        self.harness.validate()?;
        let a = &self.allocation;
        self.victim.validate(a.victim_nodes)?;
        match &self.aggressor {
            Some(g) => g.validate(a.aggressor_nodes)?,
            None if a.aggressor_nodes > 0 => {
                return bad("aggressor_nodes given without an [aggressor]".into())
            }
            None => {}
        }
        for spec in std::iter::once(&self.victim).chain(self.aggressor.as_ref()) {
            self.resolve_dscp(spec)?;
        }
        if let Some(p) = &self.topology {
            let n = p.num_groups * p.switches_per_group * p.endpoints_per_switch;
            if a.victim_nodes + a.aggressor_nodes > n {
                return bad(format!(
                    "split {}+{} exceeds {n} endpoints",
                    a.victim_nodes, a.aggressor_nodes
                ));
            }
        }
        if let Some(s) = &self.sweep {
            if s.axes.is_empty() || s.axes.iter().any(|x| x.values.is_empty()) {
                return bad("sweep needs at least one axis and every axis a value".into());
            }
        }
        Ok(())
    }

    /// The DSCP a workload's packets carry.
    pub fn resolve_dscp(&self, spec: &WorkloadSpec) -> Result<Option<u8>, ConfigError> {
        if let Some(d) = spec.dscp {
            if d > 63 {
                return Err(ConfigError::Invalid(format!("dscp {d} out of range")));
            }
            return Ok(Some(d));
        }
        match spec.tclass {
            None => Ok(None),
            Some(c) => self
                .qos
                .dscp_for(c)
                .map(Some)
                .ok_or_else(|| ConfigError::Invalid(format!("traffic class {c} has no dscp value"))),
        }
    }

    pub fn fabric_config(&self) -> FabricConfig {
        FabricConfig {
            switch: self.switch.clone(),
            routing: self.routing.clone(),
            cc: self.cc.clone(),
            qos: self.qos.clone(),
            frame_mode: self.frame_mode,
            seed: self.seed,
            qos_epoch_ns: self.qos_epoch_ns,
            series_window_ns: match self.harness.mode {
                HarnessMode::Timeseries => self.harness.window_ns,
                HarnessMode::Impact => None,
            },
            record_latency: false,
        }
    }

    pub fn build_topology(&self) -> Result<Topology, ConfigError> {
        match (&self.topology, &self.topology_file) {
            (Some(p), _) => Ok(build_dragonfly(p)?),
            (None, Some(f)) => {
                let text = std::fs::read_to_string(f)
                    .map_err(|e| ConfigError::Parse(format!("{}: {e}", f.display())))?;
                Ok(Topology::from_adjacency(&text)?)
            }
            (None, None) => Err(ConfigError::Invalid("no topology given".into())),
        }
    }

    /// Jobs for one run: the victim first, then `ppn` aggressor copies when
    /// `with_aggressor` is set. Streaming roles are used in timeseries mode.
    pub fn jobs(&self, topo: &Topology, with_aggressor: bool) -> Result<Vec<JobSetup>, ConfigError> {
        let a = &self.allocation;
        let (v, g) = allocate_nodes(
            a.strategy,
            a.victim_nodes,
            a.aggressor_nodes,
            topo.num_endpoints(),
            self.seed,
        )?;
        let victim_role = match self.harness.mode {
            HarnessMode::Impact => JobRole::Victim,
            HarnessMode::Timeseries => JobRole::Background,
        };
        let mut jobs = vec![JobSetup {
            spec: self.victim.clone(),
            role: victim_role,
            nodes: v,
            dscp: self.resolve_dscp(&self.victim)?,
        }];
        if let (true, Some(spec)) = (with_aggressor, &self.aggressor) {
            let dscp = self.resolve_dscp(spec)?;
            for _ in 0..self.ppn {
                jobs.push(JobSetup {
                    spec: spec.clone(),
                    role: JobRole::Background,
                    nodes: g.clone(),
                    dscp,
                });
            }
        }
        Ok(jobs)
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("scenario serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The scenario with `key` (dotted path) set to `value`.
    pub fn with_override(&self, key: &str, value: &toml::Value) -> Result<Self, ConfigError> {
        let mut root = toml::Value::try_from(self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = node
                .as_table_mut()
                .ok_or_else(|| ConfigError::Invalid(format!("sweep key `{key}`: `{part}` is not a section")))?;
            if i + 1 == parts.len() {
                table.insert(part.to_string(), value.clone());
                break;
            }
            node = table
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        }
        let out: ScenarioConfig = root
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(format!("sweep key `{key}`: {e}")))?;
        out.validate()?;
        Ok(out)
    }

    /// Cartesian product of the sweep axes, first axis slowest.
    pub fn sweep_cells(&self) -> Vec<Vec<(String, toml::Value)>> {
        let Some(s) = &self.sweep else {
            return vec![Vec::new()];
        };
        let mut cells = vec![Vec::new()];
        for axis in &s.axes {
            cells = cells
                .into_iter()
                .flat_map(|c: Vec<(String, toml::Value)>| {
                    axis.values.iter().map(move |v| {
                        let mut c = c.clone();
                        c.push((axis.key.clone(), v.clone()));
                        c
                    })
                })
                .collect();
        }
        cells
    }
}
