use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("causality violation: event scheduled at {requested}ns while clock is at {now}ns")]
    Causality { now: u64, requested: u64 },
    #[error("payload of {0} bytes exceeds the 4096-byte packet limit")]
    PayloadTooLarge(u32),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("invalid dragonfly parameters: {0}")]
    InvalidParams(String),
    #[error("switch {switch} needs {needed} ports, radix is {radix}")]
    PortBudgetExceeded {
        switch: usize,
        needed: usize,
        radix: usize,
    },
    #[error("global links cannot be spread over the groups: {0}")]
    AsymmetricGlobal(String),
    #[error("partition must split the {groups} groups into two equal halves")]
    OddPartition { groups: usize },
    #[error("endpoint {0} does not exist")]
    UnknownEndpoint(usize),
    #[error("topology file line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Error, PartialEq)]
pub enum QosError {
    #[error("minimum bandwidths sum to {0}, more than the link")]
    OverSubscribedMin(f64),
    #[error("dscp {dscp} is mapped by classes {first} and {second}")]
    OverlappingDscp { dscp: u8, first: u8, second: u8 },
    #[error("class {class}: min_bw {min} exceeds max_bw {max}")]
    MinExceedsMax { class: u8, min: f64, max: f64 },
    #[error("class {class}: {msg}")]
    InvalidClass { class: u8, msg: String },
    #[error("default class {0} is not defined")]
    UnknownDefault(u8),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Qos(#[from] QosError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("simulation stalled at {at_ns}ns: {msg}")]
    Stalled { at_ns: u64, msg: String },
    #[error("congestion impact needs a positive isolated time, got {0}")]
    NonPositiveBaseline(f64),
    #[error("report error: {0}")]
    Report(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
