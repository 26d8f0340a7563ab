//! Packet-level simulator of a Dragonfly fabric built from 64-port
//! tile-based switches with adaptive routing, endpoint congestion control
//! and traffic classes.

pub mod config;
pub mod engine;
pub mod error;
pub mod topology;
pub mod qos;
pub mod switch;
pub mod congestion;
pub mod routing;
pub mod traffic;
pub mod fabric;
pub mod harness;
pub mod report;
