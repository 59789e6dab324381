//! Deterministic simulation of IPv4/IPv6 tunneling (6to4, Teredo, ISATAP)
//! with the measurement and ranking pipeline on top.

pub mod addressing;
pub mod codec;
pub mod netsim;
pub mod tunnel;
pub mod config;
pub mod metrics;
pub mod scenario;
pub mod traffic;
