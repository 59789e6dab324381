#![allow(dead_code)]

use tunsim_core::config::{self, ScenarioConfig};

/// A hybrid-topology scenario with a short audio stream and a few pings.
pub fn short(protocol: &str, nat: bool, audio_s: f64, pings: u32) -> ScenarioConfig {
    let text = format!(
        r#"name = "short-{protocol}"
protocol = "{protocol}"
replications = 1

[topology]
nat = {nat}

[[flows]]
name = "audio"
kind = "udp_stream"
src = "sender"
dst = "receiver"
preset = "audio"
duration_s = {audio_s:?}

[[flows]]
name = "ping"
kind = "ping"
src = "sender"
dst = "receiver"
count = {pings}
interval_ms = 1000.0
start_ms = 12.5
"#
    );
    config::parse("short.toml", &text, |n| config::builtin(n).map(|s| (n.to_string(), s.to_string())))
        .unwrap_or_else(|e| panic!("{e}"))
}

pub const TUNNELED: [&str; 3] = ["isatap", "6to4", "teredo"];
pub const ALL: [&str; 4] = ["isatap", "6to4", "teredo", "baseline"];

pub fn needs_nat(protocol: &str) -> bool {
    protocol == "teredo"
}
