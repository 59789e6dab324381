//! Scenario and calibration files (TOML).
//!
//! A scenario names the protocol, the topology (built-in `hybrid` profile or
//! inline nodes and links), a calibration profile, the traffic plan and the
//! replication count. Semantic errors point at the line of the offending key.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addressing::{self, V6Addr};
use crate::netsim::{hybrid, Calibration, CostOverrides, LinkParams, ProcessingCosts, Topology, RECEIVER_HOSTNAME};
use crate::traffic::{FlowKind, FlowPlan};
use crate::tunnel::Protocol;

pub const DEFAULT_CALIBRATION: &str = "paper-default";

/// Scenario files shipped with the crate, used when no file of that name is
/// found on disk.
pub const BUILTIN: &[(&str, &str)] = &[
    ("paper-default", include_str!("../../../scenarios/paper-default.toml")),
    ("isatap-default", include_str!("../../../scenarios/isatap-default.toml")),
    ("6to4-default", include_str!("../../../scenarios/6to4-default.toml")),
    ("teredo-default", include_str!("../../../scenarios/teredo-default.toml")),
    ("baseline-default", include_str!("../../../scenarios/baseline-default.toml")),
];

#[derive(Debug, Error)]
pub struct ConfigError {
    pub source_name: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{}: {}", self.source_name, l, self.message),
            None => write!(f, "{}: {}", self.source_name, self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    /// `hybrid` or `inline`.
    #[serde(default = "default_profile")]
    pub profile: String,
    /// Put a NAT in front of the sender (hybrid only).
    #[serde(default)]
    pub nat: bool,
    #[serde(default)]
    pub nodes: Vec<crate::netsim::NodeSpec>,
    #[serde(default)]
    pub links: Vec<crate::netsim::LinkSpec>,
}

fn default_profile() -> String {
    "hybrid".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunPlan {
    /// Node that sets up the tunnel, queries DNS and originates flows.
    #[serde(default = "default_sender")]
    pub sender: String,
    #[serde(default = "default_dns_name")]
    pub dns_name: String,
    #[serde(default = "default_dns_at")]
    pub dns_at_ms: f64,
    /// Traffic start; flow `start_ms` offsets count from here.
    #[serde(default = "default_epoch")]
    pub traffic_epoch_ms: f64,
}

fn default_sender() -> String {
    "sender".into()
}
fn default_dns_name() -> String {
    RECEIVER_HOSTNAME.into()
}
fn default_dns_at() -> f64 {
    50.0
}
fn default_epoch() -> f64 {
    100.0
}

impl Default for RunPlan {
    fn default() -> Self {
        RunPlan {
            sender: default_sender(),
            dns_name: default_dns_name(),
            dns_at_ms: default_dns_at(),
            traffic_epoch_ms: default_epoch(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    protocol: Protocol,
    #[serde(default = "default_calibration")]
    calibration: String,
    #[serde(default = "one")]
    replications: u32,
    #[serde(default = "one_u64")]
    base_seed: u64,
    #[serde(default = "default_max_events")]
    max_events: u64,
    #[serde(default)]
    teredo_prefix: Option<V6Addr>,
    #[serde(default)]
    output_dir: Option<PathBuf>,
    #[serde(default)]
    topology: Option<TopologyConfig>,
    #[serde(default)]
    run: Option<RunPlan>,
    #[serde(default)]
    flows: Vec<FlowPlan>,
}

fn default_calibration() -> String {
    DEFAULT_CALIBRATION.into()
}
fn one() -> u32 {
    1
}
fn one_u64() -> u64 {
    1
}
fn default_max_events() -> u64 {
    20_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCalibration {
    name: String,
    #[serde(default)]
    link: LinkParams,
    #[serde(default)]
    costs: ProcessingCosts,
    #[serde(default)]
    nodes: std::collections::BTreeMap<String, CostOverrides>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub protocol: Protocol,
    pub calibration_name: String,
    pub calibration: Calibration,
    pub replications: u32,
    pub base_seed: u64,
    pub max_events: u64,
    pub teredo_prefix: u32,
    pub output_dir: Option<PathBuf>,
    pub topology: Topology,
    /// Whether a NAT sits in front of the sender.
    pub nat: bool,
    pub run: RunPlan,
    pub flows: Vec<FlowPlan>,
    /// Canonical text the config hash is taken over.
    pub canonical: String,
}

impl ScenarioConfig {
    /// The all-dual-stack counterpart used for the untunneled RTT: same
    /// calibration, ping flows only.
    pub fn baseline_variant(&self) -> ScenarioConfig {
        let mut b = self.clone();
        b.name = format!("{}-baseline", self.name);
        b.protocol = Protocol::Baseline;
        b.nat = false;
        b.topology = hybrid(Protocol::Baseline, false, self.calibration.link);
        b.flows.retain(|f| f.kind == FlowKind::Ping);
        b
    }
}

/// Text of a built-in scenario or calibration.
pub fn builtin(name: &str) -> Option<&'static str> {
    BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Resolves `name_or_path`: an existing file, `scenarios/<name>.toml` under
/// the current directory or `search_dir`, or a built-in.
pub fn locate(name_or_path: &str, search_dir: Option<&Path>) -> Option<(String, String)> {
    let p = Path::new(name_or_path);
    if p.is_file() {
        return std::fs::read_to_string(p).ok().map(|s| (p.display().to_string(), s));
    }
    let file = format!("{name_or_path}.toml");
    let mut dirs = vec![PathBuf::from("scenarios")];
    if let Some(d) = search_dir {
        dirs.insert(0, d.to_path_buf());
    }
    for d in dirs {
        let c = d.join(&file);
        if c.is_file() {
            if let Ok(s) = std::fs::read_to_string(&c) {
                return Some((c.display().to_string(), s));
            }
        }
    }
    builtin(name_or_path).map(|s| (format!("<builtin {name_or_path}>"), s.to_string()))
}

/// Loads a scenario by name or path, including its calibration profile.
pub fn load(name_or_path: &str) -> Result<ScenarioConfig, ConfigError> {
    let (source, text) = locate(name_or_path, None).ok_or_else(|| ConfigError {
        source_name: name_or_path.to_string(),
        line: None,
        message: "no such scenario file or built-in".into(),
    })?;
    let dir = Path::new(&source).parent().map(Path::to_path_buf);
    parse(&source, &text, |cal| locate(cal, dir.as_deref()))
}

/// 1-based line of the first line starting with `key` (as `key =` or
/// `[key`), if any.
fn line_of(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let t = l.trim_start();
        t.strip_prefix(key).is_some_and(|r| {
            let r = r.trim_start();
            r.starts_with('=') || r.starts_with(']') || r.starts_with('.')
        }) || t.starts_with(&format!("[{key}")) || t.starts_with(&format!("[[{key}"))
    })
    .map(|i| i + 1)
}

fn toml_error(source: &str, text: &str, e: toml::de::Error) -> ConfigError {
    let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
    ConfigError { source_name: source.to_string(), line, message: e.message().to_string() }
}

pub fn parse_calibration(source: &str, text: &str) -> Result<(String, Calibration), ConfigError> {
    let raw: RawCalibration = toml::from_str(text).map_err(|e| toml_error(source, text, e))?;
    let err = |key: &str, message: String| ConfigError { source_name: source.into(), line: line_of(text, key), message };
    if !raw.costs.all_finite_nonneg() {
        return Err(err("costs", "costs must be finite and non-negative".into()));
    }
    for (node, o) in &raw.nodes {
        if !o.apply(raw.costs).all_finite_nonneg() {
            return Err(err(&format!("nodes.{node}"), format!("costs for {node:?} must be finite and non-negative")));
        }
    }
    let l = raw.link;
    if !(l.delay_ms.is_finite() && l.delay_ms >= 0.0 && l.rate_bits_per_ms.is_finite() && l.rate_bits_per_ms > 0.0) {
        return Err(err("link", "link delay must be >= 0 and rate > 0".into()));
    }
    Ok((raw.name, Calibration { link: raw.link, costs: raw.costs, nodes: raw.nodes }))
}

/// Parses scenario text. `find_calibration` maps a calibration name to
/// `(source, text)`.
pub fn parse(
    source: &str,
    text: &str,
    find_calibration: impl Fn(&str) -> Option<(String, String)>,
) -> Result<ScenarioConfig, ConfigError> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| toml_error(source, text, e))?;
    let err = |key: &str, message: String| ConfigError { source_name: source.into(), line: line_of(text, key), message };

    if raw.replications == 0 {
        return Err(err("replications", "replications must be at least 1".into()));
    }
    if raw.max_events == 0 {
        return Err(err("max_events", "max_events must be positive".into()));
    }
    let (cal_source, cal_text) = find_calibration(&raw.calibration)
        .ok_or_else(|| err("calibration", format!("calibration profile {:?} not found", raw.calibration)))?;
    let (_, calibration) = parse_calibration(&cal_source, &cal_text)?;

    let teredo_prefix = match raw.teredo_prefix {
        None => addressing::TEREDO_DEFAULT_PREFIX,
        Some(p) => {
            if p.0 & ((1u128 << 96) - 1) != 0 {
                return Err(err("teredo_prefix", "Teredo prefix must be a /32".into()));
            }
            (p.0 >> 96) as u32
        }
    };

    let topo_cfg = raw.topology.clone().unwrap_or(TopologyConfig {
        profile: default_profile(),
        nat: false,
        nodes: Vec::new(),
        links: Vec::new(),
    });
    let (topology, nat) = match topo_cfg.profile.as_str() {
        "hybrid" => {
            if !topo_cfg.nodes.is_empty() || !topo_cfg.links.is_empty() {
                return Err(err("topology", "inline nodes/links need profile = \"inline\"".into()));
            }
            (hybrid(raw.protocol, topo_cfg.nat, calibration.link), topo_cfg.nat)
        }
        "inline" => {
            let nat = topo_cfg.nodes.iter().any(|n| n.nat.is_some());
            (Topology { nodes: topo_cfg.nodes.clone(), links: topo_cfg.links.clone() }, nat)
        }
        other => return Err(err("topology", format!("unknown topology profile {other:?}"))),
    };

    match raw.protocol {
        Protocol::Teredo if !nat => {
            return Err(err(
                "topology",
                "a Teredo scenario needs a NAT in front of the client (set topology.nat = true)".into(),
            ));
        }
        Protocol::Baseline if topology.nodes.iter().any(|n| n.tunnel.is_some()) => {
            return Err(err("topology", "the baseline scenario must not configure tunnel roles".into()));
        }
        p if p != Protocol::Baseline => {
            if let Some(n) = topology.nodes.iter().find(|n| n.tunnel.as_ref().is_some_and(|t| t.protocol() != p)) {
                return Err(err("topology", format!("node {:?} has a tunnel role for another protocol", n.name)));
            }
        }
        _ => {}
    }

    let run = raw.run.clone().unwrap_or_default();
    let has = |name: &str| topology.nodes.iter().any(|n| n.name == name);
    if !has(&run.sender) {
        return Err(err("sender", format!("sender node {:?} is not in the topology", run.sender)));
    }
    if !(run.dns_at_ms.is_finite() && run.traffic_epoch_ms.is_finite() && run.dns_at_ms >= 0.0 && run.traffic_epoch_ms >= run.dns_at_ms) {
        return Err(err("run", "need 0 <= dns_at_ms <= traffic_epoch_ms".into()));
    }
    let mut names = std::collections::BTreeSet::new();
    for f in &raw.flows {
        let at = |m: String| err("flows", m);
        f.validate().map_err(|e| at(e.to_string()))?;
        if !names.insert(f.name.as_str()) {
            return Err(at(format!("duplicate flow name {:?}", f.name)));
        }
        for n in [&f.src, &f.dst] {
            if !has(n) {
                return Err(at(format!("flow {:?}: node {n:?} is not in the topology", f.name)));
            }
        }
    }

    let canonical = format!("{text}\n--- calibration {} ---\n{cal_text}", raw.calibration);
    Ok(ScenarioConfig {
        name: raw.name,
        protocol: raw.protocol,
        calibration_name: raw.calibration,
        calibration,
        replications: raw.replications,
        base_seed: raw.base_seed,
        max_events: raw.max_events,
        teredo_prefix,
        output_dir: raw.output_dir,
        topology,
        nat,
        run,
        flows: raw.flows,
        canonical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cal(_: &str) -> Option<(String, String)> {
        builtin(DEFAULT_CALIBRATION).map(|s| ("cal".to_string(), s.to_string()))
    }

    #[test]
    fn builtins_parse() {
        for (name, text) in BUILTIN.iter().filter(|(n, _)| *n != DEFAULT_CALIBRATION) {
            let c = parse(name, text, cal).unwrap_or_else(|e| panic!("{e}"));
            assert_eq!(&c.name, name);
            assert!(c.replications >= 1);
        }
    }

    #[test]
    fn teredo_without_nat_rejected() {
        let text = "name = \"t\"\nprotocol = \"teredo\"\n[topology]\nnat = false\n";
        let e = parse("t.toml", text, cal).unwrap_err();
        assert_eq!(e.line, Some(3));
        assert!(e.to_string().starts_with("t.toml:3:"), "{e}");
    }

    #[test]
    fn syntax_error_has_line() {
        let e = parse("x.toml", "name = \"x\"\nprotocol = \"isatap\"\nreplications = \"many\"\n", cal).unwrap_err();
        assert_eq!(e.line, Some(3));
    }

    #[test]
    fn zero_replications_rejected() {
        let e = parse("x", "name = \"x\"\nprotocol = \"isatap\"\nreplications = 0\n", cal).unwrap_err();
        assert_eq!(e.line, Some(3));
    }

    #[test]
    fn unknown_flow_node_rejected() {
        let text = "name = \"x\"\nprotocol = \"isatap\"\n[[flows]]\nname = \"a\"\nkind = \"ping\"\nsrc = \"sender\"\ndst = \"nowhere\"\ncount = 1\ninterval_ms = 1.0\n";
        let e = parse("x", text, cal).unwrap_err();
        assert_eq!(e.line, Some(3));
    }
}
