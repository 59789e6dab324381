use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::addressing::{self, V4Addr, V6Addr};
use crate::tunnel::{Protocol, TunnelRole};

/// Per-operation processing times of a node, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcessingCosts {
    pub forward: f64,
    pub encap_base: f64,
    /// Added once per header the carrier adds (Teredo adds two).
    pub encap_per_layer: f64,
    /// Per 1000 bytes of the packet being wrapped.
    pub encap_per_kb: f64,
    pub decap_base: f64,
    pub decap_per_layer: f64,
    /// Per 1000 bytes of the packet being unwrapped.
    pub decap_per_kb: f64,
    /// NAT translation through an existing binding.
    pub nat_translate: f64,
    /// Per 1000 bytes translated (checksum rewrite).
    pub nat_per_kb: f64,
    /// NAT translation that has to create the binding first.
    pub nat_new_binding: f64,
    pub dns_lookup: f64,
    /// Tunnel server handling one setup message.
    pub setup: f64,
    /// Tunnel server handling one refresh.
    pub refresh: f64,
}

impl Default for ProcessingCosts {
    fn default() -> Self {
        ProcessingCosts {
            forward: 0.001,
            encap_base: 0.002,
            encap_per_layer: 0.002,
            encap_per_kb: 0.0,
            decap_base: 0.002,
            decap_per_layer: 0.002,
            decap_per_kb: 0.0,
            nat_translate: 0.002,
            nat_per_kb: 0.0,
            nat_new_binding: 0.05,
            dns_lookup: 0.5,
            setup: 0.5,
            refresh: 0.5,
        }
    }
}

impl ProcessingCosts {
    /// Wrapping a `bytes`-long IPv6 packet in `layers` headers.
    pub fn encap(&self, layers: u32, bytes: usize) -> f64 {
        self.encap_base + self.encap_per_layer * f64::from(layers) + self.encap_per_kb * kb(bytes)
    }

    /// Unwrapping back to a `bytes`-long IPv6 packet.
    pub fn decap(&self, layers: u32, bytes: usize) -> f64 {
        self.decap_base + self.decap_per_layer * f64::from(layers) + self.decap_per_kb * kb(bytes)
    }

    pub fn nat(&self, new_binding: bool, bytes: usize) -> f64 {
        let base = if new_binding { self.nat_new_binding } else { self.nat_translate };
        base + self.nat_per_kb * kb(bytes)
    }

    pub fn all_finite_nonneg(&self) -> bool {
        [
            self.forward,
            self.encap_base,
            self.encap_per_layer,
            self.encap_per_kb,
            self.decap_base,
            self.decap_per_layer,
            self.decap_per_kb,
            self.nat_translate,
            self.nat_per_kb,
            self.nat_new_binding,
            self.dns_lookup,
            self.setup,
            self.refresh,
        ]
        .iter()
        .all(|c| c.is_finite() && *c >= 0.0)
    }
}

/// Partial cost table layered over a base one.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostOverrides {
    pub forward: Option<f64>,
    pub encap_base: Option<f64>,
    pub encap_per_layer: Option<f64>,
    pub encap_per_kb: Option<f64>,
    pub decap_base: Option<f64>,
    pub decap_per_layer: Option<f64>,
    pub decap_per_kb: Option<f64>,
    pub nat_translate: Option<f64>,
    pub nat_per_kb: Option<f64>,
    pub nat_new_binding: Option<f64>,
    pub dns_lookup: Option<f64>,
    pub setup: Option<f64>,
    pub refresh: Option<f64>,
}

impl CostOverrides {
    pub fn apply(&self, base: ProcessingCosts) -> ProcessingCosts {
        ProcessingCosts {
            forward: self.forward.unwrap_or(base.forward),
            encap_base: self.encap_base.unwrap_or(base.encap_base),
            encap_per_layer: self.encap_per_layer.unwrap_or(base.encap_per_layer),
            encap_per_kb: self.encap_per_kb.unwrap_or(base.encap_per_kb),
            decap_base: self.decap_base.unwrap_or(base.decap_base),
            decap_per_layer: self.decap_per_layer.unwrap_or(base.decap_per_layer),
            decap_per_kb: self.decap_per_kb.unwrap_or(base.decap_per_kb),
            nat_translate: self.nat_translate.unwrap_or(base.nat_translate),
            nat_per_kb: self.nat_per_kb.unwrap_or(base.nat_per_kb),
            nat_new_binding: self.nat_new_binding.unwrap_or(base.nat_new_binding),
            dns_lookup: self.dns_lookup.unwrap_or(base.dns_lookup),
            setup: self.setup.unwrap_or(base.setup),
            refresh: self.refresh.unwrap_or(base.refresh),
        }
    }
}

fn kb(bytes: usize) -> f64 {
    bytes as f64 / 1000.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stack {
    V4,
    V6,
    Dual,
}

impl Stack {
    pub fn has_v4(self) -> bool {
        self != Stack::V6
    }

    pub fn has_v6(self) -> bool {
        self != Stack::V4
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NatSpec {
    pub external: V4Addr,
    #[serde(default = "default_first_port")]
    pub first_port: u16,
}

fn default_first_port() -> u16 {
    40000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub name: String,
    pub stack: Stack,
    #[serde(default)]
    pub v4: Vec<V4Addr>,
    #[serde(default)]
    pub v6: Vec<V6Addr>,
    #[serde(default)]
    pub tunnel: Option<TunnelRole>,
    #[serde(default)]
    pub nat: Option<NatSpec>,
    /// Name of the private-side neighbour when `nat` is set.
    #[serde(default)]
    pub nat_inside: Option<String>,
    /// Host name to node name; a node with records answers DNS queries.
    #[serde(default)]
    pub dns_records: BTreeMap<String, String>,
    #[serde(default)]
    pub costs: CostOverrides,
}

impl NodeSpec {
    pub fn new(name: &str, stack: Stack) -> Self {
        NodeSpec {
            name: name.to_string(),
            stack,
            v4: Vec::new(),
            v6: Vec::new(),
            tunnel: None,
            nat: None,
            nat_inside: None,
            dns_records: BTreeMap::new(),
            costs: CostOverrides::default(),
        }
    }

    fn with_v4(mut self, a: V4Addr) -> Self {
        self.v4.push(a);
        self
    }

    fn with_v6(mut self, a: V6Addr) -> Self {
        self.v6.push(a);
        self
    }

    fn with_tunnel(mut self, t: TunnelRole) -> Self {
        self.tunnel = Some(t);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkParams {
    pub delay_ms: f64,
    /// Serialization rate in bits per millisecond.
    pub rate_bits_per_ms: f64,
    pub mtu: usize,
}

impl Default for LinkParams {
    fn default() -> Self {
        LinkParams { delay_ms: 0.0005, rate_bits_per_ms: 400_000.0, mtu: 1600 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub a: String,
    pub b: String,
    #[serde(flatten)]
    pub params: LinkParams,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<LinkSpec>,
}

/// Costs and link parameters shared by every node and link of a profile,
/// plus per-node overrides keyed by node name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Calibration {
    pub link: LinkParams,
    pub costs: ProcessingCosts,
    pub nodes: BTreeMap<String, CostOverrides>,
}

impl Calibration {
    pub fn costs_for(&self, node: &NodeSpec) -> ProcessingCosts {
        let base = self.nodes.get(&node.name).map_or(self.costs, |o| o.apply(self.costs));
        node.costs.apply(base)
    }
}

pub mod addr {
    use super::*;

    pub const SENDER_V4: V4Addr = V4Addr::new(192, 168, 1, 10);
    pub const SENDER_PRIVATE_V4: V4Addr = V4Addr::new(10, 0, 0, 2);
    pub const NAT_EXTERNAL_V4: V4Addr = V4Addr::new(192, 0, 2, 45);
    pub const R1_V4: V4Addr = V4Addr::new(198, 51, 100, 1);
    pub const INET_V4: V4Addr = V4Addr::new(203, 0, 113, 1);
    pub const R2_V4: V4Addr = V4Addr::new(203, 0, 113, 254);
    pub const RELAY_V4: V4Addr = V4Addr::new(192, 88, 99, 1);
    pub const TEREDO_SERVER_V4: V4Addr = V4Addr::new(65, 54, 227, 120);
    pub const DNS_V4: V4Addr = V4Addr::new(198, 51, 100, 53);
    pub const TEREDO_CLIENT_PORT: u16 = 50000;

    pub const ISATAP_PREFIX: V6Addr = V6Addr(0x2001_0db8_0002_0000_0000_0000_0000_0000);
    pub const SENDER_V6: V6Addr = V6Addr(0x2001_0db8_0001_0000_0000_0000_0000_0010);
    pub const RECEIVER_V6: V6Addr = V6Addr(0x2001_0db8_0003_0000_0000_0000_0000_0010);
    pub const R2_V6: V6Addr = V6Addr(0x2001_0db8_0003_0000_0000_0000_0000_0001);
    pub const RELAY_V6: V6Addr = V6Addr(0x2001_0db8_0003_0000_0000_0000_0000_0002);
    pub const R1_V6: V6Addr = V6Addr(0x2001_0db8_0001_0000_0000_0000_0000_0001);
    pub const INET_V6: V6Addr = V6Addr(0x2001_0db8_00ff_0000_0000_0000_0000_0001);
    pub const DNS_V6: V6Addr = V6Addr(0x2001_0db8_0053_0000_0000_0000_0000_0053);
}

pub const RECEIVER_HOSTNAME: &str = "receiver.example";

/// The built-in sender / receiver topology, with the tunnel roles of
/// `protocol` filled in. `nat` puts a NAT between the sender and its first
/// router.
pub fn hybrid(protocol: Protocol, nat: bool, link: LinkParams) -> Topology {
    use addr::*;

    let sender_v4 = if nat { SENDER_PRIVATE_V4 } else { SENDER_V4 };
    let dual = protocol == Protocol::Baseline;
    let core_stack = if dual { Stack::Dual } else { Stack::V4 };

    let mut sender = NodeSpec::new("sender", Stack::Dual).with_v4(sender_v4);
    let mut r1 = NodeSpec::new("r1", core_stack).with_v4(R1_V4);
    let mut inet = NodeSpec::new("inet", core_stack).with_v4(INET_V4);
    let mut r2 = NodeSpec::new("r2", Stack::Dual).with_v4(R2_V4).with_v6(R2_V6);
    let receiver = NodeSpec::new("receiver", Stack::V6).with_v6(RECEIVER_V6);
    let mut dns = NodeSpec::new("dns", Stack::Dual).with_v4(DNS_V4).with_v6(DNS_V6);
    dns.dns_records.insert(RECEIVER_HOSTNAME.to_string(), "receiver".to_string());

    let mut extra = Vec::new();
    let mut extra_links = Vec::new();
    match protocol {
        Protocol::Baseline => {
            sender = sender.with_v6(SENDER_V6);
            r1 = r1.with_v6(R1_V6);
            inet = inet.with_v6(INET_V6);
        }
        Protocol::Isatap => {
            sender = sender.with_tunnel(TunnelRole::IsatapHost { router: "r2".into() });
            r2 = r2.with_tunnel(TunnelRole::IsatapRouter { prefix: ISATAP_PREFIX });
        }
        Protocol::SixToFour => {
            sender = sender.with_tunnel(TunnelRole::SixToFourHost { router: "r1".into(), interface_id: 1 });
            r1 = NodeSpec { stack: Stack::Dual, ..r1 }
                .with_v6(addressing::synth_6to4_host(R1_V4, 0xffff))
                .with_tunnel(TunnelRole::SixToFourRouter { relay: Some("relay".into()) });
            r2 = r2.with_tunnel(TunnelRole::SixToFourRouter { relay: None });
            extra.push(
                NodeSpec::new("relay", Stack::Dual)
                    .with_v4(RELAY_V4)
                    .with_v6(RELAY_V6)
                    .with_tunnel(TunnelRole::SixToFourRelay),
            );
            extra_links.push(("inet", "relay"));
            extra_links.push(("relay", "r2"));
        }
        Protocol::Teredo => {
            sender = sender.with_tunnel(TunnelRole::TeredoClient {
                server: "teredo_server".into(),
                relay: "r2".into(),
                port: TEREDO_CLIENT_PORT,
            });
            r2 = r2.with_tunnel(TunnelRole::TeredoRelay);
            extra.push(
                NodeSpec::new("teredo_server", Stack::V4)
                    .with_v4(TEREDO_SERVER_V4)
                    .with_tunnel(TunnelRole::TeredoServer),
            );
            extra_links.push(("r1", "teredo_server"));
        }
    }

    let mut nodes = vec![sender];
    let mut links: Vec<(&str, &str)> = Vec::new();
    if nat {
        let mut n = NodeSpec::new("nat", Stack::V4).with_v4(NAT_EXTERNAL_V4);
        n.nat = Some(NatSpec { external: NAT_EXTERNAL_V4, first_port: default_first_port() });
        n.nat_inside = Some("sender".into());
        nodes.push(n);
        links.push(("sender", "nat"));
        links.push(("nat", "r1"));
    } else {
        links.push(("sender", "r1"));
    }
    nodes.extend([r1, inet, r2, receiver, dns]);
    nodes.extend(extra);
    links.extend([("r1", "inet"), ("inet", "r2"), ("r2", "receiver"), ("r1", "dns")]);
    links.extend(extra_links);

    Topology {
        nodes,
        links: links
            .into_iter()
            .map(|(a, b)| LinkSpec { a: a.into(), b: b.into(), params: link })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_layer() {
        let mut c = Calibration::default();
        c.nodes.insert("r2".into(), CostOverrides { forward: Some(1.0), ..Default::default() });
        let mut n = NodeSpec::new("r2", Stack::Dual);
        assert_eq!(c.costs_for(&n).forward, 1.0);
        n.costs.forward = Some(2.0);
        assert_eq!(c.costs_for(&n).forward, 2.0);
        assert_eq!(c.costs_for(&n).setup, c.costs.setup);
    }

    #[test]
    fn teredo_encap_costs_more() {
        let c = ProcessingCosts::default();
        assert!(c.encap(Protocol::Teredo.encap_layers(), 1540) > c.encap(Protocol::Isatap.encap_layers(), 1540));
    }

    #[test]
    fn hybrid_shapes() {
        for p in [Protocol::Baseline, Protocol::Isatap, Protocol::SixToFour, Protocol::Teredo] {
            let t = hybrid(p, p == Protocol::Teredo, LinkParams::default());
            for l in &t.links {
                assert!(t.nodes.iter().any(|n| n.name == l.a), "{p}: {}", l.a);
                assert!(t.nodes.iter().any(|n| n.name == l.b), "{p}: {}", l.b);
            }
        }
    }
}
