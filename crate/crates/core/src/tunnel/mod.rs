//! Tunnel endpoints for 6to4, Teredo and ISATAP.
//!
//! [`TunnelState`] is the client side: setup phase, assigned prefix and the
//! refresh counter. [`TunnelFunction`] is what a node does with an IPv6
//! packet: which IPv4 endpoint (if any) it gets tunneled to, and which
//! carriers the node terminates.

pub mod control;
pub mod nat;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addressing::{self, V4Addr, V6Addr};
use crate::codec::{
    decode, CodecError, Ipv4Header, Layer, Layering, Packet, PacketMeta, UdpHeader, PROTO_IPV6, PROTO_UDP, TEREDO_PORT,
};
use crate::netsim::NodeId;

pub use control::{control_of, control_packet, ControlMsg};
pub use nat::{NatBinding, NatTable, NatVerdict};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TunnelError {
    #[error("tunnel is not established (phase {0:?})")]
    NotEstablished(Phase),
    #[error("inner packet is not native IPv6")]
    NotIpv6,
    #[error("{got:?} carrier does not match {protocol} tunnel")]
    LayeringMismatch { protocol: Protocol, got: Layering },
    #[error("no IPv4 endpoint can be derived for {0}")]
    NoEndpoint(V6Addr),
    #[error("protocol has no tunnel")]
    NoTunnel,
    #[error("malformed tunnel control message")]
    BadControl,
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "6to4")]
    SixToFour,
    #[serde(rename = "teredo")]
    Teredo,
    #[serde(rename = "isatap")]
    Isatap,
    #[serde(rename = "baseline")]
    Baseline,
}

impl Protocol {
    pub const TUNNELED: [Protocol; 3] = [Protocol::Isatap, Protocol::SixToFour, Protocol::Teredo];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::SixToFour => "6to4",
            Protocol::Teredo => "teredo",
            Protocol::Isatap => "isatap",
            Protocol::Baseline => "baseline",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Protocol::SixToFour => "6to4",
            Protocol::Teredo => "Teredo",
            Protocol::Isatap => "ISATAP",
            Protocol::Baseline => "Untunneled",
        }
    }

    /// Bytes added in front of the inner IPv6 packet.
    pub fn overhead_bytes(self) -> usize {
        match self {
            Protocol::SixToFour | Protocol::Isatap => 20,
            Protocol::Teredo => 28,
            Protocol::Baseline => 0,
        }
    }

    /// Headers added by encapsulation.
    pub fn encap_layers(self) -> u32 {
        match self {
            Protocol::SixToFour | Protocol::Isatap => 1,
            Protocol::Teredo => 2,
            Protocol::Baseline => 0,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "6to4" => Ok(Protocol::SixToFour),
            "teredo" => Ok(Protocol::Teredo),
            "isatap" => Ok(Protocol::Isatap),
            "baseline" | "untunneled" => Ok(Protocol::Baseline),
            other => Err(format!("unknown protocol {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Idle,
    SetupPending,
    Established,
}

/// How many data packets pass between tunnel refreshes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefreshPolicy {
    pub protocol: Protocol,
}

impl RefreshPolicy {
    pub const ISATAP_INTERVAL: u32 = 13;
    pub const SIXTO4_INTERVALS: [u32; 2] = [18, 19];
    pub const TEREDO_INTERVAL: u32 = 21;

    /// Interval for the next cycle. 6to4 picks 18 or 19 uniformly each time.
    pub fn draw_interval<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match self.protocol {
            Protocol::Isatap => Self::ISATAP_INTERVAL,
            Protocol::Teredo => Self::TEREDO_INTERVAL,
            Protocol::SixToFour => Self::SIXTO4_INTERVALS[rng.gen_range(0..2)],
            Protocol::Baseline => u32::MAX,
        }
    }
}

/// An IPv4 tunnel endpoint. The port only matters for Teredo.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Endpoint {
    pub v4: V4Addr,
    pub port: u16,
}

impl Endpoint {
    pub const fn new(v4: V4Addr, port: u16) -> Self {
        Endpoint { v4, port }
    }
}

/// Client-side tunnel state.
#[derive(Debug, Clone)]
pub struct TunnelState {
    pub protocol: Protocol,
    pub phase: Phase,
    pub assigned_prefix: Option<V6Addr>,
    /// Address formed from the prefix once the server answered.
    pub address: Option<V6Addr>,
    pub server: NodeId,
    pub server_endpoint: Endpoint,
    pub local: Endpoint,
    /// Source address used for control traffic before a global one exists.
    pub link_local: V6Addr,
    pub data_packets_since_refresh: u32,
    pub refresh_interval: u32,
    pub refreshes_sent: u64,
    policy: RefreshPolicy,
}

impl TunnelState {
    pub fn new(protocol: Protocol, server: NodeId, server_endpoint: Endpoint, local: Endpoint, link_local: V6Addr) -> Self {
        TunnelState {
            protocol,
            phase: Phase::Idle,
            assigned_prefix: None,
            address: None,
            server,
            server_endpoint,
            local,
            link_local,
            data_packets_since_refresh: 0,
            refresh_interval: 0,
            refreshes_sent: 0,
            policy: RefreshPolicy { protocol },
        }
    }

    /// Marks the tunnel usable and draws the first refresh interval.
    pub fn establish<R: Rng + ?Sized>(&mut self, prefix: V6Addr, address: V6Addr, rng: &mut R) {
        self.assigned_prefix = Some(prefix);
        self.address = Some(address);
        self.phase = Phase::Established;
        self.data_packets_since_refresh = 0;
        self.refresh_interval = self.policy.draw_interval(rng);
    }

    pub fn control(&self, msg: ControlMsg, meta: PacketMeta) -> Result<Packet, TunnelError> {
        control_packet(self.protocol, self.local, self.server_endpoint, self.link_local, V6Addr::ALL_ROUTERS, msg, meta)
    }

    /// Counts one data packet. When the count reaches the interval the
    /// counter resets and a refresh packet is returned; the caller must hold
    /// further data until the refresh is acknowledged.
    pub fn on_data_sent<R: Rng + ?Sized>(&mut self, rng: &mut R, meta: PacketMeta) -> Option<Packet> {
        if self.phase != Phase::Established {
            return None;
        }
        self.data_packets_since_refresh += 1;
        if self.data_packets_since_refresh < self.refresh_interval {
            return None;
        }
        self.data_packets_since_refresh = 0;
        self.refresh_interval = self.policy.draw_interval(rng);
        self.refreshes_sent += 1;
        Some(self.control(ControlMsg::Refresh, meta).expect("tunneled protocol"))
    }
}

/// Wraps a native IPv6 packet for `state.protocol`. Only allowed once the
/// tunnel is established.
pub fn encap(p: Packet, state: &TunnelState, local: Endpoint, remote: Endpoint) -> Result<Packet, TunnelError> {
    if state.phase != Phase::Established {
        return Err(TunnelError::NotEstablished(state.phase));
    }
    encap_unchecked(p, state.protocol, local, remote)
}

/// Encapsulation for relays and routers, which have no setup phase.
pub fn encap_unchecked(p: Packet, protocol: Protocol, local: Endpoint, remote: Endpoint) -> Result<Packet, TunnelError> {
    if p.layering()? != Layering::NativeV6 {
        return Err(TunnelError::NotIpv6);
    }
    let Packet { layers, payload, meta } = p;
    let id = meta.packet_id as u16;
    let mut outer = match protocol {
        Protocol::SixToFour | Protocol::Isatap => {
            let mut h = Ipv4Header::new(PROTO_IPV6, local.v4, remote.v4);
            h.identification = id;
            vec![Layer::Ipv4(h)]
        }
        Protocol::Teredo => {
            let mut h = Ipv4Header::new(PROTO_UDP, local.v4, remote.v4);
            h.identification = id;
            vec![Layer::Ipv4(h), Layer::Udp(UdpHeader::new(local.port, remote.port))]
        }
        Protocol::Baseline => return Err(TunnelError::NoTunnel),
    };
    outer.extend(layers);
    Ok(Packet::new(outer, payload, meta)?)
}

/// Strips the carrier `protocol` uses and returns the inner IPv6 packet.
pub fn decap(p: Packet, protocol: Protocol) -> Result<Packet, TunnelError> {
    let got = p.layering()?;
    let strip = match (protocol, got) {
        (Protocol::SixToFour | Protocol::Isatap, Layering::SixInFour) => 1,
        (Protocol::Teredo, Layering::SixInUdp) => {
            let u = p.udp().expect("SixInUdp has UDP");
            if u.src_port != TEREDO_PORT && u.dst_port != TEREDO_PORT {
                return Err(TunnelError::LayeringMismatch { protocol, got });
            }
            2
        }
        _ => return Err(TunnelError::LayeringMismatch { protocol, got }),
    };
    let Packet { mut layers, payload, meta } = p;
    layers.drain(..strip);
    Ok(Packet { layers, payload, meta })
}

/// [`decap`] starting from wire bytes; codec failures propagate.
pub fn decap_bytes(bytes: &[u8], protocol: Protocol) -> Result<Packet, TunnelError> {
    decap(decode(bytes)?, protocol)
}

/// Tunnel role as written in a topology: peers are referenced by node name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TunnelRole {
    IsatapHost { router: String },
    IsatapRouter { prefix: V6Addr },
    #[serde(rename = "6to4_host")]
    SixToFourHost { router: String, interface_id: u64 },
    /// `relay` is set on the site router that sends non-6to4 traffic to a relay.
    #[serde(rename = "6to4_router")]
    SixToFourRouter { relay: Option<String> },
    #[serde(rename = "6to4_relay")]
    SixToFourRelay,
    TeredoClient { server: String, relay: String, port: u16 },
    TeredoServer,
    TeredoRelay,
}

impl TunnelRole {
    pub fn protocol(&self) -> Protocol {
        match self {
            TunnelRole::IsatapHost { .. } | TunnelRole::IsatapRouter { .. } => Protocol::Isatap,
            TunnelRole::SixToFourHost { .. } | TunnelRole::SixToFourRouter { .. } | TunnelRole::SixToFourRelay => {
                Protocol::SixToFour
            }
            TunnelRole::TeredoClient { .. } | TunnelRole::TeredoServer | TunnelRole::TeredoRelay => Protocol::Teredo,
        }
    }

    /// Roles that answer setup and refresh requests.
    pub fn is_server(&self) -> bool {
        matches!(
            self,
            TunnelRole::IsatapRouter { .. } | TunnelRole::SixToFourRouter { .. } | TunnelRole::TeredoServer
        )
    }
}

/// A node's tunnel behaviour with peer names resolved to addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TunnelFunction {
    IsatapHost { router_v4: V4Addr },
    IsatapRouter { prefix: V6Addr },
    SixToFourHost,
    SixToFourRouter { site_v4: V4Addr, relay_v4: Option<V4Addr> },
    SixToFourRelay,
    TeredoClient { relay_v4: V4Addr },
    TeredoServer,
    TeredoRelay,
}

impl TunnelFunction {
    pub fn protocol(&self) -> Protocol {
        match self {
            TunnelFunction::IsatapHost { .. } | TunnelFunction::IsatapRouter { .. } => Protocol::Isatap,
            TunnelFunction::SixToFourHost
            | TunnelFunction::SixToFourRouter { .. }
            | TunnelFunction::SixToFourRelay => Protocol::SixToFour,
            _ => Protocol::Teredo,
        }
    }

    /// IPv4 endpoint an IPv6 packet to `dst` must be tunneled to from this
    /// node, or `None` when it travels natively.
    pub fn tunnel_endpoint(&self, dst: V6Addr, teredo_prefix: u32) -> Option<Endpoint> {
        match *self {
            TunnelFunction::IsatapHost { router_v4 } => match addressing::parse_isatap(dst) {
                Ok((_, v4)) => Some(Endpoint::new(v4, 0)),
                Err(_) => Some(Endpoint::new(router_v4, 0)),
            },
            TunnelFunction::IsatapRouter { prefix } => match addressing::parse_isatap(dst) {
                Ok((p, v4)) if p == prefix => Some(Endpoint::new(v4, 0)),
                _ => None,
            },
            TunnelFunction::SixToFourHost | TunnelFunction::TeredoServer => None,
            TunnelFunction::SixToFourRouter { site_v4, relay_v4 } => match addressing::parse_6to4(dst) {
                Ok(v4) if v4 == site_v4 => None,
                Ok(v4) => Some(Endpoint::new(v4, 0)),
                Err(_) => relay_v4.map(|r| Endpoint::new(r, 0)),
            },
            TunnelFunction::SixToFourRelay => addressing::parse_6to4(dst).ok().map(|v4| Endpoint::new(v4, 0)),
            TunnelFunction::TeredoClient { relay_v4 } => match addressing::parse_teredo(dst, teredo_prefix) {
                Ok(f) => Some(Endpoint::new(f.mapped_v4, f.mapped_port)),
                Err(_) => Some(Endpoint::new(relay_v4, TEREDO_PORT)),
            },
            TunnelFunction::TeredoRelay => addressing::parse_teredo(dst, teredo_prefix)
                .ok()
                .map(|f| Endpoint::new(f.mapped_v4, f.mapped_port)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{Ipv6Header, PacketKind, NEXT_HEADER_NONE};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state(protocol: Protocol) -> TunnelState {
        let mut s = TunnelState::new(
            protocol,
            NodeId(1),
            Endpoint::new(V4Addr::new(203, 0, 113, 2), TEREDO_PORT),
            Endpoint::new(V4Addr::new(192, 168, 1, 10), 50000),
            "fe80::1".parse().unwrap(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        s.establish(V6Addr(0), V6Addr(0), &mut rng);
        s
    }

    fn v6(payload: Vec<u8>, flow_label: u32) -> Packet {
        let mut h = Ipv6Header::new(NEXT_HEADER_NONE, "2001:db8:2::1".parse().unwrap(), "2001:db8:3::10".parse().unwrap());
        h.flow_label = flow_label;
        Packet::new(vec![Layer::Ipv6(h)], payload, PacketMeta { packet_id: 7, ..Default::default() }).unwrap()
    }

    fn count_refreshes(protocol: Protocol, packets: u32, seed: u64) -> u64 {
        let mut s = state(protocol);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut n = 0;
        for _ in 0..packets {
            if let Some(p) = s.on_data_sent(&mut rng, PacketMeta::default()) {
                assert_eq!(p.meta.kind, PacketKind::Refresh);
                n += 1;
            }
            assert!(s.data_packets_since_refresh < s.refresh_interval);
        }
        n
    }

    #[test]
    fn refresh_cadence() {
        assert_eq!(count_refreshes(Protocol::Isatap, 26, 0), 2);
        assert_eq!(count_refreshes(Protocol::Teredo, 20, 0), 0);
        assert_eq!(count_refreshes(Protocol::Isatap, 1000, 0), 76);
        assert_eq!(count_refreshes(Protocol::Teredo, 1000, 0), 47);
        for seed in 0..50 {
            let n = count_refreshes(Protocol::SixToFour, 1000, seed);
            // every interval is 18 or 19, so the count lies between 1000/19 and 1000/18
            assert!((52..=55).contains(&n), "seed {seed}: {n}");
        }
    }

    #[test]
    fn sixto4_draws_both_intervals() {
        let p = RefreshPolicy { protocol: Protocol::SixToFour };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws: Vec<u32> = (0..200).map(|_| p.draw_interval(&mut rng)).collect();
        assert!(draws.contains(&18) && draws.contains(&19));
        assert!(draws.iter().all(|d| *d == 18 || *d == 19));
    }

    #[test]
    fn no_refresh_before_established() {
        let mut s = TunnelState::new(Protocol::Isatap, NodeId(0), Endpoint::new(V4Addr(1), 0), Endpoint::new(V4Addr(2), 0), V6Addr(3));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert!(s.on_data_sent(&mut rng, PacketMeta::default()).is_none());
        }
    }

    #[test]
    fn encap_sizes() {
        let local = Endpoint::new(V4Addr::new(192, 168, 1, 10), 50000);
        let remote = Endpoint::new(V4Addr::new(203, 0, 113, 254), TEREDO_PORT);
        let p = v6(vec![0; 1460], 0);
        let s4 = encap(p.clone(), &state(Protocol::SixToFour), local, remote).unwrap();
        assert_eq!(s4.outer_v4().unwrap().total_len as usize, 20 + 40 + 1460);
        let t = encap(p.clone(), &state(Protocol::Teredo), local, remote).unwrap();
        assert_eq!(t.outer_v4().unwrap().total_len as usize, 20 + 8 + 40 + 1460);
        assert_eq!(t.wire_len() - p.wire_len(), Protocol::Teredo.overhead_bytes());
        assert_eq!(s4.wire_len() - p.wire_len(), Protocol::SixToFour.overhead_bytes());
    }

    #[test]
    fn encap_refused_while_pending() {
        let mut s = state(Protocol::Isatap);
        s.phase = Phase::SetupPending;
        let e = Endpoint::new(V4Addr(1), 0);
        assert_eq!(encap(v6(vec![], 0), &s, e, e), Err(TunnelError::NotEstablished(Phase::SetupPending)));
    }

    #[test]
    fn proto41_rejected_by_teredo_decap() {
        let e = Endpoint::new(V4Addr(1), 0);
        let p = encap(v6(vec![1, 2, 3], 0), &state(Protocol::Isatap), e, e).unwrap();
        assert!(matches!(decap(p, Protocol::Teredo), Err(TunnelError::LayeringMismatch { .. })));
    }

    #[test]
    fn non_ipv6_inner_rejected() {
        let e = Endpoint::new(V4Addr(1), 0);
        let p = encap(v6(vec![], 0), &state(Protocol::Isatap), e, e).unwrap();
        assert_eq!(encap(p, &state(Protocol::Isatap), e, e), Err(TunnelError::NotIpv6));
    }

    #[test]
    fn truncated_outer_propagates_codec_error() {
        let e = Endpoint::new(V4Addr(1), TEREDO_PORT);
        let p = encap(v6(vec![9; 30], 0), &state(Protocol::Teredo), e, e).unwrap();
        let bytes = p.encode().unwrap();
        assert!(matches!(decap_bytes(&bytes[..15], Protocol::Teredo), Err(TunnelError::Codec(CodecError::Truncated { .. }))));
        assert!(decap_bytes(&bytes, Protocol::Teredo).unwrap().same_wire(&v6(vec![9; 30], 0)));
    }

    #[test]
    fn endpoint_selection() {
        let prefix = addressing::TEREDO_DEFAULT_PREFIX;
        let isatap_dst = addressing::synth_isatap("2001:db8:2::".parse().unwrap(), V4Addr::new(192, 168, 1, 10)).unwrap();
        let router = TunnelFunction::IsatapRouter { prefix: "2001:db8:2::".parse().unwrap() };
        assert_eq!(router.tunnel_endpoint(isatap_dst, prefix), Some(Endpoint::new(V4Addr::new(192, 168, 1, 10), 0)));
        assert_eq!(router.tunnel_endpoint("2001:db8:3::10".parse().unwrap(), prefix), None);

        let site = V4Addr::new(198, 51, 100, 1);
        let relay = V4Addr::new(192, 88, 99, 1);
        let r = TunnelFunction::SixToFourRouter { site_v4: site, relay_v4: Some(relay) };
        assert_eq!(r.tunnel_endpoint("2001:db8:3::10".parse().unwrap(), prefix), Some(Endpoint::new(relay, 0)));
        assert_eq!(r.tunnel_endpoint(addressing::synth_6to4_host(site, 1), prefix), None);
        let other = V4Addr::new(203, 0, 113, 7);
        assert_eq!(r.tunnel_endpoint(addressing::synth_6to4(other), prefix), Some(Endpoint::new(other, 0)));

        let f = addressing::TeredoFields {
            server_v4: V4Addr::new(65, 54, 227, 120),
            flags: addressing::TEREDO_FLAG_CONE,
            mapped_port: 40000,
            mapped_v4: V4Addr::new(192, 0, 2, 45),
        };
        let t = addressing::synth_teredo(f, prefix);
        assert_eq!(
            TunnelFunction::TeredoRelay.tunnel_endpoint(t, prefix),
            Some(Endpoint::new(V4Addr::new(192, 0, 2, 45), 40000))
        );
    }

    #[test]
    fn overhead_ordering() {
        assert!(Protocol::Teredo.overhead_bytes() > Protocol::SixToFour.overhead_bytes());
        assert_eq!(Protocol::SixToFour.overhead_bytes(), Protocol::Isatap.overhead_bytes());
    }

    proptest! {
        #[test]
        fn decap_inverts_encap(payload in proptest::collection::vec(any::<u8>(), 0..300), fl in 0u32..(1 << 20),
                               src: u32, dst: u32, port: u16) {
            let p = v6(payload, fl);
            for proto in Protocol::TUNNELED {
                let q = encap(p.clone(), &state(proto), Endpoint::new(V4Addr(src), port), Endpoint::new(V4Addr(dst), TEREDO_PORT)).unwrap();
                let bytes = q.encode().unwrap();
                let back = decap_bytes(&bytes, proto).unwrap();
                prop_assert!(back.same_wire(&p));
                prop_assert_eq!(back.ipv6().unwrap().flow_label, fl);
                prop_assert_eq!(decap(q, proto).unwrap(), p.clone());
            }
        }
    }
}
