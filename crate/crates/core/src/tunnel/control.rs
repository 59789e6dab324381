//! Tunnel setup and refresh messages.
//!
//! Three messages set a tunnel up (request, prefix assignment, confirmation);
//! a refresh is a keepalive answered by an ack. They ride in an IPv6 packet
//! with next header [`NEXT_HEADER_TUNNEL_CONTROL`], inside the protocol's own
//! carrier, so they cross the same NAT and routers as data.

use crate::addressing::{V4Addr, V6Addr};
use crate::codec::{
    Ipv4Header, Ipv6Header, Layer, Packet, PacketKind, PacketMeta, UdpHeader, NEXT_HEADER_TUNNEL_CONTROL, PROTO_IPV6,
    PROTO_UDP,
};

use super::{Endpoint, Protocol, TunnelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlMsg {
    SetupRequest,
    /// Server answer: the prefix to use plus the client's address and port as
    /// the server saw them (what the NAT mapped them to).
    PrefixAssignment { prefix: V6Addr, prefix_len: u8, mapped_v4: V4Addr, mapped_port: u16 },
    SetupConfirm,
    Refresh,
    RefreshAck,
}

impl ControlMsg {
    pub fn kind(&self) -> PacketKind {
        match self {
            ControlMsg::Refresh | ControlMsg::RefreshAck => PacketKind::Refresh,
            _ => PacketKind::Setup,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ControlMsg::SetupRequest => "setup_request",
            ControlMsg::PrefixAssignment { .. } => "prefix_assignment",
            ControlMsg::SetupConfirm => "setup_confirm",
            ControlMsg::Refresh => "refresh",
            ControlMsg::RefreshAck => "refresh_ack",
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match *self {
            ControlMsg::SetupRequest => vec![1],
            ControlMsg::PrefixAssignment { prefix, prefix_len, mapped_v4, mapped_port } => {
                let mut v = Vec::with_capacity(24);
                v.push(2);
                v.push(prefix_len);
                v.extend_from_slice(&prefix.octets());
                v.extend_from_slice(&mapped_v4.octets());
                v.extend_from_slice(&mapped_port.to_be_bytes());
                v
            }
            ControlMsg::SetupConfirm => vec![3],
            ControlMsg::Refresh => vec![4],
            ControlMsg::RefreshAck => vec![5],
        }
    }

    pub fn decode(b: &[u8]) -> Result<Self, TunnelError> {
        match b {
            [1] => Ok(ControlMsg::SetupRequest),
            [2, len, rest @ ..] if rest.len() == 22 => Ok(ControlMsg::PrefixAssignment {
                prefix_len: *len,
                prefix: V6Addr(u128::from_be_bytes(rest[..16].try_into().unwrap())),
                mapped_v4: V4Addr(u32::from_be_bytes(rest[16..20].try_into().unwrap())),
                mapped_port: u16::from_be_bytes([rest[20], rest[21]]),
            }),
            [3] => Ok(ControlMsg::SetupConfirm),
            [4] => Ok(ControlMsg::Refresh),
            [5] => Ok(ControlMsg::RefreshAck),
            _ => Err(TunnelError::BadControl),
        }
    }
}

/// Builds a control message inside the carrier `protocol` uses for data.
pub fn control_packet(
    protocol: Protocol,
    local: Endpoint,
    remote: Endpoint,
    src6: V6Addr,
    dst6: V6Addr,
    msg: ControlMsg,
    mut meta: PacketMeta,
) -> Result<Packet, TunnelError> {
    meta.kind = msg.kind();
    let inner = Layer::Ipv6(Ipv6Header::new(NEXT_HEADER_TUNNEL_CONTROL, src6, dst6));
    let layers = match protocol {
        Protocol::Isatap | Protocol::SixToFour => {
            vec![Layer::Ipv4(Ipv4Header::new(PROTO_IPV6, local.v4, remote.v4)), inner]
        }
        Protocol::Teredo => vec![
            Layer::Ipv4(Ipv4Header::new(PROTO_UDP, local.v4, remote.v4)),
            Layer::Udp(UdpHeader::new(local.port, remote.port)),
            inner,
        ],
        Protocol::Baseline => return Err(TunnelError::NoTunnel),
    };
    Ok(Packet::new(layers, msg.encode(), meta)?)
}

/// Extracts a control message from a packet, if it carries one.
pub fn control_of(p: &Packet) -> Option<ControlMsg> {
    let h = p.ipv6()?;
    if h.next_header != NEXT_HEADER_TUNNEL_CONTROL {
        return None;
    }
    ControlMsg::decode(&p.payload).ok()
}
