//! Wire codec for the header stacks the simulator moves around.
//!
//! A [`Packet`] is a list of headers, outermost first, plus an opaque
//! payload. Only these layerings exist:
//!
//! ```text
//! [IPv6]                      native IPv6 (optionally + Echo)
//! [IPv4(41), IPv6]            6to4 / ISATAP   (+20 bytes)
//! [IPv4(17), UDP, IPv6]       Teredo          (+28 bytes)
//! [IPv4(1), Echo]             IPv4 ping
//! [IPv4(17), UDP]             plain IPv4 datagram (DNS)
//! ```
//!
//! No IPv4 options and no IPv6 extension headers are ever produced, so the
//! fixed header sizes hold everywhere.

use thiserror::Error;

use crate::addressing::{V4Addr, V6Addr};

pub const IPV4_HEADER_LEN: usize = 20;
pub const IPV6_HEADER_LEN: usize = 40;
pub const UDP_HEADER_LEN: usize = 8;
pub const ECHO_HEADER_LEN: usize = 8;

pub const PROTO_ECHO: u8 = 1;
pub const PROTO_UDP: u8 = 17;
pub const PROTO_IPV6: u8 = 41;

pub const NEXT_HEADER_ICMPV6: u8 = 58;
pub const NEXT_HEADER_NONE: u8 = 59;
/// Experimental next-header value used for tunnel setup/refresh messages.
pub const NEXT_HEADER_TUNNEL_CONTROL: u8 = 253;

pub const TEREDO_PORT: u16 = 3544;
pub const DNS_PORT: u16 = 53;

pub const ECHO_REQUEST_V4: u8 = 8;
pub const ECHO_REPLY_V4: u8 = 0;
pub const ECHO_REQUEST_V6: u8 = 128;
pub const ECHO_REPLY_V6: u8 = 129;

const FLOW_LABEL_MAX: u32 = (1 << 20) - 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("truncated {what}: need {need} bytes, have {have}")]
    Truncated { what: &'static str, need: usize, have: usize },
    #[error("bad {0} checksum")]
    BadChecksum(&'static str),
    #[error("unknown IPv4 protocol number {0}")]
    UnknownProtocol(u8),
    #[error("unsupported IP version {0}")]
    BadVersion(u8),
    #[error("{layer} {field} is {found}, expected {expected}")]
    LengthMismatch { layer: &'static str, field: &'static str, expected: usize, found: usize },
    #[error("IPv4 options are not supported (header length {0})")]
    Ipv4Options(usize),
    #[error("invalid layering: {0}")]
    Layering(String),
    #[error("flow label {0:#x} exceeds 20 bits")]
    FlowLabel(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ipv4Header {
    pub version: u8,
    /// Header length in bytes; always 20.
    pub header_len: u8,
    pub total_len: u16,
    pub identification: u16,
    pub ttl: u8,
    pub protocol: u8,
    pub header_checksum: u16,
    pub src: V4Addr,
    pub dst: V4Addr,
}

impl Ipv4Header {
    pub fn new(protocol: u8, src: V4Addr, dst: V4Addr) -> Self {
        Ipv4Header {
            version: 4,
            header_len: IPV4_HEADER_LEN as u8,
            total_len: 0,
            identification: 0,
            ttl: 64,
            protocol,
            header_checksum: 0,
            src,
            dst,
        }
    }

    fn write(&self, out: &mut Vec<u8>, checksum: u16) {
        out.push((self.version << 4) | (self.header_len / 4));
        out.push(0); // DSCP/ECN
        out.extend_from_slice(&self.total_len.to_be_bytes());
        out.extend_from_slice(&self.identification.to_be_bytes());
        out.extend_from_slice(&[0, 0]); // flags + fragment offset
        out.push(self.ttl);
        out.push(self.protocol);
        out.extend_from_slice(&checksum.to_be_bytes());
        out.extend_from_slice(&self.src.octets());
        out.extend_from_slice(&self.dst.octets());
    }

    pub fn to_bytes(&self) -> [u8; IPV4_HEADER_LEN] {
        let mut v = Vec::with_capacity(IPV4_HEADER_LEN);
        self.write(&mut v, self.header_checksum);
        v.try_into().expect("fixed header size")
    }

    pub fn compute_checksum(&self) -> u16 {
        let mut v = Vec::with_capacity(IPV4_HEADER_LEN);
        self.write(&mut v, 0);
        internet_checksum(&v)
    }

    /// Recomputes the header checksum after a field change (TTL, NAT rewrite).
    pub fn refresh_checksum(&mut self) {
        self.header_checksum = self.compute_checksum();
    }

    fn parse(b: &[u8]) -> Result<Self, CodecError> {
        if b.len() < IPV4_HEADER_LEN {
            return Err(CodecError::Truncated { what: "IPv4 header", need: IPV4_HEADER_LEN, have: b.len() });
        }
        let version = b[0] >> 4;
        if version != 4 {
            return Err(CodecError::BadVersion(version));
        }
        let header_len = (b[0] & 0x0f) as usize * 4;
        if header_len != IPV4_HEADER_LEN {
            return Err(CodecError::Ipv4Options(header_len));
        }
        if ones_complement_sum(&b[..IPV4_HEADER_LEN]) != 0xffff {
            return Err(CodecError::BadChecksum("IPv4 header"));
        }
        Ok(Ipv4Header {
            version,
            header_len: header_len as u8,
            total_len: u16::from_be_bytes([b[2], b[3]]),
            identification: u16::from_be_bytes([b[4], b[5]]),
            ttl: b[8],
            protocol: b[9],
            header_checksum: u16::from_be_bytes([b[10], b[11]]),
            src: V4Addr(u32::from_be_bytes([b[12], b[13], b[14], b[15]])),
            dst: V4Addr(u32::from_be_bytes([b[16], b[17], b[18], b[19]])),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ipv6Header {
    pub version: u8,
    pub traffic_class: u8,
    pub flow_label: u32,
    pub payload_len: u16,
    pub next_header: u8,
    pub hop_limit: u8,
    pub src: V6Addr,
    pub dst: V6Addr,
}

impl Ipv6Header {
    pub fn new(next_header: u8, src: V6Addr, dst: V6Addr) -> Self {
        Ipv6Header {
            version: 6,
            traffic_class: 0,
            flow_label: 0,
            payload_len: 0,
            next_header,
            hop_limit: 64,
            src,
            dst,
        }
    }

    fn write(&self, out: &mut Vec<u8>) {
        let word = (6u32 << 28) | ((self.traffic_class as u32) << 20) | (self.flow_label & FLOW_LABEL_MAX);
        out.extend_from_slice(&word.to_be_bytes());
        out.extend_from_slice(&self.payload_len.to_be_bytes());
        out.push(self.next_header);
        out.push(self.hop_limit);
        out.extend_from_slice(&self.src.octets());
        out.extend_from_slice(&self.dst.octets());
    }

    fn parse(b: &[u8]) -> Result<Self, CodecError> {
        if b.len() < IPV6_HEADER_LEN {
            return Err(CodecError::Truncated { what: "IPv6 header", need: IPV6_HEADER_LEN, have: b.len() });
        }
        let word = u32::from_be_bytes([b[0], b[1], b[2], b[3]]);
        let version = (word >> 28) as u8;
        if version != 6 {
            return Err(CodecError::BadVersion(version));
        }
        Ok(Ipv6Header {
            version,
            traffic_class: (word >> 20) as u8,
            flow_label: word & FLOW_LABEL_MAX,
            payload_len: u16::from_be_bytes([b[4], b[5]]),
            next_header: b[6],
            hop_limit: b[7],
            src: V6Addr(u128::from_be_bytes(b[8..24].try_into().unwrap())),
            dst: V6Addr(u128::from_be_bytes(b[24..40].try_into().unwrap())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UdpHeader {
    pub src_port: u16,
    pub dst_port: u16,
    /// Header plus payload, in bytes.
    pub length: u16,
    pub checksum: u16,
}

impl UdpHeader {
    pub fn new(src_port: u16, dst_port: u16) -> Self {
        UdpHeader { src_port, dst_port, length: 0, checksum: 0 }
    }

    fn write(&self, out: &mut Vec<u8>, checksum: u16) {
        out.extend_from_slice(&self.src_port.to_be_bytes());
        out.extend_from_slice(&self.dst_port.to_be_bytes());
        out.extend_from_slice(&self.length.to_be_bytes());
        out.extend_from_slice(&checksum.to_be_bytes());
    }

    fn parse(b: &[u8]) -> Result<Self, CodecError> {
        if b.len() < UDP_HEADER_LEN {
            return Err(CodecError::Truncated { what: "UDP header", need: UDP_HEADER_LEN, have: b.len() });
        }
        Ok(UdpHeader {
            src_port: u16::from_be_bytes([b[0], b[1]]),
            dst_port: u16::from_be_bytes([b[2], b[3]]),
            length: u16::from_be_bytes([b[4], b[5]]),
            checksum: u16::from_be_bytes([b[6], b[7]]),
        })
    }
}

/// Minimal echo request/reply header: type, code, checksum, id, sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EchoHeader {
    pub echo_type: u8,
    pub code: u8,
    pub checksum: u16,
    pub id: u16,
    pub seq: u16,
}

impl EchoHeader {
    pub fn new(echo_type: u8, id: u16, seq: u16) -> Self {
        EchoHeader { echo_type, code: 0, checksum: 0, id, seq }
    }

    pub fn is_request(&self) -> bool {
        self.echo_type == ECHO_REQUEST_V4 || self.echo_type == ECHO_REQUEST_V6
    }

    fn write(&self, out: &mut Vec<u8>, checksum: u16) {
        out.push(self.echo_type);
        out.push(self.code);
        out.extend_from_slice(&checksum.to_be_bytes());
        out.extend_from_slice(&self.id.to_be_bytes());
        out.extend_from_slice(&self.seq.to_be_bytes());
    }

    fn parse(b: &[u8]) -> Result<Self, CodecError> {
        if b.len() < ECHO_HEADER_LEN {
            return Err(CodecError::Truncated { what: "echo header", need: ECHO_HEADER_LEN, have: b.len() });
        }
        if ones_complement_sum(b) != 0xffff {
            return Err(CodecError::BadChecksum("echo"));
        }
        Ok(EchoHeader {
            echo_type: b[0],
            code: b[1],
            checksum: u16::from_be_bytes([b[2], b[3]]),
            id: u16::from_be_bytes([b[4], b[5]]),
            seq: u16::from_be_bytes([b[6], b[7]]),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Ipv4(Ipv4Header),
    Ipv6(Ipv6Header),
    Udp(UdpHeader),
    Echo(EchoHeader),
}

impl Layer {
    pub fn header_len(&self) -> usize {
        match self {
            Layer::Ipv4(_) => IPV4_HEADER_LEN,
            Layer::Ipv6(_) => IPV6_HEADER_LEN,
            Layer::Udp(_) => UDP_HEADER_LEN,
            Layer::Echo(_) => ECHO_HEADER_LEN,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Layer::Ipv4(_) => "IPv4",
            Layer::Ipv6(_) => "IPv6",
            Layer::Udp(_) => "UDP",
            Layer::Echo(_) => "echo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, PartialOrd, Ord)]
pub enum PacketKind {
    #[default]
    Data,
    Refresh,
    Setup,
    DnsQuery,
    DnsReply,
    EchoRequest,
    EchoReply,
}

impl PacketKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PacketKind::Data => "data",
            PacketKind::Refresh => "refresh",
            PacketKind::Setup => "setup",
            PacketKind::DnsQuery => "dns_query",
            PacketKind::DnsReply => "dns_reply",
            PacketKind::EchoRequest => "echo_request",
            PacketKind::EchoReply => "echo_reply",
        }
    }
}

/// Simulation bookkeeping; never on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PacketMeta {
    pub packet_id: u64,
    pub flow_id: u32,
    pub kind: PacketKind,
    /// Creation time in simulated milliseconds.
    pub created_at: f64,
    pub seq: u32,
}

/// Recognized header stacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layering {
    NativeV6,
    SixInFour,
    SixInUdp,
    Ipv4Echo,
    Ipv4Udp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub layers: Vec<Layer>,
    pub payload: Vec<u8>,
    pub meta: PacketMeta,
}

impl Packet {
    /// Builds a packet and writes every length and checksum field.
    pub fn new(layers: Vec<Layer>, payload: Vec<u8>, meta: PacketMeta) -> Result<Self, CodecError> {
        let mut p = Packet { layers, payload, meta };
        p.seal()?;
        Ok(p)
    }

    /// Recomputes all length and checksum fields from the current contents.
    pub fn seal(&mut self) -> Result<(), CodecError> {
        self.layering()?;
        build(&mut self.layers, &self.payload)?;
        Ok(())
    }

    pub fn layering(&self) -> Result<Layering, CodecError> {
        classify(&self.layers)
    }

    pub fn wire_len(&self) -> usize {
        self.layers.iter().map(Layer::header_len).sum::<usize>() + self.payload.len()
    }

    pub fn outer_v4(&self) -> Option<&Ipv4Header> {
        match self.layers.first() {
            Some(Layer::Ipv4(h)) => Some(h),
            _ => None,
        }
    }

    pub fn outer_v4_mut(&mut self) -> Option<&mut Ipv4Header> {
        match self.layers.first_mut() {
            Some(Layer::Ipv4(h)) => Some(h),
            _ => None,
        }
    }

    /// The first IPv6 header in the stack, native or tunneled.
    pub fn ipv6(&self) -> Option<&Ipv6Header> {
        self.layers.iter().find_map(|l| match l {
            Layer::Ipv6(h) => Some(h),
            _ => None,
        })
    }

    pub fn ipv6_mut(&mut self) -> Option<&mut Ipv6Header> {
        self.layers.iter_mut().find_map(|l| match l {
            Layer::Ipv6(h) => Some(h),
            _ => None,
        })
    }

    pub fn udp(&self) -> Option<&UdpHeader> {
        self.layers.iter().find_map(|l| match l {
            Layer::Udp(h) => Some(h),
            _ => None,
        })
    }

    pub fn udp_mut(&mut self) -> Option<&mut UdpHeader> {
        self.layers.iter_mut().find_map(|l| match l {
            Layer::Udp(h) => Some(h),
            _ => None,
        })
    }

    pub fn echo(&self) -> Option<&EchoHeader> {
        self.layers.iter().find_map(|l| match l {
            Layer::Echo(h) => Some(h),
            _ => None,
        })
    }

    /// True when layers and payload match, ignoring simulation metadata.
    pub fn same_wire(&self, other: &Packet) -> bool {
        self.layers == other.layers && self.payload == other.payload
    }

    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        encode(self)
    }
}

fn classify(layers: &[Layer]) -> Result<Layering, CodecError> {
    use Layer::*;
    let v6_tail_ok = |rest: &[Layer]| -> bool {
        match rest {
            [Ipv6(h)] => h.next_header != NEXT_HEADER_ICMPV6,
            [Ipv6(h), Echo(_)] => h.next_header == NEXT_HEADER_ICMPV6,
            _ => false,
        }
    };
    let bad = || CodecError::Layering(layers.iter().map(Layer::name).collect::<Vec<_>>().join("/"));
    let layering = match layers {
        [Ipv6(_), ..] if v6_tail_ok(layers) => Layering::NativeV6,
        [Ipv4(h), rest @ ..] => match (h.protocol, rest) {
            (PROTO_IPV6, rest) if v6_tail_ok(rest) => Layering::SixInFour,
            (PROTO_UDP, [Udp(_)]) => Layering::Ipv4Udp,
            (PROTO_UDP, [Udp(_), rest @ ..]) if v6_tail_ok(rest) => Layering::SixInUdp,
            (PROTO_ECHO, [Echo(_)]) => Layering::Ipv4Echo,
            _ => return Err(bad()),
        },
        _ => return Err(bad()),
    };
    for l in layers {
        if let Ipv6(h) = l {
            if h.flow_label > FLOW_LABEL_MAX {
                return Err(CodecError::FlowLabel(h.flow_label));
            }
        }
    }
    Ok(layering)
}

fn pseudo_header_sum(src: V4Addr, dst: V4Addr, udp_len: usize) -> Vec<u8> {
    let mut v = Vec::with_capacity(12);
    v.extend_from_slice(&src.octets());
    v.extend_from_slice(&dst.octets());
    v.push(0);
    v.push(PROTO_UDP);
    v.extend_from_slice(&(udp_len as u16).to_be_bytes());
    v
}

fn udp_checksum(outer: Option<&Ipv4Header>, udp_bytes: &[u8]) -> u16 {
    let mut data = match outer {
        Some(h) => pseudo_header_sum(h.src, h.dst, udp_bytes.len()),
        None => Vec::new(),
    };
    data.extend_from_slice(udp_bytes);
    match internet_checksum(&data) {
        0 => 0xffff,
        c => c,
    }
}

/// Serializes inner to outer, writing computed lengths and checksums back into
/// `layers`. Returns the wire bytes.
fn build(layers: &mut [Layer], payload: &[u8]) -> Result<Vec<u8>, CodecError> {
    let mut body = payload.to_vec();
    for i in (0..layers.len()).rev() {
        let outer_v4 = match i.checked_sub(1).map(|j| layers[j]) {
            Some(Layer::Ipv4(h)) => Some(h),
            _ => None,
        };
        let mut out = Vec::with_capacity(layers[i].header_len() + body.len());
        match &mut layers[i] {
            Layer::Ipv4(h) => {
                h.header_len = IPV4_HEADER_LEN as u8;
                h.total_len = (IPV4_HEADER_LEN + body.len()) as u16;
                h.refresh_checksum();
                h.write(&mut out, h.header_checksum);
            }
            Layer::Ipv6(h) => {
                h.payload_len = body.len() as u16;
                h.write(&mut out);
            }
            Layer::Udp(h) => {
                h.length = (UDP_HEADER_LEN + body.len()) as u16;
                h.write(&mut out, 0);
                out.extend_from_slice(&body);
                h.checksum = udp_checksum(outer_v4.as_ref(), &out);
                out[6..8].copy_from_slice(&h.checksum.to_be_bytes());
                body = out;
                continue;
            }
            Layer::Echo(h) => {
                h.write(&mut out, 0);
                out.extend_from_slice(&body);
                h.checksum = internet_checksum(&out);
                out[2..4].copy_from_slice(&h.checksum.to_be_bytes());
                body = out;
                continue;
            }
        }
        out.extend_from_slice(&body);
        body = out;
    }
    Ok(body)
}

/// Encodes `p` to network byte order. Length fields must already agree with
/// the contents; checksums are always written fresh.
pub fn encode(p: &Packet) -> Result<Vec<u8>, CodecError> {
    p.layering()?;
    let mut after = p.layers.clone();
    let bytes = build(&mut after, &p.payload)?;
    for (orig, built) in p.layers.iter().zip(&after) {
        let (field, found, expected) = match (orig, built) {
            (Layer::Ipv4(a), Layer::Ipv4(b)) if a.header_len != b.header_len => {
                ("header_len", a.header_len as usize, b.header_len as usize)
            }
            (Layer::Ipv4(a), Layer::Ipv4(b)) => ("total_len", a.total_len as usize, b.total_len as usize),
            (Layer::Ipv6(a), Layer::Ipv6(b)) => ("payload_len", a.payload_len as usize, b.payload_len as usize),
            (Layer::Udp(a), Layer::Udp(b)) => ("length", a.length as usize, b.length as usize),
            _ => continue,
        };
        if found != expected {
            return Err(CodecError::LengthMismatch { layer: orig.name(), field, expected, found });
        }
    }
    Ok(bytes)
}

fn looks_like_ipv6(b: &[u8]) -> bool {
    b.len() >= IPV6_HEADER_LEN && b[0] >> 4 == 6
}

fn decode_v6(b: &[u8], layers: &mut Vec<Layer>) -> Result<Vec<u8>, CodecError> {
    let h = Ipv6Header::parse(b)?;
    let rest = &b[IPV6_HEADER_LEN..];
    let want = h.payload_len as usize;
    if rest.len() < want {
        return Err(CodecError::Truncated { what: "IPv6 payload", need: want, have: rest.len() });
    }
    if rest.len() > want {
        return Err(CodecError::LengthMismatch { layer: "IPv6", field: "payload_len", expected: rest.len(), found: want });
    }
    layers.push(Layer::Ipv6(h));
    if h.next_header == NEXT_HEADER_ICMPV6 {
        let e = EchoHeader::parse(rest)?;
        layers.push(Layer::Echo(e));
        return Ok(rest[ECHO_HEADER_LEN..].to_vec());
    }
    Ok(rest.to_vec())
}

/// Parses wire bytes back into a packet. Metadata is left at its default.
pub fn decode(bytes: &[u8]) -> Result<Packet, CodecError> {
    let first = *bytes.first().ok_or(CodecError::Truncated { what: "packet", need: 1, have: 0 })?;
    let mut layers = Vec::with_capacity(4);
    let payload = match first >> 4 {
        6 => decode_v6(bytes, &mut layers)?,
        4 => {
            let h = Ipv4Header::parse(bytes)?;
            let total = h.total_len as usize;
            if bytes.len() < total {
                return Err(CodecError::Truncated { what: "IPv4 packet", need: total, have: bytes.len() });
            }
            if bytes.len() > total || total < IPV4_HEADER_LEN {
                return Err(CodecError::LengthMismatch { layer: "IPv4", field: "total_len", expected: bytes.len(), found: total });
            }
            let body = &bytes[IPV4_HEADER_LEN..];
            layers.push(Layer::Ipv4(h));
            match h.protocol {
                PROTO_IPV6 => decode_v6(body, &mut layers)?,
                PROTO_ECHO => {
                    let e = EchoHeader::parse(body)?;
                    layers.push(Layer::Echo(e));
                    body[ECHO_HEADER_LEN..].to_vec()
                }
                PROTO_UDP => {
                    let u = UdpHeader::parse(body)?;
                    if u.length as usize != body.len() {
                        return Err(CodecError::LengthMismatch { layer: "UDP", field: "length", expected: body.len(), found: u.length as usize });
                    }
                    if u.checksum != 0 {
                        let mut data = pseudo_header_sum(h.src, h.dst, body.len());
                        data.extend_from_slice(body);
                        if ones_complement_sum(&data) != 0xffff {
                            return Err(CodecError::BadChecksum("UDP"));
                        }
                    }
                    layers.push(Layer::Udp(u));
                    let inner = &body[UDP_HEADER_LEN..];
                    let teredo = u.src_port == TEREDO_PORT || u.dst_port == TEREDO_PORT;
                    if teredo && looks_like_ipv6(inner) {
                        decode_v6(inner, &mut layers)?
                    } else {
                        inner.to_vec()
                    }
                }
                other => return Err(CodecError::UnknownProtocol(other)),
            }
        }
        v => return Err(CodecError::BadVersion(v)),
    };
    let p = Packet { layers, payload, meta: PacketMeta::default() };
    p.layering()?;
    Ok(p)
}

/// One's-complement sum of big-endian 16-bit words, odd length zero-padded.
pub fn ones_complement_sum(bytes: &[u8]) -> u16 {
    let mut sum: u64 = 0;
    let mut chunks = bytes.chunks_exact(2);
    for c in &mut chunks {
        sum += u16::from_be_bytes([c[0], c[1]]) as u64;
    }
    if let [last] = chunks.remainder() {
        sum += (*last as u64) << 8;
    }
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    sum as u16
}

/// Internet checksum: complement of the one's-complement sum.
pub fn internet_checksum(bytes: &[u8]) -> u16 {
    !ones_complement_sum(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Straight-line RFC 1071 reference: 32-bit accumulator, fold once at the end.
    fn rfc1071_oracle(data: &[u8]) -> u16 {
        let mut acc: u32 = 0;
        let mut i = 0;
        while i + 1 < data.len() {
            acc += ((data[i] as u32) << 8) | data[i + 1] as u32;
            i += 2;
        }
        if i < data.len() {
            acc += (data[i] as u32) << 8;
        }
        while acc >> 16 != 0 {
            acc = (acc & 0xffff) + (acc >> 16);
        }
        !(acc as u16)
    }

    fn v6_packet(payload: usize) -> Packet {
        let mut h = Ipv6Header::new(NEXT_HEADER_NONE, "2001:db8::1".parse().unwrap(), "2001:db8::2".parse().unwrap());
        h.flow_label = 0xabcde;
        Packet::new(vec![Layer::Ipv6(h)], vec![0x5a; payload], PacketMeta::default()).unwrap()
    }

    #[test]
    fn zero_bytes_checksum_is_ffff() {
        assert_eq!(internet_checksum(&[0u8; 20]), 0xffff);
    }

    #[test]
    fn small_vector_matches_oracle() {
        let data = [0x00, 0x01, 0xf2, 0x03];
        // 0x0001 + 0xf203 = 0xf204, complement 0x0dfb
        assert_eq!(rfc1071_oracle(&data), 0x0dfb);
        assert_eq!(internet_checksum(&data), rfc1071_oracle(&data));
    }

    #[test]
    fn sample_ipv4_header_checksum_matches_oracle() {
        let mut h = Ipv4Header::new(PROTO_IPV6, V4Addr::new(192, 168, 0, 1), V4Addr::new(192, 168, 0, 199));
        h.total_len = 0x0073;
        h.ttl = 0x40;
        let mut raw = Vec::new();
        h.write(&mut raw, 0);
        assert_eq!(h.compute_checksum(), rfc1071_oracle(&raw));
        h.refresh_checksum();
        assert_eq!(ones_complement_sum(&h.to_bytes()), 0xffff);
    }

    #[test]
    fn empty_ipv6_is_40_bytes() {
        let bytes = v6_packet(0).encode().unwrap();
        assert_eq!(bytes.len(), 40);
    }

    #[test]
    fn proto41_sizes_add_up() {
        let inner = v6_packet(1460);
        let mut layers = vec![Layer::Ipv4(Ipv4Header::new(PROTO_IPV6, V4Addr::new(1, 2, 3, 4), V4Addr::new(5, 6, 7, 8)))];
        layers.extend(inner.layers.iter().copied());
        let p = Packet::new(layers, inner.payload.clone(), PacketMeta::default()).unwrap();
        assert_eq!(p.outer_v4().unwrap().total_len, 1520);
        assert_eq!(p.encode().unwrap().len(), 20 + 40 + 1460);
    }

    #[test]
    fn flipped_checksum_bit_is_rejected() {
        let mut layers = vec![Layer::Ipv4(Ipv4Header::new(PROTO_IPV6, V4Addr::new(1, 2, 3, 4), V4Addr::new(5, 6, 7, 8)))];
        layers.extend(v6_packet(10).layers);
        let p = Packet::new(layers, vec![1; 10], PacketMeta::default()).unwrap();
        let mut bytes = p.encode().unwrap();
        bytes[11] ^= 0x01;
        assert_eq!(decode(&bytes), Err(CodecError::BadChecksum("IPv4 header")));
    }

    #[test]
    fn truncated_ipv6() {
        let bytes = v6_packet(0).encode().unwrap();
        assert!(matches!(decode(&bytes[..39]), Err(CodecError::Truncated { .. })));
    }

    #[test]
    fn unknown_protocol() {
        let mut h = Ipv4Header::new(6, V4Addr::new(1, 1, 1, 1), V4Addr::new(2, 2, 2, 2));
        h.total_len = 20;
        h.refresh_checksum();
        assert_eq!(decode(&h.to_bytes()), Err(CodecError::UnknownProtocol(6)));
    }

    #[test]
    fn inconsistent_lengths_fail_encode() {
        let mut p = v6_packet(10);
        p.payload.push(0);
        assert!(matches!(p.encode(), Err(CodecError::LengthMismatch { field: "payload_len", .. })));
    }

    #[test]
    fn bad_layering_rejected() {
        let udp = Layer::Udp(UdpHeader::new(1, 2));
        assert!(Packet::new(vec![udp], vec![], PacketMeta::default()).is_err());
        let v4 = Layer::Ipv4(Ipv4Header::new(PROTO_IPV6, V4Addr(1), V4Addr(2)));
        assert!(Packet::new(vec![v4, udp], vec![], PacketMeta::default()).is_err());
    }

    #[test]
    fn udp_checksum_verifies() {
        let layers = vec![
            Layer::Ipv4(Ipv4Header::new(PROTO_UDP, V4Addr::new(10, 0, 0, 2), V4Addr::new(198, 51, 100, 53))),
            Layer::Udp(UdpHeader::new(53000, DNS_PORT)),
        ];
        let p = Packet::new(layers, b"receiver".to_vec(), PacketMeta::default()).unwrap();
        let mut bytes = p.encode().unwrap();
        assert!(decode(&bytes).unwrap().same_wire(&p));
        let last = bytes.len() - 1;
        bytes[last] ^= 0x80;
        assert_eq!(decode(&bytes), Err(CodecError::BadChecksum("UDP")));
    }

    fn arb_v6() -> impl Strategy<Value = Ipv6Header> {
        (any::<u8>(), 0u32..(1 << 20), any::<u8>(), any::<u128>(), any::<u128>(), prop_oneof![Just(NEXT_HEADER_NONE), Just(NEXT_HEADER_TUNNEL_CONTROL), Just(17u8)])
            .prop_map(|(tc, fl, hl, s, d, nh)| Ipv6Header {
                version: 6,
                traffic_class: tc,
                flow_label: fl,
                payload_len: 0,
                next_header: nh,
                hop_limit: hl,
                src: V6Addr(s),
                dst: V6Addr(d),
            })
    }

    proptest! {
        #[test]
        fn checksum_matches_oracle(data in proptest::collection::vec(any::<u8>(), 0..300)) {
            prop_assert_eq!(internet_checksum(&data), rfc1071_oracle(&data));
        }

        #[test]
        fn teredo_round_trip(h6 in arb_v6(), src: u32, dst: u32, ttl: u8, id: u16, sport: u16,
                             payload in proptest::collection::vec(any::<u8>(), 0..200)) {
            let mut h4 = Ipv4Header::new(PROTO_UDP, V4Addr(src), V4Addr(dst));
            h4.ttl = ttl;
            h4.identification = id;
            let layers = vec![Layer::Ipv4(h4), Layer::Udp(UdpHeader::new(sport, TEREDO_PORT)), Layer::Ipv6(h6)];
            let p = Packet::new(layers, payload, PacketMeta::default()).unwrap();
            let q = decode(&p.encode().unwrap()).unwrap();
            prop_assert!(q.same_wire(&p));
            prop_assert_eq!(p.wire_len(), p.encode().unwrap().len());
        }
    }
}
