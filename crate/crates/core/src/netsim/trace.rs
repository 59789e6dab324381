use std::fmt::Write as _;
use std::io;

use crate::codec::PacketKind;

use super::NodeId;

/// Why a packet left the simulation without being delivered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DropReason {
    /// Bare protocol-41 reached a NAT.
    Proto41AtNat,
    NoNatBinding,
    NatUnsupported,
    NatPortsExhausted,
    /// Carrier does not match what the receiving tunnel endpoint terminates.
    LayeringMismatch,
    /// IPv6 at a v4-only node or the reverse.
    StackMismatch,
    NoRoute,
    TtlExpired,
    MtuExceeded,
    NoListener,
    Malformed,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::Proto41AtNat => "nat_proto41",
            DropReason::NoNatBinding => "nat_no_binding",
            DropReason::NatUnsupported => "nat_unsupported",
            DropReason::NatPortsExhausted => "nat_ports_exhausted",
            DropReason::LayeringMismatch => "layering_mismatch",
            DropReason::StackMismatch => "stack_mismatch",
            DropReason::NoRoute => "no_route",
            DropReason::TtlExpired => "ttl_expired",
            DropReason::MtuExceeded => "mtu_exceeded",
            DropReason::NoListener => "no_listener",
            DropReason::Malformed => "malformed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEvent {
    /// Handed to the stack by an application (stream, ping, reply).
    Sent,
    /// Delivered to the destination application.
    Received,
    Forward,
    Nat,
    Encap,
    Decap,
    Drop(DropReason),
    /// Refresh or refresh ack; the detail names which.
    Refresh(&'static str),
    SetupMsg(&'static str),
    DnsQuery,
    /// Detail is `ok` or `nxdomain`.
    DnsReply(&'static str),
}

impl TraceEvent {
    pub fn name(&self) -> &'static str {
        match self {
            TraceEvent::Sent => "sent",
            TraceEvent::Received => "received",
            TraceEvent::Forward => "forward",
            TraceEvent::Nat => "nat",
            TraceEvent::Encap => "encap",
            TraceEvent::Decap => "decap",
            TraceEvent::Drop(_) => "drop",
            TraceEvent::Refresh(_) => "refresh",
            TraceEvent::SetupMsg(_) => "setup_msg",
            TraceEvent::DnsQuery => "dns_query",
            TraceEvent::DnsReply(_) => "dns_reply",
        }
    }

    pub fn reason(&self) -> &'static str {
        match self {
            TraceEvent::Drop(r) => r.as_str(),
            TraceEvent::Refresh(d) | TraceEvent::SetupMsg(d) | TraceEvent::DnsReply(d) => d,
            _ => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub time_ms: f64,
    pub node: NodeId,
    pub packet_id: u64,
    pub flow_id: u32,
    pub kind: PacketKind,
    pub seq: u32,
    pub event: TraceEvent,
    pub bytes: usize,
}

pub const TRACE_CSV_HEADER: &str = "time_ms,node,packet_id,flow_id,event,reason,bytes";

/// Writes one CSV row per record. `names` maps node ids to names.
pub fn write_trace_csv<W: io::Write>(mut w: W, records: &[TraceRecord], names: &[String]) -> io::Result<()> {
    writeln!(w, "{TRACE_CSV_HEADER}")?;
    let mut line = String::with_capacity(64);
    for r in records {
        line.clear();
        let _ = writeln!(
            line,
            "{:.6},{},{},{},{},{},{}",
            r.time_ms,
            names[r.node.0],
            r.packet_id,
            r.flow_id,
            r.event.name(),
            r.event.reason(),
            r.bytes
        );
        w.write_all(line.as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_shape() {
        let recs = vec![TraceRecord {
            time_ms: 1.5,
            node: NodeId(1),
            packet_id: 9,
            flow_id: 2,
            kind: PacketKind::Data,
            seq: 0,
            event: TraceEvent::Drop(DropReason::Proto41AtNat),
            bytes: 1560,
        }];
        let mut out = Vec::new();
        write_trace_csv(&mut out, &recs, &["a".into(), "nat".into()]).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert_eq!(s, "time_ms,node,packet_id,flow_id,event,reason,bytes\n1.500000,nat,9,2,drop,nat_proto41,1560\n");
    }
}
