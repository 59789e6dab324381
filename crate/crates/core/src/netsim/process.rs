//! What a node does with one packet: forwarding, NAT, tunnel encapsulation
//! and termination, and the local applications (echo, DNS, control).

use crate::addressing::{self, TeredoFields, V4Addr, V6Addr};
use crate::codec::{
    EchoHeader, Ipv4Header, Ipv6Header, Layer, Layering, Packet, PacketKind, UdpHeader, DNS_PORT, ECHO_REPLY_V4,
    ECHO_REPLY_V6, NEXT_HEADER_ICMPV6, NEXT_HEADER_TUNNEL_CONTROL, PROTO_ECHO, PROTO_UDP,
};
use crate::tunnel::{
    control_of, control_packet, decap, encap, encap_unchecked, ControlMsg, Endpoint, NatVerdict, Phase, Protocol,
    TunnelFunction,
};

use super::engine::{Out, Rec, Simulation, LINK_LOCAL_SERVER};
use super::trace::{DropReason, TraceEvent};

const DNS_OK: u8 = 0;
const DNS_NXDOMAIN: u8 = 3;

fn drop_(outs: &mut Vec<Out>, reason: DropReason, p: &Packet) -> f64 {
    outs.push(Out::Record(Rec::of(TraceEvent::Drop(reason), p)));
    0.0
}

/// Decrements TTL or hop limit. `None` when it ran out.
fn age(mut p: Packet) -> Option<Packet> {
    match p.layers.first_mut() {
        Some(Layer::Ipv4(h)) => {
            h.ttl = h.ttl.checked_sub(1).filter(|t| *t > 0)?;
            h.refresh_checksum();
        }
        Some(Layer::Ipv6(h)) => h.hop_limit = h.hop_limit.checked_sub(1).filter(|t| *t > 0)?,
        _ => {}
    }
    Some(p)
}

impl Simulation {
    /// A packet generated on node `n` itself. Tunnel clients encapsulate
    /// here, and hold data while setup or a refresh is outstanding.
    pub(super) fn originate(&mut self, n: usize, p: Packet, outs: &mut Vec<Out>) -> f64 {
        let native = matches!(p.layering(), Ok(Layering::NativeV6))
            && p.ipv6().is_some_and(|h| h.next_header != NEXT_HEADER_TUNNEL_CONTROL);
        let prefix = self.opts.teredo_prefix;
        let node = &mut self.nodes[n];
        let costs = node.costs;
        let (Some(client), Some(func), true) = (node.client.as_mut(), node.func, native) else {
            outs.push(Out::Send(p));
            return 0.0;
        };
        if client.state.phase != Phase::Established || client.stalled {
            client.held.push_back(p);
            return 0.0;
        }
        if let Some(mut r) = client.pending_refresh.take() {
            r.meta.packet_id = self.next_packet_id;
            r.meta.created_at = self.now;
            self.next_packet_id += 1;
            client.stalled = true;
            client.held.push_back(p);
            outs.push(Out::Record(Rec::of(TraceEvent::Refresh("refresh"), &r)));
            outs.push(Out::Send(r));
            return 0.0;
        }
        let is_data = p.meta.kind == PacketKind::Data;
        let inner_len = p.wire_len();
        let dst = p.ipv6().expect("native").dst;
        let mut cost = 0.0;
        let refused = Rec::of(TraceEvent::Drop(DropReason::Malformed), &p);
        let out = match func.tunnel_endpoint(dst, prefix) {
            Some(ep) => match encap(p, &client.state, client.state.local, ep) {
                Ok(q) => {
                    cost = costs.encap(client.state.protocol.encap_layers(), inner_len);
                    outs.push(Out::Record(Rec::of(TraceEvent::Encap, &q)));
                    q
                }
                Err(_) => {
                    outs.push(Out::Record(refused));
                    return 0.0;
                }
            },
            None => p,
        };
        outs.push(Out::Send(out));
        if is_data {
            if let Some(r) = client.state.on_data_sent(&mut self.rng, Default::default()) {
                client.pending_refresh = Some(r);
            }
        }
        cost
    }

    /// A packet arriving over a link from `from`.
    pub(super) fn receive(&mut self, n: usize, from: usize, p: Packet, start: f64, outs: &mut Vec<Out>) -> f64 {
        let prefix = self.opts.teredo_prefix;
        match p.layers.first().copied() {
            Some(Layer::Ipv6(h)) => {
                let node = &self.nodes[n];
                if !node.stack.has_v6() {
                    return drop_(outs, DropReason::StackMismatch, &p);
                }
                if node.owns_v6(h.dst) {
                    return self.deliver_v6(n, p, outs);
                }
                if let Some(func) = node.func {
                    if let Some(ep) = func.tunnel_endpoint(h.dst, prefix) {
                        return self.encap_onward(n, func, p, ep, outs);
                    }
                }
                self.forward(n, p, outs)
            }
            Some(Layer::Ipv4(h)) => {
                let node = &mut self.nodes[n];
                if !node.stack.has_v4() {
                    return drop_(outs, DropReason::StackMismatch, &p);
                }
                let costs = node.costs;
                if let Some((nat, inside)) = node.nat.as_mut() {
                    let verdict = if from == *inside {
                        Some(nat.nat_apply_outbound(p.clone(), start))
                    } else if h.dst == nat.external_v4() {
                        Some(nat.nat_apply_inbound(p.clone(), start))
                    } else {
                        None
                    };
                    match verdict {
                        Some(NatVerdict::Translated { packet, new_binding }) => {
                            let cost = costs.nat(new_binding, packet.wire_len());
                            outs.push(Out::Record(Rec::of(TraceEvent::Nat, &packet)));
                            outs.push(Out::Send(packet));
                            return cost;
                        }
                        Some(NatVerdict::Dropped(r)) => return drop_(outs, r, &p),
                        None => {}
                    }
                }
                if self.nodes[n].owns_v4(h.dst) {
                    self.local_v4(n, p, outs)
                } else {
                    self.forward(n, p, outs)
                }
            }
            _ => drop_(outs, DropReason::Malformed, &p),
        }
    }

    fn forward(&mut self, n: usize, p: Packet, outs: &mut Vec<Out>) -> f64 {
        let Some(q) = age(p.clone()) else {
            return drop_(outs, DropReason::TtlExpired, &p);
        };
        outs.push(Out::Record(Rec::of(TraceEvent::Forward, &q)));
        outs.push(Out::Send(q));
        self.nodes[n].costs.forward
    }

    fn encap_onward(&mut self, n: usize, func: TunnelFunction, p: Packet, ep: Endpoint, outs: &mut Vec<Out>) -> f64 {
        let node = &self.nodes[n];
        let protocol = func.protocol();
        let len = p.wire_len();
        match encap_unchecked(p.clone(), protocol, node.tunnel_local(protocol), ep) {
            Ok(q) => {
                outs.push(Out::Record(Rec::of(TraceEvent::Encap, &q)));
                outs.push(Out::Send(q));
                node.costs.encap(protocol.encap_layers(), len)
            }
            Err(_) => drop_(outs, DropReason::Malformed, &p),
        }
    }

    /// IPv4 addressed to this node: a tunnel carrier, DNS, or echo.
    fn local_v4(&mut self, n: usize, p: Packet, outs: &mut Vec<Out>) -> f64 {
        let h = *p.outer_v4().expect("IPv4");
        let layering = match p.layering() {
            Ok(l) => l,
            Err(_) => return drop_(outs, DropReason::Malformed, &p),
        };
        match layering {
            Layering::SixInFour | Layering::SixInUdp => {
                let want = if layering == Layering::SixInUdp {
                    &[Protocol::Teredo][..]
                } else {
                    &[Protocol::Isatap, Protocol::SixToFour][..]
                };
                let Some(func) = self.nodes[n].func.filter(|f| want.contains(&f.protocol())) else {
                    return drop_(outs, DropReason::LayeringMismatch, &p);
                };
                let protocol = func.protocol();
                let outer_src = Endpoint::new(h.src, p.udp().map_or(0, |u| u.src_port));
                let inner = match decap(p.clone(), protocol) {
                    Ok(i) => i,
                    Err(_) => return drop_(outs, DropReason::LayeringMismatch, &p),
                };
                if let Some(msg) = control_of(&inner) {
                    return self.control(n, protocol, msg, outer_src, inner, outs);
                }
                let node = &self.nodes[n];
                let mut cost = node.costs.decap(protocol.encap_layers(), inner.wire_len());
                outs.push(Out::Record(Rec::of(TraceEvent::Decap, &inner)));
                let dst = inner.ipv6().expect("inner IPv6").dst;
                if node.owns_v6(dst) {
                    cost += self.deliver_v6(n, inner, outs);
                } else if let Some(ep) = func.tunnel_endpoint(dst, self.opts.teredo_prefix) {
                    cost += self.encap_onward(n, func, inner, ep, outs);
                } else if !node.stack.has_v6() {
                    return drop_(outs, DropReason::StackMismatch, &inner);
                } else {
                    outs.push(Out::Send(inner));
                }
                cost
            }
            Layering::Ipv4Udp => {
                let u = *p.udp().expect("UDP");
                let node = &mut self.nodes[n];
                if u.dst_port == DNS_PORT && !node.dns.is_empty() {
                    let name = String::from_utf8_lossy(&p.payload).into_owned();
                    let payload = match node.dns.get(&name) {
                        Some(a) => {
                            let mut v = vec![DNS_OK];
                            v.extend_from_slice(&a.octets());
                            v
                        }
                        None => vec![DNS_NXDOMAIN],
                    };
                    let cost = node.costs.dns_lookup;
                    let mut meta = self.fresh_meta(PacketKind::DnsReply, 0, 0);
                    meta.created_at = self.now;
                    let reply = Packet::new(
                        vec![
                            Layer::Ipv4(Ipv4Header::new(PROTO_UDP, h.dst, h.src)),
                            Layer::Udp(UdpHeader::new(DNS_PORT, u.src_port)),
                        ],
                        payload,
                        meta,
                    )
                    .expect("valid reply");
                    outs.push(Out::Send(reply));
                    return cost;
                }
                if u.src_port == DNS_PORT {
                    if let Some(sent_at) = node.pending_dns.remove(&u.dst_port) {
                        let answer = match p.payload.as_slice() {
                            [DNS_OK, rest @ ..] if rest.len() == 16 => {
                                Some(V6Addr(u128::from_be_bytes(rest.try_into().expect("16 bytes"))))
                            }
                            _ => None,
                        };
                        let detail = if answer.is_some() { "ok" } else { "nxdomain" };
                        outs.push(Out::Record(Rec::of(TraceEvent::DnsReply(detail), &p)));
                        outs.push(Out::DnsAnswer { port: u.dst_port, answer, sent_at });
                        return 0.0;
                    }
                }
                drop_(outs, DropReason::NoListener, &p)
            }
            Layering::Ipv4Echo => {
                let e = *p.echo().expect("echo");
                if e.is_request() {
                    outs.push(Out::Record(Rec::of(TraceEvent::Received, &p)));
                    let meta = self.fresh_meta(PacketKind::EchoReply, p.meta.flow_id, p.meta.seq);
                    let reply = Packet::new(
                        vec![
                            Layer::Ipv4(Ipv4Header::new(PROTO_ECHO, h.dst, h.src)),
                            Layer::Echo(EchoHeader::new(ECHO_REPLY_V4, e.id, e.seq)),
                        ],
                        p.payload,
                        meta,
                    )
                    .expect("valid reply");
                    outs.push(Out::Record(Rec::of(TraceEvent::Sent, &reply)));
                    outs.push(Out::Originate(reply));
                } else {
                    outs.push(Out::Record(Rec::of(TraceEvent::Received, &p)));
                }
                0.0
            }
            Layering::NativeV6 => drop_(outs, DropReason::Malformed, &p),
        }
    }

    /// Native IPv6 addressed to this node.
    fn deliver_v6(&mut self, _n: usize, p: Packet, outs: &mut Vec<Out>) -> f64 {
        let h = *p.ipv6().expect("IPv6");
        outs.push(Out::Record(Rec::of(TraceEvent::Received, &p)));
        if h.next_header == NEXT_HEADER_ICMPV6 {
            if let Some(e) = p.echo().copied().filter(|e| e.is_request()) {
                let meta = self.fresh_meta(PacketKind::EchoReply, p.meta.flow_id, p.meta.seq);
                let reply = Packet::new(
                    vec![
                        Layer::Ipv6(Ipv6Header::new(NEXT_HEADER_ICMPV6, h.dst, h.src)),
                        Layer::Echo(EchoHeader::new(ECHO_REPLY_V6, e.id, e.seq)),
                    ],
                    p.payload,
                    meta,
                )
                .expect("valid reply");
                outs.push(Out::Record(Rec::of(TraceEvent::Sent, &reply)));
                outs.push(Out::Originate(reply));
            }
        }
        0.0
    }

    /// Setup and refresh messages, on either the client or the server side.
    fn control(
        &mut self,
        n: usize,
        protocol: Protocol,
        msg: ControlMsg,
        peer: Endpoint,
        inner: Packet,
        outs: &mut Vec<Out>,
    ) -> f64 {
        let teredo_prefix = self.opts.teredo_prefix;
        let reply_meta = self.fresh_meta(msg.kind(), 0, 0);
        let node = &mut self.nodes[n];
        let own_v4 = node.v4.first().copied().unwrap_or(V4Addr::UNSPECIFIED);
        let rec = |event| Out::Record(Rec::of(event, &inner));

        if let Some(client) = node.client.as_mut() {
            match msg {
                ControlMsg::PrefixAssignment { prefix, mapped_v4, mapped_port, .. } => {
                    if client.state.phase != Phase::SetupPending {
                        return drop_(outs, DropReason::NoListener, &inner);
                    }
                    let address = match node.func {
                        Some(TunnelFunction::IsatapHost { .. }) => addressing::synth_isatap(prefix, own_v4).ok(),
                        Some(TunnelFunction::SixToFourHost) => addressing::parse_6to4(prefix)
                            .ok()
                            .map(|v4| addressing::synth_6to4_host(v4, client.interface_id)),
                        Some(TunnelFunction::TeredoClient { .. }) => Some(addressing::synth_teredo(
                            TeredoFields {
                                server_v4: client.state.server_endpoint.v4,
                                flags: addressing::TEREDO_FLAG_CONE,
                                mapped_port,
                                mapped_v4,
                            },
                            teredo_prefix,
                        )),
                        _ => None,
                    };
                    let Some(address) = address else {
                        return drop_(outs, DropReason::Malformed, &inner);
                    };
                    client.state.establish(prefix, address, &mut self.rng);
                    node.v6.push(address);
                    outs.push(rec(TraceEvent::SetupMsg("prefix_assignment")));
                    let confirm = client.state.control(ControlMsg::SetupConfirm, reply_meta).expect("tunneled");
                    outs.push(Out::Record(Rec::of(TraceEvent::SetupMsg("setup_confirm"), &confirm)));
                    outs.push(Out::Send(confirm));
                    outs.extend(client.held.drain(..).map(Out::Originate));
                    self.owner_v6.insert(address, n);
                    return 0.0;
                }
                ControlMsg::RefreshAck => {
                    client.stalled = false;
                    outs.push(rec(TraceEvent::Refresh("refresh_ack")));
                    outs.extend(client.held.drain(..).map(Out::Originate));
                    return 0.0;
                }
                _ => {}
            }
        }

        let serves = node.role.as_ref().is_some_and(|r| r.is_server() && r.protocol() == protocol);
        if !serves {
            return drop_(outs, DropReason::NoListener, &inner);
        }
        let costs = node.costs;
        let local = node.tunnel_local(protocol);
        let client6 = inner.ipv6().expect("inner IPv6").src;
        let answer = |m: ControlMsg| control_packet(protocol, local, peer, LINK_LOCAL_SERVER, client6, m, reply_meta);
        match msg {
            ControlMsg::SetupRequest => {
                let (prefix, prefix_len) = match node.func {
                    Some(TunnelFunction::IsatapRouter { prefix }) => (prefix, 64),
                    Some(TunnelFunction::SixToFourRouter { site_v4, .. }) => {
                        (addressing::synth_6to4(site_v4), addressing::SIXTO4_SITE_PREFIX_BITS as u8)
                    }
                    _ => (V6Addr((u128::from(teredo_prefix) << 96) | (u128::from(own_v4.0) << 64)), 64),
                };
                let m = ControlMsg::PrefixAssignment { prefix, prefix_len, mapped_v4: peer.v4, mapped_port: peer.port };
                outs.push(rec(TraceEvent::SetupMsg("setup_request")));
                if let Ok(r) = answer(m) {
                    outs.push(Out::Record(Rec::of(TraceEvent::SetupMsg("prefix_assignment"), &r)));
                    outs.push(Out::Send(r));
                }
                costs.setup
            }
            ControlMsg::SetupConfirm => {
                outs.push(rec(TraceEvent::SetupMsg("setup_confirm")));
                outs.push(Out::SetupDone);
                costs.setup
            }
            ControlMsg::Refresh => {
                outs.push(rec(TraceEvent::Refresh("refresh")));
                if let Ok(r) = answer(ControlMsg::RefreshAck) {
                    outs.push(Out::Record(Rec::of(TraceEvent::Refresh("refresh_ack"), &r)));
                    outs.push(Out::Send(r));
                }
                costs.refresh
            }
            _ => drop_(outs, DropReason::NoListener, &inner),
        }
    }
}
