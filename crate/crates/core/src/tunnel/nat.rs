//! Full-cone (endpoint-independent) NAT.
//!
//! Outbound UDP gets its source rewritten to the external address and a
//! sequentially allocated port; inbound UDP to a bound external port is
//! rewritten back. Bare protocol-41 never leaves: this is the behaviour Teredo
//! exists to work around.

use std::collections::BTreeMap;

use crate::addressing::V4Addr;
use crate::codec::{Packet, PROTO_IPV6, PROTO_UDP};
use crate::netsim::DropReason;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NatBinding {
    pub internal: (V4Addr, u16),
    pub external: (V4Addr, u16),
    pub last_used: f64,
}

#[derive(Debug)]
pub enum NatVerdict {
    Translated { packet: Packet, new_binding: bool },
    Dropped(DropReason),
}

#[derive(Debug, Clone)]
pub struct NatTable {
    external_v4: V4Addr,
    next_port: u16,
    bindings: Vec<NatBinding>,
    by_internal: BTreeMap<(V4Addr, u16), usize>,
    by_external_port: BTreeMap<u16, usize>,
}

impl NatTable {
    pub fn new(external_v4: V4Addr, first_port: u16) -> Self {
        NatTable {
            external_v4,
            next_port: first_port,
            bindings: Vec::new(),
            by_internal: BTreeMap::new(),
            by_external_port: BTreeMap::new(),
        }
    }

    pub fn external_v4(&self) -> V4Addr {
        self.external_v4
    }

    pub fn bindings(&self) -> &[NatBinding] {
        &self.bindings
    }

    pub fn lookup_internal(&self, v4: V4Addr, port: u16) -> Option<&NatBinding> {
        self.by_internal.get(&(v4, port)).map(|&i| &self.bindings[i])
    }

    fn bind(&mut self, internal: (V4Addr, u16), now: f64) -> Option<(u16, bool)> {
        if let Some(&i) = self.by_internal.get(&internal) {
            self.bindings[i].last_used = now;
            return Some((self.bindings[i].external.1, false));
        }
        // Skip ports that are already taken; give up once the space wraps.
        let start = self.next_port;
        while self.by_external_port.contains_key(&self.next_port) {
            self.next_port = self.next_port.wrapping_add(1).max(1024);
            if self.next_port == start {
                return None;
            }
        }
        let port = self.next_port;
        self.next_port = self.next_port.wrapping_add(1).max(1024);
        let idx = self.bindings.len();
        self.bindings.push(NatBinding { internal, external: (self.external_v4, port), last_used: now });
        self.by_internal.insert(internal, idx);
        self.by_external_port.insert(port, idx);
        Some((port, true))
    }

    pub fn nat_apply_outbound(&mut self, mut p: Packet, now: f64) -> NatVerdict {
        let Some(h) = p.outer_v4().copied() else {
            return NatVerdict::Dropped(DropReason::StackMismatch);
        };
        match h.protocol {
            PROTO_IPV6 => NatVerdict::Dropped(DropReason::Proto41AtNat),
            PROTO_UDP => {
                let sport = p.udp().expect("UDP layering").src_port;
                let Some((port, new_binding)) = self.bind((h.src, sport), now) else {
                    return NatVerdict::Dropped(DropReason::NatPortsExhausted);
                };
                p.outer_v4_mut().unwrap().src = self.external_v4;
                p.udp_mut().unwrap().src_port = port;
                p.seal().expect("rewriting addresses keeps the layering valid");
                NatVerdict::Translated { packet: p, new_binding }
            }
            _ => NatVerdict::Dropped(DropReason::NatUnsupported),
        }
    }

    pub fn nat_apply_inbound(&mut self, mut p: Packet, now: f64) -> NatVerdict {
        let Some(h) = p.outer_v4().copied() else {
            return NatVerdict::Dropped(DropReason::StackMismatch);
        };
        if h.protocol != PROTO_UDP || h.dst != self.external_v4 {
            return NatVerdict::Dropped(DropReason::NoNatBinding);
        }
        let dport = p.udp().expect("UDP layering").dst_port;
        let Some(&i) = self.by_external_port.get(&dport) else {
            return NatVerdict::Dropped(DropReason::NoNatBinding);
        };
        let b = &mut self.bindings[i];
        b.last_used = now;
        let (v4, port) = b.internal;
        p.outer_v4_mut().unwrap().dst = v4;
        p.udp_mut().unwrap().dst_port = port;
        p.seal().expect("rewriting addresses keeps the layering valid");
        NatVerdict::Translated { packet: p, new_binding: false }
    }
}
