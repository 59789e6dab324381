use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::addressing::{self, V4Addr, V6Addr};
use crate::codec::{
    EchoHeader, Ipv4Header, Ipv6Header, Layer, Packet, PacketKind, PacketMeta, UdpHeader, DNS_PORT, ECHO_REQUEST_V6,
    NEXT_HEADER_ICMPV6, NEXT_HEADER_NONE, PROTO_UDP, TEREDO_PORT,
};
use crate::tunnel::{ControlMsg, Endpoint, NatTable, Phase, Protocol, TunnelError, TunnelFunction, TunnelRole, TunnelState};

use super::topology::{Calibration, ProcessingCosts, Stack, Topology};
use super::trace::{DropReason, TraceEvent, TraceRecord};
use super::NodeId;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("duplicate node name {0:?}")]
    DuplicateNode(String),
    #[error("address {addr} is assigned to both {first:?} and {second:?}")]
    DuplicateAddress { addr: String, first: String, second: String },
    #[error("link {0}-{1}: {2}")]
    BadLink(String, String, &'static str),
    #[error("node {0:?}: {1}")]
    BadNode(String, String),
    #[error("event limit of {limit} reached at t={at:.3} ms")]
    EventLimit { limit: u64, at: f64 },
    #[error(transparent)]
    Setup(#[from] SetupError),
    #[error(transparent)]
    Dns(#[from] DnsError),
    #[error(transparent)]
    Tunnel(#[from] TunnelError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SetupError {
    #[error("node {0:?} has no tunnel client role")]
    NotAClient(String),
    #[error("no {protocol} tunnel server is configured for {client:?}")]
    NoServer { protocol: Protocol, client: String },
    #[error("{protocol} setup cannot complete: {reason}")]
    ProtocolViolation { protocol: Protocol, reason: String },
    #[error("setup request got no answer")]
    NoResponse,
    #[error("tunnel is already {0:?}")]
    WrongPhase(Phase),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DnsError {
    #[error("no DNS server in the topology")]
    NoServer,
    #[error("node {0:?} has no IPv4 address to query from")]
    NoSource(String),
    #[error("{0:?} does not resolve")]
    NxDomain(String),
    #[error("query for {0:?} got no answer")]
    NoResponse(String),
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    pub seed: u64,
    pub teredo_prefix: u32,
    pub max_events: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { seed: 0, teredo_prefix: addressing::TEREDO_DEFAULT_PREFIX, max_events: 50_000_000 }
    }
}

#[derive(Debug, Clone)]
pub struct SetupOutcome {
    pub prefix: V6Addr,
    pub address: V6Addr,
    pub delay_ms: f64,
    pub records: Vec<TraceRecord>,
}

#[derive(Debug, Clone)]
pub struct DnsOutcome {
    pub address: V6Addr,
    pub delay_ms: f64,
    pub records: Vec<TraceRecord>,
}

/// An application flow originating at `node`; packets are built lazily.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppFlow {
    pub flow_id: u32,
    pub node: NodeId,
    pub src: V6Addr,
    pub dst: V6Addr,
    /// Echo requests instead of plain data.
    pub ping: bool,
    pub payload_len: usize,
}

#[derive(Debug, Clone, Copy)]
pub(super) struct Rec {
    pub event: TraceEvent,
    pub packet_id: u64,
    pub flow_id: u32,
    pub kind: PacketKind,
    pub seq: u32,
    pub bytes: usize,
}

impl Rec {
    pub fn of(event: TraceEvent, p: &Packet) -> Self {
        Rec {
            event,
            packet_id: p.meta.packet_id,
            flow_id: p.meta.flow_id,
            kind: p.meta.kind,
            seq: p.meta.seq,
            bytes: p.wire_len(),
        }
    }
}

#[derive(Debug)]
pub(super) enum Out {
    /// Route out of the node.
    Send(Packet),
    /// Hand back to the node's own stack as a locally generated packet.
    Originate(Packet),
    Record(Rec),
    SetupDone,
    DnsAnswer { port: u16, answer: Option<V6Addr>, sent_at: f64 },
}

#[derive(Debug)]
enum Ev {
    Arrive { node: usize, from: Option<usize>, packet: Packet },
    Emit { node: usize, outs: Vec<Out> },
    Inject { flow: usize, seq: u32 },
}

struct Scheduled {
    time: f64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // BinaryHeap is a max-heap: reverse so the earliest (time, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug)]
pub(super) struct ClientRt {
    pub state: TunnelState,
    pub held: VecDeque<Packet>,
    pub stalled: bool,
    pub pending_refresh: Option<Packet>,
    pub interface_id: u64,
}

#[derive(Debug)]
pub(super) struct NodeRt {
    pub name: String,
    pub stack: Stack,
    pub v4: Vec<V4Addr>,
    pub v6: Vec<V6Addr>,
    pub costs: ProcessingCosts,
    pub role: Option<TunnelRole>,
    pub func: Option<TunnelFunction>,
    pub client: Option<ClientRt>,
    pub nat: Option<(NatTable, usize)>,
    /// Host name to the address it resolves to.
    pub dns: BTreeMap<String, V6Addr>,
    pub busy_until: f64,
    pub next_ephemeral: u16,
    pub pending_dns: BTreeMap<u16, f64>,
}

impl NodeRt {
    pub fn owns_v4(&self, a: V4Addr) -> bool {
        self.v4.contains(&a)
    }

    pub fn owns_v6(&self, a: V6Addr) -> bool {
        self.v6.contains(&a)
    }

    /// Local carrier endpoint for tunnels this node terminates.
    pub fn tunnel_local(&self, protocol: Protocol) -> Endpoint {
        let port = if protocol == Protocol::Teredo { TEREDO_PORT } else { 0 };
        Endpoint::new(self.v4.first().copied().unwrap_or(V4Addr::UNSPECIFIED), port)
    }
}

#[derive(Debug)]
struct LinkRt {
    a: usize,
    delay_ms: f64,
    rate: f64,
    mtu: usize,
    /// Time each direction's transmitter frees up; index 0 is a to b.
    busy: [f64; 2],
}

/// Discrete-event network simulator. Equal seeds and inputs give identical
/// traces.
pub struct Simulation {
    pub(super) nodes: Vec<NodeRt>,
    links: Vec<LinkRt>,
    next_hop: Vec<Vec<Option<(usize, usize)>>>,
    pub(super) owner_v4: HashMap<V4Addr, usize>,
    pub(super) owner_v6: HashMap<V6Addr, usize>,
    queue: BinaryHeap<Scheduled>,
    seq: u64,
    pub(super) now: f64,
    events: u64,
    pub(super) opts: SimOptions,
    pub(super) rng: ChaCha8Rng,
    pub(super) next_packet_id: u64,
    trace: Vec<TraceRecord>,
    flows: Vec<AppFlow>,
    setup_done: Option<f64>,
    dns_answers: BTreeMap<(usize, u16), (Option<V6Addr>, f64, f64)>,
}

impl Simulation {
    pub fn new(topo: &Topology, calibration: &Calibration, opts: SimOptions) -> Result<Self, SimError> {
        let mut index: HashMap<&str, usize> = HashMap::new();
        for (i, n) in topo.nodes.iter().enumerate() {
            if index.insert(n.name.as_str(), i).is_some() {
                return Err(SimError::DuplicateNode(n.name.clone()));
            }
        }
        let lookup = |name: &str| index.get(name).copied().ok_or_else(|| SimError::UnknownNode(name.to_string()));

        let mut owner_v4 = HashMap::new();
        let mut owner_v6 = HashMap::new();
        for (i, n) in topo.nodes.iter().enumerate() {
            for a in &n.v4 {
                if let Some(j) = owner_v4.insert(*a, i) {
                    return Err(dup(a.to_string(), &topo.nodes[j].name, &n.name));
                }
            }
            for a in &n.v6 {
                if let Some(j) = owner_v6.insert(*a, i) {
                    return Err(dup(a.to_string(), &topo.nodes[j].name, &n.name));
                }
            }
        }
        let first_v4 = |i: usize| {
            topo.nodes[i]
                .v4
                .first()
                .copied()
                .ok_or_else(|| SimError::BadNode(topo.nodes[i].name.clone(), "tunnel peer has no IPv4 address".into()))
        };

        let mut nodes = Vec::with_capacity(topo.nodes.len());
        for n in &topo.nodes {
            let costs = calibration.costs_for(n);
            if !costs.all_finite_nonneg() {
                return Err(SimError::BadNode(n.name.clone(), "processing costs must be finite and non-negative".into()));
            }
            let own_v4 = n.v4.first().copied();
            if n.tunnel.is_some() && (own_v4.is_none() || !n.stack.has_v4()) {
                return Err(SimError::BadNode(n.name.clone(), "tunnel endpoints need IPv4".into()));
            }
            let own_v4 = own_v4.unwrap_or(V4Addr::UNSPECIFIED);
            let mut client = None;
            let func = match &n.tunnel {
                None => None,
                Some(TunnelRole::IsatapHost { router }) => {
                    let r = lookup(router)?;
                    let router_v4 = first_v4(r)?;
                    client = Some(ClientRt::new(
                        TunnelState::new(
                            Protocol::Isatap,
                            NodeId(r),
                            Endpoint::new(router_v4, 0),
                            Endpoint::new(own_v4, 0),
                            addressing::isatap_link_local(own_v4),
                        ),
                        0,
                    ));
                    Some(TunnelFunction::IsatapHost { router_v4 })
                }
                Some(TunnelRole::IsatapRouter { prefix }) => {
                    if prefix.low64() != 0 {
                        return Err(SimError::BadNode(n.name.clone(), format!("ISATAP prefix {prefix} is not a /64")));
                    }
                    Some(TunnelFunction::IsatapRouter { prefix: *prefix })
                }
                Some(TunnelRole::SixToFourHost { router, interface_id }) => {
                    let r = lookup(router)?;
                    client = Some(ClientRt::new(
                        TunnelState::new(
                            Protocol::SixToFour,
                            NodeId(r),
                            Endpoint::new(first_v4(r)?, 0),
                            Endpoint::new(own_v4, 0),
                            LINK_LOCAL_CLIENT,
                        ),
                        *interface_id,
                    ));
                    Some(TunnelFunction::SixToFourHost)
                }
                Some(TunnelRole::SixToFourRouter { relay }) => {
                    let relay_v4 = match relay {
                        Some(r) => Some(first_v4(lookup(r)?)?),
                        None => None,
                    };
                    Some(TunnelFunction::SixToFourRouter { site_v4: own_v4, relay_v4 })
                }
                Some(TunnelRole::SixToFourRelay) => Some(TunnelFunction::SixToFourRelay),
                Some(TunnelRole::TeredoClient { server, relay, port }) => {
                    let s = lookup(server)?;
                    let relay_v4 = first_v4(lookup(relay)?)?;
                    client = Some(ClientRt::new(
                        TunnelState::new(
                            Protocol::Teredo,
                            NodeId(s),
                            Endpoint::new(first_v4(s)?, TEREDO_PORT),
                            Endpoint::new(own_v4, *port),
                            LINK_LOCAL_CLIENT,
                        ),
                        0,
                    ));
                    Some(TunnelFunction::TeredoClient { relay_v4 })
                }
                Some(TunnelRole::TeredoServer) => Some(TunnelFunction::TeredoServer),
                Some(TunnelRole::TeredoRelay) => Some(TunnelFunction::TeredoRelay),
            };
            let nat = match (&n.nat, &n.nat_inside) {
                (None, _) => None,
                (Some(_), None) => {
                    return Err(SimError::BadNode(n.name.clone(), "NAT needs nat_inside".into()));
                }
                (Some(spec), Some(inside)) => {
                    if !n.v4.contains(&spec.external) {
                        return Err(SimError::BadNode(n.name.clone(), "NAT external address must be one of its v4".into()));
                    }
                    Some((NatTable::new(spec.external, spec.first_port), lookup(inside)?))
                }
            };
            let mut dns = BTreeMap::new();
            for (host, target) in &n.dns_records {
                let t = lookup(target)?;
                let a = topo.nodes[t].v6.first().copied().ok_or_else(|| {
                    SimError::BadNode(n.name.clone(), format!("DNS target {target:?} has no IPv6 address"))
                })?;
                dns.insert(host.clone(), a);
            }
            nodes.push(NodeRt {
                name: n.name.clone(),
                stack: n.stack,
                v4: n.v4.clone(),
                v6: n.v6.clone(),
                costs,
                role: n.tunnel.clone(),
                func,
                client,
                nat,
                dns,
                busy_until: 0.0,
                next_ephemeral: EPHEMERAL_BASE,
                pending_dns: BTreeMap::new(),
            });
        }

        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nodes.len()];
        let mut links = Vec::with_capacity(topo.links.len());
        for l in &topo.links {
            let (a, b) = (lookup(&l.a)?, lookup(&l.b)?);
            let p = l.params;
            let bad = |why| SimError::BadLink(l.a.clone(), l.b.clone(), why);
            if a == b {
                return Err(bad("self loop"));
            }
            if !(p.delay_ms.is_finite() && p.delay_ms >= 0.0) {
                return Err(bad("delay must be finite and non-negative"));
            }
            if !(p.rate_bits_per_ms.is_finite() && p.rate_bits_per_ms > 0.0) {
                return Err(bad("rate must be positive"));
            }
            if p.mtu < 68 {
                return Err(bad("mtu below 68"));
            }
            adj[a].push((b, links.len()));
            adj[b].push((a, links.len()));
            links.push(LinkRt { a, delay_ms: p.delay_ms, rate: p.rate_bits_per_ms, mtu: p.mtu, busy: [0.0; 2] });
        }

        Ok(Simulation {
            next_hop: shortest_paths(&adj),
            nodes,
            links,
            owner_v4,
            owner_v6,
            queue: BinaryHeap::new(),
            seq: 0,
            now: 0.0,
            events: 0,
            opts,
            rng: ChaCha8Rng::seed_from_u64(opts.seed),
            next_packet_id: 1,
            trace: Vec::new(),
            flows: Vec::new(),
            setup_done: None,
            dns_answers: BTreeMap::new(),
        })
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn into_trace(self) -> Vec<TraceRecord> {
        self.trace
    }

    pub fn node_names(&self) -> Vec<String> {
        self.nodes.iter().map(|n| n.name.clone()).collect()
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name).map(NodeId)
    }

    pub fn node_name(&self, id: NodeId) -> &str {
        &self.nodes[id.0].name
    }

    /// Primary IPv6 address: the tunnel address once set up, else the first
    /// configured one.
    pub fn v6_address(&self, id: NodeId) -> Option<V6Addr> {
        let n = &self.nodes[id.0];
        n.client.as_ref().and_then(|c| c.state.address).or_else(|| n.v6.first().copied())
    }

    pub fn tunnel_state(&self, id: NodeId) -> Option<&TunnelState> {
        self.nodes[id.0].client.as_ref().map(|c| &c.state)
    }

    pub fn nat_table(&self, id: NodeId) -> Option<&NatTable> {
        self.nodes[id.0].nat.as_ref().map(|(t, _)| t)
    }

    /// Devices the tunnel needs beyond the end hosts and ordinary routers.
    pub fn count_auxiliary_devices(&self) -> Vec<&'static str> {
        self.nodes
            .iter()
            .filter_map(|n| match n.role {
                Some(TunnelRole::SixToFourRelay) => Some("6to4 Relay"),
                Some(TunnelRole::TeredoServer) => Some("Teredo Server"),
                _ => None,
            })
            .collect()
    }

    pub(super) fn fresh_meta(&mut self, kind: PacketKind, flow_id: u32, seq: u32) -> PacketMeta {
        let packet_id = self.next_packet_id;
        self.next_packet_id += 1;
        PacketMeta { packet_id, flow_id, kind, created_at: self.now, seq }
    }

    fn push(&mut self, time: f64, ev: Ev) {
        self.seq += 1;
        self.queue.push(Scheduled { time, seq: self.seq, ev });
    }

    fn record(&mut self, node: usize, r: Rec) {
        self.trace.push(TraceRecord {
            time_ms: self.now,
            node: NodeId(node),
            packet_id: r.packet_id,
            flow_id: r.flow_id,
            kind: r.kind,
            seq: r.seq,
            event: r.event,
            bytes: r.bytes,
        });
    }

    /// Processes events until the queue is empty.
    pub fn run(&mut self) -> Result<(), SimError> {
        while let Some(Scheduled { time, ev, .. }) = self.queue.pop() {
            self.events += 1;
            if self.events > self.opts.max_events {
                return Err(SimError::EventLimit { limit: self.opts.max_events, at: time });
            }
            debug_assert!(time >= self.now);
            self.now = time;
            match ev {
                Ev::Arrive { node, from, packet } => {
                    let start = self.now.max(self.nodes[node].busy_until);
                    let mut outs = Vec::new();
                    let cost = match from {
                        None => self.originate(node, packet, &mut outs),
                        Some(f) => self.receive(node, f, packet, start, &mut outs),
                    };
                    let end = start + cost;
                    self.nodes[node].busy_until = end;
                    if !outs.is_empty() {
                        self.push(end, Ev::Emit { node, outs });
                    }
                }
                Ev::Emit { node, outs } => self.emit(node, outs),
                Ev::Inject { flow, seq } => self.inject(flow, seq),
            }
        }
        Ok(())
    }

    /// Moves the clock forward to `t` when nothing is pending. Earlier
    /// times are ignored.
    pub fn advance_to(&mut self, t: f64) {
        if self.queue.is_empty() && t > self.now {
            self.now = t;
        }
    }

    fn emit(&mut self, node: usize, outs: Vec<Out>) {
        for o in outs {
            match o {
                Out::Send(p) => self.transmit(node, p),
                Out::Originate(p) => self.push(self.now, Ev::Arrive { node, from: None, packet: p }),
                Out::Record(r) => self.record(node, r),
                Out::SetupDone => self.setup_done = Some(self.now),
                Out::DnsAnswer { port, answer, sent_at } => {
                    self.dns_answers.insert((node, port), (answer, sent_at, self.now));
                }
            }
        }
    }

    fn transmit(&mut self, node: usize, p: Packet) {
        let dst = match p.layers.first() {
            Some(Layer::Ipv4(h)) => self.owner_v4.get(&h.dst).copied(),
            Some(Layer::Ipv6(h)) => self.owner_v6.get(&h.dst).copied(),
            _ => None,
        };
        let hop = dst.filter(|d| *d != node).and_then(|d| self.next_hop[node][d]);
        let Some((next, li)) = hop else {
            self.record(node, Rec::of(TraceEvent::Drop(DropReason::NoRoute), &p));
            return;
        };
        let bytes = p.wire_len();
        let link = &mut self.links[li];
        if bytes > link.mtu {
            self.record(node, Rec::of(TraceEvent::Drop(DropReason::MtuExceeded), &p));
            return;
        }
        let dir = usize::from(link.a != node);
        let start = self.now.max(link.busy[dir]);
        let done = start + (bytes * 8) as f64 / link.rate;
        link.busy[dir] = done;
        let arrival = done + link.delay_ms;
        self.push(arrival, Ev::Arrive { node: next, from: Some(node), packet: p });
    }

    fn inject(&mut self, flow: usize, seq: u32) {
        let f = self.flows[flow];
        let (kind, nh) = if f.ping { (PacketKind::EchoRequest, NEXT_HEADER_ICMPV6) } else { (PacketKind::Data, NEXT_HEADER_NONE) };
        let meta = self.fresh_meta(kind, f.flow_id, seq);
        let mut layers = vec![Layer::Ipv6(Ipv6Header::new(nh, f.src, f.dst))];
        if f.ping {
            layers.push(Layer::Echo(EchoHeader::new(ECHO_REQUEST_V6, f.flow_id as u16, seq as u16)));
        }
        let p = Packet::new(layers, vec![seq as u8; f.payload_len], meta).expect("valid app packet");
        self.record(f.node.0, Rec::of(TraceEvent::Sent, &p));
        self.push(self.now, Ev::Arrive { node: f.node.0, from: None, packet: p });
    }

    /// Hands a ready-made packet to `node` at time `at`, as if generated
    /// there. Nothing is recorded until the packet is processed.
    pub fn inject_raw(&mut self, node: NodeId, packet: Packet, at: f64) {
        self.push(at.max(self.now), Ev::Arrive { node: node.0, from: None, packet });
    }

    /// Schedules one packet of `flow` at each of `times`.
    pub fn add_flow(&mut self, flow: AppFlow, times: &[f64]) {
        let idx = self.flows.len();
        self.flows.push(flow);
        for (seq, t) in times.iter().enumerate() {
            self.push(*t, Ev::Inject { flow: idx, seq: seq as u32 });
        }
    }

    /// Runs the three-message setup for `client` to completion. The delay
    /// is measured from the request leaving the client to the server
    /// finishing with the confirmation.
    pub fn tunnel_setup(&mut self, client: NodeId) -> Result<SetupOutcome, SimError> {
        let c = client.0;
        let name = self.nodes[c].name.clone();
        let Some(rt) = self.nodes[c].client.as_ref() else {
            return Err(SetupError::NotAClient(name).into());
        };
        let (protocol, server, phase) = (rt.state.protocol, rt.state.server.0, rt.state.phase);
        if phase != Phase::Idle {
            return Err(SetupError::WrongPhase(phase).into());
        }
        let serves = self.nodes[server].role.as_ref().is_some_and(|r| r.is_server() && r.protocol() == protocol);
        if !serves {
            return Err(SetupError::NoServer { protocol, client: name }.into());
        }
        let meta = self.fresh_meta(PacketKind::Setup, 0, 0);
        let rt = self.nodes[c].client.as_mut().expect("checked above");
        rt.state.phase = Phase::SetupPending;
        let req = rt.state.control(ControlMsg::SetupRequest, meta)?;
        let mark = self.trace.len();
        let t0 = self.now;
        self.setup_done = None;
        self.record(c, Rec::of(TraceEvent::SetupMsg("setup_request"), &req));
        self.push(t0, Ev::Arrive { node: c, from: None, packet: req });
        self.run()?;

        let records = self.trace[mark..].to_vec();
        let st = &self.nodes[c].client.as_ref().expect("client").state;
        match (self.setup_done, st.assigned_prefix, st.address) {
            (Some(t), Some(prefix), Some(address)) => Ok(SetupOutcome { prefix, address, delay_ms: t - t0, records }),
            _ => {
                let blocked = records.iter().find_map(|r| match r.event {
                    TraceEvent::Drop(d) => Some((d, r.node)),
                    _ => None,
                });
                Err(match blocked {
                    Some((d, at)) => SetupError::ProtocolViolation {
                        protocol,
                        reason: format!("{} at {}", d.as_str(), self.nodes[at.0].name),
                    },
                    None => SetupError::NoResponse,
                }
                .into())
            }
        }
    }

    /// Resolves `host` from `client` over IPv4/UDP and reports the query
    /// delay.
    pub fn dns_resolve(&mut self, client: NodeId, host: &str) -> Result<DnsOutcome, SimError> {
        let c = client.0;
        let server = self.nodes.iter().find(|n| !n.dns.is_empty()).and_then(|n| n.v4.first().copied());
        let server = server.ok_or(DnsError::NoServer)?;
        let Some(src) = self.nodes[c].v4.first().copied() else {
            return Err(DnsError::NoSource(self.nodes[c].name.clone()).into());
        };
        let node = &mut self.nodes[c];
        let port = node.next_ephemeral;
        node.next_ephemeral = node.next_ephemeral.checked_add(1).unwrap_or(EPHEMERAL_BASE);
        let t0 = self.now;
        node.pending_dns.insert(port, t0);
        let meta = self.fresh_meta(PacketKind::DnsQuery, 0, 0);
        let q = Packet::new(
            vec![Layer::Ipv4(Ipv4Header::new(PROTO_UDP, src, server)), Layer::Udp(UdpHeader::new(port, DNS_PORT))],
            host.as_bytes().to_vec(),
            meta,
        )
        .expect("valid query");
        let mark = self.trace.len();
        self.record(c, Rec::of(TraceEvent::DnsQuery, &q));
        self.push(t0, Ev::Arrive { node: c, from: None, packet: q });
        self.run()?;
        let records = self.trace[mark..].to_vec();
        match self.dns_answers.get(&(c, port)) {
            Some((Some(a), sent, got)) => Ok(DnsOutcome { address: *a, delay_ms: got - sent, records }),
            Some((None, _, _)) => Err(DnsError::NxDomain(host.to_string()).into()),
            None => Err(DnsError::NoResponse(host.to_string()).into()),
        }
    }
}

pub(super) const LINK_LOCAL_CLIENT: V6Addr = V6Addr(0xfe80_0000_0000_0000_0000_0000_0000_0001);
pub(super) const LINK_LOCAL_SERVER: V6Addr = V6Addr(0xfe80_0000_0000_0000_0000_0000_0000_0002);
const EPHEMERAL_BASE: u16 = 53000;

impl ClientRt {
    fn new(state: TunnelState, interface_id: u64) -> Self {
        ClientRt { state, held: VecDeque::new(), stalled: false, pending_refresh: None, interface_id }
    }
}

fn dup(addr: String, first: &str, second: &str) -> SimError {
    SimError::DuplicateAddress { addr, first: first.to_string(), second: second.to_string() }
}

/// First hop (neighbour, link) from every node to every other, by BFS in
/// link declaration order.
fn shortest_paths(adj: &[Vec<(usize, usize)>]) -> Vec<Vec<Option<(usize, usize)>>> {
    let n = adj.len();
    let mut table = vec![vec![None; n]; n];
    for (src, row) in table.iter_mut().enumerate() {
        let mut seen = vec![false; n];
        seen[src] = true;
        let mut q = VecDeque::new();
        for &(nb, li) in &adj[src] {
            if !seen[nb] {
                seen[nb] = true;
                row[nb] = Some((nb, li));
                q.push_back(nb);
            }
        }
        while let Some(u) = q.pop_front() {
            let first = row[u];
            for &(nb, _) in &adj[u] {
                if !seen[nb] {
                    seen[nb] = true;
                    row[nb] = first;
                    q.push_back(nb);
                }
            }
        }
    }
    table
}
