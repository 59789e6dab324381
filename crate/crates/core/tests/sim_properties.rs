mod common;

use std::collections::BTreeMap;

use common::{needs_nat, short, ALL, TUNNELED};
use tunsim_core::codec::{Ipv4Header, Ipv6Header, Layer, Packet, PacketKind, PacketMeta, NEXT_HEADER_NONE, PROTO_IPV6};
use tunsim_core::netsim::topology::addr;
use tunsim_core::netsim::{hybrid, Calibration, DropReason, SimError, SimOptions, Simulation, TraceEvent};
use tunsim_core::netsim::SetupError;
use tunsim_core::scenario::run_once;
use tunsim_core::traffic::FlowKind;
use tunsim_core::tunnel::Protocol;

fn drop_reason(e: TraceEvent) -> Option<&'static str> {
    match e {
        TraceEvent::Drop(d) => Some(d.as_str()),
        _ => None,
    }
}

#[test]
fn same_seed_same_trace() {
    for p in TUNNELED {
        let cfg = short(p, needs_nat(p), 5.0, 3);
        let a = run_once(&cfg, 11).unwrap();
        let b = run_once(&cfg, 11).unwrap();
        assert_eq!(a.trace, b.trace, "{p}");
        assert_eq!(a.summary, b.summary, "{p}");
    }
}

#[test]
fn lossless_scenarios_conserve_packets() {
    for p in ALL {
        let cfg = short(p, needs_nat(p), 10.0, 5);
        let run = run_once(&cfg, 3).unwrap();
        for log in run.logs.values() {
            assert_eq!(log.sent(), log.received(), "{p} flow {}", log.flow_id);
        }
        let sent: usize = run.logs.values().map(|l| l.sent()).sum();
        assert_eq!(sent, 400 + 5);
        assert!(!run.trace.iter().any(|r| matches!(r.event, TraceEvent::Drop(_))), "{p}");
    }
}

#[test]
fn trace_is_causal_and_flows_stay_fifo() {
    for p in ALL {
        let run = run_once(&short(p, needs_nat(p), 10.0, 5), 7).unwrap();
        assert!(run.trace.windows(2).all(|w| w[0].time_ms <= w[1].time_ms), "{p}: trace out of order");
        for log in run.logs.values() {
            for s in &log.samples {
                assert!(s.tr.unwrap() > s.ts, "{p}: receive before send");
            }
            if log.kind == FlowKind::UdpStream {
                let tr: Vec<f64> = log.samples.iter().map(|s| s.tr.unwrap()).collect();
                assert!(tr.windows(2).all(|w| w[0] < w[1]), "{p}: reordering");
            }
        }
    }
}

#[test]
fn baseline_never_tunnels() {
    let run = run_once(&short("baseline", false, 5.0, 3), 1).unwrap();
    assert!(run.trace.iter().all(|r| !matches!(
        r.event,
        TraceEvent::Encap | TraceEvent::Decap | TraceEvent::Refresh(_) | TraceEvent::SetupMsg(_)
    )));
    assert_eq!(run.summary.tunnel_setup_delay, None);
    assert_eq!(run.summary.aux_devices, 0);
}

#[test]
fn tunneled_packets_carry_fixed_overhead() {
    for (p, extra) in [("isatap", 20), ("6to4", 20), ("teredo", 28)] {
        let run = run_once(&short(p, needs_nat(p), 2.0, 1), 1).unwrap();
        let enc = run.trace.iter().find(|r| r.event == TraceEvent::Encap && r.kind == PacketKind::Data).unwrap();
        assert_eq!(enc.bytes, 40 + 1500 + extra, "{p}");
    }
}

/// Refresh packets in the trace for a run with `n` data packets.
fn refreshes(protocol: &str, n: u32, seed: u64) -> usize {
    let mut cfg = short(protocol, needs_nat(protocol), f64::from(n) / 40.0, 1);
    cfg.flows.retain(|f| f.kind == FlowKind::UdpStream);
    cfg.flows[0].duration_s = Some(f64::from(n) / 40.0);
    // the summary needs a ping flow, so count straight from the simulator trace
    let mut sim = Simulation::new(&cfg.topology, &cfg.calibration, SimOptions { seed, ..Default::default() }).unwrap();
    let s = sim.node_id("sender").unwrap();
    sim.tunnel_setup(s).unwrap();
    let r = sim.node_id("receiver").unwrap();
    let times = tunsim_core::traffic::generate(&cfg.flows[0], 100.0).unwrap();
    assert_eq!(times.len(), n as usize);
    let flow = tunsim_core::netsim::AppFlow {
        flow_id: 1,
        node: s,
        src: sim.v6_address(s).unwrap(),
        dst: sim.v6_address(r).unwrap(),
        ping: false,
        payload_len: 1500,
    };
    sim.add_flow(flow, &times);
    sim.run().unwrap();
    sim.trace().iter().filter(|r| r.node == s && r.event == TraceEvent::Refresh("refresh")).count()
}

#[test]
fn refresh_cadence_in_simulation() {
    // a due refresh leaves with the next data packet, so the 26th packet
    // arms the second refresh and the 27th carries it out
    assert_eq!(refreshes("isatap", 26, 1), 1);
    assert_eq!(refreshes("isatap", 27, 1), 2);
    assert_eq!(refreshes("teredo", 20, 1), 0);
    assert_eq!(refreshes("isatap", 1000, 1), 1000 / 13);
    assert_eq!(refreshes("teredo", 1000, 1), 1000 / 21);
    for seed in 0..5 {
        let n = refreshes("6to4", 1000, seed);
        assert!((52..=55).contains(&n), "seed {seed}: {n}");
    }
}

#[test]
fn sixto4_behind_nat_fails_setup_with_reason() {
    let cfg = short("6to4", true, 1.0, 1);
    let mut sim = Simulation::new(&cfg.topology, &cfg.calibration, SimOptions::default()).unwrap();
    let s = sim.node_id("sender").unwrap();
    match sim.tunnel_setup(s) {
        Err(SimError::Setup(SetupError::ProtocolViolation { protocol, reason })) => {
            assert_eq!(protocol, Protocol::SixToFour);
            assert_eq!(reason, "nat_proto41 at nat");
        }
        other => panic!("expected a protocol violation, got {other:?}"),
    }
    let drops: Vec<_> = sim.trace().iter().filter_map(|r| drop_reason(r.event)).collect();
    assert_eq!(drops, vec![DropReason::Proto41AtNat.as_str()]);
}

#[test]
fn proto41_at_teredo_relay_is_a_layering_mismatch() {
    let topo = hybrid(Protocol::Teredo, true, Default::default());
    let mut sim = Simulation::new(&topo, &Calibration::default(), SimOptions::default()).unwrap();
    let from = sim.node_id("inet").unwrap();
    let inner = Ipv6Header::new(NEXT_HEADER_NONE, addr::SENDER_V6, addr::RECEIVER_V6);
    let outer = Ipv4Header::new(PROTO_IPV6, addr::INET_V4, addr::R2_V4);
    let p = Packet::new(vec![Layer::Ipv4(outer), Layer::Ipv6(inner)], vec![0; 64], PacketMeta::default()).unwrap();
    sim.inject_raw(from, p, 0.0);
    sim.run().unwrap();
    let drops: BTreeMap<&str, String> = sim
        .trace()
        .iter()
        .filter_map(|r| drop_reason(r.event).map(|d| (d, sim.node_name(r.node).to_string())))
        .collect();
    assert_eq!(drops.get("layering_mismatch").map(String::as_str), Some("r2"));
}

#[test]
fn every_drop_names_a_reason() {
    // ping an address nobody owns: the first router has no route
    let cfg = short("isatap", false, 1.0, 1);
    let mut sim = Simulation::new(&cfg.topology, &cfg.calibration, SimOptions::default()).unwrap();
    let from = sim.node_id("r1").unwrap();
    let outer = Ipv4Header::new(PROTO_IPV6, addr::R1_V4, "10.99.0.1".parse().unwrap());
    let inner = Ipv6Header::new(NEXT_HEADER_NONE, addr::SENDER_V6, addr::RECEIVER_V6);
    let p = Packet::new(vec![Layer::Ipv4(outer), Layer::Ipv6(inner)], vec![], PacketMeta::default()).unwrap();
    sim.inject_raw(from, p, 0.0);
    sim.run().unwrap();
    let drops: Vec<_> = sim.trace().iter().filter(|r| matches!(r.event, TraceEvent::Drop(_))).collect();
    assert_eq!(drops.len(), 1);
    assert_eq!(drop_reason(drops[0].event), Some("no_route"));
}
