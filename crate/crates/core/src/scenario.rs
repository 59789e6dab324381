//! Runs a configured scenario: tunnel setup, DNS query, traffic, metrics.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::config::ScenarioConfig;
use crate::metrics::{self, MetricError, MetricsSummary};
use crate::netsim::{AppFlow, SimError, SimOptions, Simulation, TraceRecord};
use crate::traffic::{self, FlowKind, FlowLog, TrafficError};
use crate::tunnel::Protocol;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("seed {seed}: {source}")]
    Sim { seed: u64, source: SimError },
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("node {node:?} has no IPv6 address for flow {flow:?}")]
    NoV6 { flow: String, node: String },
    #[error("unknown node {0:?}")]
    UnknownNode(String),
}

/// Everything one replication produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub node_names: Vec<String>,
    pub trace: Vec<TraceRecord>,
    pub logs: BTreeMap<u32, FlowLog>,
    pub summary: MetricsSummary,
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub runs: Vec<RunOutput>,
    /// Mean over the replications.
    pub summary: MetricsSummary,
    /// Untunneled RTT per replication, when the overhead was measured.
    pub baseline_rtt: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Seed of replication `rep` (0-based).
pub fn replication_seed(base: u64, rep: u32) -> u64 {
    base.wrapping_add(u64::from(rep))
}

fn node(sim: &Simulation, name: &str) -> Result<crate::netsim::NodeId, RunError> {
    sim.node_id(name).ok_or_else(|| RunError::UnknownNode(name.to_string()))
}

/// Builds and runs the simulation for one seed and returns the trace and
/// flow logs, plus setup and query delays where they apply.
fn simulate(cfg: &ScenarioConfig, seed: u64) -> Result<(Simulation, Option<f64>, Option<f64>), RunError> {
    let sim_err = |source| RunError::Sim { seed, source };
    let opts = SimOptions { seed, teredo_prefix: cfg.teredo_prefix, max_events: cfg.max_events };
    let mut sim = Simulation::new(&cfg.topology, &cfg.calibration, opts).map_err(sim_err)?;
    let sender = node(&sim, &cfg.run.sender)?;

    let setup = if cfg.protocol == Protocol::Baseline {
        None
    } else {
        Some(sim.tunnel_setup(sender).map_err(sim_err)?.delay_ms)
    };
    sim.advance_to(cfg.run.dns_at_ms);
    let query = sim.dns_resolve(sender, &cfg.run.dns_name).map_err(sim_err)?.delay_ms;
    sim.advance_to(cfg.run.traffic_epoch_ms);

    for (i, plan) in cfg.flows.iter().enumerate() {
        let times = traffic::generate(plan, cfg.run.traffic_epoch_ms)?;
        let src = node(&sim, &plan.src)?;
        let dst = node(&sim, &plan.dst)?;
        let addr = |id, name: &str| {
            sim.v6_address(id).ok_or_else(|| RunError::NoV6 { flow: plan.name.clone(), node: name.to_string() })
        };
        let flow = AppFlow {
            flow_id: i as u32 + 1,
            node: src,
            src: addr(src, &plan.src)?,
            dst: addr(dst, &plan.dst)?,
            ping: plan.kind == FlowKind::Ping,
            payload_len: plan.payload(),
        };
        sim.add_flow(flow, &times);
    }
    sim.run().map_err(sim_err)?;
    Ok((sim, setup, Some(query)))
}

/// One replication with the given seed.
pub fn run_once(cfg: &ScenarioConfig, seed: u64) -> Result<RunOutput, RunError> {
    let (sim, setup, query) = simulate(cfg, seed)?;
    let aux = sim.count_auxiliary_devices();
    let node_names = sim.node_names();
    let trace = sim.into_trace();
    let logs = traffic::collect(&trace)?;
    let fm = metrics::flow_metrics(logs.values())?;
    let summary = MetricsSummary {
        protocol: cfg.protocol,
        throughput_pps: fm.throughput_pps,
        throughput_kbps: metrics::throughput_kbps(fm.throughput_pps),
        e2ed_mean: fm.e2ed_mean,
        jitter_mean: fm.jitter_mean,
        jitter_variance: fm.jitter_variance,
        jitter_stddev: fm.jitter_variance.sqrt(),
        rtt_mean: fm.rtt_mean.ok_or(MetricError::NoFlow("ping"))?,
        tunneling_overhead: None,
        tunnel_setup_delay: setup,
        query_delay: query,
        aux_devices: aux.len() as u32,
        aux_device_names: aux.join(";"),
    };
    Ok(RunOutput { seed, node_names, trace, logs, summary })
}

/// Mean RTT over the ping flows of an untunneled run with the same seed.
pub fn baseline_rtt(cfg: &ScenarioConfig, seed: u64) -> Result<f64, RunError> {
    let b = cfg.baseline_variant();
    let (sim, _, _) = simulate(&b, seed)?;
    let logs = traffic::collect(sim.trace())?;
    let rtts = logs
        .values()
        .filter(|l| l.kind == FlowKind::Ping)
        .map(metrics::rtt)
        .map(|r| r.map(|s| s.mean))
        .collect::<Result<Vec<_>, _>>()?;
    if rtts.is_empty() {
        return Err(MetricError::NoFlow("ping").into());
    }
    Ok(rtts.iter().sum::<f64>() / rtts.len() as f64)
}

/// Runs `reps` replications from `base_seed` (in parallel; results do not
/// depend on scheduling). Tunneled scenarios also run the untunneled
/// counterpart per seed to obtain the tunneling overhead.
pub fn run_scenario(cfg: &ScenarioConfig, reps: u32, base_seed: u64) -> Result<ScenarioResult, RunError> {
    let reps = reps.max(1);
    let tunneled = cfg.protocol != Protocol::Baseline;
    let results: Vec<Result<(RunOutput, Option<f64>), RunError>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..reps)
            .map(|r| {
                let seed = replication_seed(base_seed, r);
                s.spawn(move || {
                    let run = run_once(cfg, seed)?;
                    let base = if tunneled { Some(baseline_rtt(cfg, seed)?) } else { None };
                    Ok((run, base))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("replication thread panicked")).collect()
    });

    let mut runs = Vec::new();
    let mut baseline = Vec::new();
    let mut warnings = Vec::new();
    for r in results {
        let (mut run, base) = r?;
        if let Some(b) = base {
            let o = metrics::tunneling_overhead(run.summary.rtt_mean, b);
            if let Some(w) = o.warning {
                warnings.push(format!("seed {}: {w}", run.seed));
            }
            run.summary.tunneling_overhead = Some(o.value);
            baseline.push(b);
        }
        runs.push(run);
    }
    let per_run: Vec<MetricsSummary> = runs.iter().map(|r| r.summary.clone()).collect();
    let summary = metrics::average(&per_run)?;
    Ok(ScenarioResult { runs, summary, baseline_rtt: baseline, warnings })
}
