//! The eight comparison metrics, their averaging across replications, and
//! the per-metric ranking.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::traffic::{FlowKind, FlowLog};
use crate::tunnel::Protocol;

/// Bytes per packet assumed when converting packets/s to Kbps.
pub const PACKET_BYTES: f64 = 1500.0;

/// Relative tolerance under which two metric values rank equal.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("empty sample")]
    EmptySample,
    #[error("observation span is zero")]
    ZeroSpan,
    #[error("flow {0} has no received packets")]
    NothingReceived(u32),
    #[error("no {0} flow in the run")]
    NoFlow(&'static str),
    #[error("summary for {protocol} lacks {metric}")]
    Incomplete { protocol: Protocol, metric: &'static str },
    #[error("no summary for {0}")]
    MissingProtocol(Protocol),
}

/// Received packets over the span from first send to last receive.
pub fn throughput_pps(log: &FlowLog) -> Result<f64, MetricError> {
    let first_send = log.samples.iter().map(|s| s.ts).reduce(f64::min).ok_or(MetricError::EmptySample)?;
    let last_recv = log.samples.iter().filter_map(|s| s.tr).reduce(f64::max).ok_or(MetricError::NothingReceived(log.flow_id))?;
    let span_s = (last_recv - first_send) / 1000.0;
    if span_s <= 0.0 {
        return Err(MetricError::ZeroSpan);
    }
    Ok(log.received() as f64 / span_s)
}

/// Kilobits per second for 1500-byte packets. The factor is folded into one
/// constant (exactly 12) so the result is `pps * 12` to the last bit.
pub fn throughput_kbps(pps: f64) -> f64 {
    const KBITS_PER_PACKET: f64 = PACKET_BYTES * 8.0 / 1000.0;
    pps * KBITS_PER_PACKET
}

/// Per-packet delays `Tr - Ts` of received packets in seq order, and their
/// mean.
pub fn e2ed(log: &FlowLog) -> Result<(Vec<f64>, f64), MetricError> {
    let d: Vec<f64> = log.samples.iter().filter_map(|s| s.tr.map(|tr| tr - s.ts)).collect();
    let m = mean(&d).ok_or(MetricError::NothingReceived(log.flow_id))?;
    Ok((d, m))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Jitter {
    /// `J_0 = 0`, then `|D_i - D_(i-1)|`.
    pub series: Vec<f64>,
    /// Mean over `i >= 1`; zero for a single packet.
    pub mean: f64,
    /// Signed sum of `D_i - D_(i-1)`, which telescopes to `D_n - D_0`.
    pub telescoping: f64,
}

impl Jitter {
    /// The `i >= 1` part of the series.
    pub fn tail(&self) -> &[f64] {
        &self.series[1..]
    }
}

pub fn jitter(delays: &[f64]) -> Result<Jitter, MetricError> {
    if delays.is_empty() {
        return Err(MetricError::EmptySample);
    }
    let mut series = Vec::with_capacity(delays.len());
    series.push(0.0);
    let mut telescoping = 0.0;
    for w in delays.windows(2) {
        series.push((w[1] - w[0]).abs());
        telescoping += w[1] - w[0];
    }
    let mean = mean(&series[1..]).unwrap_or(0.0);
    Ok(Jitter { series, mean, telescoping })
}

fn mean(x: &[f64]) -> Option<f64> {
    (!x.is_empty()).then(|| x.iter().sum::<f64>() / x.len() as f64)
}

/// Population variance (divides by N).
pub fn variance(x: &[f64]) -> Result<f64, MetricError> {
    let m = mean(x).ok_or(MetricError::EmptySample)?;
    Ok(x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64)
}

pub fn stddev(x: &[f64]) -> Result<f64, MetricError> {
    variance(x).map(f64::sqrt)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RttStats {
    pub mean: f64,
    pub matched: usize,
    pub unmatched: usize,
}

/// Reply receipt minus request send, averaged over answered probes.
pub fn rtt(log: &FlowLog) -> Result<RttStats, MetricError> {
    let (d, mean) = e2ed(log)?;
    Ok(RttStats { mean, matched: d.len(), unmatched: log.sent() - d.len() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Overhead {
    pub value: f64,
    pub warning: Option<String>,
}

/// Tunneled minus untunneled RTT. A negative result is kept as is and
/// flagged.
pub fn tunneling_overhead(rtt_tunneled: f64, rtt_untunneled: f64) -> Overhead {
    let value = rtt_tunneled - rtt_untunneled;
    let warning = (value < 0.0).then(|| {
        format!(
            "tunneled RTT {rtt_tunneled:.4} ms is below untunneled {rtt_untunneled:.4} ms; calibration is inconsistent"
        )
    });
    Overhead { value, warning }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub protocol: Protocol,
    pub throughput_pps: f64,
    pub throughput_kbps: f64,
    pub e2ed_mean: f64,
    pub jitter_mean: f64,
    pub jitter_variance: f64,
    pub jitter_stddev: f64,
    pub rtt_mean: f64,
    pub tunneling_overhead: Option<f64>,
    pub tunnel_setup_delay: Option<f64>,
    pub query_delay: Option<f64>,
    pub aux_devices: u32,
    /// Semicolon-separated device names.
    pub aux_device_names: String,
}

/// Data-plane metrics of one run: stream flows feed throughput, E2ED and
/// jitter (averaged per flow), ping flows feed RTT.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowMetrics {
    pub throughput_pps: f64,
    pub e2ed_mean: f64,
    pub jitter_mean: f64,
    pub jitter_variance: f64,
    pub rtt_mean: Option<f64>,
}

pub fn flow_metrics<'a>(logs: impl IntoIterator<Item = &'a FlowLog>) -> Result<FlowMetrics, MetricError> {
    let (mut pps, mut e2, mut jm, mut jv, mut rt) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for log in logs {
        match log.kind {
            FlowKind::UdpStream => {
                pps.push(throughput_pps(log)?);
                let (d, m) = e2ed(log)?;
                e2.push(m);
                let j = jitter(&d)?;
                jm.push(j.mean);
                jv.push(if j.tail().is_empty() { 0.0 } else { variance(j.tail())? });
            }
            FlowKind::Ping => rt.push(rtt(log)?.mean),
        }
    }
    let need = |v: &[f64]| mean(v).ok_or(MetricError::NoFlow("udp_stream"));
    Ok(FlowMetrics {
        throughput_pps: need(&pps)?,
        e2ed_mean: need(&e2)?,
        jitter_mean: need(&jm)?,
        jitter_variance: need(&jv)?,
        rtt_mean: mean(&rt),
    })
}

fn mean_opt(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let all: Option<Vec<f64>> = v.collect();
    all.and_then(|a| mean(&a))
}

/// Arithmetic mean per metric. The averaged stddev is the root of the
/// averaged variance so the two stay consistent.
pub fn average(runs: &[MetricsSummary]) -> Result<MetricsSummary, MetricError> {
    let first = runs.first().ok_or(MetricError::EmptySample)?;
    let m = |f: fn(&MetricsSummary) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    let pps = m(|s| s.throughput_pps);
    let var = m(|s| s.jitter_variance);
    Ok(MetricsSummary {
        protocol: first.protocol,
        throughput_pps: pps,
        throughput_kbps: throughput_kbps(pps),
        e2ed_mean: m(|s| s.e2ed_mean),
        jitter_mean: m(|s| s.jitter_mean),
        jitter_variance: var,
        jitter_stddev: var.sqrt(),
        rtt_mean: m(|s| s.rtt_mean),
        tunneling_overhead: mean_opt(runs.iter().map(|s| s.tunneling_overhead)),
        tunnel_setup_delay: mean_opt(runs.iter().map(|s| s.tunnel_setup_delay)),
        query_delay: mean_opt(runs.iter().map(|s| s.query_delay)),
        aux_devices: first.aux_devices,
        aux_device_names: first.aux_device_names.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Throughput,
    E2ed,
    Jitter,
    Rtt,
    TunnelingOverhead,
    TunnelSetupDelay,
    QueryDelay,
    AuxDevices,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::Throughput,
        Metric::E2ed,
        Metric::Jitter,
        Metric::Rtt,
        Metric::TunnelingOverhead,
        Metric::TunnelSetupDelay,
        Metric::QueryDelay,
        Metric::AuxDevices,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Metric::Throughput => "Throughput",
            Metric::E2ed => "E2ED",
            Metric::Jitter => "Jitter",
            Metric::Rtt => "RTT",
            Metric::TunnelingOverhead => "Tunneling Overhead",
            Metric::TunnelSetupDelay => "Tunnel Setup Delay",
            Metric::QueryDelay => "Query Delay",
            Metric::AuxDevices => "Auxiliary Devices",
        }
    }

    pub fn higher_is_better(self) -> bool {
        self == Metric::Throughput
    }

    pub fn value(self, s: &MetricsSummary) -> Option<f64> {
        match self {
            Metric::Throughput => Some(s.throughput_pps),
            Metric::E2ed => Some(s.e2ed_mean),
            Metric::Jitter => Some(s.jitter_mean),
            Metric::Rtt => Some(s.rtt_mean),
            Metric::TunnelingOverhead => s.tunneling_overhead,
            Metric::TunnelSetupDelay => s.tunnel_setup_delay,
            Metric::QueryDelay => s.query_delay,
            Metric::AuxDevices => Some(f64::from(s.aux_devices)),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_TOLERANCE * a.abs().max(b.abs())
}

/// Competition ranks (1, 1, 3): each value's rank is one plus the number of
/// strictly better values.
pub fn rank(values: &[f64], higher_is_better: bool) -> Vec<u32> {
    values
        .iter()
        .map(|&v| {
            let better = values
                .iter()
                .filter(|&&o| !close(o, v) && if higher_is_better { o > v } else { o < v })
                .count();
            better as u32 + 1
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankRow {
    pub metric: Metric,
    pub values: Vec<f64>,
    pub ranks: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub protocols: Vec<Protocol>,
    pub rows: Vec<RankRow>,
    /// Metrics left out because some summary lacks them.
    pub omitted: Vec<Metric>,
}

impl Ranking {
    pub fn row(&self, m: Metric) -> Option<&RankRow> {
        self.rows.iter().find(|r| r.metric == m)
    }

    pub fn rank_of(&self, m: Metric, p: Protocol) -> Option<u32> {
        let i = self.protocols.iter().position(|q| *q == p)?;
        self.row(m).map(|r| r.ranks[i])
    }
}

/// Ranks the three tunneled protocols on every metric they all have.
pub fn summarize(summaries: &[MetricsSummary]) -> Result<Ranking, MetricError> {
    let mut picked = Vec::new();
    for p in Protocol::TUNNELED {
        let s = summaries.iter().find(|s| s.protocol == p).ok_or(MetricError::MissingProtocol(p))?;
        picked.push(s);
    }
    let mut rows = Vec::new();
    let mut omitted = Vec::new();
    for m in Metric::ALL {
        let values: Option<Vec<f64>> = picked.iter().map(|s| m.value(s)).collect();
        match values {
            Some(v) => rows.push(RankRow { metric: m, ranks: rank(&v, m.higher_is_better()), values: v }),
            None if m == Metric::TunnelingOverhead => omitted.push(m),
            None => {
                let s = picked.iter().find(|s| m.value(s).is_none()).expect("one is missing");
                return Err(MetricError::Incomplete { protocol: s.protocol, metric: m.label() });
            }
        }
    }
    Ok(Ranking { protocols: Protocol::TUNNELED.to_vec(), rows, omitted })
}

/// Aligned text table: one row per metric, protocols ordered best first,
/// ties joined with `=`.
pub fn ranking_table(r: &Ranking) -> String {
    let mut lines = vec![format!("{:<20} {:<14} {:<14} {:<14}", "Parameter", "Rank 1", "Rank 2", "Rank 3")];
    for row in &r.rows {
        let mut cells = Vec::new();
        for place in 1..=3u32 {
            let at: Vec<&str> = r
                .protocols
                .iter()
                .zip(&row.ranks)
                .filter(|(_, k)| **k == place)
                .map(|(p, _)| p.display_name())
                .collect();
            cells.push(if at.is_empty() { "-".to_string() } else { at.join(" = ") });
        }
        lines.push(format!("{:<20} {:<14} {:<14} {:<14}", row.metric.label(), cells[0], cells[1], cells[2]));
    }
    for m in &r.omitted {
        lines.push(format!("{:<20} (omitted: no baseline)", m.label()));
    }
    lines.join("\n") + "\n"
}
