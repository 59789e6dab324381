//! Stream and ping generators, and the join from trace records back to
//! per-flow send/receive logs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::PacketKind;
use crate::netsim::{TraceEvent, TraceRecord};

pub const DEFAULT_STREAM_PAYLOAD: usize = 1500;
pub const DEFAULT_PING_PAYLOAD: usize = 56;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrafficError {
    #[error("flow {flow:?}: {reason}")]
    InvalidPlan { flow: String, reason: String },
    #[error("flow {flow_id} seq {seq} delivered twice")]
    DuplicateDelivery { flow_id: u32, seq: u32 },
    #[error("flow {flow_id} seq {seq} received without being sent")]
    Orphan { flow_id: u32, seq: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    UdpStream,
    Ping,
}

/// Named stream rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Audio,
    Video,
}

impl Preset {
    pub fn rate_pps(self) -> f64 {
        match self {
            Preset::Audio => 40.0,
            Preset::Video => 200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowPlan {
    pub name: String,
    pub kind: FlowKind,
    /// Sending node name.
    pub src: String,
    /// Receiving node name.
    pub dst: String,
    /// Innermost payload in bytes.
    #[serde(default)]
    pub payload_bytes: Option<usize>,
    #[serde(default)]
    pub preset: Option<Preset>,
    #[serde(default)]
    pub rate_pps: Option<f64>,
    #[serde(default)]
    pub duration_s: Option<f64>,
    #[serde(default)]
    pub count: Option<u32>,
    #[serde(default)]
    pub interval_ms: Option<f64>,
    /// First send, in ms after the traffic epoch.
    #[serde(default)]
    pub start_ms: f64,
}

impl FlowPlan {
    pub fn audio(name: &str, src: &str, dst: &str, duration_s: f64) -> Self {
        FlowPlan {
            name: name.into(),
            kind: FlowKind::UdpStream,
            src: src.into(),
            dst: dst.into(),
            payload_bytes: None,
            preset: Some(Preset::Audio),
            rate_pps: None,
            duration_s: Some(duration_s),
            count: None,
            interval_ms: None,
            start_ms: 0.0,
        }
    }

    pub fn ping(name: &str, src: &str, dst: &str, count: u32, interval_ms: f64) -> Self {
        FlowPlan {
            name: name.into(),
            kind: FlowKind::Ping,
            src: src.into(),
            dst: dst.into(),
            payload_bytes: None,
            preset: None,
            rate_pps: None,
            duration_s: None,
            count: Some(count),
            interval_ms: Some(interval_ms),
            start_ms: 0.0,
        }
    }

    pub fn payload(&self) -> usize {
        self.payload_bytes.unwrap_or(match self.kind {
            FlowKind::UdpStream => DEFAULT_STREAM_PAYLOAD,
            FlowKind::Ping => DEFAULT_PING_PAYLOAD,
        })
    }

    fn invalid(&self, reason: impl Into<String>) -> TrafficError {
        TrafficError::InvalidPlan { flow: self.name.clone(), reason: reason.into() }
    }

    pub fn validate(&self) -> Result<(), TrafficError> {
        if !(self.start_ms.is_finite() && self.start_ms >= 0.0) {
            return Err(self.invalid("start_ms must be finite and non-negative"));
        }
        let payload = self.payload();
        if payload == 0 || payload > 65_000 {
            return Err(self.invalid("payload_bytes must be in 1..=65000"));
        }
        match self.kind {
            FlowKind::UdpStream => {
                if self.count.is_some() || self.interval_ms.is_some() {
                    return Err(self.invalid("streams take rate and duration, not count/interval"));
                }
                let rate = match (self.preset, self.rate_pps) {
                    (Some(_), Some(_)) => return Err(self.invalid("give either preset or rate_pps")),
                    (Some(p), None) => p.rate_pps(),
                    (None, Some(r)) => r,
                    (None, None) => return Err(self.invalid("stream needs preset or rate_pps")),
                };
                if !(rate.is_finite() && rate > 0.0) {
                    return Err(self.invalid("rate must be positive"));
                }
                match self.duration_s {
                    Some(d) if d.is_finite() && d > 0.0 => Ok(()),
                    _ => Err(self.invalid("stream needs a positive duration_s")),
                }
            }
            FlowKind::Ping => {
                if self.preset.is_some() || self.rate_pps.is_some() || self.duration_s.is_some() {
                    return Err(self.invalid("ping takes count and interval_ms"));
                }
                match (self.count, self.interval_ms) {
                    (Some(c), Some(i)) if c > 0 && i.is_finite() && i > 0.0 => Ok(()),
                    _ => Err(self.invalid("ping needs count > 0 and positive interval_ms")),
                }
            }
        }
    }
}

/// Send times in ms for every packet of `plan`, relative to `epoch`.
pub fn generate(plan: &FlowPlan, epoch: f64) -> Result<Vec<f64>, TrafficError> {
    plan.validate()?;
    let start = epoch + plan.start_ms;
    let (n, gap) = match plan.kind {
        FlowKind::UdpStream => {
            let rate = plan.rate_pps.or(plan.preset.map(Preset::rate_pps)).expect("validated");
            let n = (rate * plan.duration_s.expect("validated")).round() as usize;
            (n, 1000.0 / rate)
        }
        FlowKind::Ping => (plan.count.expect("validated") as usize, plan.interval_ms.expect("validated")),
    };
    Ok((0..n).map(|i| start + i as f64 * gap).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub seq: u32,
    /// Send time.
    pub ts: f64,
    /// Receive time; for pings, when the reply got back.
    pub tr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowLog {
    pub flow_id: u32,
    pub kind: FlowKind,
    /// Ordered by seq.
    pub samples: Vec<Sample>,
}

impl FlowLog {
    pub fn sent(&self) -> usize {
        self.samples.len()
    }

    pub fn received(&self) -> usize {
        self.samples.iter().filter(|s| s.tr.is_some()).count()
    }
}

/// Joins sent and received records into one log per flow. Stream packets
/// match on (flow, seq); ping replies match their request the same way.
/// Refresh, setup and DNS records are ignored.
pub fn collect(trace: &[TraceRecord]) -> Result<BTreeMap<u32, FlowLog>, TrafficError> {
    let mut sent: BTreeMap<u32, (FlowKind, BTreeMap<u32, f64>)> = BTreeMap::new();
    let mut got: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    for r in trace {
        match (r.event, r.kind) {
            (TraceEvent::Sent, PacketKind::Data) => {
                sent.entry(r.flow_id).or_insert((FlowKind::UdpStream, BTreeMap::new())).1.insert(r.seq, r.time_ms);
            }
            (TraceEvent::Sent, PacketKind::EchoRequest) => {
                sent.entry(r.flow_id).or_insert((FlowKind::Ping, BTreeMap::new())).1.insert(r.seq, r.time_ms);
            }
            (TraceEvent::Received, PacketKind::Data | PacketKind::EchoReply)
                if got.insert((r.flow_id, r.seq), r.time_ms).is_some() =>
            {
                return Err(TrafficError::DuplicateDelivery { flow_id: r.flow_id, seq: r.seq });
            }
            _ => {}
        }
    }
    let mut logs = BTreeMap::new();
    for (flow_id, (kind, seqs)) in sent {
        let samples = seqs
            .into_iter()
            .map(|(seq, ts)| Sample { seq, ts, tr: got.remove(&(flow_id, seq)) })
            .collect();
        logs.insert(flow_id, FlowLog { flow_id, kind, samples });
    }
    if let Some(&(flow_id, seq)) = got.keys().next() {
        return Err(TrafficError::Orphan { flow_id, seq });
    }
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::NodeId;

    #[test]
    fn stream_count_is_rate_times_duration() {
        let t = generate(&FlowPlan::audio("a", "s", "r", 300.0), 100.0).unwrap();
        assert_eq!(t.len(), 12000);
        assert_eq!(t[0], 100.0);
        assert_eq!(t[1] - t[0], 25.0);
        let p = generate(&FlowPlan::ping("p", "s", "r", 100, 1000.0), 0.0).unwrap();
        assert_eq!(p.len(), 100);
    }

    #[test]
    fn plan_validation() {
        let mut p = FlowPlan::audio("a", "s", "r", 300.0);
        p.rate_pps = Some(10.0);
        assert!(p.validate().is_err());
        let mut q = FlowPlan::ping("p", "s", "r", 0, 1000.0);
        assert!(q.validate().is_err());
        q.count = Some(3);
        q.payload_bytes = Some(0);
        assert!(q.validate().is_err());
    }

    fn rec(event: TraceEvent, kind: PacketKind, seq: u32, t: f64) -> TraceRecord {
        TraceRecord { time_ms: t, node: NodeId(0), packet_id: 0, flow_id: 1, kind, seq, event, bytes: 0 }
    }

    #[test]
    fn collect_joins_and_rejects_duplicates() {
        let mut tr = vec![
            rec(TraceEvent::Sent, PacketKind::Data, 0, 0.0),
            rec(TraceEvent::Sent, PacketKind::Data, 1, 10.0),
            rec(TraceEvent::Refresh("refresh"), PacketKind::Refresh, 0, 10.0),
            rec(TraceEvent::Received, PacketKind::Data, 0, 5.0),
        ];
        let logs = collect(&tr).unwrap();
        let l = &logs[&1];
        assert_eq!((l.sent(), l.received()), (2, 1));
        assert_eq!(l.samples[0].tr, Some(5.0));
        tr.push(rec(TraceEvent::Received, PacketKind::Data, 0, 6.0));
        assert_eq!(collect(&tr), Err(TrafficError::DuplicateDelivery { flow_id: 1, seq: 0 }));
    }
}
