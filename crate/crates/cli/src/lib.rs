//! Commands behind the `tunsim` binary: running scenarios, comparing the
//! averaged summaries and rendering the ranking report.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use tunsim_core::config::{self, ScenarioConfig};
use tunsim_core::metrics::{self, Metric, MetricsSummary, Ranking};
use tunsim_core::netsim::write_trace_csv;
use tunsim_core::scenario;
use tunsim_core::tunnel::Protocol;

pub const OUT_ENV: &str = "TUNSIM_OUT";
pub const DEFAULT_OUT: &str = "out";

/// First 16 hex digits of the SHA-256 of the scenario and its calibration.
pub fn config_hash(cfg: &ScenarioConfig) -> String {
    let digest = Sha256::digest(cfg.canonical.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// One CSV row: the metric fields in their fixed order, then provenance.
/// Values keep full precision so close results do not collapse into ties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
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
    pub aux_device_names: String,
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub replications: u32,
}

impl SummaryRow {
    pub fn new(s: &MetricsSummary, scenario: &str, config_hash: &str, seed: u64, replications: u32) -> Self {
        SummaryRow {
            protocol: s.protocol,
            throughput_pps: s.throughput_pps,
            throughput_kbps: s.throughput_kbps,
            e2ed_mean: s.e2ed_mean,
            jitter_mean: s.jitter_mean,
            jitter_variance: s.jitter_variance,
            jitter_stddev: s.jitter_stddev,
            rtt_mean: s.rtt_mean,
            tunneling_overhead: s.tunneling_overhead,
            tunnel_setup_delay: s.tunnel_setup_delay,
            query_delay: s.query_delay,
            aux_devices: s.aux_devices,
            aux_device_names: s.aux_device_names.clone(),
            scenario: scenario.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            replications,
        }
    }

    pub fn summary(&self) -> MetricsSummary {
        MetricsSummary {
            protocol: self.protocol,
            throughput_pps: self.throughput_pps,
            throughput_kbps: self.throughput_kbps,
            e2ed_mean: self.e2ed_mean,
            jitter_mean: self.jitter_mean,
            jitter_variance: self.jitter_variance,
            jitter_stddev: self.jitter_stddev,
            rtt_mean: self.rtt_mean,
            tunneling_overhead: self.tunneling_overhead,
            tunnel_setup_delay: self.tunnel_setup_delay,
            query_delay: self.query_delay,
            aux_devices: self.aux_devices,
            aux_device_names: self.aux_device_names.clone(),
        }
    }
}

pub fn write_rows(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let rows = r
        .deserialize()
        .collect::<Result<Vec<SummaryRow>, _>>()
        .with_context(|| format!("reading summary {}", path.display()))?;
    if rows.is_empty() {
        bail!("{}: no summary rows", path.display());
    }
    Ok(rows)
}

#[derive(Debug, Clone, Default)]
pub struct RunArgs {
    pub scenario: String,
    pub reps: Option<u32>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub dir: PathBuf,
    pub traces: Vec<PathBuf>,
    pub per_run: Vec<PathBuf>,
    pub summary: PathBuf,
    pub row: SummaryRow,
    pub warnings: Vec<String>,
}

/// Resolves the output root: explicit flag, then the environment, then
/// the scenario's own setting, then `out`.
fn output_root(flag: Option<&Path>, cfg: &ScenarioConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// Runs all replications and writes, under `<out>/<scenario>/`, one trace
/// and one metrics file per seed plus the averaged `summary.csv`.
pub fn cmd_run(args: &RunArgs) -> Result<RunReport> {
    let cfg = config::load(&args.scenario)?;
    let reps = args.reps.unwrap_or(cfg.replications);
    if reps == 0 {
        bail!("--reps must be at least 1");
    }
    let base_seed = args.seed.unwrap_or(cfg.base_seed);
    let hash = config_hash(&cfg);
    let result = scenario::run_scenario(&cfg, reps, base_seed)
        .with_context(|| format!("scenario {}", cfg.name))?;

    let dir = output_root(args.out.as_deref(), &cfg).join(&cfg.name);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut traces = Vec::new();
    let mut per_run = Vec::new();
    for run in &result.runs {
        let tp = dir.join(format!("trace_seed{}.csv", run.seed));
        let mut w = BufWriter::new(File::create(&tp).with_context(|| format!("creating {}", tp.display()))?);
        write_trace_csv(&mut w, &run.trace, &run.node_names)?;
        w.flush()?;
        traces.push(tp);
        let mp = dir.join(format!("metrics_seed{}.csv", run.seed));
        write_rows(&mp, &[SummaryRow::new(&run.summary, &cfg.name, &hash, run.seed, 1)])?;
        per_run.push(mp);
    }
    let row = SummaryRow::new(&result.summary, &cfg.name, &hash, base_seed, reps);
    let summary = dir.join("summary.csv");
    write_rows(&summary, std::slice::from_ref(&row))?;
    Ok(RunReport { dir, traces, per_run, summary, row, warnings: result.warnings })
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub rows: Vec<SummaryRow>,
    pub baseline: Option<SummaryRow>,
    pub ranking: Ranking,
    pub warnings: Vec<String>,
}

/// Loads the summaries, recomputes tunneling overhead against the baseline
/// (or drops it when there is none) and ranks the three protocols.
pub fn compare(summaries: &[PathBuf], baseline: Option<&Path>) -> Result<Comparison> {
    let mut rows = Vec::new();
    for p in summaries {
        rows.extend(read_rows(p)?);
    }
    let mut base = match baseline {
        Some(p) => {
            let b = read_rows(p)?.remove(0);
            if b.protocol != Protocol::Baseline {
                bail!("{}: expected a baseline summary, found {}", p.display(), b.protocol.as_str());
            }
            Some(b)
        }
        None => None,
    };
    if let Some(i) = rows.iter().position(|r| r.protocol == Protocol::Baseline) {
        let b = rows.remove(i);
        base.get_or_insert(b);
    }
    for p in Protocol::TUNNELED {
        if rows.iter().filter(|r| r.protocol == p).count() > 1 {
            bail!("more than one summary for {}", p.as_str());
        }
    }

    let mut warnings = Vec::new();
    for r in &mut rows {
        r.tunneling_overhead = match &base {
            Some(b) => {
                let o = metrics::tunneling_overhead(r.rtt_mean, b.rtt_mean);
                if let Some(w) = o.warning {
                    warnings.push(format!("{}: {w}", r.protocol.display_name()));
                }
                Some(o.value)
            }
            None => None,
        };
    }
    if base.is_none() {
        warnings.push("no baseline summary; tunneling overhead omitted from the ranking".into());
    }
    let summaries: Vec<MetricsSummary> = rows.iter().map(SummaryRow::summary).collect();
    let ranking = metrics::summarize(&summaries)?;
    rows.sort_by_key(|r| Protocol::TUNNELED.iter().position(|p| *p == r.protocol));
    Ok(Comparison { rows, baseline: base, ranking, warnings })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct RankingRow<'a> {
    metric: &'a str,
    protocol: &'a str,
    value: f64,
    rank: u32,
    scenario: &'a str,
    config_hash: &'a str,
    seed: u64,
    replications: u32,
}

/// Long-format ranking CSV: one row per metric and protocol.
pub fn ranking_csv(c: &Comparison) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &c.ranking.rows {
        for (i, p) in c.ranking.protocols.iter().enumerate() {
            let src = c.rows.iter().find(|r| r.protocol == *p).expect("ranked protocols have rows");
            w.serialize(RankingRow {
                metric: row.metric.label(),
                protocol: p.as_str(),
                value: row.values[i],
                rank: row.ranks[i],
                scenario: &src.scenario,
                config_hash: &src.config_hash,
                seed: src.seed,
                replications: src.replications,
            })?;
        }
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn unit(m: Metric) -> &'static str {
    match m {
        Metric::Throughput => "Kbps",
        Metric::AuxDevices => "count",
        _ => "ms",
    }
}

/// Value table (4 decimals), the rank table and the provenance lines.
pub fn ranking_text(c: &Comparison) -> String {
    let mut out = String::new();
    let names: Vec<&str> = c.ranking.protocols.iter().map(|p| p.display_name()).collect();
    out.push_str(&format!("{:<28} {:>12} {:>12} {:>12}\n", "Parameter", names[0], names[1], names[2]));
    for row in &c.ranking.rows {
        let cells: Vec<String> = row
            .values
            .iter()
            .map(|v| match row.metric {
                Metric::Throughput => format!("{:.4}", metrics::throughput_kbps(*v)),
                Metric::AuxDevices => format!("{v:.0}"),
                _ => format!("{v:.4}"),
            })
            .collect();
        let label = format!("{} ({})", row.metric.label(), unit(row.metric));
        out.push_str(&format!("{label:<28} {:>12} {:>12} {:>12}\n", cells[0], cells[1], cells[2]));
    }
    if let Some(b) = &c.baseline {
        out.push_str(&format!("{:<28} {:>12.4}\n", "Untunneled RTT (ms)", b.rtt_mean));
    }
    out.push('\n');
    out.push_str(&metrics::ranking_table(&c.ranking));
    out.push('\n');
    for r in c.rows.iter().chain(&c.baseline) {
        out.push_str(&format!(
            "source {}: scenario {} config {} seed {} reps {}\n",
            r.protocol.as_str(),
            r.scenario,
            r.config_hash,
            r.seed,
            r.replications
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Table,
}

pub fn report(c: &Comparison, format: Format) -> Result<String> {
    match format {
        Format::Csv => ranking_csv(c),
        Format::Table => Ok(ranking_text(c)),
    }
}

/// Compares and writes `ranking.csv` and `ranking.txt` into `out`.
pub fn cmd_compare(summaries: &[PathBuf], baseline: Option<&Path>, out: &Path) -> Result<(Comparison, PathBuf)> {
    let c = compare(summaries, baseline)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let csv_path = out.join("ranking.csv");
    fs::write(&csv_path, ranking_csv(&c)?)?;
    fs::write(out.join("ranking.txt"), ranking_text(&c))?;
    Ok((c, csv_path))
}
