use std::fs;
use std::path::{Path, PathBuf};

use tunsim_cli::{cmd_compare, cmd_run, compare, read_rows, report, write_rows, Format, RunArgs};
use tunsim_core::metrics::Metric;
use tunsim_core::tunnel::Protocol;

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

/// Copy of a shipped scenario with a short audio stream.
fn quick(dir: &Path, name: &str) -> PathBuf {
    let text = fs::read_to_string(scenarios().join(format!("{name}.toml"))).unwrap();
    let text = text.replace("duration_s = 300.0", "duration_s = 5.0").replace("count = 100", "count = 3");
    let p = dir.join(format!("{name}.toml"));
    fs::write(&p, text).unwrap();
    fs::copy(scenarios().join("paper-default.toml"), dir.join("paper-default.toml")).unwrap();
    p
}

fn run(scenario: &Path, reps: u32, out: &Path) -> tunsim_cli::RunReport {
    cmd_run(&RunArgs {
        scenario: scenario.display().to_string(),
        reps: Some(reps),
        seed: None,
        out: Some(out.to_path_buf()),
    })
    .unwrap()
}

#[test]
fn run_writes_one_trace_per_replication() {
    let tmp = tempfile::tempdir().unwrap();
    let r = run(&quick(tmp.path(), "isatap-default"), 3, &tmp.path().join("out"));
    assert_eq!(r.traces.len(), 3);
    assert_eq!(r.per_run.len(), 3);
    for t in &r.traces {
        let text = fs::read_to_string(t).unwrap();
        assert!(text.starts_with("time_ms,node,packet_id,flow_id,event,reason,bytes\n"));
    }
    let rows = read_rows(&r.summary).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].replications, 3);
    assert_eq!(rows[0].config_hash.len(), 16);
    assert_eq!(rows[0].protocol, Protocol::Isatap);
}

#[test]
fn identical_invocations_give_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let s = quick(tmp.path(), "teredo-default");
    let a = run(&s, 2, &tmp.path().join("a"));
    let b = run(&s, 2, &tmp.path().join("b"));
    for (x, y) in a.traces.iter().chain(&a.per_run).chain([&a.summary]).zip(b.traces.iter().chain(&b.per_run).chain([&b.summary])) {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
    }
}

#[test]
fn teredo_without_nat_is_rejected_with_a_line() {
    let tmp = tempfile::tempdir().unwrap();
    let s = quick(tmp.path(), "teredo-default");
    let text = fs::read_to_string(&s).unwrap().replace("nat = true", "nat = false");
    fs::write(&s, text).unwrap();
    let e = cmd_run(&RunArgs { scenario: s.display().to_string(), out: Some(tmp.path().into()), ..Default::default() })
        .unwrap_err();
    let msg = format!("{e:#}");
    assert!(msg.contains("teredo-default.toml:7:"), "{msg}");
    assert!(msg.contains("NAT"), "{msg}");
}

fn summaries(tmp: &Path) -> (Vec<PathBuf>, PathBuf) {
    let out = tmp.join("out");
    let files = ["isatap-default", "6to4-default", "teredo-default"]
        .iter()
        .map(|n| run(&quick(tmp, n), 1, &out).summary)
        .collect();
    (files, run(&quick(tmp, "baseline-default"), 1, &out).summary)
}

#[test]
fn compare_ranks_and_writes_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let (files, base) = summaries(tmp.path());
    let (c, csv_path) = cmd_compare(&files, Some(&base), &tmp.path().join("cmp")).unwrap();
    assert!(c.warnings.is_empty(), "{:?}", c.warnings);
    assert_eq!(c.ranking.rows.len(), 8);
    let csv = fs::read_to_string(csv_path).unwrap();
    assert!(csv.starts_with("metric,protocol,value,rank,scenario,config_hash,seed,replications\n"));
    assert_eq!(csv.lines().count(), 1 + 8 * 3);
    let table = report(&c, Format::Table).unwrap();
    assert!(table.contains("ISATAP = 6to4"), "{table}");
    assert!(table.contains("config "), "{table}");
}

#[test]
fn compare_without_baseline_drops_overhead() {
    let tmp = tempfile::tempdir().unwrap();
    let (files, _) = summaries(tmp.path());
    let c = compare(&files, None).unwrap();
    assert_eq!(c.ranking.omitted, vec![Metric::TunnelingOverhead]);
    assert_eq!(c.ranking.rows.len(), 7);
    assert!(c.warnings.iter().any(|w| w.contains("overhead")));
}

#[test]
fn compare_names_a_missing_protocol() {
    let tmp = tempfile::tempdir().unwrap();
    let (files, base) = summaries(tmp.path());
    let e = compare(&files[..2], Some(&base)).unwrap_err();
    assert!(format!("{e:#}").to_lowercase().contains("teredo"), "{e:#}");
}

#[test]
fn identical_summaries_tie_everywhere() {
    let tmp = tempfile::tempdir().unwrap();
    let (files, base) = summaries(tmp.path());
    let row = read_rows(&files[0]).unwrap().remove(0);
    let mut paths = Vec::new();
    for p in Protocol::TUNNELED {
        let mut r = row.clone();
        r.protocol = p;
        let path = tmp.path().join(format!("{}.csv", p.as_str()));
        write_rows(&path, &[r]).unwrap();
        paths.push(path);
    }
    let c = compare(&paths, Some(&base)).unwrap();
    assert!(c.ranking.rows.iter().all(|r| r.ranks == vec![1, 1, 1]));
}

#[test]
fn binary_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_tunsim");
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "name = \"bad\"\nprotocol = \"isatap\"\nreplications = 0\n").unwrap();
    let out = std::process::Command::new(bin)
        .args(["run", "--scenario", bad.to_str().unwrap(), "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml:3:"), "{err}");

    let good = quick(tmp.path(), "isatap-default");
    let out = std::process::Command::new(bin)
        .args(["run", "--scenario", good.to_str().unwrap(), "--reps", "1"])
        .env("TUNSIM_OUT", tmp.path().join("envout"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("envout/isatap-default/summary.csv").is_file());
}
