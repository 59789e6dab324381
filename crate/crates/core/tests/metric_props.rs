use proptest::prelude::*;

use tunsim_core::metrics::{jitter, rank, stddev, throughput_kbps, throughput_pps, variance};
use tunsim_core::traffic::{FlowKind, FlowLog, Sample};

/// Two-pass population variance, written out longhand.
fn two_pass(x: &[f64]) -> f64 {
    let mut sum = 0.0;
    for v in x {
        sum += *v;
    }
    let m = sum / x.len() as f64;
    let mut sq = 0.0;
    for v in x {
        sq += (*v - m) * (*v - m);
    }
    sq / x.len() as f64
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

#[test]
fn variance_stddev_reference_values() {
    for (var, sd) in [(6.0445e-05f64, 0.007774638), (0.000101775, 0.010088351), (2.05711e-05, 0.004535538)] {
        assert!((var.sqrt() - sd).abs() < 1e-8);
    }
    assert_eq!(variance(&[3.0; 5]).unwrap(), 0.0);
    assert_eq!(stddev(&[3.0; 5]).unwrap(), 0.0);
    assert!(variance(&[]).is_err());
}

#[test]
fn kbps_reference_value() {
    let pps: f64 = 497.02 * 1000.0 / (1500.0 * 8.0);
    assert!((pps - 41.4183).abs() < 1e-4);
    assert!((throughput_kbps(41.4183) - 497.02).abs() < 0.01);
}

fn stream(delays: &[f64], gap: f64) -> FlowLog {
    FlowLog {
        flow_id: 1,
        kind: FlowKind::UdpStream,
        samples: delays
            .iter()
            .enumerate()
            .map(|(i, d)| Sample { seq: i as u32, ts: i as f64 * gap, tr: Some(i as f64 * gap + d) })
            .collect(),
    }
}

proptest! {
    #[test]
    fn telescoping_sum_is_last_minus_first(d in proptest::collection::vec(0.0f64..10.0, 1..200)) {
        let j = jitter(&d).unwrap();
        let n = d.len() - 1;
        prop_assert!((j.telescoping - (d[n] - d[0])).abs() <= 1e-9 * (1.0 + d.iter().sum::<f64>()));
        prop_assert_eq!(j.series[0], 0.0);
    }

    #[test]
    fn jitter_ignores_constant_shift(d in proptest::collection::vec(0.0f64..10.0, 2..100), c in 0.0f64..100.0) {
        let shifted: Vec<f64> = d.iter().map(|x| x + c).collect();
        let (a, b) = (jitter(&d).unwrap(), jitter(&shifted).unwrap());
        prop_assert!((a.mean - b.mean).abs() < 1e-9);
        prop_assert!((variance(&d).unwrap() - variance(&shifted).unwrap()).abs() < 1e-9);
        prop_assert!((stddev(&d).unwrap() - stddev(&shifted).unwrap()).abs() < 1e-6);
        let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
        prop_assert!((mean(&shifted) - mean(&d) - c).abs() < 1e-9);
    }

    #[test]
    fn stddev_squared_is_variance(x in proptest::collection::vec(-1e3f64..1e3, 1..100)) {
        let v = variance(&x).unwrap();
        let s = stddev(&x).unwrap();
        prop_assert!(close(s * s, v, 1e-12) || v < 1e-300);
    }

    #[test]
    fn short_samples_match_two_pass(x in proptest::collection::vec(-1e3f64..1e3, 1..=6)) {
        prop_assert_eq!(variance(&x).unwrap().to_bits(), two_pass(&x).to_bits());
    }

    #[test]
    fn ranks_survive_scaling(v in proptest::collection::vec(0.001f64..1e3, 3), k in 0.01f64..100.0, hi: bool) {
        let scaled: Vec<f64> = v.iter().map(|x| x * k).collect();
        prop_assert_eq!(rank(&v, hi), rank(&scaled, hi));
    }

    #[test]
    fn kbps_is_twelve_times_pps(d in proptest::collection::vec(0.01f64..5.0, 2..50), gap in 1.0f64..100.0) {
        let pps = throughput_pps(&stream(&d, gap)).unwrap();
        prop_assert_eq!(throughput_kbps(pps), pps * 12.0);
    }
}
