use std::time::{Duration, Instant};

use cp_core::clock::{self, calibrate_frequency, sample_clock_pair, CounterSource};

fn busy_wait(d: Duration) {
    let start = Instant::now();
    while start.elapsed() < d {
        std::hint::spin_loop();
    }
}

#[test]
fn sleeping_one_second_moves_wall_clock_one_second() {
    let a = sample_clock_pair();
    std::thread::sleep(Duration::from_secs(1));
    let b = sample_clock_pair();
    let dw = b.wall_ns - a.wall_ns;
    assert!((990_000_000..=1_010_000_000).contains(&dw), "{dw}");
    let f = calibrate_frequency(a, b).unwrap();
    assert!(f.hz().is_finite() && f.hz() > 0.0);
}

#[test]
fn busy_wait_cycles_match_calibrated_frequency() {
    // Calibrate on one window, predict the tick count of a second one.
    let s0 = sample_clock_pair();
    busy_wait(Duration::from_millis(300));
    let s1 = sample_clock_pair();
    let f = calibrate_frequency(s0, s1).unwrap();

    let start = sample_clock_pair();
    busy_wait(Duration::from_secs(1));
    let end = sample_clock_pair();
    let expected = f.ns_to_ticks((end.wall_ns - start.wall_ns) as f64);
    let observed = end.cycles.diff(start.cycles) as f64;
    assert!(
        (observed - expected).abs() / expected < 0.01,
        "observed {observed} expected {expected}"
    );
}

#[test]
fn calibration_halves_agree() {
    let a = sample_clock_pair();
    busy_wait(Duration::from_millis(200));
    let mid = sample_clock_pair();
    busy_wait(Duration::from_millis(200));
    let b = sample_clock_pair();
    let whole = calibrate_frequency(a, b).unwrap().hz();
    for half in [calibrate_frequency(a, mid), calibrate_frequency(mid, b)] {
        let h = half.unwrap().hz();
        assert!((h - whole).abs() / whole < 1e-3, "{h} vs {whole}");
    }
}

#[test]
fn self_test_latency_is_plausible() {
    let report = clock::self_test_counter(100_000);
    assert_eq!(report.monotonic_violations, 0);
    // Native counters cost a few ns to tens of ns; clock_gettime tens of ns.
    // Virtualized counters can be far slower, so only guard against nonsense.
    assert!(report.mean_latency_ns < 5_000.0, "{report:?}");
    if report.source == CounterSource::Tsc {
        eprintln!("tsc read latency {:.1} ns", report.mean_latency_ns);
    }
}
