use std::time::Duration;

use cp_datagen::{
    evaluate_max_throughput, make_payload, FakeSut, JofConfig, JofServer, SearchConfig,
    SearchError, StopReason, Sut, TcpSut,
};

fn cfg(start: f64) -> SearchConfig {
    SearchConfig {
        start,
        ..SearchConfig::default()
    }
}

#[test]
fn returns_rate_within_one_ramp_step_of_capacity() {
    for capacity in [0.2e6, 1.0e6, 5.0e6] {
        let mut sut = FakeSut::new(capacity);
        let r = evaluate_max_throughput(&mut sut, &cfg(0.1e6)).unwrap();
        assert!(r.rate > capacity / 1.5 && r.rate <= capacity, "C={capacity}: {}", r.rate);
        assert_eq!(r.best.dropped, 0);
        assert!(r.runs.len() <= 20);
        assert_eq!(r.runs.len(), sut.runs.len());
        // Nothing at or below the answer ever dropped, nothing above it passed.
        for o in &sut.runs {
            assert_eq!(o.dropped == 0, o.rate <= capacity);
            assert!(o.dropped > 0 || o.rate <= r.rate);
        }
    }
}

#[test]
fn refinement_reaches_two_percent() {
    let mut sut = FakeSut::new(1.0e6);
    let r = evaluate_max_throughput(&mut sut, &cfg(0.1e6)).unwrap();
    assert_eq!(r.stop, StopReason::Refined);
    assert!(r.rate >= 1.0e6 / 1.02, "{}", r.rate);
}

#[test]
fn capacity_exactly_on_a_ramp_rate_is_returned() {
    let mut sut = FakeSut::new(225_000.0);
    let r = evaluate_max_throughput(&mut sut, &cfg(100_000.0)).unwrap();
    assert_eq!(r.rate, 225_000.0);
}

#[test]
fn bad_config_rejected() {
    let mut sut = FakeSut::new(1.0);
    for c in [
        SearchConfig { start: 0.0, ..cfg(1.0) },
        SearchConfig { factor: 1.0, ..cfg(1.0) },
        SearchConfig { refine: 0.0, ..cfg(1.0) },
        SearchConfig { max_runs: 0, ..cfg(1.0) },
    ] {
        assert!(matches!(evaluate_max_throughput(&mut sut, &c), Err(SearchError::Config(_))));
    }
    assert!(sut.runs.is_empty());
}

#[test]
fn throttled_receiver_over_tcp() {
    // The sink sleeps 1 ms per 16-tuple bucket: well under 16k tuples/s.
    let handle = JofServer::bind(
        "127.0.0.1:0",
        "127.0.0.1:0",
        JofConfig {
            bucket: 16,
            queue_cap: 4,
            sink_delay: Some(Duration::from_millis(1)),
            grace: Duration::from_millis(200),
            ..JofConfig::default()
        },
    )
    .unwrap()
    .spawn()
    .unwrap();
    let mut sut = TcpSut::connect(
        handle.data_addr(),
        handle.control_addr(),
        1,
        100_000,
        make_payload(32),
        16,
    )
    .unwrap();
    let slow = sut.run(100_000.0, Duration::from_millis(500)).unwrap();
    assert_eq!(slow.sent, 50_000);
    assert!(slow.dropped > 0, "{slow:?}");

    let c = SearchConfig {
        start: 1000.0,
        factor: 2.0,
        refine: 0.25,
        max_runs: 12,
        duration: Duration::from_millis(500),
    };
    let r = evaluate_max_throughput(&mut sut, &c).unwrap();
    assert_eq!(r.best.dropped, 0);
    assert!(r.rate >= 1000.0 && r.rate < 100_000.0, "{}", r.rate);
}
