//! Properties of the relation math checked against independent oracles: a
//! continuous-time two-clock model with known ground truth, and central
//! finite differences of the uncorrected duration formula.

use cp_core::clock::{ClockSample, CounterFrequency, CycleCount};
use cp_core::relation::{
    self, duration_with_error, ratio_from_deltas, ClockRelation, Direction, MinRttMeasurement,
    NodeId, RttTriple,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A counter as an affine function of true time in nanoseconds.
#[derive(Clone, Copy)]
struct TrueClock {
    hz: f64,
    offset: f64,
}

impl TrueClock {
    fn ticks(&self, t_ns: f64) -> u64 {
        (self.offset + t_ns * self.hz / 1e9).floor() as u64
    }
}

/// One probe sent at true time `t0` with the given one-way delays.
fn probe(a: TrueClock, b: TrueClock, t0: f64, out_ns: f64, back_ns: f64) -> RttTriple {
    let t1 = t0 + out_ns;
    let t2 = t1 + back_ns;
    RttTriple::from_samples(
        ClockSample {
            wall_ns: t0 as i64,
            cycles: CycleCount(a.ticks(t0)),
        },
        CycleCount(b.ticks(t1)),
        ClockSample {
            wall_ns: t2 as i64,
            cycles: CycleCount(a.ticks(t2)),
        },
    )
}

fn meas(t: RttTriple) -> MinRttMeasurement {
    MinRttMeasurement::new(t, 1, Direction::new(NodeId(0), NodeId(1)))
}

fn relation(a: TrueClock, m1: RttTriple, m2: RttTriple) -> ClockRelation {
    ClockRelation::from_reference(meas(m1), meas(m2), CounterFrequency::new(a.hz).unwrap())
        .unwrap()
}

#[test]
fn ratio_of_two_and_one_ghz_recovered() {
    let a = TrueClock {
        hz: 1.0e9,
        offset: 12_345.0,
    };
    let b = TrueClock {
        hz: 2.0e9,
        offset: 9_876_543_210.0,
    };
    // Worst-case asymmetric 50 µs round trips, 10 s apart.
    let m1 = probe(a, b, 1e9, 50_000.0, 0.0);
    let m2 = probe(a, b, 11e9, 0.0, 50_000.0);
    let rel = relation(a, m1, m2);
    assert!((rel.ratio - 2.0).abs() / 2.0 < 1e-5, "{}", rel.ratio);
}

#[test]
fn synthetic_one_millisecond_gap_is_contained() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let a = TrueClock {
            hz: rng.random_range(1e9..4e9),
            offset: rng.random_range(0.0..1e12),
        };
        let b = TrueClock {
            hz: rng.random_range(1e9..4e9),
            offset: rng.random_range(0.0..1e12),
        };
        let min_rtt = 93_000.0;
        let split = rng.random_range(0.0..1.0);
        let m1 = probe(a, b, 1e9, min_rtt * split, min_rtt * (1.0 - split));
        let split = rng.random_range(0.0..1.0);
        let m2 = probe(a, b, 11e9, min_rtt * split, min_rtt * (1.0 - split));
        let rel = relation(a, m1, m2);
        let tx = rng.random_range(1.2e9..10.8e9);
        let ty = tx + 1_000_000.0;
        let d = duration_with_error(CycleCount(a.ticks(tx)), CycleCount(b.ticks(ty)), &rel).unwrap();
        assert!(d.contains_ns(1e6), "{d:?}");
        assert!(d.uncertainty_ns <= min_rtt);
    }
}

/// Duration from the raw anchor values, before any error analysis:
/// `ĉ_j + ((c_y − c_j^B)/(c_m^B − c_j^B))·(ĉ_m − ĉ_j) − c_x`.
fn raw_duration(cj_local: f64, cm_local: f64, cj_b: f64, cm_b: f64, cy_b: f64, cx: f64) -> f64 {
    cj_local + ((cy_b - cj_b) / (cm_b - cj_b)) * (cm_local - cj_local) - cx
}

prop_compose! {
    fn valid_relation()(
        base_a in 0u64..(1 << 50),
        base_b in 0u64..(1 << 50),
        rtt1 in 0u64..2_000_000,
        rtt2 in 0u64..2_000_000,
        skew1 in 0.0f64..=1.0,
        skew2 in 0.0f64..=1.0,
        span_a in 1_000_000u64..(1 << 36),
        ratio in 0.25f64..4.0,
    ) -> ClockRelation {
        let i = base_a;
        let k = i + rtt1;
        let l = i + span_a;
        let n = l + rtt2;
        let j = base_b + (skew1 * rtt1 as f64 * ratio) as u64;
        let m = base_b + ((span_a as f64 + skew2 * rtt2 as f64) * ratio) as u64;
        let cs = |c: u64| ClockSample { wall_ns: c as i64, cycles: CycleCount(c) };
        let m1 = RttTriple::from_samples(cs(i), CycleCount(j), cs(k));
        let m2 = RttTriple::from_samples(cs(l), CycleCount(m.max(j + 1)), cs(n));
        ClockRelation::from_reference(meas(m1), meas(m2), CounterFrequency::new(2.6e9).unwrap())
            .unwrap()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn ratio_reciprocity(
        lj in 0u64..(1 << 52), ld in 1u64..(1 << 40),
        rj in 0u64..(1 << 52), rd in 1u64..(1 << 40),
    ) {
        let (lm, rm) = (lj + ld, rj + rd);
        let fwd = ratio_from_deltas((rm - rj) as f64, (lm - lj) as f64).unwrap();
        let back = ratio_from_deltas((lm - lj) as f64, (rm - rj) as f64).unwrap();
        prop_assert!((fwd * back - 1.0).abs() < 1e-12);
    }

    #[test]
    fn remote_local_round_trip(rel in valid_relation(), dy in 0u64..(1 << 40)) {
        let c_y = CycleCount(rel.m1.triple.c_remote.0 + dy);
        let local = relation::convert_remote_to_local(c_y, &rel);
        let back = relation::convert_local_to_remote(local, &rel);
        prop_assert!((back - c_y.0 as f64).abs() <= 1.0, "{} vs {}", back, c_y.0);
    }

    #[test]
    fn uncertainty_matches_finite_difference_partials(rel in valid_relation(), w in 0.0f64..=1.0, dx in 0u64..(1 << 30)) {
        let cj_b = rel.m1.triple.c_remote.0;
        let cm_b = rel.m2.triple.c_remote.0;
        let cy_b = cj_b + ((cm_b - cj_b) as f64 * w) as u64;
        let cx = rel.m1.triple.c_start_local.0.saturating_sub(dx);
        let (cj, cm) = (rel.est_j.best, rel.est_m.best);
        let f = |cj: f64, cm: f64| raw_duration(cj, cm, cj_b as f64, cm_b as f64, cy_b as f64, cx as f64);
        let h = 1e6;
        let d_dj = (f(cj + h, cm) - f(cj - h, cm)) / (2.0 * h);
        let d_dm = (f(cj, cm + h) - f(cj, cm - h)) / (2.0 * h);
        let expected = d_dj.abs() * rel.est_j.uncertainty + d_dm.abs() * rel.est_m.uncertainty;
        let got = duration_with_error(CycleCount(cx), CycleCount(cy_b), &rel).unwrap();
        let scale = expected.abs().max(1.0);
        prop_assert!((got.uncertainty_ticks - expected).abs() / scale < 1e-6,
            "got {} expected {}", got.uncertainty_ticks, expected);
    }

    #[test]
    fn interpolated_uncertainty_between_anchor_errors(rel in valid_relation(), w in 0.0f64..=1.0) {
        let cj_b = rel.m1.triple.c_remote.0;
        let cm_b = rel.m2.triple.c_remote.0;
        let cy_b = cj_b + ((cm_b - cj_b) as f64 * w) as u64;
        let d = duration_with_error(CycleCount(0), CycleCount(cy_b.min(cm_b)), &rel).unwrap();
        let lo = rel.est_j.uncertainty.min(rel.est_m.uncertainty);
        let hi = rel.est_j.uncertainty.max(rel.est_m.uncertainty);
        let eps = 1e-9 * hi.max(1.0);
        prop_assert!(d.uncertainty_ticks >= lo - eps && d.uncertainty_ticks <= hi + eps);
    }
}
