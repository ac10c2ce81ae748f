//! Acceptance suite. Prints one line per criterion:
//! `criterion N PASS|FAIL <title>: <detail> [seconds]`
//! and exits non-zero when any criterion fails. Numeric arguments select a
//! subset, e.g. `cargo test -p cp-verify --test acceptance -- 2 11`.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::SocketAddr;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Child, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use cp_analyze::{run as analyze, AnalyzeConfig, ChannelPair, Locality, NtpSource};
use cp_core::clock::{ClockSample, CounterFrequency, CycleCount};
use cp_core::relation::{duration_with_error, ClockRelation, Direction, MinRttMeasurement, NodeId, RttTriple};
use cp_core::relation_file::load_dir;
use cp_datagen::{
    evaluate_max_throughput, make_payload, measure_send_overhead, run_emission, EmissionPlan, FakeSut, JofConfig,
    JofServer, NullTransport, SearchConfig, Sut, TcpSut,
};
use cp_minrtt::{master_measure, DelayModel, NetCluster, ProbeLink, SessionSpec, SimCluster};
use cp_profiler::sink::{create, decode_file, frame_header, SinkHeader};
use cp_profiler::{Codec, DataFormat, HandlerKind, HandlerSpec, Profiler, ProfilerConfig, Records, RetRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Check {
    Check {
        pass,
        detail: detail.into(),
    }
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().expect("temp dir")
}

fn read_csv(path: &Path) -> Vec<HashMap<String, String>> {
    let mut r = csv::Reader::from_path(path).expect("csv");
    let headers = r.headers().expect("header").clone();
    r.records()
        .map(|rec| {
            let rec = rec.expect("row");
            headers.iter().map(String::from).zip(rec.iter().map(String::from)).collect()
        })
        .collect()
}

// 1 -------------------------------------------------------------------------

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

fn sim_probe(a: TrueClock, b: TrueClock, t0: f64, out_ns: f64, back_ns: f64) -> MinRttMeasurement {
    let sample = |t: f64| ClockSample {
        wall_ns: t as i64,
        cycles: CycleCount(a.ticks(t)),
    };
    let triple = RttTriple::from_samples(sample(t0), CycleCount(b.ticks(t0 + out_ns)), sample(t0 + out_ns + back_ns));
    MinRttMeasurement::new(triple, 1, Direction::new(NodeId(0), NodeId(1)))
}

fn error_formula() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut cases = 0;
    while cases < 10_000 {
        let a = TrueClock {
            hz: rng.random_range(1e9..4e9),
            offset: rng.random_range(0.0..1e15f64).floor(),
        };
        let b = TrueClock {
            hz: rng.random_range(1e9..4e9),
            offset: rng.random_range(0.0..1e15f64).floor(),
        };
        let t0 = rng.random_range(1e9..1e12);
        let span = rng.random_range(1e8..1e11);
        let mut delay = || rng.random_range(30e3..300e3);
        let m1 = sim_probe(a, b, t0, delay(), delay());
        let m2 = sim_probe(a, b, t0 + span, delay(), delay());
        let Ok(rel) = ClockRelation::from_reference(m1, m2, CounterFrequency::new(a.hz).unwrap()) else {
            continue;
        };
        let (cj_b, cm_b) = (m1.triple.c_remote.0 as i128, m2.triple.c_remote.0 as i128);
        let w = rng.random_range(-0.25..1.25);
        let cy = cj_b + ((cm_b - cj_b) as f64 * w).round() as i128;
        let cx = a.ticks(rng.random_range(t0 - 1e9..t0 + span + 1e9)) as i128;

        // The duration formula in ticks relative to the local event.
        let w_true = (cy - cj_b) as f64 / (cm_b - cj_b) as f64;
        let mid = |m: &MinRttMeasurement| {
            ((m.triple.c_start_local.0 as i128 + m.triple.c_end_local.0 as i128) - 2 * cx) as f64 / 2.0
        };
        let (cj, cm) = (mid(&m1), mid(&m2));
        let f = |cj: f64, cm: f64| cj + w_true * (cm - cj);
        let h = 1e3;
        let d_dj = (f(cj + h, cm) - f(cj - h, cm)) / (2.0 * h);
        let d_dm = (f(cj, cm + h) - f(cj, cm - h)) / (2.0 * h);
        let dj = m1.rtt_ticks as f64 / 2.0;
        let dm = m2.rtt_ticks as f64 / 2.0;
        let expected = d_dj.abs() * dj + d_dm.abs() * dm;

        let got = duration_with_error(CycleCount(cx as u64), CycleCount(cy as u64), &rel)
            .expect("valid relation")
            .uncertainty_ticks;
        worst = worst.max((got - expected).abs() / expected);
        cases += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-6 && secs < 10.0,
        format!("{cases} cases, worst relative gap {worst:.2e} (limit 1e-6), {secs:.2} s (limit 10 s)"),
    )
}

// 2 -------------------------------------------------------------------------

fn containment() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut trials, mut contained, mut within_rtt) = (0u32, 0u32, 0u32);
    let mut min_rtts = Vec::new();
    for seed in 0..20 {
        let mut sim = SimCluster::random(seed, 2, DelayModel::quiescent());
        let spec = SessionSpec {
            iterations: 100,
            ..SessionSpec::default()
        };
        let session = master_measure(&mut sim, &spec).expect("simulated session");
        let dir = tmp();
        session.write(dir.path()).expect("write relations");
        let relations = load_dir(dir.path()).expect("load relations");
        for (local, remote) in [(0, 1), (1, 0)] {
            let (a, b) = (*sim.clock(NodeId(local)).unwrap(), *sim.clock(NodeId(remote)).unwrap());
            let rel = &relations[&Direction::new(NodeId(local), NodeId(remote))];
            let min_rtt = rel.m1.rtt_ns.max(rel.m2.rtt_ns) as f64;
            min_rtts.push(min_rtt);
            let t_j = (rel.m1.triple.local_sample_end.wall_ns - a.wall_offset_ns) as f64;
            let t_m = (rel.m2.triple.local_sample_start.wall_ns - a.wall_offset_ns) as f64;
            for _ in 0..30 {
                let tx = rng.random_range(t_j..t_m - 5e6);
                let gap = rng.random_range(1e3..5e6);
                let d = duration_with_error(a.ticks_at(tx), b.ticks_at(tx + gap), rel).expect("duration");
                trials += 1;
                contained += u32::from(d.contains_ns(gap));
                within_rtt += u32::from(d.uncertainty_ns <= min_rtt);
            }
        }
    }
    min_rtts.sort_by(f64::total_cmp);
    let secs = start.elapsed().as_secs_f64();
    check(
        trials >= 1000 && contained == trials && within_rtt == trials && secs < 30.0,
        format!(
            "{contained}/{trials} contain the true gap, {within_rtt}/{trials} uncertainties <= MinRTT \
             (median MinRTT {:.3} us), {secs:.2} s (limit 30 s)",
            min_rtts[min_rtts.len() / 2] / 1e3
        ),
    )
}

// 3 -------------------------------------------------------------------------

fn write_ret_sink(root: &Path, node: u32, records: &[RetRecord]) {
    let dir = root.join(node.to_string());
    std::fs::create_dir_all(&dir).unwrap();
    let header = SinkHeader::new(Codec::Raw, DataFormat::RawTicks, HandlerKind::RetStart, "ret");
    let mut f = create(&dir.join("ret.cplg"), &header).unwrap();
    let raw: Vec<u8> = records.iter().flat_map(|r| r.encode()).collect();
    f.write_all(&frame_header(raw.len(), raw.len())).unwrap();
    f.write_all(&raw).unwrap();
}

fn cp_vs_ret() -> Check {
    let mut sim = SimCluster::random(3, 2, DelayModel::quiescent());
    let session = master_measure(&mut sim, &SessionSpec::default()).expect("session");
    sim.set_delay_model(DelayModel::busy());
    let ret: Vec<RetRecord> = {
        let mut link = sim.link(NodeId(0), NodeId(1)).unwrap();
        (0..1000u32)
            .map(|i| {
                let t = link.probe(i).expect("probe");
                RetRecord {
                    tuple_id: i as u64,
                    t1: t.c_start_local.0,
                    t3: t.c_end_local.0,
                }
            })
            .collect()
    };
    let dir = tmp();
    let (logs, rel, out) = (dir.path().join("logs"), dir.path().join("rel"), dir.path().join("out"));
    session.write(&rel).unwrap();
    write_ret_sink(&logs, 0, &ret);
    let summary = analyze(&AnalyzeConfig {
        logs,
        relations: Some(rel),
        pairs: Vec::new(),
        ntp: Vec::new(),
        out: out.clone(),
        default_hz: None,
        histogram_bins: 50,
    })
    .expect("analyze");
    let node0 = summary.error_bounds.nodes.iter().find(|n| n.node == "0").expect("node 0");
    let (cp, ret_max) = (node0.cp_bound_ns.unwrap(), node0.ret_max_ns.unwrap());
    let rows: Vec<_> = read_csv(&out.join("error_bounds.csv"))
        .into_iter()
        .filter(|r| r["node"] == "0")
        .collect();
    let constant = rows.iter().all(|r| r["cp_ns"] == rows[0]["cp_ns"]);
    let ratio = ret_max / cp;
    check(
        constant && ratio >= 100.0,
        format!(
            "CP +/-{:.3} us constant over {} s: {constant}; ReT max {:.3} ms (mean {:.3} ms); ratio {ratio:.0} (need >= 100)",
            cp / 1e3,
            rows.len(),
            ret_max / 1e6,
            node0.ret_mean_ns.unwrap() / 1e6
        ),
    )
}

// 4 -------------------------------------------------------------------------

fn ntp_bound() -> Check {
    let dir = tmp();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut text = String::from("epoch_s,theta_s,root_dispersion_s,root_delay_s\n");
    let mut inputs = Vec::new();
    for i in 0..1000 {
        let theta: f64 = rng.random_range(-2e-2..2e-2);
        let disp: f64 = rng.random_range(0.0..5e-3);
        let delay: f64 = rng.random_range(0.0..1e-2);
        text.push_str(&format!("{},{theta},{disp},{delay}\n", 1_700_000_000 + i));
        inputs.push((theta, disp, delay));
    }
    let csv_path = dir.path().join("chronyc.csv");
    std::fs::write(&csv_path, text).unwrap();
    let logs = dir.path().join("logs");
    std::fs::create_dir_all(&logs).unwrap();
    let out = dir.path().join("out");
    analyze(&AnalyzeConfig {
        logs,
        relations: None,
        pairs: Vec::new(),
        ntp: vec![NtpSource {
            node: Some(NodeId(0)),
            path: csv_path,
        }],
        out: out.clone(),
        default_hz: None,
        histogram_bins: 50,
    })
    .expect("analyze");
    let rows = read_csv(&out.join("ntp_bounds.csv"));
    let mut identical = 0;
    for (row, &(theta, disp, delay)) in rows.iter().zip(&inputs) {
        // Spreadsheet cell: =ABS(B2)+C2+D2/2
        let want = theta.abs() + disp + delay / 2.0;
        let got: f64 = row["bound_s"].parse().unwrap();
        identical += usize::from(got.to_bits() == want.to_bits());
    }
    check(
        rows.len() == 1000 && identical == 1000,
        format!("{identical}/{} rows bit-identical to |theta| + E + delay/2", rows.len()),
    )
}

// 5 -------------------------------------------------------------------------

const LOSSLESS_HANDLERS: [HandlerSpec; 4] = [
    HandlerSpec::Id,
    HandlerSpec::BufferedId(Codec::Raw),
    HandlerSpec::BufferedId(Codec::Zstd),
    HandlerSpec::BufferedId(Codec::Lzo),
];

/// Logs `n` random ids while another thread runs the termination flush once
/// `stop_at` calls have been made. Returns (accepted, decoded, losses, duplicates).
fn terminated_run(spec: HandlerSpec, n: u64, workers: usize, stop_at: u64, seed: u64) -> (u64, u64, u64, u64) {
    let dir = tmp();
    let p = Profiler::new(ProfilerConfig {
        out_dir: dir.path().to_path_buf(),
        workers,
        ..ProfilerConfig::default()
    });
    let ch = p.open_channel("c", DataFormat::RawTicks, spec).unwrap();
    let progress = Arc::new(AtomicU64::new(0));
    let stopper = {
        let (p, progress) = (Arc::clone(&p), Arc::clone(&progress));
        std::thread::spawn(move || {
            while progress.load(Ordering::Relaxed) < stop_at {
                std::thread::sleep(Duration::from_micros(200));
            }
            p.flush_all_on_termination();
        })
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut accepted = Vec::with_capacity(n as usize);
    for i in 0..n {
        let id = rng.random_range(0..n / 2);
        if ch.log_ts(id).is_ok() {
            accepted.push(id);
        }
        progress.store(i + 1, Ordering::Relaxed);
    }
    stopper.join().unwrap();
    ch.close();
    let mut decoded = decode_file(ch.sink_path()).unwrap().records.tuple_ids();
    accepted.sort_unstable();
    decoded.sort_unstable();
    let (mut i, mut j, mut lost, mut dup) = (0, 0, 0u64, 0u64);
    while i < accepted.len() || j < decoded.len() {
        match (accepted.get(i), decoded.get(j)) {
            (Some(a), Some(d)) if a == d => {
                i += 1;
                j += 1;
            }
            (Some(a), Some(d)) if a < d => {
                lost += 1;
                i += 1;
            }
            (Some(_), None) => {
                lost += 1;
                i += 1;
            }
            _ => {
                dup += 1;
                j += 1;
            }
        }
    }
    (accepted.len() as u64, decoded.len() as u64, lost, dup)
}

fn read_line(out: &mut BufReader<ChildStdout>) -> String {
    let mut line = String::new();
    out.read_line(&mut line).expect("child stdout");
    line
}

/// SIGTERM to a separate process after at least 10^5 records.
fn signalled_run(spec: HandlerSpec, workers: usize, wait_ms: u64) -> Result<(u64, u64), String> {
    let dir = tmp();
    let mut child = Command::new(env!("CARGO_BIN_EXE_cp-demo-node"))
        .arg("--logs")
        .arg(dir.path())
        .args(["terminate", "--handler", &spec.to_string(), "--count", "10000000", "--ready-after", "100000"])
        .args(["--workers", &workers.to_string()])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut out = BufReader::new(child.stdout.take().unwrap());
    if !read_line(&mut out).starts_with("READY") {
        return Err("child did not become ready".into());
    }
    std::thread::sleep(Duration::from_millis(wait_ms));
    Command::new("kill")
        .args(["-TERM", &child.id().to_string()])
        .status()
        .map_err(|e| e.to_string())?;
    let status = child.wait().map_err(|e| e.to_string())?;
    let mut err = String::new();
    std::io::Read::read_to_string(&mut child.stderr.take().unwrap(), &mut err).unwrap();
    if status.code() != Some(143) || !err.contains("unpersisted=0") {
        return Err(format!("{spec}: status {status}, stderr {err:?}"));
    }
    let logged: u64 = err
        .lines()
        .find_map(|l| l.strip_prefix("flushed term logged="))
        .and_then(|rest| rest.split_whitespace().next())
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format!("no flush report in {err:?}"))?;
    let d = decode_file(&dir.path().join("0/term.cplg")).map_err(|e| e.to_string())?;
    let ids = d.records.tuple_ids();
    let exact = ids.len() as u64 == logged && ids.iter().enumerate().all(|(i, &id)| i as u64 == id);
    Ok((logged, if exact { logged } else { u64::MAX }))
}

fn lossless() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ok = true;
    let mut parts = Vec::new();
    let (mut records, mut runs) = (0u64, 0);
    for spec in LOSSLESS_HANDLERS {
        let sizes = [10_000_000u64, 10f64.powf(rng.random_range(5.0..7.0)) as u64];
        for n in sizes {
            let workers = rng.random_range(1..=8);
            let stop_at = rng.random_range(n / 10..n);
            let (acc, dec, lost, dup) = terminated_run(spec, n, workers, stop_at, rng.random());
            ok &= lost == 0 && dup == 0 && acc == dec;
            records += dec;
            runs += 1;
            if lost + dup > 0 {
                parts.push(format!("{spec} n={n} w={workers}: {lost} lost {dup} duplicated"));
            }
        }
        let workers = rng.random_range(1..=8);
        match signalled_run(spec, workers, rng.random_range(0..400)) {
            Ok((logged, decoded)) if decoded == logged && logged >= 100_000 => {
                records += logged;
                runs += 1;
            }
            Ok((logged, _)) => {
                ok = false;
                parts.push(format!("{spec} SIGTERM: {logged} logged, sink differs"));
            }
            Err(e) => {
                ok = false;
                parts.push(e);
            }
        }
    }
    let summary = format!("{runs} terminated runs over 4 handlers, {records} records decoded, 0 lost, 0 duplicated");
    if parts.is_empty() {
        check(ok, summary)
    } else {
        check(false, parts.join("; "))
    }
}

// 6 -------------------------------------------------------------------------

fn selection() -> Check {
    let dir = tmp();
    let p = Profiler::new(ProfilerConfig {
        out_dir: dir.path().to_path_buf(),
        ..ProfilerConfig::default()
    });
    let n = 1_000_000u64;
    let xoy = p
        .open_channel("xoy", DataFormat::RawTicks, HandlerSpec::XoY { x: 2, y: 1024 })
        .unwrap();
    for id in 0..n {
        xoy.log_ts(id).unwrap();
    }
    xoy.close();
    let got = decode_file(xoy.sink_path()).unwrap().records.tuple_ids();
    let mut want = Vec::new();
    for id in 0..n {
        if id % 1024 == 0 || id % 1024 == 1 {
            want.push(id);
        }
    }
    let mut ok = got == want && got[..4] == [0, 1, 1024, 1025];
    let mut detail = format!("XoY(2,1024): {} ids, exact={}", got.len(), got == want);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ids: Vec<u64> = (0..n).map(|_| rng.random()).collect();
    for k in [1u64, 3, 1_000_000] {
        let ch = p
            .open_channel(&format!("ds_{k}"), DataFormat::RawTicks, HandlerSpec::Downsample(k))
            .unwrap();
        for &id in &ids {
            ch.log_ts(id).unwrap();
        }
        ch.close();
        let got = decode_file(ch.sink_path()).unwrap().records.tuple_ids();
        let mut want = Vec::new();
        let mut call = 0u64;
        for &id in &ids {
            if call % k == 0 {
                want.push(id);
            }
            call += 1;
        }
        ok &= got == want;
        detail.push_str(&format!("; Downsample({k}): {} ids, exact={}", got.len(), got == want));
    }
    check(ok, detail)
}

// 7 -------------------------------------------------------------------------

fn overhead() -> Check {
    const CALLS: u64 = 100_000_000;
    let mut means = Vec::new();
    let mut detail = Vec::new();
    for (label, spec) in [
        ("Null", HandlerSpec::Null),
        ("BufferedID", HandlerSpec::BufferedId(Codec::Zstd)),
        ("ID", HandlerSpec::Id),
    ] {
        let dir = tmp();
        let p = Profiler::new(ProfilerConfig {
            out_dir: dir.path().to_path_buf(),
            ..ProfilerConfig::default()
        });
        let ch = p.open_channel("bench", DataFormat::RawTicks, spec).unwrap();
        let start = Instant::now();
        for i in 0..CALLS {
            let _ = ch.log_ts(std::hint::black_box(i));
        }
        let mean = start.elapsed().as_nanos() as f64 / CALLS as f64;
        let r = ch.close();
        means.push(mean);
        detail.push(format!("{label} {mean:.1} ns (written {})", r.written));
    }
    check(
        means[0] < means[1] && means[1] < means[2],
        format!("{} calls each: {}", CALLS, detail.join(", ")),
    )
}

// 8 -------------------------------------------------------------------------

fn emission() -> Check {
    let payload = make_payload(64);
    let overhead = measure_send_overhead(&mut NullTransport::default(), &payload, 0).unwrap();
    let plan = EmissionPlan::new(100_000.0, Duration::from_secs(10), 10_000, 1, payload.clone(), overhead).unwrap();
    let s = run_emission(&plan, |_| Ok(NullTransport::default())).unwrap();
    let rate_ok = (s.achieved_rate - 100_000.0).abs() / 100_000.0 < 0.01;
    let primary = s.sent == 1_000_000 && s.deadline_misses == 0 && rate_ok;
    let max_late = s.threads.iter().map(|t| t.max_lateness_ns).max().unwrap_or(0);

    let mut server = JofServer::bind("127.0.0.1:0", "127.0.0.1:0", JofConfig::default())
        .unwrap()
        .spawn()
        .unwrap();
    let mut sut = TcpSut::connect(server.data_addr(), server.control_addr(), 1, 1_000, payload, 1024).unwrap();
    let o = sut.run(1_000_000.0, Duration::from_secs(10)).unwrap();
    server.shutdown();
    let loopback = o.sent == 10_000_000 && o.dropped == 0 && o.achieved_rate >= 1e6 * 0.99;
    check(
        primary && loopback,
        format!(
            "100k/s x 10 s: sent {} (need 1000000), deadline misses {} (need 0, max lateness {:.1} us), \
             rate {:.1}/s (within 1%: {rate_ok}); loopback 1 MT/s x 10 s: sent {}, ingested {}, dropped {}, rate {:.0}/s",
            s.sent,
            s.deadline_misses,
            max_late as f64 / 1e3,
            s.achieved_rate,
            o.sent,
            o.ingested,
            o.dropped,
            o.achieved_rate
        ),
    )
}

// 9 -------------------------------------------------------------------------

fn search() -> Check {
    let mut ok = true;
    let mut parts = Vec::new();
    for capacity in [0.2e6, 1.0e6, 5.0e6] {
        let mut sut = FakeSut::new(capacity);
        let cfg = SearchConfig {
            start: 0.1e6,
            ..SearchConfig::default()
        };
        let r = evaluate_max_throughput(&mut sut, &cfg).expect("search");
        let again = sut.run(r.rate, cfg.duration).unwrap();
        let good = r.rate > capacity / 1.5 && r.rate <= capacity && r.best.dropped == 0 && again.dropped == 0 && r.runs.len() <= 20;
        ok &= good;
        parts.push(format!("C={} MT/s -> {:.4} MT/s in {} runs", capacity / 1e6, r.rate / 1e6, r.runs.len()));
    }
    check(ok, parts.join("; "))
}

// 10 ------------------------------------------------------------------------

fn determinism() -> Check {
    let mut outputs = Vec::new();
    for _ in 0..5 {
        let dir = tmp();
        let mut sim = SimCluster::random(42, 3, DelayModel::quiescent());
        let s = master_measure(&mut sim, &SessionSpec::default()).expect("session");
        let mut files: Vec<(String, Vec<u8>)> = s
            .write(dir.path())
            .expect("write")
            .iter()
            .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(p).unwrap()))
            .collect();
        files.sort();
        outputs.push(files);
    }
    let identical = outputs.windows(2).all(|w| w[0] == w[1]);
    let count = outputs[0].len();
    check(
        identical && count == 6,
        format!("5 runs byte-identical: {identical}; relations from 3 nodes: {count}"),
    )
}

// 11 ------------------------------------------------------------------------

struct Node {
    child: Child,
    out: BufReader<ChildStdout>,
    ready: String,
}

impl Node {
    fn spawn(node: u32, logs: &Path, counter: &str, role: &[&str]) -> Node {
        let mut child = Command::new(env!("CARGO_BIN_EXE_cp-demo-node"))
            .args(["--node", &node.to_string(), "--counter", counter, "--logs"])
            .arg(logs)
            .args(role)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .expect("spawn demo node");
        let mut out = BufReader::new(child.stdout.take().unwrap());
        let ready = read_line(&mut out);
        assert!(ready.starts_with("READY"), "node {node}: {ready:?}");
        Node { child, out, ready }
    }

    fn field(&self, key: &str) -> String {
        self.ready
            .split_whitespace()
            .find_map(|kv| kv.strip_prefix(key)?.strip_prefix('='))
            .unwrap_or_else(|| panic!("no {key} in {:?}", self.ready))
            .to_string()
    }

    fn send(&mut self, line: &str) {
        writeln!(self.child.stdin.as_mut().unwrap(), "{line}").unwrap();
    }

    fn finish(mut self) {
        drop(self.child.stdin.take());
        self.child.wait().unwrap();
    }
}

fn tsc_pair_walls(path: &Path) -> HashMap<u64, u64> {
    match decode_file(path).expect("decode").records {
        Records::TscPair(v) => v.into_iter().map(|r| (r.tuple_id, r.wall_ns)).collect(),
        _ => panic!("expected tsc_pair records in {}", path.display()),
    }
}

fn end_to_end() -> Check {
    const TUPLES: u64 = 100_000;
    let dir = tmp();
    let (logs, rel, out) = (dir.path().join("logs"), dir.path().join("rel"), dir.path().join("out"));
    let mut sink = Node::spawn(1, &logs, "virtual:1700000000:987654321098765", &["sink", "--delay-us", "1000"]);
    let data = sink.field("data");
    let mut source = Node::spawn(
        0,
        &logs,
        "virtual:2600000000:123456789012",
        &["source", "--peer", &data, "--count", &TUPLES.to_string(), "--rate", "50000"],
    );
    let slaves = [source.field("slave"), sink.field("slave")];
    let _: SocketAddr = slaves[0].parse().unwrap();
    let master = std::thread::spawn(move || {
        let mut cluster = NetCluster::register(&slaves, Duration::from_secs(1)).expect("register");
        let spec = SessionSpec {
            iterations: 100,
            spacing: Duration::from_secs(6),
            ref_node: None,
        };
        master_measure(&mut cluster, &spec).expect("session")
    });
    std::thread::sleep(Duration::from_millis(500));
    source.send("GO");
    let sent = read_line(&mut source.out);
    let received = read_line(&mut sink.out);
    let session = master.join().expect("master thread");
    source.finish();
    sink.finish();
    if !session.is_complete() {
        return check(false, format!("relation session incomplete: {:?}", session.errors));
    }
    session.write(&rel).unwrap();

    let summary = analyze(&AnalyzeConfig {
        logs: logs.clone(),
        relations: Some(rel),
        pairs: vec!["source:sink".parse::<ChannelPair>().unwrap()],
        ntp: Vec::new(),
        out: out.clone(),
        default_hz: None,
        histogram_bins: 50,
    })
    .expect("analyze");
    let Some(stats) = summary
        .groups
        .iter()
        .find(|g| g.group == "source->sink" && g.locality == Locality::Remote)
    else {
        return check(false, format!("no remote group; {} / {}", sent.trim(), received.trim()));
    };

    let src = tsc_pair_walls(&logs.join("0/source.cplg"));
    let dst = tsc_pair_walls(&logs.join("1/sink.cplg"));
    let (mut rows, mut contained, mut worst) = (0u64, 0u64, 0.0f64);
    let mut uncertainties = Vec::new();
    for row in read_csv(&out.join("durations.csv")) {
        let id: u64 = row["tuple_id"].parse().unwrap();
        let best: f64 = row["best_ns"].parse().unwrap();
        let unc: f64 = row["uncertainty_ns"].parse().unwrap();
        let truth = dst[&id] as f64 - src[&id] as f64;
        rows += 1;
        contained += u64::from((best - truth).abs() <= unc);
        worst = worst.max((best - truth).abs());
        uncertainties.push(unc);
    }
    uncertainties.sort_by(f64::total_cmp);
    check(
        stats.count as u64 == TUPLES && rows == TUPLES && contained == TUPLES,
        format!(
            "{} remote traces, {contained}/{rows} contain the true latency; median latency {:.1} us, \
             median uncertainty {:.2} us, largest |best - truth| {:.2} us",
            stats.count,
            stats.median / 1e3,
            uncertainties[uncertainties.len() / 2] / 1e3,
            worst / 1e3
        ),
    )
}

// ---------------------------------------------------------------------------

type Criterion = fn() -> Check;

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let all: [(u32, &str, Criterion); 11] = [
        (1, "error formula vs finite differences", error_formula),
        (2, "ground-truth containment", containment),
        (3, "CP vs ReT ordering", cp_vs_ret),
        (4, "NTP bound arithmetic", ntp_bound),
        (5, "profiler losslessness", lossless),
        (6, "selection handlers", selection),
        (7, "handler overhead ordering", overhead),
        (8, "emission-loop precision", emission),
        (9, "max-throughput search", search),
        (10, "MinRTT determinism", determinism),
        (11, "end-to-end integration", end_to_end),
    ];
    let mut failed = Vec::new();
    for (n, title, f) in all {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            check(false, format!("panicked: {msg}"))
        });
        println!(
            "criterion {n:>2} {} {title}: {} [{:.1} s]",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        );
        if !result.pass {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
