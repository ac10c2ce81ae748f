use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use crossbeam_channel::bounded;
use cp_datagen::bucket::encode_bucket;
use cp_datagen::{
    jof_receive_loop, make_payload, sink_drain, Bucket, ControlClient, JofConfig, JofServer,
    ReceiverStats, Tuple,
};

fn frames(buckets: u64, per: u64) -> Vec<u8> {
    let p = make_payload(32);
    let refs: Vec<&[u8]> = (0..per).map(|_| p.as_slice()).collect();
    (0..buckets)
        .flat_map(|b| encode_bucket(b * per, &refs))
        .collect()
}

/// Counts frames' worth of bytes handed out, to observe when reading stops.
struct CountingReader<R> {
    inner: R,
    read: Arc<AtomicU64>,
}

impl<R: Read> Read for CountingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.read.fetch_add(n as u64, Ordering::SeqCst);
        Ok(n)
    }
}

#[test]
fn ten_full_buckets_drain_in_order() {
    let data = frames(10, 1024);
    let (tx, rx) = bounded(16);
    let stats = ReceiverStats::default();
    let pushed = jof_receive_loop(&data[..], 0, &tx, &JofConfig::default(), &stats).unwrap();
    assert_eq!(pushed, 10);
    let mut seqs = Vec::new();
    let n = sink_drain(&[rx], |_, t| seqs.push(t.seq));
    assert_eq!(n, 10_240);
    assert_eq!(seqs, (0..10_240).collect::<Vec<_>>());
}

#[test]
fn round_robin_across_queues() {
    let queues: Vec<_> = (0..3).map(|_| bounded::<Bucket>(4)).collect();
    for (i, (tx, _)) in queues.iter().enumerate() {
        for seq in 0..2 {
            tx.send(Bucket {
                source: i,
                tuples: vec![Tuple { seq, body: String::new() }],
            })
            .unwrap();
        }
    }
    let rxs: Vec<_> = queues.iter().map(|(_, rx)| rx.clone()).collect();
    let mut order = Vec::new();
    let n = sink_drain(&rxs, |src, t| order.push((src, t.seq)));
    assert_eq!(n, 6);
    assert_eq!(order, [(0, 0), (1, 0), (2, 0), (0, 1), (1, 1), (2, 1)]);
    assert_eq!(sink_drain(&rxs, |_, _| panic!("queues are empty")), 0);
}

#[test]
fn empty_queues_drain_nothing() {
    let (_tx, rx) = bounded::<Bucket>(1);
    assert_eq!(sink_drain(&[rx], |_, _| {}), 0);
    assert_eq!(sink_drain(&[], |_, _| {}), 0);
}

#[test]
fn full_queue_stops_reading() {
    let data = frames(20, 16);
    let frame_len = data.len() as u64 / 20;
    let read = Arc::new(AtomicU64::new(0));
    let reader = CountingReader {
        inner: io::Cursor::new(data),
        read: read.clone(),
    };
    let cfg = JofConfig {
        queue_cap: 4,
        ..JofConfig::default()
    };
    let stats = Arc::new(ReceiverStats::default());
    let (tx, rx) = bounded(cfg.queue_cap);
    let producer = {
        let stats = stats.clone();
        thread::spawn(move || jof_receive_loop(reader, 7, &tx, &cfg, &stats))
    };
    thread::sleep(Duration::from_millis(200));
    // Four buckets queued plus one held by the blocked push.
    assert_eq!(read.load(Ordering::SeqCst), 5 * frame_len);
    assert_eq!(stats.stalls.load(Ordering::Relaxed), 1);

    let mut seqs = Vec::new();
    while let Ok(b) = rx.recv_timeout(Duration::from_secs(2)) {
        assert_eq!(b.source, 7);
        seqs.extend(b.tuples.iter().map(|t| t.seq));
        thread::sleep(Duration::from_millis(2));
    }
    assert_eq!(producer.join().unwrap().unwrap(), 20);
    assert_eq!(seqs, (0..320).collect::<Vec<_>>());
    assert!(stats.stalls.load(Ordering::Relaxed) >= 1);
}

#[test]
fn malformed_frame_is_discarded_and_counted() {
    let mut data = frames(2, 8);
    let mut bad = encode_bucket(16, &[&make_payload(16)]);
    bad[4] = 9; // claims 9 tuples, holds 1
    data.extend_from_slice(&bad);
    data.extend(frames(1, 8));
    let (tx, rx) = bounded(16);
    let stats = ReceiverStats::default();
    let err = jof_receive_loop(&data[..], 0, &tx, &JofConfig::default(), &stats).unwrap_err();
    assert!(err.to_string().contains("truncated"), "{err}");
    assert_eq!(stats.malformed.load(Ordering::Relaxed), 1);
    assert_eq!(stats.discarded_buckets.load(Ordering::Relaxed), 1);
    assert_eq!(sink_drain(&[rx], |_, _| {}), 16);
}

#[test]
fn stream_cut_mid_frame_discards_partial_bucket() {
    let data = frames(3, 8);
    let cut = &data[..data.len() - 5];
    let (tx, rx) = bounded(16);
    let stats = ReceiverStats::default();
    assert!(jof_receive_loop(cut, 0, &tx, &JofConfig::default(), &stats).is_err());
    assert_eq!(stats.discarded_buckets.load(Ordering::Relaxed), 1);
    assert_eq!(sink_drain(&[rx], |_, _| {}), 16);
}

#[test]
fn loopback_counts_match_and_order_holds() {
    let handle = JofServer::bind("127.0.0.1:0", "127.0.0.1:0", JofConfig::default())
        .unwrap()
        .spawn()
        .unwrap();
    let mut control = ControlClient::connect(handle.control_addr()).unwrap();
    control.begin_run().unwrap();
    let senders: Vec<_> = (0..3)
        .map(|_| {
            let addr = handle.data_addr();
            thread::spawn(move || {
                let mut s = TcpStream::connect(addr).unwrap();
                let data = frames(50, 1000);
                for chunk in data.chunks(777) {
                    s.write_all(chunk).unwrap();
                }
            })
        })
        .collect();
    for s in senders {
        s.join().unwrap();
    }
    let counts = control.finish_run(150_000).unwrap();
    assert_eq!(counts.sent, 150_000);
    assert_eq!(counts.ingested, 150_000);
    assert_eq!(counts.order_violations, 0);
    assert_eq!(counts.malformed, 0);

    // A second run on the same control connection counts from zero.
    control.begin_run().unwrap();
    let mut s = TcpStream::connect(handle.data_addr()).unwrap();
    s.write_all(&frames(1, 10)).unwrap();
    drop(s);
    assert_eq!(control.finish_run(10).unwrap().ingested, 10);
}

#[test]
fn garbage_connection_does_not_disturb_others() {
    let handle = JofServer::bind("127.0.0.1:0", "127.0.0.1:0", JofConfig::default())
        .unwrap()
        .spawn()
        .unwrap();
    let mut junk = TcpStream::connect(handle.data_addr()).unwrap();
    junk.write_all(&[0xff; 64]).unwrap();
    let mut good = TcpStream::connect(handle.data_addr()).unwrap();
    good.write_all(&frames(4, 100)).unwrap();
    drop(good);
    assert_eq!(handle.wait_ingested(400, Duration::from_secs(5)), 400);
    drop(junk);
    let stats = handle.stats();
    for _ in 0..100 {
        if stats.malformed.load(Ordering::Relaxed) == 1 {
            break;
        }
        thread::sleep(Duration::from_millis(10));
    }
    assert_eq!(stats.malformed.load(Ordering::Relaxed), 1);
    assert_eq!(stats.order_violations.load(Ordering::Relaxed), 0);
}
