//! Receiver side: per-connection deserialization threads feeding bounded
//! single-producer queues, and one sink thread draining them round-robin.

use std::collections::HashMap;
use std::io::{self, Read};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, Select, Sender, TryRecvError, TrySendError};
use thiserror::Error;

use crate::bucket::{parse_bucket, read_frame, Bucket, FrameError, Tuple, DEFAULT_BUCKET};
use crate::control;

#[derive(Debug, Clone)]
pub struct JofConfig {
    /// Largest tuple count accepted in one frame.
    pub bucket: usize,
    /// Capacity of each connection's queue, in buckets.
    pub queue_cap: usize,
    /// Extra per-tuple decode work, see [`crate::bucket::deserialize_tuple`].
    pub cost_rounds: u32,
    /// Connections served at once; further ones are refused.
    pub max_connections: usize,
    /// Pause after each drained bucket, for throttled-sink experiments.
    pub sink_delay: Option<Duration>,
    /// How long after a run's end the sink may take to catch up; tuples
    /// still queued after that count as dropped.
    pub grace: Duration,
}

impl Default for JofConfig {
    fn default() -> Self {
        Self {
            bucket: DEFAULT_BUCKET,
            queue_cap: 64,
            cost_rounds: 0,
            max_connections: 64,
            sink_delay: None,
            grace: Duration::from_secs(1),
        }
    }
}

#[derive(Debug, Default)]
pub struct ReceiverStats {
    pub ingested: AtomicU64,
    pub buckets: AtomicU64,
    /// Pushes that found the queue full and had to block.
    pub stalls: AtomicU64,
    pub malformed: AtomicU64,
    /// Buckets dropped because their frame was malformed or cut short.
    pub discarded_buckets: AtomicU64,
    pub order_violations: AtomicU64,
    pub connections: AtomicU64,
    /// Current run; bumped by the control channel when a run begins.
    pub epoch: AtomicU64,
    /// Tuples ingested from connections opened during the current run.
    pub run_ingested: AtomicU64,
}

impl ReceiverStats {
    pub fn ingested(&self) -> u64 {
        self.ingested.load(Ordering::Acquire)
    }

    pub fn run_ingested(&self) -> u64 {
        self.run_ingested.load(Ordering::Acquire)
    }

    /// Starts a new run: later connections count towards it, earlier ones
    /// no longer do.
    pub fn begin_run(&self) {
        self.epoch.fetch_add(1, Ordering::AcqRel);
        self.run_ingested.store(0, Ordering::Release);
    }
}

#[derive(Debug, Error)]
pub enum JofError {
    #[error("connection {source_id}: {error}")]
    Frame {
        source_id: usize,
        #[source]
        error: FrameError,
    },
    #[error("sink queue closed")]
    SinkGone,
}

/// Reads frames from `conn` until it closes, deserializes every tuple of a
/// frame, then pushes the bucket to `queue`. A full queue blocks the loop, so
/// the connection is no longer read. Returns the number of buckets pushed.
pub fn jof_receive_loop<R: Read>(
    mut conn: R,
    source: usize,
    queue: &Sender<Bucket>,
    cfg: &JofConfig,
    stats: &ReceiverStats,
) -> Result<u64, JofError> {
    let mut buf = Vec::new();
    let mut pushed = 0;
    let fail = |error: FrameError| {
        stats.malformed.fetch_add(1, Ordering::Relaxed);
        stats.discarded_buckets.fetch_add(1, Ordering::Relaxed);
        JofError::Frame {
            source_id: source,
            error,
        }
    };
    loop {
        match read_frame(&mut conn, &mut buf) {
            Ok(true) => {}
            Ok(false) => return Ok(pushed),
            Err(e) => return Err(fail(e)),
        }
        let tuples = parse_bucket(&buf, cfg.bucket, cfg.cost_rounds).map_err(fail)?;
        let bucket = Bucket { source, tuples };
        match queue.try_send(bucket) {
            Ok(()) => {}
            Err(TrySendError::Full(bucket)) => {
                stats.stalls.fetch_add(1, Ordering::Relaxed);
                queue.send(bucket).map_err(|_| JofError::SinkGone)?;
            }
            Err(TrySendError::Disconnected(_)) => return Err(JofError::SinkGone),
        }
        pushed += 1;
    }
}

/// One round-robin sweep after another: take one bucket from each queue in
/// turn and ingest its tuples one at a time, until every queue is empty.
/// Returns the number of tuples ingested.
pub fn sink_drain(queues: &[Receiver<Bucket>], mut ingest: impl FnMut(usize, Tuple)) -> u64 {
    let mut n = 0;
    loop {
        let mut any = false;
        for q in queues {
            if let Ok(b) = q.try_recv() {
                any = true;
                for t in b.tuples {
                    ingest(b.source, t);
                    n += 1;
                }
            }
        }
        if !any {
            return n;
        }
    }
}

/// Per-connection sequence check and counting done by the sink thread.
struct SinkState {
    next_seq: HashMap<usize, u64>,
    stats: Arc<ReceiverStats>,
    delay: Option<Duration>,
}

impl SinkState {
    fn ingest_bucket(&mut self, b: Bucket, epoch: u64) {
        let expect = self.next_seq.entry(b.source).or_insert(0);
        let n = b.tuples.len() as u64;
        for t in b.tuples {
            if t.seq != *expect {
                self.stats.order_violations.fetch_add(1, Ordering::Relaxed);
            }
            *expect = t.seq + 1;
            std::hint::black_box(&t.body);
        }
        self.stats.buckets.fetch_add(1, Ordering::Relaxed);
        self.stats.ingested.fetch_add(n, Ordering::AcqRel);
        if epoch == self.stats.epoch.load(Ordering::Acquire) {
            self.stats.run_ingested.fetch_add(n, Ordering::AcqRel);
        }
        if let Some(d) = self.delay {
            thread::sleep(d);
        }
    }
}

/// A connection's queue with the run it was opened in.
type Registration = (Receiver<Bucket>, u64);

/// Sink thread body. New queues arrive on `register`; the thread ends once
/// `register` is closed and every queue is closed and empty.
fn sink_thread(register: Receiver<Registration>, mut state: SinkState) {
    let mut queues: Vec<Registration> = Vec::new();
    let mut registering = true;
    loop {
        while registering {
            match register.try_recv() {
                Ok(q) => queues.push(q),
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => registering = false,
            }
        }
        let mut any = false;
        queues.retain(|(q, epoch)| match q.try_recv() {
            Ok(b) => {
                any = true;
                state.ingest_bucket(b, *epoch);
                true
            }
            Err(TryRecvError::Empty) => true,
            Err(TryRecvError::Disconnected) => false,
        });
        if any {
            continue;
        }
        if !registering && queues.is_empty() {
            return;
        }
        let mut sel = Select::new();
        for (q, _) in &queues {
            sel.recv(q);
        }
        if registering {
            sel.recv(&register);
        }
        // Readiness only; the next sweep does the receiving.
        let _ = sel.ready_timeout(Duration::from_millis(50));
    }
}

struct Shared {
    cfg: JofConfig,
    stats: Arc<ReceiverStats>,
    stop: AtomicBool,
    active: AtomicUsize,
}

/// A receiver bound to a data port and a control port.
pub struct JofServer {
    data: TcpListener,
    control: TcpListener,
    shared: Arc<Shared>,
}

pub struct JofHandle {
    data_addr: SocketAddr,
    control_addr: SocketAddr,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
}

impl JofServer {
    pub fn bind(
        data: impl ToSocketAddrs,
        control: impl ToSocketAddrs,
        cfg: JofConfig,
    ) -> io::Result<Self> {
        Ok(Self {
            data: TcpListener::bind(data)?,
            control: TcpListener::bind(control)?,
            shared: Arc::new(Shared {
                cfg,
                stats: Arc::default(),
                stop: AtomicBool::new(false),
                active: AtomicUsize::new(0),
            }),
        })
    }

    pub fn data_addr(&self) -> io::Result<SocketAddr> {
        self.data.local_addr()
    }

    pub fn control_addr(&self) -> io::Result<SocketAddr> {
        self.control.local_addr()
    }

    pub fn stats(&self) -> Arc<ReceiverStats> {
        self.shared.stats.clone()
    }

    /// Starts the accept, sink and control threads.
    pub fn spawn(self) -> io::Result<JofHandle> {
        let data_addr = self.data.local_addr()?;
        let control_addr = self.control.local_addr()?;
        let (reg_tx, reg_rx) = bounded::<Registration>(1024);
        let sink = SinkState {
            next_seq: HashMap::new(),
            stats: self.shared.stats.clone(),
            delay: self.shared.cfg.sink_delay,
        };
        let mut threads = vec![thread::Builder::new()
            .name("jof-sink".into())
            .spawn(move || sink_thread(reg_rx, sink))?];
        let shared = self.shared.clone();
        let data = self.data;
        threads.push(
            thread::Builder::new()
                .name("jof-accept".into())
                .spawn(move || accept_data(data, reg_tx, shared))?,
        );
        let shared = self.shared.clone();
        let control = self.control;
        threads.push(
            thread::Builder::new()
                .name("jof-control".into())
                .spawn(move || accept_control(control, shared))?,
        );
        Ok(JofHandle {
            data_addr,
            control_addr,
            shared: self.shared,
            threads,
        })
    }
}

fn accept_data(listener: TcpListener, register: Sender<Registration>, shared: Arc<Shared>) {
    let mut next_source = 0usize;
    for conn in listener.incoming() {
        if shared.stop.load(Ordering::Acquire) {
            return;
        }
        let conn = match conn {
            Ok(c) => c,
            Err(e) => {
                log::warn!("data accept: {e}");
                continue;
            }
        };
        if shared.active.load(Ordering::Acquire) >= shared.cfg.max_connections {
            log::warn!("refusing data connection: {} already active", shared.cfg.max_connections);
            continue;
        }
        let (tx, rx) = bounded(shared.cfg.queue_cap.max(1));
        let epoch = shared.stats.epoch.load(Ordering::Acquire);
        if register.send((rx, epoch)).is_err() {
            return;
        }
        let source = next_source;
        next_source += 1;
        shared.active.fetch_add(1, Ordering::AcqRel);
        shared.stats.connections.fetch_add(1, Ordering::Relaxed);
        let shared = shared.clone();
        let spawned = thread::Builder::new()
            .name(format!("jof-recv-{source}"))
            .spawn(move || {
                let _ = conn.set_nodelay(true);
                let r = jof_receive_loop(&conn, source, &tx, &shared.cfg, &shared.stats);
                if let Err(e) = r {
                    log::warn!("{e}");
                }
                shared.active.fetch_sub(1, Ordering::AcqRel);
            });
        if let Err(e) = spawned {
            log::error!("spawning receive thread: {e}");
        }
    }
}

fn accept_control(listener: TcpListener, shared: Arc<Shared>) {
    for conn in listener.incoming() {
        if shared.stop.load(Ordering::Acquire) {
            return;
        }
        match conn {
            Ok(c) => {
                let shared = shared.clone();
                let _ = thread::Builder::new()
                    .name("jof-control-conn".into())
                    .spawn(move || {
                        if let Err(e) = control::serve(c, &shared.stats, shared.cfg.grace) {
                            log::debug!("control connection: {e}");
                        }
                    });
            }
            Err(e) => log::warn!("control accept: {e}"),
        }
    }
}

impl JofHandle {
    pub fn data_addr(&self) -> SocketAddr {
        self.data_addr
    }

    pub fn control_addr(&self) -> SocketAddr {
        self.control_addr
    }

    pub fn stats(&self) -> Arc<ReceiverStats> {
        self.shared.stats.clone()
    }

    /// Waits until `ingested` reaches `target` or `grace` passes.
    pub fn wait_ingested(&self, target: u64, grace: Duration) -> u64 {
        let deadline = Instant::now() + grace;
        loop {
            let n = self.shared.stats.ingested();
            if n >= target || Instant::now() >= deadline {
                return n;
            }
            thread::sleep(Duration::from_micros(500));
        }
    }

    /// Blocks the calling thread for the server's lifetime.
    pub fn join(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    /// Stops accepting. Live connections finish on their own.
    pub fn shutdown(&mut self) {
        if self.shared.stop.swap(true, Ordering::AcqRel) {
            return;
        }
        let _ = TcpStream::connect(self.data_addr);
        let _ = TcpStream::connect(self.control_addr);
    }
}

impl Drop for JofHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Polls until the current run has ingested `target` tuples or `grace` has
/// passed. Returns the run's count.
pub(crate) fn wait_for_run(stats: &ReceiverStats, target: u64, grace: Duration) -> u64 {
    let deadline = Instant::now() + grace;
    loop {
        let now = stats.run_ingested();
        if now >= target || Instant::now() >= deadline {
            return now;
        }
        thread::sleep(Duration::from_micros(500));
    }
}
