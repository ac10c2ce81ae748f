//! Channels and their handlers.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, Sender};
use parking_lot::{Condvar, Mutex};
use thiserror::Error;

use crate::handler::{downsample_selects, xoy_selects, HandlerSpec};
use crate::pipeline::{Job, SinkShared};
use crate::record::{CountRecord, DataFormat, Record, RetRecord};
use crate::ret::{AckReceiver, AckSender};
use crate::sink::frame_header;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum LogError {
    #[error("channel is closed")]
    Closed,
    #[error("record could not be written")]
    Unpersisted,
    #[error("acknowledgment could not be sent")]
    AckFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no records were logged on the channel")]
pub struct NoData;

/// Totals for a closed channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CloseReport {
    pub name: String,
    pub handler: HandlerSpec,
    pub path: PathBuf,
    /// Calls accepted while open.
    pub logged: u64,
    /// Records present in the sink.
    pub written: u64,
    /// Calls made after close.
    pub rejected: u64,
    /// Records lost to write errors.
    pub unpersisted: u64,
    /// Return-trip tuples whose acknowledgment never arrived.
    pub unacked: u64,
}

pub(crate) struct ChannelInner {
    pub name: String,
    pub format: DataFormat,
    pub spec: HandlerSpec,
    pub path: PathBuf,
    closed: AtomicBool,
    rejected: AtomicU64,
    imp: Imp,
    report: Mutex<Option<CloseReport>>,
}

enum Imp {
    Null,
    Direct(Mutex<DirectState>),
    Buffered(Mutex<BufferedState>, Arc<SinkShared>),
    FirstLast(Mutex<FirstLastState>),
    Counter(Arc<CounterShared>),
    RetStart(Arc<RetShared>),
    RetEnd(Mutex<RetEndState>),
}

struct DirectState {
    file: File,
    open: bool,
    calls: u64,
    logged: u64,
    written: u64,
    unpersisted: u64,
}

pub(crate) struct BufferedConfig {
    pub block_capacity: usize,
    pub pool_blocks: usize,
    pub jobs: Sender<Job>,
}

struct BufferedState {
    open: bool,
    buf: Option<Vec<u8>>,
    fill: u64,
    block_bytes: usize,
    pool_tx: Sender<Vec<u8>>,
    pool_rx: Receiver<Vec<u8>>,
    allocated: usize,
    max_blocks: usize,
    next_seq: u64,
    logged: u64,
    jobs: Option<Sender<Job>>,
}

struct FirstLastState {
    file: File,
    open: bool,
    logged: u64,
    first: Option<Record>,
    last: Option<Record>,
}

const CLOSED_BIT: u64 = 1 << 63;

struct CounterShared {
    count: AtomicU64,
    multi_writer: bool,
    stop: Mutex<bool>,
    wake: Condvar,
    sampler: Mutex<Option<JoinHandle<(u64, u64)>>>,
    periods: Mutex<Vec<CountRecord>>,
    file: Mutex<File>,
}

struct RetState {
    open: bool,
    logged: u64,
    pending: HashMap<u64, u64>,
    done: Vec<RetRecord>,
}

struct RetShared {
    state: Mutex<RetState>,
    acked: Condvar,
    stop: AtomicBool,
    thread: Mutex<Option<JoinHandle<()>>>,
    file: Mutex<File>,
    grace: Duration,
}

struct RetEndState {
    open: bool,
    logged: u64,
    sender: Box<dyn AckSender>,
}

/// Handle to an open channel. Cloning shares the same channel.
#[derive(Clone)]
pub struct Channel(pub(crate) Arc<ChannelInner>);

pub(crate) struct OpenParams {
    pub name: String,
    pub format: DataFormat,
    pub spec: HandlerSpec,
    pub path: PathBuf,
    pub file: File,
    pub buffered: Option<BufferedConfig>,
    pub ack_sender: Option<Box<dyn AckSender>>,
    pub ack_receiver: Option<Box<dyn AckReceiver>>,
    pub ret_grace: Duration,
}

impl ChannelInner {
    pub fn open(p: OpenParams) -> Arc<Self> {
        let imp = match p.spec {
            HandlerSpec::Id | HandlerSpec::Downsample(_) | HandlerSpec::XoY { .. } => {
                Imp::Direct(Mutex::new(DirectState {
                    file: p.file,
                    open: true,
                    calls: 0,
                    logged: 0,
                    written: 0,
                    unpersisted: 0,
                }))
            }
            HandlerSpec::BufferedId(codec) => {
                let cfg = p.buffered.expect("buffered channel without pipeline");
                let max_blocks = cfg.pool_blocks.max(1);
                let (pool_tx, pool_rx) = bounded(max_blocks);
                let sink = SinkShared::new(&p.name, p.path.clone(), codec, p.file);
                Imp::Buffered(
                    Mutex::new(BufferedState {
                        open: true,
                        buf: None,
                        fill: 0,
                        block_bytes: cfg.block_capacity.max(1) * crate::record::record_size(p.format),
                        pool_tx,
                        pool_rx,
                        allocated: 0,
                        max_blocks,
                        next_seq: 0,
                        logged: 0,
                        jobs: Some(cfg.jobs),
                    }),
                    sink,
                )
            }
            HandlerSpec::FirstLast => Imp::FirstLast(Mutex::new(FirstLastState {
                file: p.file,
                open: true,
                logged: 0,
                first: None,
                last: None,
            })),
            HandlerSpec::Spc(period) | HandlerSpec::Mpc(period) => {
                let shared = Arc::new(CounterShared {
                    count: AtomicU64::new(0),
                    multi_writer: matches!(p.spec, HandlerSpec::Mpc(_)),
                    stop: Mutex::new(false),
                    wake: Condvar::new(),
                    sampler: Mutex::new(None),
                    periods: Mutex::new(Vec::new()),
                    file: Mutex::new(p.file),
                });
                let s = Arc::clone(&shared);
                let start = Instant::now();
                let handle = thread::Builder::new()
                    .name(format!("cp-pc-{}", p.name))
                    .spawn(move || sample_counter(&s, start, period))
                    .expect("spawn sampler");
                *shared.sampler.lock() = Some(handle);
                Imp::Counter(shared)
            }
            HandlerSpec::RetStart => {
                let shared = Arc::new(RetShared {
                    state: Mutex::new(RetState {
                        open: true,
                        logged: 0,
                        pending: HashMap::new(),
                        done: Vec::new(),
                    }),
                    acked: Condvar::new(),
                    stop: AtomicBool::new(false),
                    thread: Mutex::new(None),
                    file: Mutex::new(p.file),
                    grace: p.ret_grace,
                });
                let mut rx = p.ack_receiver.expect("return-trip start without receiver");
                let s = Arc::clone(&shared);
                let format = p.format;
                let handle = thread::Builder::new()
                    .name(format!("cp-ret-{}", p.name))
                    .spawn(move || receive_acks(&s, rx.as_mut(), format))
                    .expect("spawn ack receiver");
                *shared.thread.lock() = Some(handle);
                Imp::RetStart(shared)
            }
            HandlerSpec::RetEnd => Imp::RetEnd(Mutex::new(RetEndState {
                open: true,
                logged: 0,
                sender: p.ack_sender.expect("return-trip end without sender"),
            })),
            HandlerSpec::Null => Imp::Null,
        };
        Arc::new(Self {
            name: p.name,
            format: p.format,
            spec: p.spec,
            path: p.path,
            closed: AtomicBool::new(false),
            rejected: AtomicU64::new(0),
            imp,
            report: Mutex::new(None),
        })
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::Acquire)
    }

    #[inline]
    fn reject(&self) -> Result<(), LogError> {
        self.rejected.fetch_add(1, Ordering::Relaxed);
        Err(LogError::Closed)
    }

    #[inline]
    pub fn log_ts(&self, tuple_id: u64) -> Result<(), LogError> {
        match &self.imp {
            Imp::Null => {
                if self.closed.load(Ordering::Relaxed) {
                    return self.reject();
                }
                Ok(())
            }
            Imp::Direct(m) => {
                let mut s = m.lock();
                if !s.open {
                    drop(s);
                    return self.reject();
                }
                let index = s.calls;
                s.calls += 1;
                s.logged += 1;
                let selected = match self.spec {
                    HandlerSpec::Downsample(n) => downsample_selects(n, index),
                    HandlerSpec::XoY { x, y } => xoy_selects(x, y, tuple_id),
                    _ => true,
                };
                if !selected {
                    return Ok(());
                }
                let rec = Record::new(self.format, self.format.now(), tuple_id);
                let mut frame = [0u8; 32];
                let len = match rec {
                    Record::Log(r) => {
                        frame[..8].copy_from_slice(&frame_header(16, 16));
                        frame[8..24].copy_from_slice(&r.encode());
                        24
                    }
                    Record::TscPair(r) => {
                        frame[..8].copy_from_slice(&frame_header(24, 24));
                        frame[8..32].copy_from_slice(&r.encode());
                        32
                    }
                };
                match s.file.write_all(&frame[..len]) {
                    Ok(()) => {
                        s.written += 1;
                        Ok(())
                    }
                    Err(e) => {
                        s.unpersisted += 1;
                        log::error!("{}: {e}", self.name);
                        Err(LogError::Unpersisted)
                    }
                }
            }
            Imp::Buffered(m, sink) => {
                let mut s = m.lock();
                if !s.open {
                    drop(s);
                    return self.reject();
                }
                if s.buf.is_none() {
                    let b = s.acquire_block();
                    s.buf = Some(b);
                }
                let rec = Record::new(self.format, self.format.now(), tuple_id);
                let buf = s.buf.as_mut().expect("block acquired");
                rec.append_to(buf);
                let full = buf.len() >= s.block_bytes;
                s.fill += 1;
                s.logged += 1;
                if full {
                    s.submit(sink);
                }
                Ok(())
            }
            Imp::FirstLast(m) => {
                let mut s = m.lock();
                if !s.open {
                    drop(s);
                    return self.reject();
                }
                let rec = Record::new(self.format, self.format.now(), tuple_id);
                s.logged += 1;
                s.observe(rec);
                Ok(())
            }
            Imp::Counter(c) => {
                let order = if c.multi_writer {
                    Ordering::AcqRel
                } else {
                    Ordering::Relaxed
                };
                let prev = c.count.fetch_add(1, order);
                if prev & CLOSED_BIT != 0 {
                    return self.reject();
                }
                Ok(())
            }
            Imp::RetStart(r) => {
                let t1 = self.format.now().order_key(self.format);
                let mut s = r.state.lock();
                if !s.open {
                    drop(s);
                    return self.reject();
                }
                s.logged += 1;
                if s.pending.insert(tuple_id, t1).is_some() {
                    log::warn!("{}: tuple {tuple_id} sent again before its acknowledgment", self.name);
                }
                Ok(())
            }
            Imp::RetEnd(m) => {
                let mut s = m.lock();
                if !s.open {
                    drop(s);
                    return self.reject();
                }
                s.logged += 1;
                s.sender.send_ack(tuple_id).map_err(|e| {
                    log::error!("{}: ack for {tuple_id}: {e}", self.name);
                    LogError::AckFailed
                })
            }
        }
    }

    /// Finalizes the sink. Later calls return the first report.
    pub fn close(&self) -> CloseReport {
        let mut slot = self.report.lock();
        if let Some(r) = slot.as_ref() {
            let mut r = r.clone();
            r.rejected = self.rejected.load(Ordering::Relaxed);
            return r;
        }
        self.closed.store(true, Ordering::Release);
        let mut report = CloseReport {
            name: self.name.clone(),
            handler: self.spec,
            path: self.path.clone(),
            logged: 0,
            written: 0,
            rejected: 0,
            unpersisted: 0,
            unacked: 0,
        };
        match &self.imp {
            Imp::Null => {}
            Imp::Direct(m) => {
                let mut s = m.lock();
                s.open = false;
                let _ = s.file.flush();
                report.logged = s.logged;
                report.written = s.written;
                report.unpersisted = s.unpersisted;
            }
            Imp::Buffered(m, sink) => {
                let submitted = {
                    let mut s = m.lock();
                    s.open = false;
                    if s.fill > 0 {
                        s.submit(sink);
                    }
                    s.jobs = None;
                    report.logged = s.logged;
                    s.next_seq
                };
                let totals = sink.wait_drained(submitted);
                report.written = totals.records_written;
                report.unpersisted = totals.unpersisted;
            }
            Imp::FirstLast(m) => {
                let mut s = m.lock();
                s.open = false;
                report.logged = s.logged;
                let recs: Vec<Record> = s.first.iter().chain(s.last.iter()).copied().collect();
                let (w, u) = write_frame(&mut s.file, &recs, |r, b| r.append_to(b));
                report.written = w;
                report.unpersisted = u;
            }
            Imp::Counter(c) => {
                let total = c.count.fetch_or(CLOSED_BIT, Ordering::AcqRel) & !CLOSED_BIT;
                *c.stop.lock() = true;
                c.wake.notify_all();
                let (index, last) = c
                    .sampler
                    .lock()
                    .take()
                    .and_then(|h| h.join().ok())
                    .unwrap_or((0, 0));
                let mut periods = c.periods.lock();
                periods.push(CountRecord {
                    period_index: index,
                    count: total - last,
                });
                periods.push(CountRecord {
                    period_index: CountRecord::TOTAL_INDEX,
                    count: total,
                });
                report.logged = total;
                let (w, u) = write_frame(&mut c.file.lock(), &periods, |r, b| {
                    b.extend_from_slice(&r.encode())
                });
                report.written = w;
                report.unpersisted = u;
            }
            Imp::RetStart(r) => {
                {
                    let mut s = r.state.lock();
                    s.open = false;
                    let deadline = Instant::now() + r.grace;
                    while !s.pending.is_empty() {
                        if r.acked.wait_until(&mut s, deadline).timed_out() {
                            break;
                        }
                    }
                }
                r.stop.store(true, Ordering::Release);
                if let Some(h) = r.thread.lock().take() {
                    let _ = h.join();
                }
                let mut s = r.state.lock();
                report.logged = s.logged;
                report.unacked = s.pending.len() as u64;
                let done = std::mem::take(&mut s.done);
                let (w, u) = write_frame(&mut r.file.lock(), &done, |rec, b| {
                    b.extend_from_slice(&rec.encode())
                });
                report.written = w;
                report.unpersisted = u;
                s.done = done;
            }
            Imp::RetEnd(m) => {
                let mut s = m.lock();
                s.open = false;
                report.logged = s.logged;
            }
        }
        report.rejected = self.rejected.load(Ordering::Relaxed);
        *slot = Some(report.clone());
        report
    }

    pub fn first_last(&self) -> Result<(Record, Record), NoData> {
        match &self.imp {
            Imp::FirstLast(m) => {
                let s = m.lock();
                match (s.first, s.last) {
                    (Some(f), Some(l)) => Ok((f, l)),
                    _ => Err(NoData),
                }
            }
            _ => Err(NoData),
        }
    }

    pub fn counter_periods(&self) -> Vec<CountRecord> {
        match &self.imp {
            Imp::Counter(c) => c.periods.lock().clone(),
            _ => Vec::new(),
        }
    }

    pub fn ret_records(&self) -> Vec<RetRecord> {
        match &self.imp {
            Imp::RetStart(r) => r.state.lock().done.clone(),
            _ => Vec::new(),
        }
    }
}

impl BufferedState {
    fn acquire_block(&mut self) -> Vec<u8> {
        if let Ok(b) = self.pool_rx.try_recv() {
            return b;
        }
        if self.allocated < self.max_blocks {
            self.allocated += 1;
            return Vec::with_capacity(self.block_bytes);
        }
        // Every block is in flight: wait for the pipeline to hand one back.
        self.pool_rx.recv().expect("block pool sender kept by channel")
    }

    fn submit(&mut self, sink: &Arc<SinkShared>) {
        let data = self.buf.take().unwrap_or_default();
        let job = Job {
            sink: Arc::clone(sink),
            seq: self.next_seq,
            data,
            records: self.fill,
            pool: self.pool_tx.clone(),
        };
        self.next_seq += 1;
        self.fill = 0;
        if let Some(jobs) = &self.jobs {
            if jobs.send(job).is_err() {
                log::error!("{}: pipeline stopped", sink.name);
            }
        }
    }
}

impl FirstLastState {
    fn observe(&mut self, rec: Record) {
        let key = rec.order_key();
        if self.first.map_or(true, |f| key < f.order_key()) {
            self.first = Some(rec);
        }
        if self.last.map_or(true, |l| key >= l.order_key()) {
            self.last = Some(rec);
        }
    }
}

/// Writes `items` as a single raw frame; returns (written, unpersisted).
fn write_frame<T>(file: &mut File, items: &[T], enc: impl Fn(&T, &mut Vec<u8>)) -> (u64, u64) {
    if items.is_empty() {
        return (0, 0);
    }
    let mut payload = Vec::new();
    for it in items {
        enc(it, &mut payload);
    }
    let mut bytes = frame_header(payload.len(), payload.len()).to_vec();
    bytes.extend_from_slice(&payload);
    match file.write_all(&bytes).and_then(|_| file.flush()) {
        Ok(()) => (items.len() as u64, 0),
        Err(e) => {
            log::error!("sink write: {e}");
            (0, items.len() as u64)
        }
    }
}

/// Records one count per elapsed period until the channel closes. Returns
/// the index of the period in progress and the cumulative count at its
/// start.
fn sample_counter(c: &CounterShared, start: Instant, period: Duration) -> (u64, u64) {
    let mut index = 0u64;
    let mut last = 0u64;
    loop {
        let deadline = start + Duration::from_nanos((period.as_nanos() as u64).saturating_mul(index + 1));
        {
            let mut stop = c.stop.lock();
            while !*stop && Instant::now() < deadline {
                c.wake.wait_until(&mut stop, deadline);
            }
            if *stop {
                return (index, last);
            }
        }
        let v = c.count.load(Ordering::Acquire);
        if v & CLOSED_BIT != 0 {
            return (index, last);
        }
        c.periods.lock().push(CountRecord {
            period_index: index,
            count: v - last,
        });
        last = v;
        index += 1;
    }
}

fn receive_acks(r: &RetShared, rx: &mut dyn AckReceiver, format: DataFormat) {
    while !r.stop.load(Ordering::Acquire) {
        match rx.recv_ack(Duration::from_millis(20)) {
            Ok(Some(id)) => {
                let t3 = format.now().order_key(format);
                let mut s = r.state.lock();
                match s.pending.remove(&id) {
                    Some(t1) => s.done.push(RetRecord { tuple_id: id, t1, t3 }),
                    None => log::warn!("acknowledgment for unknown tuple {id}"),
                }
                if s.pending.is_empty() {
                    r.acked.notify_all();
                }
            }
            Ok(None) => {}
            Err(e) => {
                log::warn!("ack link: {e}");
                break;
            }
        }
    }
}

impl std::fmt::Debug for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Channel")
            .field("name", &self.0.name)
            .field("handler", &self.0.spec)
            .field("format", &self.0.format)
            .field("closed", &self.is_closed())
            .finish()
    }
}

impl Channel {
    pub fn name(&self) -> &str {
        &self.0.name
    }

    pub fn handler(&self) -> HandlerSpec {
        self.0.spec
    }

    pub fn data_format(&self) -> DataFormat {
        self.0.format
    }

    pub fn sink_path(&self) -> &Path {
        &self.0.path
    }

    pub fn is_closed(&self) -> bool {
        self.0.is_closed()
    }

    /// Logs a timestamp for `tuple_id` under the channel's handler policy.
    /// Calls after close are counted and rejected.
    #[inline]
    pub fn log_ts(&self, tuple_id: u64) -> Result<(), LogError> {
        self.0.log_ts(tuple_id)
    }

    pub fn close(&self) -> CloseReport {
        self.0.close()
    }

    pub fn first_last(&self) -> Result<(Record, Record), NoData> {
        self.0.first_last()
    }

    /// Per-period counts recorded so far; after close the last entry is the
    /// grand total.
    pub fn counter_periods(&self) -> Vec<CountRecord> {
        self.0.counter_periods()
    }

    /// Completed return trips so far.
    pub fn ret_records(&self) -> Vec<RetRecord> {
        self.0.ret_records()
    }
}
