//! Block pipeline: logging threads hand full blocks to K compression
//! workers, which hand frames to a single writer per profiler. The writer
//! restores per-sink block order before writing.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use crossbeam_channel::{unbounded, Receiver, Sender};
use parking_lot::{Condvar, Mutex};

use crate::codec::Codec;
use crate::sink::frame_header;

/// Writer-side state of one buffered sink.
pub(crate) struct SinkShared {
    pub name: String,
    pub path: PathBuf,
    pub codec: Codec,
    progress: Mutex<Progress>,
    drained: Condvar,
}

struct Progress {
    file: File,
    next_seq: u64,
    reorder: BTreeMap<u64, Frame>,
    records_written: u64,
    unpersisted: u64,
    last_error: Option<String>,
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct SinkTotals {
    pub records_written: u64,
    pub unpersisted: u64,
}

impl SinkShared {
    pub fn new(name: &str, path: PathBuf, codec: Codec, file: File) -> Arc<Self> {
        Arc::new(Self {
            name: name.to_string(),
            path,
            codec,
            progress: Mutex::new(Progress {
                file,
                next_seq: 0,
                reorder: BTreeMap::new(),
                records_written: 0,
                unpersisted: 0,
                last_error: None,
            }),
            drained: Condvar::new(),
        })
    }

    /// Blocks until blocks `0..submitted` have been written (or failed).
    pub fn wait_drained(&self, submitted: u64) -> SinkTotals {
        let mut p = self.progress.lock();
        while p.next_seq < submitted {
            self.drained.wait(&mut p);
        }
        if let Err(e) = p.file.flush() {
            p.last_error = Some(e.to_string());
        }
        if let Some(e) = &p.last_error {
            log::error!("{}: {e}", self.path.display());
        }
        SinkTotals {
            records_written: p.records_written,
            unpersisted: p.unpersisted,
        }
    }

    fn accept(&self, frame: Frame) {
        let mut p = self.progress.lock();
        p.reorder.insert(frame.seq, frame);
        loop {
            let next = p.next_seq;
            let Some(f) = p.reorder.remove(&next) else {
                break;
            };
            let header = frame_header(f.payload.len(), f.raw_len);
            let res = p
                .file
                .write_all(&header)
                .and_then(|_| p.file.write_all(&f.payload));
            match res {
                Ok(()) => p.records_written += f.records,
                Err(e) => {
                    p.unpersisted += f.records;
                    p.last_error = Some(e.to_string());
                }
            }
            p.next_seq += 1;
            if let Some(pool) = f.recycle {
                let mut buf = f.payload;
                buf.clear();
                let _ = pool.send(buf);
            }
        }
        self.drained.notify_all();
    }
}

/// A filled block on its way to compression.
pub(crate) struct Job {
    pub sink: Arc<SinkShared>,
    pub seq: u64,
    pub data: Vec<u8>,
    pub records: u64,
    /// Where the block's buffer goes once its bytes are no longer needed.
    pub pool: Sender<Vec<u8>>,
}

struct Frame {
    sink: Arc<SinkShared>,
    seq: u64,
    raw_len: usize,
    payload: Vec<u8>,
    records: u64,
    recycle: Option<Sender<Vec<u8>>>,
}

pub(crate) struct Pipeline {
    jobs: Option<Sender<Job>>,
    workers: Vec<JoinHandle<()>>,
    writer: Option<JoinHandle<()>>,
}

impl Pipeline {
    pub fn start(workers: usize) -> Self {
        let (job_tx, job_rx) = unbounded::<Job>();
        let (frame_tx, frame_rx) = unbounded::<Frame>();
        let workers = (0..workers.max(1))
            .map(|i| {
                let rx = job_rx.clone();
                let tx = frame_tx.clone();
                thread::Builder::new()
                    .name(format!("cp-compress-{i}"))
                    .spawn(move || compress_loop(rx, tx))
                    .expect("spawn compression worker")
            })
            .collect();
        drop(frame_tx);
        let writer = thread::Builder::new()
            .name("cp-writer".into())
            .spawn(move || {
                for frame in frame_rx {
                    let sink = Arc::clone(&frame.sink);
                    sink.accept(frame);
                }
            })
            .expect("spawn writer");
        Self {
            jobs: Some(job_tx),
            workers,
            writer: Some(writer),
        }
    }

    pub fn sender(&self) -> Sender<Job> {
        self.jobs.as_ref().expect("pipeline running").clone()
    }
}

fn compress_loop(jobs: Receiver<Job>, frames: Sender<Frame>) {
    for job in jobs {
        let raw_len = job.data.len();
        let frame = if job.sink.codec == Codec::Raw {
            Frame {
                sink: job.sink,
                seq: job.seq,
                raw_len,
                payload: job.data,
                records: job.records,
                recycle: Some(job.pool),
            }
        } else {
            let payload = job.sink.codec.compress(&job.data);
            let mut data = job.data;
            data.clear();
            let _ = job.pool.send(data);
            Frame {
                sink: job.sink,
                seq: job.seq,
                raw_len,
                payload,
                records: job.records,
                recycle: None,
            }
        };
        if frames.send(frame).is_err() {
            break;
        }
    }
}

impl Drop for Pipeline {
    fn drop(&mut self) {
        self.jobs = None;
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
        if let Some(w) = self.writer.take() {
            let _ = w.join();
        }
    }
}
