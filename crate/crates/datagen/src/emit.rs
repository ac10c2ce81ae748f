//! The budgeted emission loop and the transports it drives.

use std::hint::black_box;
use std::io::{self, Write};
use std::time::{Duration, Instant};

use crate::bucket::{push_tuple, seal, DEFAULT_BUCKET, DEFAULT_MAX_AGE};
use crate::plan::{EmissionPlan, ThreadPlan};

pub const MIN_OVERHEAD_SENDS: u64 = 100_000;

/// Windows further away than this are waited out with a sleep instead of a
/// spin, leaving `SLEEP_MARGIN` of spinning before the window opens.
const SLEEP_THRESHOLD_NS: u64 = 2_000_000;
const SLEEP_MARGIN_NS: u64 = 1_000_000;

pub trait Transport {
    /// Emits one tuple. `now_ns` is the loop's clock reading, relative to the
    /// run start.
    fn send(&mut self, seq: u64, payload: &[u8], now_ns: u64) -> io::Result<()>;

    /// Called while the loop waits for the next window.
    fn idle(&mut self, _now_ns: u64) -> io::Result<()> {
        Ok(())
    }

    /// Pushes out anything still buffered.
    fn finish(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl<T: Transport + ?Sized> Transport for &mut T {
    fn send(&mut self, seq: u64, payload: &[u8], now_ns: u64) -> io::Result<()> {
        (**self).send(seq, payload, now_ns)
    }
    fn idle(&mut self, now_ns: u64) -> io::Result<()> {
        (**self).idle(now_ns)
    }
    fn finish(&mut self) -> io::Result<()> {
        (**self).finish()
    }
}

/// Counts sends and touches the payload; nothing leaves the process.
#[derive(Debug, Default)]
pub struct NullTransport {
    pub sent: u64,
    pub bytes: u64,
}

impl Transport for NullTransport {
    fn send(&mut self, seq: u64, payload: &[u8], _now_ns: u64) -> io::Result<()> {
        black_box((seq, payload));
        self.sent += 1;
        self.bytes += payload.len() as u64;
        Ok(())
    }
}

/// Packs tuples into bucket frames and writes a frame when it is full or
/// has been open for `max_age`.
pub struct BucketTransport<W: Write> {
    out: W,
    buf: Vec<u8>,
    count: u32,
    bucket: u32,
    max_age_ns: u64,
    opened_ns: u64,
    pub frames: u64,
}

impl<W: Write> BucketTransport<W> {
    pub fn new(out: W, bucket: usize, max_age: Duration) -> Self {
        let bucket = bucket.clamp(1, u32::MAX as usize) as u32;
        Self {
            out,
            buf: Vec::with_capacity(8 + bucket as usize * 72),
            count: 0,
            bucket,
            max_age_ns: max_age.as_nanos() as u64,
            opened_ns: 0,
            frames: 0,
        }
    }

    pub fn with_defaults(out: W) -> Self {
        Self::new(out, DEFAULT_BUCKET, DEFAULT_MAX_AGE)
    }

    pub fn get_ref(&self) -> &W {
        &self.out
    }

    pub fn into_inner(mut self) -> io::Result<W> {
        self.finish()?;
        Ok(self.out)
    }

    fn flush_bucket(&mut self) -> io::Result<()> {
        if self.count == 0 {
            return Ok(());
        }
        seal(&mut self.buf, self.count);
        self.out.write_all(&self.buf)?;
        self.buf.clear();
        self.count = 0;
        self.frames += 1;
        Ok(())
    }
}

impl<W: Write> Transport for BucketTransport<W> {
    fn send(&mut self, seq: u64, payload: &[u8], now_ns: u64) -> io::Result<()> {
        if self.count == 0 {
            self.buf.extend_from_slice(&[0; 8]);
            self.opened_ns = now_ns;
        }
        push_tuple(&mut self.buf, seq, payload);
        self.count += 1;
        if self.count == self.bucket || now_ns.saturating_sub(self.opened_ns) >= self.max_age_ns {
            self.flush_bucket()?;
        }
        Ok(())
    }

    fn idle(&mut self, now_ns: u64) -> io::Result<()> {
        if self.count > 0 && now_ns.saturating_sub(self.opened_ns) >= self.max_age_ns {
            self.flush_bucket()?;
        }
        Ok(())
    }

    fn finish(&mut self) -> io::Result<()> {
        self.flush_bucket()?;
        self.out.flush()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmissionReport {
    pub thread: usize,
    pub sent: u64,
    pub deadline_misses: u64,
    pub max_lateness_ns: u64,
    /// From the run start to the return of the last send.
    pub elapsed: Duration,
}

fn since(start: Instant) -> u64 {
    Instant::now().saturating_duration_since(start).as_nanos() as u64
}

/// Sends `tp.count` tuples. Tuple `i` goes out once the clock enters
/// `[deadline_i − budget, deadline_i]`; a tuple whose window has already
/// passed is sent immediately and counted as a deadline miss. When `capture`
/// is given, the clock reading of every send is pushed to it.
pub fn emission_loop<T: Transport>(
    tp: &ThreadPlan,
    start: Instant,
    transport: &mut T,
    payload: &[u8],
    mut capture: Option<&mut Vec<u64>>,
) -> io::Result<EmissionReport> {
    let mut report = EmissionReport {
        thread: tp.thread,
        ..Default::default()
    };
    for i in 0..tp.count {
        let due = tp.deadline_ns(i);
        let open = due.saturating_sub(tp.budget_ns);
        let mut now = since(start);
        if now < open {
            transport.idle(now)?;
            while now < open {
                if open - now > SLEEP_THRESHOLD_NS {
                    std::thread::sleep(Duration::from_nanos(open - now - SLEEP_MARGIN_NS));
                    transport.idle(since(start))?;
                } else {
                    std::hint::spin_loop();
                }
                now = since(start);
            }
        }
        if now > due {
            report.deadline_misses += 1;
            report.max_lateness_ns = report.max_lateness_ns.max(now - due);
        }
        transport.send(i, payload, now)?;
        if let Some(c) = capture.as_deref_mut() {
            c.push(now);
        }
        report.sent += 1;
    }
    transport.finish()?;
    report.elapsed = Duration::from_nanos(since(start));
    Ok(report)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmissionSummary {
    pub threads: Vec<EmissionReport>,
    pub sent: u64,
    pub deadline_misses: u64,
    pub elapsed: Duration,
    pub achieved_rate: f64,
}

/// Runs every thread's share of `plan` against its own transport from
/// `connect`. All threads share one start instant.
pub fn run_emission<T, F>(plan: &EmissionPlan, connect: F) -> io::Result<EmissionSummary>
where
    T: Transport + Send,
    F: Fn(usize) -> io::Result<T> + Sync,
{
    let parts = plan.partition();
    let mut transports = Vec::with_capacity(parts.len());
    for p in &parts {
        transports.push(connect(p.thread)?);
    }
    let start = Instant::now() + Duration::from_millis(5);
    let reports = std::thread::scope(|s| {
        let handles: Vec<_> = parts
            .iter()
            .zip(transports)
            .map(|(p, mut t)| {
                let payload = &plan.payload;
                s.spawn(move || emission_loop(p, start, &mut t, payload, None))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("emission thread panicked"))
            .collect::<io::Result<Vec<_>>>()
    })?;
    let sent = reports.iter().map(|r| r.sent).sum();
    let elapsed = reports.iter().map(|r| r.elapsed).max().unwrap_or_default();
    Ok(EmissionSummary {
        sent,
        deadline_misses: reports.iter().map(|r| r.deadline_misses).sum(),
        achieved_rate: if elapsed.is_zero() {
            0.0
        } else {
            sent as f64 / elapsed.as_secs_f64()
        },
        elapsed,
        threads: reports,
    })
}

/// Mean cost of one `send` in nanoseconds, over at least
/// [`MIN_OVERHEAD_SENDS`] back-to-back sends.
pub fn measure_send_overhead<T: Transport>(
    transport: &mut T,
    payload: &[u8],
    sends: u64,
) -> io::Result<f64> {
    let sends = sends.max(MIN_OVERHEAD_SENDS);
    let start = Instant::now();
    for i in 0..sends {
        let now = since(start);
        transport.send(i, payload, now)?;
    }
    transport.finish()?;
    Ok(start.elapsed().as_nanos() as f64 / sends as f64)
}
