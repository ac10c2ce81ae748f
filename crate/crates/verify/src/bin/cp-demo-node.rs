//! One node of a two-process pipeline: a source that emits tuples, a sink
//! that receives them through a delaying transport, each with a MinRTT
//! responder and its own counter. A third role logs until SIGTERM.
//!
//! Status lines on stdout: `READY ...` once serving, `DONE ...` when the
//! work is finished. The process then stays up, answering probes, until
//! stdin closes.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use cp_core::clock::{self, monotonic_raw_ns, CounterSource};
use cp_core::relation::NodeId;
use cp_minrtt::{Slave, SlaveHandle};
use cp_profiler::{Codec, DataFormat, HandlerSpec, Profiler, ProfilerConfig};

const TUPLE_LEN: usize = 16;

#[derive(Parser)]
#[command(name = "cp-demo-node")]
struct Cli {
    #[arg(long, default_value_t = 0)]
    node: u32,
    /// Sinks go to <logs>/<node>/.
    #[arg(long)]
    logs: PathBuf,
    /// Counter source, e.g. virtual:2600000000:12345.
    #[arg(long)]
    counter: Option<CounterSource>,
    #[command(subcommand)]
    role: Role,
}

#[derive(Subcommand)]
enum Role {
    /// Waits for GO on stdin, then sends `count` tuples at `rate` per second.
    Source {
        #[arg(long)]
        peer: String,
        #[arg(long)]
        count: u64,
        #[arg(long)]
        rate: f64,
    },
    /// Accepts one source and logs each tuple `delay_us` after it was sent.
    Sink {
        #[arg(long, default_value_t = 1000)]
        delay_us: u64,
    },
    /// Logs ids 0.. on channel `term` until terminated. Prints READY after
    /// `ready_after` records.
    Terminate {
        #[arg(long)]
        handler: HandlerSpec,
        #[arg(long)]
        count: u64,
        #[arg(long)]
        ready_after: u64,
        #[arg(long, default_value_t = 3)]
        workers: usize,
    },
}

fn wait_until(due: Instant) {
    loop {
        let now = Instant::now();
        if now >= due {
            return;
        }
        let left = due - now;
        if left > Duration::from_micros(200) {
            std::thread::sleep(left - Duration::from_micros(100));
        } else {
            std::thread::yield_now();
        }
    }
}

fn wait_for_line(want: &str) -> Result<()> {
    for line in io::stdin().lock().lines() {
        if line?.trim() == want {
            return Ok(());
        }
    }
    bail!("stdin closed before {want}")
}

fn hold_until_stdin_closes(slave: SlaveHandle) {
    let mut sink = Vec::new();
    let _ = io::stdin().lock().read_to_end(&mut sink);
    slave.shutdown();
}

fn source(p: &Profiler, node: NodeId, peer: &str, count: u64, rate: f64) -> Result<()> {
    let slave = Slave::bind("127.0.0.1:0", node)?.spawn()?;
    let ch = p.open_channel("source", DataFormat::TscPair, HandlerSpec::BufferedId(Codec::Zstd))?;
    println!("READY slave={}", slave.addr());
    wait_for_line("GO")?;
    let mut conn = TcpStream::connect(peer).with_context(|| format!("connect {peer}"))?;
    conn.set_nodelay(true)?;
    let period = 1e9 / rate;
    let start = Instant::now();
    let mut buf = [0u8; TUPLE_LEN];
    for id in 0..count {
        wait_until(start + Duration::from_nanos((id as f64 * period) as u64));
        ch.log_ts(id)?;
        buf[..8].copy_from_slice(&id.to_le_bytes());
        buf[8..].copy_from_slice(&monotonic_raw_ns().to_le_bytes());
        conn.write_all(&buf)?;
    }
    drop(conn);
    let r = ch.close_checked()?;
    println!("DONE sent={count} written={}", r.written);
    hold_until_stdin_closes(slave);
    Ok(())
}

fn sink(p: &Profiler, node: NodeId, delay_us: u64) -> Result<()> {
    let slave = Slave::bind("127.0.0.1:0", node)?.spawn()?;
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let ch = p.open_channel("sink", DataFormat::TscPair, HandlerSpec::BufferedId(Codec::Zstd))?;
    println!("READY slave={} data={}", slave.addr(), listener.local_addr()?);
    let (conn, _) = listener.accept()?;
    let mut r = BufReader::new(conn);
    let mut buf = [0u8; TUPLE_LEN];
    let delay = Duration::from_micros(delay_us);
    let mut received = 0u64;
    loop {
        match r.read_exact(&mut buf) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let id = u64::from_le_bytes(buf[..8].try_into()?);
        let sent = i64::from_le_bytes(buf[8..].try_into()?);
        let age = Duration::from_nanos(monotonic_raw_ns().saturating_sub(sent).max(0) as u64);
        if let Some(left) = delay.checked_sub(age) {
            wait_until(Instant::now() + left);
        }
        ch.log_ts(id)?;
        received += 1;
    }
    let report = ch.close_checked()?;
    println!("DONE received={received} written={}", report.written);
    hold_until_stdin_closes(slave);
    Ok(())
}

fn terminate(p: &std::sync::Arc<Profiler>, handler: HandlerSpec, count: u64, ready_after: u64) -> Result<()> {
    p.install_termination_handler()?;
    let ch = p.open_channel("term", DataFormat::RawTicks, handler)?;
    for id in 0..count {
        if ch.log_ts(id).is_err() {
            break;
        }
        if id + 1 == ready_after {
            println!("READY");
        }
    }
    println!("FINISHED");
    // The termination handler ends the process.
    loop {
        std::thread::sleep(Duration::from_secs(1));
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(src) = cli.counter {
        clock::init(src)?;
    }
    let dir = cli.logs.join(cli.node.to_string());
    std::fs::create_dir_all(&dir)?;
    let workers = match cli.role {
        Role::Terminate { workers, .. } => workers,
        _ => ProfilerConfig::default().workers,
    };
    let p = Profiler::new(ProfilerConfig {
        out_dir: dir,
        workers,
        ..ProfilerConfig::default()
    });
    let node = NodeId(cli.node);
    match cli.role {
        Role::Source { peer, count, rate } => source(&p, node, &peer, count, rate),
        Role::Sink { delay_us } => sink(&p, node, delay_us),
        Role::Terminate {
            handler,
            count,
            ready_after,
            ..
        } => terminate(&p, handler, count, ready_after),
    }
}
