use std::io;
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::Parser;
use cp_datagen::{
    make_payload, measure_send_overhead, run_emission, BucketTransport, ControlClient,
    EmissionPlan, RunOutcome, DEFAULT_BUCKET, DEFAULT_MAX_AGE,
};

#[derive(Parser)]
#[command(name = "dg-send", about = "Send tuples at a constant rate")]
struct Cli {
    /// Tuples per second, summed over all threads.
    #[arg(long)]
    rate: f64,
    /// Run length in seconds.
    #[arg(long)]
    duration: f64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Send window before each deadline, in nanoseconds.
    #[arg(long, default_value_t = 1000)]
    budget_ns: u64,
    /// Receiver data address.
    #[arg(long)]
    peer: String,
    /// Receiver control address; when given, the receiver's count is fetched
    /// and drops are reported.
    #[arg(long)]
    control: Option<String>,
    #[arg(long, default_value_t = 64)]
    tuple_size: usize,
    #[arg(long, default_value_t = DEFAULT_BUCKET)]
    bucket: usize,
    /// Longest time a partly filled bucket is held, in microseconds.
    #[arg(long, default_value_t = DEFAULT_MAX_AGE.as_micros() as u64)]
    max_age_us: u64,
}

fn resolve(addr: &str) -> Result<SocketAddr> {
    addr.to_socket_addrs()
        .with_context(|| format!("resolve {addr}"))?
        .next()
        .with_context(|| format!("no address for {addr}"))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if !(cli.duration >= 0.0) {
        bail!("duration must be non-negative");
    }
    let duration = Duration::from_secs_f64(cli.duration);
    let payload = make_payload(cli.tuple_size);
    let max_age = Duration::from_micros(cli.max_age_us);
    let overhead = measure_send_overhead(
        &mut BucketTransport::new(io::sink(), cli.bucket, max_age),
        &payload,
        0,
    )?;
    log::info!("send overhead {overhead:.1} ns");
    let plan = EmissionPlan::new(cli.rate, duration, cli.budget_ns, cli.threads, payload, overhead)?;
    let peer = resolve(&cli.peer)?;
    let mut control = match &cli.control {
        Some(c) => {
            let mut client = ControlClient::connect(resolve(c)?)?;
            client.begin_run()?;
            Some(client)
        }
        None => None,
    };
    let summary = run_emission(&plan, |_| {
        let s = TcpStream::connect(peer)?;
        s.set_nodelay(true)?;
        Ok(BucketTransport::new(s, cli.bucket, max_age))
    })
    .with_context(|| format!("sending to {peer}"))?;
    log::info!(
        "sent {} in {:.3} s, {} deadline misses",
        summary.sent,
        summary.elapsed.as_secs_f64(),
        summary.deadline_misses
    );
    let report = match control.as_mut() {
        Some(c) => {
            let counts = c.finish_run(summary.sent)?;
            serde_json::to_value(RunOutcome::new(
                plan.rate,
                summary.sent,
                counts.ingested,
                summary.achieved_rate,
                summary.deadline_misses,
            ))?
        }
        None => serde_json::json!({
            "rate": plan.rate,
            "sent": summary.sent,
            "achieved_rate": summary.achieved_rate,
            "deadline_misses": summary.deadline_misses,
        }),
    };
    println!("{report}");
    Ok(())
}
