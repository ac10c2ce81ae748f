use std::net::{SocketAddr, ToSocketAddrs};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::Parser;
use cp_datagen::{
    evaluate_max_throughput, make_payload, FakeSut, SearchConfig, TcpSut, DEFAULT_BUCKET,
};

#[derive(Parser)]
#[command(name = "dg-search", about = "Find the highest rate a receiver sustains without drops")]
struct Cli {
    /// First rate tried, tuples per second.
    #[arg(long)]
    start: f64,
    #[arg(long, default_value_t = 1.5)]
    factor: f64,
    #[arg(long, default_value_t = 0.02)]
    refine: f64,
    #[arg(long, default_value_t = 20)]
    max_runs: u32,
    /// Length of each run in seconds.
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    /// Search against a simulated receiver of this capacity instead.
    #[arg(long)]
    fake_capacity: Option<f64>,
    #[arg(long)]
    peer: Option<String>,
    #[arg(long)]
    control: Option<String>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 1000)]
    budget_ns: u64,
    #[arg(long, default_value_t = 64)]
    tuple_size: usize,
    #[arg(long, default_value_t = DEFAULT_BUCKET)]
    bucket: usize,
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
    if !(cli.duration > 0.0) {
        bail!("duration must be positive");
    }
    let cfg = SearchConfig {
        start: cli.start,
        factor: cli.factor,
        refine: cli.refine,
        max_runs: cli.max_runs,
        duration: Duration::from_secs_f64(cli.duration),
    };
    let result = match (cli.fake_capacity, &cli.peer, &cli.control) {
        (Some(c), _, _) => evaluate_max_throughput(&mut FakeSut::new(c), &cfg)?,
        (None, Some(peer), Some(control)) => {
            let mut sut = TcpSut::connect(
                resolve(peer)?,
                resolve(control)?,
                cli.threads,
                cli.budget_ns,
                make_payload(cli.tuple_size),
                cli.bucket,
            )?;
            evaluate_max_throughput(&mut sut, &cfg)?
        }
        _ => bail!("give --fake-capacity, or both --peer and --control"),
    };
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}
