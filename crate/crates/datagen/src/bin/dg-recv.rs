use std::time::Duration;

use anyhow::{Context, Result};
use clap::Parser;
use cp_datagen::{JofConfig, JofServer, DEFAULT_BUCKET};

#[derive(Parser)]
#[command(name = "dg-recv", about = "Receive, deserialize and sink tuples")]
struct Cli {
    /// Data address.
    #[arg(long)]
    bind: String,
    /// Control address for run counts.
    #[arg(long, default_value = "127.0.0.1:0")]
    control_bind: String,
    /// Receive threads, one per sender connection.
    #[arg(long, default_value_t = 8)]
    threads: usize,
    /// Largest tuple count accepted per bucket.
    #[arg(long, default_value_t = DEFAULT_BUCKET)]
    bucket: usize,
    /// Queue capacity per receive thread, in buckets.
    #[arg(long, default_value_t = 64)]
    queue_cap: usize,
    /// Extra hashing passes over each tuple while deserializing.
    #[arg(long, default_value_t = 0)]
    cost_rounds: u32,
    /// Time the sink gets to catch up after a run ends, in milliseconds.
    #[arg(long, default_value_t = 1000)]
    grace_ms: u64,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = JofConfig {
        bucket: cli.bucket,
        queue_cap: cli.queue_cap,
        cost_rounds: cli.cost_rounds,
        max_connections: cli.threads,
        sink_delay: None,
        grace: Duration::from_millis(cli.grace_ms),
    };
    let server = JofServer::bind(cli.bind.as_str(), cli.control_bind.as_str(), cfg)
        .with_context(|| format!("bind {} / {}", cli.bind, cli.control_bind))?;
    let handle = server.spawn()?;
    println!("data={} control={}", handle.data_addr(), handle.control_addr());
    handle.join();
    Ok(())
}
