use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use cp_core::clock::{self, CounterSource};
use cp_core::relation::NodeId;
use cp_minrtt::{master_measure, NetCluster, SessionSpec, Slave};

#[derive(Parser)]
#[command(name = "cp-minrtt", about = "MinRTT measurement daemons")]
struct Cli {
    /// Counter source: tsc, monotonic, auto or virtual:<hz>[:<offset>].
    #[arg(long, global = true)]
    counter_source: Option<CounterSource>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Answer probes on this node.
    Slave {
        #[arg(long)]
        bind: String,
        #[arg(long)]
        node_id: NodeId,
    },
    /// Measure every ordered pair of the given slaves and write relation files.
    Master {
        /// Comma-separated slave addresses.
        #[arg(long, value_delimiter = ',', required = true)]
        nodes: Vec<String>,
        #[arg(long, default_value_t = 100)]
        iterations: u32,
        #[arg(long, default_value_t = 10.0)]
        spacing_secs: f64,
        #[arg(long)]
        ref_node: Option<NodeId>,
        #[arg(long, default_value_t = 1000)]
        probe_timeout_ms: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(src) = cli.counter_source {
        clock::init(src).context("counter source")?;
    }
    match cli.cmd {
        Cmd::Slave { bind, node_id } => {
            let slave = Slave::bind(bind.as_str(), node_id)
                .with_context(|| format!("bind {bind}"))?;
            log::info!(
                "node {node_id} listening on {} ({})",
                slave.local_addr()?,
                clock::source()
            );
            slave.serve()?;
        }
        Cmd::Master {
            nodes,
            iterations,
            spacing_secs,
            ref_node,
            probe_timeout_ms,
            out,
        } => {
            if !(spacing_secs >= 0.0) {
                bail!("--spacing-secs must be non-negative");
            }
            let mut cluster =
                NetCluster::register(&nodes, Duration::from_millis(probe_timeout_ms))
                    .context("registering slaves")?;
            let spec = SessionSpec {
                iterations,
                spacing: Duration::from_secs_f64(spacing_secs),
                ref_node,
            };
            let session = master_measure(&mut cluster, &spec)?;
            let paths = session.write(&out)?;
            for p in &paths {
                println!("{}", p.display());
            }
            for (pair, err) in &session.errors {
                eprintln!("{pair}: {err}");
            }
            if !session.is_complete() {
                bail!(
                    "{} of {} relations failed",
                    session.errors.len(),
                    session.node_ids.len() * session.node_ids.len().saturating_sub(1)
                );
            }
        }
    }
    Ok(())
}
