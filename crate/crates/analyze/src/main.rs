use std::path::PathBuf;

use anyhow::Result;
use clap::Parser;
use cp_analyze::{run, AnalyzeConfig, ChannelPair, NtpSource};

#[derive(Parser)]
#[command(name = "cp-analyze", about = "Join sink logs into durations, statistics and error bounds")]
struct Cli {
    /// Log root laid out as <dir>/<node_id>/*.cplg.
    #[arg(long)]
    logs: PathBuf,
    /// Directory of relation files.
    #[arg(long)]
    relations: Option<PathBuf>,
    /// Channel pairs to measure, as from:to.
    #[arg(long, value_delimiter = ',')]
    pairs: Vec<ChannelPair>,
    /// NTP status CSV, optionally prefixed with a node id: [node=]path.
    #[arg(long)]
    ntp: Vec<NtpSource>,
    #[arg(long)]
    out: PathBuf,
    /// Counter rate in Hz for nodes without relations or tsc_pair records.
    #[arg(long)]
    default_hz: Option<f64>,
    #[arg(long, default_value_t = 50)]
    bins: usize,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let summary = run(&AnalyzeConfig {
        logs: cli.logs,
        relations: cli.relations,
        pairs: cli.pairs,
        ntp: cli.ntp,
        out: cli.out.clone(),
        default_hz: cli.default_hz,
        histogram_bins: cli.bins,
    })?;
    for n in &summary.notices {
        log::warn!("{n}");
    }
    for g in &summary.groups {
        println!(
            "{} {} n={} median={}ns q1={}ns q3={}ns",
            g.group, g.locality, g.count, g.median, g.q1, g.q3
        );
    }
    for (pair, kinds) in &summary.errors {
        for (kind, n) in kinds {
            println!("{pair} {kind}: {n} traces");
        }
    }
    println!("wrote {}", cli.out.display());
    Ok(())
}
