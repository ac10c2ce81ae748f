use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;
use cp_profiler::{parse_mapping, ConfigServer};

/// Serve channel → handler mappings over the line protocol.
#[derive(Parser)]
#[command(name = "cp-config-server")]
struct Cli {
    #[arg(long)]
    bind: String,
    /// Lines of `<channel> <KIND> [<param> ...]`.
    #[arg(long)]
    map: PathBuf,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let text = std::fs::read_to_string(&cli.map).with_context(|| cli.map.display().to_string())?;
    let mapping = parse_mapping(&text).with_context(|| cli.map.display().to_string())?;
    let server = ConfigServer::bind(cli.bind.as_str(), mapping)
        .with_context(|| format!("bind {}", cli.bind))?;
    log::info!("serving {} on {}", cli.map.display(), server.local_addr()?);
    server.serve()?;
    Ok(())
}
