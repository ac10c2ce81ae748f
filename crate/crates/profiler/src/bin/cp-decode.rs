use std::io;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;
use cp_profiler::{decode_file, Records};

/// Dump a sink file as CSV.
#[derive(Parser)]
#[command(name = "cp-decode")]
struct Cli {
    sink: PathBuf,
    /// Print the header fields to stderr.
    #[arg(long)]
    header: bool,
}

fn main() -> Result<()> {
    env_logger::init();
    let cli = Cli::parse();
    let d = decode_file(&cli.sink).with_context(|| cli.sink.display().to_string())?;
    if cli.header {
        eprintln!(
            "name={} codec={} format={} handler={:?} frames={}",
            d.header.name, d.header.codec, d.header.data_format, d.header.handler_kind, d.frames
        );
    }
    if d.truncated {
        eprintln!("warning: file ends inside a frame; trailing bytes ignored");
    }
    let mut w = csv::Writer::from_writer(io::stdout().lock());
    match &d.records {
        Records::Log(v) => {
            w.write_record(["timestamp", "tuple_id"])?;
            for r in v {
                w.serialize((r.timestamp, r.tuple_id))?;
            }
        }
        Records::TscPair(v) => {
            w.write_record(["wall_ns", "ticks", "tuple_id"])?;
            for r in v {
                w.serialize((r.wall_ns, r.ticks, r.tuple_id))?;
            }
        }
        Records::Ret(v) => {
            w.write_record(["tuple_id", "t1", "t3"])?;
            for r in v {
                w.serialize((r.tuple_id, r.t1, r.t3))?;
            }
        }
        Records::Counts { periods, total } => {
            w.write_record(["period_index", "count"])?;
            for r in periods {
                w.serialize((r.period_index.to_string(), r.count))?;
            }
            if let Some(t) = total {
                w.serialize(("total", t))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
