//! The batch analysis behind the `cp-analyze` command.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cp_core::clock::CounterFrequency;
use cp_core::relation::NodeId;
use cp_core::relation_file::{load_dir, RelationFileError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{compare_error_bounds, read_ntp_csv, BoundsInput, ErrorBoundReport, NtpCsvError, NtpSeries};
use crate::logs::{load_logs, LogError};
use crate::stats::{histogram, stats, LatencyStats};
use crate::trace::{merge_logs, trace_duration, Locality, Timebase};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelPair {
    pub from: String,
    pub to: String,
}

impl ChannelPair {
    pub fn label(&self) -> String {
        format!("{}->{}", self.from, self.to)
    }
}

impl FromStr for ChannelPair {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            Some((from, to)) if !from.is_empty() && !to.is_empty() => Ok(Self {
                from: from.to_string(),
                to: to.to_string(),
            }),
            _ => Err(format!("expected <from>:<to>, got {s:?}")),
        }
    }
}

/// An NTP status file, optionally tied to a node: `[<node>=]<path>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NtpSource {
    pub node: Option<NodeId>,
    pub path: PathBuf,
}

impl FromStr for NtpSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if let Some((node, path)) = s.split_once('=') {
            if let Ok(node) = node.parse::<NodeId>() {
                return Ok(Self {
                    node: Some(node),
                    path: path.into(),
                });
            }
        }
        Ok(Self {
            node: None,
            path: s.into(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct AnalyzeConfig {
    pub logs: PathBuf,
    pub relations: Option<PathBuf>,
    pub pairs: Vec<ChannelPair>,
    pub ntp: Vec<NtpSource>,
    pub out: PathBuf,
    /// Counter rate for nodes that have neither relations nor tsc_pair logs.
    pub default_hz: Option<f64>,
    pub histogram_bins: usize,
}

#[derive(Debug, Error)]
pub enum AnalyzeError {
    #[error(transparent)]
    Logs(#[from] LogError),
    #[error(transparent)]
    Relations(#[from] RelationFileError),
    #[error(transparent)]
    Ntp(#[from] NtpCsvError),
    #[error("{path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad default frequency: {0}")]
    Frequency(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub traces: usize,
    pub pairs: Vec<String>,
    pub groups: Vec<LatencyStats>,
    /// Per pair, per error kind: number of traces.
    pub errors: BTreeMap<String, BTreeMap<String, u64>>,
    pub error_bounds: ErrorBoundReport,
    pub notices: Vec<String>,
}

struct DurationRow {
    tuple_id: u64,
    pair: String,
    locality: Locality,
    multi_node: bool,
    from_node: NodeId,
    to_node: NodeId,
    best_ns: f64,
    uncertainty_ns: f64,
}

fn create(path: &Path) -> Result<io::BufWriter<fs::File>, AnalyzeError> {
    fs::File::create(path)
        .map(io::BufWriter::new)
        .map_err(|source| AnalyzeError::Write {
            path: path.to_path_buf(),
            source,
        })
}

fn write_all(path: &Path, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), AnalyzeError> {
    let mut w = create(path)?;
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|source| AnalyzeError::Write {
            path: path.to_path_buf(),
            source,
        })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn file_safe(s: &str) -> String {
    s.replace("->", "_to_")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn run(cfg: &AnalyzeConfig) -> Result<Summary, AnalyzeError> {
    let logs = load_logs(&cfg.logs)?;
    let mut notices = logs.notices.clone();
    let relations = match &cfg.relations {
        Some(dir) => load_dir(dir)?,
        None => BTreeMap::new(),
    };
    let default = cfg
        .default_hz
        .map(|hz| CounterFrequency::new(hz).map_err(|e| AnalyzeError::Frequency(e.to_string())))
        .transpose()?;
    let tb = Timebase::new(relations, &logs, default);
    for node in logs.nodes() {
        if tb.frequency(node).is_none() {
            notices.push(format!("node {node}: no counter frequency, its counter durations are skipped"));
        }
    }
    let traces = merge_logs(&logs);

    let mut rows = Vec::new();
    let mut failures: Vec<(u64, String, &'static str, String)> = Vec::new();
    let mut errors: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for pair in &cfg.pairs {
        let label = pair.label();
        let counts = errors.entry(label.clone()).or_default();
        for trace in traces.values() {
            match trace_duration(trace, &pair.from, &pair.to, &tb) {
                Ok(d) => rows.push(DurationRow {
                    tuple_id: trace.tuple_id,
                    pair: label.clone(),
                    locality: d.locality,
                    multi_node: d.multi_node,
                    from_node: d.from_node,
                    to_node: d.to_node,
                    best_ns: d.duration.best_ns,
                    uncertainty_ns: d.duration.uncertainty_ns,
                }),
                Err(e) => {
                    *counts.entry(e.kind().to_string()).or_default() += 1;
                    failures.push((trace.tuple_id, label.clone(), e.kind(), e.to_string()));
                }
            }
        }
    }

    let mut grouped: BTreeMap<(String, Locality), Vec<f64>> = BTreeMap::new();
    for r in &rows {
        grouped
            .entry((r.pair.clone(), r.locality))
            .or_default()
            .push(r.best_ns);
    }
    let groups: Vec<LatencyStats> = grouped
        .iter()
        .filter_map(|((g, loc), v)| stats(g, *loc, v).ok())
        .collect();

    let ntp = cfg
        .ntp
        .iter()
        .map(|src| {
            Ok(NtpSeries {
                node: src.node,
                rows: read_ntp_csv(&src.path)?,
            })
        })
        .collect::<Result<Vec<_>, NtpCsvError>>()?;
    let ret = logs.ret_records();
    let bounds = compare_error_bounds(&BoundsInput {
        relations: &tb.relations,
        frequencies: &tb.frequencies,
        ret: &ret,
        ntp: &ntp,
    });

    fs::create_dir_all(&cfg.out).map_err(|source| AnalyzeError::Write {
        path: cfg.out.clone(),
        source,
    })?;
    let out = |name: &str| cfg.out.join(name);

    write_all(&out("durations.csv"), |w| {
        writeln!(w, "tuple_id,pair,locality,multi_node,from_node,to_node,best_ns,uncertainty_ns")?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.tuple_id, r.pair, r.locality, r.multi_node, r.from_node, r.to_node, r.best_ns, r.uncertainty_ns
            )?;
        }
        Ok(())
    })?;
    write_all(&out("trace_errors.csv"), |w| {
        writeln!(w, "tuple_id,pair,kind,detail")?;
        for (id, pair, kind, detail) in &failures {
            writeln!(w, "{id},{pair},{kind},\"{}\"", detail.replace('"', "'"))?;
        }
        Ok(())
    })?;
    write_all(&out("stats.csv"), |w| {
        writeln!(
            w,
            "group,locality,count,min_ns,q1_ns,median_ns,q3_ns,max_ns,mean_ns,whisker_low_ns,whisker_high_ns,outliers"
        )?;
        for s in &groups {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                s.group, s.locality, s.count, s.min, s.q1, s.median, s.q3, s.max, s.mean, s.whisker_low, s.whisker_high,
                s.outliers.len()
            )?;
        }
        Ok(())
    })?;
    write_all(&out("stats.dat"), |w| {
        writeln!(w, "# index group locality count min q1 median q3 max mean whisker_low whisker_high")?;
        for (i, s) in groups.iter().enumerate() {
            writeln!(
                w,
                "{i} {} {} {} {} {} {} {} {} {} {} {}",
                s.group, s.locality, s.count, s.min, s.q1, s.median, s.q3, s.max, s.mean, s.whisker_low, s.whisker_high
            )?;
        }
        Ok(())
    })?;
    for ((g, loc), v) in &grouped {
        let name = format!("hist_{}_{loc}.dat", file_safe(g));
        write_all(&out(&name), |w| {
            writeln!(w, "# bin_center_ns count")?;
            for (c, n) in histogram(v, cfg.histogram_bins) {
                writeln!(w, "{c} {n}")?;
            }
            Ok(())
        })?;
    }
    let cols = bounds.columns;
    if cols.cp || cols.ret || cols.ntp {
        write_all(&out("error_bounds.csv"), |w| {
            let mut header = vec!["node", "second"];
            header.extend([(cols.cp, "cp_ns"), (cols.ret, "ret_ns"), (cols.ntp, "ntp_ns")]
                .into_iter()
                .filter_map(|(on, n)| on.then_some(n)));
            writeln!(w, "{}", header.join(","))?;
            for r in &bounds.rows {
                let mut fields = vec![r.node.clone(), r.second.to_string()];
                for (on, v) in [(cols.cp, r.cp_ns), (cols.ret, r.ret_ns), (cols.ntp, r.ntp_ns)] {
                    if on {
                        fields.push(opt(v));
                    }
                }
                writeln!(w, "{}", fields.join(","))?;
            }
            Ok(())
        })?;
    }
    if !ntp.is_empty() {
        write_all(&out("ntp_bounds.csv"), |w| {
            writeln!(w, "node,epoch_s,theta_s,root_dispersion_s,root_delay_s,bound_s,excludes_zero")?;
            for series in &ntp {
                let node = series.node.map_or_else(|| "*".to_string(), |n| n.to_string());
                for r in &series.rows {
                    writeln!(
                        w,
                        "{node},{},{},{},{},{},{}",
                        r.epoch_s,
                        r.theta_s,
                        r.root_dispersion_s,
                        r.root_delay_s,
                        r.bound_s(),
                        r.excludes_zero()
                    )?;
                }
            }
            Ok(())
        })?;
    }
    notices.extend(bounds.notices.iter().cloned());

    let summary = Summary {
        traces: traces.len(),
        pairs: cfg.pairs.iter().map(ChannelPair::label).collect(),
        groups,
        errors,
        error_bounds: ErrorBoundReport {
            rows: Vec::new(),
            ..bounds
        },
        notices,
    };
    write_all(&out("summary.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &summary)?;
        writeln!(w)
    })?;
    Ok(summary)
}
