//! Offline analysis of sink logs: tuple traces, latency statistics and
//! error-bound comparison.

pub mod bounds;
pub mod logs;
pub mod report;
pub mod stats;
pub mod trace;

pub use bounds::{compare_error_bounds, read_ntp_csv, BoundsInput, ErrorBoundReport, NtpRow, NtpSeries};
pub use logs::{load_logs, ChannelLog, LogError, LogSet, TimeBase};
pub use report::{run, AnalyzeConfig, AnalyzeError, ChannelPair, NtpSource, Summary};
pub use stats::{histogram, quantile, stats, LatencyStats, NoData};
pub use trace::{merge_logs, trace_duration, Locality, Timebase, TraceDuration, TraceError, TupleTrace};
