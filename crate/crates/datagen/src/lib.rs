//! Rate-controlled tuple generation, maximum sustainable throughput search
//! and a receiver that deserializes off the sink's critical path.

pub mod bucket;
pub mod control;
pub mod emit;
pub mod jof;
pub mod plan;
pub mod search;

pub use bucket::{make_payload, Bucket, Tuple, DEFAULT_BUCKET, DEFAULT_MAX_AGE};
pub use control::{ControlClient, RunCounts};
pub use emit::{
    emission_loop, measure_send_overhead, run_emission, BucketTransport, EmissionReport,
    EmissionSummary, NullTransport, Transport,
};
pub use jof::{jof_receive_loop, sink_drain, JofConfig, JofHandle, JofServer, ReceiverStats};
pub use plan::{EmissionPlan, PlanError, ThreadPlan};
pub use search::{
    evaluate_max_throughput, FakeSut, RunOutcome, SearchConfig, SearchError, SearchResult,
    StopReason, Sut, TcpSut,
};
