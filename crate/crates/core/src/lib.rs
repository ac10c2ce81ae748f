//! Shared foundation: counter access, the inter-node clock relation math and
//! the frame format used on every control connection.

pub mod clock;
pub mod relation;
pub mod relation_file;
pub mod wire;

pub use clock::{
    calibrate_frequency, monotonic_raw_ns, read_cycles, sample_clock_pair, self_test_counter,
    ClockError, ClockSample, CounterFrequency, CounterSource, CycleCount, SelfTestReport,
};
pub use relation::{
    best_estimate, compute_ratio, convert_local_to_remote, convert_remote_to_local,
    duration_with_error, local_duration, ntp_error_bound, ret_duration, BestEstimate,
    ClockRelation, Direction, MeasuredDuration, MinRttMeasurement, NodeId, NtpStatus,
    RelationError, RttTriple,
};
