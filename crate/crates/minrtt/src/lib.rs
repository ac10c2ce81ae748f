//! MinRTT measurement between nodes: probe selection, a simulated cluster
//! with known ground truth, TCP daemons and relation-building sessions.

pub mod net;
pub mod probe;
pub mod session;
pub mod sim;

pub use net::{NetCluster, NodeInfo, Slave, SlaveHandle, TcpProbeLink};
pub use probe::{run_minrtt, MeasureError, ProbeError, ProbeLink};
pub use session::{master_measure, MeasurementSession, PairProber, SessionError, SessionSpec};
pub use sim::{DelayModel, SimClock, SimCluster, SimLink};
