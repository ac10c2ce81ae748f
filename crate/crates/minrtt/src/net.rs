//! TCP responder and orchestrator.
//!
//! The master keeps one control connection per slave. A MEASURE_CMD tells the
//! probing slave whom to probe; that slave opens (and keeps) a probe
//! connection to the responder and answers with a RESULT.

use std::collections::{BTreeMap, HashMap};
use std::io;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use cp_core::clock::{self, read_cycles, sample_clock_pair, CycleCount};
use cp_core::relation::{Direction, MinRttMeasurement, NodeId, RttTriple};
use cp_core::wire::{read_frame, write_frame, Frame, MsgType, WireError};
use serde::{Deserialize, Serialize};

use crate::probe::{run_minrtt, MeasureError, ProbeError, ProbeLink};
use crate::session::PairProber;

pub const DEFAULT_PROBE_TIMEOUT: Duration = Duration::from_secs(1);

/// Answer to REGISTER.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub node_id: NodeId,
    pub counter_source: String,
    pub nominal_hz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureCmd {
    pub peer_addr: String,
    pub peer_node: NodeId,
    pub iterations: u32,
    pub timeout_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MeasureReply {
    Measured(MinRttMeasurement),
    Failed(String),
}

fn to_io(e: WireError) -> io::Error {
    match e {
        WireError::Io(e) => e,
        other => io::Error::new(io::ErrorKind::InvalidData, other),
    }
}

/// Probe connection from this process to a responder.
pub struct TcpProbeLink {
    addr: SocketAddr,
    stream: TcpStream,
    timeout: Duration,
    request: Vec<u8>,
}

impl TcpProbeLink {
    pub fn connect(addr: impl ToSocketAddrs, timeout: Duration) -> io::Result<Self> {
        let addr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "no address"))?;
        let stream = Self::open(addr, timeout)?;
        Ok(Self {
            addr,
            stream,
            timeout,
            request: Vec::with_capacity(16),
        })
    }

    fn open(addr: SocketAddr, timeout: Duration) -> io::Result<TcpStream> {
        let s = TcpStream::connect_timeout(&addr, timeout)?;
        s.set_nodelay(true)?;
        Ok(s)
    }

    /// A timed-out read may have consumed part of a frame; start over on a
    /// fresh connection so stale responses cannot be mistaken for new ones.
    fn reconnect(&mut self) {
        match Self::open(self.addr, self.timeout) {
            Ok(s) => self.stream = s,
            Err(e) => log::warn!("reconnect to {}: {e}", self.addr),
        }
    }
}

impl ProbeLink for TcpProbeLink {
    fn probe(&mut self, seq: u32) -> Result<RttTriple, ProbeError> {
        self.request.clear();
        Frame::new(MsgType::ProbeReq, seq, Vec::new()).encode_into(&mut self.request);
        let deadline = Instant::now() + self.timeout;

        let start = sample_clock_pair();
        io::Write::write_all(&mut self.stream, &self.request)?;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                self.reconnect();
                return Err(ProbeError::Timeout { seq });
            }
            self.stream.set_read_timeout(Some(remaining))?;
            match read_frame(&mut self.stream) {
                Ok(f) if f.msg_type == MsgType::ProbeResp && f.seq == seq => {
                    let end = sample_clock_pair();
                    let c = f
                        .payload_u64()
                        .map_err(|e| ProbeError::Protocol(e.to_string()))?;
                    return Ok(RttTriple::from_samples(start, CycleCount(c), end));
                }
                Ok(f) => log::debug!("discarding {:?} seq {} while waiting for {seq}", f.msg_type, f.seq),
                Err(e) if e.is_timeout() => {
                    self.reconnect();
                    return Err(ProbeError::Timeout { seq });
                }
                Err(WireError::Io(e)) => return Err(ProbeError::Io(e)),
                Err(e) => return Err(ProbeError::Protocol(e.to_string())),
            }
        }
    }
}

/// Responder daemon.
pub struct Slave {
    listener: TcpListener,
    info: NodeInfo,
    probe_lock: Arc<Mutex<()>>,
    stop: Arc<AtomicBool>,
}

impl Slave {
    pub fn bind(addr: impl ToSocketAddrs, node_id: NodeId) -> io::Result<Self> {
        let source = clock::source();
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            info: NodeInfo {
                node_id,
                counter_source: source.to_string(),
                nominal_hz: source.nominal_hz(),
            },
            probe_lock: Arc::new(Mutex::new(())),
            stop: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections until stopped, one thread per connection.
    pub fn serve(self) -> io::Result<()> {
        for conn in self.listener.incoming() {
            if self.stop.load(Ordering::Acquire) {
                break;
            }
            let stream = match conn {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept: {e}");
                    continue;
                }
            };
            let info = self.info.clone();
            let lock = Arc::clone(&self.probe_lock);
            thread::spawn(move || {
                let peer = stream.peer_addr().ok();
                if let Err(e) = handle_connection(stream, &info, &lock) {
                    log::warn!("connection from {peer:?} dropped: {e}");
                }
            });
        }
        Ok(())
    }

    pub fn spawn(self) -> io::Result<SlaveHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::clone(&self.stop);
        let thread = thread::Builder::new()
            .name(format!("slave-{}", self.info.node_id))
            .spawn(move || self.serve())?;
        Ok(SlaveHandle {
            addr,
            stop,
            thread: Some(thread),
        })
    }
}

pub struct SlaveHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<io::Result<()>>>,
}

impl SlaveHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting new connections. Open connections end when their
    /// peers hang up.
    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::Release);
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for SlaveHandle {
    fn drop(&mut self) {
        self.stop_accepting();
    }
}

fn handle_connection(mut stream: TcpStream, info: &NodeInfo, lock: &Mutex<()>) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let mut links: HashMap<String, TcpProbeLink> = HashMap::new();
    let mut out = Vec::with_capacity(32);
    loop {
        let frame = match read_frame(&mut stream) {
            Ok(f) => f,
            Err(e) if e.is_eof() => return Ok(()),
            Err(e) => {
                let _ = stream.shutdown(Shutdown::Both);
                return Err(to_io(e));
            }
        };
        match frame.msg_type {
            MsgType::ProbeReq => {
                let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
                let c = read_cycles();
                out.clear();
                Frame::with_u64(MsgType::ProbeResp, frame.seq, c.0).encode_into(&mut out);
                io::Write::write_all(&mut stream, &out)?;
            }
            MsgType::Register => {
                let body = serde_json::to_vec(info).expect("node info serializes");
                write_frame(&mut stream, &Frame::new(MsgType::Register, frame.seq, body))
                    .map_err(to_io)?;
            }
            MsgType::MeasureCmd => {
                let reply = match serde_json::from_slice::<MeasureCmd>(&frame.payload) {
                    Ok(cmd) => measure(&mut links, info.node_id, &cmd),
                    Err(e) => MeasureReply::Failed(format!("bad MEASURE_CMD: {e}")),
                };
                let body = serde_json::to_vec(&reply).expect("reply serializes");
                write_frame(&mut stream, &Frame::new(MsgType::Result, frame.seq, body))
                    .map_err(to_io)?;
            }
            other => {
                let _ = stream.shutdown(Shutdown::Both);
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("unexpected {other:?}"),
                ));
            }
        }
    }
}

fn measure(
    links: &mut HashMap<String, TcpProbeLink>,
    me: NodeId,
    cmd: &MeasureCmd,
) -> MeasureReply {
    let timeout = Duration::from_millis(cmd.timeout_ms.max(1));
    if !links.contains_key(&cmd.peer_addr) {
        match TcpProbeLink::connect(cmd.peer_addr.as_str(), timeout) {
            Ok(l) => {
                links.insert(cmd.peer_addr.clone(), l);
            }
            Err(e) => return MeasureReply::Failed(format!("connect {}: {e}", cmd.peer_addr)),
        }
    }
    let link = links.get_mut(&cmd.peer_addr).expect("inserted above");
    link.timeout = timeout;
    match run_minrtt(link, cmd.iterations, Direction::new(me, cmd.peer_node)) {
        Ok(m) => MeasureReply::Measured(m),
        Err(e) => MeasureReply::Failed(e.to_string()),
    }
}

struct Registered {
    addr: String,
    control: TcpStream,
    info: NodeInfo,
}

/// Master-side view of registered slaves.
pub struct NetCluster {
    nodes: BTreeMap<NodeId, Registered>,
    probe_timeout: Duration,
    seq: u32,
}

impl NetCluster {
    /// Connects to every slave and registers it under the id it reports.
    pub fn register(addrs: &[String], probe_timeout: Duration) -> io::Result<Self> {
        let mut nodes = BTreeMap::new();
        for (seq, addr) in addrs.iter().enumerate() {
            let mut control = TcpStream::connect(addr.as_str())?;
            control.set_nodelay(true)?;
            control.set_read_timeout(Some(Duration::from_secs(10)))?;
            write_frame(&mut control, &Frame::new(MsgType::Register, seq as u32, Vec::new()))
                .map_err(to_io)?;
            let reply = read_frame(&mut control).map_err(to_io)?;
            if reply.msg_type != MsgType::Register {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("{addr}: expected REGISTER reply, got {:?}", reply.msg_type),
                ));
            }
            let info: NodeInfo = serde_json::from_slice(&reply.payload)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            log::info!("registered node {} at {addr} ({})", info.node_id, info.counter_source);
            let id = info.node_id;
            let prev = nodes.insert(
                id,
                Registered {
                    addr: addr.clone(),
                    control,
                    info,
                },
            );
            if prev.is_some() {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("node id {id} registered twice"),
                ));
            }
        }
        Ok(Self {
            nodes,
            probe_timeout,
            seq: 0,
        })
    }

    pub fn info(&self, id: NodeId) -> Option<&NodeInfo> {
        self.nodes.get(&id).map(|n| &n.info)
    }
}

impl PairProber for NetCluster {
    fn node_ids(&self) -> Vec<NodeId> {
        self.nodes.keys().copied().collect()
    }

    fn minrtt(
        &mut self,
        direction: Direction,
        iterations: u32,
    ) -> Result<MinRttMeasurement, MeasureError> {
        let peer_addr = self
            .nodes
            .get(&direction.responder)
            .ok_or(MeasureError::UnknownNode(direction.responder))?
            .addr
            .clone();
        let cmd = MeasureCmd {
            peer_addr,
            peer_node: direction.responder,
            iterations,
            timeout_ms: self.probe_timeout.as_millis() as u64,
        };
        self.seq = self.seq.wrapping_add(1);
        let seq = self.seq;
        let probe = self
            .nodes
            .get_mut(&direction.probe)
            .ok_or(MeasureError::UnknownNode(direction.probe))?;
        let budget = self.probe_timeout * iterations + Duration::from_secs(10);
        let io_err = |e: WireError| MeasureError::Probe(ProbeError::Io(to_io(e)));
        probe
            .control
            .set_read_timeout(Some(budget))
            .map_err(|e| MeasureError::Probe(e.into()))?;
        let body = serde_json::to_vec(&cmd).expect("command serializes");
        write_frame(&mut probe.control, &Frame::new(MsgType::MeasureCmd, seq, body)).map_err(io_err)?;
        let reply = read_frame(&mut probe.control).map_err(io_err)?;
        if reply.msg_type != MsgType::Result || reply.seq != seq {
            return Err(MeasureError::Remote(format!(
                "expected RESULT {seq}, got {:?} {}",
                reply.msg_type, reply.seq
            )));
        }
        match serde_json::from_slice(&reply.payload) {
            Ok(MeasureReply::Measured(m)) => Ok(m),
            Ok(MeasureReply::Failed(e)) => Err(MeasureError::Remote(e)),
            Err(e) => Err(MeasureError::Remote(format!("bad RESULT payload: {e}"))),
        }
    }

    fn wait(&mut self, spacing: Duration) {
        thread::sleep(spacing);
    }
}
