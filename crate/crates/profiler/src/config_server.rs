//! Online handler configuration.
//!
//! Line protocol: `GET <channel>\n` → `<KIND> [<param> ...]\n`. Unmapped
//! channels get `NULL`, malformed requests `ERR <reason>`.
//!
//! Mapping files hold one `<channel> <KIND> [<param> ...]` per line; `#`
//! starts a comment.

use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use thiserror::Error;

use crate::handler::HandlerSpec;

#[derive(Debug, Error)]
#[error("line {line}: {reason}")]
pub struct MappingError {
    pub line: usize,
    pub reason: String,
}

pub fn parse_mapping(text: &str) -> Result<BTreeMap<String, HandlerSpec>, MappingError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason: String| MappingError { line: i + 1, reason };
        let (name, rest) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| err("missing handler".into()))?;
        let spec: HandlerSpec = rest.trim().parse().map_err(|e| err(format!("{e}")))?;
        if out.insert(name.to_string(), spec).is_some() {
            return Err(err(format!("channel {name} mapped twice")));
        }
    }
    Ok(out)
}

/// Reply line for one request line, without the newline.
pub fn answer(mapping: &BTreeMap<String, HandlerSpec>, request: &str) -> String {
    let mut words = request.split_whitespace();
    match (words.next(), words.next(), words.next()) {
        (Some("GET"), Some(name), None) => mapping
            .get(name)
            .copied()
            .unwrap_or(HandlerSpec::Null)
            .to_string(),
        _ => format!("ERR malformed request {:?}", request.trim_end()),
    }
}

pub struct ConfigServer {
    listener: TcpListener,
    mapping: Arc<BTreeMap<String, HandlerSpec>>,
    stop: Arc<AtomicBool>,
}

impl ConfigServer {
    pub fn bind(
        addr: impl ToSocketAddrs,
        mapping: BTreeMap<String, HandlerSpec>,
    ) -> io::Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            mapping: Arc::new(mapping),
            stop: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn serve(self) -> io::Result<()> {
        for conn in self.listener.incoming() {
            if self.stop.load(Ordering::Acquire) {
                break;
            }
            match conn {
                Ok(stream) => {
                    let mapping = Arc::clone(&self.mapping);
                    thread::spawn(move || {
                        if let Err(e) = serve_connection(stream, &mapping) {
                            log::debug!("config connection: {e}");
                        }
                    });
                }
                Err(e) => log::warn!("accept: {e}"),
            }
        }
        Ok(())
    }

    pub fn spawn(self) -> io::Result<ConfigServerHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::clone(&self.stop);
        let thread = thread::Builder::new()
            .name("cp-config".into())
            .spawn(move || self.serve())?;
        Ok(ConfigServerHandle {
            addr,
            stop,
            thread: Some(thread),
        })
    }
}

fn serve_connection(stream: TcpStream, mapping: &BTreeMap<String, HandlerSpec>) -> io::Result<()> {
    let mut out = stream.try_clone()?;
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let line = line?;
        let reply = answer(mapping, &line);
        out.write_all(format!("{reply}\n").as_bytes())?;
    }
    Ok(())
}

pub struct ConfigServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<io::Result<()>>>,
}

impl ConfigServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for ConfigServerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

#[derive(Debug, Error)]
pub enum ResolveError {
    #[error("{addr}: {source}")]
    Io {
        addr: String,
        #[source]
        source: io::Error,
    },
    #[error("server replied {0:?}")]
    Reply(String),
}

/// Asks the server at `addr` which handler `channel` should use.
pub fn resolve_handler(
    addr: &str,
    channel: &str,
    timeout: Duration,
) -> Result<HandlerSpec, ResolveError> {
    let io_err = |source| ResolveError::Io {
        addr: addr.to_string(),
        source,
    };
    let sock = addr
        .to_socket_addrs()
        .map_err(io_err)?
        .next()
        .ok_or_else(|| io_err(io::ErrorKind::AddrNotAvailable.into()))?;
    let mut stream = TcpStream::connect_timeout(&sock, timeout).map_err(io_err)?;
    stream.set_read_timeout(Some(timeout)).map_err(io_err)?;
    stream
        .write_all(format!("GET {channel}\n").as_bytes())
        .map_err(io_err)?;
    let mut line = String::new();
    BufReader::new(stream).read_line(&mut line).map_err(io_err)?;
    let line = line.trim_end();
    line.parse()
        .map_err(|_| ResolveError::Reply(line.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mapping_file_parses() {
        let m = parse_mapping("# comment\na ID\nb XOY 2 1024  # trailing\n\nc BUFFERED_ID zstd\n").unwrap();
        assert_eq!(m["a"], HandlerSpec::Id);
        assert_eq!(m["b"], HandlerSpec::XoY { x: 2, y: 1024 });
        assert_eq!(m["c"], HandlerSpec::BufferedId(crate::codec::Codec::Zstd));
        assert!(parse_mapping("a\n").is_err());
        assert!(parse_mapping("a XOY 3 1\n").is_err());
        assert_eq!(parse_mapping("a ID\na NULL\n").unwrap_err().line, 2);
    }

    #[test]
    fn answers() {
        let m = parse_mapping("a ID\nb XOY 2 1024\n").unwrap();
        assert_eq!(answer(&m, "GET a"), "ID");
        assert_eq!(answer(&m, "GET b"), "XOY 2 1024");
        assert_eq!(answer(&m, "GET unknown"), "NULL");
        assert!(answer(&m, "PUT a").starts_with("ERR"));
        assert!(answer(&m, "GET").starts_with("ERR"));
        assert!(answer(&m, "GET a b").starts_with("ERR"));
    }
}
