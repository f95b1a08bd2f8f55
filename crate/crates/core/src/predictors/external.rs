//! Out-of-process predictors reached over the `OCDI-PRED v1` protocol, plus
//! the reference servers used to test that path.

use std::io::{BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::kspace::MultiCoilKSpace;
use crate::operators::{Degradation, Stage};
use crate::protocol::{self, Frame, Incoming, HANDSHAKE};
use crate::trajectory::{DegradationPredictor, StepInfo, TrajectoryState};

use super::OracleTruth;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Where the predictor process lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EndpointDescriptor {
    /// Shell command whose stdin/stdout carry the protocol.
    Subprocess(String),
    /// `host:port` of a listening stream socket.
    Tcp(String),
}

impl EndpointDescriptor {
    /// Parses `subprocess:<command>` or `tcp:<host>:<port>`.
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(cmd) = s.strip_prefix("subprocess:") {
            if cmd.trim().is_empty() {
                return Err(Error::Config("empty subprocess command".into()));
            }
            Ok(Self::Subprocess(cmd.to_string()))
        } else if let Some(addr) = s.strip_prefix("tcp:") {
            if !addr.rsplit_once(':').is_some_and(|(h, p)| !h.is_empty() && p.parse::<u16>().is_ok()) {
                return Err(Error::Config(format!("bad tcp endpoint {addr:?}, expected host:port")));
            }
            Ok(Self::Tcp(addr.to_string()))
        } else {
            Err(Error::Config(format!(
                "unknown endpoint {s:?}, expected subprocess:<command> or tcp:<host>:<port>"
            )))
        }
    }
}

impl std::fmt::Display for EndpointDescriptor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Subprocess(c) => write!(f, "subprocess:{c}"),
            Self::Tcp(a) => write!(f, "tcp:{a}"),
        }
    }
}

enum ReaderMsg {
    Hello(String),
    Reply(Incoming),
    Failed(Error),
    Closed,
}

struct Connection {
    writer: Box<dyn Write + Send>,
    replies: Receiver<ReaderMsg>,
    child: Option<Child>,
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn spawn_reader(stream: Box<dyn Read + Send>) -> Receiver<ReaderMsg> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut reader = BufReader::new(stream);
        match protocol::read_line(&mut reader) {
            Ok(Some(line)) => {
                if tx.send(ReaderMsg::Hello(line)).is_err() {
                    return;
                }
            }
            Ok(None) => {
                let _ = tx.send(ReaderMsg::Closed);
                return;
            }
            Err(e) => {
                let _ = tx.send(ReaderMsg::Failed(e));
                return;
            }
        }
        loop {
            let msg = match protocol::read_incoming(&mut reader) {
                Ok(Some(inc)) => ReaderMsg::Reply(inc),
                Ok(None) => ReaderMsg::Closed,
                Err(e) => ReaderMsg::Failed(e),
            };
            let stop = !matches!(msg, ReaderMsg::Reply(_));
            if tx.send(msg).is_err() || stop {
                return;
            }
        }
    });
    rx
}

fn recv(rx: &Receiver<ReaderMsg>, timeout: Duration) -> Result<ReaderMsg> {
    rx.recv_timeout(timeout).map_err(|e| match e {
        RecvTimeoutError::Timeout => Error::Transport(format!("no reply within {} s", timeout.as_secs_f64())),
        RecvTimeoutError::Disconnected => Error::Transport("predictor connection closed".into()),
    })
}

impl Connection {
    fn open(descriptor: &EndpointDescriptor, timeout: Duration) -> Result<Self> {
        let (writer, reader, child): (Box<dyn Write + Send>, Box<dyn Read + Send>, Option<Child>) = match descriptor {
            EndpointDescriptor::Subprocess(cmd) => {
                let mut child = Command::new("sh")
                    .arg("-c")
                    .arg(cmd)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| Error::Transport(format!("cannot spawn {cmd:?}: {e}")))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                (Box::new(stdin), Box::new(stdout), Some(child))
            }
            EndpointDescriptor::Tcp(addr) => {
                let stream = TcpStream::connect(addr)
                    .map_err(|e| Error::Transport(format!("cannot connect to {addr}: {e}")))?;
                let _ = stream.set_nodelay(true);
                let read_half = stream
                    .try_clone()
                    .map_err(|e| Error::Transport(e.to_string()))?;
                (Box::new(stream), Box::new(read_half), None)
            }
        };
        let replies = spawn_reader(reader);
        let conn = Self { writer, replies, child };
        match recv(&conn.replies, timeout)? {
            ReaderMsg::Hello(line) if line == HANDSHAKE => Ok(conn),
            ReaderMsg::Hello(line) => Err(Error::Protocol(format!(
                "handshake mismatch: expected {HANDSHAKE:?}, got {line:?}"
            ))),
            ReaderMsg::Failed(e) => Err(e),
            _ => Err(Error::Transport("predictor closed before handshake".into())),
        }
    }

    fn request(&mut self, frame: &Frame, timeout: Duration) -> Result<MultiCoilKSpace> {
        let mut buf = Vec::new();
        protocol::write_frame(&mut buf, frame)?;
        self.writer
            .write_all(&buf)
            .and_then(|_| self.writer.flush())
            .map_err(|e| Error::Transport(e.to_string()))?;
        match recv(&self.replies, timeout)? {
            ReaderMsg::Reply(Incoming::Frame(reply)) => {
                if reply.field.dims() != frame.field.dims() {
                    return Err(Error::Protocol(format!(
                        "reply dims {:?} differ from request dims {:?}",
                        reply.field.dims(),
                        frame.field.dims()
                    )));
                }
                if reply.stage != frame.stage {
                    return Err(Error::Protocol("reply stage differs from request".into()));
                }
                Ok(reply.field)
            }
            ReaderMsg::Reply(Incoming::Error(msg)) => Err(Error::Protocol(format!("predictor error: {msg}"))),
            ReaderMsg::Failed(e) => Err(e),
            ReaderMsg::Closed => Err(Error::Transport("predictor connection closed".into())),
            ReaderMsg::Hello(_) => Err(Error::Protocol("unexpected second handshake".into())),
        }
    }
}

/// A connected (lazily, on first request) external predictor. Requests are
/// serialized over a single connection.
pub struct ExternalEndpoint {
    descriptor: EndpointDescriptor,
    timeout: Duration,
    conn: Mutex<Option<Connection>>,
}

impl std::fmt::Debug for ExternalEndpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalEndpoint")
            .field("descriptor", &self.descriptor)
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl ExternalEndpoint {
    pub fn new(descriptor: EndpointDescriptor) -> Self {
        Self::with_timeout(descriptor, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(descriptor: EndpointDescriptor, timeout: Duration) -> Self {
        Self {
            descriptor,
            timeout,
            conn: Mutex::new(None),
        }
    }

    pub fn descriptor(&self) -> &EndpointDescriptor {
        &self.descriptor
    }

    /// Opens the connection now instead of on the first request.
    pub fn connect(&self) -> Result<()> {
        let mut guard = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            *guard = Some(Connection::open(&self.descriptor, self.timeout)?);
        }
        Ok(())
    }

    fn request(&self, frame: &Frame) -> Result<MultiCoilKSpace> {
        let mut guard = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            *guard = Some(Connection::open(&self.descriptor, self.timeout)?);
        }
        let result = guard.as_mut().expect("connected").request(frame, self.timeout);
        if matches!(result, Err(Error::Transport(_))) {
            // the stream may hold a late reply; never reuse it
            *guard = None;
        }
        result
    }
}

/// Sends `(x_t, t/T, Ω)` to the endpoint and returns its degradation.
pub fn external_predict(state: &TrajectoryState, step: StepInfo, endpoint: &ExternalEndpoint) -> Result<Degradation> {
    let frame = Frame {
        t_norm: step.t_norm,
        stage: state.stage,
        field: state.x.clone(),
    };
    Ok(Degradation::new(endpoint.request(&frame)?, state.stage))
}

pub struct ExternalPredictor {
    endpoint: Arc<ExternalEndpoint>,
}

impl ExternalPredictor {
    pub fn new(endpoint: Arc<ExternalEndpoint>) -> Self {
        Self { endpoint }
    }
}

impl DegradationPredictor for ExternalPredictor {
    fn predict(&mut self, state: &TrajectoryState, step: StepInfo) -> Result<Degradation> {
        external_predict(state, step, &self.endpoint)
    }
}

/// Behaviour of the built-in reference predictor servers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceMode {
    /// Always answers with zeros.
    Zero,
    /// Returns the request payload.
    Loopback,
    /// Exact degradation from ground truth.
    Oracle,
}

impl ReferenceMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Self::Zero),
            "loopback" | "echo" => Ok(Self::Loopback),
            "oracle" => Ok(Self::Oracle),
            other => Err(Error::Config(format!("unknown reference mode {other:?}"))),
        }
    }
}

/// Request handler of a reference server.
///
/// The oracle server is not told which slice a request belongs to; it
/// assumes the linear schedule (`α_t = t/T`) and picks the slice whose exact
/// trajectory point `k* + α_t d` is closest to the received state.
pub fn reference_handler(
    mode: ReferenceMode,
    truth: Option<OracleTruth>,
) -> Result<impl FnMut(&Frame) -> Result<MultiCoilKSpace>> {
    let cache = match mode {
        ReferenceMode::Oracle => {
            let truth = truth.ok_or_else(|| Error::Config("oracle reference server needs ground truth".into()))?;
            let mut entries = Vec::new();
            for stage in [Stage::M, Stage::U] {
                for s in 0..truth.stack.b() {
                    let Ok(d) = truth.degradation(stage, s) else { continue };
                    let target = truth.stack.slice(s)?.clone();
                    let target = match (&truth.mask, stage) {
                        (Some(m), Stage::M) => crate::operators::apply_mask(&target, m)?,
                        _ => target,
                    };
                    entries.push((stage, target, d.field));
                }
            }
            entries
        }
        _ => Vec::new(),
    };
    Ok(move |frame: &Frame| -> Result<MultiCoilKSpace> {
        match mode {
            ReferenceMode::Zero => {
                let (c, r, n) = frame.field.dims();
                Ok(MultiCoilKSpace::zeros(c, r, n))
            }
            ReferenceMode::Loopback => Ok(frame.field.clone()),
            ReferenceMode::Oracle => {
                let mut best: Option<(f64, &MultiCoilKSpace)> = None;
                for (stage, target, d) in &cache {
                    if *stage != frame.stage || d.dims() != frame.field.dims() {
                        continue;
                    }
                    let point = target.add_scaled(d, frame.t_norm)?;
                    let dist = frame.field.sub(&point)?.norm();
                    if best.is_none_or(|(b, _)| dist < b) {
                        best = Some((dist, d));
                    }
                }
                best.map(|(_, d)| d.clone())
                    .ok_or_else(|| Error::Protocol("no ground-truth slice matches the request".into()))
            }
        }
    })
}
