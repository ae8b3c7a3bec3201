//! Client side of the external score protocol.
//!
//! Every message is one frame:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SCR1"
//! 4       1     kind: 0 = request, 1 = response, 2 = error
//! 5       8     m, f64 little-endian
//! 13      4     count, u32 little-endian
//! 17      4     dims, u32 little-endian
//! 21      ...   payload
//! ```
//!
//! Request and response payloads are `count` little-endian `f32` values,
//! `count / dims` points of dimension `dims`. Error payloads are `count`
//! bytes of UTF-8 text and carry `dims = 1`.
//!
//! One request is in flight per connection, so [`BridgeClient`] reports itself
//! as non-concurrent. Large batches are split into frames of at most
//! [`MAX_FRAME_VALUES`] values.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;
use std::time::Duration;

use ndarray::{Array2, ArrayView2};

use super::{check_shape, ScoreProvider};
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"SCR1";
pub const HEADER_BYTES: usize = 21;
pub const MAX_FRAME_VALUES: usize = 1 << 20;
/// Refuse to allocate for absurd headers.
const MAX_PAYLOAD_BYTES: usize = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum FrameKind {
    Request = 0,
    Response = 1,
    Error = 2,
}

impl TryFrom<u8> for FrameKind {
    type Error = Error;

    fn try_from(b: u8) -> Result<Self> {
        match b {
            0 => Ok(FrameKind::Request),
            1 => Ok(FrameKind::Response),
            2 => Ok(FrameKind::Error),
            other => Err(Error::Bridge(format!("unknown frame kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Request { m: f64, dims: u32, values: Vec<f32> },
    Response { m: f64, dims: u32, values: Vec<f32> },
    Error { m: f64, message: String },
}

impl Frame {
    pub fn kind(&self) -> FrameKind {
        match self {
            Frame::Request { .. } => FrameKind::Request,
            Frame::Response { .. } => FrameKind::Response,
            Frame::Error { .. } => FrameKind::Error,
        }
    }

    pub fn encode<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let (m, count, dims) = match self {
            Frame::Request { m, dims, values } | Frame::Response { m, dims, values } => {
                (*m, values.len(), *dims)
            }
            Frame::Error { m, message } => (*m, message.len(), 1),
        };
        let count = u32::try_from(count).map_err(|_| {
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "frame payload too large")
        })?;
        let mut header = [0u8; HEADER_BYTES];
        header[..4].copy_from_slice(&MAGIC);
        header[4] = self.kind() as u8;
        header[5..13].copy_from_slice(&m.to_le_bytes());
        header[13..17].copy_from_slice(&count.to_le_bytes());
        header[17..21].copy_from_slice(&dims.to_le_bytes());
        w.write_all(&header)?;
        match self {
            Frame::Request { values, .. } | Frame::Response { values, .. } => {
                let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
                w.write_all(&bytes)
            }
            Frame::Error { message, .. } => w.write_all(message.as_bytes()),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn decode<R: Read>(r: &mut R) -> Result<Frame> {
        let mut header = [0u8; HEADER_BYTES];
        r.read_exact(&mut header)
            .map_err(|e| Error::Bridge(format!("reading frame header: {e}")))?;
        if header[..4] != MAGIC {
            return Err(Error::Bridge(format!("bad magic {:?}", &header[..4])));
        }
        let kind = FrameKind::try_from(header[4])?;
        let m = f64::from_le_bytes(header[5..13].try_into().unwrap());
        let count = u32::from_le_bytes(header[13..17].try_into().unwrap()) as usize;
        let dims = u32::from_le_bytes(header[17..21].try_into().unwrap());
        let payload_len = match kind {
            FrameKind::Error => count,
            _ => count * 4,
        };
        if payload_len > MAX_PAYLOAD_BYTES {
            return Err(Error::Bridge(format!("frame payload of {payload_len} bytes refused")));
        }
        if kind != FrameKind::Error && count > 0 && (dims == 0 || count % dims as usize != 0) {
            return Err(Error::Bridge(format!(
                "count {count} is not a multiple of dims {dims}"
            )));
        }
        let mut payload = vec![0u8; payload_len];
        r.read_exact(&mut payload)
            .map_err(|e| Error::Bridge(format!("reading frame payload: {e}")))?;
        Ok(match kind {
            FrameKind::Error => Frame::Error {
                m,
                message: String::from_utf8(payload)
                    .map_err(|_| Error::Bridge("error frame is not UTF-8".into()))?,
            },
            _ => {
                let values = payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                if kind == FrameKind::Request {
                    Frame::Request { m, dims, values }
                } else {
                    Frame::Response { m, dims, values }
                }
            }
        })
    }
}

struct Connection {
    reader: Box<dyn Read + Send>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
}

impl Connection {
    fn round_trip(&mut self, request: &Frame) -> Result<Frame> {
        request
            .encode(&mut self.writer)
            .and_then(|_| self.writer.flush())
            .map_err(|e| Error::Bridge(format!("sending request: {e}")))?;
        Frame::decode(&mut self.reader)
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// [`ScoreProvider`] backed by a remote responder.
pub struct BridgeClient {
    conn: Mutex<Connection>,
    dim: usize,
}

impl std::fmt::Debug for BridgeClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeClient").field("dim", &self.dim).finish()
    }
}

impl BridgeClient {
    /// Wraps an established byte stream and checks the peer answers a
    /// zero-point request.
    pub fn from_transport(
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
        dim: usize,
    ) -> Result<Self> {
        Self::with_connection(
            Connection {
                reader: Box::new(reader),
                writer: Box::new(writer),
                child: None,
            },
            dim,
        )
    }

    pub fn connect_tcp(addr: &str, dim: usize, timeout: Option<Duration>) -> Result<Self> {
        let resolved = addr
            .to_socket_addrs()
            .map_err(|e| Error::Bridge(format!("resolving {addr}: {e}")))?
            .next()
            .ok_or_else(|| Error::Bridge(format!("{addr} resolves to no address")))?;
        let stream = match timeout {
            Some(t) => TcpStream::connect_timeout(&resolved, t),
            None => TcpStream::connect(resolved),
        }
        .map_err(|e| Error::Bridge(format!("connecting to {addr}: {e}")))?;
        stream
            .set_read_timeout(timeout)
            .and_then(|_| stream.set_write_timeout(timeout))
            .and_then(|_| stream.set_nodelay(true))
            .map_err(|e| Error::Bridge(format!("configuring {addr}: {e}")))?;
        let reader = stream
            .try_clone()
            .map_err(|e| Error::Bridge(format!("cloning socket: {e}")))?;
        Self::from_transport(BufReader::new(reader), BufWriter::new(stream), dim)
    }

    /// Spawns `command` (whitespace separated) and talks over its stdin/stdout.
    pub fn spawn_stdio(command: &str, dim: usize) -> Result<Self> {
        let mut parts = command.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| Error::Bridge("empty bridge command".into()))?;
        let mut child = Command::new(program)
            .args(parts)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Bridge(format!("spawning {program:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Self::with_connection(
            Connection {
                reader: Box::new(BufReader::new(stdout)),
                writer: Box::new(BufWriter::new(stdin)),
                child: Some(child),
            },
            dim,
        )
    }

    fn with_connection(conn: Connection, dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_FRAME_VALUES {
            return Err(Error::domain(format!("bridge dimension {dim} is not supported")));
        }
        let client = Self {
            conn: Mutex::new(conn),
            dim,
        };
        let pong = client.request_chunk(&[], 1.0)?;
        if !pong.is_empty() {
            return Err(Error::Bridge("handshake: zero-point request got points back".into()));
        }
        Ok(client)
    }

    fn request_chunk(&self, values: &[f32], m: f64) -> Result<Vec<f32>> {
        let request = Frame::Request {
            m,
            dims: self.dim as u32,
            values: values.to_vec(),
        };
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        match conn.round_trip(&request)? {
            Frame::Response { values: out, dims, .. } => {
                if out.len() != values.len() || (!out.is_empty() && dims as usize != self.dim) {
                    return Err(Error::Bridge(format!(
                        "response has {} values of dims {dims}, expected {} of dims {}",
                        out.len(),
                        values.len(),
                        self.dim
                    )));
                }
                Ok(out)
            }
            Frame::Error { message, .. } => Err(Error::Bridge(format!("server error: {message}"))),
            Frame::Request { .. } => Err(Error::Bridge("peer sent a request frame".into())),
        }
    }

    /// Points carried by one frame.
    pub fn points_per_frame(&self) -> usize {
        (MAX_FRAME_VALUES / self.dim).max(1)
    }
}

impl ScoreProvider for BridgeClient {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, points: ArrayView2<'_, f64>, m: f64) -> Result<Array2<f64>> {
        check_shape(points, self.dim)?;
        let mut out = Vec::with_capacity(points.len());
        let rows: Vec<f32> = points.iter().map(|&x| x as f32).collect();
        for chunk in rows.chunks(self.points_per_frame() * self.dim) {
            out.extend(self.request_chunk(chunk, m)?.into_iter().map(f64::from));
        }
        if let Some(pos) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::Integration {
                step: 0,
                row: pos / self.dim,
                reason: "bridge returned a non-finite score".into(),
            });
        }
        Ok(Array2::from_shape_vec(points.raw_dim(), out).expect("shape checked"))
    }

    fn concurrent(&self) -> bool {
        false
    }
}
