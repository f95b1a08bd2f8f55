//! `OCDI-PRED v1` predictor wire protocol.
//!
//! The server greets with `OCDI-PRED v1\n`. A request is one JSON header line
//! `{"t":<float>,"stage":"M"|"U","coils":<int>,"rows":<int>,"cols":<int>,"bytes":<int>}\n`
//! followed by `bytes` of little-endian fp32 `(re, im)` pairs in coil-major,
//! row-major order. Responses use the same framing; a failed request is
//! answered with `{"error":"<message>"}\n` and no payload.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kspace::{ComplexGrid, MultiCoilKSpace, C64};
use crate::operators::Stage;

pub const HANDSHAKE: &str = "OCDI-PRED v1";
const MAX_HEADER: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameHeader {
    t: f64,
    stage: String,
    coils: usize,
    rows: usize,
    cols: usize,
    bytes: usize,
}

#[derive(Debug, Serialize)]
struct ErrorHeader<'a> {
    error: &'a str,
}

/// One request or response.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub t_norm: f64,
    pub stage: Stage,
    pub field: MultiCoilKSpace,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Incoming {
    Frame(Frame),
    Error(String),
}

pub fn encode_payload(k: &MultiCoilKSpace) -> Vec<u8> {
    let mut out = Vec::with_capacity(k.coils() * k.rows() * k.cols() * 8);
    for g in k.grids() {
        for v in g.data() {
            out.extend_from_slice(&(v.re as f32).to_le_bytes());
            out.extend_from_slice(&(v.im as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_payload(bytes: &[u8], coils: usize, rows: usize, cols: usize) -> Result<MultiCoilKSpace> {
    let n = rows * cols;
    if coils == 0 || n == 0 || bytes.len() != coils * n * 8 {
        return Err(Error::Protocol(format!(
            "payload of {} bytes does not match {coils}x{rows}x{cols}",
            bytes.len()
        )));
    }
    let grids = bytes
        .chunks_exact(n * 8)
        .map(|chunk| {
            let data = chunk
                .chunks_exact(8)
                .map(|p| {
                    let re = f32::from_le_bytes([p[0], p[1], p[2], p[3]]);
                    let im = f32::from_le_bytes([p[4], p[5], p[6], p[7]]);
                    C64::new(re as f64, im as f64)
                })
                .collect();
            ComplexGrid::new(rows, cols, data)
        })
        .collect::<Result<Vec<_>>>()?;
    let k = MultiCoilKSpace::new(grids)?;
    if !k.is_finite() {
        return Err(Error::Protocol("payload contains non-finite values".into()));
    }
    Ok(k)
}

fn io_err(e: std::io::Error) -> Error {
    Error::Transport(e.to_string())
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> Result<()> {
    let payload = encode_payload(&frame.field);
    let header = FrameHeader {
        t: frame.t_norm,
        stage: frame.stage.as_char().to_string(),
        coils: frame.field.coils(),
        rows: frame.field.rows(),
        cols: frame.field.cols(),
        bytes: payload.len(),
    };
    let mut line = serde_json::to_vec(&header).expect("header serializes");
    line.push(b'\n');
    w.write_all(&line).map_err(io_err)?;
    w.write_all(&payload).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn write_error(w: &mut impl Write, message: &str) -> Result<()> {
    let mut line = serde_json::to_vec(&ErrorHeader { error: message }).expect("header serializes");
    line.push(b'\n');
    w.write_all(&line).map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Reads one `\n`-terminated line; `None` at a clean end of stream.
pub fn read_line(r: &mut impl BufRead) -> Result<Option<String>> {
    let mut buf = Vec::new();
    let n = r.take(MAX_HEADER as u64).read_until(b'\n', &mut buf).map_err(io_err)?;
    if n == 0 {
        return Ok(None);
    }
    if buf.last() != Some(&b'\n') {
        return Err(Error::Protocol("header line too long or truncated".into()));
    }
    buf.pop();
    String::from_utf8(buf)
        .map(Some)
        .map_err(|_| Error::Protocol("header line is not UTF-8".into()))
}

enum Header {
    Frame(FrameHeader),
    Error(String),
}

fn parse_header(line: &str) -> Result<Header> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| Error::Protocol(format!("malformed header: {e}")))?;
    if let Some(obj) = value.as_object() {
        if obj.len() == 1 {
            if let Some(msg) = obj.get("error").and_then(|m| m.as_str()) {
                return Ok(Header::Error(msg.to_string()));
            }
        }
    }
    let header: FrameHeader =
        serde_json::from_value(value).map_err(|e| Error::Protocol(format!("malformed header: {e}")))?;
    if header.bytes != header.coils * header.rows * header.cols * 8 {
        return Err(Error::Protocol(format!(
            "header declares {} bytes for {}x{}x{}",
            header.bytes, header.coils, header.rows, header.cols
        )));
    }
    if !header.t.is_finite() {
        return Err(Error::Protocol("non-finite step value".into()));
    }
    Ok(Header::Frame(header))
}

/// Reads one frame or error record; `None` at a clean end of stream.
pub fn read_incoming(r: &mut impl BufRead) -> Result<Option<Incoming>> {
    let Some(line) = read_line(r)? else {
        return Ok(None);
    };
    match parse_header(&line)? {
        Header::Error(msg) => Ok(Some(Incoming::Error(msg))),
        Header::Frame(h) => {
            let stage = Stage::parse(&h.stage).map_err(|_| Error::Protocol(format!("unknown stage {:?}", h.stage)))?;
            let mut payload = vec![0u8; h.bytes];
            r.read_exact(&mut payload).map_err(io_err)?;
            let field = decode_payload(&payload, h.coils, h.rows, h.cols)?;
            Ok(Some(Incoming::Frame(Frame { t_norm: h.t, stage, field })))
        }
    }
}

/// Serves requests until the client closes the stream. Handler failures and
/// malformed headers are answered with error records; the connection stays
/// open.
pub fn serve<R: BufRead, W: Write>(
    mut reader: R,
    mut writer: W,
    mut handler: impl FnMut(&Frame) -> Result<MultiCoilKSpace>,
) -> Result<()> {
    writer.write_all(format!("{HANDSHAKE}\n").as_bytes()).map_err(io_err)?;
    writer.flush().map_err(io_err)?;
    loop {
        let line = match read_line(&mut reader) {
            Ok(Some(line)) => line,
            Ok(None) => return Ok(()),
            Err(Error::Protocol(msg)) => {
                write_error(&mut writer, &msg)?;
                continue;
            }
            Err(e) => return Err(e),
        };
        let header = match parse_header(&line) {
            Ok(Header::Frame(h)) => h,
            Ok(Header::Error(msg)) => {
                write_error(&mut writer, &format!("unexpected error record from client: {msg}"))?;
                continue;
            }
            Err(e) => {
                write_error(&mut writer, &e.to_string())?;
                continue;
            }
        };
        let mut payload = vec![0u8; header.bytes];
        if reader.read_exact(&mut payload).is_err() {
            return Ok(());
        }
        let frame = Stage::parse(&header.stage)
            .map_err(|_| Error::Protocol(format!("unknown stage {:?}", header.stage)))
            .and_then(|stage| {
                Ok(Frame {
                    t_norm: header.t,
                    stage,
                    field: decode_payload(&payload, header.coils, header.rows, header.cols)?,
                })
            });
        let reply = frame.and_then(|frame| {
            let out = handler(&frame)?;
            if out.dims() != frame.field.dims() {
                return Err(Error::Protocol("handler returned a differently shaped field".into()));
            }
            Ok(Frame { field: out, ..frame })
        });
        match reply {
            Ok(reply) => write_frame(&mut writer, &reply)?,
            Err(e) => write_error(&mut writer, &e.to_string())?,
        }
    }
}
