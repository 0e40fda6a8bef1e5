//! Binary wire protocol between the adapter and an external model process.
//!
//! All integers are little-endian `u32`, all floats little-endian `f32`.
//!
//! ```text
//! request   "SXE1" | batch | H | W | C | batch·H·W·C pixels (row-major, interleaved)
//! response  "SXR1" | batch | d | batch·d features (need not be normalized)
//! error     "SXE!" | len   | len bytes of UTF-8 message
//! ```
//!
//! A connection carries any number of request/response exchanges; the server
//! stops at end of stream.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::types::{Image, ImageDims};

pub const REQUEST_MAGIC: [u8; 4] = *b"SXE1";
pub const RESPONSE_MAGIC: [u8; 4] = *b"SXR1";
pub const ERROR_MAGIC: [u8; 4] = *b"SXE!";

pub const MAX_BATCH: usize = 4096;
pub const MAX_SIDE: usize = 8192;
pub const MAX_FEATURE_DIM: usize = 1 << 16;
pub const MAX_MESSAGE: usize = 1 << 20;
const MAX_PAYLOAD_BYTES: usize = 1 << 31;

#[derive(Clone, Debug, PartialEq)]
pub enum Response {
    Features { dim: usize, rows: Vec<Vec<f32>> },
    Error(String),
}

fn read_u32<R: Read + ?Sized>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32s<R: Read + ?Sized>(r: &mut R, n: usize) -> io::Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn write_f32s<W: Write + ?Sized>(w: &mut W, values: &[f32]) -> io::Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    w.write_all(&bytes)
}

fn bounded(what: &str, value: u32, max: usize) -> Result<usize> {
    let v = value as usize;
    if v == 0 || v > max {
        return Err(Error::Protocol(format!("{what} = {v} outside [1, {max}]")));
    }
    Ok(v)
}

fn io_err(e: io::Error) -> Error {
    Error::Protocol(format!("truncated or unreadable message: {e}"))
}

/// Reads exactly four magic bytes, or `None` on a clean end of stream.
fn read_magic<R: Read + ?Sized>(r: &mut R) -> Result<Option<[u8; 4]>> {
    let mut magic = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut magic[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(Error::Protocol("stream ended inside a magic tag".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(io_err(e)),
        }
    }
    Ok(Some(magic))
}

pub fn write_request<W: Write + ?Sized>(w: &mut W, batch: &[Image]) -> io::Result<()> {
    let dims = batch
        .first()
        .map(Image::dims)
        .unwrap_or(ImageDims::new(0, 0, 0));
    w.write_all(&REQUEST_MAGIC)?;
    for v in [batch.len(), dims.height, dims.width, dims.channels] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    for im in batch {
        write_f32s(w, im.data())?;
    }
    w.flush()
}

/// Reads one request; `Ok(None)` means the peer closed the stream.
pub fn read_request<R: Read + ?Sized>(r: &mut R) -> Result<Option<Vec<Image>>> {
    let Some(magic) = read_magic(r)? else {
        return Ok(None);
    };
    if magic != REQUEST_MAGIC {
        return Err(Error::Protocol(format!(
            "expected request magic SXE1, got {magic:?}"
        )));
    }
    let batch = bounded("batch", read_u32(r).map_err(io_err)?, MAX_BATCH)?;
    let h = bounded("H", read_u32(r).map_err(io_err)?, MAX_SIDE)?;
    let w = bounded("W", read_u32(r).map_err(io_err)?, MAX_SIDE)?;
    let c = bounded("C", read_u32(r).map_err(io_err)?, 3)?;
    let per = h * w * c;
    if batch * per * 4 > MAX_PAYLOAD_BYTES {
        return Err(Error::Protocol(format!(
            "payload of {batch}x{h}x{w}x{c} floats is too large"
        )));
    }
    let mut images = Vec::with_capacity(batch);
    for _ in 0..batch {
        let data = read_f32s(r, per).map_err(io_err)?;
        images.push(Image::new(h, w, c, data)?);
    }
    Ok(Some(images))
}

pub fn write_features<W: Write + ?Sized>(w: &mut W, rows: &[Vec<f32>]) -> io::Result<()> {
    let dim = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != dim) {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "ragged feature rows",
        ));
    }
    w.write_all(&RESPONSE_MAGIC)?;
    w.write_all(&(rows.len() as u32).to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    for row in rows {
        write_f32s(w, row)?;
    }
    w.flush()
}

pub fn write_error<W: Write + ?Sized>(w: &mut W, message: &str) -> io::Result<()> {
    let bytes = &message.as_bytes()[..message.len().min(MAX_MESSAGE)];
    w.write_all(&ERROR_MAGIC)?;
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(bytes)?;
    w.flush()
}

pub fn read_response<R: Read + ?Sized>(r: &mut R) -> Result<Response> {
    let magic =
        read_magic(r)?.ok_or_else(|| Error::Protocol("stream closed before a response".into()))?;
    match magic {
        RESPONSE_MAGIC => {
            let batch = bounded("batch", read_u32(r).map_err(io_err)?, MAX_BATCH)?;
            let dim = bounded("d", read_u32(r).map_err(io_err)?, MAX_FEATURE_DIM)?;
            let rows = (0..batch)
                .map(|_| read_f32s(r, dim))
                .collect::<io::Result<Vec<_>>>()
                .map_err(io_err)?;
            Ok(Response::Features { dim, rows })
        }
        ERROR_MAGIC => {
            let len = read_u32(r).map_err(io_err)? as usize;
            if len > MAX_MESSAGE {
                return Err(Error::Protocol(format!(
                    "error message of {len} bytes is too long"
                )));
            }
            let mut bytes = vec![0u8; len];
            r.read_exact(&mut bytes).map_err(io_err)?;
            Ok(Response::Error(
                String::from_utf8_lossy(&bytes).into_owned(),
            ))
        }
        other => Err(Error::Protocol(format!(
            "unexpected response magic {other:?}"
        ))),
    }
}

/// Answers requests until the peer closes the stream. Handler failures are
/// sent back as error frames and the loop continues; malformed requests end
/// the session with an error frame.
pub fn serve<R, W, F>(reader: &mut R, writer: &mut W, mut handler: F) -> Result<()>
where
    R: Read + ?Sized,
    W: Write + ?Sized,
    F: FnMut(&[Image]) -> std::result::Result<Vec<Vec<f32>>, String>,
{
    loop {
        let batch = match read_request(reader) {
            Ok(Some(batch)) => batch,
            Ok(None) => return Ok(()),
            Err(e) => {
                let _ = write_error(writer, &e.to_string());
                return Err(e);
            }
        };
        let sent = match handler(&batch) {
            Ok(rows) if rows.len() == batch.len() => write_features(writer, &rows),
            Ok(rows) => write_error(
                writer,
                &format!(
                    "model returned {} rows for {} images",
                    rows.len(),
                    batch.len()
                ),
            ),
            Err(msg) => write_error(writer, &msg),
        };
        sent.map_err(|e| Error::Transport {
            message: format!("cannot write response: {e}"),
            diagnostics: String::new(),
        })?;
    }
}
