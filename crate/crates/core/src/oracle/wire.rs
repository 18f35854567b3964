//! Length-prefixed oracle protocol over a byte stream (subprocess stdio or
//! TCP).
//!
//! Every frame is a `u32` little-endian payload length followed by the
//! payload. A request or response header is one UTF-8 JSON object; tensors
//! travel in separate follow-on frames of raw `f32` little-endian values
//! whose shapes are declared in the header.
//!
//! | op      | request header                                              | follow-on frames | reply                                   |
//! |---------|-------------------------------------------------------------|------------------|-----------------------------------------|
//! | `hello` | `{"op":"hello","id":n}`                                     | none             | OracleInfo fields + `id`                |
//! | `embed` | `{"op":"embed","id":n,"block_index":b,"shape":[H,W,C]}`     | 1 image          | `{"id":n,"shape":[N,D]}` + 1 frame      |
//! | `score` | `{"op":"score","id":n,"target":y,"batch":k,"shape":[H,W,C]}`| k images         | `{"id":n,"shape":[k]}` + 1 frame        |
//!
//! A `score` request with `"target": null` asks for full class vectors and
//! is answered with shape `[k, num_classes]`. Failures are answered with
//! `{"id":n,"error":"..."}` and no follow-on frame.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ModelOracle, OracleInfo};
use crate::error::{Error, Result};
use crate::types::{EmbeddingBlock, Image, ImageTensor};

/// Upper bound on a single frame, to fail fast on a corrupt length prefix.
pub const MAX_FRAME_LEN: usize = 1 << 30;

pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len())
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame exceeds u32 length"))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(payload)
}

/// Read one frame; `Ok(None)` on a clean end of stream before the length
/// prefix.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match r.read(&mut len[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(k) => filled += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_FRAME_LEN {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("frame of {len} bytes exceeds limit"),
        ));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    Ok(Some(payload))
}

pub fn encode_f32s(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_f32s(bytes: &[u8]) -> Result<Vec<f32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::Protocol(format!(
            "tensor frame of {} bytes is not a whole number of f32 values",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Request {
    Hello {
        id: u64,
    },
    Embed {
        id: u64,
        block_index: usize,
        shape: [usize; 3],
    },
    Score {
        id: u64,
        target: Option<usize>,
        batch: usize,
        shape: [usize; 3],
    },
}

impl Request {
    pub fn id(&self) -> u64 {
        match self {
            Request::Hello { id } | Request::Embed { id, .. } | Request::Score { id, .. } => *id,
        }
    }

    fn image_frames(&self) -> usize {
        match self {
            Request::Hello { .. } => 0,
            Request::Embed { .. } => 1,
            Request::Score { batch, .. } => *batch,
        }
    }
}

fn io_err(e: io::Error) -> Error {
    Error::Protocol(format!("transport failure: {e}"))
}

fn write_json<W: Write>(w: &mut W, value: &Value) -> io::Result<()> {
    write_frame(w, &serde_json::to_vec(value).expect("json values serialize"))
}

fn read_json<R: Read>(r: &mut R) -> Result<Value> {
    let frame = read_frame(r)
        .map_err(io_err)?
        .ok_or_else(|| Error::Protocol("peer closed the stream".into()))?;
    serde_json::from_slice(&frame).map_err(|e| Error::Protocol(format!("malformed JSON header: {e}")))
}

/// Serve `oracle` over one stream until the peer closes it.
pub fn serve<O, R, W>(oracle: &O, reader: R, writer: W) -> Result<()>
where
    O: ModelOracle + ?Sized,
    R: Read,
    W: Write,
{
    let mut reader = BufReader::new(reader);
    let mut writer = BufWriter::new(writer);
    let info = oracle.info()?;
    while let Some(frame) = read_frame(&mut reader)? {
        let request: Request = match serde_json::from_slice(&frame) {
            Ok(r) => r,
            Err(e) => {
                let id = serde_json::from_slice::<Value>(&frame)
                    .ok()
                    .and_then(|v| v.get("id").and_then(Value::as_u64))
                    .unwrap_or(0);
                write_json(
                    &mut writer,
                    &json!({"id": id, "error": format!("malformed request: {e}")}),
                )?;
                writer.flush()?;
                continue;
            }
        };
        let mut images = Vec::with_capacity(request.image_frames());
        for _ in 0..request.image_frames() {
            let frame =
                read_frame(&mut reader)?.ok_or_else(|| Error::Protocol("stream ended inside a request".into()))?;
            images.push(frame);
        }
        let id = request.id();
        match handle(oracle, &info, &request, images) {
            Ok((header, tensor)) => {
                let mut header = header;
                header["id"] = json!(id);
                write_json(&mut writer, &header)?;
                if let Some(t) = tensor {
                    write_frame(&mut writer, &encode_f32s(&t))?;
                }
            }
            Err(e) => write_json(&mut writer, &json!({"id": id, "error": e.to_string()}))?,
        }
        writer.flush()?;
    }
    Ok(())
}

fn decode_image(frame: &[u8], shape: [usize; 3]) -> Result<ImageTensor> {
    ImageTensor::new(shape[0], shape[1], shape[2], decode_f32s(frame)?)
}

fn handle<O: ModelOracle + ?Sized>(
    oracle: &O,
    info: &OracleInfo,
    request: &Request,
    frames: Vec<Vec<u8>>,
) -> Result<(Value, Option<Vec<f32>>)> {
    match *request {
        Request::Hello { .. } => Ok((serde_json::to_value(info)?, None)),
        Request::Embed { block_index, shape, .. } => {
            let image = Image::try_from(decode_image(&frames[0], shape)?)?;
            info.check_input(&image)?;
            let block = oracle.embeddings(&image, block_index)?;
            Ok((
                json!({"shape": [block.num_patches(), block.dim()], "block_index": block.block_index()}),
                Some(block.values().to_vec()),
            ))
        }
        Request::Score {
            target, batch, shape, ..
        } => {
            let images = frames
                .iter()
                .map(|f| decode_image(f, shape))
                .collect::<Result<Vec<_>>>()?;
            for img in &images {
                info.check_input(img)?;
            }
            match target {
                Some(y) => Ok((json!({"shape": [batch]}), Some(oracle.score_batch(&images, y)?))),
                None => {
                    let mut all = Vec::with_capacity(batch * info.num_classes);
                    for img in &images {
                        all.extend(oracle.class_scores(img)?);
                    }
                    Ok((json!({"shape": [batch, info.num_classes]}), Some(all)))
                }
            }
        }
    }
}

struct Connection {
    reader: Box<dyn Read + Send>,
    writer: Option<Box<dyn Write + Send>>,
    child: Option<Child>,
    next_id: u64,
}

impl Connection {
    fn call(&mut self, request: &Request, images: &[&ImageTensor]) -> Result<(Value, Option<Vec<f32>>)> {
        let writer = self
            .writer
            .as_mut()
            .ok_or_else(|| Error::Protocol("connection already closed".into()))?;
        write_frame(writer, &serde_json::to_vec(request)?).map_err(io_err)?;
        for img in images {
            write_frame(writer, &encode_f32s(img.data())).map_err(io_err)?;
        }
        writer.flush().map_err(io_err)?;

        let header = read_json(&mut self.reader)?;
        if header.get("id").and_then(Value::as_u64) != Some(request.id()) {
            return Err(Error::Protocol(format!(
                "response id {:?} does not match request id {}",
                header.get("id"),
                request.id()
            )));
        }
        if let Some(err) = header.get("error") {
            return Err(Error::Oracle(
                err.as_str().map_or_else(|| err.to_string(), str::to_string),
            ));
        }
        let tensor = match request {
            Request::Hello { .. } => None,
            _ => {
                let frame = read_frame(&mut self.reader)
                    .map_err(io_err)?
                    .ok_or_else(|| Error::Protocol("missing tensor frame".into()))?;
                let values = decode_f32s(&frame)?;
                let declared: usize = header
                    .get("shape")
                    .and_then(Value::as_array)
                    .ok_or_else(|| Error::Protocol("response lacks a shape".into()))?
                    .iter()
                    .map(|v| v.as_u64().map(|v| v as usize))
                    .product::<Option<usize>>()
                    .ok_or_else(|| Error::Protocol("non-integer shape".into()))?;
                if declared != values.len() {
                    return Err(Error::Protocol(format!(
                        "declared {declared} values but received {}",
                        values.len()
                    )));
                }
                Some(values)
            }
        };
        Ok((header, tensor))
    }

    fn next_id(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        // Closing stdin lets a well-behaved server exit on its own.
        self.writer.take();
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Oracle client speaking the framed protocol. Requests on one connection
/// are serialized.
pub struct WireOracle {
    conn: Mutex<Connection>,
    info: OracleInfo,
}

impl std::fmt::Debug for WireOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WireOracle")
            .field("info", &self.info)
            .finish_non_exhaustive()
    }
}

impl WireOracle {
    /// Run `command` (shell-style words) and talk to it over stdin/stdout.
    pub fn spawn(command: &str) -> Result<Self> {
        let words = shlex::split(command)
            .filter(|w| !w.is_empty())
            .ok_or_else(|| Error::InvalidArgument(format!("cannot parse oracle command `{command}`")))?;
        let mut child = Command::new(&words[0])
            .args(&words[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Oracle(format!("failed to start `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Self::handshake(Connection {
            reader: Box::new(BufReader::new(stdout)),
            writer: Some(Box::new(BufWriter::new(stdin))),
            child: Some(child),
            next_id: 0,
        })
    }

    pub fn connect_tcp(addr: &str) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(|e| Error::Oracle(format!("cannot connect to {addr}: {e}")))?;
        stream.set_nodelay(true).ok();
        let read_half = stream.try_clone()?;
        Self::from_streams(read_half, stream)
    }

    pub fn from_streams<R, W>(reader: R, writer: W) -> Result<Self>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        Self::handshake(Connection {
            reader: Box::new(BufReader::new(reader)),
            writer: Some(Box::new(BufWriter::new(writer))),
            child: None,
            next_id: 0,
        })
    }

    fn handshake(mut conn: Connection) -> Result<Self> {
        let id = conn.next_id();
        let (header, _) = conn.call(&Request::Hello { id }, &[])?;
        let info: OracleInfo =
            serde_json::from_value(header).map_err(|e| Error::Protocol(format!("bad hello reply: {e}")))?;
        info.validate()?;
        Ok(Self {
            conn: Mutex::new(conn),
            info,
        })
    }

    fn lock(&self) -> Result<std::sync::MutexGuard<'_, Connection>> {
        self.conn
            .lock()
            .map_err(|_| Error::Protocol("connection poisoned by an earlier failure".into()))
    }

    fn score_request(&self, images: &[ImageTensor], target: Option<usize>) -> Result<Vec<f32>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        for img in images {
            self.info.check_input(img)?;
        }
        let (h, w, c) = images[0].shape();
        let mut conn = self.lock()?;
        let id = conn.next_id();
        let request = Request::Score {
            id,
            target,
            batch: images.len(),
            shape: [h, w, c],
        };
        let refs: Vec<&ImageTensor> = images.iter().collect();
        let (_, values) = conn.call(&request, &refs)?;
        Ok(values.unwrap_or_default())
    }
}

impl ModelOracle for WireOracle {
    fn info(&self) -> Result<OracleInfo> {
        Ok(self.info.clone())
    }

    fn embeddings(&self, image: &Image, block_index: usize) -> Result<EmbeddingBlock> {
        self.info.check_input(image)?;
        let mut conn = self.lock()?;
        let id = conn.next_id();
        let (h, w, c) = image.shape();
        let request = Request::Embed {
            id,
            block_index,
            shape: [h, w, c],
        };
        let (header, values) = conn.call(&request, &[image.as_tensor()])?;
        let shape: Vec<usize> = header
            .get("shape")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_u64).map(|v| v as usize).collect())
            .unwrap_or_default();
        if shape.len() != 2 {
            return Err(Error::Protocol(format!("embed reply shape {shape:?} is not [N, D]")));
        }
        EmbeddingBlock::new(shape[0], shape[1], values.unwrap_or_default(), block_index)
    }

    fn score_batch(&self, images: &[ImageTensor], target: usize) -> Result<Vec<f32>> {
        let scores = self.score_request(images, Some(target))?;
        if scores.len() != images.len() {
            return Err(Error::Protocol(format!(
                "expected {} scores, received {}",
                images.len(),
                scores.len()
            )));
        }
        Ok(scores)
    }

    fn class_scores(&self, image: &ImageTensor) -> Result<Vec<f32>> {
        self.score_request(std::slice::from_ref(image), None)
    }
}
