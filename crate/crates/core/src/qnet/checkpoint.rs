//! Parameter checkpoints.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! magic  b"FMDPQNET"
//! u32    format version
//! u8     head activation (0 linear, 1 softmax)
//! 6×u64  dims: features, lstm1, lstm2, position, merge1, merge2
//! u32    tensor count
//! per tensor:
//!   u32 name length, name bytes (UTF-8)
//!   u32 rank, rank×u64 shape
//!   f64 values, row-major
//! ```
//!
//! The JSON form carries the same named arrays and shapes.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{HeadActivation, NetDims, NetworkParams, QNetError, TENSOR_NAMES};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"FMDPQNET";

fn bad(msg: impl Into<String>) -> QNetError {
    QNetError::Checkpoint(msg.into())
}

fn dims_array(d: &NetDims) -> [usize; 6] {
    [d.features, d.lstm1, d.lstm2, d.position, d.merge1, d.merge2]
}

pub fn save_binary<W: Write>(params: &NetworkParams, mut out: W) -> Result<(), QNetError> {
    out.write_all(MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&[match params.head_activation {
        HeadActivation::Linear => 0u8,
        HeadActivation::Softmax => 1u8,
    }])?;
    for d in dims_array(&params.dims) {
        out.write_all(&(d as u64).to_le_bytes())?;
    }
    out.write_all(&(TENSOR_NAMES.len() as u32).to_le_bytes())?;
    for ((name, shape), data) in TENSOR_NAMES
        .iter()
        .zip(params.shapes())
        .zip(params.tensors())
    {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(shape.len() as u32).to_le_bytes())?;
        for s in &shape {
            out.write_all(&(*s as u64).to_le_bytes())?;
        }
        for v in data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], QNetError> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| bad(format!("truncated: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32, QNetError> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<usize, QNetError> {
        usize::try_from(u64::from_le_bytes(self.bytes()?)).map_err(|_| bad("size overflow"))
    }
}

pub fn load_binary<R: Read>(input: R) -> Result<NetworkParams, QNetError> {
    let mut r = Reader { inner: input };
    if &r.bytes::<8>()? != MAGIC {
        return Err(bad("not a parameter checkpoint"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let head_activation = match r.bytes::<1>()?[0] {
        0 => HeadActivation::Linear,
        1 => HeadActivation::Softmax,
        other => return Err(bad(format!("unknown head activation {other}"))),
    };
    let dims = NetDims {
        features: r.u64()?,
        lstm1: r.u64()?,
        lstm2: r.u64()?,
        position: r.u64()?,
        merge1: r.u64()?,
        merge2: r.u64()?,
    };
    let mut params = NetworkParams::zeros(dims, head_activation);
    let count = r.u32()? as usize;
    if count != TENSOR_NAMES.len() {
        return Err(bad(format!(
            "expected {} tensors, found {count}",
            TENSOR_NAMES.len()
        )));
    }
    let shapes = params.shapes();
    for ((name, shape), data) in TENSOR_NAMES.iter().zip(shapes).zip(params.tensors_mut()) {
        let name_len = r.u32()? as usize;
        let mut name_buf = vec![0u8; name_len];
        r.inner
            .read_exact(&mut name_buf)
            .map_err(|e| bad(format!("truncated: {e}")))?;
        if name_buf != name.as_bytes() {
            return Err(bad(format!(
                "expected tensor `{name}`, found `{}`",
                String::from_utf8_lossy(&name_buf)
            )));
        }
        let rank = r.u32()? as usize;
        let found: Vec<usize> = (0..rank).map(|_| r.u64()).collect::<Result<_, _>>()?;
        if found != shape {
            return Err(bad(format!(
                "{name}: expected shape {shape:?}, found {found:?}"
            )));
        }
        for v in data.iter_mut() {
            *v = f64::from_le_bytes(r.bytes()?);
        }
    }
    Ok(params)
}

#[derive(Serialize, Deserialize)]
struct JsonTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct JsonCheckpoint {
    format_version: u32,
    head_activation: HeadActivation,
    dims: NetDims,
    tensors: Vec<JsonTensor>,
}

pub fn save_json<W: Write>(params: &NetworkParams, out: W) -> Result<(), QNetError> {
    let doc = JsonCheckpoint {
        format_version: CHECKPOINT_VERSION,
        head_activation: params.head_activation,
        dims: params.dims,
        tensors: TENSOR_NAMES
            .iter()
            .zip(params.shapes())
            .zip(params.tensors())
            .map(|((name, shape), data)| JsonTensor {
                name: (*name).to_string(),
                shape,
                data: data.to_vec(),
            })
            .collect(),
    };
    serde_json::to_writer(out, &doc).map_err(|e| bad(e.to_string()))
}

pub fn load_json<R: Read>(input: R) -> Result<NetworkParams, QNetError> {
    let doc: JsonCheckpoint = serde_json::from_reader(input).map_err(|e| bad(e.to_string()))?;
    if doc.format_version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "unsupported format version {}",
            doc.format_version
        )));
    }
    let mut params = NetworkParams::zeros(doc.dims, doc.head_activation);
    if doc.tensors.len() != TENSOR_NAMES.len() {
        return Err(bad("wrong tensor count"));
    }
    let shapes = params.shapes();
    for (((name, shape), dst), src) in TENSOR_NAMES
        .iter()
        .zip(shapes)
        .zip(params.tensors_mut())
        .zip(&doc.tensors)
    {
        if src.name != *name || src.shape != shape || src.data.len() != dst.len() {
            return Err(bad(format!(
                "tensor `{}` does not match `{name}` {shape:?}",
                src.name
            )));
        }
        dst.copy_from_slice(&src.data);
    }
    Ok(params)
}
