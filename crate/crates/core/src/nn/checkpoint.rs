//! Binary network checkpoint format, version 1.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes   "CNETCKPT"
//! version      u16       1
//! meta_len     u32       length of the metadata string
//! meta         meta_len  UTF-8 (config hash, tool version, free text)
//! seed         u64
//! layer_count  u32
//! layers       layer_count x (kind u8, a u32, b u32, c u32)
//!                kind 0 dense    a=input b=output
//!                kind 1 relu     a=dim
//!                kind 2 avgpool  a=input b=window
//!                kind 3 conv1d   a=input b=kernel c=stride
//!                kind 4 softmax  a=dim
//! weights      for each layer, for each weight tensor in storage order,
//!              the row-major f64 values (dense: W[out][in] then b[out];
//!              conv1d: kernel[k] then bias[1])
//! ```
//!
//! The file must end exactly after the last weight.

use super::{LayerSpec, Network, NnError, Tensor};

pub const MAGIC: &[u8; 8] = b"CNETCKPT";
pub const VERSION: u16 = 1;
const MAX_META: usize = 1 << 16;
const MAX_LAYERS: usize = 4096;

/// Decoded checkpoint: the network plus its metadata string.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub metadata: String,
}

pub fn encode(net: &Network, metadata: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + net.param_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(metadata.len() as u32).to_le_bytes());
    out.extend_from_slice(metadata.as_bytes());
    out.extend_from_slice(&net.seed().to_le_bytes());
    out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for layer in net.layers() {
        let (kind, a, b, c) = match *layer {
            LayerSpec::Dense { input, output } => (0u8, input, output, 0),
            LayerSpec::Relu { dim } => (1, dim, 0, 0),
            LayerSpec::AvgPool { input, window } => (2, input, window, 0),
            LayerSpec::Conv1d {
                input,
                kernel,
                stride,
            } => (3, input, kernel, stride),
            LayerSpec::Softmax { dim } => (4, dim, 0, 0),
        };
        out.push(kind);
        for v in [a, b, c] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
    }
    for t in net.params().iter().flatten() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| NnError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, NnError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, NnError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let meta_len = r.u32()? as usize;
    if meta_len > MAX_META {
        return Err(NnError::Checkpoint(format!("metadata length {meta_len}")));
    }
    let metadata = std::str::from_utf8(r.take(meta_len)?)
        .map_err(|_| NnError::Checkpoint("metadata is not UTF-8".into()))?
        .to_owned();
    let seed = r.u64()?;
    let count = r.u32()? as usize;
    if count == 0 || count > MAX_LAYERS {
        return Err(NnError::Checkpoint(format!("layer count {count}")));
    }
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = r.u8()?;
        let a = r.u32()? as usize;
        let b = r.u32()? as usize;
        let c = r.u32()? as usize;
        let layer = match kind {
            0 => LayerSpec::Dense {
                input: a,
                output: b,
            },
            1 => LayerSpec::Relu { dim: a },
            2 => LayerSpec::AvgPool {
                input: a,
                window: b,
            },
            3 => LayerSpec::Conv1d {
                input: a,
                kernel: b,
                stride: c,
            },
            4 => LayerSpec::Softmax { dim: a },
            k => return Err(NnError::Checkpoint(format!("unknown layer kind {k}"))),
        };
        layer.validate()?;
        layers.push(layer);
    }
    // Size check before allocating anything proportional to the header.
    let mut total_params = 0usize;
    for shape in layers.iter().flat_map(LayerSpec::param_shapes) {
        total_params = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| total_params.checked_add(n))
            .ok_or_else(|| NnError::Checkpoint("parameter count overflows".into()))?;
    }
    if total_params.checked_mul(8) != Some(r.remaining()) {
        return Err(NnError::Checkpoint(format!(
            "expected {total_params} weights, found {} bytes",
            r.remaining()
        )));
    }
    let mut params = Vec::with_capacity(layers.len());
    for layer in &layers {
        let mut ts = Vec::new();
        for shape in layer.param_shapes() {
            let n: usize = shape.iter().product();
            let data = r
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            ts.push(Tensor::new(shape, data)?);
        }
        params.push(ts);
    }
    let network = Network::from_parts(layers, params, seed)?;
    Ok(Checkpoint { network, metadata })
}
