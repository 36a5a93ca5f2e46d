//! Binary bundle holding a set of trained cache variants.
//!
//! ```text
//! magic      8 bytes  "CNETCSET"
//! version    u16      1
//! meta_len   u32, meta (UTF-8)
//! count      u32
//! per variant:
//!   layer u32, variant u32
//!   arch_len u16, arch (UTF-8, e.g. "Pool(64)")
//!   threshold f64
//!   predictor_len u64, predictor checkpoint
//!   selector_len u64, selector checkpoint
//! ```
//!
//! Little-endian throughout; the bundle must end after the last variant.

use super::{selector_layers, ArchSpec, CacheVariant};
use crate::nn::checkpoint;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CNETCSET";
pub const VERSION: u16 = 1;
const MAX_META: usize = 1 << 16;
const MAX_VARIANTS: usize = 1 << 16;

#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    pub variants: Vec<CacheVariant>,
    pub metadata: String,
}

pub fn encode(variants: &[CacheVariant], metadata: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(metadata.len() as u32).to_le_bytes());
    out.extend_from_slice(metadata.as_bytes());
    out.extend_from_slice(&(variants.len() as u32).to_le_bytes());
    for v in variants {
        out.extend_from_slice(&(v.layer as u32).to_le_bytes());
        out.extend_from_slice(&(v.variant as u32).to_le_bytes());
        let arch = v.arch.to_string();
        out.extend_from_slice(&(arch.len() as u16).to_le_bytes());
        out.extend_from_slice(arch.as_bytes());
        out.extend_from_slice(&v.threshold.to_le_bytes());
        for net in [&v.predictor, &v.selector] {
            let bytes = checkpoint::encode(net, "");
            out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
            out.extend_from_slice(&bytes);
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(bad(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self, n: usize) -> Result<&'a str> {
        std::str::from_utf8(self.take(n)?).map_err(|_| bad("string is not UTF-8".into()))
    }
}

fn bad(reason: String) -> Error {
    Error::invalid("cache bundle", reason)
}

pub fn decode(bytes: &[u8]) -> Result<Bundle> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let meta_len = r.u32()? as usize;
    if meta_len > MAX_META {
        return Err(bad(format!("metadata length {meta_len}")));
    }
    let metadata = r.str(meta_len)?.to_string();
    let count = r.u32()? as usize;
    if count > MAX_VARIANTS {
        return Err(bad(format!("variant count {count}")));
    }
    let mut variants: Vec<CacheVariant> = Vec::new();
    for _ in 0..count {
        let layer = r.u32()? as usize;
        let variant = r.u32()? as usize;
        if layer == 0 || variant == 0 {
            return Err(bad("layer and variant ids are 1-based".into()));
        }
        if variants.iter().any(|v| v.layer == layer && v.variant == variant) {
            return Err(bad(format!("duplicate variant {layer}/{variant}")));
        }
        let arch_len = r.u16()? as usize;
        let arch: ArchSpec = r.str(arch_len)?.parse()?;
        let threshold = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        if !(0.0..=1.0).contains(&threshold) {
            return Err(bad(format!("threshold {threshold}")));
        }
        let mut nets = Vec::with_capacity(2);
        for _ in 0..2 {
            let len = r.u64()?;
            let len = usize::try_from(len).map_err(|_| bad(format!("checkpoint length {len}")))?;
            nets.push(checkpoint::decode(r.take(len)?)?.network);
        }
        let selector = nets.pop().unwrap();
        let predictor = nets.pop().unwrap();
        let classes = predictor.output_dim();
        if arch.predictor_layers(predictor.input_dim(), classes)? != predictor.layers() {
            return Err(bad(format!("predictor layers do not match {arch}")));
        }
        if selector.layers() != selector_layers(classes).as_slice() {
            return Err(bad("selector layers do not match the class count".into()));
        }
        variants.push(CacheVariant {
            layer,
            variant,
            arch,
            predictor,
            selector,
            threshold,
        });
    }
    if r.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Bundle { variants, metadata })
}
