//! Binary container for named parameter tensors plus the configuration they
//! belong to.
//!
//! Layout (little-endian): magic `EGCK`, format version `u32`, 32-byte config
//! fingerprint, config text (`u32` length + UTF-8), tensor count `u32`, then per
//! tensor: name (`u16` length + UTF-8), rank `u8`, dims (`u32` each) and `f32`
//! data.

use std::fs;
use std::path::Path;

use egmr_autograd::Tensor;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

const MAGIC: &[u8; 4] = b"EGCK";
const VERSION: u32 = 1;

pub type Fingerprint = [u8; 32];

/// SHA-256 of a configuration's canonical text.
pub fn fingerprint(config_text: &str) -> Fingerprint {
    Sha256::digest(config_text.as_bytes()).into()
}

pub fn fingerprint_hex(fp: &Fingerprint) -> String {
    fp.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub fingerprint: Fingerprint,
    pub config_text: String,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn new(config_text: String, params: ParamStore<f32>) -> Self {
        Self {
            fingerprint: fingerprint(&config_text),
            config_text,
            params,
        }
    }

    pub fn verify(&self, expected: &Fingerprint) -> Result<()> {
        if &self.fingerprint != expected {
            return Err(Error::Checkpoint(format!(
                "config fingerprint {} does not match expected {}",
                fingerprint_hex(&self.fingerprint),
                fingerprint_hex(expected)
            )));
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.fingerprint);
        out.extend_from_slice(&(self.config_text.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_text.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.names().iter().zip(self.params.tensors()) {
            let len = u16::try_from(name.len()).map_err(|_| Error::Checkpoint(format!("name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let fingerprint: Fingerprint = r.take(32)?.try_into().unwrap();
        let n = r.u32()? as usize;
        let config_text = String::from_utf8(r.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let count = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))?;
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let data = r
                .take(4 * numel)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if params.find(&name).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
            }
            params.add(name, Tensor::from_vec(&shape, data));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            fingerprint,
            config_text,
            params,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn write(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, ckpt.encode()?).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::decode(&bytes)
}
