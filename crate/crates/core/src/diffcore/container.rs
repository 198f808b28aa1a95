//! Self-describing binary container used for checkpoints and graph caches.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "SMORECKP"
//! version  u32
//! count    u32
//! entries  count x { name_len u32, name utf-8, dtype u8, ndim u32,
//!                    dims ndim x u64, payload }
//! ```
//!
//! Payloads are row-major little-endian: `f32` (code 0), `f64` (1),
//! complex `f64` pairs (2), `u64` (3) or raw bytes (4).

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SMORECKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
    /// Interleaved `(re, im)` pairs; length is twice the element count.
    C64(Vec<f64>),
    U64(Vec<u64>),
    Bytes(Vec<u8>),
}

impl Payload {
    fn code(&self) -> u8 {
        match self {
            Payload::F32(_) => 0,
            Payload::F64(_) => 1,
            Payload::C64(_) => 2,
            Payload::U64(_) => 3,
            Payload::Bytes(_) => 4,
        }
    }

    fn elements(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
            Payload::C64(v) => v.len() / 2,
            Payload::U64(v) => v.len(),
            Payload::Bytes(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub payload: Payload,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub entries: Vec<Entry>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, payload: Payload) {
        let name = name.into();
        debug_assert_eq!(
            shape.iter().product::<usize>(),
            payload.elements(),
            "{name}"
        );
        self.entries.push(Entry {
            name,
            shape,
            payload,
        });
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.payload.code());
            out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &e.payload {
                Payload::F32(v) => v
                    .iter()
                    .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::F64(v) | Payload::C64(v) => v
                    .iter()
                    .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::U64(v) => v
                    .iter()
                    .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::Bytes(v) => out.extend_from_slice(v),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let fail = |message: &str| Error::Format {
            path: origin.to_path_buf(),
            message: message.to_string(),
        };
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| fail("truncated header"))?;
        if &magic != MAGIC {
            return Err(fail("bad magic bytes"));
        }
        let version = read_u32(&mut r).ok_or_else(|| fail("truncated header"))?;
        if version != VERSION {
            return Err(fail(&format!("unsupported version {version}")));
        }
        let count = read_u32(&mut r).ok_or_else(|| fail("truncated header"))?;
        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = read_u32(&mut r).ok_or_else(|| fail("truncated entry"))? as usize;
            if r.len() < name_len {
                return Err(fail("truncated entry name"));
            }
            let name = std::str::from_utf8(&r[..name_len])
                .map_err(|_| fail("entry name is not utf-8"))?
                .to_string();
            r = &r[name_len..];
            let mut code = [0u8; 1];
            r.read_exact(&mut code)
                .map_err(|_| fail("truncated entry"))?;
            let ndim = read_u32(&mut r).ok_or_else(|| fail("truncated entry"))? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u64(&mut r).ok_or_else(|| fail("truncated shape"))? as usize);
            }
            let n: usize = shape.iter().product();
            let width = match code[0] {
                0 => 4,
                1 | 3 => 8,
                2 => 16,
                4 => 1,
                other => return Err(fail(&format!("unknown dtype code {other}"))),
            };
            let nbytes = n.checked_mul(width).ok_or_else(|| fail("shape overflow"))?;
            if r.len() < nbytes {
                return Err(fail(&format!("truncated payload for {name}")));
            }
            let (data, rest) = r.split_at(nbytes);
            r = rest;
            let payload = match code[0] {
                0 => Payload::F32(
                    data.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                1 | 2 => {
                    let v = data
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    if code[0] == 1 {
                        Payload::F64(v)
                    } else {
                        Payload::C64(v)
                    }
                }
                3 => Payload::U64(
                    data.chunks_exact(8)
                        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                _ => Payload::Bytes(data.to_vec()),
            };
            entries.push(Entry {
                name,
                shape,
                payload,
            });
        }
        if !r.is_empty() {
            return Err(fail("trailing bytes after last entry"));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

fn read_u32(r: &mut &[u8]) -> Option<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).ok()?;
    Some(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> Option<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).ok()?;
    Some(u64::from_le_bytes(b))
}
