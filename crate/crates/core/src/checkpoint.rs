//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian): magic `HREDCKPT`, `u32` version, then
//! length-prefixed sections. Strings are `u64` length + UTF-8 bytes; float
//! arrays are `u64` count + `f64` values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HREDCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub values: Vec<f64>,
    /// Most recent (clipped) gradient, if one was computed.
    pub grad: Option<Vec<f64>>,
    /// Adagrad accumulator; absent for frozen parameters.
    pub accumulator: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Resolved run configuration as JSON.
    pub config: String,
    pub update: u64,
    pub epoch: u64,
    /// Next batch index within `epoch`.
    pub cursor: u64,
    pub tensors: Vec<NamedTensor>,
    /// Vocabulary as `(token, count)` in id order, reserved entries excluded.
    pub vocab: Vec<(String, u64)>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn floats(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn opt_floats(&mut self, v: &Option<Vec<f64>>) {
        match v {
            Some(v) => {
                self.u8(1);
                self.floats(v);
            }
            None => self.u8(0),
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn corrupt(what: &str) -> Error {
    Error::Checkpoint(format!("truncated or corrupt checkpoint while reading {what}"))
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| corrupt(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn len(&mut self, what: &str, elem: usize) -> Result<usize> {
        let n = self.u64(what)? as usize;
        if n.saturating_mul(elem) > self.buf.len() - self.pos {
            return Err(corrupt(what));
        }
        Ok(n)
    }
    fn str(&mut self, what: &str) -> Result<String> {
        let n = self.len(what, 1)?;
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| corrupt(what))
    }
    fn floats(&mut self, what: &str) -> Result<Vec<f64>> {
        let n = self.len(what, 8)?;
        let bytes = self.take(n * 8, what)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn opt_floats(&mut self, what: &str) -> Result<Option<Vec<f64>>> {
        match self.u8(what)? {
            0 => Ok(None),
            1 => Ok(Some(self.floats(what)?)),
            _ => Err(corrupt(what)),
        }
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(MAGIC.to_vec());
        w.0.extend_from_slice(&VERSION.to_le_bytes());
        w.str(&self.config);
        w.u64(self.update);
        w.u64(self.epoch);
        w.u64(self.cursor);
        w.u64(self.tensors.len() as u64);
        for t in &self.tensors {
            w.str(&t.name);
            w.u64(t.shape.len() as u64);
            for &d in &t.shape {
                w.u64(d as u64);
            }
            w.u8(t.trainable as u8);
            w.floats(&t.values);
            w.opt_floats(&t.grad);
            w.opt_floats(&t.accumulator);
        }
        w.u64(self.vocab.len() as u64);
        for (tok, c) in &self.vocab {
            w.str(tok);
            w.u64(*c);
        }
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 12 || &buf[..8] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        let mut r = Reader { buf, pos: 12 };
        let config = r.str("config")?;
        let update = r.u64("update counter")?;
        let epoch = r.u64("epoch")?;
        let cursor = r.u64("cursor")?;
        let n = r.len("tensor count", 1)?;
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.str("tensor name")?;
            let rank = r.len("tensor rank", 8)?;
            let shape = (0..rank).map(|_| r.u64("shape").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let trainable = match r.u8("trainable flag")? {
                0 => false,
                1 => true,
                _ => return Err(corrupt("trainable flag")),
            };
            let values = r.floats("values")?;
            if shape.iter().product::<usize>() != values.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: shape {shape:?} does not match {} values",
                    values.len()
                )));
            }
            let grad = r.opt_floats("gradient")?;
            let accumulator = r.opt_floats("accumulator")?;
            tensors.push(NamedTensor {
                name,
                shape,
                trainable,
                values,
                grad,
                accumulator,
            });
        }
        let nv = r.len("vocab size", 9)?;
        let vocab = (0..nv)
            .map(|_| Ok((r.str("vocab token")?, r.u64("vocab count")?)))
            .collect::<Result<Vec<_>>>()?;
        if r.pos != buf.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self {
            config,
            update,
            epoch,
            cursor,
            tensors,
            vocab,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }
}
