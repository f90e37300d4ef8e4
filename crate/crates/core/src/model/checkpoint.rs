//! Binary checkpoints.
//!
//! Layout: magic `DSTN`, version `u16`, the JSON config as a `u32` byte
//! length plus UTF-8, a `u32` tensor count, then per tensor the name
//! (`u32` length + UTF-8), rank `u32`, dims `u32` each and the values as
//! little-endian `f64`. Batch-norm running statistics are stored alongside
//! the parameters.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Dystan, DystanConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DSTN";
pub const CHECKPOINT_VERSION: u16 = 1;

fn len_u32(n: usize, what: &str) -> Result<[u8; 4]> {
    u32::try_from(n).map(u32::to_le_bytes).map_err(|_| Error::Format(format!("{what} too large for a checkpoint")))
}

pub fn write_checkpoint<W: Write>(w: W, model: &Dystan) -> Result<()> {
    let mut w = BufWriter::new(w);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let config = serde_json::to_string(model.config())?;
    w.write_all(&len_u32(config.len(), "config")?)?;
    w.write_all(config.as_bytes())?;
    let tensors: Vec<_> = model.store().named_tensors().collect();
    w.write_all(&len_u32(tensors.len(), "tensor count")?)?;
    for (name, t) in tensors {
        w.write_all(&len_u32(name.len(), "name")?)?;
        w.write_all(name.as_bytes())?;
        w.write_all(&len_u32(t.rank(), "rank")?)?;
        for &d in t.shape() {
            w.write_all(&len_u32(d, "dimension")?)?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        (&mut self.inner).take(n as u64).read_to_end(&mut buf)?;
        if buf.len() != n {
            return Err(Error::Format(format!("checkpoint truncated while reading {what}")));
        }
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)?;
        String::from_utf8(self.bytes(n, what)?).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
    }
}

/// Rebuilds the model described by the embedded config and loads every
/// stored tensor into it. Missing, unknown or mis-shaped tensors are format
/// errors.
pub fn read_checkpoint<R: Read>(r: R) -> Result<Dystan> {
    let mut r = Reader { inner: BufReader::new(r) };
    if r.bytes(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = u16::from_le_bytes(r.bytes(2, "version")?.try_into().expect("2 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let config: DystanConfig = serde_json::from_str(&r.string("config")?)
        .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    let mut model = Dystan::new(config, 0)?;
    let expected: HashSet<String> = model.store().named_tensors().map(|(n, _)| n.to_string()).collect();
    let count = r.u32("tensor count")?;
    let mut seen = HashSet::new();
    for _ in 0..count {
        let name = r.string("tensor name")?;
        let rank = r.u32("rank")?;
        let dims = (0..rank).map(|_| r.u32("dimension")).collect::<Result<Vec<_>>>()?;
        let target = model
            .store_mut()
            .tensor_mut(&name)
            .ok_or_else(|| Error::Format(format!("unknown tensor `{name}` in checkpoint")))?;
        if target.shape() != dims.as_slice() {
            return Err(Error::Format(format!("tensor `{name}` has shape {dims:?}, model expects {:?}", target.shape())));
        }
        let raw = r.bytes(target.len() * 8, &name)?;
        for (dst, chunk) in target.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        if !seen.insert(name.clone()) {
            return Err(Error::Format(format!("tensor `{name}` stored twice")));
        }
    }
    if let Some(missing) = expected.difference(&seen).min() {
        return Err(Error::Format(format!("checkpoint lacks tensor `{missing}`")));
    }
    let mut rest = [0u8; 1];
    if r.inner.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after the last tensor".into()));
    }
    Ok(model)
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Dystan) -> Result<()> {
    write_checkpoint(File::create(path)?, model)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Dystan> {
    read_checkpoint(File::open(path)?)
}
