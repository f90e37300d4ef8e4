//! Flat binary window cache.
//!
//! Layout: magic `SSCD`, version `u16`, record count `u32`, then per record
//! `dim` little-endian `f64`s, `sed: u8`, `soc: u8`, and the participant id
//! as a `u32` byte length followed by UTF-8. Sedentary code 4 marks a
//! retained `OTHER` window. Windows use `dim = 13·100`;
//! embedding dumps reuse the layout with their own width.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dataset::labels::NUM_SOC;
use crate::dataset::{LabeledWindow, SED_OTHER};
use crate::dsp::{NUM_CHANNELS, WINDOW_LEN};
use crate::error::{Error, Result};

pub const CACHE_MAGIC: &[u8; 4] = b"SSCD";
pub const CACHE_VERSION: u16 = 1;
pub const WINDOW_DIM: usize = NUM_CHANNELS * WINDOW_LEN;

/// One row of a cache file.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheRecord {
    pub values: Vec<f64>,
    pub sed: u8,
    pub soc: u8,
    pub participant_id: String,
}

pub fn write_records<W: Write>(w: W, records: &[CacheRecord], dim: usize) -> Result<()> {
    let mut w = BufWriter::new(w);
    let count = u32::try_from(records.len()).map_err(|_| Error::Format("too many records for a cache file".into()))?;
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    w.write_all(&count.to_le_bytes())?;
    for r in records {
        if r.values.len() != dim {
            return Err(Error::Format(format!("record has {} values, cache width is {dim}", r.values.len())));
        }
        for v in &r.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&[r.sed, r.soc])?;
        let id = r.participant_id.as_bytes();
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id)?;
    }
    w.flush()?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("cache truncated while reading {what}")),
        _ => Error::Io(e),
    })
}

pub fn read_records<R: Read>(r: R, dim: usize) -> Result<Vec<CacheRecord>> {
    let mut r = BufReader::new(r);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != CACHE_MAGIC {
        return Err(Error::Format("not a window cache (bad magic)".into()));
    }
    let mut b2 = [0u8; 2];
    read_exact(&mut r, &mut b2, "version")?;
    let version = u16::from_le_bytes(b2);
    if version != CACHE_VERSION {
        return Err(Error::Format(format!("unsupported cache version {version}")));
    }
    let mut b4 = [0u8; 4];
    read_exact(&mut r, &mut b4, "count")?;
    let count = u32::from_le_bytes(b4) as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    let mut buf = vec![0u8; dim * 8];
    for i in 0..count {
        read_exact(&mut r, &mut buf, &format!("record {i}"))?;
        let values = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
        read_exact(&mut r, &mut b2, &format!("labels of record {i}"))?;
        let (sed, soc) = (b2[0], b2[1]);
        if sed > SED_OTHER || soc as usize >= NUM_SOC {
            return Err(Error::Format(format!("record {i}: labels ({sed}, {soc}) out of range")));
        }
        read_exact(&mut r, &mut b4, &format!("id length of record {i}"))?;
        let mut id = vec![0u8; u32::from_le_bytes(b4) as usize];
        read_exact(&mut r, &mut id, &format!("id of record {i}"))?;
        let participant_id =
            String::from_utf8(id).map_err(|_| Error::Format(format!("record {i}: participant id is not UTF-8")))?;
        out.push(CacheRecord { values, sed, soc, participant_id });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after the last record".into()));
    }
    Ok(out)
}

/// Writes windows; source segment ids are not part of the format.
pub fn write_cache(path: impl AsRef<Path>, windows: &[LabeledWindow]) -> Result<()> {
    let records: Vec<CacheRecord> = windows
        .iter()
        .map(|w| CacheRecord { values: w.features.clone(), sed: w.sed, soc: w.soc, participant_id: w.participant_id.clone() })
        .collect();
    write_records(File::create(path)?, &records, WINDOW_DIM)
}

/// Reads windows; `source_segment_id` comes back empty.
pub fn read_cache(path: impl AsRef<Path>) -> Result<Vec<LabeledWindow>> {
    Ok(read_records(File::open(path)?, WINDOW_DIM)?
        .into_iter()
        .map(|r| LabeledWindow {
            features: r.values,
            sed: r.sed,
            soc: r.soc,
            participant_id: r.participant_id,
            source_segment_id: String::new(),
        })
        .collect())
}
