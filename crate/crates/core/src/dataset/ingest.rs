//! Raw 50 Hz recordings in the combined CSV layout.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::dataset::labels::{SedentaryLabel, SocialLabel};
use crate::dsp::{SensorSegment, NUM_CHANNELS, RAW_RATE_HZ};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 18] = [
    "segment_id",
    "participant_id",
    "timestamp_ms",
    "ax",
    "ay",
    "az",
    "gx",
    "gy",
    "gz",
    "mx",
    "my",
    "mz",
    "qx",
    "qy",
    "qz",
    "qw",
    "sedentary_label",
    "social_label",
];

pub const SEGMENT_SECONDS: f64 = 60.0;
pub const SEGMENT_SAMPLES: usize = 3000;
/// Nominal spacing of 50 Hz timestamps.
pub const SAMPLE_PERIOD_MS: i64 = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub segment_id: String,
    pub participant_id: String,
    pub segment: SensorSegment,
    pub sedentary: SedentaryLabel,
    pub social: SocialLabel,
}

struct Pending {
    rec: RawRecording,
    last_ts: i64,
    first_line: usize,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

pub fn load_recordings(path: impl AsRef<Path>) -> Result<Vec<RawRecording>> {
    read_recordings(File::open(path)?)
}

/// Parses recordings grouped by `segment_id` in order of first appearance.
/// Each must hold 60 s of samples within one sample; the count is then
/// repaired to exactly 3000 (trailing sample dropped or last repeated).
pub fn read_recordings<R: Read>(reader: R) -> Result<Vec<RawRecording>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Ok(Vec::new()),
        Some(h) => h.map_err(|e| parse_err(1, e.to_string()))?,
    };
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(parse_err(1, format!("header must be `{}`", CSV_HEADER.join(","))));
    }

    let mut order: Vec<String> = Vec::new();
    let mut pending: HashMap<String, Pending> = HashMap::new();
    for row in records {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != CSV_HEADER.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", CSV_HEADER.len(), row.len())));
        }
        let ts: i64 = row[2].parse().map_err(|_| parse_err(line, format!("invalid timestamp `{}`", &row[2])))?;
        let mut values = [0.0; NUM_CHANNELS];
        for (c, v) in values.iter_mut().enumerate() {
            let field = &row[3 + c];
            *v = field
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| parse_err(line, format!("column `{}`: invalid number `{field}`", CSV_HEADER[3 + c])))?;
        }
        let sed: SedentaryLabel = row[16].parse().map_err(|m: String| parse_err(line, m))?;
        let soc: SocialLabel = row[17].parse().map_err(|m: String| parse_err(line, m))?;
        let (seg_id, pid) = (&row[0], &row[1]);
        if seg_id.is_empty() {
            return Err(parse_err(line, "empty segment_id"));
        }

        let entry = pending.entry(seg_id.to_string()).or_insert_with(|| {
            order.push(seg_id.to_string());
            Pending {
                rec: RawRecording {
                    segment_id: seg_id.to_string(),
                    participant_id: pid.to_string(),
                    segment: SensorSegment { channels: vec![Vec::new(); NUM_CHANNELS], sample_rate_hz: RAW_RATE_HZ, start_time_ms: ts },
                    sedentary: sed,
                    social: soc,
                },
                last_ts: ts - 1,
                first_line: line,
            }
        });
        let rec = &mut entry.rec;
        if rec.participant_id != pid || rec.sedentary != sed || rec.social != soc {
            return Err(Error::Integrity(format!(
                "line {line}: segment `{seg_id}` changes participant or labels (first seen on line {})",
                entry.first_line
            )));
        }
        if ts <= entry.last_ts {
            return Err(Error::Integrity(format!("line {line}: timestamps in segment `{seg_id}` must strictly increase")));
        }
        entry.last_ts = ts;
        for (ch, v) in rec.segment.channels.iter_mut().zip(values) {
            ch.push(v);
        }
    }

    order
        .into_iter()
        .map(|id| {
            let mut rec = pending.remove(&id).expect("every ordered id is pending").rec;
            let n = rec.segment.len();
            if n.abs_diff(SEGMENT_SAMPLES) > 1 {
                return Err(Error::Integrity(format!(
                    "segment `{id}` has {n} samples; a {SEGMENT_SECONDS} s segment at {RAW_RATE_HZ} Hz needs {SEGMENT_SAMPLES} ± 1"
                )));
            }
            for ch in &mut rec.segment.channels {
                ch.resize(SEGMENT_SAMPLES, *ch.last().expect("segment is non-empty"));
            }
            Ok(rec)
        })
        .collect()
}

/// Writes recordings in the layout [`read_recordings`] accepts, with
/// timestamps at the nominal 20 ms spacing from each segment start.
pub fn write_recordings<W: Write>(writer: W, recordings: &[RawRecording]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for rec in recordings {
        for t in 0..rec.segment.len() {
            let mut row = vec![
                rec.segment_id.clone(),
                rec.participant_id.clone(),
                (rec.segment.start_time_ms + SAMPLE_PERIOD_MS * t as i64).to_string(),
            ];
            row.extend(rec.segment.channels.iter().map(|c| c[t].to_string()));
            row.push(rec.sedentary.code().to_string());
            row.push(rec.social.code().to_string());
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}
