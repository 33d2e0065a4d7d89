//! Capture files and the track-building pipeline.
//!
//! A capture file holds one JSON object per line with the fields `ts_us`
//! (integer microseconds), `mac` (17-character colon form), and `adv_data`
//! (lowercase hex, no separators). A track file holds one JSON object per
//! line with `mac`, `first_seen_us`, `last_seen_us`, `raw_count`, and
//! `ibl_ms`, where `ibl_ms` is a comma-separated list of millisecond
//! latencies with exactly three fractional digits. Samples derive from
//! microsecond timestamps, so three digits lose nothing.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{self, BufRead, BufReader, Read, Write};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::frames::{classify_gaen, MacAddress, MAX_ADV_DATA_LEN};

/// Errors produced by capture and track file handling.
#[derive(Debug, Error)]
pub enum CaptureError {
    /// A line that does not parse as a record; numbering starts at 1.
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    /// Pipeline configuration that fails validation.
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
}

/// One received advertisement, as stored in a capture file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureRecord {
    /// Receive timestamp in microseconds.
    pub ts_us: u64,
    /// Advertising address the frame carried.
    pub mac: MacAddress,
    /// Raw AdvData bytes, at most 31.
    #[serde(with = "hex::serde")]
    pub adv_data: Vec<u8>,
}

/// All inter-broadcast latency samples observed under one advertising
/// address, after windowing and session capping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudonymTrack {
    pub mac: MacAddress,
    /// Timestamp of the first record in the group.
    pub first_seen_us: u64,
    /// Timestamp of the last record inside the session cap.
    pub last_seen_us: u64,
    /// Number of classified records grouped under this address.
    pub raw_count: usize,
    /// Window-accepted latency samples in milliseconds, in time order.
    #[serde(with = "ibl_text")]
    pub ibl_ms: Vec<f64>,
}

/// Knobs of the track-building pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Lower edge of the accepted latency window in milliseconds.
    pub window_low_ms: f64,
    /// Upper edge of the accepted latency window in milliseconds.
    pub window_high_ms: f64,
    /// Per-address session cap in seconds.
    pub session_limit_s: f64,
    /// Minimum number of accepted samples a track must keep.
    pub min_points: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            window_low_ms: 220.0,
            window_high_ms: 350.0,
            session_limit_s: 600.0,
            min_points: 50,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), CaptureError> {
        if !(self.window_low_ms.is_finite() && self.window_high_ms.is_finite()) {
            return Err(CaptureError::InvalidConfig(
                "window edges must be finite".into(),
            ));
        }
        if !(0.0 < self.window_low_ms && self.window_low_ms <= self.window_high_ms) {
            return Err(CaptureError::InvalidConfig(format!(
                "window [{}, {}] must satisfy 0 < low <= high",
                self.window_low_ms, self.window_high_ms
            )));
        }
        if !(self.session_limit_s.is_finite() && self.session_limit_s > 0.0) {
            return Err(CaptureError::InvalidConfig(
                "session limit must be positive".into(),
            ));
        }
        if self.min_points == 0 {
            return Err(CaptureError::InvalidConfig(
                "min_points must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

mod ibl_text {
    use super::*;

    pub fn serialize<S: Serializer>(samples: &[f64], serializer: S) -> Result<S::Ok, S::Error> {
        let mut text = String::with_capacity(samples.len() * 8);
        for (i, v) in samples.iter().enumerate() {
            if i > 0 {
                text.push(',');
            }
            write!(text, "{v:.3}").expect("writing to a String cannot fail");
        }
        serializer.serialize_str(&text)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<f64>, D::Error> {
        let text = String::deserialize(deserializer)?;
        if text.is_empty() {
            return Ok(Vec::new());
        }
        text.split(',')
            .map(|token| {
                token
                    .parse::<f64>()
                    .map_err(|e| serde::de::Error::custom(format!("latency {token:?}: {e}")))
            })
            .collect()
    }
}

/// Streaming capture reader; memory use is bounded by line length.
pub struct CaptureReader<R> {
    inner: R,
    buf: String,
    line: usize,
    last_ts: Option<u64>,
    non_monotonic: usize,
}

impl<R: BufRead> CaptureReader<R> {
    /// Records seen so far whose timestamp went backwards. Not an error:
    /// receivers may flush out of order.
    pub fn non_monotonic_count(&self) -> usize {
        self.non_monotonic
    }
}

impl<R: BufRead> Iterator for CaptureReader<R> {
    type Item = Result<CaptureRecord, CaptureError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.inner.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e.into())),
            }
            self.line += 1;
            let text = self.buf.trim_end_matches(['\n', '\r']);
            if text.trim().is_empty() {
                continue;
            }
            let record = match parse_record_line(text, self.line) {
                Ok(r) => r,
                Err(e) => return Some(Err(e)),
            };
            if let Some(prev) = self.last_ts {
                if record.ts_us < prev {
                    self.non_monotonic += 1;
                }
            }
            self.last_ts = Some(record.ts_us);
            return Some(Ok(record));
        }
    }
}

fn parse_record_line(text: &str, line: usize) -> Result<CaptureRecord, CaptureError> {
    let record: CaptureRecord =
        serde_json::from_str(text).map_err(|e| CaptureError::MalformedLine {
            line,
            reason: e.to_string(),
        })?;
    if record.adv_data.len() > MAX_ADV_DATA_LEN {
        return Err(CaptureError::MalformedLine {
            line,
            reason: format!(
                "adv_data of {} bytes exceeds the {MAX_ADV_DATA_LEN}-byte maximum",
                record.adv_data.len()
            ),
        });
    }
    Ok(record)
}

/// Opens a streaming reader over a line-delimited capture.
pub fn read_capture<R: Read>(reader: R) -> CaptureReader<BufReader<R>> {
    CaptureReader {
        inner: BufReader::new(reader),
        buf: String::new(),
        line: 0,
        last_ts: None,
        non_monotonic: 0,
    }
}

/// Writes records as a line-delimited capture; inverse of [`read_capture`].
pub fn write_capture<W: Write>(mut writer: W, records: &[CaptureRecord]) -> io::Result<()> {
    for record in records {
        serde_json::to_writer(&mut writer, record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Builds per-address latency tracks from classified records.
///
/// Non-classifying records are discarded; the rest are grouped by MAC byte
/// equality. Within a group, timestamps are sorted, the group is capped to
/// its first `session_limit_s` seconds, successive differences are taken,
/// and only differences inside `[window_low_ms, window_high_ms]` survive.
/// Groups keeping fewer than `min_points` samples are dropped. Tracks come
/// back ordered by first appearance.
pub fn build_tracks<I>(records: I, cfg: &PipelineConfig) -> Result<Vec<PseudonymTrack>, CaptureError>
where
    I: IntoIterator<Item = CaptureRecord>,
{
    cfg.validate()?;
    let mut groups: HashMap<MacAddress, Vec<u64>> = HashMap::new();
    for record in records {
        if classify_gaen(&record.adv_data).is_none() {
            continue;
        }
        groups.entry(record.mac).or_default().push(record.ts_us);
    }

    let session_limit_us = (cfg.session_limit_s * 1e6).round() as u64;
    let mut tracks = Vec::new();
    for (mac, mut ts) in groups {
        ts.sort_unstable();
        let raw_count = ts.len();
        let first = ts[0];
        let cutoff = first.saturating_add(session_limit_us);
        let session = &ts[..ts.partition_point(|&t| t <= cutoff)];
        let mut ibl_ms = Vec::with_capacity(session.len().saturating_sub(1));
        for pair in session.windows(2) {
            let diff_ms = (pair[1] - pair[0]) as f64 / 1000.0;
            if diff_ms >= cfg.window_low_ms && diff_ms <= cfg.window_high_ms {
                ibl_ms.push(diff_ms);
            }
        }
        if ibl_ms.len() < cfg.min_points {
            continue;
        }
        tracks.push(PseudonymTrack {
            mac,
            first_seen_us: first,
            last_seen_us: *session.last().expect("session keeps the first record"),
            raw_count,
            ibl_ms,
        });
    }
    tracks.sort_unstable_by_key(|t| (t.first_seen_us, t.mac));
    Ok(tracks)
}

/// Writes tracks as line-delimited JSON; inverse of [`read_tracks`].
pub fn write_tracks<W: Write>(mut writer: W, tracks: &[PseudonymTrack]) -> io::Result<()> {
    for track in tracks {
        serde_json::to_writer(&mut writer, track)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a track file written by [`write_tracks`].
pub fn read_tracks<R: Read>(reader: R) -> Result<Vec<PseudonymTrack>, CaptureError> {
    let mut tracks = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let track: PseudonymTrack =
            serde_json::from_str(&line).map_err(|e| CaptureError::MalformedLine {
                line: idx + 1,
                reason: e.to_string(),
            })?;
        tracks.push(track);
    }
    Ok(tracks)
}
