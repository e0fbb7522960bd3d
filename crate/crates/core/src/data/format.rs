//! Binary dataset container.
//!
//! ```text
//! "ECHW1"  u16 version  u16 channels  u64 record count
//! per record:
//!   u16 len + UTF-8 sample_id
//!   u16 len + UTF-8 writer_id
//!   u16 len + UTF-8 transcript
//!   u32 frames, then frames × channels f32, row-major
//! ```
//! Everything little-endian.

use std::fs;
use std::path::Path;

use super::{DataError, SampleRecord, Signal};

pub const DATASET_MAGIC: &[u8; 5] = b"ECHW1";
pub const DATASET_VERSION: u16 = 1;

pub fn write_dataset(records: &[SampleRecord], channels: usize) -> Result<Vec<u8>, DataError> {
    let channels_u16 = u16::try_from(channels)
        .map_err(|_| DataError::Invalid(format!("channel count {channels} exceeds u16")))?;
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&channels_u16.to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for (i, r) in records.iter().enumerate() {
        validate(i, r, channels)?;
        for (field, s) in [
            ("sample_id", &r.sample_id),
            ("writer_id", &r.writer_id),
            ("transcript", &r.transcript),
        ] {
            let len = u16::try_from(s.len()).map_err(|_| DataError::InvalidRecord {
                record: i,
                sample_id: r.sample_id.clone(),
                msg: format!("{field} longer than 65535 bytes"),
            })?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        out.extend_from_slice(&(r.signal.frames as u32).to_le_bytes());
        for v in &r.signal.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_dataset(
    records: &[SampleRecord],
    channels: usize,
    path: &Path,
) -> Result<(), DataError> {
    fs::write(path, write_dataset(records, channels)?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<(Vec<SampleRecord>, usize), DataError> {
    read_dataset(&fs::read(path)?)
}

fn validate(index: usize, r: &SampleRecord, channels: usize) -> Result<(), DataError> {
    let invalid = |msg: String| DataError::InvalidRecord {
        record: index,
        sample_id: r.sample_id.clone(),
        msg,
    };
    if r.signal.channels != channels {
        return Err(invalid(format!(
            "signal has {} channels, dataset has {channels}",
            r.signal.channels
        )));
    }
    if r.signal.frames == 0 {
        return Err(invalid("signal has no frames".into()));
    }
    if r.transcript.is_empty() {
        return Err(invalid("empty transcript".into()));
    }
    if let Some(pos) = r.signal.data.iter().position(|v| !v.is_finite()) {
        return Err(DataError::NonFinite {
            record: index,
            sample_id: r.sample_id.clone(),
            frame: pos / channels,
            channel: pos % channels,
        });
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    record: Option<usize>,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], DataError> {
        if self.bytes.len() - self.pos < n {
            return Err(DataError::Truncated {
                offset: self.bytes.len(),
                record: self.record,
                what,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, DataError> {
        Ok(u16::from_le_bytes(
            self.take(2, what)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self, field: &'static str) -> Result<String, DataError> {
        let len = self.u16(field)? as usize;
        let raw = self.take(len, field)?;
        String::from_utf8(raw.to_vec()).map_err(|_| DataError::Utf8 {
            record: self.record.unwrap_or(0),
            field,
        })
    }
}

/// Parse a dataset image; returns the records and the channel count.
pub fn read_dataset(bytes: &[u8]) -> Result<(Vec<SampleRecord>, usize), DataError> {
    let mut cur = Cursor {
        bytes,
        pos: 0,
        record: None,
    };
    if cur.take(5, "magic").ok() != Some(&DATASET_MAGIC[..]) {
        return Err(DataError::BadMagic { expected: "ECHW1" });
    }
    let version = cur.u16("version")?;
    if version != DATASET_VERSION {
        return Err(DataError::BadVersion(version));
    }
    let channels = cur.u16("channel count")? as usize;
    let count = cur.u64("record count")? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 20));
    for i in 0..count {
        cur.record = Some(i);
        let sample_id = cur.string("sample_id")?;
        let writer_id = cur.string("writer_id")?;
        let transcript = cur.string("transcript")?;
        let frames = cur.u32("frame count")? as usize;
        let raw = cur.take(frames * channels * 4, "signal payload")?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let record = SampleRecord {
            sample_id,
            writer_id,
            transcript,
            signal: Signal {
                frames,
                channels,
                data,
            },
        };
        validate(i, &record, channels)?;
        records.push(record);
    }
    Ok((records, channels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, text: &str, frames: usize) -> SampleRecord {
        SampleRecord {
            sample_id: id.into(),
            writer_id: "w0".into(),
            transcript: text.into(),
            signal: Signal::new(
                frames,
                2,
                (0..frames * 2).map(|i| i as f32 * 0.37 - 1.1).collect(),
            )
            .unwrap(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let records = vec![sample("a", "hallo", 3), sample("b", "über", 5)];
        let bytes = write_dataset(&records, 2).unwrap();
        let (back, ch) = read_dataset(&bytes).unwrap();
        assert_eq!(ch, 2);
        assert_eq!(back, records);
        assert_eq!(write_dataset(&back, 2).unwrap(), bytes);
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = write_dataset(&[sample("a", "x", 4)], 2).unwrap();
        let cut = &bytes[..bytes.len() - 3];
        match read_dataset(cut) {
            Err(DataError::Truncated { offset, record, .. }) => {
                assert_eq!(offset, cut.len());
                assert_eq!(record, Some(0));
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn nan_rejected_with_sample_id() {
        let mut r = sample("bad-one", "x", 2);
        r.signal.data[3] = f32::NAN;
        match write_dataset(&[r.clone()], 2) {
            Err(DataError::NonFinite {
                sample_id,
                frame,
                channel,
                ..
            }) => {
                assert_eq!(sample_id, "bad-one");
                assert_eq!((frame, channel), (1, 1));
            }
            other => panic!("{other:?}"),
        }
        // Also on load: forge the bytes.
        let mut bytes = write_dataset(&[sample("bad-one", "x", 2)], 2).unwrap();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(
            read_dataset(&bytes),
            Err(DataError::NonFinite { .. })
        ));
    }

    #[test]
    fn bad_magic_and_version() {
        assert!(matches!(
            read_dataset(b"NOPE1\x01\x00"),
            Err(DataError::BadMagic { .. })
        ));
        let mut bytes = write_dataset(&[], 2).unwrap();
        bytes[5] = 9;
        assert!(matches!(
            read_dataset(&bytes),
            Err(DataError::BadVersion(9))
        ));
    }
}
