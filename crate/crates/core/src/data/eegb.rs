//! EEGB on-disk dataset format (bit-exact, little-endian).
//!
//! Layout: magic "EEGB" | u32 version=1 | u32 record_count | per record:
//! u32 subject_id, u32 class_id, u32 image_id, u32 channels, u32 timesteps,
//! then channels*timesteps f32 samples row-major.

use std::fs;
use std::path::Path;

use super::EegRecording;
use crate::error::{CoreError, Result};

const MAGIC: &[u8; 4] = b"EEGB";
const VERSION: u32 = 1;

/// Maximum per-axis extent accepted by the reader; rejects files whose
/// headers would imply absurd allocations.
const MAX_EXTENT: u32 = 1 << 20;

/// Serialize recordings to the EEGB byte layout.
pub fn write_eegb_bytes(recordings: &[EegRecording]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(recordings.len() as u32).to_le_bytes());
    for rec in recordings {
        out.extend_from_slice(&rec.subject_id.to_le_bytes());
        out.extend_from_slice(&rec.class_id.to_le_bytes());
        out.extend_from_slice(&rec.image_id.to_le_bytes());
        out.extend_from_slice(&(rec.channels() as u32).to_le_bytes());
        out.extend_from_slice(&(rec.timesteps() as u32).to_le_bytes());
        for &v in rec.samples() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn save_eegb(path: &Path, recordings: &[EegRecording]) -> Result<()> {
    fs::write(path, write_eegb_bytes(recordings))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(CoreError::Format(format!(
                "truncated EEGB file while reading {what} at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn parse_eegb_bytes(bytes: &[u8]) -> Result<Vec<EegRecording>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(CoreError::Format(format!(
            "bad magic {magic:?}; not an EEGB file"
        )));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CoreError::Format(format!(
            "unsupported EEGB version {version} (expected {VERSION})"
        )));
    }
    let count = r.u32("record count")?;
    let mut out = Vec::with_capacity(count as usize);
    for i in 0..count {
        let subject_id = r.u32("subject_id")?;
        let class_id = r.u32("class_id")?;
        let image_id = r.u32("image_id")?;
        let channels = r.u32("channels")?;
        let timesteps = r.u32("timesteps")?;
        if channels == 0 || timesteps == 0 || channels > MAX_EXTENT || timesteps > MAX_EXTENT {
            return Err(CoreError::Format(format!(
                "record {i}: implausible dimensions {channels} x {timesteps}"
            )));
        }
        let n = channels as usize * timesteps as usize;
        let raw = r.take(4 * n, "samples")?;
        let samples: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        out.push(EegRecording::new(
            samples,
            channels as usize,
            timesteps as usize,
            subject_id,
            class_id,
            image_id,
        )?);
    }
    if r.pos != bytes.len() {
        return Err(CoreError::Format(format!(
            "{} trailing bytes after {count} records",
            bytes.len() - r.pos
        )));
    }
    Ok(out)
}

pub fn load_eegb(path: &Path) -> Result<Vec<EegRecording>> {
    let bytes = fs::read(path)?;
    parse_eegb_bytes(&bytes)
}
