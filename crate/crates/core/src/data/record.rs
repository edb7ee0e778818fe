use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const STANDARD_LEADS: usize = 12;
pub const RECORD_MAGIC: &[u8; 4] = b"S2M2";
pub const RECORD_VERSION: u32 = 1;
/// Magic plus five `u32` fields.
pub const RECORD_HEADER_LEN: usize = 24;

/// A multi-lead recording in millivolts, lead-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EcgRecord {
    leads: usize,
    length: usize,
    samples: Vec<f64>,
    pub sample_rate_hz: u32,
    pub label: usize,
    pub id: String,
}

impl EcgRecord {
    pub fn new(
        leads: usize,
        samples: Vec<f64>,
        sample_rate_hz: u32,
        label: usize,
        id: impl Into<String>,
    ) -> Result<Self> {
        if leads == 0 || samples.is_empty() || !samples.len().is_multiple_of(leads) {
            return Err(Error::InvalidArgument(format!(
                "{} samples cannot be split evenly into {leads} leads",
                samples.len()
            )));
        }
        if sample_rate_hz == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            leads,
            length: samples.len() / leads,
            samples,
            sample_rate_hz,
            label,
            id: id.into(),
        })
    }

    pub fn from_leads(leads: Vec<Vec<f64>>, sample_rate_hz: u32, label: usize, id: impl Into<String>) -> Result<Self> {
        let n = leads.len();
        let len = leads.first().map_or(0, Vec::len);
        if leads.iter().any(|l| l.len() != len) {
            return Err(Error::InvalidArgument("leads have different lengths".into()));
        }
        Self::new(n, leads.concat(), sample_rate_hz, label, id)
    }

    pub fn leads(&self) -> usize {
        self.leads
    }

    pub fn len(&self) -> usize {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        self.length == 0
    }

    pub fn lead(&self, i: usize) -> &[f64] {
        &self.samples[i * self.length..(i + 1) * self.length]
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn lead_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.chunks(self.length)
    }

    /// Rejects anything but a standard 12-lead record.
    pub fn ensure_standard(&self) -> Result<()> {
        if self.leads != STANDARD_LEADS {
            return Err(Error::InvalidArgument(format!(
                "record `{}` has {} leads, expected {STANDARD_LEADS}",
                self.id, self.leads
            )));
        }
        Ok(())
    }

    /// Serializes to the on-disk layout: header then `f32` samples, all
    /// little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(RECORD_HEADER_LEN + 4 * self.samples.len());
        out.extend_from_slice(RECORD_MAGIC);
        for field in [
            RECORD_VERSION,
            self.leads as u32,
            self.length as u32,
            self.sample_rate_hz,
            self.label as u32,
        ] {
            out.extend_from_slice(&field.to_le_bytes());
        }
        for &v in &self.samples {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], id: impl Into<String>) -> Result<Self> {
        if bytes.len() < RECORD_HEADER_LEN {
            return Err(Error::Format {
                offset: bytes.len() as u64,
                detail: format!("header needs {RECORD_HEADER_LEN} bytes, file has {}", bytes.len()),
            });
        }
        if &bytes[..4] != RECORD_MAGIC {
            return Err(Error::Format {
                offset: 0,
                detail: format!("bad magic {:?}", &bytes[..4]),
            });
        }
        let field = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
        if field(0) != RECORD_VERSION {
            return Err(Error::Format {
                offset: 4,
                detail: format!("unsupported version {}", field(0)),
            });
        }
        let (leads, length, rate, label) = (field(1) as usize, field(2) as usize, field(3), field(4) as usize);
        let expected = RECORD_HEADER_LEN + 4 * leads * length;
        if bytes.len() != expected {
            return Err(Error::Format {
                offset: bytes.len().min(expected) as u64,
                detail: format!("expected {expected} bytes for {leads}x{length} samples, found {}", bytes.len()),
            });
        }
        let samples = bytes[RECORD_HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        Self::new(leads, samples, rate, label, id).map_err(|e| Error::Format {
            offset: RECORD_HEADER_LEN as u64,
            detail: e.to_string(),
        })
    }

    /// Same record with every sample rounded to the `f32` grid used on disk.
    pub fn quantized(mut self) -> Self {
        self.samples.iter_mut().for_each(|v| *v = f64::from(*v as f32));
        self
    }
}

pub fn write_record(record: &EcgRecord, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&record.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads a record file; the record id is the file stem.
pub fn read_record(path: impl AsRef<Path>) -> Result<EcgRecord> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    EcgRecord::from_bytes(&bytes, id)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EcgRecord {
        let samples = (0..12 * 2500).map(|i| ((i as f64) * 0.01).sin()).collect();
        EcgRecord::new(12, samples, 250, 2, "r").unwrap().quantized()
    }

    #[test]
    fn header_is_24_bytes() {
        let r = sample();
        let bytes = r.to_bytes();
        assert_eq!(bytes.len(), RECORD_HEADER_LEN + 4 * 12 * 2500);
        assert_eq!(&bytes[..4], b"S2M2");
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2500);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.s2m2");
        let r = sample();
        write_record(&r, &path).unwrap();
        assert_eq!(read_record(&path).unwrap(), r);
    }

    #[test]
    fn corrupt_inputs_report_offsets() {
        let mut bytes = sample().to_bytes();
        bytes.truncate(bytes.len() - 3);
        let err = EcgRecord::from_bytes(&bytes, "x").unwrap_err().to_string();
        assert!(err.contains("expected 120024 bytes"), "{err}");
        assert!(err.contains("found 120021"), "{err}");

        let mut bad = sample().to_bytes();
        bad[0] = b'X';
        assert!(matches!(EcgRecord::from_bytes(&bad, "x"), Err(Error::Format { offset: 0, .. })));
        let mut ver = sample().to_bytes();
        ver[4] = 9;
        assert!(matches!(EcgRecord::from_bytes(&ver, "x"), Err(Error::Format { offset: 4, .. })));
        assert!(matches!(EcgRecord::from_bytes(&ver[..10], "x"), Err(Error::Format { offset: 10, .. })));
    }
}
