//! Record files, dataset manifests and the synthetic generator.

mod manifest;
mod record;
mod synth;

use std::fs;
use std::path::Path;

pub use manifest::{split, DatasetManifest, ManifestEntry, Split, CLASSES_FILE};
pub use record::{
    read_record, write_record, EcgRecord, RECORD_HEADER_LEN, RECORD_MAGIC, RECORD_VERSION, STANDARD_LEADS,
};
pub use synth::{
    generate_synthetic, ClassProfile, BASE_RATES_BPM, DRIFT_AMPLITUDE, DRIFT_HZ, MAINS_AMPLITUDE, MAINS_HZ,
    MAX_CLASSES, MIN_CLASSES, NOISE_SIGMA, RATE_JITTER_BPM,
};

use crate::error::{Error, Result};

/// Manifest file name used by [`write_dataset`].
pub const MANIFEST_FILE: &str = "manifest.csv";

/// Writes each record as `<dir>/<id>.s2m2` and returns an untagged manifest
/// rooted at `dir`, saved as `manifest.csv` with its class sidecar.
pub fn write_dataset(records: &[EcgRecord], class_names: Vec<String>, dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(records.len());
    for r in records {
        let name = format!("{}.s2m2", r.id);
        write_record(r, dir.join(&name))?;
        entries.push(ManifestEntry {
            path: name.into(),
            label: r.label,
            split: None,
        });
    }
    let manifest = DatasetManifest::new(entries, class_names, dir)?;
    manifest.save(dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
