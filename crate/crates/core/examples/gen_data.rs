//! Writes a seeded synthetic 12-lead dataset with a stratified split.
//!
//! cargo run --example gen_data -- [out_dir]

use s2m2ecg::data::{generate_synthetic, split, write_dataset, Split, MANIFEST_FILE};

fn main() -> s2m2ecg::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("s2m2ecg-gen-data"));

    // Four rhythm classes, 25 ten-second records each at 250 Hz.
    let records = generate_synthetic(4, 25, 2500, 250, 7)?;
    let names = ["slow", "normal", "fast", "no-p-wave"].map(String::from).to_vec();
    let manifest = write_dataset(&records, names, &out)?;
    let manifest = split(&manifest, [0.7, 0.15, 0.15], 7)?;
    manifest.save(out.join(MANIFEST_FILE))?;

    println!("wrote {} records to {}", manifest.entries.len(), out.display());
    for sp in Split::ALL {
        println!("{:>5}: per-class {:?}", sp.as_str(), manifest.class_counts(Some(sp)));
    }
    let first = &records[0];
    println!("record {}: {} leads x {} samples, label {}", first.id, first.leads(), first.len(), first.label);
    Ok(())
}
