//! Runs resampling, wavelet denoising and z-scoring on a 500 Hz record
//! carrying mains hum and baseline drift.
//!
//! cargo run --release --example preprocess

use std::f64::consts::TAU;

use s2m2ecg::data::{generate_synthetic, MAINS_HZ};
use s2m2ecg::preprocess::{preprocess_record, wavelet_denoise};

/// Power at one frequency by projection onto a quadrature pair.
fn tone_power(x: &[f64], freq: f64, fs: f64) -> f64 {
    let (c, s) = x.iter().enumerate().fold((0.0, 0.0), |(c, s), (i, v)| {
        let w = TAU * freq * i as f64 / fs;
        (c + v * w.cos(), s + v * w.sin())
    });
    2.0 * (c * c + s * s) / (x.len() * x.len()) as f64
}

fn main() -> s2m2ecg::Result<()> {
    let raw = generate_synthetic(2, 1, 5000, 500, 3)?.remove(0);
    let out = preprocess_record(&raw)?;
    println!(
        "input {} Hz x {} samples -> output {} Hz x {} samples, flat leads {:?}",
        raw.sample_rate_hz,
        raw.len(),
        out.record.sample_rate_hz,
        out.record.len(),
        out.flat_leads
    );

    // Denoising alone, at the model's rate, on the resampled lead.
    let lead = s2m2ecg::preprocess::resample_to_250(&raw)?.lead(0).to_vec();
    let clean = wavelet_denoise(&lead)?;
    for (name, f) in [("mains", MAINS_HZ), ("drift", 0.2), ("qrs band", 8.0)] {
        let kept = tone_power(&clean, f, 250.0) / tone_power(&lead, f, 250.0);
        println!("{name:>8} at {f:>5} Hz: {:.1}% of power kept", 100.0 * kept);
    }

    let z = out.record.lead(0);
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / z.len() as f64).sqrt();
    println!("lead 0 after z-score: mean {mean:.2e}, sd {sd:.12}");
    Ok(())
}
