//! Tone generation and single-frequency power by quadrature projection.

#![allow(dead_code)]

use std::f64::consts::TAU;

pub fn sine(freq: f64, fs: f64, n: usize, phase: f64) -> Vec<f64> {
    (0..n).map(|i| (TAU * freq * i as f64 / fs + phase).sin()).collect()
}

/// Power of `x` at `freq`, by projection onto a quadrature pair.
pub fn tone_power(x: &[f64], freq: f64, fs: f64) -> f64 {
    let (mut c, mut s) = (0.0, 0.0);
    for (i, v) in x.iter().enumerate() {
        let w = TAU * freq * i as f64 / fs;
        c += v * w.cos();
        s += v * w.sin();
    }
    let n = x.len() as f64;
    2.0 * (c * c + s * s) / (n * n)
}

pub fn mean_square(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
