//! Hand-crafted rhythm and morphology features used to check that
//! synthetic classes are separable without any learning.

use s2m2ecg::data::EcgRecord;

fn moving_mean(x: &[f64], win: usize) -> Vec<f64> {
    let half = win / 2;
    let mut prefix = vec![0.0; x.len() + 1];
    for (i, v) in x.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + win - half).min(x.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Lead sum with mains removed by a one-period box filter and baseline
/// removed by a one-second moving mean.
fn conditioned(r: &EcgRecord) -> Vec<f64> {
    let fs = r.sample_rate_hz as f64;
    let mut sum = vec![0.0; r.len()];
    for lead in r.lead_iter() {
        for (s, v) in sum.iter_mut().zip(lead) {
            *s += v;
        }
    }
    let smooth = moving_mean(&sum, (fs / 50.0).round() as usize);
    let base = moving_mean(&smooth, fs as usize);
    smooth.iter().zip(&base).map(|(a, b)| a - b).collect()
}

pub fn r_peaks(r: &EcgRecord) -> (Vec<usize>, Vec<f64>) {
    let x = conditioned(r);
    let fs = r.sample_rate_hz as f64;
    let thr = 0.5 * x.iter().cloned().fold(f64::MIN, f64::max);
    let refractory = (0.25 * fs) as usize;
    let mut peaks = Vec::new();
    for i in 0..x.len() {
        let lo = i.saturating_sub(refractory);
        let hi = (i + refractory + 1).min(x.len());
        if x[i] > thr && x[lo..hi].iter().all(|&v| v <= x[i]) {
            peaks.push(i);
        }
    }
    (peaks, x)
}

/// `(mean RR interval, mean half-height QRS width)`, both in samples.
pub fn features(r: &EcgRecord) -> (f64, f64) {
    let (peaks, x) = r_peaks(r);
    let rr = peaks.windows(2).map(|w| (w[1] - w[0]) as f64).sum::<f64>() / (peaks.len() - 1) as f64;
    let widths: Vec<f64> = peaks
        .iter()
        .map(|&p| {
            let half = x[p] / 2.0;
            let left = (0..p).rev().take_while(|&i| x[i] > half).count();
            let right = (p + 1..x.len()).take_while(|&i| x[i] > half).count();
            (left + right + 1) as f64
        })
        .collect();
    (rr, widths.iter().sum::<f64>() / widths.len() as f64)
}

/// Accuracy of a nearest-centroid classifier on standardized features,
/// fitted and scored on the same records.
pub fn nearest_centroid_accuracy(records: &[EcgRecord], classes: usize) -> f64 {
    let feats: Vec<(f64, f64)> = records.iter().map(features).collect();
    let n = feats.len() as f64;
    let stats = |f: &dyn Fn(&(f64, f64)) -> f64| {
        let m = feats.iter().map(f).sum::<f64>() / n;
        let s = (feats.iter().map(|v| (f(v) - m).powi(2)).sum::<f64>() / n).sqrt();
        (m, s)
    };
    let (m0, s0) = stats(&|v| v.0);
    let (m1, s1) = stats(&|v| v.1);
    let z: Vec<(f64, f64)> = feats.iter().map(|v| ((v.0 - m0) / s0, (v.1 - m1) / s1)).collect();
    let mut cent = vec![(0.0, 0.0, 0usize); classes];
    for (f, r) in z.iter().zip(records) {
        let c = &mut cent[r.label];
        c.0 += f.0;
        c.1 += f.1;
        c.2 += 1;
    }
    let cent: Vec<(f64, f64)> = cent.iter().map(|c| (c.0 / c.2 as f64, c.1 / c.2 as f64)).collect();
    let correct = z
        .iter()
        .zip(records)
        .filter(|(f, r)| {
            let best = (0..classes)
                .min_by(|&a, &b| {
                    let d = |c: usize| (f.0 - cent[c].0).powi(2) + (f.1 - cent[c].1).powi(2);
                    d(a).total_cmp(&d(b))
                })
                .unwrap();
            best == r.label
        })
        .count();
    correct as f64 / n
}
