//! Brute-force metrics from a full confusion matrix and pairwise AUC,
//! independent of the library's one-vs-rest counting and ROC sweep.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use s2m2ecg::train::MetricsReport;

pub struct Reference {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
}

fn div(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

pub fn reference(probs: &[f64], labels: &[usize], classes: usize) -> Reference {
    let n = labels.len();
    // matrix[truth][predicted]
    let mut matrix = vec![vec![0.0f64; classes]; classes];
    for (i, &y) in labels.iter().enumerate() {
        let row = &probs[i * classes..(i + 1) * classes];
        let top = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let pred = row.iter().position(|&v| v == top).unwrap();
        matrix[y][pred] += 1.0;
    }
    let trace: f64 = (0..classes).map(|c| matrix[c][c]).sum();
    let mut precision = 0.0;
    let mut recall = 0.0;
    let mut auc = 0.0;
    for c in 0..classes {
        let col: f64 = (0..classes).map(|r| matrix[r][c]).sum();
        let row: f64 = matrix[c].iter().sum();
        precision += div(matrix[c][c], col);
        recall += div(matrix[c][c], row);
        let pos: Vec<f64> = (0..n).filter(|&i| labels[i] == c).map(|i| probs[i * classes + c]).collect();
        let neg: Vec<f64> = (0..n).filter(|&i| labels[i] != c).map(|i| probs[i * classes + c]).collect();
        if !pos.is_empty() && !neg.is_empty() {
            let mut wins = 0.0;
            for p in &pos {
                for q in &neg {
                    wins += if p > q {
                        1.0
                    } else if p == q {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
            auc += wins / (pos.len() * neg.len()) as f64;
        }
    }
    let k = classes as f64;
    let (precision, recall) = (precision / k, recall / k);
    Reference {
        accuracy: trace / n as f64,
        precision,
        recall,
        f1: div(2.0 * precision * recall, precision + recall),
        auc: auc / k,
    }
}

/// A random scored split. Scores are rounded to two decimals so ties occur.
pub fn random_set(seed: u64) -> (Vec<f64>, Vec<usize>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = rng.random_range(2..7);
    let n = rng.random_range(5..200);
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let coarse = rng.random_bool(0.5);
    let probs = (0..n * classes)
        .map(|_| {
            let v: f64 = rng.random();
            if coarse {
                (v * 100.0).round() / 100.0
            } else {
                v
            }
        })
        .collect();
    (probs, labels, classes)
}

/// Worst absolute gap between the library and the oracle over `sets`
/// random splits.
pub fn worst_metric_gap(sets: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..sets {
        let (probs, labels, classes) = random_set(seed);
        let m = MetricsReport::from_scores(&probs, &labels, classes).unwrap();
        let r = reference(&probs, &labels, classes);
        for (a, b) in [
            (m.accuracy, r.accuracy),
            (m.precision, r.precision),
            (m.recall, r.recall),
            (m.f1, r.f1),
            (m.auc, r.auc),
        ] {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}
