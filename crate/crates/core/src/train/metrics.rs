use std::fmt;

use crate::error::{Error, Result};

/// One-vs-rest confusion counts of one class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ClassCounts {
    /// `TP/(TP+FP)`, or 0 when the class is never predicted.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `TP/(TP+FN)`, or 0 when the class never occurs.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        harmonic(self.precision(), self.recall())
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Macro-averaged classification metrics over one split.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    /// Harmonic mean of the macro precision and macro recall.
    pub f1: f64,
    pub auc: f64,
    pub per_class: Vec<ClassCounts>,
    pub per_class_auc: Vec<f64>,
    pub samples: usize,
    pub warnings: Vec<String>,
}

impl MetricsReport {
    /// Scores `probs` (`samples × classes`, row-major) against `labels`.
    /// The predicted class is the first maximum of each row.
    pub fn from_scores(probs: &[f64], labels: &[usize], classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("cannot score an empty split".into()));
        }
        if classes < 2 || probs.len() != labels.len() * classes {
            return Err(Error::shape(
                "metrics",
                format!("{} scores for {} labels and {classes} classes", probs.len(), labels.len()),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!("label {bad} out of range for {classes} classes")));
        }
        let predicted: Vec<usize> = probs.chunks(classes).map(argmax).collect();
        let n = labels.len();
        let mut per_class = vec![ClassCounts::default(); classes];
        for (&y, &p) in labels.iter().zip(&predicted) {
            for (c, counts) in per_class.iter_mut().enumerate() {
                match (y == c, p == c) {
                    (true, true) => counts.tp += 1,
                    (false, false) => counts.tn += 1,
                    (false, true) => counts.fp += 1,
                    (true, false) => counts.fn_ += 1,
                }
            }
        }
        let mut warnings = Vec::new();
        let mut per_class_auc = Vec::with_capacity(classes);
        for (c, counts) in per_class.iter().enumerate() {
            let positives = counts.tp + counts.fn_;
            if positives == 0 {
                warnings.push(format!("class {c} absent from split; its recall and AUC count as 0"));
                per_class_auc.push(0.0);
            } else if positives == n {
                warnings.push(format!("class {c} is the only class present; its AUC counts as 0"));
                per_class_auc.push(0.0);
            } else {
                let scores: Vec<f64> = probs.iter().skip(c).step_by(classes).copied().collect();
                let is_pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
                per_class_auc.push(roc_auc(&scores, &is_pos));
            }
        }
        let mean = |f: &dyn Fn(&ClassCounts) -> f64| per_class.iter().map(f).sum::<f64>() / classes as f64;
        let precision = mean(&|c| c.precision());
        let recall = mean(&|c| c.recall());
        let correct = labels.iter().zip(&predicted).filter(|(y, p)| y == p).count();
        Ok(Self {
            accuracy: correct as f64 / n as f64,
            precision,
            recall,
            f1: harmonic(precision, recall),
            auc: per_class_auc.iter().sum::<f64>() / classes as f64,
            per_class,
            per_class_auc,
            samples: n,
            warnings,
        })
    }
}

impl fmt::Display for MetricsReport {
    /// One logfmt line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "samples={} acc={:.6} precision={:.6} recall={:.6} f1={:.6} auc={:.6}",
            self.samples, self.accuracy, self.precision, self.recall, self.f1, self.auc
        )
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Area under the ROC curve by the trapezoid rule. Tied scores form one
/// ROC step, so a tie between a positive and a negative counts one half.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let pos_total = positive.iter().filter(|&&p| p).count() as f64;
    let neg_total = positive.len() as f64 - pos_total;
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let (tp0, fp0) = (tp, fp);
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        area += (fp - fp0) * (tp + tp0) / 2.0;
    }
    area / (pos_total * neg_total)
}
