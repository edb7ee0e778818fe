//! Scores a hand-written set of predictions with macro metrics.
//!
//! cargo run --example metrics

use s2m2ecg::train::{roc_auc, MetricsReport};

fn main() -> s2m2ecg::Result<()> {
    let labels = [0, 0, 1, 1, 2, 2, 2, 1];
    #[rustfmt::skip]
    let probs = [
        0.7, 0.2, 0.1,
        0.4, 0.5, 0.1,
        0.1, 0.8, 0.1,
        0.2, 0.6, 0.2,
        0.1, 0.2, 0.7,
        0.3, 0.3, 0.4,
        0.5, 0.1, 0.4,
        0.2, 0.3, 0.5,
    ];
    let report = MetricsReport::from_scores(&probs, &labels, 3)?;
    println!("{report}");
    for (c, counts) in report.per_class.iter().enumerate() {
        println!(
            "class {c}: tp={} fp={} fn={} precision={:.3} recall={:.3} auc={:.3}",
            counts.tp,
            counts.fp,
            counts.fn_,
            counts.precision(),
            counts.recall(),
            report.per_class_auc[c]
        );
    }
    // Ties between a positive and a negative count one half.
    println!("auc with a tie: {}", roc_auc(&[0.9, 0.5, 0.5, 0.1], &[true, true, false, false]));

    let missing = MetricsReport::from_scores(&[0.9, 0.1, 0.0, 0.2, 0.8, 0.0], &[0, 1], 3)?;
    println!("warnings: {:?}", missing.warnings);
    Ok(())
}
