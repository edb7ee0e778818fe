//! Summarizes five seeded runs per configuration with a 95% interval and
//! compares the two configurations with a two-sample t-test.
//!
//! cargo run --example statistics

use s2m2ecg::train::{confidence_interval, t_test, t_two_sided_p, T_95_DF4};

fn main() -> s2m2ecg::Result<()> {
    let bidirectional = [0.90, 0.91, 0.92, 0.93, 0.94];
    let forward_only = [0.86, 0.88, 0.87, 0.89, 0.85];
    for (name, runs) in [("bidirectional", &bidirectional), ("forward-only", &forward_only)] {
        let (lo, hi) = confidence_interval(runs, T_95_DF4)?;
        println!("{name:>13}: mean {:.4}, 95% CI [{lo:.4}, {hi:.4}]", (lo + hi) / 2.0);
    }
    println!("t-test p = {:.2e}", t_test(&bidirectional, &forward_only)?);
    println!("two-sided p at t=2.776, df=4: {:.4}", t_two_sided_p(2.776, 4.0));
    Ok(())
}
