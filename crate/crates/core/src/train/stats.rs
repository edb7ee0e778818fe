use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Critical value for a two-sided 95% interval over five runs (df = 4).
pub const T_95_DF4: f64 = 2.776;

fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    (mean, ss / (n - 1.0))
}

fn need_two(values: &[f64], what: &str) -> Result<()> {
    if values.len() < 2 {
        return Err(Error::InvalidArgument(format!("{what} needs at least 2 values, got {}", values.len())));
    }
    Ok(())
}

/// `x̄ ± t·s/√n` with the sample standard deviation `s`.
pub fn confidence_interval(values: &[f64], t: f64) -> Result<(f64, f64)> {
    need_two(values, "a confidence interval")?;
    let (mean, var) = mean_var(values);
    let half = t * var.sqrt() / (values.len() as f64).sqrt();
    Ok((mean - half, mean + half))
}

/// Two-sided p-value of `|T| ≥ |t|` for Student's t with `df` degrees of
/// freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    2.0 * dist.sf(t.abs())
}

/// Independent two-sample t-test with pooled variance; two-sided p-value.
/// Zero pooled variance gives 1 for equal means and 0 otherwise.
pub fn t_test(a: &[f64], b: &[f64]) -> Result<f64> {
    need_two(a, "a t-test sample")?;
    need_two(b, "a t-test sample")?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let ((ma, va), (mb, vb)) = (mean_var(a), mean_var(b));
    let df = na + nb - 2.0;
    let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / df;
    let se = (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    if se == 0.0 {
        return Ok(if ma == mb { 1.0 } else { 0.0 });
    }
    Ok(t_two_sided_p((ma - mb) / se, df))
}
