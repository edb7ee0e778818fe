//! Pyramid discrete wavelet transform with symmetric (half-sample)
//! boundary extension.

use crate::error::{Error, Result};

/// Daubechies-6 decomposition low-pass taps.
const DB6_DEC_LO: [f64; 12] = [
    -0.00107730108499558,
    0.004777257511010651,
    0.0005538422009938016,
    -0.031582039318031156,
    0.02752286553001629,
    0.09750160558707936,
    -0.12976686756709563,
    -0.22626469396516913,
    0.3152503517092432,
    0.7511339080215775,
    0.4946238903983854,
    0.11154074335008017,
];

/// Analysis and synthesis filters of an orthogonal wavelet.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletBank {
    pub dec_lo: Vec<f64>,
    pub dec_hi: Vec<f64>,
    pub rec_lo: Vec<f64>,
    pub rec_hi: Vec<f64>,
}

impl WaveletBank {
    /// Builds the four filters from the decomposition low-pass via the
    /// quadrature-mirror relation `hi[j] = (−1)^(j+1)·lo[F−1−j]`.
    pub fn from_dec_lo(dec_lo: Vec<f64>) -> Result<Self> {
        let f = dec_lo.len();
        if f < 2 || !f.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("filter length {f} must be even and at least 2")));
        }
        let dec_hi = (0..f)
            .map(|j| if j % 2 == 0 { -dec_lo[f - 1 - j] } else { dec_lo[f - 1 - j] })
            .collect::<Vec<_>>();
        let rec_lo = dec_lo.iter().rev().copied().collect();
        let rec_hi = dec_hi.iter().rev().copied().collect();
        Ok(Self {
            dec_lo,
            dec_hi,
            rec_lo,
            rec_hi,
        })
    }

    pub fn db6() -> Self {
        Self::from_dec_lo(DB6_DEC_LO.to_vec()).expect("db6 taps are well formed")
    }

    pub fn filter_len(&self) -> usize {
        self.dec_lo.len()
    }
}

/// Index into a symmetrically extended signal of length `n`
/// (`… x1 x0 | x0 x1 … x_{n−1} | x_{n−1} …`).
pub(crate) fn symmetric_index(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let r = i.rem_euclid(period) as usize;
    if r < n {
        r
    } else {
        2 * n - 1 - r
    }
}

/// Output length of one analysis step.
pub fn coeff_len(n: usize, filter_len: usize) -> usize {
    (n + filter_len - 1) / 2
}

/// One analysis step: `(approximation, detail)`.
pub fn dwt_step(x: &[f64], bank: &WaveletBank) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let m = coeff_len(n, bank.filter_len());
    let mut a = vec![0.0; m];
    let mut d = vec![0.0; m];
    for k in 0..m {
        let centre = 2 * k as isize + 1;
        let (mut sa, mut sd) = (0.0, 0.0);
        for (j, (lo, hi)) in bank.dec_lo.iter().zip(&bank.dec_hi).enumerate() {
            let v = x[symmetric_index(centre - j as isize, n)];
            sa += lo * v;
            sd += hi * v;
        }
        a[k] = sa;
        d[k] = sd;
    }
    (a, d)
}

/// One synthesis step rebuilding `n` samples; the inverse of [`dwt_step`].
pub fn idwt_step(a: &[f64], d: &[f64], n: usize, bank: &WaveletBank) -> Result<Vec<f64>> {
    let f = bank.filter_len();
    if a.len() != d.len() || a.len() != coeff_len(n, f) {
        return Err(Error::shape(
            "idwt",
            format!("coefficient lengths {}/{} do not match a {n}-sample signal", a.len(), d.len()),
        ));
    }
    let mut x = vec![0.0; n];
    for (m, out) in x.iter_mut().enumerate() {
        // Taps j = 2k + 1 − m inside [0, F).
        let k_lo = m.saturating_sub(1).div_ceil(2);
        let k_hi = ((m + f - 2) / 2).min(a.len() - 1);
        let mut s = 0.0;
        for k in k_lo..=k_hi {
            let j = 2 * k + 1 - m;
            s += a[k] * bank.dec_lo[j] + d[k] * bank.dec_hi[j];
        }
        *out = s;
    }
    Ok(x)
}

/// Multi-level decomposition `{A_L, D_1..D_L}`.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletCoeffs {
    pub approx: Vec<f64>,
    /// `details[0]` is `D1`, the finest band.
    pub details: Vec<Vec<f64>>,
    /// Signal length entering each level; `lengths[0]` is the input length.
    pub lengths: Vec<usize>,
}

impl WaveletCoeffs {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    /// Total squared magnitude over all bands.
    pub fn energy(&self) -> f64 {
        self.approx.iter().chain(self.details.iter().flatten()).map(|v| v * v).sum()
    }
}

pub fn dwt(signal: &[f64], bank: &WaveletBank, levels: usize) -> Result<WaveletCoeffs> {
    let min = 1usize << levels;
    if signal.len() < min {
        return Err(Error::TooShort { len: signal.len(), min });
    }
    let mut approx = signal.to_vec();
    let mut details = Vec::with_capacity(levels);
    let mut lengths = Vec::with_capacity(levels);
    for _ in 0..levels {
        lengths.push(approx.len());
        let (a, d) = dwt_step(&approx, bank);
        details.push(d);
        approx = a;
    }
    Ok(WaveletCoeffs {
        approx,
        details,
        lengths,
    })
}

pub fn idwt(coeffs: &WaveletCoeffs, bank: &WaveletBank) -> Result<Vec<f64>> {
    if coeffs.lengths.len() != coeffs.details.len() {
        return Err(Error::shape("idwt", "one stored length per level is required"));
    }
    let mut approx = coeffs.approx.clone();
    for (d, &n) in coeffs.details.iter().zip(&coeffs.lengths).rev() {
        approx = idwt_step(&approx, d, n, bank)?;
    }
    Ok(approx)
}
