//! Slice-level forward and backward kernels shared by the eager and taped
//! backends. Shapes are validated by the callers; these functions only index.

pub const NORM_EPS: f64 = 1e-5;
pub const SOFTPLUS_LINEAR_ABOVE: f64 = 30.0;

/// `c[m×n] (+)= a[m×k] · b[k×n]`, all row-major.
pub fn matmul(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices cover exactly the strided extents passed to dgemm.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Accumulates `ga += gc · bᵀ` and `gb += aᵀ · gc`.
pub fn matmul_backward(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    b: &[f64],
    gc: &[f64],
    ga: Option<&mut [f64]>,
    gb: Option<&mut [f64]>,
) {
    if let Some(ga) = ga {
        // SAFETY: bᵀ is read through swapped strides of the k×n buffer.
        unsafe {
            matrixmultiply::dgemm(
                m,
                n,
                k,
                1.0,
                gc.as_ptr(),
                n as isize,
                1,
                b.as_ptr(),
                1,
                n as isize,
                1.0,
                ga.as_mut_ptr(),
                k as isize,
                1,
            );
        }
    }
    if let Some(gb) = gb {
        // SAFETY: aᵀ is read through swapped strides of the m×k buffer.
        unsafe {
            matrixmultiply::dgemm(
                k,
                m,
                n,
                1.0,
                a.as_ptr(),
                1,
                k as isize,
                gc.as_ptr(),
                n as isize,
                1,
                1.0,
                gb.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > SOFTPLUS_LINEAR_ABOVE {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

#[inline]
pub fn softplus_grad(x: f64) -> f64 {
    if x > SOFTPLUS_LINEAR_ABOVE {
        1.0
    } else {
        sigmoid(x)
    }
}

/// `out = exp(−|x|)`, the shared term of the slice activations below.
fn exp_neg_abs(x: &[f64], out: &mut [f64]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = -v.abs();
    }
    exp_in_place(out);
}

/// Branch-free logistic over a slice, `out = σ(x)`.
pub fn sigmoid_slice(x: &[f64], out: &mut [f64]) {
    exp_neg_abs(x, out);
    for (o, &v) in out.iter_mut().zip(x) {
        let e = *o;
        let s = 1.0 / (1.0 + e);
        *o = if v >= 0.0 { s } else { e * s };
    }
}

pub fn silu_slice(x: &[f64], out: &mut [f64]) {
    sigmoid_slice(x, out);
    for (o, &v) in out.iter_mut().zip(x) {
        *o *= v;
    }
}

/// `ln(1 + eˣ) = max(x, 0) + ln(1 + e^−|x|)`.
pub fn softplus_slice(x: &[f64], out: &mut [f64]) {
    exp_neg_abs(x, out);
    for (o, &v) in out.iter_mut().zip(x) {
        *o = if v > SOFTPLUS_LINEAR_ABOVE { v } else { v.max(0.0) + o.ln_1p() };
    }
}

/// `out = g · silu'(x)`.
pub fn silu_grad_slice(x: &[f64], g: &[f64], out: &mut [f64]) {
    sigmoid_slice(x, out);
    for ((o, &v), &g) in out.iter_mut().zip(x).zip(g) {
        let s = *o;
        *o = g * s * (1.0 + v * (1.0 - s));
    }
}

/// `out = g · softplus'(x)`.
pub fn softplus_grad_slice(x: &[f64], g: &[f64], out: &mut [f64]) {
    sigmoid_slice(x, out);
    for ((o, &v), &g) in out.iter_mut().zip(x).zip(g) {
        *o = if v > SOFTPLUS_LINEAR_ABOVE { g } else { g * *o };
    }
}

/// Depthwise causal convolution over `[batch, time, channels]` with a
/// `[channels, k]` kernel whose tap `j` weights the sample `j` steps back:
/// `out[t] = Σ_j w[j]·x[t − j]`, with zeros before the first sample.
pub fn causal_conv(batch: usize, time: usize, ch: usize, k: usize, x: &[f64], w: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for b in 0..batch {
        let xb = &x[b * time * ch..(b + 1) * time * ch];
        let ob = &mut out[b * time * ch..(b + 1) * time * ch];
        for t in 0..time {
            let row = &mut ob[t * ch..(t + 1) * ch];
            for j in 0..k {
                let Some(src) = t.checked_sub(j) else { break };
                let xr = &xb[src * ch..(src + 1) * ch];
                for c in 0..ch {
                    row[c] += w[c * k + j] * xr[c];
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn causal_conv_backward(
    batch: usize,
    time: usize,
    ch: usize,
    k: usize,
    x: &[f64],
    w: &[f64],
    g: &[f64],
    mut gx: Option<&mut [f64]>,
    mut gw: Option<&mut [f64]>,
) {
    for b in 0..batch {
        let base = b * time * ch;
        for t in 0..time {
            let gr = &g[base + t * ch..base + (t + 1) * ch];
            for j in 0..k {
                let Some(src) = t.checked_sub(j) else { break };
                let off = base + src * ch;
                if let Some(gx) = gx.as_deref_mut() {
                    for c in 0..ch {
                        gx[off + c] += w[c * k + j] * gr[c];
                    }
                }
                if let Some(gw) = gw.as_deref_mut() {
                    for c in 0..ch {
                        gw[c * k + j] += gr[c] * x[off + c];
                    }
                }
            }
        }
    }
}

/// Normalizes each `dim`-wide row; returns the per-row inverse standard
/// deviations and writes the normalized (pre-affine) values to `xhat`.
pub fn normalize_rows(x: &[f64], dim: usize, xhat: &mut [f64]) -> Vec<f64> {
    let rows = x.len() / dim;
    let mut inv = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x[r * dim..(r + 1) * dim];
        let mean = row.iter().sum::<f64>() / dim as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
        let is = 1.0 / (var + NORM_EPS).sqrt();
        for (o, v) in xhat[r * dim..(r + 1) * dim].iter_mut().zip(row) {
            *o = (v - mean) * is;
        }
        inv.push(is);
    }
    inv
}

/// Backward of row normalization given the gradient w.r.t. the normalized
/// values; accumulates into `gx`.
pub fn normalize_rows_backward(xhat: &[f64], inv: &[f64], dim: usize, gxhat: &[f64], gx: &mut [f64]) {
    let n = dim as f64;
    for (r, &is) in inv.iter().enumerate() {
        let span = r * dim..(r + 1) * dim;
        let xh = &xhat[span.clone()];
        let gh = &gxhat[span.clone()];
        let sum_g: f64 = gh.iter().sum();
        let sum_gx: f64 = gh.iter().zip(xh).map(|(g, x)| g * x).sum();
        for ((o, g), x) in gx[span].iter_mut().zip(gh).zip(xh) {
            *o += is / n * (n * g - sum_g - x * sum_gx);
        }
    }
}

/// Transposes a row-major `rows×cols` buffer.
pub fn transpose(rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

/// How the input matrix is discretized for a step of length Δ.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Discretization {
    /// `B̄ = Δ·B`.
    #[default]
    Simplified,
    /// `B̄ = (ΔA)⁻¹(exp(ΔA) − 1)·ΔB`.
    ExactZoh,
}

impl Discretization {
    /// Coefficient multiplying `B` and, for the backward pass, its
    /// derivatives with respect to Δ and A.
    #[inline]
    pub fn input_coef(self, dt: f64, a: f64, abar: f64) -> (f64, f64, f64) {
        match self {
            Discretization::Simplified => (dt, 1.0, 0.0),
            Discretization::ExactZoh => {
                let z = dt * a;
                if z.abs() < 1e-3 {
                    // Series of (exp(z) - 1) / a and its a-derivative around z = 0.
                    let coef = dt * (1.0 + z * (0.5 + z * (1.0 / 6.0 + z * (1.0 / 24.0 + z / 120.0))));
                    let dcoef = dt * dt * (0.5 + z * (1.0 / 3.0 + z * (0.125 + z / 30.0)));
                    (coef, abar, dcoef)
                } else {
                    let coef = z.exp_m1() / a;
                    (coef, abar, (dt * abar * a - (abar - 1.0)) / (a * a))
                }
            }
        }
    }
}

const LN2_HI: f64 = 6.931_471_803_691_238e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
/// Taylor coefficients `1/k!` for `k = 0..=13`.
const EXP_TAYLOR: [f64; 14] = [
    1.0,
    1.0,
    0.5,
    1.0 / 6.0,
    1.0 / 24.0,
    1.0 / 120.0,
    1.0 / 720.0,
    1.0 / 5_040.0,
    1.0 / 40_320.0,
    1.0 / 362_880.0,
    1.0 / 3_628_800.0,
    1.0 / 39_916_800.0,
    1.0 / 479_001_600.0,
    1.0 / 6_227_020_800.0,
];
/// 1.5·2⁵²: adding it rounds to an integer held in the low mantissa bits.
const ROUND_MAGIC: f64 = 6_755_399_441_055_744.0;

/// Branch-free `exp`, within a couple of ulps of `f64::exp` on
/// `[-708, 709]`; smaller arguments give 0. Written so slice loops over it
/// vectorize.
#[inline(always)]
pub fn exp_fast(x: f64) -> f64 {
    let xc = x.clamp(-708.0, 709.0);
    let t = xc * std::f64::consts::LOG2_E + ROUND_MAGIC;
    let k = t - ROUND_MAGIC;
    let r = (xc - k * LN2_HI) - k * LN2_LO;
    // Taylor series to degree 13; |r| ≤ ln2/2 keeps the tail below 1e-17.
    // Estrin evaluation keeps the dependency chain short.
    const C: [f64; 14] = EXP_TAYLOR;
    let r2 = r * r;
    let r4 = r2 * r2;
    let r8 = r4 * r4;
    let q0 = (C[0] + C[1] * r) + (C[2] + C[3] * r) * r2;
    let q1 = (C[4] + C[5] * r) + (C[6] + C[7] * r) * r2;
    let q2 = (C[8] + C[9] * r) + (C[10] + C[11] * r) * r2;
    let q3 = C[12] + C[13] * r;
    let p = (q0 + q1 * r4) + (q2 + q3 * r4) * r8;
    let ki = t.to_bits() as i64 - ROUND_MAGIC.to_bits() as i64;
    let y = p * f64::from_bits(((ki + 1023) << 52) as u64);
    if x < -708.0 {
        0.0
    } else {
        y
    }
}

#[inline(always)]
pub fn exp_in_place(v: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: AVX2 and FMA support was checked at runtime.
        return unsafe { simd::exp_in_place(v) };
    }
    for x in v {
        *x = exp_fast(*x);
    }
}

/// Four-lane version of [`exp_fast`]; fused multiply-adds may move results
/// by an ulp relative to the scalar path.
#[cfg(target_arch = "x86_64")]
mod simd {
    use std::arch::x86_64::*;

    use super::{LN2_HI, LN2_LO, ROUND_MAGIC};

    #[target_feature(enable = "avx2,fma")]
    unsafe fn exp4(x: __m256d) -> __m256d {
        // Closures would not inherit the target features, so constants are
        // splatted inline.
        let t_ = super::EXP_TAYLOR;
        let xc = _mm256_min_pd(_mm256_max_pd(x, _mm256_set1_pd(-708.0)), _mm256_set1_pd(709.0));
        let t = _mm256_fmadd_pd(xc, _mm256_set1_pd(std::f64::consts::LOG2_E), _mm256_set1_pd(ROUND_MAGIC));
        let k = _mm256_sub_pd(t, _mm256_set1_pd(ROUND_MAGIC));
        let r = _mm256_fnmadd_pd(k, _mm256_set1_pd(LN2_LO), _mm256_fnmadd_pd(k, _mm256_set1_pd(LN2_HI), xc));
        let r2 = _mm256_mul_pd(r, r);
        let r4 = _mm256_mul_pd(r2, r2);
        let r8 = _mm256_mul_pd(r4, r4);
        let mut lin = [_mm256_setzero_pd(); 7];
        for (i, l) in lin.iter_mut().enumerate() {
            *l = _mm256_fmadd_pd(_mm256_set1_pd(t_[2 * i + 1]), r, _mm256_set1_pd(t_[2 * i]));
        }
        let q0 = _mm256_fmadd_pd(lin[1], r2, lin[0]);
        let q1 = _mm256_fmadd_pd(lin[3], r2, lin[2]);
        let q2 = _mm256_fmadd_pd(lin[5], r2, lin[4]);
        let p = _mm256_fmadd_pd(_mm256_fmadd_pd(lin[6], r4, q2), r8, _mm256_fmadd_pd(q1, r4, q0));
        let ki = _mm256_sub_epi64(_mm256_castpd_si256(t), _mm256_set1_epi64x(ROUND_MAGIC.to_bits() as i64));
        let scale = _mm256_slli_epi64::<52>(_mm256_add_epi64(ki, _mm256_set1_epi64x(1023)));
        let y = _mm256_mul_pd(p, _mm256_castsi256_pd(scale));
        _mm256_andnot_pd(_mm256_cmp_pd::<_CMP_LT_OQ>(x, _mm256_set1_pd(-708.0)), y)
    }

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn exp_in_place(v: &mut [f64]) {
        let mut chunks = v.chunks_exact_mut(4);
        for ch in chunks.by_ref() {
            let y = exp4(_mm256_loadu_pd(ch.as_ptr()));
            _mm256_storeu_pd(ch.as_mut_ptr(), y);
        }
        // The tail goes through the same lanes so results do not depend on
        // position.
        let tail = chunks.into_remainder();
        if !tail.is_empty() {
            let mut buf = [0.0; 4];
            buf[..tail.len()].copy_from_slice(tail);
            let y = exp4(_mm256_loadu_pd(buf.as_ptr()));
            _mm256_storeu_pd(buf.as_mut_ptr(), y);
            tail.copy_from_slice(&buf[..tail.len()]);
        }
    }
}

/// Dot product with four partial sums.
#[inline(always)]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in ca.by_ref().zip(cb.by_ref()) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline(always)]
fn sum4(a: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let mut c = a.chunks_exact(4);
    for x in c.by_ref() {
        for l in 0..4 {
            acc[l] += x[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + c.remainder().iter().sum::<f64>()
}

#[derive(Clone, Copy, Debug)]
pub struct ScanDims {
    pub batch: usize,
    pub time: usize,
    pub dim: usize,
    pub state: usize,
}

/// `Ā = exp(Δ·A)` for every `(d, n)` of one time step.
#[inline(always)]
fn step_abar(dt_row: &[f64], a: &[f64], state: usize, abar: &mut [f64]) {
    for (d, &dt) in dt_row.iter().enumerate() {
        let (ad, out) = (&a[d * state..(d + 1) * state], &mut abar[d * state..(d + 1) * state]);
        for (o, &a) in out.iter_mut().zip(ad) {
            *o = dt * a;
        }
    }
    exp_in_place(abar);
}

/// Input coefficients and their Δ and A derivatives for one time step.
#[inline(always)]
fn step_coefs(mode: Discretization, dt_row: &[f64], a: &[f64], abar: &[f64], state: usize, c: &mut [f64], dcdt: &mut [f64], dcda: &mut [f64]) {
    for (d, &dt) in dt_row.iter().enumerate() {
        let r = d * state..(d + 1) * state;
        match mode {
            Discretization::Simplified => {
                c[r.clone()].fill(dt);
                dcdt[r.clone()].fill(1.0);
                dcda[r].fill(0.0);
            }
            Discretization::ExactZoh => {
                for i in r {
                    (c[i], dcdt[i], dcda[i]) = mode.input_coef(dt, a[i], abar[i]);
                }
            }
        }
    }
}

/// Fused discretize-and-scan over `[batch, time, dim]` inputs with
/// data-dependent `B`, `C` of shape `[batch, time, state]`, a diagonal
/// state matrix `a[dim, state]` and skip vector `skip[dim]`.
///
/// When `states` is given it receives every hidden state of the (single)
/// batch element, `[time, dim, state]`.
#[allow(clippy::too_many_arguments)]
pub fn selective_scan_forward(
    dims: ScanDims,
    mode: Discretization,
    x: &[f64],
    delta: &[f64],
    a: &[f64],
    bm: &[f64],
    cm: &[f64],
    skip: &[f64],
    y: &mut [f64],
    states: Option<&mut [f64]>,
) {
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: AVX2 and FMA support was checked at runtime.
        return unsafe { scan_forward_avx2(dims, mode, x, delta, a, bm, cm, skip, y, states) };
    }
    scan_forward_body(dims, mode, x, delta, a, bm, cm, skip, y, states, None)
}

#[cfg(target_arch = "x86_64")]
fn has_avx2() -> bool {
    std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma")
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
#[allow(clippy::too_many_arguments)]
unsafe fn scan_forward_avx2(
    dims: ScanDims,
    mode: Discretization,
    x: &[f64],
    delta: &[f64],
    a: &[f64],
    bm: &[f64],
    cm: &[f64],
    skip: &[f64],
    y: &mut [f64],
    states: Option<&mut [f64]>,
) {
    scan_forward_body(dims, mode, x, delta, a, bm, cm, skip, y, states, None)
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn scan_forward_body(
    dims: ScanDims,
    mode: Discretization,
    x: &[f64],
    delta: &[f64],
    a: &[f64],
    bm: &[f64],
    cm: &[f64],
    skip: &[f64],
    y: &mut [f64],
    mut states: Option<&mut [f64]>,
    mut abars: Option<&mut [f64]>,
) {
    let ScanDims { batch, time, dim, state } = dims;
    let ds = dim * state;
    let mut h = vec![0.0; ds];
    let mut abar = vec![0.0; ds];
    let mut coef = vec![0.0; if mode == Discretization::ExactZoh { ds } else { 0 }];
    for b in 0..batch {
        h.fill(0.0);
        for t in 0..time {
            let row = (b * time + t) * dim;
            let srow = (b * time + t) * state;
            let bt = &bm[srow..srow + state];
            let ct = &cm[srow..srow + state];
            let dt_row = &delta[row..row + dim];
            step_abar(dt_row, a, state, &mut abar);
            if mode == Discretization::ExactZoh {
                for (d, &dt) in dt_row.iter().enumerate() {
                    for i in d * state..(d + 1) * state {
                        coef[i] = mode.input_coef(dt, a[i], abar[i]).0;
                    }
                }
            }
            for d in 0..dim {
                let xv = x[row + d];
                let r = d * state..(d + 1) * state;
                let hd = &mut h[r.clone()];
                let ab = &abar[r.clone()];
                match mode {
                    Discretization::Simplified => {
                        let u = dt_row[d] * xv;
                        for ((h, &a), &b) in hd.iter_mut().zip(ab).zip(bt) {
                            *h = a * *h + b * u;
                        }
                    }
                    Discretization::ExactZoh => {
                        for (((h, &a), &b), &cf) in hd.iter_mut().zip(ab).zip(bt).zip(&coef[r]) {
                            *h = a * *h + cf * b * xv;
                        }
                    }
                }
                y[row + d] = dot(ct, hd) + skip[d] * xv;
            }
            if let Some(st) = states.as_deref_mut() {
                st[t * ds..(t + 1) * ds].copy_from_slice(&h);
            }
            if let Some(ab) = abars.as_deref_mut() {
                ab[t * ds..(t + 1) * ds].copy_from_slice(&abar);
            }
        }
    }
}

pub struct ScanGrads<'a> {
    pub x: &'a mut [f64],
    pub delta: &'a mut [f64],
    pub a: &'a mut [f64],
    pub bm: &'a mut [f64],
    pub cm: &'a mut [f64],
    pub skip: &'a mut [f64],
}

/// Reverse-mode sweep for [`selective_scan_forward`]. Hidden states are
/// recomputed per batch element instead of being kept from the forward
/// pass.
#[allow(clippy::too_many_arguments)]
pub fn selective_scan_backward(
    dims: ScanDims,
    mode: Discretization,
    x: &[f64],
    delta: &[f64],
    a: &[f64],
    bm: &[f64],
    cm: &[f64],
    skip: &[f64],
    gy: &[f64],
    g: ScanGrads<'_>,
) {
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: AVX2 and FMA support was checked at runtime.
        return unsafe { scan_backward_avx2(dims, mode, x, delta, a, bm, cm, skip, gy, g) };
    }
    scan_backward_body(dims, mode, x, delta, a, bm, cm, skip, gy, g)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
#[allow(clippy::too_many_arguments)]
unsafe fn scan_backward_avx2(
    dims: ScanDims,
    mode: Discretization,
    x: &[f64],
    delta: &[f64],
    a: &[f64],
    bm: &[f64],
    cm: &[f64],
    skip: &[f64],
    gy: &[f64],
    g: ScanGrads<'_>,
) {
    scan_backward_body(dims, mode, x, delta, a, bm, cm, skip, gy, g)
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn scan_backward_body(
    dims: ScanDims,
    mode: Discretization,
    x: &[f64],
    delta: &[f64],
    a: &[f64],
    bm: &[f64],
    cm: &[f64],
    skip: &[f64],
    gy: &[f64],
    g: ScanGrads<'_>,
) {
    let ScanDims { batch, time, dim, state } = dims;
    let ds = dim * state;
    let per = time * dim;
    let sper = time * state;
    let mut hs = vec![0.0; time * ds];
    let mut abars = vec![0.0; time * ds];
    let mut gh = vec![0.0; ds];
    let mut ydummy = vec![0.0; per];
    let (mut coef, mut dcdt, mut dcda) = (vec![0.0; ds], vec![0.0; ds], vec![0.0; ds]);
    let mut scratch = vec![0.0; 2 * state];
    let (tx, tdt) = scratch.split_at_mut(state);
    let zeros = vec![0.0; ds];
    for b in 0..batch {
        let one = ScanDims { batch: 1, time, dim, state };
        scan_forward_body(
            one,
            mode,
            &x[b * per..(b + 1) * per],
            &delta[b * per..(b + 1) * per],
            a,
            &bm[b * sper..(b + 1) * sper],
            &cm[b * sper..(b + 1) * sper],
            skip,
            &mut ydummy,
            Some(&mut hs),
            Some(&mut abars),
        );
        gh.fill(0.0);
        for t in (0..time).rev() {
            let row = (b * time + t) * dim;
            let srow = (b * time + t) * state;
            let dt_row = &delta[row..row + dim];
            let abar = &abars[t * ds..(t + 1) * ds];
            if mode == Discretization::ExactZoh {
                step_coefs(mode, dt_row, a, abar, state, &mut coef, &mut dcdt, &mut dcda);
            }
            let h_now = &hs[t * ds..(t + 1) * ds];
            let h_before = if t > 0 { &hs[(t - 1) * ds..t * ds] } else { &zeros[..] };
            let bt = &bm[srow..srow + state];
            let ct = &cm[srow..srow + state];
            let gcm = &mut g.cm[srow..srow + state];
            let gbm = &mut g.bm[srow..srow + state];
            for d in 0..dim {
                let gyv = gy[row + d];
                let xv = x[row + d];
                let dt = dt_row[d];
                g.skip[d] += gyv * xv;
                let r = d * state..(d + 1) * state;
                let (av, ab) = (&a[r.clone()], &abar[r.clone()]);
                let (ht, hp) = (&h_now[r.clone()], &h_before[r.clone()]);
                let ga = &mut g.a[r.clone()];
                match mode {
                    // B̄ = Δ·B: the input coefficient is Δ itself.
                    Discretization::Simplified => {
                        let ghd = &mut gh[r];
                        for n in 0..state {
                            let ght = ghd[n] + gyv * ct[n];
                            gcm[n] += gyv * ht[n];
                            let g_abar = ght * hp[n];
                            let g_bbar = ght * xv;
                            tx[n] = ght * dt * bt[n];
                            tdt[n] = g_abar * ab[n] * av[n] + g_bbar * bt[n];
                            ga[n] += g_abar * ab[n] * dt;
                            gbm[n] += g_bbar * dt;
                            ghd[n] = ght * ab[n];
                        }
                    }
                    Discretization::ExactZoh => {
                        let (cf, cdt, cda) = (&coef[r.clone()], &dcdt[r.clone()], &dcda[r.clone()]);
                        let ghd = &mut gh[r];
                        for n in 0..state {
                            let ght = ghd[n] + gyv * ct[n];
                            gcm[n] += gyv * ht[n];
                            let g_abar = ght * hp[n];
                            let g_bbar = ght * xv;
                            tx[n] = ght * cf[n] * bt[n];
                            tdt[n] = g_abar * ab[n] * av[n] + g_bbar * bt[n] * cdt[n];
                            ga[n] += g_abar * ab[n] * dt + g_bbar * bt[n] * cda[n];
                            gbm[n] += g_bbar * cf[n];
                            ghd[n] = ght * ab[n];
                        }
                    }
                }
                g.x[row + d] += gyv * skip[d] + sum4(tx);
                g.delta[row + d] += sum4(tdt);
            }
        }
    }
}

/// Mean softmax cross-entropy over rows of `logits[batch×classes]`; also
/// returns the softmax probabilities.
pub fn softmax_cross_entropy(logits: &[f64], classes: usize, labels: &[usize]) -> (f64, Vec<f64>) {
    let mut probs = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row = &logits[r * classes..(r + 1) * classes];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        for (p, v) in probs[r * classes..(r + 1) * classes].iter_mut().zip(row) {
            *p = (v - log_z).exp();
        }
        loss += log_z - row[label];
    }
    (loss / labels.len() as f64, probs)
}

pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for (src, dst) in logits.chunks(classes).zip(out.chunks_mut(classes)) {
        let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, v) in dst.iter_mut().zip(src) {
            *o = (v - max).exp();
            sum += *o;
        }
        dst.iter_mut().for_each(|o| *o /= sum);
    }
    out
}
