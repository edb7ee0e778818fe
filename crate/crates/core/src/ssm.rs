//! Selective state-space core: discretization, the linear-time scan, the
//! convolution-kernel view of a time-invariant SSM, and the gated
//! (bi)directional block built on top of them.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Backend, Discretization, ParamId, ParamStore, ScanInputs, Tensor, Unary};

/// Per-step transition and input matrices, both `[time, dim, state]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Discretized {
    pub a_bar: Tensor,
    pub b_bar: Tensor,
}

/// Discretizes a diagonal SSM for every time step.
///
/// `delta` is `[time, dim]` (strictly positive), `a` is `[dim, state]` and
/// `b` is the data-dependent input matrix `[time, state]`. `Ā = exp(Δ·A)`
/// elementwise; `B̄` follows `mode`.
pub fn discretize(delta: &Tensor, a: &Tensor, b: &Tensor, mode: Discretization) -> Result<Discretized> {
    let (time, dim) = match *delta.shape() {
        [t, d] => (t, d),
        _ => return Err(Error::shape("discretize", format!("delta must be [time, dim], got {:?}", delta.shape()))),
    };
    if a.rank() != 2 || a.shape()[0] != dim {
        return Err(Error::shape("discretize", format!("A {:?} for dim {dim}", a.shape())));
    }
    let state = a.shape()[1];
    if b.shape() != [time, state] {
        return Err(Error::shape("discretize", format!("B {:?}, expected [{time}, {state}]", b.shape())));
    }
    if let Some(i) = delta.data().iter().position(|&v| v <= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step size must be positive, found {} at index {i}",
            delta.data()[i]
        )));
    }
    let mut a_bar = Vec::with_capacity(time * dim * state);
    let mut b_bar = Vec::with_capacity(time * dim * state);
    for t in 0..time {
        for d in 0..dim {
            let dt = delta.data()[t * dim + d];
            for n in 0..state {
                let av = a.data()[d * state + n];
                let abar = (dt * av).exp();
                let (coef, _, _) = mode.input_coef(dt, av, abar);
                a_bar.push(abar);
                b_bar.push(coef * b.data()[t * state + n]);
            }
        }
    }
    Ok(Discretized {
        a_bar: Tensor::new(vec![time, dim, state], a_bar)?,
        b_bar: Tensor::new(vec![time, dim, state], b_bar)?,
    })
}

/// Hidden state `h[dim, state]` carried across scan steps.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanState {
    dim: usize,
    state: usize,
    h: Vec<f64>,
}

impl ScanState {
    pub fn new(dim: usize, state: usize) -> Self {
        Self {
            dim,
            state,
            h: vec![0.0; dim * state],
        }
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    /// One recurrence step: `h ← Ā∘h + B̄·x`, returning `C·h` per channel.
    pub fn step(&mut self, a_bar: &[f64], b_bar: &[f64], c: &[f64], x: &[f64], y: &mut [f64]) {
        let n = self.state;
        for d in 0..self.dim {
            let mut acc = 0.0;
            for k in 0..n {
                let i = d * n + k;
                self.h[i] = a_bar[i] * self.h[i] + b_bar[i] * x[d];
                acc += c[k] * self.h[i];
            }
            y[d] = acc;
        }
    }
}

/// Sequential scan `h_k = Ā_k∘h_{k−1} + B̄_k·x_k`, `y_k = C_k·h_k + D∘x_k`
/// from `h_0 = 0`.
///
/// Shapes: `a_bar`, `b_bar` `[time, dim, state]`; `c` `[time, state]`;
/// `x` `[dim, time]`; `skip` `[dim]`. Returns `y` as `[dim, time]`.
pub fn selective_scan(a_bar: &Tensor, b_bar: &Tensor, c: &Tensor, x: &Tensor, skip: &Tensor) -> Result<Tensor> {
    let (dim, time) = match *x.shape() {
        [d, t] => (d, t),
        _ => return Err(Error::shape("selective_scan", format!("x must be [dim, time], got {:?}", x.shape()))),
    };
    let state = c.last_dim();
    let ab_shape = [time, dim, state];
    if a_bar.shape() != ab_shape || b_bar.shape() != ab_shape {
        return Err(Error::shape(
            "selective_scan",
            format!("Ā {:?} / B̄ {:?}, expected {ab_shape:?}", a_bar.shape(), b_bar.shape()),
        ));
    }
    if c.shape() != [time, state] || skip.shape() != [dim] {
        return Err(Error::shape("selective_scan", "C must be [time, state] and D [dim]"));
    }
    let mut st = ScanState::new(dim, state);
    let mut y = vec![0.0; dim * time];
    let mut xt = vec![0.0; dim];
    let mut yt = vec![0.0; dim];
    let block = dim * state;
    for t in 0..time {
        for d in 0..dim {
            xt[d] = x.data()[d * time + t];
        }
        st.step(
            &a_bar.data()[t * block..(t + 1) * block],
            &b_bar.data()[t * block..(t + 1) * block],
            &c.data()[t * state..(t + 1) * state],
            &xt,
            &mut yt,
        );
        for d in 0..dim {
            y[d * time + t] = yt[d] + skip.data()[d] * xt[d];
        }
    }
    Tensor::new(vec![dim, time], y)
}

/// Convolution kernel `K̄[d, m] = Σ_n C[n]·Ā[d,n]^m·B̄[d,n]` of a
/// time-invariant diagonal SSM, for `m < len`.
pub fn ssm_kernel(a_bar: &Tensor, b_bar: &Tensor, c: &Tensor, len: usize) -> Result<Tensor> {
    if len < 1 {
        return Err(Error::InvalidArgument("kernel length must be at least 1".into()));
    }
    if a_bar.rank() != 2 || a_bar.shape() != b_bar.shape() || c.shape() != [a_bar.shape()[1]] {
        return Err(Error::shape(
            "ssm_kernel",
            format!("Ā {:?}, B̄ {:?}, C {:?}", a_bar.shape(), b_bar.shape(), c.shape()),
        ));
    }
    let (dim, state) = (a_bar.shape()[0], a_bar.shape()[1]);
    let mut k = vec![0.0; dim * len];
    for d in 0..dim {
        for n in 0..state {
            let a = a_bar.data()[d * state + n];
            let mut term = c.data()[n] * b_bar.data()[d * state + n];
            for m in 0..len {
                k[d * len + m] += term;
                term *= a;
            }
        }
    }
    Tensor::new(vec![dim, len], k)
}

/// Causal convolution `y[d,t] = Σ_{m≤t} K̄[d,m]·x[d,t−m] (+ D[d]·x[d,t])`.
pub fn kernel_apply(kernel: &Tensor, x: &Tensor, skip: Option<&Tensor>) -> Result<Tensor> {
    if x.rank() != 2 || kernel.rank() != 2 || kernel.shape()[0] != x.shape()[0] {
        return Err(Error::shape("kernel_apply", format!("kernel {:?}, x {:?}", kernel.shape(), x.shape())));
    }
    let (dim, time) = (x.shape()[0], x.shape()[1]);
    let len = kernel.shape()[1];
    if len < time {
        return Err(Error::shape("kernel_apply", format!("kernel length {len} shorter than sequence {time}")));
    }
    if skip.is_some_and(|s| s.shape() != [dim]) {
        return Err(Error::shape("kernel_apply", "skip vector width"));
    }
    let mut y = vec![0.0; dim * time];
    for d in 0..dim {
        let kd = &kernel.data()[d * len..];
        let xd = &x.data()[d * time..(d + 1) * time];
        for t in 0..time {
            let mut acc: f64 = (0..=t).map(|m| kd[m] * xd[t - m]).sum();
            if let Some(s) = skip {
                acc += s.data()[d] * xd[t];
            }
            y[d * time + t] = acc;
        }
    }
    Tensor::new(vec![dim, time], y)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Reverse,
}

/// How the forward and reverse scan outputs are merged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DirectionCombine {
    #[default]
    Sum,
    /// Concatenate along the feature axis; the output projection then maps
    /// `2·dim → dim`.
    Concat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockConfig {
    pub dim: usize,
    pub state: usize,
    pub conv_kernel: usize,
    pub discretization: Discretization,
    pub bidirectional: bool,
    pub combine: DirectionCombine,
}

impl BlockConfig {
    pub fn new(dim: usize, state: usize) -> Self {
        Self {
            dim,
            state,
            conv_kernel: 4,
            discretization: Discretization::Simplified,
            bidirectional: true,
            combine: DirectionCombine::Sum,
        }
    }
}

/// Parameters private to one scan direction.
#[derive(Clone, Debug)]
pub struct DirectionParams {
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub w_b: ParamId,
    pub w_c: ParamId,
    pub w_dt: ParamId,
    /// Δ₀, the bias inside the softplus that produces Δ.
    pub dt_bias: ParamId,
    /// `A = −exp(a_log)` keeps every `Ā` entry inside (0, 1).
    pub a_log: ParamId,
    pub skip: ParamId,
}

/// Normalization and the projections shared by both directions of a block.
#[derive(Clone, Debug)]
pub struct BlockShared {
    pub norm_gain: ParamId,
    pub norm_bias: ParamId,
    pub in_x_w: ParamId,
    pub in_x_b: ParamId,
    pub in_z_w: ParamId,
    pub in_z_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

#[derive(Clone, Debug)]
pub struct BiBlockParams {
    pub shared: BlockShared,
    pub forward: DirectionParams,
    pub reverse: Option<DirectionParams>,
}

pub(crate) fn uniform(rng: &mut impl Rng, shape: Vec<usize>, bound: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound)).expect("finite init")
}

impl DirectionParams {
    pub fn init(store: &mut ParamStore, prefix: &str, cfg: &BlockConfig, rng: &mut impl Rng) -> Self {
        let (d, n, k) = (cfg.dim, cfg.state, cfg.conv_kernel);
        let fan = 1.0 / (d as f64).sqrt();
        let dt_bias = Tensor::from_fn(vec![d], |_| {
            // Δ initialised log-uniform in [1e-3, 1e-1]; store softplus⁻¹(Δ).
            let dt = (rng.random_range(1e-3f64.ln()..0.1f64.ln())).exp();
            dt + (-(-dt).exp_m1()).ln()
        })
        .expect("finite init");
        let a_log = Tensor::from_fn(vec![d, n], |i| ((i % n) as f64 + 1.0).ln()).expect("finite init");
        Self {
            conv_w: store.add(format!("{prefix}.conv_w"), uniform(rng, vec![d, k], 1.0 / (k as f64).sqrt())),
            conv_b: store.add(format!("{prefix}.conv_b"), Tensor::zeros(vec![d])),
            w_b: store.add(format!("{prefix}.w_b"), uniform(rng, vec![d, n], fan)),
            w_c: store.add(format!("{prefix}.w_c"), uniform(rng, vec![d, n], fan)),
            w_dt: store.add(format!("{prefix}.w_dt"), uniform(rng, vec![d, d], fan)),
            dt_bias: store.add(format!("{prefix}.dt_bias"), dt_bias),
            a_log: store.add(format!("{prefix}.a_log"), a_log),
            skip: store.add(format!("{prefix}.d"), Tensor::full(vec![d], 1.0)),
        }
    }
}

impl BlockShared {
    pub fn init(store: &mut ParamStore, prefix: &str, cfg: &BlockConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.dim;
        let fan = 1.0 / (d as f64).sqrt();
        let out_in = if cfg.bidirectional && cfg.combine == DirectionCombine::Concat { 2 * d } else { d };
        Self {
            norm_gain: store.add(format!("{prefix}.norm_gain"), Tensor::full(vec![d], 1.0)),
            norm_bias: store.add(format!("{prefix}.norm_bias"), Tensor::zeros(vec![d])),
            in_x_w: store.add(format!("{prefix}.in_x_w"), uniform(rng, vec![d, d], fan)),
            in_x_b: store.add(format!("{prefix}.in_x_b"), Tensor::zeros(vec![d])),
            in_z_w: store.add(format!("{prefix}.in_z_w"), uniform(rng, vec![d, d], fan)),
            in_z_b: store.add(format!("{prefix}.in_z_b"), Tensor::zeros(vec![d])),
            out_w: store.add(
                format!("{prefix}.out_w"),
                uniform(rng, vec![out_in, d], 1.0 / (out_in as f64).sqrt()),
            ),
            out_b: store.add(format!("{prefix}.out_b"), Tensor::zeros(vec![d])),
        }
    }
}

impl BiBlockParams {
    pub fn init(store: &mut ParamStore, prefix: &str, cfg: &BlockConfig, rng: &mut impl Rng) -> Self {
        let shared = BlockShared::init(store, prefix, cfg, rng);
        let forward = DirectionParams::init(store, &format!("{prefix}.fwd"), cfg, rng);
        let reverse = cfg
            .bidirectional
            .then(|| DirectionParams::init(store, &format!("{prefix}.rev"), cfg, rng));
        Self { shared, forward, reverse }
    }
}

/// Normalization followed by the x- and z-path input projections.
fn project_inputs<B: Backend>(
    be: &mut B,
    store: &ParamStore,
    tokens: &B::Value,
    p: &BlockShared,
) -> Result<(B::Value, B::Value)> {
    let gain = be.param(store, p.norm_gain);
    let bias = be.param(store, p.norm_bias);
    let normed = be.layer_norm(tokens, &gain, &bias)?;
    let (wx, bx) = (be.param(store, p.in_x_w), be.param(store, p.in_x_b));
    let (wz, bz) = (be.param(store, p.in_z_w), be.param(store, p.in_z_b));
    let x = be.linear(&normed, &wx, Some(&bx))?;
    let z = be.linear(&normed, &wz, Some(&bz))?;
    Ok((x, z))
}

/// One scan direction on projected inputs `x`, `z` (`[batch, time, dim]`):
/// causal conv + SiLU, data-dependent B, C and Δ, selective scan, SiLU(z)
/// gating. The result is returned in the original token order.
pub fn directional_scan<B: Backend>(
    be: &mut B,
    store: &ParamStore,
    x: &B::Value,
    z: &B::Value,
    p: &DirectionParams,
    direction: Direction,
    mode: Discretization,
) -> Result<B::Value> {
    let (xs, zs) = match direction {
        Direction::Forward => (x.clone(), z.clone()),
        Direction::Reverse => (be.reverse_time(x)?, be.reverse_time(z)?),
    };
    let conv_w = be.param(store, p.conv_w);
    let conv_b = be.param(store, p.conv_b);
    let conv = be.causal_conv(&xs, &conv_w)?;
    let conv = be.add_broadcast(&conv, &conv_b)?;
    let xc = be.silu(&conv)?;

    let w_b = be.param(store, p.w_b);
    let w_c = be.param(store, p.w_c);
    let bm = be.matmul(&xs, &w_b)?;
    let cm = be.matmul(&xs, &w_c)?;
    let w_dt = be.param(store, p.w_dt);
    let dt_bias = be.param(store, p.dt_bias);
    let dt_pre = be.linear(&xs, &w_dt, Some(&dt_bias))?;
    let delta = be.softplus(&dt_pre)?;

    let a_log = be.param(store, p.a_log);
    let a = be.unary(&a_log, Unary::Exp)?;
    let a = be.unary(&a, Unary::Neg)?;
    let skip = be.param(store, p.skip);
    let y = be.selective_scan(
        ScanInputs {
            x: &xc,
            delta: &delta,
            a: &a,
            b: &bm,
            c: &cm,
            skip: &skip,
        },
        mode,
    )?;
    let gate = be.silu(&zs)?;
    let gated = be.mul(&y, &gate)?;
    match direction {
        Direction::Forward => Ok(gated),
        Direction::Reverse => be.reverse_time(&gated),
    }
}

/// Single-direction block without the residual: norm, projections, one
/// directional scan, output projection.
pub fn mamba_block<B: Backend>(
    be: &mut B,
    store: &ParamStore,
    tokens: &B::Value,
    shared: &BlockShared,
    params: &DirectionParams,
    direction: Direction,
    mode: Discretization,
) -> Result<B::Value> {
    let (x, z) = project_inputs(be, store, tokens, shared)?;
    let y = directional_scan(be, store, &x, &z, params, direction, mode)?;
    let (w, b) = (be.param(store, shared.out_w), be.param(store, shared.out_b));
    be.linear(&y, &w, Some(&b))
}

/// Bidirectional block with residual: the two directional outputs are
/// combined, projected, and added back onto the input tokens.
pub fn bidirectional_block<B: Backend>(
    be: &mut B,
    store: &ParamStore,
    tokens: &B::Value,
    params: &BiBlockParams,
    cfg: &BlockConfig,
) -> Result<B::Value> {
    let (x, z) = project_inputs(be, store, tokens, &params.shared)?;
    let mode = cfg.discretization;
    let fwd = directional_scan(be, store, &x, &z, &params.forward, Direction::Forward, mode)?;
    let combined = match &params.reverse {
        None => fwd,
        Some(rev_params) => {
            let rev = directional_scan(be, store, &x, &z, rev_params, Direction::Reverse, mode)?;
            match cfg.combine {
                DirectionCombine::Sum => be.add(&fwd, &rev)?,
                DirectionCombine::Concat => be.concat_last(&[fwd, rev])?,
            }
        }
    };
    let (w, b) = (be.param(store, params.shared.out_w), be.param(store, params.shared.out_b));
    let out = be.linear(&combined, &w, Some(&b))?;
    be.add(tokens, &out)
}
