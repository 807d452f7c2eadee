//! Deterministic dense numerical kernels with hand-derived gradients.
//!
//! Everything here is plain double-precision ndarray arithmetic: GCN
//! aggregation over explicit neighbor sets, a normalized-adjacency GCN
//! layer, mean pooling, scaled-dot-product cross-attention, and a two-layer
//! perceptron projection. Each kernel has a `_vjp` companion implementing
//! the reverse-mode vector-Jacobian product used by the composed encoder
//! and the training loop, checked against central finite differences.
//!
//! tanh is the only nonlinearity, so all gradients are smooth and the
//! finite-difference checks are clean.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum KernelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("neighbor index {index} out of range for {len} nodes")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("finite-difference step must be positive, got {0}")]
    InvalidEps(f64),
}

/// Parameters of the per-node aggregation `y_i = tanh(x_i W_self + Σ_j x_j W_neigh)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnAggParams {
    pub w_self: Array2<f64>,
    pub w_neigh: Array2<f64>,
}

impl GcnAggParams {
    pub fn zeros(dim: usize) -> Self {
        Self {
            w_self: Array2::zeros((dim, dim)),
            w_neigh: Array2::zeros((dim, dim)),
        }
    }

    pub fn seeded(dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            w_self: uniform_init(dim, dim, rng),
            w_neigh: uniform_init(dim, dim, rng),
        }
    }
}

/// Weight of one normalized-adjacency graph convolution layer.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnLayerParams {
    pub w: Array2<f64>,
}

impl GcnLayerParams {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            w: Array2::zeros((d_in, d_out)),
        }
    }

    pub fn seeded(d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            w: uniform_init(d_in, d_out, rng),
        }
    }
}

/// Projection matrices of scaled-dot-product attention; `scale` is √d.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub scale: f64,
}

impl AttentionParams {
    pub fn zeros(dim: usize) -> Self {
        Self {
            w_q: Array2::zeros((dim, dim)),
            w_k: Array2::zeros((dim, dim)),
            w_v: Array2::zeros((dim, dim)),
            scale: (dim as f64).sqrt(),
        }
    }

    pub fn seeded(dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            w_q: uniform_init(dim, dim, rng),
            w_k: uniform_init(dim, dim, rng),
            w_v: uniform_init(dim, dim, rng),
            scale: (dim as f64).sqrt(),
        }
    }
}

/// Two-layer perceptron `out = tanh(m W1 + b1) W2 + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl ProjectionParams {
    pub fn zeros(d_in: usize, hidden: usize, d_out: usize) -> Self {
        Self {
            w1: Array2::zeros((d_in, hidden)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((hidden, d_out)),
            b2: Array1::zeros(d_out),
        }
    }

    pub fn seeded(d_in: usize, hidden: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            w1: uniform_init(d_in, hidden, rng),
            b1: Array1::zeros(hidden),
            w2: uniform_init(hidden, d_out, rng),
            b2: Array1::zeros(d_out),
        }
    }

    pub fn d_in(&self) -> usize {
        self.w1.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.w2.ncols()
    }
}

/// Scaled uniform init in `[-1/√d_in, 1/√d_in]` from the caller's stream.
pub fn uniform_init(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let bound = 1.0 / (rows as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    out
}

fn check_same_cols(a: &Array2<f64>, b: &Array2<f64>, what: &str) -> Result<(), KernelError> {
    if a.ncols() != b.ncols() {
        return Err(KernelError::ShapeMismatch(format!(
            "{what}: {} vs {} columns",
            a.ncols(),
            b.ncols()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// GCN aggregation
// ---------------------------------------------------------------------------

fn neighbor_matrix(n: usize, neighbor_sets: &[Vec<usize>]) -> Result<Array2<f64>, KernelError> {
    let mut m = Array2::zeros((n, n));
    for (i, nbrs) in neighbor_sets.iter().enumerate() {
        for &j in nbrs {
            if j >= n {
                return Err(KernelError::IndexOutOfRange { index: j, len: n });
            }
            m[[i, j]] = 1.0;
        }
    }
    Ok(m)
}

/// `y_i = tanh(x_i W_self + Σ_{j ∈ N(i)} x_j W_neigh)` over row features.
pub fn gcn_aggregate(
    x: &Array2<f64>,
    neighbor_sets: &[Vec<usize>],
    params: &GcnAggParams,
) -> Result<Array2<f64>, KernelError> {
    if neighbor_sets.len() != x.nrows() {
        return Err(KernelError::ShapeMismatch(format!(
            "{} neighbor sets for {} rows",
            neighbor_sets.len(),
            x.nrows()
        )));
    }
    let nmat = neighbor_matrix(x.nrows(), neighbor_sets)?;
    let z = x.dot(&params.w_self) + nmat.dot(x).dot(&params.w_neigh);
    Ok(z.mapv(f64::tanh))
}

/// Reverse-mode gradients of [`gcn_aggregate`] for loss gradient `d_y`.
pub fn gcn_aggregate_vjp(
    x: &Array2<f64>,
    neighbor_sets: &[Vec<usize>],
    params: &GcnAggParams,
    d_y: &Array2<f64>,
) -> Result<(Array2<f64>, GcnAggParams), KernelError> {
    let y = gcn_aggregate(x, neighbor_sets, params)?;
    let nmat = neighbor_matrix(x.nrows(), neighbor_sets)?;
    let d_z = d_y * &(1.0 - &y * &y);
    let nx = nmat.dot(x);
    let d_w_self = x.t().dot(&d_z);
    let d_w_neigh = nx.t().dot(&d_z);
    let d_x = d_z.dot(&params.w_self.t()) + nmat.t().dot(&d_z).dot(&params.w_neigh.t());
    Ok((
        d_x,
        GcnAggParams {
            w_self: d_w_self,
            w_neigh: d_w_neigh,
        },
    ))
}

// ---------------------------------------------------------------------------
// GCN layer over a normalized adjacency
// ---------------------------------------------------------------------------

/// `h' = tanh(A_norm · h · W)` where `A_norm` is a fixed normalized adjacency.
pub fn gcn_layer(
    h: &Array2<f64>,
    a_norm: &Array2<f64>,
    params: &GcnLayerParams,
) -> Result<Array2<f64>, KernelError> {
    if a_norm.nrows() != a_norm.ncols() || a_norm.nrows() != h.nrows() {
        return Err(KernelError::ShapeMismatch(format!(
            "adjacency {}x{} vs {} feature rows",
            a_norm.nrows(),
            a_norm.ncols(),
            h.nrows()
        )));
    }
    if h.ncols() != params.w.nrows() {
        return Err(KernelError::ShapeMismatch(format!(
            "features dim {} vs weight rows {}",
            h.ncols(),
            params.w.nrows()
        )));
    }
    Ok(a_norm.dot(h).dot(&params.w).mapv(f64::tanh))
}

pub fn gcn_layer_vjp(
    h: &Array2<f64>,
    a_norm: &Array2<f64>,
    params: &GcnLayerParams,
    d_out: &Array2<f64>,
) -> Result<(Array2<f64>, GcnLayerParams), KernelError> {
    let out = gcn_layer(h, a_norm, params)?;
    let d_z = d_out * &(1.0 - &out * &out);
    let ah = a_norm.dot(h);
    let d_w = ah.t().dot(&d_z);
    let d_h = a_norm.t().dot(&d_z).dot(&params.w.t());
    Ok((d_h, GcnLayerParams { w: d_w }))
}

// ---------------------------------------------------------------------------
// Global pooling
// ---------------------------------------------------------------------------

/// Arithmetic mean over rows.
pub fn global_pool(h: &Array2<f64>) -> Result<Array1<f64>, KernelError> {
    if h.nrows() == 0 {
        return Err(KernelError::EmptyInput("global_pool over zero rows".into()));
    }
    Ok(h.mean_axis(Axis(0)).expect("non-empty"))
}

pub fn global_pool_vjp(n_rows: usize, d_p: &Array1<f64>) -> Array2<f64> {
    let scaled = d_p.mapv(|v| v / n_rows as f64);
    let mut d_h = Array2::zeros((n_rows, d_p.len()));
    for mut row in d_h.rows_mut() {
        row.assign(&scaled);
    }
    d_h
}

// ---------------------------------------------------------------------------
// Cross-attention
// ---------------------------------------------------------------------------

/// `softmax(Q_in W_q (K_in W_k)ᵀ / scale) · K_in W_v` with row-wise softmax.
pub fn cross_attention(
    q_in: &Array2<f64>,
    k_in: &Array2<f64>,
    params: &AttentionParams,
) -> Result<Array2<f64>, KernelError> {
    check_same_cols(q_in, k_in, "cross_attention inputs")?;
    if q_in.ncols() != params.w_q.nrows() {
        return Err(KernelError::ShapeMismatch(format!(
            "input dim {} vs attention weights {}",
            q_in.ncols(),
            params.w_q.nrows()
        )));
    }
    let q = q_in.dot(&params.w_q);
    let k = k_in.dot(&params.w_k);
    let v = k_in.dot(&params.w_v);
    let logits = q.dot(&k.t()) / params.scale;
    let weights = softmax_rows(&logits);
    Ok(weights.dot(&v))
}

/// Gradients of [`cross_attention`] w.r.t. both inputs and all three
/// projection matrices. The returned `AttentionParams` holds the gradients
/// (its `scale` mirrors the forward value and carries no gradient).
pub fn cross_attention_vjp(
    q_in: &Array2<f64>,
    k_in: &Array2<f64>,
    params: &AttentionParams,
    d_out: &Array2<f64>,
) -> Result<(Array2<f64>, Array2<f64>, AttentionParams), KernelError> {
    check_same_cols(q_in, k_in, "cross_attention inputs")?;
    let q = q_in.dot(&params.w_q);
    let k = k_in.dot(&params.w_k);
    let v = k_in.dot(&params.w_v);
    let logits = q.dot(&k.t()) / params.scale;
    let weights = softmax_rows(&logits);

    let d_weights = d_out.dot(&v.t());
    let d_v = weights.t().dot(d_out);

    // row-wise softmax backward: ds = s ⊙ (dw − ⟨dw, s⟩)
    let mut d_logits = Array2::zeros(weights.raw_dim());
    for i in 0..weights.nrows() {
        let s = weights.row(i);
        let dw = d_weights.row(i);
        let inner: f64 = dw.dot(&s);
        for j in 0..weights.ncols() {
            d_logits[[i, j]] = s[j] * (dw[j] - inner);
        }
    }
    d_logits /= params.scale;

    let d_q = d_logits.dot(&k);
    let d_k = d_logits.t().dot(&q);

    let d_w_q = q_in.t().dot(&d_q);
    let d_w_k = k_in.t().dot(&d_k);
    let d_w_v = k_in.t().dot(&d_v);
    let d_q_in = d_q.dot(&params.w_q.t());
    let d_k_in = d_k.dot(&params.w_k.t()) + d_v.dot(&params.w_v.t());

    Ok((
        d_q_in,
        d_k_in,
        AttentionParams {
            w_q: d_w_q,
            w_k: d_w_k,
            w_v: d_w_v,
            scale: params.scale,
        },
    ))
}

// ---------------------------------------------------------------------------
// Projection
// ---------------------------------------------------------------------------

/// `out = tanh(m W1 + b1) W2 + b2` over a single feature vector.
pub fn project(m: &ArrayView1<f64>, params: &ProjectionParams) -> Result<Array1<f64>, KernelError> {
    if m.len() != params.w1.nrows() {
        return Err(KernelError::ShapeMismatch(format!(
            "input dim {} vs projection rows {}",
            m.len(),
            params.w1.nrows()
        )));
    }
    let hidden = (m.dot(&params.w1) + &params.b1).mapv(f64::tanh);
    Ok(hidden.dot(&params.w2) + &params.b2)
}

pub fn project_vjp(
    m: &ArrayView1<f64>,
    params: &ProjectionParams,
    d_out: &Array1<f64>,
) -> Result<(Array1<f64>, ProjectionParams), KernelError> {
    let hidden = (m.dot(&params.w1) + &params.b1).mapv(f64::tanh);
    let d_hidden = d_out.dot(&params.w2.t()) * (1.0 - &hidden * &hidden);

    let d_w2 = outer(&hidden, d_out);
    let d_b2 = d_out.clone();
    let d_w1 = outer(&m.to_owned(), &d_hidden);
    let d_b1 = d_hidden.clone();
    let d_m = d_hidden.dot(&params.w1.t());
    Ok((
        d_m,
        ProjectionParams {
            w1: d_w1,
            b1: d_b1,
            w2: d_w2,
            b2: d_b2,
        },
    ))
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.len(), b.len()));
    for i in 0..a.len() {
        for j in 0..b.len() {
            out[[i, j]] = a[i] * b[j];
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Per-coordinate (analytic, numeric) pairs where numeric is the central
/// difference `(f(θ+eps·e_i) − f(θ−eps·e_i)) / (2·eps)`.
pub fn fd_pairs<F>(
    f: F,
    analytic: &[f64],
    theta: &[f64],
    eps: f64,
) -> Result<Vec<(f64, f64)>, KernelError>
where
    F: Fn(&[f64]) -> f64,
{
    if eps <= 0.0 {
        return Err(KernelError::InvalidEps(eps));
    }
    if analytic.len() != theta.len() {
        return Err(KernelError::ShapeMismatch(format!(
            "gradient length {} vs parameter length {}",
            analytic.len(),
            theta.len()
        )));
    }
    let mut work = theta.to_vec();
    let mut pairs = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        work[i] = theta[i] + eps;
        let plus = f(&work);
        work[i] = theta[i] - eps;
        let minus = f(&work);
        work[i] = theta[i];
        pairs.push((analytic[i], (plus - minus) / (2.0 * eps)));
    }
    Ok(pairs)
}

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / (1e-8f64).max(a.abs() + n.abs())
}

/// Compares an analytic gradient against central finite differences of `f`
/// at `theta` and returns the maximum per-coordinate relative error
/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn grad_check<F>(f: F, analytic: &[f64], theta: &[f64], eps: f64) -> Result<f64, KernelError>
where
    F: Fn(&[f64]) -> f64,
{
    let pairs = fd_pairs(f, analytic, theta, eps)?;
    Ok(pairs
        .iter()
        .map(|&(a, n)| rel_error(a, n))
        .fold(0.0, f64::max))
}

/// Outcome of one finite-difference comparison, split by coordinate scale.
///
/// Central differences of a double-precision scalar resolve derivatives only
/// down to roughly `ulp(|f|) / eps` in absolute terms, so the relative
/// measure is meaningless on coordinates whose true gradient sits below that
/// noise floor. `max_rel_scaled` restricts the relative measure to
/// coordinates the oracle can actually resolve; `max_abs` bounds the
/// agreement on everything else.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdSummary {
    /// Max relative error over every coordinate.
    pub max_rel: f64,
    /// Max relative error over coordinates with `|a| + |n| >= scale_floor`.
    pub max_rel_scaled: f64,
    /// Max `|a − n|` over every coordinate.
    pub max_abs: f64,
}

/// Coordinates at or above this magnitude are held to the relative bound;
/// below it the oracle's own noise dominates the ratio.
pub const FD_SCALE_FLOOR: f64 = 1e-6;
/// Near-zero coordinates must still agree with the oracle to this absolute
/// bound (observed agreement is ~1e-11; the slack covers seed variance).
pub const FD_ABS_BOUND: f64 = 1e-9;

pub fn fd_summary(pairs: &[(f64, f64)], scale_floor: f64) -> FdSummary {
    let mut summary = FdSummary {
        max_rel: 0.0,
        max_rel_scaled: 0.0,
        max_abs: 0.0,
    };
    for &(a, n) in pairs {
        let rel = rel_error(a, n);
        summary.max_rel = summary.max_rel.max(rel);
        if a.abs() + n.abs() >= scale_floor {
            summary.max_rel_scaled = summary.max_rel_scaled.max(rel);
        }
        summary.max_abs = summary.max_abs.max((a - n).abs());
    }
    summary
}
