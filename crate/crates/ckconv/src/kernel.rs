//! The continuous cubic kernel: a shared MLP mapping each neighbor's
//! relative position to a v*v*v cube of weights, plus the two per-point
//! weight normalization schemes.

use rand::RngExt;

use crate::error::{Error, Result};
use crate::nn::{Activation, BoundMlp, Mlp};
use crate::tensor::{Graph, GraphOp, InputGrads, Tensor, TensorId};

/// Guard threshold below which a row's norm or stddev counts as zero.
pub const NORM_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    None,
    L2,
    St,
}

impl NormKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NormKind::None),
            "l2" => Ok(NormKind::L2),
            "st" => Ok(NormKind::St),
            other => Err(Error::Config(format!(
                "unknown normalization {other:?} (expected none|l2|st)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NormKind::None => "none",
            NormKind::L2 => "l2",
            NormKind::St => "st",
        }
    }
}

/// Parameters of the kernel function: a front MLP `3 -> h -> h` shared
/// with local set attention, and a linear head `h -> v^3` with no output
/// activation (normalization is the final step instead).
#[derive(Debug, Clone)]
pub struct CubicKernelParams {
    pub front: Mlp,
    pub head: Mlp,
    pub v: usize,
}

impl CubicKernelParams {
    pub fn init(v: usize, hidden: usize, activation: Activation, rng: &mut impl RngExt) -> Self {
        assert!(v >= 1, "kernel unit size must be at least 1");
        let front = Mlp::init(&[3, hidden, hidden], activation, activation, rng);
        let head = Mlp::init(&[hidden, v * v * v], activation, Activation::None, rng);
        CubicKernelParams { front, head, v }
    }

    pub fn hidden_dim(&self) -> usize {
        self.front.out_dim()
    }

    /// Total learnable parameters; independent of the input channel count.
    pub fn param_count(&self) -> usize {
        self.front.param_count() + self.head.param_count()
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a Tensor)) {
        self.front.visit(&format!("{prefix}.front"), f);
        self.head.visit(&format!("{prefix}.head"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut Tensor)) {
        self.front.visit_mut(&format!("{prefix}.front"), f);
        self.head.visit_mut(&format!("{prefix}.head"), f);
    }

    pub fn bind(&self, g: &mut Graph) -> BoundCubicKernel {
        BoundCubicKernel {
            front: self.front.bind(g),
            head: self.head.bind(g),
            v: self.v,
        }
    }
}

pub struct BoundCubicKernel {
    pub front: BoundMlp,
    pub head: BoundMlp,
    pub v: usize,
}

/// Run the kernel on an `[N, 3]` matrix of relative positions. Returns
/// the `[N, v^3]` cubic weights and the `[N, h]` intermediate features
/// that local set attention reuses. Rows are independent: the same MLP
/// is applied to each.
pub fn kernel_forward(
    g: &mut Graph,
    kernel: &BoundCubicKernel,
    relative: TensorId,
) -> Result<(TensorId, TensorId)> {
    let shape = g.shape(relative);
    if shape.len() != 2 || shape[1] != 3 {
        return Err(Error::Dimension(format!(
            "kernel_forward expects [N, 3] relative positions, got {shape:?}"
        )));
    }
    let intermediate = kernel.front.forward(g, relative)?;
    let weights = kernel.head.forward(g, intermediate)?;
    Ok((weights, intermediate))
}

// ---------------------------------------------------------------------------
// Row-wise L2 normalization (guarded) as a graph op
// ---------------------------------------------------------------------------

struct NormL2Rows {
    a: TensorId,
    cols: usize,
    /// Euclidean norm per row; rows below the guard pass through unchanged.
    norms: Vec<f64>,
}

impl GraphOp for NormL2Rows {
    fn name(&self) -> &'static str {
        "norm_l2"
    }

    fn inputs(&self) -> Vec<TensorId> {
        vec![self.a]
    }

    fn backward(&self, g: &Graph, out: TensorId, grad: &[f64], needs: &[bool]) -> InputGrads {
        if !needs[0] {
            return vec![None];
        }
        let y = g.data(out);
        let mut dg = vec![0.0; grad.len()];
        for (row, &n) in self.norms.iter().enumerate() {
            let s = row * self.cols;
            let e = s + self.cols;
            if n < NORM_GUARD {
                dg[s..e].copy_from_slice(&grad[s..e]);
                continue;
            }
            // y = w/||w||: dw = (g - (g . y) y) / ||w||
            let dot: f64 = grad[s..e].iter().zip(&y[s..e]).map(|(&a, &b)| a * b).sum();
            for i in s..e {
                dg[i] = (grad[i] - dot * y[i]) / n;
            }
        }
        vec![Some(dg)]
    }
}

/// Divide each row of an `[R, Q]` matrix by its Euclidean norm. Rows with
/// norm below [`NORM_GUARD`] are returned unchanged.
pub fn norm_l2(g: &mut Graph, w: TensorId) -> Result<TensorId> {
    let (rows, cols) = rows_cols(g, w)?;
    let x = g.data(w);
    let mut data = vec![0.0; x.len()];
    let mut norms = Vec::with_capacity(rows);
    for row in 0..rows {
        let s = row * cols;
        let e = s + cols;
        let n = x[s..e].iter().map(|&v| v * v).sum::<f64>().sqrt();
        norms.push(n);
        if n < NORM_GUARD {
            data[s..e].copy_from_slice(&x[s..e]);
        } else {
            for i in s..e {
                data[i] = x[i] / n;
            }
        }
    }
    let shape = g.shape(w).to_vec();
    g.push_op(
        Tensor::new(shape, data)?,
        Box::new(NormL2Rows { a: w, cols, norms }),
    )
}

// ---------------------------------------------------------------------------
// Row-wise standardization (guarded) as a graph op
// ---------------------------------------------------------------------------

struct NormStRows {
    a: TensorId,
    cols: usize,
    /// Population stddev per row; rows below the guard map to all zeros.
    sigmas: Vec<f64>,
}

impl GraphOp for NormStRows {
    fn name(&self) -> &'static str {
        "norm_st"
    }

    fn inputs(&self) -> Vec<TensorId> {
        vec![self.a]
    }

    fn backward(&self, g: &Graph, out: TensorId, grad: &[f64], needs: &[bool]) -> InputGrads {
        if !needs[0] {
            return vec![None];
        }
        let y = g.data(out);
        let q = self.cols as f64;
        let mut dg = vec![0.0; grad.len()];
        for (row, &sigma) in self.sigmas.iter().enumerate() {
            let s = row * self.cols;
            let e = s + self.cols;
            if sigma < NORM_GUARD {
                continue; // constant-row output is identically zero
            }
            // y = (w - mu)/sigma with mu, sigma functions of w:
            // dw = (g - mean(g) - y * mean(g . y)) / sigma
            let gmean: f64 = grad[s..e].iter().sum::<f64>() / q;
            let gy: f64 = grad[s..e].iter().zip(&y[s..e]).map(|(&a, &b)| a * b).sum::<f64>() / q;
            for i in s..e {
                dg[i] = (grad[i] - gmean - y[i] * gy) / sigma;
            }
        }
        vec![Some(dg)]
    }
}

/// Standardize each row of an `[R, Q]` matrix to mean 0, population std 1.
/// Rows with stddev below [`NORM_GUARD`] map to all zeros.
pub fn norm_st(g: &mut Graph, w: TensorId) -> Result<TensorId> {
    let (rows, cols) = rows_cols(g, w)?;
    let q = cols as f64;
    let x = g.data(w);
    let mut data = vec![0.0; x.len()];
    let mut sigmas = Vec::with_capacity(rows);
    for row in 0..rows {
        let s = row * cols;
        let e = s + cols;
        let mu = x[s..e].iter().sum::<f64>() / q;
        let var = x[s..e].iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / q;
        let sigma = var.sqrt();
        sigmas.push(sigma);
        if sigma >= NORM_GUARD {
            for i in s..e {
                data[i] = (x[i] - mu) / sigma;
            }
        }
    }
    let shape = g.shape(w).to_vec();
    g.push_op(
        Tensor::new(shape, data)?,
        Box::new(NormStRows { a: w, cols, sigmas }),
    )
}

/// Apply the configured normalization scheme, if any.
pub fn apply_norm(g: &mut Graph, kind: NormKind, w: TensorId) -> Result<TensorId> {
    match kind {
        NormKind::None => Ok(w),
        NormKind::L2 => norm_l2(g, w),
        NormKind::St => norm_st(g, w),
    }
}

fn rows_cols(g: &Graph, w: TensorId) -> Result<(usize, usize)> {
    let shape = g.shape(w);
    if shape.len() != 2 {
        return Err(Error::Dimension(format!(
            "row normalization expects a 2-D matrix, got {shape:?}"
        )));
    }
    Ok((shape[0], shape[1]))
}
