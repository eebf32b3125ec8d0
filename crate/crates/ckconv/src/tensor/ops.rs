//! Built-in graph ops: matmul, batched matmul, broadcast elementwise,
//! activations, axis reductions, reshape, and row gather.

use super::graph::{Graph, GraphOp, InputGrads, TensorId};
use super::{broadcast_shape, Tensor};
use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Raw accumulating matmul kernels, shared by forward and backward passes.
// All operands are row-major slices; `out` is accumulated into.
// ---------------------------------------------------------------------------

/// out[m,n] += a[m,k] * b[k,n]
pub(crate) fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

/// out[m,n] += a[m,k] * b[n,k]^T
pub(crate) fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                s += av * bv;
            }
            *o += s;
        }
    }
}

/// out[m,n] += a[k,m]^T * b[k,n]
pub(crate) fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &api) in a_row.iter().enumerate() {
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += api * bv;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// MatMul
// ---------------------------------------------------------------------------

struct MatMul {
    a: TensorId,
    b: TensorId,
    m: usize,
    k: usize,
    n: usize,
}

impl GraphOp for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn inputs(&self) -> Vec<TensorId> {
        vec![self.a, self.b]
    }

    fn backward(&self, g: &Graph, _out: TensorId, grad: &[f64], needs: &[bool]) -> InputGrads {
        let (m, k, n) = (self.m, self.k, self.n);
        let da = needs[0].then(|| {
            let mut da = vec![0.0; m * k];
            mm_nt(grad, g.data(self.b), m, n, k, &mut da);
            da
        });
        let db = needs[1].then(|| {
            let mut db = vec![0.0; k * n];
            mm_tn(g.data(self.a), grad, k, m, n, &mut db);
            db
        });
        vec![da, db]
    }
}

// ---------------------------------------------------------------------------
// Batched MatMul (optionally transposing the per-batch left operand)
// ---------------------------------------------------------------------------

struct Bmm {
    a: TensorId,
    b: TensorId,
    batches: usize,
    m: usize,
    k: usize,
    n: usize,
    transpose_a: bool,
}

impl GraphOp for Bmm {
    fn name(&self) -> &'static str {
        "bmm"
    }

    fn inputs(&self) -> Vec<TensorId> {
        vec![self.a, self.b]
    }

    fn backward(&self, g: &Graph, _out: TensorId, grad: &[f64], needs: &[bool]) -> InputGrads {
        let (m, k, n) = (self.m, self.k, self.n);
        let a = g.data(self.a);
        let b = g.data(self.b);
        let da = needs[0].then(|| vec![0.0; a.len()]);
        let db = needs[1].then(|| vec![0.0; b.len()]);
        let mut da = da;
        let mut db = db;
        for batch in 0..self.batches {
            let ab = &a[batch * m * k..(batch + 1) * m * k];
            let bb = &b[batch * k * n..(batch + 1) * k * n];
            let gb = &grad[batch * m * n..(batch + 1) * m * n];
            if self.transpose_a {
                // out = a^T b with a stored [k, m]
                if let Some(da) = da.as_mut() {
                    let dab = &mut da[batch * m * k..(batch + 1) * m * k];
                    // da[p,i] = sum_j b[p,j] g[i,j]
                    mm_nt(bb, gb, k, n, m, dab);
                }
                if let Some(db) = db.as_mut() {
                    let dbb = &mut db[batch * k * n..(batch + 1) * k * n];
                    mm_nn(ab, gb, k, m, n, dbb);
                }
            } else {
                if let Some(da) = da.as_mut() {
                    let dab = &mut da[batch * m * k..(batch + 1) * m * k];
                    mm_nt(gb, bb, m, n, k, dab);
                }
                if let Some(db) = db.as_mut() {
                    let dbb = &mut db[batch * k * n..(batch + 1) * k * n];
                    mm_tn(ab, gb, k, m, n, dbb);
                }
            }
        }
        vec![da, db]
    }
}

// ---------------------------------------------------------------------------
// Broadcast elementwise binary ops
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq)]
enum BinKind {
    Add,
    Sub,
    Mul,
}

struct Binary {
    kind: BinKind,
    a: TensorId,
    b: TensorId,
}

/// How one operand's flat index maps onto the output's flat index.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum IndexMap {
    /// Operand shape equals the output shape.
    Same,
    /// Singleton axes form a prefix (e.g. bias `[1, C]` against `[R, C]`):
    /// operand index is `flat % numel`.
    Cycle { numel: usize },
    /// Singleton axes form a suffix (e.g. attention `[S, Q, 1]` against
    /// `[S, Q, C]`): operand index is `flat / repeat`.
    Chunk { repeat: usize },
    /// Anything else: full stride arithmetic.
    General,
}

fn index_map(shape: &[usize], out_shape: &[usize]) -> IndexMap {
    if shape == out_shape {
        return IndexMap::Same;
    }
    // Split into maximal prefix/suffix of broadcast (size-1 vs >1) axes.
    let first_real = shape
        .iter()
        .zip(out_shape)
        .position(|(&s, &o)| !(s == 1 && o > 1))
        .unwrap_or(shape.len());
    if shape[first_real..] == out_shape[first_real..] {
        let numel = shape.iter().product();
        return IndexMap::Cycle { numel };
    }
    let first_ones = shape
        .iter()
        .zip(out_shape)
        .position(|(&s, &o)| s == 1 && o > 1)
        .unwrap_or(shape.len());
    if shape[..first_ones] == out_shape[..first_ones]
        && shape[first_ones..].iter().all(|&s| s == 1)
    {
        let repeat = out_shape[first_ones..].iter().product();
        return IndexMap::Chunk { repeat };
    }
    IndexMap::General
}

fn map_index(map: IndexMap, strides: &[usize], out_shape: &[usize], flat: usize) -> usize {
    match map {
        IndexMap::Same => flat,
        IndexMap::Cycle { numel } => flat % numel,
        IndexMap::Chunk { repeat } => flat / repeat,
        IndexMap::General => {
            let mut rem = flat;
            let mut idx = 0;
            for d in (0..out_shape.len()).rev() {
                let c = rem % out_shape[d];
                rem /= out_shape[d];
                idx += c * strides[d];
            }
            idx
        }
    }
}

fn broadcast_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0usize; shape.len()];
    let mut s = 1;
    for d in (0..shape.len()).rev() {
        strides[d] = if shape[d] == 1 { 0 } else { s };
        s *= shape[d];
    }
    strides
}

/// Apply `f(out_idx, a_idx, b_idx)` over the broadcast iteration space.
fn for_each_broadcast(
    out_shape: &[usize],
    a_shape: &[usize],
    b_shape: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let numel: usize = out_shape.iter().product();
    let (a_map, b_map) = (index_map(a_shape, out_shape), index_map(b_shape, out_shape));
    let a_strides = broadcast_strides(a_shape);
    let b_strides = broadcast_strides(b_shape);
    for flat in 0..numel {
        f(
            flat,
            map_index(a_map, &a_strides, out_shape, flat),
            map_index(b_map, &b_strides, out_shape, flat),
        );
    }
}

fn binary_forward(kind: BinKind, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let apply = |x: f64, y: f64| match kind {
        BinKind::Add => x + y,
        BinKind::Sub => x - y,
        BinKind::Mul => x * y,
    };
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| apply(x, y))
            .collect();
        return Tensor::new(a.shape().to_vec(), data);
    }
    let out_shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| {
        Error::Dimension(format!(
            "shapes {:?} and {:?} are not broadcastable",
            a.shape(),
            b.shape()
        ))
    })?;
    let mut data = vec![0.0; out_shape.iter().product()];
    let (ad, bd) = (a.data(), b.data());
    for_each_broadcast(&out_shape, a.shape(), b.shape(), |oi, ai, bi| {
        data[oi] = apply(ad[ai], bd[bi]);
    });
    Tensor::new(out_shape, data)
}

/// Sum `grad` (shaped `out_shape`) down to `target_shape` over the axes
/// where the target has a singleton.
fn reduce_grad_to(grad: &[f64], out_shape: &[usize], target_shape: &[usize]) -> Vec<f64> {
    if out_shape == target_shape {
        return grad.to_vec();
    }
    let target_numel: usize = target_shape.iter().product();
    let mut out = vec![0.0; target_numel];
    for_each_broadcast(out_shape, target_shape, target_shape, |oi, ti, _| {
        out[ti] += grad[oi];
    });
    out
}

impl GraphOp for Binary {
    fn name(&self) -> &'static str {
        match self.kind {
            BinKind::Add => "add",
            BinKind::Sub => "sub",
            BinKind::Mul => "mul",
        }
    }

    fn inputs(&self) -> Vec<TensorId> {
        vec![self.a, self.b]
    }

    fn backward(&self, g: &Graph, out: TensorId, grad: &[f64], needs: &[bool]) -> InputGrads {
        let a = g.value(self.a);
        let b = g.value(self.b);
        let out_shape = g.shape(out);
        let da = needs[0].then(|| match self.kind {
            BinKind::Add | BinKind::Sub => reduce_grad_to(grad, out_shape, a.shape()),
            BinKind::Mul => {
                let mut full = vec![0.0; grad.len()];
                let bd = b.data();
                for_each_broadcast(out_shape, a.shape(), b.shape(), |oi, _, bi| {
                    full[oi] = grad[oi] * bd[bi];
                });
                reduce_grad_to(&full, out_shape, a.shape())
            }
        });
        let db = needs[1].then(|| match self.kind {
            BinKind::Add => reduce_grad_to(grad, out_shape, b.shape()),
            BinKind::Sub => {
                let neg: Vec<f64> = grad.iter().map(|&v| -v).collect();
                reduce_grad_to(&neg, out_shape, b.shape())
            }
            BinKind::Mul => {
                let mut full = vec![0.0; grad.len()];
                let ad = a.data();
                for_each_broadcast(out_shape, a.shape(), b.shape(), |oi, ai, _| {
                    full[oi] = grad[oi] * ad[ai];
                });
                reduce_grad_to(&full, out_shape, b.shape())
            }
        });
        vec![da, db]
    }
}

// ---------------------------------------------------------------------------
// Unary ops
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
enum UnaryKind {
    Relu,
    Tanh,
    Scale(f64),
    AddScalar(f64),
}

struct Unary {
    kind: UnaryKind,
    a: TensorId,
}

impl GraphOp for Unary {
    fn name(&self) -> &'static str {
        match self.kind {
            UnaryKind::Relu => "relu",
            UnaryKind::Tanh => "tanh",
            UnaryKind::Scale(_) => "scale",
            UnaryKind::AddScalar(_) => "add_scalar",
        }
    }

    fn inputs(&self) -> Vec<TensorId> {
        vec![self.a]
    }

    fn backward(&self, g: &Graph, out: TensorId, grad: &[f64], needs: &[bool]) -> InputGrads {
        if !needs[0] {
            return vec![None];
        }
        let dg = match self.kind {
            UnaryKind::Relu => {
                let x = g.data(self.a);
                grad.iter()
                    .zip(x)
                    .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect()
            }
            UnaryKind::Tanh => {
                let y = g.data(out);
                grad.iter().zip(y).map(|(&gv, &yv)| gv * (1.0 - yv * yv)).collect()
            }
            UnaryKind::Scale(c) => grad.iter().map(|&gv| gv * c).collect(),
            UnaryKind::AddScalar(_) => grad.to_vec(),
        };
        vec![Some(dg)]
    }
}

// ---------------------------------------------------------------------------
// Axis reductions
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum ReduceKind {
    Sum,
    Mean,
    Max,
}

struct Reduce {
    kind: ReduceKind,
    a: TensorId,
    outer: usize,
    axis_size: usize,
    inner: usize,
    /// Flat input index of the maximum per output element (Max only).
    argmax: Vec<usize>,
    /// Smallest top-1/top-2 gap observed at forward time (Max only).
    margin: f64,
}

impl GraphOp for Reduce {
    fn name(&self) -> &'static str {
        match self.kind {
            ReduceKind::Sum => "reduce_sum",
            ReduceKind::Mean => "reduce_mean",
            ReduceKind::Max => "reduce_max",
        }
    }

    fn inputs(&self) -> Vec<TensorId> {
        vec![self.a]
    }

    fn backward(&self, g: &Graph, _out: TensorId, grad: &[f64], needs: &[bool]) -> InputGrads {
        if !needs[0] {
            return vec![None];
        }
        let numel = g.value(self.a).numel();
        let mut dg = vec![0.0; numel];
        match self.kind {
            ReduceKind::Sum | ReduceKind::Mean => {
                let scale = if self.kind == ReduceKind::Mean {
                    1.0 / self.axis_size as f64
                } else {
                    1.0
                };
                for o in 0..self.outer {
                    for s in 0..self.axis_size {
                        let base = (o * self.axis_size + s) * self.inner;
                        let gbase = o * self.inner;
                        for i in 0..self.inner {
                            dg[base + i] = grad[gbase + i] * scale;
                        }
                    }
                }
            }
            ReduceKind::Max => {
                // Gradient routes entirely to the argmax position.
                for (out_idx, &src) in self.argmax.iter().enumerate() {
                    dg[src] += grad[out_idx];
                }
            }
        }
        vec![Some(dg)]
    }

    fn max_margin(&self) -> Option<f64> {
        (self.kind == ReduceKind::Max).then_some(self.margin)
    }

    fn argmax(&self) -> Option<&[usize]> {
        (self.kind == ReduceKind::Max).then_some(&self.argmax)
    }
}

// ---------------------------------------------------------------------------
// Sum over all elements -> scalar
// ---------------------------------------------------------------------------

struct SumAll {
    a: TensorId,
}

impl GraphOp for SumAll {
    fn name(&self) -> &'static str {
        "sum_all"
    }

    fn inputs(&self) -> Vec<TensorId> {
        vec![self.a]
    }

    fn backward(&self, g: &Graph, _out: TensorId, grad: &[f64], needs: &[bool]) -> InputGrads {
        if !needs[0] {
            return vec![None];
        }
        vec![Some(vec![grad[0]; g.value(self.a).numel()])]
    }
}

// ---------------------------------------------------------------------------
// Reshape
// ---------------------------------------------------------------------------

struct Reshape {
    a: TensorId,
}

impl GraphOp for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn inputs(&self) -> Vec<TensorId> {
        vec![self.a]
    }

    fn backward(&self, _g: &Graph, _out: TensorId, grad: &[f64], needs: &[bool]) -> InputGrads {
        vec![needs[0].then(|| grad.to_vec())]
    }
}

// ---------------------------------------------------------------------------
// Row gather (axis 0 of a 2-D tensor); backward is scatter-add
// ---------------------------------------------------------------------------

struct GatherRows {
    a: TensorId,
    indices: Vec<usize>,
    row: usize,
}

impl GraphOp for GatherRows {
    fn name(&self) -> &'static str {
        "gather_rows"
    }

    fn inputs(&self) -> Vec<TensorId> {
        vec![self.a]
    }

    fn backward(&self, g: &Graph, _out: TensorId, grad: &[f64], needs: &[bool]) -> InputGrads {
        if !needs[0] {
            return vec![None];
        }
        let mut dg = vec![0.0; g.value(self.a).numel()];
        for (k, &src) in self.indices.iter().enumerate() {
            let dst = &mut dg[src * self.row..(src + 1) * self.row];
            let row = &grad[k * self.row..(k + 1) * self.row];
            for (d, &gv) in dst.iter_mut().zip(row) {
                *d += gv;
            }
        }
        vec![Some(dg)]
    }
}

// ---------------------------------------------------------------------------
// Graph op constructors
// ---------------------------------------------------------------------------

impl Graph {
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ashape, bshape) = (self.shape(a), self.shape(b));
        if ashape.len() != 2 || bshape.len() != 2 || ashape[1] != bshape[0] {
            return Err(Error::Dimension(format!(
                "matmul expects [m,k]x[k,n], got {ashape:?} x {bshape:?}"
            )));
        }
        let (m, k, n) = (ashape[0], ashape[1], bshape[1]);
        let mut data = vec![0.0; m * n];
        mm_nn(self.data(a), self.data(b), m, k, n, &mut data);
        self.push_op(
            Tensor::new(vec![m, n], data)?,
            Box::new(MatMul { a, b, m, k, n }),
        )
    }

    /// Batched matmul `[B,m,k] x [B,k,n] -> [B,m,n]`.
    pub fn bmm(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.bmm_impl(a, b, false)
    }

    /// Batched matmul transposing the left operand: `[B,k,m] x [B,k,n] -> [B,m,n]`.
    pub fn bmm_ta(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.bmm_impl(a, b, true)
    }

    fn bmm_impl(&mut self, a: TensorId, b: TensorId, transpose_a: bool) -> Result<TensorId> {
        let (ashape, bshape) = (self.shape(a), self.shape(b));
        if ashape.len() != 3 || bshape.len() != 3 || ashape[0] != bshape[0] {
            return Err(Error::Dimension(format!(
                "bmm expects 3-D operands with equal batch, got {ashape:?} x {bshape:?}"
            )));
        }
        let batches = ashape[0];
        let (m, k) = if transpose_a {
            (ashape[2], ashape[1])
        } else {
            (ashape[1], ashape[2])
        };
        if bshape[1] != k {
            return Err(Error::Dimension(format!(
                "bmm inner dimension mismatch: {ashape:?} x {bshape:?} (transpose_a={transpose_a})"
            )));
        }
        let n = bshape[2];
        let mut data = vec![0.0; batches * m * n];
        for batch in 0..batches {
            let ab = &self.data(a)[batch * m * k..(batch + 1) * m * k];
            let bb = &self.data(b)[batch * k * n..(batch + 1) * k * n];
            let ob = &mut data[batch * m * n..(batch + 1) * m * n];
            if transpose_a {
                mm_tn(ab, bb, m, k, n, ob);
            } else {
                mm_nn(ab, bb, m, k, n, ob);
            }
        }
        self.push_op(
            Tensor::new(vec![batches, m, n], data)?,
            Box::new(Bmm {
                a,
                b,
                batches,
                m,
                k,
                n,
                transpose_a,
            }),
        )
    }

    fn binary(&mut self, kind: BinKind, a: TensorId, b: TensorId) -> Result<TensorId> {
        let value = binary_forward(kind, self.value(a), self.value(b))?;
        self.push_op(value, Box::new(Binary { kind, a, b }))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary(BinKind::Add, a, b)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary(BinKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary(BinKind::Mul, a, b)
    }

    fn unary(&mut self, kind: UnaryKind, a: TensorId) -> Result<TensorId> {
        let x = self.value(a);
        let data = match kind {
            UnaryKind::Relu => x.data().iter().map(|&v| v.max(0.0)).collect(),
            UnaryKind::Tanh => x.data().iter().map(|&v| v.tanh()).collect(),
            UnaryKind::Scale(c) => x.data().iter().map(|&v| v * c).collect(),
            UnaryKind::AddScalar(c) => x.data().iter().map(|&v| v + c).collect(),
        };
        let value = Tensor::new(x.shape().to_vec(), data)?;
        self.push_op(value, Box::new(Unary { kind, a }))
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId> {
        self.unary(UnaryKind::Relu, a)
    }

    pub fn tanh(&mut self, a: TensorId) -> Result<TensorId> {
        self.unary(UnaryKind::Tanh, a)
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> Result<TensorId> {
        self.unary(UnaryKind::Scale(c), a)
    }

    pub fn add_scalar(&mut self, a: TensorId, c: f64) -> Result<TensorId> {
        self.unary(UnaryKind::AddScalar(c), a)
    }

    fn reduce(&mut self, kind: ReduceKind, a: TensorId, axis: usize) -> Result<TensorId> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::Domain(format!(
                "reduce axis {axis} out of range for shape {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let axis_size = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let out_numel = outer * inner;
        let mut data = vec![0.0; out_numel];
        let mut argmax = Vec::new();
        let mut margin = f64::INFINITY;
        let x = self.data(a);
        match kind {
            ReduceKind::Sum | ReduceKind::Mean => {
                for o in 0..outer {
                    for s in 0..axis_size {
                        let base = (o * axis_size + s) * inner;
                        let obase = o * inner;
                        for i in 0..inner {
                            data[obase + i] += x[base + i];
                        }
                    }
                }
                if kind == ReduceKind::Mean {
                    let inv = 1.0 / axis_size as f64;
                    for v in &mut data {
                        *v *= inv;
                    }
                }
            }
            ReduceKind::Max => {
                argmax = vec![0usize; out_numel];
                for o in 0..outer {
                    for i in 0..inner {
                        let mut best = f64::NEG_INFINITY;
                        let mut second = f64::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for s in 0..axis_size {
                            let idx = (o * axis_size + s) * inner + i;
                            let v = x[idx];
                            if v > best {
                                second = best;
                                best = v;
                                best_idx = idx;
                            } else if v > second {
                                second = v;
                            }
                        }
                        data[o * inner + i] = best;
                        argmax[o * inner + i] = best_idx;
                        // Exact ties come from duplicated inputs, which
                        // move together under perturbation; only a small
                        // nonzero gap marks a true kink.
                        if second.is_finite() && second < best {
                            margin = margin.min(best - second);
                        }
                    }
                }
            }
        }
        self.push_op(
            Tensor::new(out_shape, data)?,
            Box::new(Reduce {
                kind,
                a,
                outer,
                axis_size,
                inner,
                argmax,
                margin,
            }),
        )
    }

    pub fn reduce_sum(&mut self, a: TensorId, axis: usize) -> Result<TensorId> {
        self.reduce(ReduceKind::Sum, a, axis)
    }

    pub fn reduce_mean(&mut self, a: TensorId, axis: usize) -> Result<TensorId> {
        self.reduce(ReduceKind::Mean, a, axis)
    }

    /// Max along an axis; backward routes the gradient to the argmax
    /// (first occurrence on ties).
    pub fn reduce_max(&mut self, a: TensorId, axis: usize) -> Result<TensorId> {
        self.reduce(ReduceKind::Max, a, axis)
    }

    pub fn sum_all(&mut self, a: TensorId) -> Result<TensorId> {
        let s: f64 = self.data(a).iter().sum();
        self.push_op(Tensor::scalar(s), Box::new(SumAll { a }))
    }

    pub fn reshape(&mut self, a: TensorId, new_shape: Vec<usize>) -> Result<TensorId> {
        let x = self.value(a);
        let new_numel: usize = new_shape.iter().product();
        if new_numel != x.numel() {
            return Err(Error::Dimension(format!(
                "reshape {:?} -> {:?} changes element count",
                x.shape(),
                new_shape
            )));
        }
        let value = Tensor::new(new_shape, x.data().to_vec())?;
        self.push_op(value, Box::new(Reshape { a }))
    }

    /// Gather rows of a `[M, C]` tensor by index; backward scatter-adds.
    pub fn gather_rows(&mut self, a: TensorId, indices: Vec<usize>) -> Result<TensorId> {
        let x = self.value(a);
        if x.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "gather_rows expects a 2-D tensor, got {:?}",
                x.shape()
            )));
        }
        let (rows, row) = (x.shape()[0], x.shape()[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Domain(format!(
                "gather index {bad} out of range for {rows} rows"
            )));
        }
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in &indices {
            data.extend_from_slice(&x.data()[i * row..(i + 1) * row]);
        }
        let value = Tensor::new(vec![indices.len(), row], data)?;
        self.push_op(value, Box::new(GatherRows { a, indices, row }))
    }
}
