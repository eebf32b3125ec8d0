//! The CKConv layer: point convolution with the cubic kernel, attention,
//! and a discrete 3-D convolution head that collapses the weight cube to
//! an output feature vector. A straight-line scalar-loop oracle with no
//! shared tensor code verifies the fast path.

use rand::RngExt;

use crate::error::{Error, Result};
use crate::kernel::{apply_norm, kernel_forward, CubicKernelParams, NormKind, NORM_GUARD};
use crate::lsa::{apply_attention_batch, lsa_attention, LsaParams};
use crate::nn::{Activation, Mlp};
use crate::pointcloud::{radius_neighbors, LocalPointSet};
use crate::tensor::{Graph, GraphOp, InputGrads, Tensor, TensorId};

// ---------------------------------------------------------------------------
// Point convolution: weight cube per neighbor times feature vector, summed
// ---------------------------------------------------------------------------

/// `voxels[q, c] = sum_n weights[n, q] * feats[n, c]`, reshaped to
/// `[v, v, v, C]` in row-major voxel order.
pub fn point_conv(
    g: &mut Graph,
    weights: TensorId,
    feats: TensorId,
    v: usize,
) -> Result<TensorId> {
    let ws = g.shape(weights).to_vec();
    let fs = g.shape(feats).to_vec();
    if ws.len() != 2 || fs.len() != 2 || ws[0] != fs[0] || ws[1] != v * v * v {
        return Err(Error::Dimension(format!(
            "point_conv expects weights [N, v^3] and feats [N, C] with matching N, got {ws:?} x {fs:?} (v={v})"
        )));
    }
    let (n, q) = (ws[0], ws[1]);
    let c = fs[1];
    let wb = g.reshape(weights, vec![1, n, q])?;
    let fb = g.reshape(feats, vec![1, n, c])?;
    let cube = g.bmm_ta(wb, fb)?;
    g.reshape(cube, vec![v, v, v, c])
}

/// Batched point convolution over `S` local sets:
/// `[S, N, v^3] x [S, N, C] -> [S, v^3, C]`.
pub fn point_conv_batch(g: &mut Graph, weights: TensorId, feats: TensorId) -> Result<TensorId> {
    g.bmm_ta(weights, feats)
}

// ---------------------------------------------------------------------------
// Valid 3-D cross-correlation as a graph op
// ---------------------------------------------------------------------------

/// One conv layer; kernel is `[C_out, k, k, k, C_in]` (channels-last to
/// match the `[.., D, H, W, C]` input layout), bias `[C_out]`.
#[derive(Debug, Clone)]
pub struct Conv3dLayer {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Conv3dLayer {
    pub fn k(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn c_in(&self) -> usize {
        self.kernel.shape()[4]
    }

    pub fn c_out(&self) -> usize {
        self.kernel.shape()[0]
    }
}

/// Stack of valid (no-padding) 3-D convolutions whose composed spatial
/// reduction takes the `v` cube to exactly 1x1x1.
#[derive(Debug, Clone)]
pub struct Conv3dParams {
    pub layers: Vec<Conv3dLayer>,
}

/// Kernel sizes collapsing each supported cube size to 1.
fn stack_kernel_sizes(v: usize) -> Result<Vec<usize>> {
    match v {
        1 => Ok(vec![1]),
        2 => Ok(vec![2]),
        3 => Ok(vec![3]),
        4 => Ok(vec![3, 2]),
        5 => Ok(vec![3, 3]),
        other => Err(Error::Domain(format!(
            "no conv stack defined for v={other} (supported: 1..=5)"
        ))),
    }
}

impl Conv3dParams {
    /// Stack for the given cube size: single layer `C_in -> C_out`, or two
    /// layers `C_in -> max(C_in, C_out/2) -> C_out` with `activation`
    /// between them and none after the last.
    pub fn init(
        v: usize,
        c_in: usize,
        c_out: usize,
        activation: Activation,
        rng: &mut impl RngExt,
    ) -> Result<Self> {
        let ks = stack_kernel_sizes(v)?;
        let mut channels = vec![c_in];
        if ks.len() == 2 {
            channels.push(c_in.max(c_out / 2));
        }
        channels.push(c_out);
        let mut layers = Vec::new();
        for (i, &k) in ks.iter().enumerate() {
            let (ci, co) = (channels[i], channels[i + 1]);
            let fan_in = k * k * k * ci;
            let bound = (1.0 / fan_in as f64).sqrt();
            let kernel = Tensor::new(
                vec![co, k, k, k, ci],
                (0..co * k * k * k * ci)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect(),
            )?;
            let bias = Tensor::new(
                vec![co],
                (0..co).map(|_| rng.random_range(-bound..bound)).collect(),
            )?;
            let act = if i + 1 == ks.len() {
                Activation::None
            } else {
                activation
            };
            layers.push(Conv3dLayer {
                kernel,
                bias,
                activation: act,
            });
        }
        Ok(Conv3dParams { layers })
    }

    pub fn c_out(&self) -> usize {
        self.layers.last().expect("non-empty stack").c_out()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.kernel.numel() + l.bias.numel())
            .sum()
    }

    /// Check that the stack consumes a `v` cube down to exactly 1x1x1.
    pub fn validate_spatial(&self, v: usize) -> Result<()> {
        let mut s = v;
        for layer in &self.layers {
            let k = layer.k();
            if k > s {
                return Err(Error::Dimension(format!(
                    "conv kernel {k} larger than input extent {s}"
                )));
            }
            s = s - k + 1;
        }
        if s != 1 {
            return Err(Error::Contract(format!(
                "conv stack reduces {v} to {s}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a Tensor)) {
        for (i, layer) in self.layers.iter().enumerate() {
            f(format!("{prefix}.k{i}"), &layer.kernel);
            f(format!("{prefix}.c{i}"), &layer.bias);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut Tensor)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            f(format!("{prefix}.k{i}"), &mut layer.kernel);
            f(format!("{prefix}.c{i}"), &mut layer.bias);
        }
    }

    pub fn bind(&self, g: &mut Graph) -> BoundConv3d {
        BoundConv3d {
            layers: self
                .layers
                .iter()
                .map(|l| (g.param(&l.kernel), g.param(&l.bias), l.activation))
                .collect(),
        }
    }
}

pub struct BoundConv3d {
    pub layers: Vec<(TensorId, TensorId, Activation)>,
}

struct Conv3dOp {
    input: TensorId,
    kernel: TensorId,
    bias: TensorId,
    batches: usize,
    s_in: usize,
    s_out: usize,
    k: usize,
    c_in: usize,
    c_out: usize,
}

impl Conv3dOp {
    fn in_offset(&self, b: usize, d: usize, h: usize, w: usize) -> usize {
        (((b * self.s_in + d) * self.s_in + h) * self.s_in + w) * self.c_in
    }

    fn out_offset(&self, b: usize, d: usize, h: usize, w: usize) -> usize {
        (((b * self.s_out + d) * self.s_out + h) * self.s_out + w) * self.c_out
    }

    fn kernel_offset(&self, o: usize, kd: usize, kh: usize, kw: usize) -> usize {
        (((o * self.k + kd) * self.k + kh) * self.k + kw) * self.c_in
    }
}

impl GraphOp for Conv3dOp {
    fn name(&self) -> &'static str {
        "conv3d"
    }

    fn inputs(&self) -> Vec<TensorId> {
        vec![self.input, self.kernel, self.bias]
    }

    fn backward(&self, g: &Graph, _out: TensorId, grad: &[f64], needs: &[bool]) -> InputGrads {
        let input = g.data(self.input);
        let kernel = g.data(self.kernel);
        let mut din = needs[0].then(|| vec![0.0; input.len()]);
        let mut dkern = needs[1].then(|| vec![0.0; kernel.len()]);
        let mut dbias = needs[2].then(|| vec![0.0; self.c_out]);

        for b in 0..self.batches {
            for od in 0..self.s_out {
                for oh in 0..self.s_out {
                    for ow in 0..self.s_out {
                        let go = self.out_offset(b, od, oh, ow);
                        let gv = &grad[go..go + self.c_out];
                        if let Some(db) = dbias.as_mut() {
                            for (acc, &gvo) in db.iter_mut().zip(gv) {
                                *acc += gvo;
                            }
                        }
                        for kd in 0..self.k {
                            for kh in 0..self.k {
                                for kw in 0..self.k {
                                    let io = self.in_offset(b, od + kd, oh + kh, ow + kw);
                                    let iv = &input[io..io + self.c_in];
                                    for (o, &gvo) in gv.iter().enumerate() {
                                        let ko = self.kernel_offset(o, kd, kh, kw);
                                        if let Some(dk) = dkern.as_mut() {
                                            let dk_row = &mut dk[ko..ko + self.c_in];
                                            for (d, &x) in dk_row.iter_mut().zip(iv) {
                                                *d += gvo * x;
                                            }
                                        }
                                        if let Some(di) = din.as_mut() {
                                            let krow = &kernel[ko..ko + self.c_in];
                                            let di_row = &mut di[io..io + self.c_in];
                                            for (d, &kx) in di_row.iter_mut().zip(krow) {
                                                *d += gvo * kx;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        vec![din, dkern, dbias]
    }
}

impl Graph {
    /// Valid cross-correlation of `[B, s, s, s, C_in]` against a
    /// `[C_out, k, k, k, C_in]` kernel plus `[C_out]` bias, producing
    /// `[B, s-k+1, s-k+1, s-k+1, C_out]`.
    pub fn conv3d(&mut self, input: TensorId, kernel: TensorId, bias: TensorId) -> Result<TensorId> {
        let is = self.shape(input).to_vec();
        let ks = self.shape(kernel).to_vec();
        let bs = self.shape(bias).to_vec();
        if is.len() != 5 || is[1] != is[2] || is[2] != is[3] {
            return Err(Error::Dimension(format!(
                "conv3d expects cubic [B,s,s,s,C] input, got {is:?}"
            )));
        }
        if ks.len() != 5 || ks[1] != ks[2] || ks[2] != ks[3] || ks[4] != is[4] {
            return Err(Error::Dimension(format!(
                "conv3d kernel {ks:?} incompatible with input {is:?}"
            )));
        }
        if bs != [ks[0]] {
            return Err(Error::Dimension(format!(
                "conv3d bias {bs:?} must be [{}]",
                ks[0]
            )));
        }
        let (batches, s_in, c_in) = (is[0], is[1], is[4]);
        let (c_out, k) = (ks[0], ks[1]);
        if k > s_in {
            return Err(Error::Dimension(format!(
                "conv3d kernel size {k} exceeds spatial extent {s_in}"
            )));
        }
        let s_out = s_in - k + 1;
        let op = Conv3dOp {
            input,
            kernel,
            bias,
            batches,
            s_in,
            s_out,
            k,
            c_in,
            c_out,
        };

        let x = self.data(input);
        let kern = self.data(kernel);
        let bias_v = self.data(bias);
        let mut out = vec![0.0; batches * s_out * s_out * s_out * c_out];
        for b in 0..batches {
            for od in 0..s_out {
                for oh in 0..s_out {
                    for ow in 0..s_out {
                        let oo = op.out_offset(b, od, oh, ow);
                        let out_vec = &mut out[oo..oo + c_out];
                        out_vec.copy_from_slice(bias_v);
                        for kd in 0..k {
                            for kh in 0..k {
                                for kw in 0..k {
                                    let io = op.in_offset(b, od + kd, oh + kh, ow + kw);
                                    let iv = &x[io..io + c_in];
                                    for (o, acc) in out_vec.iter_mut().enumerate() {
                                        let ko = op.kernel_offset(o, kd, kh, kw);
                                        let krow = &kern[ko..ko + c_in];
                                        let mut s = 0.0;
                                        for (&kx, &xv) in krow.iter().zip(iv) {
                                            s += kx * xv;
                                        }
                                        *acc += s;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        self.push_op(
            Tensor::new(vec![batches, s_out, s_out, s_out, c_out], out)?,
            Box::new(op),
        )
    }
}

/// Run the full stack on a batch of cubes `[S, v, v, v, C_in]`, returning
/// `[S, C_out]`.
pub fn conv3d_stack_batch(
    g: &mut Graph,
    conv: &BoundConv3d,
    cubes: TensorId,
) -> Result<TensorId> {
    let mut h = cubes;
    for &(kernel, bias, act) in &conv.layers {
        let c = g.conv3d(h, kernel, bias)?;
        h = act.apply(g, c)?;
    }
    let shape = g.shape(h).to_vec();
    if shape[1] != 1 || shape[2] != 1 || shape[3] != 1 {
        return Err(Error::Contract(format!(
            "conv stack left spatial extent {shape:?}, expected 1x1x1"
        )));
    }
    g.reshape(h, vec![shape[0], shape[4]])
}

/// Single-voxel contract: `[v, v, v, C_in] -> [C_out]`.
pub fn conv3d_forward(g: &mut Graph, conv: &BoundConv3d, voxel: TensorId) -> Result<TensorId> {
    let s = g.shape(voxel).to_vec();
    if s.len() != 4 {
        return Err(Error::Dimension(format!(
            "conv3d_forward expects [v,v,v,C], got {s:?}"
        )));
    }
    let batched = g.reshape(voxel, vec![1, s[0], s[1], s[2], s[3]])?;
    let out = conv3d_stack_batch(g, conv, batched)?;
    let c_out = g.shape(out)[1];
    g.reshape(out, vec![c_out])
}

// ---------------------------------------------------------------------------
// The complete CKConv layer
// ---------------------------------------------------------------------------

/// Parameters for one CKConv layer: the cubic kernel, optional local set
/// attention (sharing the kernel's front MLP), the conv stack, and the
/// weight normalization choice.
#[derive(Debug, Clone)]
pub struct CkconvLayer {
    pub kernel: CubicKernelParams,
    pub lsa: Option<LsaParams>,
    pub conv: Conv3dParams,
    pub norm: NormKind,
}

impl CkconvLayer {
    /// Draw order is fixed (kernel front, kernel head, conv stack) and the
    /// attention head is zero-initialized, so toggling `lsa` or `norm`
    /// leaves every other parameter bit-identical under the same seed.
    pub fn init(
        v: usize,
        c_in: usize,
        c_out: usize,
        hidden: usize,
        norm: NormKind,
        lsa: bool,
        activation: Activation,
        rng: &mut impl RngExt,
    ) -> Result<Self> {
        let kernel = CubicKernelParams::init(v, hidden, activation, rng);
        let conv = Conv3dParams::init(v, c_in, c_out, activation, rng)?;
        let lsa = lsa.then(|| LsaParams::zero_init(hidden, v));
        Ok(CkconvLayer {
            kernel,
            lsa,
            conv,
            norm,
        })
    }

    pub fn v(&self) -> usize {
        self.kernel.v
    }

    pub fn c_out(&self) -> usize {
        self.conv.c_out()
    }

    pub fn param_count(&self) -> usize {
        self.kernel.param_count()
            + self.lsa.as_ref().map_or(0, LsaParams::param_count)
            + self.conv.param_count()
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a Tensor)) {
        self.kernel.visit(&format!("{prefix}.kernel"), f);
        if let Some(lsa) = &self.lsa {
            lsa.visit(&format!("{prefix}.lsa"), f);
        }
        self.conv.visit(&format!("{prefix}.conv"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut Tensor)) {
        self.kernel.visit_mut(&format!("{prefix}.kernel"), f);
        if let Some(lsa) = &mut self.lsa {
            lsa.visit_mut(&format!("{prefix}.lsa"), f);
        }
        self.conv.visit_mut(&format!("{prefix}.conv"), f);
    }

    pub fn bind(&self, g: &mut Graph) -> BoundCkconvLayer {
        BoundCkconvLayer {
            kernel: self.kernel.bind(g),
            lsa: self.lsa.as_ref().map(|l| l.bind(g)),
            conv: self.conv.bind(g),
            norm: self.norm,
            v: self.kernel.v,
        }
    }
}

pub struct BoundCkconvLayer {
    pub kernel: crate::kernel::BoundCubicKernel,
    pub lsa: Option<crate::lsa::BoundLsa>,
    pub conv: BoundConv3d,
    pub norm: NormKind,
    pub v: usize,
}

/// Canonical neighbor order: rows sorted by relative coordinates
/// (lexicographic), ties by neighbor index. Summation over neighbors
/// then happens in a storage-order-independent sequence, which is what
/// makes neighbor-permutation invariance bit-exact.
pub fn canonical_order(set: &LocalPointSet) -> Vec<usize> {
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (set.relative[a], set.relative[b]);
        ra.partial_cmp(&rb)
            .expect("finite coordinates")
            .then(set.neighbor_indices[a].cmp(&set.neighbor_indices[b]))
    });
    order
}

/// Sample one local point set per center, in center order, from a shared
/// rng stream.
pub fn sample_layer(
    positions: &[[f64; 3]],
    centers: &[usize],
    r: f64,
    n: usize,
    rng: &mut impl RngExt,
) -> Result<Vec<LocalPointSet>> {
    centers
        .iter()
        .map(|&c| radius_neighbors(positions, positions[c], r, n, rng))
        .collect()
}

/// Forward one CKConv layer over `sets`, reading input features from the
/// graph tensor `feats` (`[M, C_in]`, rows indexed by neighbor id).
/// Returns `[S, C_out]` stacked in set order.
pub fn ckconv_forward_sets(
    g: &mut Graph,
    layer: &BoundCkconvLayer,
    sets: &[LocalPointSet],
    feats: TensorId,
) -> Result<TensorId> {
    if sets.is_empty() {
        return Err(Error::Contract("ckconv needs at least one local set".into()));
    }
    let n = sets[0].len();
    if sets.iter().any(|s| s.len() != n) {
        return Err(Error::Contract(
            "all local point sets must share the same neighbor count".into(),
        ));
    }
    let s_count = sets.len();
    let v = layer.v;
    let q = v * v * v;
    let c_in = g.shape(feats)[1];

    // Flatten every set in canonical order into one [S*N, 3] matrix and a
    // matching gather index list.
    let mut rel = Vec::with_capacity(s_count * n * 3);
    let mut gather = Vec::with_capacity(s_count * n);
    for set in sets {
        for &i in &canonical_order(set) {
            rel.extend_from_slice(&set.relative[i]);
            gather.push(set.neighbor_indices[i]);
        }
    }
    let rel = g.constant(Tensor::new(vec![s_count * n, 3], rel)?);
    let nf = g.gather_rows(feats, gather)?;

    let (weights, intermediate) = kernel_forward(g, &layer.kernel, rel)?;
    let weights = apply_norm(g, layer.norm, weights)?;

    let wb = g.reshape(weights, vec![s_count, n, q])?;
    let fb = g.reshape(nf, vec![s_count, n, c_in])?;
    let mut voxel = point_conv_batch(g, wb, fb)?; // [S, q, C_in]

    if let Some(lsa) = &layer.lsa {
        let ib = g.reshape(intermediate, vec![s_count, n, g.shape(intermediate)[1]])?;
        let attention = lsa_attention(g, lsa, ib)?;
        voxel = apply_attention_batch(g, voxel, attention)?;
    }

    let cubes = g.reshape(voxel, vec![s_count, v, v, v, c_in])?;
    conv3d_stack_batch(g, &layer.conv, cubes)
}

/// Whole-layer convenience: sample neighborhoods, run the layer on the
/// cloud's features (or all-ones when absent), and return the per-center
/// output rows as plain values.
pub fn ckconv_forward(
    layer: &CkconvLayer,
    cloud: &crate::pointcloud::PointCloud,
    centers: &[usize],
    r: f64,
    n: usize,
    rng: &mut impl RngExt,
) -> Result<Vec<Vec<f64>>> {
    let sets = sample_layer(cloud.positions(), centers, r, n, rng)?;
    let feats = match cloud.features() {
        Some(f) => f.clone(),
        None => Tensor::filled(vec![cloud.len(), 1], 1.0),
    };
    let mut g = Graph::new();
    let bound = layer.bind(&mut g);
    let fi = g.constant(feats);
    let out = ckconv_forward_sets(&mut g, &bound, &sets, fi)?;
    let c_out = g.shape(out)[1];
    Ok(g.data(out)
        .chunks(c_out)
        .map(|row| row.to_vec())
        .collect())
}

// ---------------------------------------------------------------------------
// Straight-line oracle: same semantics, explicit scalar loops, no Graph
// or Tensor arithmetic anywhere.
// ---------------------------------------------------------------------------

fn oracle_mlp(mlp: &Mlp, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for layer in &mlp.layers {
        let (fan_in, fan_out) = (layer.fan_in(), layer.fan_out());
        let w = layer.weight.data();
        let b = layer.bias.data();
        let mut out = vec![0.0; fan_out];
        for j in 0..fan_out {
            let mut s = b[j];
            for (i, &hv) in h.iter().enumerate().take(fan_in) {
                s += hv * w[i * fan_out + j];
            }
            out[j] = match layer.activation {
                Activation::None => s,
                Activation::Relu => s.max(0.0),
                Activation::Tanh => s.tanh(),
            };
        }
        h = out;
    }
    h
}

fn oracle_norm(kind: NormKind, row: &mut [f64]) {
    match kind {
        NormKind::None => {}
        NormKind::L2 => {
            let mut sq = 0.0;
            for &w in row.iter() {
                sq += w * w;
            }
            let n = sq.sqrt();
            if n >= NORM_GUARD {
                for w in row.iter_mut() {
                    *w /= n;
                }
            }
        }
        NormKind::St => {
            let q = row.len() as f64;
            let mut mu = 0.0;
            for &w in row.iter() {
                mu += w;
            }
            mu /= q;
            let mut var = 0.0;
            for &w in row.iter() {
                var += (w - mu) * (w - mu);
            }
            let sigma = (var / q).sqrt();
            if sigma < NORM_GUARD {
                for w in row.iter_mut() {
                    *w = 0.0;
                }
            } else {
                for w in row.iter_mut() {
                    *w = (*w - mu) / sigma;
                }
            }
        }
    }
}

/// Reference implementation of the whole layer with explicit loops.
/// Sampling (and neighbor canonicalization) is identical to the fast
/// path; everything numeric is recomputed from scratch.
pub fn ckconv_oracle(
    layer: &CkconvLayer,
    cloud: &crate::pointcloud::PointCloud,
    centers: &[usize],
    r: f64,
    n: usize,
    rng: &mut impl RngExt,
) -> Result<Vec<Vec<f64>>> {
    let sets = sample_layer(cloud.positions(), centers, r, n, rng)?;
    let c_in = cloud.features().map_or(1, |f| f.shape()[1]);
    let feat_of = |idx: usize, c: usize| -> f64 {
        match cloud.features() {
            Some(f) => f.data()[idx * c_in + c],
            None => 1.0,
        }
    };
    let v = layer.v();
    let q = v * v * v;
    let hidden = layer.kernel.hidden_dim();

    let mut outputs = Vec::with_capacity(sets.len());
    for set in &sets {
        let order = canonical_order(set);
        // Per-neighbor kernel evaluation.
        let mut weight_rows = Vec::with_capacity(order.len());
        let mut inter_rows = Vec::with_capacity(order.len());
        let mut neigh = Vec::with_capacity(order.len());
        for &i in &order {
            let inter = oracle_mlp(&layer.kernel.front, &set.relative[i]);
            let mut w = oracle_mlp(&layer.kernel.head, &inter);
            oracle_norm(layer.norm, &mut w);
            weight_rows.push(w);
            inter_rows.push(inter);
            neigh.push(set.neighbor_indices[i]);
        }

        // Point convolution: outer product per neighbor, summed.
        let mut voxel = vec![0.0; q * c_in];
        for (row, &idx) in weight_rows.iter().zip(&neigh) {
            for (qi, &w) in row.iter().enumerate() {
                for c in 0..c_in {
                    voxel[qi * c_in + c] += w * feat_of(idx, c);
                }
            }
        }

        // Attention from max-pooled intermediate features.
        if let Some(lsa) = &layer.lsa {
            let mut pooled = vec![f64::NEG_INFINITY; hidden];
            for row in &inter_rows {
                for (p, &x) in pooled.iter_mut().zip(row) {
                    if x > *p {
                        *p = x;
                    }
                }
            }
            let attention = oracle_mlp(&lsa.head, &pooled);
            for qi in 0..q {
                for c in 0..c_in {
                    voxel[qi * c_in + c] *= 1.0 + attention[qi];
                }
            }
        }

        // Conv stack with six nested loops per layer.
        let mut cube = voxel;
        let mut side = v;
        let mut channels = c_in;
        for conv in &layer.conv.layers {
            let (k, co) = (conv.k(), conv.c_out());
            if k > side {
                return Err(Error::Dimension(format!(
                    "oracle conv kernel {k} larger than extent {side}"
                )));
            }
            let so = side - k + 1;
            let kern = conv.kernel.data();
            let bias = conv.bias.data();
            let mut next = vec![0.0; so * so * so * co];
            for od in 0..so {
                for oh in 0..so {
                    for ow in 0..so {
                        for o in 0..co {
                            let mut s = bias[o];
                            for kd in 0..k {
                                for kh in 0..k {
                                    for kw in 0..k {
                                        for c in 0..channels {
                                            let iv = cube[(((od + kd) * side + (oh + kh))
                                                * side
                                                + (ow + kw))
                                                * channels
                                                + c];
                                            let kv = kern[(((o * k + kd) * k + kh) * k + kw)
                                                * channels
                                                + c];
                                            s += iv * kv;
                                        }
                                    }
                                }
                            }
                            let s = match conv.activation {
                                Activation::None => s,
                                Activation::Relu => s.max(0.0),
                                Activation::Tanh => s.tanh(),
                            };
                            next[((od * so + oh) * so + ow) * co + o] = s;
                        }
                    }
                }
            }
            cube = next;
            side = so;
            channels = co;
        }
        if side != 1 {
            return Err(Error::Contract(format!(
                "oracle conv stack left extent {side}, expected 1"
            )));
        }
        outputs.push(cube);
    }
    Ok(outputs)
}
