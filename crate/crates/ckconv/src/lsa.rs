//! Local set attention: one attention cube per local point set, computed
//! from max-pooled intermediate kernel features and applied with a +1
//! skip connection.

use crate::error::{Error, Result};
use crate::nn::{Activation, BoundMlp, Linear, Mlp};
use crate::tensor::{Graph, Tensor, TensorId};

/// Attention head: a single linear layer from the shared front MLP's
/// feature width to `v^3`, zero-initialized so training starts at the
/// identity-attention point (A = 0 everywhere).
#[derive(Debug, Clone)]
pub struct LsaParams {
    pub head: Mlp,
    pub v: usize,
}

impl LsaParams {
    pub fn zero_init(hidden: usize, v: usize) -> Self {
        LsaParams {
            head: Mlp {
                layers: vec![Linear::zeros(hidden, v * v * v, Activation::None)],
            },
            v,
        }
    }

    pub fn param_count(&self) -> usize {
        self.head.param_count()
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a Tensor)) {
        self.head.visit(&format!("{prefix}.head"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut Tensor)) {
        self.head.visit_mut(&format!("{prefix}.head"), f);
    }

    pub fn bind(&self, g: &mut Graph) -> BoundLsa {
        BoundLsa {
            head: self.head.bind(g),
            v: self.v,
        }
    }
}

pub struct BoundLsa {
    pub head: BoundMlp,
    pub v: usize,
}

/// Batched attention: max-pool `[S, N, h]` intermediate features over the
/// neighbor axis, then the head MLP, giving `[S, v^3]` attention values.
pub fn lsa_attention(g: &mut Graph, lsa: &BoundLsa, intermediate: TensorId) -> Result<TensorId> {
    let shape = g.shape(intermediate);
    if shape.len() != 3 {
        return Err(Error::Dimension(format!(
            "lsa_attention expects [S, N, h] intermediate features, got {shape:?}"
        )));
    }
    let pooled = g.reduce_max(intermediate, 1)?;
    lsa.head.forward(g, pooled)
}

/// Single-set attention cube `[v, v, v]` from `[N, h]` intermediate
/// features, per the module contract.
pub fn lsa_forward(g: &mut Graph, lsa: &BoundLsa, intermediate: TensorId) -> Result<TensorId> {
    let shape = g.shape(intermediate).to_vec();
    if shape.len() != 2 {
        return Err(Error::Dimension(format!(
            "lsa_forward expects [N, h] intermediate features, got {shape:?}"
        )));
    }
    let batched = g.reshape(intermediate, vec![1, shape[0], shape[1]])?;
    let a = lsa_attention(g, lsa, batched)?;
    let v = lsa.v;
    g.reshape(a, vec![v, v, v])
}

/// Batched skip-connected application: `out = (1 + A) (*) voxel` with the
/// attention broadcast across channels. `voxel` is `[S, v^3, C]`,
/// `attention` is `[S, v^3]`.
pub fn apply_attention_batch(
    g: &mut Graph,
    voxel: TensorId,
    attention: TensorId,
) -> Result<TensorId> {
    let vs = g.shape(voxel).to_vec();
    let as_ = g.shape(attention).to_vec();
    if vs.len() != 3 || as_.len() != 2 || vs[0] != as_[0] || vs[1] != as_[1] {
        return Err(Error::Dimension(format!(
            "attention {as_:?} does not match voxel {vs:?}"
        )));
    }
    let skip = g.add_scalar(attention, 1.0)?;
    let col = g.reshape(skip, vec![as_[0], as_[1], 1])?;
    g.mul(voxel, col)
}

/// Single-voxel application: `voxel` is `[v, v, v, C]`, `attention` is
/// `[v, v, v]`; spatial shapes must agree.
pub fn apply_attention(g: &mut Graph, voxel: TensorId, attention: TensorId) -> Result<TensorId> {
    let vs = g.shape(voxel).to_vec();
    let as_ = g.shape(attention).to_vec();
    if vs.len() != 4 || as_.len() != 3 || vs[..3] != as_[..] {
        return Err(Error::Dimension(format!(
            "attention {as_:?} does not match voxel spatial shape {vs:?}"
        )));
    }
    let q = vs[0] * vs[1] * vs[2];
    let flat_v = g.reshape(voxel, vec![1, q, vs[3]])?;
    let flat_a = g.reshape(attention, vec![1, q])?;
    let out = apply_attention_batch(g, flat_v, flat_a)?;
    g.reshape(out, vs)
}
