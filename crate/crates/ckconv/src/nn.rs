//! Linear layers and shared MLPs used by the kernel function, attention
//! head, and classifier head.

use rand::RngExt;

use crate::error::Result;
use crate::tensor::{Graph, Tensor, TensorId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: TensorId) -> Result<TensorId> {
        match self {
            Activation::None => Ok(x),
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
        }
    }
}

/// Fully connected layer. Weight is `[fan_in, fan_out]`, bias `[1, fan_out]`;
/// forward is `act(x @ w + b)` over rows of `x`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Linear {
    /// Fan-in scaled uniform init in `[-sqrt(1/fan_in), sqrt(1/fan_in)]`,
    /// weights first (row-major), then bias.
    pub fn init(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut impl RngExt) -> Self {
        let bound = (1.0 / fan_in as f64).sqrt();
        let weight = Tensor::new(
            vec![fan_in, fan_out],
            (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect(),
        )
        .expect("weight shape");
        let bias = Tensor::new(
            vec![1, fan_out],
            (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect(),
        )
        .expect("bias shape");
        Linear {
            weight,
            bias,
            activation,
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        Linear {
            weight: Tensor::zeros(vec![fan_in, fan_out]),
            bias: Tensor::zeros(vec![1, fan_out]),
            activation,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }
}

/// Stack of [`Linear`] layers applied in order.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `widths = [in, h1, ..., out]`; hidden layers get `activation`,
    /// the last layer gets `last`.
    pub fn init(
        widths: &[usize],
        activation: Activation,
        last: Activation,
        rng: &mut impl RngExt,
    ) -> Self {
        assert!(widths.len() >= 2, "mlp needs at least one layer");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 2 == widths.len() { last } else { activation };
                Linear::init(w[0], w[1], act, rng)
            })
            .collect();
        Mlp { layers }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty mlp").fan_out()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Linear::param_count).sum()
    }

    /// Visit parameters in a fixed order: per layer, weight then bias.
    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a Tensor)) {
        for (i, layer) in self.layers.iter().enumerate() {
            f(format!("{prefix}.w{i}"), &layer.weight);
            f(format!("{prefix}.b{i}"), &layer.bias);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut Tensor)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            f(format!("{prefix}.w{i}"), &mut layer.weight);
            f(format!("{prefix}.b{i}"), &mut layer.bias);
        }
    }

    pub fn bind(&self, g: &mut Graph) -> BoundMlp {
        BoundMlp {
            layers: self
                .layers
                .iter()
                .map(|l| (g.param(&l.weight), g.param(&l.bias), l.activation))
                .collect(),
        }
    }
}

/// Graph-inserted copy of an [`Mlp`]; ids are leaves whose gradients can
/// be read back after `backward`.
pub struct BoundMlp {
    pub layers: Vec<(TensorId, TensorId, Activation)>,
}

impl BoundMlp {
    /// Apply to `x` of shape `[rows, fan_in]`, shared across rows.
    pub fn forward(&self, g: &mut Graph, x: TensorId) -> Result<TensorId> {
        let mut h = x;
        for &(w, b, act) in &self.layers {
            let mm = g.matmul(h, w)?;
            let lin = g.add(mm, b)?;
            h = act.apply(g, lin)?;
        }
        Ok(h)
    }

    /// Parameter ids in visit order (per layer: weight, bias).
    pub fn param_ids(&self) -> Vec<TensorId> {
        self.layers.iter().flat_map(|&(w, b, _)| [w, b]).collect()
    }
}
