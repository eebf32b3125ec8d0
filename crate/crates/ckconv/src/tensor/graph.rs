//! Operation tape: nodes are appended in execution order, so insertion
//! order is already a topological order and backward is a single reverse
//! sweep that visits each node exactly once.

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

/// Per-input gradients returned by [`GraphOp::backward`], aligned with
/// [`GraphOp::inputs`]. `None` where the input does not need a gradient.
pub type InputGrads = Vec<Option<Vec<f64>>>;

/// A differentiable operation recorded on the tape.
///
/// Implementations own whatever forward-pass state backward needs
/// (argmax positions, cached row norms, ...).
pub trait GraphOp {
    fn name(&self) -> &'static str;

    fn inputs(&self) -> Vec<TensorId>;

    /// Propagate `out_grad` (same length as the output tensor) to the
    /// inputs. `needs[i]` is false when input `i` does not require a
    /// gradient; the slot may then be `None`.
    fn backward(&self, graph: &Graph, out: TensorId, out_grad: &[f64], needs: &[bool])
        -> InputGrads;

    /// Smallest top-1/top-2 margin for max-style ops, used by the
    /// gradient checker to reject inputs near a kink.
    fn max_margin(&self) -> Option<f64> {
        None
    }

    /// Flat input index chosen per output element, for max-style ops.
    fn argmax(&self) -> Option<&[usize]> {
        None
    }
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    op: Option<Box<dyn GraphOp>>,
}

/// Reverse-mode autodiff tape over [`Tensor`] values.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a leaf tensor. Leaves have no recorded op; `requires_grad`
    /// marks parameters whose gradient should be accumulated.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op: None,
        });
        id
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> TensorId {
        self.leaf(value, false)
    }

    /// Leaf parameter (clones the stored tensor).
    pub fn param(&mut self, value: &Tensor) -> TensorId {
        self.leaf(value.clone(), true)
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        self.nodes[id.0].value.data()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Gradient accumulated by the last [`Graph::backward`] call, if any.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Record an op node. Rejects non-finite outputs so a diverging
    /// forward pass fails at the op that produced it.
    pub fn push_op(&mut self, value: Tensor, op: Box<dyn GraphOp>) -> Result<TensorId> {
        let node = self.nodes.len();
        if !value.data().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                op: op.name(),
                node,
            });
        }
        let requires_grad = op
            .inputs()
            .iter()
            .any(|&inp| self.nodes[inp.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op: Some(op),
        });
        Ok(TensorId(node))
    }

    /// Reverse sweep from a scalar loss. Every `requires_grad` node
    /// reachable from `loss` ends up with its gradient populated;
    /// gradients accumulate additively across fan-out.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue; // not reachable from the loss
            };
            let Some(op) = self.nodes[i].op.as_deref() else {
                // Leaf parameter: keep its gradient for readback.
                grads[i] = Some(g);
                continue;
            };
            let inputs = op.inputs();
            let needs: Vec<bool> = inputs
                .iter()
                .map(|&inp| self.nodes[inp.0].requires_grad)
                .collect();
            let input_grads = op.backward(self, TensorId(i), &g, &needs);
            debug_assert_eq!(input_grads.len(), inputs.len());
            for (slot, &inp) in input_grads.into_iter().zip(&inputs) {
                let Some(ig) = slot else { continue };
                if !self.nodes[inp.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(ig.len(), self.nodes[inp.0].value.numel());
                match &mut grads[inp.0] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&ig) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(ig),
                }
            }
        }

        for (node, grad) in self.nodes.iter_mut().zip(grads) {
            if node.requires_grad {
                // Leaf parameters not reachable from the loss read back as zero.
                node.grad = grad.or_else(|| {
                    node.op
                        .is_none()
                        .then(|| vec![0.0; node.value.numel()])
                });
            }
        }
        Ok(())
    }

    /// Smallest top-1/top-2 margin across all max-style nodes, or `None`
    /// if the graph contains none.
    pub fn min_max_margin(&self) -> Option<f64> {
        self.nodes
            .iter()
            .filter_map(|n| n.op.as_deref().and_then(|op| op.max_margin()))
            .fold(None, |acc, m| Some(acc.map_or(m, |a: f64| a.min(m))))
    }

    /// Flat argmax indices recorded by a max-style node, if `id` is one.
    pub fn node_argmax(&self, id: TensorId) -> Option<&[usize]> {
        self.nodes[id.0].op.as_deref().and_then(|op| op.argmax())
    }

    /// Hash of every max-style node's argmax choices, in tape order. Two
    /// forward passes of the same computation on nearby inputs share a
    /// signature exactly when no max crossed a kink between them.
    pub fn max_argmax_signature(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            if let Some(argmax) = node.op.as_deref().and_then(|op| op.argmax()) {
                argmax.hash(&mut h);
            }
        }
        h.finish()
    }
}
