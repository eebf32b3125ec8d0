//! Hierarchical CKConv classifier: two set-abstraction stages, global
//! max pooling, and a fully connected head with dropout.

use rand::RngExt;

use crate::ckconv::{ckconv_forward_sets, sample_layer, BoundCkconvLayer, CkconvLayer};
use crate::error::{Error, Result};
use crate::kernel::NormKind;
use crate::nn::{Activation, BoundMlp, Mlp};
use crate::pointcloud::{farthest_point_sampling, LocalPointSet, PointCloud};
use crate::tensor::{Graph, GraphOp, InputGrads, Tensor, TensorId};

/// One set-abstraction stage: subsample `centers` points, group
/// `neighbors` within `radius`, and run a CKConv layer `c_in -> c_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub centers: usize,
    pub radius: f64,
    pub neighbors: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub v: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub stages: Vec<StageConfig>,
    pub head_hidden: usize,
    pub classes: usize,
    pub dropout: f64,
    pub kernel_hidden: usize,
    pub norm: NormKind,
    pub lsa: bool,
    pub activation: Activation,
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Contract("classifier needs at least one stage".into()));
        }
        for pair in self.stages.windows(2) {
            if pair[0].c_out != pair[1].c_in {
                return Err(Error::Contract(format!(
                    "stage output channels {} do not feed stage input channels {}",
                    pair[0].c_out, pair[1].c_in
                )));
            }
            if pair[1].centers > pair[0].centers {
                return Err(Error::Contract(format!(
                    "stage centers must not grow: {} -> {}",
                    pair[0].centers, pair[1].centers
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Contract(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.classes < 2 {
            return Err(Error::Contract("need at least two classes".into()));
        }
        Ok(())
    }
}

/// All learnable parameters of the classifier.
#[derive(Debug, Clone)]
pub struct ClassifierParams {
    pub stages: Vec<CkconvLayer>,
    pub head: Mlp,
}

impl ClassifierParams {
    pub fn init(config: &ClassifierConfig, rng: &mut impl RngExt) -> Result<Self> {
        config.validate()?;
        let stages = config
            .stages
            .iter()
            .map(|s| {
                CkconvLayer::init(
                    s.v,
                    s.c_in,
                    s.c_out,
                    config.kernel_hidden,
                    config.norm,
                    config.lsa,
                    config.activation,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let c_last = config.stages.last().expect("validated").c_out;
        let head = Mlp::init(
            &[c_last, config.head_hidden, config.classes],
            config.activation,
            Activation::None,
            rng,
        );
        Ok(ClassifierParams { stages, head })
    }

    pub fn param_count(&self) -> usize {
        self.stages.iter().map(CkconvLayer::param_count).sum::<usize>() + self.head.param_count()
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a Tensor)) {
        for (i, stage) in self.stages.iter().enumerate() {
            stage.visit(&format!("stage{i}"), f);
        }
        self.head.visit("head", f);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(String, &mut Tensor)) {
        for (i, stage) in self.stages.iter_mut().enumerate() {
            stage.visit_mut(&format!("stage{i}"), f);
        }
        self.head.visit_mut("head", f);
    }

    /// Copy all parameters into one flat vector (visit order).
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        self.visit(&mut |_, t| flat.extend_from_slice(t.data()));
        flat
    }

    /// Overwrite all parameters from a flat vector (visit order).
    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        let mut offset = 0;
        let mut fail = false;
        self.visit_mut(&mut |_, t| {
            let n = t.numel();
            if offset + n > flat.len() {
                fail = true;
                return;
            }
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        });
        if fail || offset != flat.len() {
            return Err(Error::Contract(format!(
                "flat parameter vector length {} does not match model ({} consumed)",
                flat.len(),
                offset
            )));
        }
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph) -> BoundClassifier {
        BoundClassifier {
            stages: self.stages.iter().map(|s| s.bind(g)).collect(),
            head: self.head.bind(g),
        }
    }
}

pub struct BoundClassifier {
    pub stages: Vec<BoundCkconvLayer>,
    pub head: BoundMlp,
}

impl BoundClassifier {
    /// Parameter ids in the same order as `ClassifierParams::visit`.
    pub fn param_ids(&self) -> Vec<TensorId> {
        let mut ids = Vec::new();
        for stage in &self.stages {
            ids.extend(stage.kernel.front.param_ids());
            ids.extend(stage.kernel.head.param_ids());
            if let Some(lsa) = &stage.lsa {
                ids.extend(lsa.head.param_ids());
            }
            ids.extend(stage.conv.layers.iter().flat_map(|&(k, b, _)| [k, b]));
        }
        ids.extend(self.head.param_ids());
        ids
    }
}

/// Frozen sampling decisions for one forward pass: per stage, the chosen
/// center indices (into the previous level's points) and the local point
/// sets around them.
#[derive(Debug, Clone)]
pub struct SamplingPlan {
    pub stages: Vec<StagePlan>,
}

#[derive(Debug, Clone)]
pub struct StagePlan {
    pub center_indices: Vec<usize>,
    pub sets: Vec<LocalPointSet>,
    /// Positions of this stage's centers, the point list of the next level.
    pub positions: Vec<[f64; 3]>,
}

/// Draw FPS centers and radius neighborhoods for every stage from `rng`.
pub fn plan_sampling(
    cloud: &PointCloud,
    config: &ClassifierConfig,
    rng: &mut impl RngExt,
) -> Result<SamplingPlan> {
    let mut level_positions: Vec<[f64; 3]> = cloud.positions().to_vec();
    let mut stages = Vec::with_capacity(config.stages.len());
    for stage in &config.stages {
        let m_out = stage.centers.min(level_positions.len());
        let center_indices = farthest_point_sampling(&level_positions, m_out, rng)?;
        let sets = sample_layer(
            &level_positions,
            &center_indices,
            stage.radius,
            stage.neighbors,
            rng,
        )?;
        let positions: Vec<[f64; 3]> = center_indices
            .iter()
            .map(|&i| level_positions[i])
            .collect();
        stages.push(StagePlan {
            center_indices,
            sets,
            positions: positions.clone(),
        });
        level_positions = positions;
    }
    Ok(SamplingPlan { stages })
}

/// Default input features: the cloud's channels when present, else a
/// single all-ones channel (positions only enter through relative
/// coordinates, so uniform scaling never changes these).
pub fn initial_features(cloud: &PointCloud) -> Tensor {
    match cloud.features() {
        Some(f) => f.clone(),
        None => Tensor::filled(vec![cloud.len(), 1], 1.0),
    }
}

/// Dropout configuration for a training-mode forward pass.
pub struct DropoutMode<'r, R: RngExt> {
    pub p: f64,
    pub rng: &'r mut R,
}

/// Forward pass over a frozen sampling plan. Returns the logits tensor
/// (`[classes]`). Train mode applies inverted dropout after the head's
/// hidden layer; eval is a pure function of parameters, features, and
/// the plan.
pub fn classify_forward<R: RngExt>(
    g: &mut Graph,
    model: &BoundClassifier,
    feats0: TensorId,
    plan: &SamplingPlan,
    mut dropout: Option<DropoutMode<'_, R>>,
) -> Result<TensorId> {
    if plan.stages.len() != model.stages.len() {
        return Err(Error::Contract(format!(
            "plan has {} stages, model has {}",
            plan.stages.len(),
            model.stages.len()
        )));
    }
    let mut feats = feats0;
    for (stage, stage_plan) in model.stages.iter().zip(&plan.stages) {
        feats = ckconv_forward_sets(g, stage, &stage_plan.sets, feats)?;
    }
    // Global max pool over the remaining centers.
    let pooled = g.reduce_max(feats, 0)?;
    let c = g.shape(pooled)[0];
    let mut h = g.reshape(pooled, vec![1, c])?;

    let (hidden_layers, out_layer) = model
        .head
        .layers
        .split_at(model.head.layers.len() - 1);
    for &(w, b, act) in hidden_layers {
        let mm = g.matmul(h, w)?;
        let lin = g.add(mm, b)?;
        h = act.apply(g, lin)?;
        if let Some(d) = dropout.as_mut() {
            if d.p > 0.0 {
                // Inverted dropout: eval path stays untouched.
                let keep = 1.0 - d.p;
                let width = g.shape(h)[1];
                let mask: Vec<f64> = (0..width)
                    .map(|_| {
                        if d.rng.random_range(0.0..1.0) < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let m = g.constant(Tensor::new(vec![1, width], mask)?);
                h = g.mul(h, m)?;
            }
        }
    }
    let &(w, b, act) = out_layer.first().expect("head has an output layer");
    let mm = g.matmul(h, w)?;
    let lin = g.add(mm, b)?;
    let logits = act.apply(g, lin)?;
    let classes = g.shape(logits)[1];
    g.reshape(logits, vec![classes])
}

/// Plan sampling and run an eval-mode forward, returning plain logits.
pub fn classify(
    params: &ClassifierParams,
    config: &ClassifierConfig,
    cloud: &PointCloud,
    rng: &mut impl RngExt,
) -> Result<Vec<f64>> {
    let plan = plan_sampling(cloud, config, rng)?;
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let fi = g.constant(initial_features(cloud));
    let logits = classify_forward::<rand_chacha::ChaCha8Rng>(&mut g, &bound, fi, &plan, None)?;
    Ok(g.data(logits).to_vec())
}

// ---------------------------------------------------------------------------
// Cross-entropy loss with max-subtracted softmax
// ---------------------------------------------------------------------------

struct CrossEntropyOp {
    logits: TensorId,
    label: usize,
    softmax: Vec<f64>,
}

impl GraphOp for CrossEntropyOp {
    fn name(&self) -> &'static str {
        "cross_entropy"
    }

    fn inputs(&self) -> Vec<TensorId> {
        vec![self.logits]
    }

    fn backward(&self, _g: &Graph, _out: TensorId, grad: &[f64], needs: &[bool]) -> InputGrads {
        if !needs[0] {
            return vec![None];
        }
        // d loss / d logits = softmax - onehot(label)
        let mut dg: Vec<f64> = self.softmax.iter().map(|&s| grad[0] * s).collect();
        dg[self.label] -= grad[0];
        vec![Some(dg)]
    }
}

/// Numerically stable `-log softmax(logits)[label]`.
pub fn cross_entropy(g: &mut Graph, logits: TensorId, label: usize) -> Result<TensorId> {
    let shape = g.shape(logits);
    if shape.len() != 1 {
        return Err(Error::Dimension(format!(
            "cross_entropy expects a rank-1 logits vector, got {shape:?}"
        )));
    }
    let n = shape[0];
    if label >= n {
        return Err(Error::Domain(format!(
            "label {label} out of range for {n} classes"
        )));
    }
    let x = g.data(logits);
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let softmax: Vec<f64> = exps.iter().map(|&e| e / z).collect();
    let loss = z.ln() - (x[label] - max);
    g.push_op(
        Tensor::scalar(loss),
        Box::new(CrossEntropyOp {
            logits,
            label,
            softmax,
        }),
    )
}

/// Plain softmax of a logits slice (for reports and tests).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Predicted class: argmax of logits, lowest index on ties.
pub fn predict(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests;
