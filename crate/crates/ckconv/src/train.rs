//! Adam training loop, evaluation, and the train/eval commands.
//!
//! Every random decision is drawn from a stream derived from the explicit
//! seeds in the config, so a rerun with the same config file produces
//! byte-identical metric records. Eval-time sampling seeds derive from
//! `data.seed`, which is what makes checkpoint round-trips reproduce
//! their metrics exactly.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::{accuracy, EpochRecord, MetricsReport};
use crate::network::{
    classify, classify_forward, cross_entropy, initial_features, plan_sampling, predict,
    ClassifierConfig, ClassifierParams, DropoutMode,
};
use crate::pointcloud::{augment, PointCloud};
use crate::seeds;
use crate::synth::{generate_dataset, read_dataset, Dataset};

const TAG_INIT: u64 = 1;
const TAG_EPOCH: u64 = 2;
pub(crate) const TAG_EVAL_TEST: u64 = 3;
pub(crate) const TAG_EVAL_TRAIN: u64 = 4;

/// The parameters [`train_run`] starts from for this config.
pub fn init_params(cfg: &RunConfig) -> Result<ClassifierParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.train_seed, TAG_INIT));
    ClassifierParams::init(&cfg.classifier_config(), &mut rng)
}

/// Adam over the model's parameter tensors in visit order.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    t: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut ClassifierParams, grads: &[Vec<f64>]) {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut index = 0;
        params.visit_mut(&mut |_, tensor| {
            let g = &grads[index];
            if self.m.len() == index {
                self.m.push(vec![0.0; g.len()]);
                self.v.push(vec![0.0; g.len()]);
            }
            let (m, v) = (&mut self.m[index], &mut self.v[index]);
            for (i, p) in tensor.data_mut().iter_mut().enumerate() {
                let gi = g[i] + self.weight_decay * *p;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            index += 1;
        });
        debug_assert_eq!(index, grads.len());
    }
}

/// Eval-mode predictions for a split, with per-cloud sampling streams
/// derived from `data_seed` and `tag`.
fn predictions(
    params: &ClassifierParams,
    config: &ClassifierConfig,
    clouds: &[PointCloud],
    data_seed: u64,
    tag: u64,
) -> Result<Vec<usize>> {
    clouds
        .iter()
        .enumerate()
        .map(|(i, cloud)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive2(data_seed, tag, i as u64));
            Ok(predict(&classify(params, config, cloud, &mut rng)?))
        })
        .collect()
}

/// Overall and mean-class accuracy on a split (no augmentation, no dropout).
pub fn evaluate(
    params: &ClassifierParams,
    config: &ClassifierConfig,
    clouds: &[PointCloud],
    classes: usize,
    data_seed: u64,
    tag: u64,
) -> Result<(f64, f64)> {
    let preds = predictions(params, config, clouds, data_seed, tag)?;
    let labels: Vec<usize> = clouds
        .iter()
        .map(|c| {
            c.label()
                .ok_or_else(|| Error::Contract("evaluation cloud has no label".into()))
        })
        .collect::<Result<_>>()?;
    Ok(accuracy(&labels, &preds, classes))
}

/// Mean eval-mode cross-entropy over a split.
pub fn mean_loss(
    params: &ClassifierParams,
    config: &ClassifierConfig,
    clouds: &[PointCloud],
    data_seed: u64,
    tag: u64,
) -> Result<f64> {
    let mut total = 0.0;
    for (i, cloud) in clouds.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive2(data_seed, tag, i as u64));
        let logits = classify(params, config, cloud, &mut rng)?;
        let label = cloud
            .label()
            .ok_or_else(|| Error::Contract("loss cloud has no label".into()))?;
        let mut g = crate::tensor::Graph::new();
        let l = g.constant(crate::tensor::Tensor::new(vec![logits.len()], logits)?);
        let loss = cross_entropy(&mut g, l, label)?;
        total += g.data(loss)[0];
    }
    Ok(total / clouds.len().max(1) as f64)
}

pub struct TrainOutcome {
    pub best_params: ClassifierParams,
    pub report: MetricsReport,
}

/// Optimize cross-entropy over the train split with augmentation and
/// dropout; track the best-test-OA parameters. `on_epoch` streams each
/// record as it is produced.
pub fn train_run(
    cfg: &RunConfig,
    dataset: &Dataset,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let start = Instant::now();
    let net_cfg = cfg.classifier_config();
    net_cfg.validate()?;
    if dataset.classes != net_cfg.classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model expects {}",
            dataset.classes, net_cfg.classes
        )));
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.train_seed, TAG_INIT));
    let mut params = ClassifierParams::init(&net_cfg, &mut init_rng)?;
    let mut optimizer = Adam::new(
        cfg.train_lr,
        cfg.train_beta1,
        cfg.train_beta2,
        cfg.train_weight_decay,
    );

    let track_train_acc = cfg.train_stop_at_train_acc > 0.0;
    let mut best_params = params.clone();
    let mut best_oa = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut records = Vec::new();

    for epoch in 1..=cfg.train_epochs {
        let mut epoch_rng =
            ChaCha8Rng::seed_from_u64(seeds::derive2(cfg.train_seed, TAG_EPOCH, epoch as u64));

        // Seeded shuffle of the train split.
        let mut order: Vec<usize> = (0..dataset.train.len()).collect();
        for i in 0..order.len() {
            let j = rand::RngExt::random_range(&mut epoch_rng, i..order.len());
            order.swap(i, j);
        }

        let mut epoch_loss = 0.0;
        for (batch_index, batch) in order.chunks(cfg.train_batch_size).enumerate() {
            let step = (|| -> Result<f64> {
                let mut g = crate::tensor::Graph::new();
                let bound = params.bind(&mut g);
                let mut losses = Vec::with_capacity(batch.len());
                for &ci in batch {
                    let cloud = augment(
                        &dataset.train[ci],
                        cfg.train_augment_scale_lo,
                        cfg.train_augment_scale_hi,
                        cfg.train_augment_shift,
                        &mut epoch_rng,
                    )?;
                    let plan = plan_sampling(&cloud, &net_cfg, &mut epoch_rng)?;
                    let feats = g.constant(initial_features(&cloud));
                    let logits = classify_forward(
                        &mut g,
                        &bound,
                        feats,
                        &plan,
                        Some(DropoutMode {
                            p: cfg.model_dropout,
                            rng: &mut epoch_rng,
                        }),
                    )?;
                    let label = cloud
                        .label()
                        .ok_or_else(|| Error::Contract("train cloud has no label".into()))?;
                    losses.push(cross_entropy(&mut g, logits, label)?);
                }
                let mut total = losses[0];
                for &l in &losses[1..] {
                    total = g.add(total, l)?;
                }
                let loss = g.scale(total, 1.0 / batch.len() as f64)?;
                g.backward(loss)?;

                let grads: Vec<Vec<f64>> = bound
                    .param_ids()
                    .iter()
                    .map(|&id| g.grad(id).expect("parameter gradient").to_vec())
                    .collect();
                optimizer.step(&mut params, &grads);
                Ok(g.data(loss)[0])
            })()
            .map_err(|e| {
                Error::Numeric(format!(
                    "aborting at epoch {epoch}, batch {batch_index}: {e}"
                ))
            })?;
            epoch_loss += step * batch.len() as f64;
        }
        epoch_loss /= dataset.train.len() as f64;

        let (test_oa, test_macc) = evaluate(
            &params,
            &net_cfg,
            &dataset.test,
            dataset.classes,
            cfg.data_seed,
            TAG_EVAL_TEST,
        )?;
        let train_acc = if track_train_acc {
            Some(
                evaluate(
                    &params,
                    &net_cfg,
                    &dataset.train,
                    dataset.classes,
                    cfg.data_seed,
                    TAG_EVAL_TRAIN,
                )?
                .0,
            )
        } else {
            None
        };

        if test_oa > best_oa {
            best_oa = test_oa;
            best_epoch = epoch;
            best_params = params.clone();
        }
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss,
            test_oa,
            test_macc,
            train_acc,
        };
        on_epoch(&record);
        records.push(record);

        if let Some(acc) = train_acc {
            if acc >= cfg.train_stop_at_train_acc {
                break;
            }
        }
    }

    if cfg.train_epochs == 0 {
        let (oa, _) = evaluate(
            &params,
            &net_cfg,
            &dataset.test,
            dataset.classes,
            cfg.data_seed,
            TAG_EVAL_TEST,
        )?;
        best_oa = oa;
        best_params = params;
    }

    Ok(TrainOutcome {
        best_params,
        report: MetricsReport {
            records,
            best_oa,
            best_epoch,
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    })
}

/// Generate the dataset from the config, or load it from `data.dir`.
pub fn load_or_generate(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data_dir {
        Some(dir) => {
            let dataset = read_dataset(dir)?;
            if dataset.classes != cfg.data_classes {
                return Err(Error::Config(format!(
                    "data.dir dataset has {} classes, config says {}",
                    dataset.classes, cfg.data_classes
                )));
            }
            let has_features = dataset.train[0].features().is_some();
            if has_features != cfg.data_normals {
                return Err(Error::Config(
                    "data.normals does not match the feature channels in data.dir".into(),
                ));
            }
            Ok(dataset)
        }
        None => generate_dataset(&cfg.dataset_spec()),
    }
}

/// Train, stream records, persist the best checkpoint and the metric log.
pub fn cmd_train(
    cfg: &RunConfig,
    out_dir: &Path,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(MetricsReport, PathBuf)> {
    let dataset = load_or_generate(cfg)?;
    let outcome = train_run(cfg, &dataset, on_epoch)?;
    std::fs::create_dir_all(out_dir)?;
    let ckpt_path = out_dir.join("checkpoint.ckpt");
    checkpoint::save(&ckpt_path, &cfg.render(), &outcome.best_params)?;
    std::fs::write(
        out_dir.join("metrics.txt"),
        outcome.report.format_records(),
    )?;
    Ok((outcome.report, ckpt_path))
}

/// Load a checkpoint, rebuild the model from its config echo, and
/// evaluate the configured split of the configured dataset.
pub fn cmd_eval(cfg: &RunConfig, split: &str) -> Result<(f64, f64)> {
    let path = cfg
        .eval_checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("eval.checkpoint is not set".into()))?;
    let (echo, tensors) = checkpoint::load(path)?;
    let ckpt_cfg = RunConfig::parse(&echo)
        .map_err(|e| Error::Checkpoint(format!("bad config echo: {e}")))?;
    let net_cfg = ckpt_cfg.classifier_config();
    let mut params = ClassifierParams::init(&net_cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    checkpoint::restore(&mut params, &tensors)?;

    let dataset = load_or_generate(cfg)?;
    if dataset.classes != net_cfg.classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, checkpoint model expects {}",
            dataset.classes, net_cfg.classes
        )));
    }
    let (clouds, tag) = match split {
        "test" => (&dataset.test, TAG_EVAL_TEST),
        "train" => (&dataset.train, TAG_EVAL_TRAIN),
        other => {
            return Err(Error::Config(format!(
                "eval.split must be test|train, got {other:?}"
            )))
        }
    };
    evaluate(
        &params,
        &net_cfg,
        clouds,
        dataset.classes,
        cfg.data_seed,
        tag,
    )
}
