//! Flat `section.key = value` run configuration.
//!
//! Every key has a default; unknown keys are hard errors so a typo can
//! never silently misconfigure an ablation. `#` starts a comment.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::kernel::NormKind;
use crate::network::{ClassifierConfig, StageConfig};
use crate::nn::Activation;
use crate::synth::DatasetSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // data.*
    pub data_classes: usize,
    pub data_train_per_class: usize,
    pub data_test_per_class: usize,
    pub data_points: usize,
    pub data_noise: f64,
    pub data_seed: u64,
    pub data_dir: Option<PathBuf>,
    pub data_normals: bool,
    // model.*
    pub model_v: usize,
    pub model_normalization: NormKind,
    pub model_lsa: bool,
    pub model_activation: Activation,
    pub model_kernel_hidden: usize,
    pub model_head_hidden: usize,
    pub model_dropout: f64,
    pub stage1_centers: usize,
    pub stage1_radius: f64,
    pub stage1_neighbors: usize,
    pub stage1_channels: usize,
    pub stage2_centers: usize,
    pub stage2_radius: f64,
    pub stage2_neighbors: usize,
    pub stage2_channels: usize,
    // train.*
    pub train_epochs: usize,
    pub train_batch_size: usize,
    pub train_lr: f64,
    pub train_beta1: f64,
    pub train_beta2: f64,
    pub train_weight_decay: f64,
    pub train_seed: u64,
    pub train_augment_scale_lo: f64,
    pub train_augment_scale_hi: f64,
    pub train_augment_shift: f64,
    /// Stop once eval-mode train accuracy reaches this value; 0 disables.
    pub train_stop_at_train_acc: f64,
    // eval.*
    pub eval_checkpoint: Option<PathBuf>,
    // oracle.*
    pub oracle_trials: usize,
    // ablate.*
    pub ablate_seeds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_classes: 4,
            data_train_per_class: 50,
            data_test_per_class: 20,
            data_points: 512,
            data_noise: 0.01,
            data_seed: 7,
            data_dir: None,
            data_normals: false,
            model_v: 4,
            model_normalization: NormKind::St,
            model_lsa: true,
            model_activation: Activation::Relu,
            model_kernel_hidden: 32,
            model_head_hidden: 32,
            model_dropout: 0.5,
            stage1_centers: 128,
            stage1_radius: 0.25,
            stage1_neighbors: 16,
            stage1_channels: 32,
            stage2_centers: 32,
            stage2_radius: 0.5,
            stage2_neighbors: 16,
            stage2_channels: 64,
            train_epochs: 60,
            train_batch_size: 8,
            train_lr: 1e-3,
            train_beta1: 0.9,
            train_beta2: 0.999,
            train_weight_decay: 0.0,
            train_seed: 1,
            train_augment_scale_lo: 0.8,
            train_augment_scale_hi: 1.25,
            train_augment_shift: 0.1,
            train_stop_at_train_acc: 0.0,
            eval_checkpoint: None,
            oracle_trials: 50,
            ablate_seeds: 1,
        }
    }
}

fn parse_activation(s: &str) -> Result<Activation> {
    match s {
        "relu" => Ok(Activation::Relu),
        "tanh" => Ok(Activation::Tanh),
        other => Err(Error::Config(format!(
            "unknown activation {other:?} (expected relu|tanh)"
        ))),
    }
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Relu => "relu",
        Activation::Tanh => "tanh",
        Activation::None => "none",
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected `key = value`, got {raw:?}",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            if map.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("duplicate key {key:?}")));
            }
        }
        Self::from_map(map)
    }

    fn from_map(mut map: BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = RunConfig::default();

        fn take<T: std::str::FromStr>(
            map: &mut BTreeMap<String, String>,
            key: &str,
            slot: &mut T,
        ) -> Result<()> {
            if let Some(v) = map.remove(key) {
                *slot = v
                    .parse()
                    .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))?;
            }
            Ok(())
        }

        fn take_bool(
            map: &mut BTreeMap<String, String>,
            key: &str,
            slot: &mut bool,
        ) -> Result<()> {
            if let Some(v) = map.remove(key) {
                *slot = match v.as_str() {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(Error::Config(format!(
                            "bad value {other:?} for {key} (expected true|false)"
                        )))
                    }
                };
            }
            Ok(())
        }

        take(&mut map, "data.classes", &mut cfg.data_classes)?;
        take(&mut map, "data.train_per_class", &mut cfg.data_train_per_class)?;
        take(&mut map, "data.test_per_class", &mut cfg.data_test_per_class)?;
        take(&mut map, "data.points", &mut cfg.data_points)?;
        take(&mut map, "data.noise", &mut cfg.data_noise)?;
        take(&mut map, "data.seed", &mut cfg.data_seed)?;
        if let Some(v) = map.remove("data.dir") {
            cfg.data_dir = (!v.is_empty()).then(|| PathBuf::from(v));
        }
        take_bool(&mut map, "data.normals", &mut cfg.data_normals)?;

        take(&mut map, "model.v", &mut cfg.model_v)?;
        if let Some(v) = map.remove("model.normalization") {
            cfg.model_normalization = NormKind::parse(&v)?;
        }
        take_bool(&mut map, "model.lsa", &mut cfg.model_lsa)?;
        if let Some(v) = map.remove("model.activation") {
            cfg.model_activation = parse_activation(&v)?;
        }
        take(&mut map, "model.kernel_hidden", &mut cfg.model_kernel_hidden)?;
        take(&mut map, "model.head_hidden", &mut cfg.model_head_hidden)?;
        take(&mut map, "model.dropout", &mut cfg.model_dropout)?;
        take(&mut map, "model.stage1.centers", &mut cfg.stage1_centers)?;
        take(&mut map, "model.stage1.radius", &mut cfg.stage1_radius)?;
        take(&mut map, "model.stage1.neighbors", &mut cfg.stage1_neighbors)?;
        take(&mut map, "model.stage1.channels", &mut cfg.stage1_channels)?;
        take(&mut map, "model.stage2.centers", &mut cfg.stage2_centers)?;
        take(&mut map, "model.stage2.radius", &mut cfg.stage2_radius)?;
        take(&mut map, "model.stage2.neighbors", &mut cfg.stage2_neighbors)?;
        take(&mut map, "model.stage2.channels", &mut cfg.stage2_channels)?;

        take(&mut map, "train.epochs", &mut cfg.train_epochs)?;
        take(&mut map, "train.batch_size", &mut cfg.train_batch_size)?;
        take(&mut map, "train.lr", &mut cfg.train_lr)?;
        take(&mut map, "train.beta1", &mut cfg.train_beta1)?;
        take(&mut map, "train.beta2", &mut cfg.train_beta2)?;
        take(&mut map, "train.weight_decay", &mut cfg.train_weight_decay)?;
        take(&mut map, "train.seed", &mut cfg.train_seed)?;
        take(&mut map, "train.augment_scale_lo", &mut cfg.train_augment_scale_lo)?;
        take(&mut map, "train.augment_scale_hi", &mut cfg.train_augment_scale_hi)?;
        take(&mut map, "train.augment_shift", &mut cfg.train_augment_shift)?;
        take(&mut map, "train.stop_at_train_acc", &mut cfg.train_stop_at_train_acc)?;

        if let Some(v) = map.remove("eval.checkpoint") {
            cfg.eval_checkpoint = (!v.is_empty()).then(|| PathBuf::from(v));
        }
        take(&mut map, "oracle.trials", &mut cfg.oracle_trials)?;
        take(&mut map, "ablate.seeds", &mut cfg.ablate_seeds)?;

        if let Some((key, _)) = map.into_iter().next() {
            return Err(Error::Config(format!("unknown key {key:?}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.model_v) {
            return Err(Error::Config(format!(
                "model.v must be in 1..=5, got {}",
                self.model_v
            )));
        }
        if self.train_batch_size == 0 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.model_dropout) {
            return Err(Error::Config(format!(
                "model.dropout must be in [0,1), got {}",
                self.model_dropout
            )));
        }
        if self.train_augment_scale_lo <= 0.0
            || self.train_augment_scale_lo > self.train_augment_scale_hi
        {
            return Err(Error::Config(format!(
                "augment scale range [{}, {}] invalid",
                self.train_augment_scale_lo, self.train_augment_scale_hi
            )));
        }
        Ok(())
    }

    /// Canonical text form; parses back to an equal config, and is what
    /// checkpoints echo.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let kv = |s: &mut String, k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv(&mut s, "data.classes", self.data_classes.to_string());
        kv(&mut s, "data.train_per_class", self.data_train_per_class.to_string());
        kv(&mut s, "data.test_per_class", self.data_test_per_class.to_string());
        kv(&mut s, "data.points", self.data_points.to_string());
        kv(&mut s, "data.noise", self.data_noise.to_string());
        kv(&mut s, "data.seed", self.data_seed.to_string());
        kv(
            &mut s,
            "data.dir",
            self.data_dir
                .as_ref()
                .map_or(String::new(), |p| p.display().to_string()),
        );
        kv(&mut s, "data.normals", self.data_normals.to_string());
        kv(&mut s, "model.v", self.model_v.to_string());
        kv(&mut s, "model.normalization", self.model_normalization.as_str().to_string());
        kv(&mut s, "model.lsa", self.model_lsa.to_string());
        kv(&mut s, "model.activation", activation_name(self.model_activation).to_string());
        kv(&mut s, "model.kernel_hidden", self.model_kernel_hidden.to_string());
        kv(&mut s, "model.head_hidden", self.model_head_hidden.to_string());
        kv(&mut s, "model.dropout", self.model_dropout.to_string());
        kv(&mut s, "model.stage1.centers", self.stage1_centers.to_string());
        kv(&mut s, "model.stage1.radius", self.stage1_radius.to_string());
        kv(&mut s, "model.stage1.neighbors", self.stage1_neighbors.to_string());
        kv(&mut s, "model.stage1.channels", self.stage1_channels.to_string());
        kv(&mut s, "model.stage2.centers", self.stage2_centers.to_string());
        kv(&mut s, "model.stage2.radius", self.stage2_radius.to_string());
        kv(&mut s, "model.stage2.neighbors", self.stage2_neighbors.to_string());
        kv(&mut s, "model.stage2.channels", self.stage2_channels.to_string());
        kv(&mut s, "train.epochs", self.train_epochs.to_string());
        kv(&mut s, "train.batch_size", self.train_batch_size.to_string());
        kv(&mut s, "train.lr", self.train_lr.to_string());
        kv(&mut s, "train.beta1", self.train_beta1.to_string());
        kv(&mut s, "train.beta2", self.train_beta2.to_string());
        kv(&mut s, "train.weight_decay", self.train_weight_decay.to_string());
        kv(&mut s, "train.seed", self.train_seed.to_string());
        kv(&mut s, "train.augment_scale_lo", self.train_augment_scale_lo.to_string());
        kv(&mut s, "train.augment_scale_hi", self.train_augment_scale_hi.to_string());
        kv(&mut s, "train.augment_shift", self.train_augment_shift.to_string());
        kv(&mut s, "train.stop_at_train_acc", self.train_stop_at_train_acc.to_string());
        kv(
            &mut s,
            "eval.checkpoint",
            self.eval_checkpoint
                .as_ref()
                .map_or(String::new(), |p| p.display().to_string()),
        );
        kv(&mut s, "oracle.trials", self.oracle_trials.to_string());
        kv(&mut s, "ablate.seeds", self.ablate_seeds.to_string());
        s
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            classes: self.data_classes,
            train_per_class: self.data_train_per_class,
            test_per_class: self.data_test_per_class,
            points: self.data_points,
            noise: self.data_noise,
            seed: self.data_seed,
            normals: self.data_normals,
        }
    }

    /// Channel count of the initial features implied by the data section.
    pub fn input_channels(&self) -> usize {
        if self.data_normals {
            3
        } else {
            1
        }
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        ClassifierConfig {
            stages: vec![
                StageConfig {
                    centers: self.stage1_centers,
                    radius: self.stage1_radius,
                    neighbors: self.stage1_neighbors,
                    c_in: self.input_channels(),
                    c_out: self.stage1_channels,
                    v: self.model_v,
                },
                StageConfig {
                    centers: self.stage2_centers,
                    radius: self.stage2_radius,
                    neighbors: self.stage2_neighbors,
                    c_in: self.stage1_channels,
                    c_out: self.stage2_channels,
                    v: self.model_v,
                },
            ],
            head_hidden: self.model_head_hidden,
            classes: self.data_classes,
            dropout: self.model_dropout,
            kernel_hidden: self.model_kernel_hidden,
            norm: self.model_normalization,
            lsa: self.model_lsa,
            activation: self.model_activation,
        }
    }
}
