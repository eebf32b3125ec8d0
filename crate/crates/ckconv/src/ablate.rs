//! Ablation driver: the five normalization/attention variants plus the
//! cube-size sweep, trained on identical data and seeds.

use crate::config::RunConfig;
use crate::error::Result;
use crate::kernel::NormKind;
use crate::metrics::MetricsReport;
use crate::seeds;
use crate::synth::Dataset;
use crate::train::{self, init_params, load_or_generate, mean_loss, train_run};

/// The five model variants of the normalization/attention grid.
pub const VARIANTS: [(&str, NormKind, bool); 5] = [
    ("A", NormKind::None, false),
    ("B", NormKind::L2, false),
    ("C", NormKind::L2, true),
    ("D", NormKind::St, false),
    ("E", NormKind::St, true),
];

pub const V_SWEEP: [usize; 3] = [3, 4, 5];

#[derive(Debug, Clone)]
pub struct AblateRow {
    pub model: String,
    pub v: usize,
    pub norm: NormKind,
    pub lsa: bool,
    pub seed: u64,
    /// Eval-mode train loss at initialization (before any update).
    pub init_loss: f64,
    pub best_epoch: usize,
    pub best_oa: f64,
}

#[derive(Debug, Clone)]
pub struct AblateReport {
    pub rows: Vec<AblateRow>,
}

impl AblateReport {
    /// Tab-separated table, one row per (variant, seed).
    pub fn format_table(&self) -> String {
        let mut s = String::from("model\tv\tnorm\tlsa\tseed\tinit_loss\tbest_epoch\tbest_oa\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                r.model,
                r.v,
                r.norm.as_str(),
                r.lsa,
                r.seed,
                r.init_loss,
                r.best_epoch,
                r.best_oa
            ));
        }
        s
    }

    pub fn mean_best_oa(&self, model: &str) -> Option<f64> {
        let rows: Vec<&AblateRow> = self.rows.iter().filter(|r| r.model == model).collect();
        if rows.is_empty() {
            return None;
        }
        Some(rows.iter().map(|r| r.best_oa).sum::<f64>() / rows.len() as f64)
    }
}

/// Train one configuration and report its row.
pub fn run_variant(
    base: &RunConfig,
    dataset: &Dataset,
    model: &str,
    v: usize,
    norm: NormKind,
    lsa: bool,
    seed: u64,
) -> Result<(AblateRow, MetricsReport)> {
    let mut cfg = base.clone();
    cfg.model_v = v;
    cfg.model_normalization = norm;
    cfg.model_lsa = lsa;
    cfg.train_seed = seed;

    let params0 = init_params(&cfg)?;
    let init_loss = mean_loss(
        &params0,
        &cfg.classifier_config(),
        &dataset.train,
        cfg.data_seed,
        train::TAG_EVAL_TRAIN,
    )?;
    let outcome = train_run(&cfg, dataset, &mut |_| {})?;
    Ok((
        AblateRow {
            model: model.to_string(),
            v,
            norm,
            lsa,
            seed,
            init_loss,
            best_epoch: outcome.report.best_epoch,
            best_oa: outcome.report.best_oa,
        },
        outcome.report,
    ))
}

/// Seeds used for ablation trials: `ablate.seeds` streams derived from
/// the base training seed, shared by every variant.
pub fn ablate_seeds(cfg: &RunConfig) -> Vec<u64> {
    (0..cfg.ablate_seeds.max(1) as u64)
        .map(|k| seeds::derive2(cfg.train_seed, 91, k))
        .collect()
}

/// Run the full grid: five variants at the base `v`, then the v sweep at
/// the base normalization/attention settings.
pub fn run_ablate(cfg: &RunConfig, on_row: &mut dyn FnMut(&AblateRow)) -> Result<AblateReport> {
    let dataset = load_or_generate(cfg)?;
    let trial_seeds = ablate_seeds(cfg);
    let mut rows = Vec::new();
    for (name, norm, lsa) in VARIANTS {
        for &seed in &trial_seeds {
            let (row, _) = run_variant(cfg, &dataset, name, cfg.model_v, norm, lsa, seed)?;
            on_row(&row);
            rows.push(row);
        }
    }
    for v in V_SWEEP {
        for &seed in &trial_seeds {
            let name = format!("v{v}");
            let (row, _) = run_variant(
                cfg,
                &dataset,
                &name,
                v,
                cfg.model_normalization,
                cfg.model_lsa,
                seed,
            )?;
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(AblateReport { rows })
}
