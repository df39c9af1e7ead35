use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{evaluate, sweep_topk, EvalMode, EvalReport, SweepRow};
use crate::data::{Dataset, Split};
use crate::encoder::MiniViT;
use crate::error::{Error, Result};
use crate::losses::ReconMetric;
use crate::training::{pretrain, run_cspi, train_baseline, train_from, TrainConfig, TrainState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub mode: EvalMode,
    pub lambda3: f64,
    pub recon_metric: Option<ReconMetric>,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub split: Split,
    pub k: usize,
    pub backbone_hash: String,
    pub rows: Vec<AblationRow>,
    /// K sweep of the variant trained with the configured recon metric.
    pub sweep: Vec<SweepRow>,
}

impl AblationReport {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// The variant trained exactly as configured.
    pub fn full(&self) -> Option<&AblationRow> {
        let l3 = self
            .rows
            .iter()
            .find(|r| r.name == "cspi_only")?
            .report
            .config
            .loss_weights
            .lambda3;
        let metric = self
            .rows
            .iter()
            .find(|r| r.name == "cspi_only")?
            .report
            .config
            .recon_metric;
        if l3 == 0.0 {
            return self.row("sdvpt_no_recon");
        }
        self.row(match metric {
            ReconMetric::L2 => "sdvpt_l2",
            ReconMetric::Cosine => "sdvpt_cosine",
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

/// Trains every variant on one frozen backbone and evaluates each on `split`:
/// the shared-prompt baseline, CSPI alone, and TGPR with the configured
/// recon weight under both metrics plus with the recon term removed. CSPI
/// runs once and every TGPR variant continues from the same state. A
/// non-empty `k_values` also sweeps K on the configured variant.
pub fn ablate(
    config: &TrainConfig,
    dataset: &Dataset,
    backbone: Option<MiniViT>,
    split: Split,
    k_values: &[usize],
) -> Result<AblationReport> {
    config.validate()?;
    let table = dataset.table();
    let bb = match backbone {
        Some(b) => b,
        None => pretrain(config, dataset)?.0,
    };
    let backbone_hash = bb.hash_hex();
    let samples = dataset.split(split);
    let k = config.k;
    let mut rows = Vec::new();

    let shared = train_baseline(config, dataset, Some(bb.clone()), None)?.state;
    rows.push(AblationRow {
        name: "shared_vpt".into(),
        mode: EvalMode::SharedVpt,
        lambda3: config.loss_weights.lambda3,
        recon_metric: None,
        report: evaluate(&shared, table, samples, split, EvalMode::SharedVpt, k)?,
    });
    drop(shared);

    let mut cspi = TrainState::new(config.clone(), bb, table, false)?;
    run_cspi(&mut cspi, &dataset.train, table, config.e1)?;
    rows.push(AblationRow {
        name: "cspi_only".into(),
        mode: EvalMode::CspiOnly,
        lambda3: 0.0,
        recon_metric: None,
        report: evaluate(&cspi, table, samples, split, EvalMode::CspiOnly, k)?,
    });

    let lambda3 = config.loss_weights.lambda3;
    let variants = [
        ("sdvpt_l2", lambda3, ReconMetric::L2),
        ("sdvpt_cosine", lambda3, ReconMetric::Cosine),
        ("sdvpt_no_recon", 0.0, config.recon_metric),
    ];
    let mut sweep = Vec::new();
    for (name, l3, metric) in variants {
        let mut s = cspi.clone();
        s.config.loss_weights.lambda3 = l3;
        s.config.recon_metric = metric;
        let s = train_from(s, dataset, None)?.state;
        if !k_values.is_empty() && s.config == *config {
            sweep = sweep_topk(&s, dataset, split, k_values)?;
        }
        rows.push(AblationRow {
            name: name.into(),
            mode: EvalMode::Sdvpt,
            lambda3: l3,
            recon_metric: (l3 != 0.0).then_some(metric),
            report: evaluate(&s, table, samples, split, EvalMode::Sdvpt, k)?,
        });
    }
    Ok(AblationReport {
        split,
        k,
        backbone_hash,
        rows,
        sweep,
    })
}
