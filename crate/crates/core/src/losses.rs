//! Loss terms: contrastive alignment, count regression, prompt reconstruction,
//! and the two stage composites.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Array, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.0,
            lambda3: 10.0,
            tau: 0.07,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Validation(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        for (n, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Validation(format!(
                    "{n} must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconMetric {
    #[default]
    L2,
    Cosine,
}

impl FromStr for ReconMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Self::L2),
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::Parameter(format!(
                "unknown recon metric {other:?} (expected l2 or cosine)"
            ))),
        }
    }
}

impl fmt::Display for ReconMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::L2 => "l2",
            Self::Cosine => "cosine",
        })
    }
}

/// Symmetric InfoNCE over cosine similarities between image rows and their
/// paired text rows. For sample `i`, entries whose category equals
/// `category_ids[i]` (other than `i` itself) are left out of both
/// normalizers. Returns the batch mean of the per-sample sum of both
/// directions.
pub fn contrastive_loss(
    tape: &mut Tape,
    image_embs: Var,
    text_embs: Var,
    category_ids: &[usize],
    tau: f64,
) -> Result<Var> {
    let n = category_ids.len();
    let (is, ts) = (
        tape.value(image_embs).shape(),
        tape.value(text_embs).shape(),
    );
    if n == 0 || is.len() != 2 || is != ts || is[0] != n {
        return Err(Error::Contract(format!(
            "contrastive loss over image {is:?}, text {ts:?} and {n} category ids"
        )));
    }
    let img = tape.normalize_rows(image_embs)?;
    let txt = tape.normalize_rows(text_embs)?;
    let txt_t = tape.transpose(txt)?;
    let logits = tape.matmul(img, txt_t)?;
    let mut mask = vec![true; n * n];
    for i in 0..n {
        for j in 0..n {
            mask[i * n + j] = i == j || category_ids[i] != category_ids[j];
        }
    }
    let diag: Vec<usize> = (0..n).map(|i| i * n + i).collect();

    let i2t = tape.log_softmax_rows(logits, tau, Some(mask.clone()))?;
    let i2t = tape.pick(i2t, &diag)?;
    // the mask is symmetric, so it applies unchanged to the transpose
    let logits_t = tape.transpose(logits)?;
    let t2i = tape.log_softmax_rows(logits_t, tau, Some(mask))?;
    let t2i = tape.pick(t2i, &diag)?;
    let both = tape.add(i2t, t2i)?;
    let m = tape.mean(both)?;
    tape.scale(m, -1.0)
}

/// `(1/N) Σ (pred − gt)²` over a `[N]` vector of predicted counts.
pub fn mse_count_loss(tape: &mut Tape, pred_counts: Var, gt_counts: &[f64]) -> Result<Var> {
    if gt_counts.is_empty() {
        return Err(Error::Parameter("count loss over an empty batch".into()));
    }
    if tape.value(pred_counts).len() != gt_counts.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} ground-truth counts",
            tape.value(pred_counts).len(),
            gt_counts.len()
        )));
    }
    let preds = tape.reshape(pred_counts, &[gt_counts.len()])?;
    let gt = tape.constant(Array::vector(gt_counts.to_vec())?);
    let d = tape.sub(preds, gt)?;
    let sq = tape.mul(d, d)?;
    tape.mean(sq)
}

/// Distance between a category's own prompt and the fused prompt.
pub fn recon_loss(tape: &mut Tape, fused: Var, target: Var, metric: ReconMetric) -> Result<Var> {
    let (fs, ts) = (tape.value(fused).shape(), tape.value(target).shape());
    if fs != ts {
        return Err(Error::Contract(format!(
            "recon loss between shapes {fs:?} and {ts:?}"
        )));
    }
    match metric {
        ReconMetric::L2 => {
            let d = tape.sub(target, fused)?;
            let sq = tape.mul(d, d)?;
            tape.sum(sq)
        }
        ReconMetric::Cosine => {
            let n = tape.value(fused).len();
            let a = tape.reshape(target, &[1, n])?;
            let b = tape.reshape(fused, &[1, n])?;
            let a = tape.normalize_rows(a)?;
            let b = tape.normalize_rows(b)?;
            let prod = tape.mul(a, b)?;
            let cos = tape.sum(prod)?;
            let one = tape.constant(Array::scalar(1.0));
            tape.sub(one, cos)
        }
    }
}

/// Component losses of one step. `model` stands in for a base model's own
/// loss and is absent here.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub mse: Var,
    pub con: Option<Var>,
    pub model: Option<Var>,
    pub recon: Option<Var>,
}

fn composite(tape: &mut Tape, terms: &[(Option<Var>, f64)], mse: Var) -> Result<Var> {
    let mut parts = vec![(mse, 1.0)];
    for &(v, w) in terms {
        if let Some(v) = v {
            if w != 0.0 {
                parts.push((v, w));
            }
        }
    }
    tape.weighted_sum(&parts)
}

/// `L_mse + λ1·L_con + λ2·L_model`.
pub fn loss_cspi(tape: &mut Tape, parts: &LossParts, w: &LossWeights) -> Result<Var> {
    composite(
        tape,
        &[(parts.con, w.lambda1), (parts.model, w.lambda2)],
        parts.mse,
    )
}

/// [`loss_cspi`] plus `λ3·L_recon`.
pub fn loss_tgpr(tape: &mut Tape, parts: &LossParts, w: &LossWeights) -> Result<Var> {
    composite(
        tape,
        &[
            (parts.con, w.lambda1),
            (parts.model, w.lambda2),
            (parts.recon, w.lambda3),
        ],
        parts.mse,
    )
}
