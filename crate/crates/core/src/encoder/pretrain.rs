//! Contrastive pretraining of the backbone, ahead of any prompt learning.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::MiniViT;
use crate::data::CountingSample;
use crate::error::{Error, Result};
use crate::losses::contrastive_loss;
use crate::numerics::{cosine_similarity, Array, Tape};
use crate::rng;
use crate::text_space::TextEmbeddingTable;
use crate::training::optim::{adam_step, AdamConfig, AdamState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub tau: f64,
    /// Tokens in the shared all-zero prompt used during pretraining.
    pub prompt_tokens: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            adam: AdamConfig::default(),
            tau: 0.07,
            prompt_tokens: 4,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Validation(
                "pretrain batch_size must be positive".into(),
            ));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Validation("pretrain tau must be positive".into()));
        }
        self.adam.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub losses: Vec<f64>,
    pub backbone_hash: String,
}

/// Groups sample indices by category, in ascending category order.
pub(crate) fn by_category(samples: &[CountingSample]) -> Vec<(usize, Vec<usize>)> {
    let mut map = std::collections::BTreeMap::<usize, Vec<usize>>::new();
    for (i, s) in samples.iter().enumerate() {
        map.entry(s.category_id).or_default().push(i);
    }
    map.into_iter().collect()
}

/// Trains backbone and projection with the contrastive objective, then
/// freezes the model. Only seen-category samples are accepted.
pub fn pretrain_backbone(
    model: &mut MiniViT,
    samples: &[CountingSample],
    table: &TextEmbeddingTable,
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<PretrainReport> {
    cfg.validate()?;
    if model.is_frozen() {
        return Err(Error::Contract("backbone is already frozen".into()));
    }
    if samples.is_empty() {
        return Err(Error::Data("pretraining needs at least one sample".into()));
    }
    if let Some(s) = samples.iter().find(|s| !table.is_seen(s.category_id)) {
        return Err(Error::Data(format!(
            "pretraining sample of unseen category {}",
            s.category_id
        )));
    }
    if table.dim() != model.config().joint_dim {
        return Err(Error::Contract(format!(
            "text dim {} differs from joint dim {}",
            table.dim(),
            model.config().joint_dim
        )));
    }
    let groups = by_category(samples);
    let mut r = rng::stream(seed, &[rng::tags::PRETRAIN]);
    let mut state = AdamState::new(model.params().arrays());
    let zero = (cfg.prompt_tokens > 0).then(|| {
        Array::zeros(&[
            model.config().num_prompted(),
            cfg.prompt_tokens,
            model.config().width,
        ])
    });
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut order: Vec<usize> = (0..groups.len()).collect();
    let mut cursor = order.len();

    for _ in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut r);
                cursor = 0;
            }
            let members = &groups[order[cursor]].1;
            batch.push(members[r.random_range(0..members.len())]);
            cursor += 1;
        }

        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, true)?;
        let prompt = zero.as_ref().map(|z| tape.constant(z.clone()));
        let mut img = Vec::with_capacity(batch.len());
        let mut txt = Vec::with_capacity(batch.len() * table.dim());
        let mut cats = Vec::with_capacity(batch.len());
        for &i in &batch {
            let s = &samples[i];
            let enc = model.encode(&mut tape, &bound, &s.image, prompt)?;
            img.push(model.image_embedding(&mut tape, &enc)?);
            txt.extend_from_slice(table.embedding(s.category_id)?);
            cats.push(s.category_id);
        }
        let img = tape.concat_rows(&img)?;
        let txt = tape.constant(Array::matrix(batch.len(), table.dim(), txt)?);
        let loss = contrastive_loss(&mut tape, img, txt, &cats, cfg.tau)?;
        losses.push(tape.value(loss).item());
        let grads = tape.backward(loss)?;
        let g: Vec<Array> = bound.vars.iter().map(|v| grads.wrt(*v).clone()).collect();
        adam_step(
            model.params_mut()?.arrays_mut(),
            &g,
            &mut state,
            &cfg.adam,
            true,
        )?;
    }
    model.freeze();
    Ok(PretrainReport {
        losses,
        backbone_hash: model.hash_hex(),
    })
}

/// Mean cosine between each sample's image embedding and its own category's
/// text, and mean cosine against every other category in `candidates`.
pub fn alignment_gap(
    model: &MiniViT,
    samples: &[CountingSample],
    table: &TextEmbeddingTable,
    candidates: &[usize],
    prompt_tokens: usize,
) -> Result<(f64, f64)> {
    let zero = (prompt_tokens > 0).then(|| {
        Array::zeros(&[
            model.config().num_prompted(),
            prompt_tokens,
            model.config().width,
        ])
    });
    let (mut right, mut wrong, mut nw) = (0.0, 0.0, 0usize);
    for s in samples {
        let mut tape = Tape::with_checks(false);
        let bound = model.bind(&mut tape, false)?;
        let p = zero.as_ref().map(|z| tape.constant(z.clone()));
        let enc = model.encode(&mut tape, &bound, &s.image, p)?;
        let e = model.image_embedding(&mut tape, &enc)?;
        let v = tape.value(e).data().to_vec();
        for &c in candidates {
            let cos = cosine_similarity(&v, table.embedding(c)?)?;
            if c == s.category_id {
                right += cos;
            } else {
                wrong += cos;
                nw += 1;
            }
        }
    }
    Ok((right / samples.len() as f64, wrong / nw.max(1) as f64))
}
