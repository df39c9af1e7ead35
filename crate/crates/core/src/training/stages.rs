use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;

use super::optim::{adam_step, AdamState, SlicedAdam};
use super::{read_log, write_log, LogRecord, Stage, TrainConfig};
use crate::counting_head::{BoundHead, CountingHead};
use crate::data::{CountingSample, Dataset};
use crate::encoder::{pretrain_backbone, BoundViT, MiniViT, PretrainReport};
use crate::error::{Error, Result};
use crate::losses::{
    contrastive_loss, loss_cspi, loss_tgpr, mse_count_loss, recon_loss, LossParts,
};
use crate::numerics::{Array, Tape};
use crate::prompts::{BasePromptSet, PromptSetVar};
use crate::rng;
use crate::text_space::TextEmbeddingTable;

/// Everything a checkpoint holds.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub stage: Stage,
    /// Epochs completed.
    pub epoch: usize,
    /// Optimizer steps taken across prompt stages.
    pub step: usize,
    /// Single shared prompt instead of one per seen category.
    pub shared: bool,
    pub backbone: MiniViT,
    pub prompts: BasePromptSet,
    pub head: CountingHead,
    pub head_opt: AdamState,
    pub prompt_opt: SlicedAdam,
    pub table_hash: String,
}

impl TrainState {
    /// Fresh prompts and head on top of a frozen backbone.
    pub fn new(
        config: TrainConfig,
        backbone: MiniViT,
        table: &TextEmbeddingTable,
        shared: bool,
    ) -> Result<Self> {
        config.validate()?;
        backbone.require_frozen()?;
        if backbone.config() != &config.model {
            return Err(Error::Contract(
                "backbone config differs from the training config".into(),
            ));
        }
        let m = &config.model;
        if table.dim() != m.joint_dim {
            return Err(Error::Contract(format!(
                "text dim {} differs from joint dim {}",
                table.dim(),
                m.joint_dim
            )));
        }
        let n_c = if shared { 1 } else { table.num_seen() };
        let prompts = BasePromptSet::init(
            n_c,
            m.num_prompted(),
            config.prompt_tokens,
            m.width,
            config.seed,
        )?;
        let head = CountingHead::new(config.head.clone(), m.grid(), m.joint_dim, config.seed)?;
        Ok(Self {
            head_opt: AdamState::new(head.params().arrays()),
            prompt_opt: SlicedAdam::new(prompts.values()),
            config,
            stage: Stage::Pretrained,
            epoch: 0,
            step: 0,
            shared,
            backbone,
            prompts,
            head,
            table_hash: table.hash_hex(),
        })
    }

    fn check_table(&self, table: &TextEmbeddingTable) -> Result<()> {
        if table.hash_hex() != self.table_hash {
            return Err(Error::Contract(
                "text table differs from the one this state was built with".into(),
            ));
        }
        Ok(())
    }

    /// Prompt-set row used for a sample of `category` outside fusion.
    pub fn slot_for(&self, table: &TextEmbeddingTable, category: usize) -> Result<usize> {
        if self.shared {
            return Ok(0);
        }
        self.prompts.slot_of(table, category).map_err(|_| {
            Error::Data(format!(
                "category {category} is not a seen training category"
            ))
        })
    }
}

/// First-layer patch tokens for each sample; valid while the backbone stays frozen.
pub fn patch_tokens(backbone: &MiniViT, samples: &[CountingSample]) -> Result<Vec<Array>> {
    samples
        .iter()
        .map(|s| backbone.embed_patches(&s.image))
        .collect()
}

/// Deterministic batch schedule for one epoch. Categories are visited in
/// shuffled rounds, one sample per category per round, so consecutive
/// positions hold distinct categories whenever the data allows it.
pub fn epoch_batches(
    samples: &[CountingSample],
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Vec<Vec<usize>> {
    let mut r = rng::stream(seed, &[rng::tags::SCHEDULE, epoch as u64]);
    let mut groups: Vec<Vec<usize>> = crate::encoder::pretrain::by_category(samples)
        .into_iter()
        .map(|(_, mut g)| {
            g.shuffle(&mut r);
            g
        })
        .collect();
    let mut order = Vec::with_capacity(samples.len());
    loop {
        let mut live: Vec<usize> = (0..groups.len())
            .filter(|&g| !groups[g].is_empty())
            .collect();
        if live.is_empty() {
            break;
        }
        live.shuffle(&mut r);
        for g in live {
            order.push(groups[g].pop().expect("non-empty group"));
        }
    }
    order
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

/// Loss of one batch and the prompt rows it reaches.
#[derive(Clone, Debug)]
pub struct StepLoss {
    pub loss: crate::numerics::Var,
    pub l_mse: f64,
    pub l_con: f64,
    pub l_recon: Option<f64>,
    /// Union of prompt rows that receive gradient.
    pub rows: Vec<usize>,
    /// Prompt rows reached by each sample.
    pub sample_rows: Vec<Vec<usize>>,
}

/// Builds the stage objective for `batch` (sample, cached patch tokens).
#[allow(clippy::too_many_arguments)]
pub fn stage_loss(
    tape: &mut Tape,
    state: &TrainState,
    table: &TextEmbeddingTable,
    stage: Stage,
    bb: &BoundViT,
    pv: &PromptSetVar,
    hb: &BoundHead,
    batch: &[(&CountingSample, &Array)],
) -> Result<StepLoss> {
    let cfg = &state.config;
    if batch.is_empty() {
        return Err(Error::Parameter("empty batch".into()));
    }
    let w = &cfg.loss_weights;
    let mut img = Vec::with_capacity(batch.len());
    let mut counts = Vec::with_capacity(batch.len());
    let mut recons = Vec::new();
    let mut txt = Vec::with_capacity(batch.len() * table.dim());
    let mut cats = Vec::with_capacity(batch.len());
    let mut gts = Vec::with_capacity(batch.len());
    let mut sample_rows = Vec::with_capacity(batch.len());

    for &(s, tokens) in batch {
        let k = s.category_id;
        let eps = table.embedding(k)?;
        let (prompt, rows) = match stage {
            Stage::Cspi | Stage::SharedVpt => {
                let slot = state.slot_for(table, k)?;
                (pv.select_slot(tape, slot)?, vec![slot])
            }
            Stage::Tgpr => {
                let own = state.slot_for(table, k)?;
                let sel = table.topk_for_category(k, cfg.k)?;
                let fused = pv.fuse(tape, &state.prompts, table, &sel, cfg.fusion())?;
                let target = pv.select_slot(tape, own)?;
                recons.push(recon_loss(tape, fused, target, cfg.recon_metric)?);
                let mut rows = sel
                    .indices
                    .iter()
                    .map(|&j| state.prompts.slot_of(table, j))
                    .collect::<Result<Vec<_>>>()?;
                if w.lambda3 != 0.0 {
                    rows.push(own);
                }
                (fused, rows)
            }
            Stage::Pretrained => {
                return Err(Error::Contract(
                    "no training objective for the pretrained stage".into(),
                ))
            }
        };
        let tok = tape.constant(tokens.clone());
        let enc = state.backbone.encode_tokens(tape, bb, tok, Some(prompt))?;
        img.push(state.backbone.image_embedding(tape, &enc)?);
        let out = state.head.forward(tape, hb, enc.patches, eps)?;
        let c = tape.reshape(out.count, &[1, 1])?;
        counts.push(c);
        txt.extend_from_slice(eps);
        cats.push(k);
        gts.push(s.gt_count as f64);
        sample_rows.push(rows);
    }
    let n = batch.len();
    let counts = tape.concat_rows(&counts)?;
    let counts = tape.reshape(counts, &[n])?;
    let mse = mse_count_loss(tape, counts, &gts)?;
    let img = tape.concat_rows(&img)?;
    let txt = tape.constant(Array::matrix(n, table.dim(), txt)?);
    let con = contrastive_loss(tape, img, txt, &cats, w.tau)?;
    let recon = if recons.is_empty() {
        None
    } else {
        let parts: Vec<_> = recons.iter().map(|&r| (r, 1.0 / n as f64)).collect();
        Some(tape.weighted_sum(&parts)?)
    };
    let parts = LossParts {
        mse,
        con: Some(con),
        model: None,
        recon,
    };
    let loss = match stage {
        Stage::Tgpr => loss_tgpr(tape, &parts, w)?,
        _ => loss_cspi(tape, &parts, w)?,
    };
    let rows: BTreeSet<usize> = sample_rows.iter().flatten().copied().collect();
    Ok(StepLoss {
        loss,
        l_mse: tape.value(mse).item(),
        l_con: tape.value(con).item(),
        l_recon: recon.map(|r| tape.value(r).item()),
        rows: rows.into_iter().collect(),
        sample_rows,
    })
}

fn train_step(
    state: &mut TrainState,
    table: &TextEmbeddingTable,
    stage: Stage,
    batch: &[(&CountingSample, &Array)],
) -> Result<LogRecord> {
    let cfg = state.config.clone();
    let mut tape = Tape::with_checks(cfg.checked);
    let bb = state.backbone.bind(&mut tape, false)?;
    let pv = state.prompts.bind(&mut tape, true);
    let hb = state.head.bind(&mut tape, true);
    let sl = stage_loss(&mut tape, state, table, stage, &bb, &pv, &hb, batch)?;
    let total = tape.value(sl.loss).item();
    let grads = tape.backward(sl.loss)?;
    let hg: Vec<Array> = hb.vars().iter().map(|v| grads.wrt(*v).clone()).collect();
    adam_step(
        state.head.params_mut().arrays_mut(),
        &hg,
        &mut state.head_opt,
        &cfg.adam(),
        cfg.checked,
    )?;
    state.prompt_opt.step(
        state.prompts.values_mut(),
        grads.wrt(pv.var),
        &sl.rows,
        &cfg.prompt_adam(),
        cfg.checked,
    )?;
    state.step += 1;
    Ok(LogRecord {
        epoch: state.epoch + 1,
        stage,
        step: state.step,
        l_mse: sl.l_mse,
        l_con: sl.l_con,
        l_recon: sl.l_recon,
        total,
    })
}

fn run_epochs(
    state: &mut TrainState,
    samples: &[CountingSample],
    table: &TextEmbeddingTable,
    stage: Stage,
    epochs: usize,
) -> Result<Vec<LogRecord>> {
    state.check_table(table)?;
    state.backbone.require_frozen()?;
    if samples.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    if let Some(s) = samples.iter().find(|s| !table.is_seen(s.category_id)) {
        return Err(Error::Data(format!(
            "training sample of unseen category {}",
            s.category_id
        )));
    }
    let tokens = patch_tokens(&state.backbone, samples)?;
    let mut log = Vec::new();
    for _ in 0..epochs {
        let batches = epoch_batches(
            samples,
            state.config.batch_size,
            state.config.seed,
            state.epoch,
        );
        for b in batches {
            let batch: Vec<(&CountingSample, &Array)> =
                b.iter().map(|&i| (&samples[i], &tokens[i])).collect();
            log.push(train_step(state, table, stage, &batch)?);
        }
        state.epoch += 1;
    }
    state.stage = stage;
    Ok(log)
}

/// Category-specific prompt stage: each sample trains its own category's prompt.
pub fn run_cspi(
    state: &mut TrainState,
    samples: &[CountingSample],
    table: &TextEmbeddingTable,
    epochs: usize,
) -> Result<Vec<LogRecord>> {
    if state.shared || state.stage != Stage::Pretrained {
        return Err(Error::Contract(format!(
            "CSPI needs a fresh per-category state, found stage {}{}",
            state.stage.name(),
            if state.shared { " (shared)" } else { "" }
        )));
    }
    run_epochs(state, samples, table, Stage::Cspi, epochs)
}

/// Refinement stage: each sample trains through the fusion of its category's
/// top-K text neighbours.
pub fn run_tgpr(
    state: &mut TrainState,
    samples: &[CountingSample],
    table: &TextEmbeddingTable,
    epochs: usize,
) -> Result<Vec<LogRecord>> {
    if state.stage != Stage::Cspi && state.stage != Stage::Tgpr {
        return Err(Error::Contract(format!(
            "TGPR must follow CSPI, found stage {}",
            state.stage.name()
        )));
    }
    if state.config.k + 1 > table.num_seen() {
        return Err(Error::Parameter(format!(
            "K = {} needs at least {} seen categories, table has {}",
            state.config.k,
            state.config.k + 1,
            table.num_seen()
        )));
    }
    run_epochs(state, samples, table, Stage::Tgpr, epochs)
}

/// Shared-prompt baseline: one prompt for every category.
pub fn run_shared(
    state: &mut TrainState,
    samples: &[CountingSample],
    table: &TextEmbeddingTable,
    epochs: usize,
) -> Result<Vec<LogRecord>> {
    if !state.shared || (state.stage != Stage::Pretrained && state.stage != Stage::SharedVpt) {
        return Err(Error::Contract(
            "baseline training needs a shared-prompt state".into(),
        ));
    }
    run_epochs(state, samples, table, Stage::SharedVpt, epochs)
}

/// Builds and pretrains the backbone on the train split, returning it frozen.
pub fn pretrain(config: &TrainConfig, dataset: &Dataset) -> Result<(MiniViT, PretrainReport)> {
    config.validate()?;
    let mut bb = MiniViT::new(config.model.clone(), config.seed)?;
    let report = pretrain_backbone(
        &mut bb,
        &dataset.train,
        dataset.table(),
        &config.pretrain_config(),
        config.seed,
    )?;
    Ok((bb, report))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub log: Vec<LogRecord>,
    pub pretrain: Option<PretrainReport>,
}

fn save_to(state: &TrainState, out_dir: Option<&Path>, name: &str) -> Result<()> {
    if let Some(d) = out_dir {
        state.save(&d.join(name))?;
    }
    Ok(())
}

/// Continues a pretrained or CSPI state through the remaining stages. With
/// `out_dir`, writes `cspi/`, `final/` and `train_log.jsonl` there.
pub fn train_from(
    mut state: TrainState,
    dataset: &Dataset,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let table = dataset.table();
    let (e1, e2) = (state.config.e1, state.config.e2);
    let mut log = Vec::new();
    if let Some(d) = out_dir {
        let p = d.join("train_log.jsonl");
        if state.epoch > 0 && p.exists() {
            log = read_log(&p)?
                .into_iter()
                .filter(|r| r.epoch <= state.epoch)
                .collect();
        }
    }
    if state.stage == Stage::Pretrained {
        log.extend(run_cspi(&mut state, &dataset.train, table, e1)?);
        save_to(&state, out_dir, "cspi")?;
    }
    if state.stage == Stage::Cspi {
        let left = e2
            .checked_sub(state.epoch)
            .filter(|&n| n > 0)
            .ok_or_else(|| {
                Error::Contract(format!("state is at epoch {} but e2 = {e2}", state.epoch))
            })?;
        log.extend(run_tgpr(&mut state, &dataset.train, table, left)?);
    } else {
        return Err(Error::Contract(format!(
            "cannot continue training from stage {}",
            state.stage.name()
        )));
    }
    save_to(&state, out_dir, "final")?;
    if let Some(d) = out_dir {
        write_log(&d.join("train_log.jsonl"), &log)?;
    }
    Ok(TrainOutcome {
        state,
        log,
        pretrain: None,
    })
}

/// Full pipeline: pretrain and freeze, CSPI for `e1` epochs, TGPR up to `e2`.
pub fn train(
    config: &TrainConfig,
    dataset: &Dataset,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let (bb, report) = pretrain(config, dataset)?;
    let state = TrainState::new(config.clone(), bb, dataset.table(), false)?;
    save_to(&state, out_dir, "pretrained")?;
    let mut out = train_from(state, dataset, out_dir)?;
    out.pretrain = Some(report);
    Ok(out)
}

/// Shared-prompt baseline for `e2` epochs on `backbone` (pretrained here when `None`).
pub fn train_baseline(
    config: &TrainConfig,
    dataset: &Dataset,
    backbone: Option<MiniViT>,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let (bb, report) = match backbone {
        Some(b) => (b, None),
        None => {
            let (b, r) = pretrain(config, dataset)?;
            (b, Some(r))
        }
    };
    let mut state = TrainState::new(config.clone(), bb, dataset.table(), true)?;
    let log = run_shared(&mut state, &dataset.train, dataset.table(), config.e2)?;
    save_to(&state, out_dir, "final")?;
    if let Some(d) = out_dir {
        write_log(&d.join("train_log.jsonl"), &log)?;
    }
    Ok(TrainOutcome {
        state,
        log,
        pretrain: report,
    })
}
