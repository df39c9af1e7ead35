//! Finite-difference check of a full training objective.

use sdvpt::data::CountingSample;
use sdvpt::losses::ReconMetric;
use sdvpt::numerics::{finite_diff_check, Array, Var};
use sdvpt::prompts::PromptSetVar;
use sdvpt::training::{patch_tokens, pretrain, stage_loss, Stage, TrainState};

/// Max relative error of the stage objective gradient over prompts and head
/// parameters, on one sample from each of the four seen categories.
pub fn objective_error(stage: Stage, lambda3: f64, metric: ReconMetric) -> f64 {
    let mut cfg = super::tiny();
    cfg.train.loss_weights.lambda3 = lambda3;
    cfg.train.recon_metric = metric;
    let ds = super::tiny_data(&cfg, 3);
    let (bb, _) = pretrain(&cfg.train, &ds).unwrap();
    let mut state = TrainState::new(cfg.train.clone(), bb, ds.table(), false).unwrap();
    // prompts well away from init so every term has curvature
    for (i, v) in state.prompts.values_mut().data_mut().iter_mut().enumerate() {
        *v = ((i * 7919) % 101) as f64 / 50.0 - 1.0;
    }
    let table = ds.table().clone();
    let picks: Vec<&CountingSample> = (0..4)
        .map(|c| ds.train.iter().find(|s| s.category_id == c).unwrap())
        .collect();
    let owned: Vec<CountingSample> = picks.iter().map(|s| (*s).clone()).collect();
    let tokens = patch_tokens(&state.backbone, &owned).unwrap();
    let batch: Vec<(&CountingSample, &Array)> = owned.iter().zip(&tokens).collect();

    let mut params = vec![state.prompts.values().clone()];
    params.extend(state.head.params().arrays().iter().cloned());
    let err = finite_diff_check(
        |tape, vars: &[Var]| {
            let bb = state.backbone.bind(tape, false)?;
            let pv = PromptSetVar::from_var(tape, vars[0])?;
            let hb = state.head.bind_vars(tape, vars[1..].to_vec());
            Ok(stage_loss(tape, &state, &table, stage, &bb, &pv, &hb, &batch)?.loss)
        },
        &params,
        1e-5,
    )
    .unwrap();
    err
}
