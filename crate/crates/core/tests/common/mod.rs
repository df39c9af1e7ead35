#![allow(dead_code)]

pub mod fusion_oracle;
pub mod objective;
pub mod tensors;

use std::collections::BTreeSet;

use sdvpt::config::ExperimentConfig;
use sdvpt::counting_head::HeadConfig;
use sdvpt::data::{CatalogConfig, CountingSample, Dataset, DatasetConfig, RenderConfig};
use sdvpt::encoder::MiniViTConfig;
use sdvpt::numerics::Tape;
use sdvpt::training::{patch_tokens, stage_loss, Stage, TrainConfig, TrainState};

/// Four seen and two unseen categories on 16x16 images; trains in seconds.
pub fn tiny() -> ExperimentConfig {
    let data = DatasetConfig {
        catalog: CatalogConfig {
            n_seen: 4,
            n_unseen: 2,
            text_dim: 8,
            ..Default::default()
        },
        render: RenderConfig {
            image_size: 16,
            density_grid: 8,
            min_radius: 1.0,
            max_radius: 1.5,
            ..Default::default()
        },
        train_per_category: 4,
        val_per_category: 1,
        test_per_category: 2,
        count_min: 1,
        count_max: 6,
        distractors_max: 0,
    };
    let train = TrainConfig {
        model: MiniViTConfig {
            image_size: 16,
            patch_size: 4,
            depth: 2,
            width: 16,
            heads: 2,
            mlp_hidden: 32,
            joint_dim: 8,
            prompted_layers: vec![1, 2],
            ..Default::default()
        },
        head: HeadConfig {
            reduced_channels: 2,
            hidden: 4,
            init_count: 3.0,
        },
        prompt_tokens: 2,
        stage0_steps: 20,
        stage0_batch_size: 4,
        e1: 2,
        e2: 4,
        k: 2,
        batch_size: 4,
        ..Default::default()
    };
    ExperimentConfig {
        data,
        train,
        ..Default::default()
    }
}

pub fn tiny_data(cfg: &ExperimentConfig, seed: u64) -> Dataset {
    Dataset::generate(&cfg.data, seed).unwrap()
}

/// Prompt rows with a nonzero gradient for a one-sample batch.
pub fn touched_rows(
    st: &TrainState,
    ds: &Dataset,
    stage: Stage,
    s: &CountingSample,
) -> (BTreeSet<usize>, Vec<usize>) {
    let tokens = patch_tokens(&st.backbone, std::slice::from_ref(s)).unwrap();
    let mut tape = Tape::new();
    let bb = st.backbone.bind(&mut tape, false).unwrap();
    let pv = st.prompts.bind(&mut tape, true);
    let hb = st.head.bind(&mut tape, true);
    let sl = stage_loss(
        &mut tape,
        st,
        ds.table(),
        stage,
        &bb,
        &pv,
        &hb,
        &[(s, &tokens[0])],
    )
    .unwrap();
    let g = tape.backward(sl.loss).unwrap();
    let grad = g.wrt(pv.var);
    let rows = (0..grad.rows())
        .filter(|&r| grad.row(r).iter().any(|v| *v != 0.0))
        .collect();
    (rows, sl.sample_rows[0].clone())
}
