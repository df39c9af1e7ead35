use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{EvalMode, Predictor};
use crate::data::CountingSample;
use crate::error::{Error, Result};
use crate::text_space::TextEmbeddingTable;
use crate::training::TrainState;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub n_images: usize,
    pub k: usize,
    /// Median seconds per image with the prompt synthesized once per category.
    pub fixed_median_s: f64,
    /// Median seconds per image with synthesis repeated for every image.
    pub synth_median_s: f64,
    pub relative_overhead: f64,
    pub fusion_multiplications: usize,
    pub fusion_additions: usize,
    pub backbone_params: usize,
    pub prompt_params: usize,
    pub head_params: usize,
    /// Frozen text table entries, not trained.
    pub text_table_values: usize,
    pub predictions_identical: bool,
}

/// Multiplications and additions spent fusing `k` prompts of `layers·tokens·width`
/// values each into a zero-initialized accumulator.
pub fn fusion_op_count(k: usize, layers: usize, tokens: usize, width: usize) -> (usize, usize) {
    let n = k * layers * tokens * width;
    (n, n)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Times per-image inference over `n_images` samples drawn cyclically from
/// `samples`, after one untimed warm-up pass.
pub fn bench_overhead(
    state: &TrainState,
    table: &TextEmbeddingTable,
    samples: &[CountingSample],
    n_images: usize,
    k: usize,
) -> Result<BenchReport> {
    if samples.is_empty() || n_images == 0 {
        return Err(Error::Parameter(
            "benchmark needs at least one image".into(),
        ));
    }
    let mode = if state.shared {
        EvalMode::SharedVpt
    } else {
        EvalMode::Sdvpt
    };
    let mut fixed = Predictor::new(state, table, mode, k)?;
    let synth = Predictor::new(state, table, mode, k)?;
    let pick = |i: usize| &samples[i % samples.len()];
    for i in 0..n_images.min(samples.len()) {
        fixed.predict(pick(i))?;
    }
    let (mut tf, mut ts) = (Vec::with_capacity(n_images), Vec::with_capacity(n_images));
    let mut identical = true;
    for i in 0..n_images {
        let s = pick(i);
        let t0 = Instant::now();
        let a = fixed.predict(s)?;
        tf.push(t0.elapsed().as_secs_f64());

        let t0 = Instant::now();
        let q = table.embedding(s.category_id)?;
        let prompt = synth.prompt_for(q)?;
        let b = synth.predict_with(s, prompt.as_ref())?;
        ts.push(t0.elapsed().as_secs_f64());
        identical &= a.count.to_bits() == b.count.to_bits();
    }
    let p = &state.prompts;
    let (muls, adds) = if mode == EvalMode::Sdvpt {
        fusion_op_count(k, p.layers(), p.tokens(), p.width())
    } else {
        (0, 0)
    };
    let (fm, sm) = (median(tf), median(ts));
    Ok(BenchReport {
        n_images,
        k,
        fixed_median_s: fm,
        synth_median_s: sm,
        relative_overhead: if fm > 0.0 { sm / fm - 1.0 } else { 0.0 },
        fusion_multiplications: muls,
        fusion_additions: adds,
        backbone_params: state.backbone.num_parameters(),
        prompt_params: p.values().len(),
        head_params: state.head.num_parameters(),
        text_table_values: table.embeddings().len(),
        predictions_identical: identical,
    })
}
