//! Counting metrics, evaluation modes, sweeps, ablations, embedding export
//! and the inference-overhead benchmark.

mod ablate;
mod bench;
mod export;
pub mod metrics;

pub use ablate::{ablate, AblationReport, AblationRow};
pub use bench::{bench_overhead, fusion_op_count, BenchReport};
pub use export::{export_embeddings, sweep_topk, write_sweep_csv, SweepRow, EXPORT_HEADER_PREFIX};
pub use metrics::{absolute_errors, metrics, Metrics};

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{CountingSample, Split};
use crate::encoder::ImageEmbedding;
use crate::error::{Error, Result};
use crate::numerics::{cosine_similarity, Array};
use crate::text_space::TextEmbeddingTable;
use crate::training::{Stage, TrainConfig, TrainState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Prompts synthesized from the query embedding over a refined prompt set.
    Sdvpt,
    /// Single shared prompt.
    SharedVpt,
    /// Same synthesis over prompts that only went through CSPI.
    CspiOnly,
    /// Backbone without any prompt tokens.
    NoPrompt,
}

impl EvalMode {
    pub const ALL: [EvalMode; 4] = [
        EvalMode::Sdvpt,
        EvalMode::SharedVpt,
        EvalMode::CspiOnly,
        EvalMode::NoPrompt,
    ];

    fn check(self, state: &TrainState) -> Result<()> {
        let ok = match self {
            EvalMode::Sdvpt => !state.shared && state.stage == Stage::Tgpr,
            EvalMode::CspiOnly => !state.shared && state.stage == Stage::Cspi,
            EvalMode::SharedVpt => state.shared && state.stage == Stage::SharedVpt,
            EvalMode::NoPrompt => true,
        };
        if !ok {
            return Err(Error::Contract(format!(
                "mode {self} cannot run on a {}{} checkpoint",
                state.stage.name(),
                if state.shared { " shared-prompt" } else { "" }
            )));
        }
        Ok(())
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Sdvpt => "sdvpt",
            EvalMode::SharedVpt => "shared_vpt",
            EvalMode::CspiOnly => "cspi_only",
            EvalMode::NoPrompt => "no_prompt",
        })
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EvalMode::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown eval mode {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePrediction {
    pub index: usize,
    pub category_id: usize,
    pub gt: f64,
    pub pred: f64,
    /// Cosine between the image embedding and the category's text embedding.
    pub alignment: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub mode: EvalMode,
    pub k: Option<usize>,
    pub metrics: Metrics,
    pub mean_alignment: f64,
    pub samples: Vec<SamplePrediction>,
    pub checkpoint_hash: String,
    pub stage: Stage,
    pub config: TrainConfig,
}

impl EvalReport {
    /// Aggregates recomputed from the per-sample pairs.
    pub fn recompute(&self) -> Result<Metrics> {
        let p: Vec<f64> = self.samples.iter().map(|s| s.pred).collect();
        let g: Vec<f64> = self.samples.iter().map(|s| s.gt).collect();
        metrics(&p, &g)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Per-sample prediction machinery shared by evaluation, export and the benchmark.
pub(crate) struct Predictor<'a> {
    state: &'a TrainState,
    table: &'a TextEmbeddingTable,
    mode: EvalMode,
    k: usize,
    cache: BTreeMap<usize, Array>,
}

pub(crate) struct Prediction {
    pub count: f64,
    pub embedding: Vec<f64>,
}

impl<'a> Predictor<'a> {
    pub fn new(
        state: &'a TrainState,
        table: &'a TextEmbeddingTable,
        mode: EvalMode,
        k: usize,
    ) -> Result<Self> {
        mode.check(state)?;
        if table.hash_hex() != state.table_hash {
            return Err(Error::Contract(
                "text table differs from the checkpoint's".into(),
            ));
        }
        Ok(Self {
            state,
            table,
            mode,
            k,
            cache: BTreeMap::new(),
        })
    }

    /// Prompt for a query embedding, `None` in promptless mode.
    pub fn prompt_for(&self, query: &[f64]) -> Result<Option<Array>> {
        let p = &self.state.prompts;
        match self.mode {
            EvalMode::Sdvpt | EvalMode::CspiOnly => Ok(Some(
                p.synthesize_unseen(self.table, query, self.k, self.state.config.fusion())?
                    .values,
            )),
            EvalMode::SharedVpt => Ok(Some(Array::new(p.slot_shape(), p.slot(0).to_vec())?)),
            EvalMode::NoPrompt => Ok(None),
        }
    }

    fn cached_prompt(&mut self, category: usize) -> Result<Option<Array>> {
        if self.mode == EvalMode::NoPrompt {
            return Ok(None);
        }
        if !self.cache.contains_key(&category) {
            let q = self.table.embedding(category)?.to_vec();
            let p = self.prompt_for(&q)?.expect("prompted mode");
            self.cache.insert(category, p);
        }
        Ok(self.cache.get(&category).cloned())
    }

    pub fn predict_with(
        &self,
        sample: &CountingSample,
        prompt: Option<&Array>,
    ) -> Result<Prediction> {
        let bb = &self.state.backbone;
        let enc = bb.encode_image(&sample.image, prompt)?;
        let text = self.table.embedding(sample.category_id)?;
        let (_, count) = self.state.head.predict(&enc.patch_embeddings, text)?;
        let embedding = match bb.config().image_embedding {
            ImageEmbedding::Cls => enc.cls_embedding.data().to_vec(),
            ImageEmbedding::PatchMean => {
                let p = &enc.patch_embeddings;
                let n = p.rows() as f64;
                (0..p.row_width())
                    .map(|j| (0..p.rows()).map(|i| p.row(i)[j]).sum::<f64>() / n)
                    .collect()
            }
        };
        Ok(Prediction { count, embedding })
    }

    pub fn predict(&mut self, sample: &CountingSample) -> Result<Prediction> {
        let prompt = self.cached_prompt(sample.category_id)?;
        self.predict_with(sample, prompt.as_ref())
    }
}

/// Runs `mode` over `samples`. Every category, seen or not, gets its prompt
/// from its own text embedding through the same synthesis path.
pub fn evaluate(
    state: &TrainState,
    table: &TextEmbeddingTable,
    samples: &[CountingSample],
    split: Split,
    mode: EvalMode,
    k: usize,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Data(format!("{split} split is empty")));
    }
    let mut pred = Predictor::new(state, table, mode, k)?;
    let mut out = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let p = pred.predict(s)?;
        out.push(SamplePrediction {
            index: i,
            category_id: s.category_id,
            gt: s.gt_count as f64,
            pred: p.count,
            alignment: cosine_similarity(&p.embedding, table.embedding(s.category_id)?)?,
        });
    }
    let preds: Vec<f64> = out.iter().map(|s| s.pred).collect();
    let gts: Vec<f64> = out.iter().map(|s| s.gt).collect();
    let uses_k = matches!(mode, EvalMode::Sdvpt | EvalMode::CspiOnly);
    Ok(EvalReport {
        split,
        mode,
        k: uses_k.then_some(k),
        metrics: metrics(&preds, &gts)?,
        mean_alignment: out.iter().map(|s| s.alignment).sum::<f64>() / out.len() as f64,
        samples: out,
        checkpoint_hash: state.hash_hex()?,
        stage: state.stage,
        config: state.config.clone(),
    })
}
