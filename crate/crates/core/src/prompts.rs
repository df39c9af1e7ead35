//! The base prompt set and the operations that turn it into a prompt for one
//! category: direct selection, similarity-weighted fusion over top-K text
//! neighbours, and synthesis for categories that have no prompt of their own.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Array, Tape, Var};
use crate::rng;
use crate::text_space::{TextEmbeddingTable, TopKSelection};

pub const PROMPT_INIT_STD: f64 = 0.02;

/// Learnable prompts indexed `[seen category slot][layer][token][width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BasePromptSet {
    values: Array,
}

/// How raw cosine weights are turned into fusion coefficients.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionOptions {
    /// Divide by the sum of weights.
    #[serde(default)]
    pub normalize_weights: bool,
    /// Clamp negative similarities to zero.
    #[serde(default)]
    pub nonnegative_weights: bool,
}

impl FusionOptions {
    pub fn coefficients(&self, selection: &TopKSelection) -> Result<Vec<f64>> {
        if selection.is_empty() {
            return Err(Error::Parameter("fusion over an empty selection".into()));
        }
        let mut w: Vec<f64> = selection
            .weights
            .iter()
            .map(|&x| {
                if self.nonnegative_weights {
                    x.max(0.0)
                } else {
                    x
                }
            })
            .collect();
        if self.normalize_weights {
            let s: f64 = w.iter().sum();
            if s.abs() < 1e-12 {
                return Err(Error::Domain(
                    "cannot normalize fusion weights that sum to zero".into(),
                ));
            }
            w.iter_mut().for_each(|v| *v /= s);
        }
        Ok(w)
    }
}

/// A prompt built as `Σ wⱼ · P_j`, with the selection that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedPrompt {
    pub values: Array,
    pub provenance: TopKSelection,
}

impl BasePromptSet {
    /// I.i.d. `N(0, 0.02²)` entries, deterministic in `seed`.
    pub fn init(n_c: usize, layers: usize, tokens: usize, width: usize, seed: u64) -> Result<Self> {
        if n_c == 0 || layers == 0 || tokens == 0 || width == 0 {
            return Err(Error::Parameter(format!(
                "prompt set dims must be positive, got {n_c}x{layers}x{tokens}x{width}"
            )));
        }
        let mut r = rng::stream(seed, &[rng::tags::PROMPT_INIT]);
        let normal = Normal::new(0.0, PROMPT_INIT_STD).expect("valid std");
        let n = n_c * layers * tokens * width;
        let data = (0..n).map(|_| normal.sample(&mut r)).collect();
        Ok(Self {
            values: Array::new(vec![n_c, layers, tokens, width], data)?,
        })
    }

    pub fn from_array(values: Array) -> Result<Self> {
        if values.shape().len() != 4 {
            return Err(Error::Dimension(format!(
                "prompt set must be rank 4, got {:?}",
                values.shape()
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array {
        &mut self.values
    }

    pub fn num_slots(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn layers(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn tokens(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[3]
    }

    /// Values per slot, `L·T·D`.
    pub fn slot_len(&self) -> usize {
        self.values.row_width()
    }

    pub fn slot(&self, slot: usize) -> &[f64] {
        self.values.row(slot)
    }

    /// Slot of a category, which must be seen in `table`.
    pub fn slot_of(&self, table: &TextEmbeddingTable, category: usize) -> Result<usize> {
        let slot = table.seen_slot(category).ok_or_else(|| {
            Error::Lookup(format!(
                "category {category} has no prompt (not a seen category)"
            ))
        })?;
        if slot >= self.num_slots() {
            return Err(Error::Lookup(format!(
                "slot {slot} out of range for a set of {} prompts",
                self.num_slots()
            )));
        }
        Ok(slot)
    }

    /// `[L, T, D]` copy of one category's prompt.
    pub fn select(&self, table: &TextEmbeddingTable, category: usize) -> Result<Array> {
        let slot = self.slot_of(table, category)?;
        Array::new(self.slot_shape(), self.slot(slot).to_vec())
    }

    pub fn slot_shape(&self) -> Vec<usize> {
        self.values.shape()[1..].to_vec()
    }

    /// Off-tape fusion.
    pub fn fuse(
        &self,
        table: &TextEmbeddingTable,
        selection: &TopKSelection,
        options: FusionOptions,
    ) -> Result<FusedPrompt> {
        let coeffs = options.coefficients(selection)?;
        let mut out = vec![0.0; self.slot_len()];
        for (&id, &w) in selection.indices.iter().zip(&coeffs) {
            let slot = self.slot_of(table, id)?;
            for (o, x) in out.iter_mut().zip(self.slot(slot)) {
                *o += w * x;
            }
        }
        Ok(FusedPrompt {
            values: Array::new(self.slot_shape(), out)?,
            provenance: selection.clone(),
        })
    }

    /// Prompt for an arbitrary text embedding: fusion over its top-K seen
    /// neighbours, with no self-exclusion.
    pub fn synthesize_unseen(
        &self,
        table: &TextEmbeddingTable,
        text_embedding: &[f64],
        k: usize,
        options: FusionOptions,
    ) -> Result<FusedPrompt> {
        let sel = table.topk_similar(text_embedding, k, None)?;
        self.fuse(table, &sel, options)
    }

    /// Puts the whole set on `tape`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> PromptSetVar {
        PromptSetVar {
            var: tape.leaf(self.values.clone(), trainable),
            slot_shape: self.slot_shape(),
        }
    }
}

/// The prompt set as a tape leaf.
#[derive(Clone, Debug)]
pub struct PromptSetVar {
    pub var: Var,
    slot_shape: Vec<usize>,
}

impl PromptSetVar {
    /// Wraps a `[N_C, L, T, D]` var that is already on a tape.
    pub fn from_var(tape: &Tape, var: Var) -> Result<Self> {
        let s = tape.value(var).shape();
        if s.len() != 4 {
            return Err(Error::Dimension(format!("prompt set var of shape {s:?}")));
        }
        Ok(Self {
            var,
            slot_shape: s[1..].to_vec(),
        })
    }

    /// `[L, T, D]` slice of one slot; gradients flow only into that slot.
    pub fn select_slot(&self, tape: &mut Tape, slot: usize) -> Result<Var> {
        let s = tape.slice_rows(self.var, slot, 1)?;
        tape.reshape(s, &self.slot_shape)
    }

    pub fn select(
        &self,
        tape: &mut Tape,
        set: &BasePromptSet,
        table: &TextEmbeddingTable,
        category: usize,
    ) -> Result<Var> {
        let slot = set.slot_of(table, category)?;
        self.select_slot(tape, slot)
    }

    /// On-tape fusion; every participating slot receives gradient.
    pub fn fuse(
        &self,
        tape: &mut Tape,
        set: &BasePromptSet,
        table: &TextEmbeddingTable,
        selection: &TopKSelection,
        options: FusionOptions,
    ) -> Result<Var> {
        let coeffs = options.coefficients(selection)?;
        let mut parts = Vec::with_capacity(selection.len());
        for (&id, &w) in selection.indices.iter().zip(&coeffs) {
            let slot = set.slot_of(table, id)?;
            parts.push((self.select_slot(tape, slot)?, w));
        }
        tape.weighted_sum(&parts)
    }
}
