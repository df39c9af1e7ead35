//! Frozen category text embeddings and the top-K similarity queries that drive
//! prompt fusion.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::container::{DType, TensorContainer};
use crate::error::{Error, Result};
use crate::numerics::{cosine_similarity, Array};

/// Per-category embeddings for seen and unseen categories. Immutable once
/// built; the category id is the row index.
#[derive(Clone, Debug, PartialEq)]
pub struct TextEmbeddingTable {
    embeddings: Array,
    names: Vec<String>,
    seen: Vec<bool>,
    seen_ids: Vec<usize>,
}

/// Top-K neighbours of a query, ordered by non-increasing raw cosine weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopKSelection {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

impl TopKSelection {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .copied()
            .zip(self.weights.iter().copied())
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    names: Vec<String>,
    seen: Vec<bool>,
}

impl TextEmbeddingTable {
    pub fn new(embeddings: Array, names: Vec<String>, seen: Vec<bool>) -> Result<Self> {
        if embeddings.shape().len() != 2 {
            return Err(Error::Validation(format!(
                "embedding table must be a matrix, got {:?}",
                embeddings.shape()
            )));
        }
        let n = embeddings.rows();
        if names.len() != n || seen.len() != n {
            return Err(Error::Validation(format!(
                "{n} embeddings but {} names and {} seen flags",
                names.len(),
                seen.len()
            )));
        }
        let mut uniq = HashSet::new();
        for name in &names {
            if !uniq.insert(name.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate category name {name:?}"
                )));
            }
        }
        for i in 0..n {
            if embeddings.row(i).iter().all(|v| *v == 0.0) {
                return Err(Error::Validation(format!(
                    "embedding of category {i} ({}) has zero norm",
                    names[i]
                )));
            }
        }
        let seen_ids = (0..n).filter(|&i| seen[i]).collect();
        Ok(Self {
            embeddings,
            names,
            seen,
            seen_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.row_width()
    }

    pub fn embeddings(&self) -> &Array {
        &self.embeddings
    }

    pub fn embedding(&self, id: usize) -> Result<&[f64]> {
        if id >= self.len() {
            return Err(Error::Lookup(format!("category id {id} not in table")));
        }
        Ok(self.embeddings.row(id))
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn is_seen(&self, id: usize) -> bool {
        self.seen.get(id).copied().unwrap_or(false)
    }

    pub fn seen_mask(&self) -> &[bool] {
        &self.seen
    }

    /// Seen category ids in ascending order; position in this list is the
    /// category's row in the base prompt set.
    pub fn seen_ids(&self) -> &[usize] {
        &self.seen_ids
    }

    pub fn num_seen(&self) -> usize {
        self.seen_ids.len()
    }

    pub fn unseen_ids(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.seen[i]).collect()
    }

    /// Prompt-set row of a seen category.
    pub fn seen_slot(&self, id: usize) -> Option<usize> {
        self.seen_ids.binary_search(&id).ok()
    }

    /// The `k` seen categories most cosine-similar to `query`, skipping
    /// `exclude`. Ties go to the lower category id.
    pub fn topk_similar(
        &self,
        query: &[f64],
        k: usize,
        exclude: Option<usize>,
    ) -> Result<TopKSelection> {
        if query.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "query of length {} against table of width {}",
                query.len(),
                self.dim()
            )));
        }
        if query.iter().all(|v| *v == 0.0) {
            return Err(Error::DegenerateVector("top-K query has zero norm".into()));
        }
        let excluded_seen = exclude.map_or(0, |e| usize::from(self.is_seen(e)));
        let available = self.num_seen() - excluded_seen;
        if k == 0 || k > available {
            return Err(Error::Parameter(format!(
                "K = {k} outside 1..={available} available seen categories"
            )));
        }
        let mut scored = Vec::with_capacity(self.num_seen());
        for &id in &self.seen_ids {
            if Some(id) == exclude {
                continue;
            }
            scored.push((id, cosine_similarity(query, self.embeddings.row(id))?));
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(TopKSelection {
            indices: scored.iter().map(|s| s.0).collect(),
            weights: scored.iter().map(|s| s.1).collect(),
        })
    }

    /// Top-K neighbours of a table row, excluding itself.
    pub fn topk_for_category(&self, id: usize, k: usize) -> Result<TopKSelection> {
        let q = self.embedding(id)?.to_vec();
        self.topk_similar(&q, k, Some(id))
    }

    /// Content hash over embeddings, names and seen flags.
    pub fn hash_hex(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for v in self.embeddings.data() {
            h.update(v.to_le_bytes());
        }
        for (n, s) in self.names.iter().zip(&self.seen) {
            h.update((n.len() as u64).to_le_bytes());
            h.update(n.as_bytes());
            h.update([u8::from(*s)]);
        }
        hex_string(&h.finalize())
    }

    /// Writes `path` (tensor container) and a JSON sidecar next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut c = TensorContainer::new();
        c.push("embeddings", self.embeddings.clone(), DType::F64)?;
        c.write(path)?;
        let side = Sidecar {
            names: self.names.clone(),
            seen: self.seen.clone(),
        };
        let sp = sidecar_path(path);
        let json = serde_json::to_string_pretty(&side)?;
        std::fs::write(&sp, json).map_err(|e| Error::io(&sp, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = TensorContainer::read(path)?;
        let emb = c.require("embeddings")?.clone();
        let sp = sidecar_path(path);
        let text = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
        let side: Sidecar = serde_json::from_str(&text)?;
        Self::new(emb, side.names, side.seen)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
