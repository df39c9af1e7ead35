//! Synthetic categories and their text embeddings.
//!
//! Each category is a point in a small parameter space (glyph shape, size,
//! hue, texture frequency) drawn from a mixture of cluster centres. Its text
//! embedding is a fixed orthonormal linear map of an angular lift of that
//! point plus Gaussian noise, so text cosine similarity tracks parameter
//! distance.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Array;
use crate::rng;
use crate::text_space::TextEmbeddingTable;

pub const PARAM_DIM: usize = 4;

/// Angle range of the lift, as a fraction of π.
const LIFT_SPAN: f64 = 0.75;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CatalogConfig {
    pub n_seen: usize,
    pub n_unseen: usize,
    pub text_dim: usize,
    pub clusters: usize,
    pub cluster_spread: f64,
    pub noise_std: f64,
    /// Norm scale of the noiseless embedding.
    pub amplitude: f64,
}

impl Default for CatalogConfig {
    fn default() -> Self {
        Self {
            n_seen: 24,
            n_unseen: 8,
            text_dim: 32,
            clusters: 6,
            cluster_spread: 0.15,
            noise_std: 0.05,
            amplitude: 2.0,
        }
    }
}

impl CatalogConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_seen < 2 {
            return Err(Error::Parameter(
                "at least two seen categories are required".into(),
            ));
        }
        if self.text_dim < 2 * PARAM_DIM {
            return Err(Error::Parameter(format!(
                "text_dim {} must be at least {}",
                self.text_dim,
                2 * PARAM_DIM
            )));
        }
        if self.clusters == 0 {
            return Err(Error::Parameter("clusters must be positive".into()));
        }
        for (n, v) in [
            ("cluster_spread", self.cluster_spread),
            ("noise_std", self.noise_std),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!(
                    "{n} must be non-negative, got {v}"
                )));
            }
        }
        if !(self.amplitude > 0.0) {
            return Err(Error::Parameter("amplitude must be positive".into()));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.n_seen + self.n_unseen
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCategory {
    pub id: usize,
    pub name: String,
    /// `[shape, size, hue, texture]`, each in `[0, 1]`.
    pub params: Vec<f64>,
    pub is_seen: bool,
}

impl SyntheticCategory {
    pub fn shape(&self) -> f64 {
        self.params[0]
    }

    pub fn size(&self) -> f64 {
        self.params[1]
    }

    pub fn hue(&self) -> f64 {
        self.params[2]
    }

    pub fn texture(&self) -> f64 {
        self.params[3]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Catalog {
    pub categories: Vec<SyntheticCategory>,
    pub table: TextEmbeddingTable,
}

impl Catalog {
    pub fn seen(&self) -> impl Iterator<Item = &SyntheticCategory> {
        self.categories.iter().filter(|c| c.is_seen)
    }

    pub fn unseen(&self) -> impl Iterator<Item = &SyntheticCategory> {
        self.categories.iter().filter(|c| !c.is_seen)
    }
}

/// `[cos(s·π·p), sin(s·π·p)]` per parameter; constant norm √PARAM_DIM.
pub fn lift(params: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * params.len());
    for &p in params {
        out.push((LIFT_SPAN * std::f64::consts::PI * p).cos());
    }
    for &p in params {
        out.push((LIFT_SPAN * std::f64::consts::PI * p).sin());
    }
    out
}

/// `[rows × cols]` matrix with orthonormal columns (Gram-Schmidt on Gaussian draws).
fn orthonormal_columns(rows: usize, cols: usize, r: &mut impl Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while basis.len() < cols {
        let mut v: Vec<f64> = (0..rows).map(|_| normal.sample(r)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    let mut w = vec![0.0; rows * cols];
    for (j, b) in basis.iter().enumerate() {
        for i in 0..rows {
            w[i * cols + j] = b[i];
        }
    }
    w
}

/// Maps parameter vectors to text embeddings with a seeded linear map.
pub struct TextMap {
    weights: Vec<f64>,
    rows: usize,
    amplitude: f64,
}

impl TextMap {
    pub fn new(text_dim: usize, amplitude: f64, seed: u64) -> Self {
        let mut r = rng::stream(seed, &[rng::tags::CATALOG, 1]);
        Self {
            weights: orthonormal_columns(text_dim, 2 * PARAM_DIM, &mut r),
            rows: text_dim,
            amplitude,
        }
    }

    /// Noise-free embedding of `params`.
    pub fn embed(&self, params: &[f64]) -> Vec<f64> {
        let f = lift(params);
        let c = f.len();
        (0..self.rows)
            .map(|i| self.amplitude * (0..c).map(|j| self.weights[i * c + j] * f[j]).sum::<f64>())
            .collect()
    }
}

/// Draws a catalog. Seen categories get ids `0..n_seen`, unseen ones follow;
/// both come from the same mixture.
pub fn gen_catalog(cfg: &CatalogConfig, seed: u64) -> Result<Catalog> {
    cfg.validate()?;
    let mut r = rng::stream(seed, &[rng::tags::CATALOG, 0]);
    let centres: Vec<Vec<f64>> = (0..cfg.clusters)
        .map(|_| (0..PARAM_DIM).map(|_| r.random_range(0.1..0.9)).collect())
        .collect();
    let spread = Normal::new(0.0, cfg.cluster_spread.max(f64::MIN_POSITIVE)).expect("valid std");
    let noise = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
    let map = TextMap::new(cfg.text_dim, cfg.amplitude, seed);

    let mut categories = Vec::with_capacity(cfg.total());
    let mut emb = Vec::with_capacity(cfg.total() * cfg.text_dim);
    for id in 0..cfg.total() {
        let c = &centres[r.random_range(0..cfg.clusters)];
        let params: Vec<f64> = c
            .iter()
            .map(|&m| {
                let d = if cfg.cluster_spread > 0.0 {
                    spread.sample(&mut r)
                } else {
                    0.0
                };
                (m + d).clamp(0.0, 1.0)
            })
            .collect();
        let mut e = map.embed(&params);
        if cfg.noise_std > 0.0 {
            e.iter_mut().for_each(|x| *x += noise.sample(&mut r));
        }
        emb.extend(e);
        let is_seen = id < cfg.n_seen;
        categories.push(SyntheticCategory {
            id,
            name: format!("{}{id:02}", if is_seen { "seen" } else { "unseen" }),
            params,
            is_seen,
        });
    }
    let table = TextEmbeddingTable::new(
        Array::matrix(cfg.total(), cfg.text_dim, emb)?,
        categories.iter().map(|c| c.name.clone()).collect(),
        categories.iter().map(|c| c.is_seen).collect(),
    )?;
    Ok(Catalog { categories, table })
}
