//! Split generation and the on-disk dataset layout:
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/table.sdvt, table.sdvt.json
//! <dir>/<split>/<index>.sdvt        image (f32), density, centers, meta
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::catalog::{gen_catalog, Catalog, CatalogConfig, SyntheticCategory};
use super::container::{DType, TensorContainer, FORMAT_VERSION};
use super::render::{render_scene, CountingSample, RenderConfig};
use crate::error::{Error, Result};
use crate::numerics::Array;
use crate::rng;
use crate::text_space::TextEmbeddingTable;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub catalog: CatalogConfig,
    pub render: RenderConfig,
    pub train_per_category: usize,
    pub val_per_category: usize,
    pub test_per_category: usize,
    pub count_min: usize,
    pub count_max: usize,
    /// Upper bound on uncounted objects of other categories per image.
    pub distractors_max: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            catalog: CatalogConfig::default(),
            render: RenderConfig::default(),
            train_per_category: 16,
            val_per_category: 4,
            test_per_category: 8,
            count_min: 1,
            count_max: 30,
            distractors_max: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.catalog.validate()?;
        self.render.validate()?;
        if self.count_min == 0 || self.count_max < self.count_min {
            return Err(Error::Parameter(format!(
                "count range [{}, {}] must satisfy 1 <= min <= max",
                self.count_min, self.count_max
            )));
        }
        if self.train_per_category == 0 {
            return Err(Error::Parameter(
                "train_per_category must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    fn code(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    /// Whether the split draws from seen categories.
    pub fn is_seen(self) -> bool {
        self != Split::Test
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Parameter(format!(
                "unknown split {other:?} (expected train, val or test)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub category_id: usize,
    pub gt_count: usize,
    /// Set when packing forced a lower count than was drawn.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requested_count: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub config: DatasetConfig,
    pub table_file: String,
    pub categories: Vec<SyntheticCategory>,
    pub splits: BTreeMap<Split, Vec<ManifestEntry>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub seed: u64,
    pub catalog: Catalog,
    pub train: Vec<CountingSample>,
    pub val: Vec<CountingSample>,
    pub test: Vec<CountingSample>,
    /// Drawn counts that packing reduced, keyed by `(split, index)`.
    pub reduced: BTreeMap<(Split, usize), usize>,
}

fn log_uniform_count(min: usize, max: usize, r: &mut impl Rng) -> usize {
    let lo = (min as f64).ln();
    let hi = (max as f64 + 1.0).ln();
    let c = r.random_range(lo..hi).exp().floor() as usize;
    c.clamp(min, max)
}

fn render_one(
    cfg: &DatasetConfig,
    seed: u64,
    split: Split,
    cat: &SyntheticCategory,
    pool: &[&SyntheticCategory],
    index: usize,
) -> Result<(CountingSample, Option<usize>)> {
    let mut r = rng::stream(
        seed,
        &[rng::tags::RENDER, split.code(), cat.id as u64, index as u64],
    );
    let count = log_uniform_count(cfg.count_min, cfg.count_max, &mut r);
    let others: Vec<&SyntheticCategory> = pool.iter().copied().filter(|c| c.id != cat.id).collect();
    let n_distract = if others.is_empty() {
        0
    } else {
        r.random_range(0..=cfg.distractors_max)
    };
    let distractors: Vec<&SyntheticCategory> = (0..n_distract)
        .map(|_| others[r.random_range(0..others.len())])
        .collect();
    match render_scene(cat, count, &distractors, &cfg.render, &mut r) {
        Ok(s) => Ok((s, None)),
        Err(Error::Packing { achieved, .. }) => {
            let reduced = achieved.saturating_sub(n_distract).max(1);
            let s = render_scene(cat, reduced, &distractors, &cfg.render, &mut r)?;
            Ok((s, Some(count)))
        }
        Err(e) => Err(e),
    }
}

impl Dataset {
    /// Generates catalog and all three splits in memory. Each sample's
    /// stream depends only on `(seed, split, category, index)`.
    pub fn generate(cfg: &DatasetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let catalog = gen_catalog(&cfg.catalog, seed)?;
        let seen: Vec<&SyntheticCategory> = catalog.seen().collect();
        let unseen: Vec<&SyntheticCategory> = catalog.unseen().collect();
        let mut reduced = BTreeMap::new();
        let mut splits: BTreeMap<Split, Vec<CountingSample>> = BTreeMap::new();
        for split in Split::ALL {
            let (cats, per) = match split {
                Split::Train => (&seen, cfg.train_per_category),
                Split::Val => (&seen, cfg.val_per_category),
                Split::Test => (&unseen, cfg.test_per_category),
            };
            let mut out = Vec::with_capacity(cats.len() * per);
            for cat in cats.iter() {
                for i in 0..per {
                    let (s, req) = render_one(cfg, seed, split, cat, cats, i)?;
                    if let Some(req) = req {
                        reduced.insert((split, out.len()), req);
                    }
                    out.push(s);
                }
            }
            splits.insert(split, out);
        }
        Ok(Self {
            config: cfg.clone(),
            seed,
            catalog,
            train: splits.remove(&Split::Train).unwrap_or_default(),
            val: splits.remove(&Split::Val).unwrap_or_default(),
            test: splits.remove(&Split::Test).unwrap_or_default(),
            reduced,
        })
    }

    pub fn table(&self) -> &TextEmbeddingTable {
        &self.catalog.table
    }

    pub fn split(&self, split: Split) -> &[CountingSample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn manifest(&self) -> DatasetManifest {
        let mut splits = BTreeMap::new();
        for split in Split::ALL {
            let entries = self
                .split(split)
                .iter()
                .enumerate()
                .map(|(i, s)| ManifestEntry {
                    file: sample_file(split, i),
                    category_id: s.category_id,
                    gt_count: s.gt_count,
                    requested_count: self.reduced.get(&(split, i)).copied(),
                })
                .collect();
            splits.insert(split, entries);
        }
        DatasetManifest {
            format_version: FORMAT_VERSION,
            seed: self.seed,
            config: self.config.clone(),
            table_file: "table.sdvt".into(),
            categories: self.catalog.categories.clone(),
            splits,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<DatasetManifest> {
        for split in Split::ALL {
            let d = dir.join(split.to_string());
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        let manifest = self.manifest();
        self.catalog.table.save(&dir.join(&manifest.table_file))?;
        for split in Split::ALL {
            for (s, entry) in self.split(split).iter().zip(&manifest.splits[&split]) {
                sample_container(s)?.write(&dir.join(&entry.file))?;
            }
        }
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = read_manifest(dir)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "dataset format version {} (expected {FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        let table = TextEmbeddingTable::load(&dir.join(&manifest.table_file))?;
        let mut splits: BTreeMap<Split, Vec<CountingSample>> = BTreeMap::new();
        let mut reduced = BTreeMap::new();
        for (split, entries) in &manifest.splits {
            let mut out = Vec::with_capacity(entries.len());
            for (i, e) in entries.iter().enumerate() {
                let s = read_sample(&dir.join(&e.file))?;
                if s.category_id != e.category_id || s.gt_count != e.gt_count {
                    return Err(Error::Data(format!(
                        "{} disagrees with the manifest",
                        e.file
                    )));
                }
                if let Some(r) = e.requested_count {
                    reduced.insert((*split, i), r);
                }
                out.push(s);
            }
            splits.insert(*split, out);
        }
        Ok(Self {
            config: manifest.config,
            seed: manifest.seed,
            catalog: Catalog {
                categories: manifest.categories,
                table,
            },
            train: splits.remove(&Split::Train).unwrap_or_default(),
            val: splits.remove(&Split::Val).unwrap_or_default(),
            test: splits.remove(&Split::Test).unwrap_or_default(),
            reduced,
        })
    }
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn sample_file(split: Split, index: usize) -> String {
    format!("{split}/{index:05}.sdvt")
}

pub fn sample_container(s: &CountingSample) -> Result<TensorContainer> {
    let mut c = TensorContainer::new();
    c.push("image", s.image.clone(), DType::F32)?;
    c.push("density", s.density.clone(), DType::F64)?;
    let flat: Vec<f64> = s.centers.iter().flat_map(|&(y, x)| [y, x]).collect();
    c.push(
        "centers",
        Array::new(vec![s.centers.len(), 2], flat)?,
        DType::F64,
    )?;
    c.push(
        "meta",
        Array::vector(vec![s.category_id as f64, s.gt_count as f64])?,
        DType::F64,
    )?;
    Ok(c)
}

pub fn read_sample(path: &Path) -> Result<CountingSample> {
    let c = TensorContainer::read(path)?;
    let meta = c.require("meta")?;
    if meta.len() != 2 {
        return Err(Error::Format(format!(
            "{}: malformed meta entry",
            path.display()
        )));
    }
    let centers = c.require("centers")?;
    Ok(CountingSample {
        image: c.require("image")?.clone(),
        category_id: meta.data()[0] as usize,
        gt_count: meta.data()[1] as usize,
        density: c.require("density")?.clone(),
        centers: centers.data().chunks(2).map(|p| (p[0], p[1])).collect(),
    })
}

/// Generates a dataset and writes it to `out_dir`.
pub fn build_dataset(cfg: &DatasetConfig, seed: u64, out_dir: &Path) -> Result<DatasetManifest> {
    Dataset::generate(cfg, seed)?.save(out_dir)
}

/// Path of a sample file named in a manifest.
pub fn sample_path(dir: &Path, entry: &ManifestEntry) -> PathBuf {
    dir.join(&entry.file)
}
