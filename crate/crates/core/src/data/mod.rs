//! Synthetic open-world counting benchmark and the tensor-container format.

pub mod catalog;
pub mod container;
pub mod dataset;
pub mod render;

pub use catalog::{gen_catalog, Catalog, CatalogConfig, SyntheticCategory};
pub use container::{DType, TensorContainer};
pub use dataset::{build_dataset, Dataset, DatasetConfig, DatasetManifest, Split};
pub use render::{render_sample, render_scene, CountingSample, RenderConfig};
