//! Category-aware visual prompt tuning for text-queried object counting.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: arrays, a dynamic reverse-mode tape and a finite-difference checker
//! - [`text_space`]: the frozen category text-embedding table and top-K queries
//! - [`prompts`]: the base prompt set, per-category selection, similarity-weighted fusion
//! - [`encoder`]: a small vision transformer with per-layer prompt insertion
//! - [`counting_head`]: similarity map and density decoder
//! - [`losses`]: contrastive, count MSE and reconstruction terms
//! - [`training`]: backbone pretraining, category-specific and topology-guided stages
//! - [`data`]: synthetic benchmark generation and the tensor-container format
//! - [`eval`]: metrics, evaluation modes, sweeps, ablations and exports

pub mod config;
pub mod counting_head;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod losses;
pub mod numerics;
pub mod params;
pub mod prompts;
pub mod rng;
pub mod text_space;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{Array, Tape, Var};
