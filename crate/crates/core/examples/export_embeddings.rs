//! Dumps image embeddings (per sample, every split) and text embeddings (per
//! category) for the prompt-tuned model and the shared-prompt baseline, ready
//! for projection with an external tool.
//!
//! cargo run --release --example export_embeddings -- [out_dir]

use std::path::PathBuf;

use sdvpt::config::ExperimentConfig;
use sdvpt::data::Dataset;
use sdvpt::eval::{export_embeddings, EvalMode};
use sdvpt::training::{train, train_baseline};

fn main() -> sdvpt::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir);
    let cfg = ExperimentConfig::small();
    let ds = Dataset::generate(&cfg.data, 0)?;
    let out = train(&cfg.train, &ds, None)?;
    let base = train_baseline(&cfg.train, &ds, Some(out.state.backbone.clone()), None)?;

    let k = cfg.train.k;
    for (name, state, mode) in [
        ("sdvpt", &out.state, EvalMode::Sdvpt),
        ("shared_vpt", &base.state, EvalMode::SharedVpt),
    ] {
        let path = dir.join(format!("embeddings_{name}.csv"));
        let rows = export_embeddings(state, &ds, mode, k, &path)?;
        println!("{rows} rows -> {}", path.display());
    }
    Ok(())
}
