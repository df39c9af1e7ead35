//! Per-image inference time with the synthesized prompt cached versus
//! rebuilt for every image, plus the parameter budget of each component.

use sdvpt::config::ExperimentConfig;
use sdvpt::data::Dataset;
use sdvpt::eval::bench_overhead;
use sdvpt::training::train;

fn main() -> sdvpt::Result<()> {
    let cfg = ExperimentConfig::small();
    let ds = Dataset::generate(&cfg.data, 0)?;
    let state = train(&cfg.train, &ds, None)?.state;
    let r = bench_overhead(&state, ds.table(), &ds.test, 64, cfg.train.k)?;
    println!(
        "cached {:.3} ms, synthesized {:.3} ms per image ({:+.2}%)",
        r.fixed_median_s * 1e3,
        r.synth_median_s * 1e3,
        r.relative_overhead * 100.0
    );
    println!(
        "fusion: {} multiplications, {} additions; identical predictions: {}",
        r.fusion_multiplications, r.fusion_additions, r.predictions_identical
    );
    println!(
        "parameters: backbone {}, prompts {}, head {}; text table {} values (frozen)",
        r.backbone_params, r.prompt_params, r.head_params, r.text_table_values
    );
    Ok(())
}
