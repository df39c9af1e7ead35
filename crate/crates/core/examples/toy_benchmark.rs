//! Full comparison on the toy benchmark: every ablation variant plus a K
//! sweep, for each seed given on the command line.
//!
//! cargo run --release --example toy_benchmark -- [config.json] [seeds...]

use std::time::Instant;

use sdvpt::config::ExperimentConfig;
use sdvpt::data::Dataset;
use sdvpt::eval::ablate;

fn main() -> sdvpt::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (cfg, seeds) = match args.first() {
        Some(p) if p.ends_with(".json") => (
            ExperimentConfig::load(p.as_ref())?,
            args[1..]
                .iter()
                .map(|s| s.parse().expect("seed"))
                .collect::<Vec<u64>>(),
        ),
        _ => (
            ExperimentConfig::default(),
            args.iter().map(|s| s.parse().expect("seed")).collect(),
        ),
    };
    let seeds = if seeds.is_empty() { vec![0] } else { seeds };
    for seed in seeds {
        let t0 = Instant::now();
        let cfg = cfg.clone().with_seed(seed);
        let ds = Dataset::generate(&cfg.data, seed)?;
        let r = ablate(&cfg.train, &ds, None, cfg.eval.split, &cfg.eval.k_values)?;
        println!("seed {seed} ({:.0}s)", t0.elapsed().as_secs_f64());
        for row in &r.rows {
            println!(
                "  {:<16} MAE {:7.4}  RMSE {:7.4}  align {:.4}",
                row.name,
                row.report.metrics.mae,
                row.report.metrics.rmse,
                row.report.mean_alignment
            );
        }
        let sweep: Vec<String> = r
            .sweep
            .iter()
            .map(|s| format!("K{}={:.3}", s.k, s.mae))
            .collect();
        println!("  sweep {}", sweep.join(" "));
    }
    Ok(())
}
