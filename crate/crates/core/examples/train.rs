//! Category-specific prompt training followed by topology-guided refinement,
//! writing checkpoints and the step log to a directory.
//!
//! cargo run --release --example train -- [out_dir]

use std::collections::BTreeMap;

use sdvpt::config::ExperimentConfig;
use sdvpt::data::Dataset;
use sdvpt::training::train;

fn main() -> sdvpt::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| {
        std::env::temp_dir()
            .join("sdvpt-train")
            .display()
            .to_string()
    });
    let cfg = ExperimentConfig::small();
    let ds = Dataset::generate(&cfg.data, 0)?;
    std::fs::create_dir_all(&out).expect("output directory");
    let outcome = train(&cfg.train, &ds, Some(out.as_ref()))?;

    let mut epochs: BTreeMap<usize, (String, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in &outcome.log {
        let e = epochs
            .entry(r.epoch)
            .or_insert_with(|| (r.stage.name().to_string(), vec![], vec![]));
        e.1.push(r.l_mse);
        e.2.push(r.l_recon.unwrap_or(0.0));
    }
    for (epoch, (stage, mse, recon)) in &epochs {
        let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        println!(
            "epoch {epoch:>2} {stage:<5} mse {:>8.3}  recon {:.4}",
            m(mse),
            m(recon)
        );
    }
    println!(
        "{} prompt slots, checkpoints under {out}, final hash {}",
        outcome.state.prompts.num_slots(),
        &outcome.state.hash_hex()?[..16]
    );
    Ok(())
}
