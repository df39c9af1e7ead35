//! Stops after the first stage, reloads the checkpoint from disk and finishes
//! training; the result matches an uninterrupted run bit for bit.

use sdvpt::config::ExperimentConfig;
use sdvpt::data::Dataset;
use sdvpt::training::{train, train_from, TrainState};

fn main() -> sdvpt::Result<()> {
    let cfg = ExperimentConfig::small();
    let ds = Dataset::generate(&cfg.data, 0)?;
    let root = std::env::temp_dir().join("sdvpt-resume");
    let (a, b) = (root.join("full"), root.join("resumed"));
    for d in [&a, &b] {
        std::fs::create_dir_all(d).expect("output directory");
    }

    let full = train(&cfg.train, &ds, Some(&a))?;
    let cspi = TrainState::load(&a.join("cspi"))?;
    println!(
        "reloaded {} checkpoint at step {}",
        cspi.stage.name(),
        cspi.step
    );
    let resumed = train_from(cspi, &ds, Some(&b))?;

    let (h1, h2) = (full.state.hash_hex()?, resumed.state.hash_hex()?);
    println!("uninterrupted {}\nresumed       {}", &h1[..32], &h2[..32]);
    println!("identical: {}", h1 == h2);
    Ok(())
}
