//! Unseen-category MAE as a function of K, written as CSV.
//!
//! cargo run --release --example sweep_topk -- [out.csv]

use sdvpt::config::ExperimentConfig;
use sdvpt::data::{Dataset, Split};
use sdvpt::eval::{sweep_topk, write_sweep_csv};
use sdvpt::training::train;

fn main() -> sdvpt::Result<()> {
    let cfg = ExperimentConfig::small();
    let ds = Dataset::generate(&cfg.data, 0)?;
    let state = train(&cfg.train, &ds, None)?.state;
    let ks: Vec<usize> = (1..=ds.table().num_seen()).collect();
    let rows = sweep_topk(&state, &ds, Split::Test, &ks)?;
    for r in &rows {
        println!("K={:<2} MAE {:.3}  RMSE {:.3}", r.k, r.mae, r.rmse);
    }
    if let Some(path) = std::env::args().nth(1) {
        write_sweep_csv(&rows, path.as_ref())?;
        println!("wrote {path}");
    }
    Ok(())
}
