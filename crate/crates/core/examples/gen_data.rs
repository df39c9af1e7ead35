//! Generates a category catalog and a dataset, then prints how text-space
//! neighbours line up with glyph parameters.
//!
//! cargo run --release --example gen_data -- [out_dir]

use sdvpt::config::ExperimentConfig;
use sdvpt::data::{build_dataset, gen_catalog, Dataset};

fn main() -> sdvpt::Result<()> {
    let cfg = ExperimentConfig::small();
    let catalog = gen_catalog(&cfg.data.catalog, 0)?;
    let table = &catalog.table;
    for c in catalog.unseen() {
        let sel = table.topk_similar(table.embedding(c.id)?, 3, None)?;
        let near: Vec<String> = sel
            .indices
            .iter()
            .zip(&sel.weights)
            .map(|(&j, w)| format!("{} ({w:.3})", table.name(j)))
            .collect();
        println!(
            "{:<12} shape {:.2} size {:.2}  nearest seen: {}",
            c.name,
            c.shape(),
            c.size(),
            near.join(", ")
        );
    }

    let ds = Dataset::generate(&cfg.data, 0)?;
    let counts: Vec<usize> = ds.train.iter().map(|s| s.gt_count).collect();
    println!(
        "train {} / val {} / test {} samples, train counts {}..={}",
        ds.train.len(),
        ds.val.len(),
        ds.test.len(),
        counts.iter().min().unwrap(),
        counts.iter().max().unwrap()
    );
    let s = &ds.train[0];
    println!(
        "first sample: category {}, count {}, density sum {:.6}",
        table.name(s.category_id),
        s.gt_count,
        s.density.data().iter().sum::<f64>()
    );

    if let Some(dir) = std::env::args().nth(1) {
        let m = build_dataset(&cfg.data, 0, dir.as_ref())?;
        println!("wrote {} splits to {dir}", m.splits.len());
    }
    Ok(())
}
