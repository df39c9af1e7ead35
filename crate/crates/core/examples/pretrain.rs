//! Contrastive pretraining of the backbone on the small preset, printing the
//! loss every 50 steps and how well image embeddings match their category.

use sdvpt::config::ExperimentConfig;
use sdvpt::data::Dataset;
use sdvpt::numerics::cosine_similarity;
use sdvpt::training::pretrain;

fn main() -> sdvpt::Result<()> {
    let cfg = ExperimentConfig::small();
    let ds = Dataset::generate(&cfg.data, 0)?;
    let (bb, report) = pretrain(&cfg.train, &ds)?;
    for (i, chunk) in report.losses.chunks(50).enumerate() {
        let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
        println!(
            "steps {:>4}-{:<4} loss {mean:.4}",
            i * 50,
            i * 50 + chunk.len() - 1
        );
    }
    println!(
        "frozen: {}, hash {}",
        bb.is_frozen(),
        &report.backbone_hash[..16]
    );

    let table = ds.table();
    let mut hits = 0;
    for s in &ds.val {
        let e = bb.encode_image(&s.image, None)?.cls_embedding;
        let best = (0..table.len())
            .filter(|&c| table.is_seen(c))
            .max_by(|&a, &b| {
                let sa = cosine_similarity(e.data(), table.embedding(a).unwrap()).unwrap();
                let sb = cosine_similarity(e.data(), table.embedding(b).unwrap()).unwrap();
                sa.total_cmp(&sb)
            })
            .unwrap();
        hits += usize::from(best == s.category_id);
    }
    println!(
        "val images closest to their own category text: {hits}/{}",
        ds.val.len()
    );
    Ok(())
}
