//! Synthesizes prompts for unseen categories from the K most similar seen
//! categories, and shows the exclusion of a category's own slot used while
//! training.

use sdvpt::data::{gen_catalog, CatalogConfig};
use sdvpt::prompts::{BasePromptSet, FusionOptions};

fn main() -> sdvpt::Result<()> {
    let catalog = gen_catalog(&CatalogConfig::default(), 3)?;
    let table = &catalog.table;
    let prompts = BasePromptSet::init(table.num_seen(), 2, 4, 32, 3)?;
    let k = 4;

    for id in table.unseen_ids().into_iter().take(3) {
        let fused =
            prompts.synthesize_unseen(table, table.embedding(id)?, k, FusionOptions::default())?;
        let parts: Vec<String> = fused
            .provenance
            .indices
            .iter()
            .zip(&fused.provenance.weights)
            .map(|(&j, w)| format!("{}*{w:.3}", table.name(j)))
            .collect();
        let norm = fused
            .values
            .data()
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        println!(
            "{:<12} <- {}  |P| = {norm:.3}",
            table.name(id),
            parts.join(" + ")
        );
    }

    let seen = table.seen_ids()[0];
    let with_self = table.topk_similar(table.embedding(seen)?, k, None)?;
    let without = table.topk_for_category(seen, k)?;
    println!(
        "{}: inference picks {:?}, training picks {:?}",
        table.name(seen),
        with_self.indices,
        without.indices
    );

    let normalized = FusionOptions {
        normalize_weights: true,
        ..FusionOptions::default()
    };
    let sel = table.topk_similar(table.embedding(table.unseen_ids()[0])?, k, None)?;
    let raw = FusionOptions::default().coefficients(&sel)?;
    let unit = normalized.coefficients(&sel)?;
    println!(
        "raw weights sum to {:.3}, normalized ones to {:.3}",
        raw.iter().sum::<f64>(),
        unit.iter().sum::<f64>()
    );
    Ok(())
}
