//! Trains the prompt set and the shared-prompt baseline on the small preset
//! and evaluates every mode on seen and unseen categories.

use sdvpt::config::ExperimentConfig;
use sdvpt::data::{Dataset, Split};
use sdvpt::eval::{evaluate, EvalMode};
use sdvpt::training::{pretrain, run_cspi, train_baseline, train_from, TrainState};

fn main() -> sdvpt::Result<()> {
    let cfg = ExperimentConfig::small();
    let ds = Dataset::generate(&cfg.data, 0)?;
    let table = ds.table();
    let (bb, _) = pretrain(&cfg.train, &ds)?;

    let shared = train_baseline(&cfg.train, &ds, Some(bb.clone()), None)?.state;
    let mut cspi = TrainState::new(cfg.train.clone(), bb, table, false)?;
    run_cspi(&mut cspi, &ds.train, table, cfg.train.e1)?;
    let full = train_from(cspi.clone(), &ds, None)?.state;

    let k = cfg.train.k;
    let runs = [
        (&full, EvalMode::Sdvpt),
        (&cspi, EvalMode::CspiOnly),
        (&shared, EvalMode::SharedVpt),
        (&full, EvalMode::NoPrompt),
    ];
    println!(
        "{:<11} {:>8} {:>8} {:>8}",
        "mode", "val MAE", "test MAE", "align"
    );
    for (state, mode) in runs {
        let val = evaluate(state, table, &ds.val, Split::Val, mode, k)?;
        let test = evaluate(state, table, &ds.test, Split::Test, mode, k)?;
        println!(
            "{:<11} {:>8.3} {:>8.3} {:>8.4}",
            mode.to_string(),
            val.metrics.mae,
            test.metrics.mae,
            test.mean_alignment
        );
    }
    Ok(())
}
