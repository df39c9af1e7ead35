use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use sdvpt::config::ExperimentConfig;
use sdvpt::data::{build_dataset, Dataset, Split};
use sdvpt::eval::{
    ablate, bench_overhead, evaluate, export_embeddings, sweep_topk, write_sweep_csv, EvalMode,
};
use sdvpt::training::{pretrain, train, train_baseline, train_from, TrainState};
use sdvpt::{Error, Result};

#[derive(Parser)]
#[command(
    name = "sdvpt",
    version,
    about = "Category-aware prompt tuning for text-queried counting on a synthetic benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DataArg {
    /// Dataset directory from `gen-data`; generated in memory from the config when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain and freeze the backbone.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prompt training (CSPI then TGPR), optionally resuming from a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        out: PathBuf,
        /// Pretrained or CSPI checkpoint to continue from.
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Shared single-prompt baseline.
    TrainBaseline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint whose frozen backbone is reused.
        #[arg(long)]
        backbone: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and write a JSON report.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        mode: Option<EvalMode>,
        #[arg(long)]
        split: Option<Split>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// MAE/RMSE over a list of K values, as CSV.
    SweepTopk {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        split: Option<Split>,
        /// Comma-separated K values.
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate every ablation variant on one backbone.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        backbone: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump image and text embeddings as CSV.
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        mode: Option<EvalMode>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time inference with and without per-image prompt synthesis.
    Bench {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        n_images: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    Ok(cfg.with_seed(common.seed))
}

fn load_data(cfg: &ExperimentConfig, data: &DataArg, seed: u64) -> Result<Dataset> {
    match &data.data {
        Some(d) => Dataset::load(d),
        None => Dataset::generate(&cfg.data, seed),
    }
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, json).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::Io {
        path: p.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common, out } => {
            let cfg = load_config(&common)?;
            let m = build_dataset(&cfg.data, common.seed, &out)?;
            for (split, entries) in &m.splits {
                println!("{split}: {} samples", entries.len());
            }
        }
        Command::Pretrain { common, data, out } => {
            let cfg = load_config(&common)?;
            let ds = load_data(&cfg, &data, common.seed)?;
            let (bb, report) = pretrain(&cfg.train, &ds)?;
            let state = TrainState::new(cfg.train.clone(), bb, ds.table(), false)?;
            state.save(&out)?;
            write_json(&report, Some(&out.join("pretrain_report.json")))?;
            println!("backbone {}", report.backbone_hash);
        }
        Command::Train {
            common,
            data,
            out,
            from,
        } => {
            let cfg = load_config(&common)?;
            let ds = load_data(&cfg, &data, common.seed)?;
            create_dir(&out)?;
            let outcome = match from {
                Some(dir) => train_from(TrainState::load(&dir)?, &ds, Some(&out))?,
                None => train(&cfg.train, &ds, Some(&out))?,
            };
            println!(
                "{} steps, final checkpoint {}",
                outcome.state.step,
                outcome.state.hash_hex()?
            );
        }
        Command::TrainBaseline {
            common,
            data,
            out,
            backbone,
        } => {
            let cfg = load_config(&common)?;
            let ds = load_data(&cfg, &data, common.seed)?;
            let bb = backbone
                .map(|d| TrainState::load(&d).map(|s| s.backbone))
                .transpose()?;
            create_dir(&out)?;
            let outcome = train_baseline(&cfg.train, &ds, bb, Some(&out))?;
            println!(
                "{} steps, final checkpoint {}",
                outcome.state.step,
                outcome.state.hash_hex()?
            );
        }
        Command::Eval {
            common,
            data,
            checkpoint,
            mode,
            split,
            k,
            out,
        } => {
            let cfg = load_config(&common)?;
            let ds = load_data(&cfg, &data, common.seed)?;
            let state = TrainState::load(&checkpoint)?;
            let split = split.unwrap_or(cfg.eval.split);
            let report = evaluate(
                &state,
                ds.table(),
                ds.split(split),
                split,
                mode.unwrap_or(cfg.eval.mode),
                k.unwrap_or(cfg.eval_k()),
            )?;
            let m = report.metrics;
            eprintln!(
                "MAE {:.4}  RMSE {:.4}  NAE {:.4}  SRE {:.4}",
                m.mae, m.rmse, m.nae, m.sre
            );
            write_json(&report, out.as_deref())?;
        }
        Command::SweepTopk {
            common,
            data,
            checkpoint,
            split,
            ks,
            out,
        } => {
            let cfg = load_config(&common)?;
            let ds = load_data(&cfg, &data, common.seed)?;
            let state = TrainState::load(&checkpoint)?;
            let ks = ks.unwrap_or_else(|| cfg.eval.k_values.clone());
            let rows = sweep_topk(&state, &ds, split.unwrap_or(cfg.eval.split), &ks)?;
            write_sweep_csv(&rows, &out)?;
            for r in &rows {
                println!("K={:<3} MAE {:.4}  RMSE {:.4}", r.k, r.mae, r.rmse);
            }
        }
        Command::Ablate {
            common,
            data,
            backbone,
            out,
        } => {
            let cfg = load_config(&common)?;
            let ds = load_data(&cfg, &data, common.seed)?;
            let bb = backbone
                .map(|d| TrainState::load(&d).map(|s| s.backbone))
                .transpose()?;
            let report = ablate(&cfg.train, &ds, bb, cfg.eval.split, &cfg.eval.k_values)?;
            for r in &report.rows {
                println!(
                    "{:<16} MAE {:.4}  RMSE {:.4}  align {:.4}",
                    r.name, r.report.metrics.mae, r.report.metrics.rmse, r.report.mean_alignment
                );
            }
            for r in &report.sweep {
                println!("K={:<3} MAE {:.4}  RMSE {:.4}", r.k, r.mae, r.rmse);
            }
            report.write(&out)?;
        }
        Command::ExportEmbeddings {
            common,
            data,
            checkpoint,
            mode,
            out,
        } => {
            let cfg = load_config(&common)?;
            let ds = load_data(&cfg, &data, common.seed)?;
            let state = TrainState::load(&checkpoint)?;
            let n = export_embeddings(
                &state,
                &ds,
                mode.unwrap_or(cfg.eval.mode),
                cfg.eval_k(),
                &out,
            )?;
            println!("{n} rows");
        }
        Command::Bench {
            common,
            data,
            checkpoint,
            n_images,
            k,
            out,
        } => {
            let cfg = load_config(&common)?;
            let ds = load_data(&cfg, &data, common.seed)?;
            let state = TrainState::load(&checkpoint)?;
            let report = bench_overhead(
                &state,
                ds.table(),
                ds.split(Split::Test),
                n_images.unwrap_or(cfg.eval.bench_images),
                k.unwrap_or(cfg.eval_k()),
            )?;
            write_json(&report, out.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
