use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{evaluate, EvalMode, Predictor};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::training::TrainState;

/// Leading columns of the embedding dump; `e0, e1, ...` follow.
pub const EXPORT_HEADER_PREFIX: [&str; 6] = [
    "kind",
    "split",
    "index",
    "category_id",
    "category_name",
    "seen",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub mae: f64,
    pub rmse: f64,
}

/// SDVPT evaluation at each `k`. Every K is checked before any evaluation runs.
pub fn sweep_topk(
    state: &TrainState,
    dataset: &Dataset,
    split: Split,
    k_values: &[usize],
) -> Result<Vec<SweepRow>> {
    let table = dataset.table();
    if k_values.is_empty() {
        return Err(Error::Parameter("empty K list".into()));
    }
    if let Some(k) = k_values.iter().find(|&&k| k == 0 || k > table.num_seen()) {
        return Err(Error::Parameter(format!(
            "K = {k} outside 1..={} seen categories",
            table.num_seen()
        )));
    }
    k_values
        .iter()
        .map(|&k| {
            let r = evaluate(
                state,
                table,
                dataset.split(split),
                split,
                EvalMode::Sdvpt,
                k,
            )?;
            Ok(SweepRow {
                k,
                mae: r.metrics.mae,
                rmse: r.metrics.rmse,
            })
        })
        .collect()
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Format(format!("{}: {e}", path.display()))
    }
}

/// Writes one row per sample of every split (its image embedding under
/// `mode`) and one row per category (its text embedding). Floats are written
/// in shortest round-trip form. Returns the number of rows.
pub fn export_embeddings(
    state: &TrainState,
    dataset: &Dataset,
    mode: EvalMode,
    k: usize,
    path: &Path,
) -> Result<usize> {
    let table = dataset.table();
    let mut pred = Predictor::new(state, table, mode, k)?;
    let dim = state.backbone.config().joint_dim;
    if table.dim() != dim {
        return Err(Error::Dimension(format!(
            "image embeddings of width {dim} against text width {}",
            table.dim()
        )));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header: Vec<String> = EXPORT_HEADER_PREFIX.iter().map(|s| s.to_string()).collect();
    header.extend((0..dim).map(|j| format!("e{j}")));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    let mut rows = 0;
    for split in [Split::Train, Split::Val, Split::Test] {
        for (i, s) in dataset.split(split).iter().enumerate() {
            let e = pred.predict(s)?.embedding;
            let mut rec = vec![
                "image".to_string(),
                split.to_string(),
                i.to_string(),
                s.category_id.to_string(),
                table.name(s.category_id).to_string(),
                table.is_seen(s.category_id).to_string(),
            ];
            rec.extend(e.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| csv_error(path, e))?;
            rows += 1;
        }
    }
    for id in 0..table.len() {
        let mut rec = vec![
            "text".to_string(),
            String::new(),
            id.to_string(),
            id.to_string(),
            table.name(id).to_string(),
            table.is_seen(id).to_string(),
        ];
        rec.extend(table.embedding(id)?.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
        rows += 1;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(rows)
}
