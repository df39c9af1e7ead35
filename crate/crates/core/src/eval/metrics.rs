use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub nae: f64,
    pub sre: f64,
}

fn check_lengths(preds: &[f64], gts: &[f64]) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::Parameter(format!(
            "{} predictions for {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Parameter("metrics over no samples".into()));
    }
    Ok(())
}

/// `(MAE, RMSE)`; defined for any ground truth.
pub fn absolute_errors(preds: &[f64], gts: &[f64]) -> Result<(f64, f64)> {
    check_lengths(preds, gts)?;
    let n = preds.len() as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for (p, g) in preds.iter().zip(gts) {
        let e = p - g;
        abs += e.abs();
        sq += e * e;
    }
    Ok((abs / n, (sq / n).sqrt()))
}

/// MAE, RMSE and their ground-truth-normalized forms. Every ground truth
/// must be positive.
pub fn metrics(preds: &[f64], gts: &[f64]) -> Result<Metrics> {
    check_lengths(preds, gts)?;
    if let Some(i) = gts.iter().position(|g| !(*g > 0.0)) {
        return Err(Error::Domain(format!(
            "sample {i} has ground-truth count {}; normalized errors need a positive count",
            gts[i]
        )));
    }
    let (mae, rmse) = absolute_errors(preds, gts)?;
    let n = preds.len() as f64;
    let (mut na, mut sr) = (0.0, 0.0);
    for (p, g) in preds.iter().zip(gts) {
        let e = p - g;
        na += e.abs() / g;
        sr += e * e / g;
    }
    Ok(Metrics {
        mae,
        rmse,
        nae: na / n,
        sre: (sr / n).sqrt(),
    })
}
