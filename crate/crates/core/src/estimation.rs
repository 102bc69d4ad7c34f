//! Impact estimators (inductive, transductive) and the bias^2 / variance /
//! MSE / PEHE decomposition over repeated runs on a fixed test set.

use crate::array::Array;
use crate::error::{Error, Result};
use crate::model::Model;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InferenceMode {
    Inductive,
    Transductive,
}

impl InferenceMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            InferenceMode::Inductive => "inductive",
            InferenceMode::Transductive => "transductive",
        }
    }
}

/// Per-run impact estimates on the fixed test set.
#[derive(Clone, Debug)]
pub struct RunMetrics {
    /// (train subset index, init seed index)
    pub run_id: (usize, usize),
    pub im_hat: Vec<f64>,
    pub mode: InferenceMode,
}

/// Cross-run summary: per-unit squared bias and variance averaged over
/// units, per-run MSE summarized over runs.
#[derive(Clone, Debug)]
pub struct AggregateMetrics {
    pub bias_sq: f64,
    pub variance: f64,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub pehe_per_run: Vec<f64>,
}

/// f(x, 1) - f(x, 0) for every row of `x`.
pub fn impacts_inductive(model: &Model, x: &Array) -> Result<Vec<f64>> {
    let (y0, y1) = model.predict_heads(x)?;
    Ok(y1.iter().zip(&y0).map(|(a, b)| a - b).collect())
}

/// Factual outcome minus the predicted counterfactual:
/// t=1 -> y - f(x, 0); t=0 -> f(x, 1) - y.
pub fn impacts_transductive(model: &Model, x: &Array, t: &[u8], y: &[f64]) -> Result<Vec<f64>> {
    if t.len() != x.rows() || y.len() != x.rows() {
        return Err(Error::contract(format!(
            "impacts_transductive: {} rows vs {} flags / {} outcomes",
            x.rows(),
            t.len(),
            y.len()
        )));
    }
    if let Some(bad) = t.iter().find(|&&f| f > 1) {
        return Err(Error::contract(format!("treatment flag must be 0 or 1, got {bad}")));
    }
    let (pred0, pred1) = model.predict_heads(x)?;
    Ok((0..x.rows())
        .map(|i| {
            if t[i] == 1 {
                y[i] - pred0[i]
            } else {
                pred1[i] - y[i]
            }
        })
        .collect())
}

/// Decompose estimation error over runs with a fixed test set and truth:
/// per unit i, b_i = mean_r(im) - truth_i and v_i = population variance
/// over runs; bias_sq = mean_i b_i^2, variance = mean_i v_i. Per-run
/// MSE_r = mean_i (im - truth)^2, pehe_r = sqrt(MSE_r). The population
/// (divide-by-R) variance makes mse_mean = bias_sq + variance exact.
pub fn aggregate_metrics(truth: &[f64], runs: &[RunMetrics]) -> Result<AggregateMetrics> {
    if runs.len() < 2 {
        return Err(Error::contract(format!(
            "aggregate_metrics needs >= 2 runs, got {}",
            runs.len()
        )));
    }
    let n_units = truth.len();
    for run in runs {
        if run.im_hat.len() != n_units {
            return Err(Error::contract(format!(
                "run {:?} covers {} units, truth covers {}",
                run.run_id,
                run.im_hat.len(),
                n_units
            )));
        }
    }
    if n_units == 0 {
        return Err(Error::contract("aggregate_metrics: empty test set"));
    }
    let r = runs.len() as f64;
    let mut bias_sq = 0.0;
    let mut variance = 0.0;
    for i in 0..n_units {
        let mean_i: f64 = runs.iter().map(|run| run.im_hat[i]).sum::<f64>() / r;
        let b = mean_i - truth[i];
        bias_sq += b * b;
        variance += runs
            .iter()
            .map(|run| {
                let d = run.im_hat[i] - mean_i;
                d * d
            })
            .sum::<f64>()
            / r;
    }
    bias_sq /= n_units as f64;
    variance /= n_units as f64;

    let mse_per_run: Vec<f64> = runs
        .iter()
        .map(|run| {
            run.im_hat
                .iter()
                .zip(truth)
                .map(|(im, d)| (im - d) * (im - d))
                .sum::<f64>()
                / n_units as f64
        })
        .collect();
    let mse_mean = mse_per_run.iter().sum::<f64>() / r;
    let mse_std = (mse_per_run
        .iter()
        .map(|m| (m - mse_mean) * (m - mse_mean))
        .sum::<f64>()
        / (r - 1.0))
        .sqrt();
    Ok(AggregateMetrics {
        bias_sq,
        variance,
        mse_mean,
        mse_std,
        pehe_per_run: mse_per_run.iter().map(|m| m.sqrt()).collect(),
    })
}

/// Pearson correlation; errors when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::contract(format!(
            "pearson: need two equal-length samples with >= 2 points, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..a.len() {
        let (da, db) = (a[i] - ma, b[i] - mb);
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// Residual pairs (Y1 - f(x,1), Y0 - f(x,0)) per test unit plus their
/// Pearson correlation.
pub fn residual_correlation(
    model: &Model,
    x: &Array,
    y1: &[f64],
    y0: &[f64],
) -> Result<(f64, Vec<(f64, f64)>)> {
    let (pred0, pred1) = model.predict_heads(x)?;
    let pairs: Vec<(f64, f64)> = (0..x.rows())
        .map(|i| (y1[i] - pred1[i], y0[i] - pred0[i]))
        .collect();
    let treated_res: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let control_res: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let r = pearson(&treated_res, &control_res)?;
    Ok((r, pairs))
}
