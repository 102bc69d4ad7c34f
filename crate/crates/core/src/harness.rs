//! Experiment orchestration: model-by-inference-mode comparison tables,
//! the (gamma, lambda) regularization sweep, and residual scatter export.
//! Runs fan out to a bounded worker pool; per-run seeds derive from the
//! master seed so aggregation is order-independent and outputs are
//! byte-identical across repeats.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::data::{
    load_ihdp_csv, make_split_plan, synth_generate, CausalDataset, SplitPlan, SynthConfig,
};
use crate::error::{Error, Result};
use crate::estimation::{
    aggregate_metrics, residual_correlation, AggregateMetrics, InferenceMode, RunMetrics,
};
use crate::losses::LossWeights;
use crate::model::ModelKind;
use crate::trainer::{train_run, TrainConfig};

pub const WORKERS_ENV: &str = "BALANCEREG_WORKERS";

#[derive(Clone, Debug)]
pub enum DataSource {
    Csv { path: PathBuf, has_header: bool },
    Synth(SynthConfig),
}

/// Everything needed to reproduce one experiment end to end.
#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub source: DataSource,
    pub master_seed: u64,
    pub models: Vec<ModelKind>,
    pub modes: Vec<InferenceMode>,
    pub gamma_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub out_dir: PathBuf,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// rho, PRG variant, bandwidth and temperature; gamma and lambda are
    /// taken from the grids or forced to 0 by the comparison.
    pub base_weights: LossWeights,
}

impl ExperimentSpec {
    pub fn new(source: DataSource, master_seed: u64, out_dir: PathBuf) -> Self {
        ExperimentSpec {
            source,
            master_seed,
            models: vec![ModelKind::TwoHead, ModelKind::SeparateHeads],
            modes: vec![InferenceMode::Inductive, InferenceMode::Transductive],
            gamma_grid: vec![0.0, 0.1, 1.0, 10.0, 100.0],
            lambda_grid: vec![0.0, 0.01, 0.1, 1.0, 10.0],
            out_dir,
            epochs: 50,
            batch_size: 64,
            lr: 1e-4,
            base_weights: LossWeights::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.models.is_empty() || self.modes.is_empty() {
            return Err(Error::contract("models and modes must be nonempty"));
        }
        if self.gamma_grid.is_empty() || self.lambda_grid.is_empty() {
            return Err(Error::contract("gamma and lambda grids must be nonempty"));
        }
        Ok(())
    }
}

pub fn load_source(source: &DataSource) -> Result<CausalDataset> {
    match source {
        DataSource::Csv { path, has_header } => load_ihdp_csv(path, *has_header),
        DataSource::Synth(config) => synth_generate(config),
    }
}

/// Worker cap from BALANCEREG_WORKERS, defaulting to available parallelism.
pub fn worker_cap() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&w| w > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

/// Index-ordered parallel map over a bounded pool of scoped threads.
fn parallel_map<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = workers.max(1).min(n.max(1));
    let next = AtomicUsize::new(0);
    let results: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= n {
                    break;
                }
                let out = f(idx);
                *results[idx].lock().unwrap() = Some(out);
            });
        }
    });
    results
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("worker produced no result"))
        .collect()
}

struct RunPredictions {
    subset: usize,
    init: usize,
    pred0: Vec<f64>,
    pred1: Vec<f64>,
}

/// Execute the full split-and-repeat plan for one model kind: each run
/// trains on its subset with its derived init seed, then predicts both
/// heads on the fixed test set.
fn execute_runs(
    dataset: &CausalDataset,
    plan: &SplitPlan,
    spec: &ExperimentSpec,
    kind: ModelKind,
    gamma: f64,
    lambda: f64,
) -> Result<Vec<RunPredictions>> {
    let runs: Vec<(usize, usize)> = plan.runs().collect();
    let x_test = dataset.covariates().select_rows(&plan.test_indices);
    let outcomes = parallel_map(runs.len(), worker_cap(), |idx| -> Result<RunPredictions> {
        let (subset, init) = runs[idx];
        let view = dataset.view(&plan.train_subsets[subset]);
        let config = TrainConfig {
            epochs: spec.epochs,
            batch_size: spec.batch_size,
            lr: spec.lr,
            weights: LossWeights {
                gamma,
                lambda,
                ..spec.base_weights
            },
            model_kind: kind,
            seed: plan.init_seeds[subset][init],
        };
        let (model, _) = train_run(&view, &config)?;
        let (pred0, pred1) = model.predict_heads(&x_test)?;
        Ok(RunPredictions {
            subset,
            init,
            pred0,
            pred1,
        })
    });
    outcomes.into_iter().collect()
}

fn run_metrics_for_mode(
    dataset: &CausalDataset,
    plan: &SplitPlan,
    runs: &[RunPredictions],
    mode: InferenceMode,
) -> Vec<RunMetrics> {
    runs.iter()
        .map(|run| {
            let im_hat: Vec<f64> = match mode {
                InferenceMode::Inductive => run
                    .pred1
                    .iter()
                    .zip(&run.pred0)
                    .map(|(p1, p0)| p1 - p0)
                    .collect(),
                InferenceMode::Transductive => plan
                    .test_indices
                    .iter()
                    .enumerate()
                    .map(|(j, &unit)| {
                        if dataset.treatment()[unit] == 1 {
                            dataset.factual()[unit] - run.pred0[j]
                        } else {
                            run.pred1[j] - dataset.factual()[unit]
                        }
                    })
                    .collect(),
            };
            RunMetrics {
                run_id: (run.subset, run.init),
                im_hat,
                mode,
            }
        })
        .collect()
}

pub fn model_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::TwoHead => "two_head",
        ModelKind::SeparateHeads => "separate_heads",
    }
}

#[derive(Clone, Debug)]
pub struct ComparisonRow {
    pub model: ModelKind,
    pub mode: InferenceMode,
    pub metrics: AggregateMetrics,
}

/// Model-by-inference-mode comparison: every (model, mode) pair over the 20-run plan,
/// without regularization. Writes comparison.csv plus raw per-run estimate
/// CSVs for independent re-analysis.
pub fn run_comparison(spec: &ExperimentSpec) -> Result<Vec<ComparisonRow>> {
    spec.validate()?;
    let dataset = load_source(&spec.source)?;
    let plan = make_split_plan(dataset.len(), spec.master_seed)?;
    let truth = dataset.true_effects(&plan.test_indices);
    std::fs::create_dir_all(&spec.out_dir)
        .map_err(|e| Error::io(spec.out_dir.display().to_string(), e))?;

    let mut rows = Vec::new();
    for &kind in &spec.models {
        let runs = execute_runs(&dataset, &plan, spec, kind, 0.0, 0.0)?;
        for &mode in &spec.modes {
            let metrics_runs = run_metrics_for_mode(&dataset, &plan, &runs, mode);
            write_raw_estimates(
                &spec.out_dir.join(format!(
                    "estimates_{}_{}.csv",
                    model_name(kind),
                    mode.as_str()
                )),
                &plan,
                &metrics_runs,
                &truth,
            )?;
            let metrics = aggregate_metrics(&truth, &metrics_runs)?;
            rows.push(ComparisonRow {
                model: kind,
                mode,
                metrics,
            });
        }
    }
    write_comparison_csv(&spec.out_dir.join("comparison.csv"), &rows)?;
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub gamma: f64,
    pub lambda: f64,
    pub metrics: AggregateMetrics,
}

/// (gamma, lambda) grid sweep for the two-head model, inductive inference.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let dataset = load_source(&spec.source)?;
    let plan = make_split_plan(dataset.len(), spec.master_seed)?;
    let truth = dataset.true_effects(&plan.test_indices);
    std::fs::create_dir_all(&spec.out_dir)
        .map_err(|e| Error::io(spec.out_dir.display().to_string(), e))?;

    let mut rows = Vec::new();
    for &gamma in &spec.gamma_grid {
        for &lambda in &spec.lambda_grid {
            let runs = execute_runs(&dataset, &plan, spec, ModelKind::TwoHead, gamma, lambda)?;
            let metrics_runs =
                run_metrics_for_mode(&dataset, &plan, &runs, InferenceMode::Inductive);
            let metrics = aggregate_metrics(&truth, &metrics_runs)?;
            rows.push(SweepRow {
                gamma,
                lambda,
                metrics,
            });
        }
    }
    write_sweep_csv(&spec.out_dir.join("sweep.csv"), &rows)?;
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct ScatterResult {
    pub model: ModelKind,
    pub r: f64,
    /// (treated residual Y1 - f(x,1), control residual Y0 - f(x,0)) per
    /// test unit.
    pub pairs: Vec<(f64, f64)>,
}

/// Residual scatter for both model kinds on the fixed test set, trained on
/// the plan's first (subset, init) run.
pub fn export_scatter(spec: &ExperimentSpec) -> Result<Vec<ScatterResult>> {
    spec.validate()?;
    let dataset = load_source(&spec.source)?;
    let plan = make_split_plan(dataset.len(), spec.master_seed)?;
    std::fs::create_dir_all(&spec.out_dir)
        .map_err(|e| Error::io(spec.out_dir.display().to_string(), e))?;
    let x_test = dataset.covariates().select_rows(&plan.test_indices);
    let y1: Vec<f64> = plan.test_indices.iter().map(|&i| dataset.potential_y1(i)).collect();
    let y0: Vec<f64> = plan.test_indices.iter().map(|&i| dataset.potential_y0(i)).collect();

    let mut results = Vec::new();
    for &kind in &spec.models {
        let view = dataset.view(&plan.train_subsets[0]);
        let config = TrainConfig {
            epochs: spec.epochs,
            batch_size: spec.batch_size,
            lr: spec.lr,
            weights: LossWeights {
                gamma: 0.0,
                lambda: 0.0,
                ..spec.base_weights
            },
            model_kind: kind,
            seed: plan.init_seeds[0][0],
        };
        let (model, _) = train_run(&view, &config)?;
        let (r, pairs) = residual_correlation(&model, &x_test, &y1, &y0)?;
        results.push(ScatterResult {
            model: kind,
            r,
            pairs,
        });
    }
    write_scatter_csv(&spec.out_dir.join("scatter.csv"), &plan, &results)?;
    write_scatter_r_csv(&spec.out_dir.join("scatter_r.csv"), &results)?;
    Ok(results)
}

// ---- CSV output --------------------------------------------------------

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_comparison_csv(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    let mut out = String::from("model,mode,bias_sq,variance,mse_mean,mse_std\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            model_name(row.model),
            row.mode.as_str(),
            row.metrics.bias_sq,
            row.metrics.variance,
            row.metrics.mse_mean,
            row.metrics.mse_std
        ));
    }
    write_file(path, &out)
}

fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut out = String::from("gamma,lambda,bias_sq,variance,mse_mean,mse_std\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.gamma,
            row.lambda,
            row.metrics.bias_sq,
            row.metrics.variance,
            row.metrics.mse_mean,
            row.metrics.mse_std
        ));
    }
    write_file(path, &out)
}

fn write_raw_estimates(
    path: &Path,
    plan: &SplitPlan,
    runs: &[RunMetrics],
    truth: &[f64],
) -> Result<()> {
    let mut out = String::from("run_id,unit_id,im_hat,truth\n");
    for run in runs {
        for (j, &unit) in plan.test_indices.iter().enumerate() {
            out.push_str(&format!(
                "{}-{},{},{},{}\n",
                run.run_id.0, run.run_id.1, unit, run.im_hat[j], truth[j]
            ));
        }
    }
    write_file(path, &out)
}

fn write_scatter_csv(path: &Path, plan: &SplitPlan, results: &[ScatterResult]) -> Result<()> {
    let mut out = String::from("model,unit_id,treated_residual,control_residual\n");
    for result in results {
        for (j, &unit) in plan.test_indices.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                model_name(result.model),
                unit,
                result.pairs[j].0,
                result.pairs[j].1
            ));
        }
    }
    write_file(path, &out)
}

fn write_scatter_r_csv(path: &Path, results: &[ScatterResult]) -> Result<()> {
    let mut out = String::from("model,pearson_r\n");
    for result in results {
        out.push_str(&format!("{},{}\n", model_name(result.model), result.r));
    }
    write_file(path, &out)
}
