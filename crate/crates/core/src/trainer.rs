//! Single-run training loop binding model, losses, optimizer and data into
//! a reproducible fit.

use std::path::Path;

use crate::data::{minibatch_indices, TrainView};
use crate::diffcore::Tape;
use crate::error::{Error, Result};
use crate::losses::{total_objective, Batch, LossWeights};
use crate::model::{Model, ModelKind};
use crate::optim::AdamState;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weights: LossWeights,
    pub model_kind: ModelKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 64,
            lr: 1e-4,
            weights: LossWeights::default(),
            model_kind: ModelKind::TwoHead,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::contract("epochs must be positive"));
        }
        if self.lr <= 0.0 {
            return Err(Error::contract("learning rate must be positive"));
        }
        self.weights.validate()?;
        if self.model_kind == ModelKind::SeparateHeads
            && (self.weights.gamma > 0.0 || self.weights.lambda > 0.0)
        {
            return Err(Error::contract(
                "separate_heads requires gamma = lambda = 0",
            ));
        }
        Ok(())
    }
}

/// Per-epoch mean loss components over the epoch's minibatches.
#[derive(Clone, Debug)]
pub struct EpochTrace {
    pub epoch: usize,
    pub mean_objective: f64,
    pub mean_fit: f64,
    pub mean_mmd: f64,
    pub mean_prg: f64,
}

fn make_batch(view: &TrainView, indices: &[usize]) -> Batch {
    let control: Vec<usize> = indices.iter().copied().filter(|&i| view.t[i] == 0).collect();
    let treated: Vec<usize> = indices.iter().copied().filter(|&i| view.t[i] == 1).collect();
    Batch {
        x_control: view.x.select_rows(&control),
        y_control: control.iter().map(|&i| view.y[i]).collect(),
        x_treated: view.x.select_rows(&treated),
        y_treated: treated.iter().map(|&i| view.y[i]).collect(),
    }
}

/// Train one model: per epoch, per shuffled batch, record the objective on
/// a fresh tape, backpropagate and take one Adam step. Fully deterministic
/// given (view, config).
pub fn train_run(view: &TrainView, config: &TrainConfig) -> Result<(Model, Vec<EpochTrace>)> {
    config.validate()?;
    if view.control_indices().is_empty() || view.treated_indices().is_empty() {
        return Err(Error::contract(
            "training set must contain both treatment groups",
        ));
    }
    let mut model = Model::init(config.model_kind, view.x.cols(), config.seed);
    let mut adam = AdamState::new(config.lr, &model.param_shapes());
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let batches = minibatch_indices(view.len(), config.batch_size, config.seed, epoch)?;
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        let n_batches = batches.len() as f64;
        for batch_indices in &batches {
            let batch = make_batch(view, batch_indices);
            let mut tape = Tape::new();
            let obj = total_objective(&mut tape, &model, &batch, &config.weights)?;
            tape.backward(obj.total)?;
            let grads = obj.taped.grads(&tape);
            let mut params = model.params_mut();
            adam.step(&mut params, &grads)?;
            sums.0 += tape.scalar_value(obj.total);
            sums.1 += obj.fit_value;
            sums.2 += obj.mmd_value;
            sums.3 += obj.prg_value;
        }
        trace.push(EpochTrace {
            epoch,
            mean_objective: sums.0 / n_batches,
            mean_fit: sums.1 / n_batches,
            mean_mmd: sums.2 / n_batches,
            mean_prg: sums.3 / n_batches,
        });
    }
    Ok((model, trace))
}

/// Optional loss-trace CSV: epoch, mean_objective, mean_fit, mean_mmd, mean_prg.
pub fn write_loss_trace(path: &Path, trace: &[EpochTrace]) -> Result<()> {
    let mut out = String::from("epoch,mean_objective,mean_fit,mean_mmd,mean_prg\n");
    for row in trace {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.epoch, row.mean_objective, row.mean_fit, row.mean_mmd, row.mean_prg
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}
