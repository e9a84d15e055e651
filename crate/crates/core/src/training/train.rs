use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, egc_backward, AdamConfig, AdamState, Targets, ToyTask};
use crate::error::{EgcError, Result};
use crate::graph::CsrGraph;
use crate::kernels::{Aggregator, ExecOptions};
use crate::layers::{egc_forward, relu, EgcModel, ModelSpec, WeightActivation};
use crate::matrix::{axpy, Matrix};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    pub num_layers: usize,
    pub heads: usize,
    pub bases: usize,
    pub aggs: Vec<Aggregator>,
    pub activation: WeightActivation,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub threads: usize,
}

/// Two single-aggregator layers with 8 heads and 4 bases.
impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            num_layers: 2,
            heads: 8,
            bases: 4,
            aggs: vec![Aggregator::SymNorm],
            activation: WeightActivation::Identity,
            steps: 200,
            lr: 1e-2,
            seed: 0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn model_spec(&self, task: &ToyTask) -> ModelSpec {
        ModelSpec {
            in_dim: task.features.cols(),
            hidden: self.hidden,
            out_dim: task.targets.output_dim(),
            num_layers: self.num_layers,
            heads: self.heads,
            bases: self.bases,
            aggs: self.aggs.clone(),
            activation: self.activation,
        }
    }
}

/// Loss and train-split accuracy after `step` updates. Accuracy is absent
/// for regression.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    pub accuracy: Option<f64>,
}

/// Where training stopped because the loss or an update became non-finite.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Divergence {
    pub step: usize,
    pub last_finite: Option<usize>,
}

impl Divergence {
    pub fn to_error(self) -> EgcError {
        EgcError::Diverged {
            step: self.step,
            last_finite: self.last_finite,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<StepMetrics>,
    /// Parameters after the last finite step.
    pub model: EgcModel<f32>,
    /// Set when the loss or a gradient became non-finite.
    pub divergence: Option<Divergence>,
}

impl TrainOutcome {
    pub fn initial_loss(&self) -> f64 {
        self.history.first().map_or(f64::NAN, |m| m.loss)
    }

    pub fn final_metrics(&self) -> Option<&StepMetrics> {
        self.history.iter().rev().find(|m| m.loss.is_finite())
    }

    pub fn diverged(&self) -> bool {
        self.divergence.is_some()
    }
}

/// Full-batch Adam on the task's training split, starting from a model
/// initialized with `cfg.seed`. Records metrics before the first update and
/// after each one, so the history has `steps + 1` rows unless training
/// diverges.
pub fn train_loop(task: &ToyTask, cfg: &TrainConfig) -> Result<TrainOutcome> {
    task.validate()?;
    let spec = cfg.model_spec(task);
    let model = EgcModel::<f32>::init(&spec, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    train_model(task, model, cfg)
}

/// Like [`train_loop`] with a given starting model.
pub fn train_model(task: &ToyTask, mut model: EgcModel<f32>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    task.validate()?;
    model.validate()?;
    if model.in_dim() != task.features.cols() || model.out_dim() != task.targets.output_dim() {
        return Err(EgcError::shape(
            "model widths",
            format!("{} -> {}", task.features.cols(), task.targets.output_dim()),
            format!("{} -> {}", model.in_dim(), model.out_dim()),
        ));
    }
    let adam = AdamConfig::with_lr(cfg.lr);
    adam.validate()?;
    let opts = ExecOptions::with_threads(cfg.threads);
    let g = task.graph.normalized();
    let mut state = AdamState::new(&model);
    let mut history = Vec::with_capacity(cfg.steps + 1);
    let mut divergence = None;
    for step in 0..=cfg.steps {
        let (loss, accuracy, grads) = loss_and_grads(&model, &g, &task.features, task, &opts)?;
        let last_finite = history.last().map(|m: &StepMetrics| m.step);
        if !loss.is_finite() {
            divergence = Some(Divergence { step, last_finite });
            break;
        }
        history.push(StepMetrics { step, loss, accuracy });
        if step == cfg.steps {
            break;
        }
        let mut candidate = model.clone();
        match adam_step(&mut candidate, &grads, &mut state, &adam) {
            Ok(()) if candidate.validate().is_ok() => model = candidate,
            Ok(()) | Err(EgcError::NonFinite(_)) => {
                divergence = Some(Divergence {
                    step: step + 1,
                    last_finite: Some(step),
                });
                break;
            }
            Err(e) => return Err(e),
        }
    }
    if let Some(d) = divergence {
        log::warn!("{}", d.to_error());
    }
    Ok(TrainOutcome {
        history,
        model,
        divergence,
    })
}

/// Loss, accuracy and parameter gradients in [`Params`](super::Params)
/// order. A non-finite forward pass yields an infinite loss and empty
/// gradients.
fn loss_and_grads<T: Real>(
    model: &EgcModel<T>,
    g: &CsrGraph,
    x: &Matrix<T>,
    task: &ToyTask,
    opts: &ExecOptions,
) -> Result<(f64, Option<f64>, Vec<Vec<T>>)> {
    let mut inputs = Vec::with_capacity(model.layers.len());
    let mut pres = Vec::with_capacity(model.layers.len());
    let mut h = x.clone();
    for (k, layer) in model.layers.iter().enumerate() {
        let y = match egc_forward(g, &h, layer, opts) {
            Ok(y) => y,
            Err(EgcError::NonFinite(_)) => return Ok((f64::INFINITY, None, Vec::new())),
            Err(e) => return Err(e),
        };
        inputs.push(h);
        h = if model.relu_after(k) { relu(&y) } else { y.clone() };
        pres.push(y);
    }
    let out = match &model.readout {
        Some(r) => r.forward(&h)?,
        None => h.clone(),
    };
    if !out.is_finite() {
        return Ok((f64::INFINITY, None, Vec::new()));
    }
    let (loss, accuracy, dout) = task_loss(&out, task);
    if !loss.is_finite() {
        return Ok((loss, accuracy, Vec::new()));
    }

    let mut readout_grads = Vec::new();
    let mut dh = match &model.readout {
        Some(r) => {
            let mut db = vec![T::zero(); r.out_dim()];
            for i in 0..dout.rows() {
                axpy(&mut db, T::one(), dout.row(i));
            }
            readout_grads.push(dout.t_matmul(&h)?.into_vec());
            readout_grads.push(db);
            dout.matmul(&r.weight)?
        }
        None => dout,
    };
    let mut layer_grads = vec![Vec::new(); model.layers.len()];
    for k in (0..model.layers.len()).rev() {
        if model.relu_after(k) {
            for (d, &p) in dh.as_mut_slice().iter_mut().zip(pres[k].as_slice()) {
                if p <= T::zero() {
                    *d = T::zero();
                }
            }
        }
        let bundle = egc_backward(g, &inputs[k], &model.layers[k], &dh, opts)?;
        layer_grads[k] = bundle.to_vecs();
        dh = bundle.d_x;
    }
    let mut grads: Vec<Vec<T>> = layer_grads.into_iter().flatten().collect();
    grads.extend(readout_grads);
    Ok((loss, accuracy, grads))
}

/// Mean loss over the training split and its gradient with respect to the
/// model output. Cross-entropy for classes, squared error for regression.
fn task_loss<T: Real>(out: &Matrix<T>, task: &ToyTask) -> (f64, Option<f64>, Matrix<T>) {
    let n_train = task.num_train() as f64;
    let mut grad = Matrix::zeros(out.rows(), out.cols());
    let mut loss = 0.0;
    let mut correct = 0usize;
    for i in (0..out.rows()).filter(|&i| task.train_mask[i]) {
        let row = out.row(i);
        match &task.targets {
            Targets::Classes { labels, .. } => {
                let m = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v.to_f64_lossy()));
                let exps: Vec<f64> = row.iter().map(|&v| (v.to_f64_lossy() - m).exp()).collect();
                let z: f64 = exps.iter().sum();
                let y = labels[i];
                loss += z.ln() + m - row[y].to_f64_lossy();
                let pred = (0..row.len()).fold(0, |best, k| if row[k] > row[best] { k } else { best });
                correct += usize::from(pred == y);
                for (k, g) in grad.row_mut(i).iter_mut().enumerate() {
                    let target = if k == y { 1.0 } else { 0.0 };
                    *g = T::of((exps[k] / z - target) / n_train);
                }
            }
            Targets::Regression(t) => {
                let r = row[0].to_f64_lossy() - t[i];
                loss += r * r;
                grad.row_mut(i)[0] = T::of(2.0 * r / n_train);
            }
        }
    }
    let accuracy = match task.targets {
        Targets::Classes { .. } => Some(correct as f64 / n_train),
        Targets::Regression(_) => None,
    };
    (loss / n_train, accuracy, grad)
}

/// `step,loss,accuracy`; accuracy is empty for regression.
pub fn write_metrics_csv<W: Write>(history: &[StepMetrics], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["step", "loss", "accuracy"])?;
    for m in history {
        out.write_record([
            m.step.to_string(),
            m.loss.to_string(),
            m.accuracy.map_or(String::new(), |a| a.to_string()),
        ])?;
    }
    out.flush()?;
    Ok(())
}
