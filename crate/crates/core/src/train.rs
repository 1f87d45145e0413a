//! Mini-batch training of weights, biases and positions.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::data::{DualBatch, DualDataset, EpochIterator};
use crate::eval::{correct_count, TaskAccuracies};
use crate::nn::{task_cross_entropy, NetworkGradients};
use crate::optim::{OptimizerState, ParamTensor};
use crate::persist::{Checkpoint, Progress, RunConfig};
use crate::spatial::{spatial_gradients, LayerPenalty, SpatialConfig};
use crate::{Error, Network, PositionMap, Result, HEAD_WIDTH, NUM_TASKS};

/// Offset separating the position RNG stream from the weight RNG stream.
const POSITION_SEED_OFFSET: u64 = 0x5EED_0F_90_5171;

/// The trainable parameters: network and neuron positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub network: Network,
    pub positions: PositionMap,
}

#[derive(Debug, Clone)]
pub struct ModelGradients {
    pub network: NetworkGradients,
    pub positions: Vec<Array2<f64>>,
}

impl Model {
    pub fn init(cfg: &RunConfig) -> Result<Self> {
        let sizes = cfg.layer_sizes();
        Ok(Self {
            network: Network::with_init(&sizes, cfg.activation, cfg.init_gain, cfg.seed)?,
            positions: PositionMap::gaussian(&sizes, cfg.seed.wrapping_add(POSITION_SEED_OFFSET)),
        })
    }

    /// Lengths of the flat tensors in optimizer order: weights and biases per
    /// weight layer, then positions per neuron layer.
    pub fn tensor_lengths(&self) -> Vec<usize> {
        let mut v = Vec::new();
        for (w, b) in self.network.weights().iter().zip(self.network.biases()) {
            v.push(w.len());
            v.push(b.len());
        }
        v.extend(self.positions.layers().iter().map(|p| p.len()));
        v
    }

    pub fn apply(&mut self, optimizer: &mut OptimizerState, grads: &ModelGradients) -> Result<()> {
        let mut tensors = Vec::new();
        let depth = self.network.depth();
        let Model { network, positions } = self;
        let (weights, biases) = network.params_mut();
        for (k, ((w, b), (gw, gb))) in weights
            .iter_mut()
            .zip(biases.iter_mut())
            .zip(grads.network.weights.iter().zip(&grads.network.biases))
            .enumerate()
        {
            tensors.push(ParamTensor {
                name: format!("weights[{k}]"),
                value: w.as_slice_mut().expect("standard layout"),
                grad: gw.as_slice().expect("standard layout"),
            });
            tensors.push(ParamTensor {
                name: format!("biases[{k}]"),
                value: b.as_slice_mut().expect("standard layout"),
                grad: gb.as_slice().expect("standard layout"),
            });
        }
        debug_assert_eq!(tensors.len(), 2 * depth);
        for (l, (p, g)) in positions.layers_mut().iter_mut().zip(&grads.positions).enumerate() {
            tensors.push(ParamTensor {
                name: format!("positions[{l}]"),
                value: p.as_slice_mut().expect("standard layout"),
                grad: g.as_slice().expect("standard layout"),
            });
        }
        optimizer.step(&mut tensors)
    }
}

/// Loss breakdown for one batch.
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub task_loss: f64,
    pub penalty: f64,
    pub per_layer: Vec<LayerPenalty>,
    /// `(correct, counted)` per head over active examples.
    pub head_counts: [(usize, usize); NUM_TASKS],
}

impl BatchOutcome {
    pub fn total_loss(&self) -> f64 {
        self.task_loss + self.penalty
    }
}

/// Objective value and exact gradients for one batch.
pub fn loss_and_gradients(
    model: &Model,
    batch: &DualBatch,
    spatial: &SpatialConfig,
) -> Result<(BatchOutcome, ModelGradients)> {
    let trace = model.network.forward(batch.inputs.view())?;
    let head = task_cross_entropy(&trace, &batch.labels)?;
    let mut net_grads = model.network.backward(&trace, head.grad_logits.view())?;
    let sg = spatial_gradients(&model.network, &model.positions, spatial)?;
    for (g, extra) in net_grads.weights.iter_mut().zip(&sg.weights) {
        if let Some(extra) = extra {
            *g += extra;
        }
    }

    let logits = trace.logits();
    let mut head_counts = [(0, 0); NUM_TASKS];
    for (h, slot) in head_counts.iter_mut().enumerate() {
        let rows: Vec<usize> = (0..batch.len()).filter(|&r| batch.labels[r][h].is_some()).collect();
        let labels: Vec<u8> = rows.iter().map(|&r| batch.labels[r][h].unwrap()).collect();
        let sel = logits.select(ndarray::Axis(0), &rows);
        *slot = (
            correct_count(sel.slice(s![.., h * HEAD_WIDTH..(h + 1) * HEAD_WIDTH]), &labels),
            rows.len(),
        );
    }
    Ok((
        BatchOutcome {
            task_loss: head.loss,
            penalty: sg.penalty,
            per_layer: sg.per_layer,
            head_counts,
        },
        ModelGradients {
            network: net_grads,
            positions: sg.positions,
        },
    ))
}

/// Per-epoch training summary. Spatial fields are absent for the regular baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's batches.
    pub task_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalty: Option<f64>,
    /// Mean of task loss plus penalty over the epoch's batches.
    pub total_loss: f64,
    /// `T(l)` and `V(l)` at the end of the epoch.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<LayerPenalty>>,
    pub train_accuracy: TaskAccuracies,
}

pub fn init_checkpoint(cfg: &RunConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    let model = Model::init(cfg)?;
    let optimizer = OptimizerState::new(cfg.optimizer_config(), &model.tensor_lengths());
    Ok(Checkpoint {
        config: cfg.clone(),
        network: model.network,
        positions: model.positions,
        optimizer,
        progress: Progress::default(),
    })
}

/// Runs one more epoch on `ckpt` in place.
pub fn train_epoch(ckpt: &mut Checkpoint, data: &DualDataset) -> Result<EpochLog> {
    let cfg = ckpt.config.clone();
    let spatial = cfg.spatial_config();
    let epoch = ckpt.progress.epochs_completed;
    let batches = EpochIterator::new(data, cfg.mode, cfg.batch_size, cfg.seed, epoch as u64, cfg.mnist_weight)?;

    let mut model = Model {
        network: ckpt.network.clone(),
        positions: ckpt.positions.clone(),
    };
    let (mut task_sum, mut total_sum, mut penalty_sum, mut n_batches) = (0.0, 0.0, 0.0, 0usize);
    let mut counts = [(0usize, 0usize); NUM_TASKS];
    for batch in batches {
        let batch = batch?;
        let (outcome, grads) = loss_and_gradients(&model, &batch, &spatial)?;
        if !outcome.total_loss().is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss at epoch {epoch}, step {}",
                ckpt.progress.steps
            )));
        }
        model.apply(&mut ckpt.optimizer, &grads)?;
        ckpt.progress.steps += 1;
        task_sum += outcome.task_loss;
        penalty_sum += outcome.penalty;
        total_sum += outcome.total_loss();
        n_batches += 1;
        for (c, o) in counts.iter_mut().zip(outcome.head_counts) {
            c.0 += o.0;
            c.1 += o.1;
        }
    }
    ckpt.network = model.network;
    ckpt.positions = model.positions;
    ckpt.progress.epochs_completed += 1;

    let mean = |s: f64| s / n_batches.max(1) as f64;
    let acc = |(c, n): (usize, usize)| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    let layers = if spatial.is_active() {
        Some(spatial_gradients(&ckpt.network, &ckpt.positions, &spatial)?.per_layer)
    } else {
        None
    };
    Ok(EpochLog {
        epoch: epoch + 1,
        task_loss: mean(task_sum),
        penalty: spatial.is_active().then(|| mean(penalty_sum)),
        total_loss: mean(total_sum),
        layers,
        train_accuracy: TaskAccuracies::new(acc(counts[0]), acc(counts[1])),
    })
}

/// Trains from scratch for `cfg.epochs` epochs.
pub fn train(cfg: &RunConfig, data: &DualDataset, mut on_epoch: impl FnMut(&EpochLog)) -> Result<Checkpoint> {
    let mut ckpt = init_checkpoint(cfg)?;
    for _ in 0..cfg.epochs {
        let log = train_epoch(&mut ckpt, data)?;
        on_epoch(&log);
    }
    Ok(ckpt)
}
