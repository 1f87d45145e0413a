//! Dense feed-forward network with sigmoid hidden units and two softmax heads.
//!
//! Layers are indexed two ways. *Neuron layers* run `0..=depth`, with layer 0
//! the input. *Weight layers* run `0..depth`; weight layer `k` connects neuron
//! layer `k` to neuron layer `k + 1` and has shape `(sizes[k + 1], sizes[k])`,
//! so entry `[i][j]` is the weight from neuron `j` of the previous layer to
//! neuron `i` of the next one.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, HEAD_WIDTH, NUM_TASKS, OUTPUT_WIDTH};

/// Hidden-layer nonlinearity. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Sigmoid,
    /// Experimental. Rescaling weights across a ReLU layer leaves the function
    /// unchanged, which lets the network shrink the transport cost without
    /// moving any neuron.
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    #[inline]
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layer_sizes: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    activation: Activation,
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Config(format!(
            "need at least an input and an output layer, got {} sizes",
            layer_sizes.len()
        )));
    }
    if let Some(pos) = layer_sizes.iter().position(|&s| s == 0) {
        return Err(Error::Config(format!("layer {pos} has zero width")));
    }
    let last = *layer_sizes.last().unwrap();
    if last != OUTPUT_WIDTH {
        return Err(Error::Config(format!(
            "output layer must have {OUTPUT_WIDTH} neurons (two {HEAD_WIDTH}-way heads), got {last}"
        )));
    }
    Ok(())
}

impl Network {
    /// Sigmoid network with weights uniform in `±1/sqrt(fan_in)` and zero biases.
    pub fn new(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        Self::with_activation(layer_sizes, Activation::Sigmoid, seed)
    }

    pub fn with_activation(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        Self::with_init(layer_sizes, activation, 1.0, seed)
    }

    /// Weights uniform on `±gain / sqrt(fan_in)`, biases zero.
    pub fn with_init(layer_sizes: &[usize], activation: Activation, gain: f64, seed: u64) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(Error::Config(format!("init gain must be positive, got {gain}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = layer_sizes
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let limit = gain / (fan_in as f64).sqrt();
                let dist = Uniform::new(-limit, limit).expect("finite positive limit");
                Array2::from_shape_simple_fn((fan_out, fan_in), || dist.sample(&mut rng))
            })
            .collect();
        let biases = layer_sizes[1..].iter().map(|&n| Array1::zeros(n)).collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    /// All weights and biases zero.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights: layer_sizes
                .windows(2)
                .map(|p| Array2::zeros((p[1], p[0])))
                .collect(),
            biases: layer_sizes[1..].iter().map(|&n| Array1::zeros(n)).collect(),
            activation: Activation::Sigmoid,
        })
    }

    pub fn from_parts(
        layer_sizes: Vec<usize>,
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        activation: Activation,
    ) -> Result<Self> {
        validate_sizes(&layer_sizes)?;
        let depth = layer_sizes.len() - 1;
        if weights.len() != depth || biases.len() != depth {
            return Err(Error::Shape(format!(
                "expected {depth} weight and bias tensors, got {} and {}",
                weights.len(),
                biases.len()
            )));
        }
        for k in 0..depth {
            let want = (layer_sizes[k + 1], layer_sizes[k]);
            if weights[k].dim() != want {
                return Err(Error::Shape(format!(
                    "weight layer {k}: expected {want:?}, got {:?}",
                    weights[k].dim()
                )));
            }
            if biases[k].len() != want.0 {
                return Err(Error::Shape(format!(
                    "bias layer {k}: expected {}, got {}",
                    want.0,
                    biases[k].len()
                )));
            }
            if weights[k].iter().chain(biases[k].iter()).any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("weight layer {k} has non-finite entries")));
            }
        }
        Ok(Self {
            layer_sizes,
            weights,
            biases,
            activation,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    /// Number of weight layers.
    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }

    /// Weights and biases borrowed mutably together.
    pub fn params_mut(&mut self) -> (&mut [Array2<f64>], &mut [Array1<f64>]) {
        (&mut self.weights, &mut self.biases)
    }

    /// Incoming weight matrix of neuron layer `layer` (`layer >= 1`).
    pub fn weights_into(&self, layer: usize) -> Option<&Array2<f64>> {
        layer.checked_sub(1).and_then(|k| self.weights.get(k))
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn forward(&self, inputs: ArrayView2<'_, f64>) -> Result<ForwardTrace> {
        self.forward_with_mask(inputs, None)
    }

    /// Forward pass where `keep[l][n] == false` forces the post-activation of
    /// neuron `n` in neuron layer `l` to zero before it propagates.
    pub(crate) fn forward_with_mask(
        &self,
        inputs: ArrayView2<'_, f64>,
        keep: Option<&[Vec<bool>]>,
    ) -> Result<ForwardTrace> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input width {} does not match network input {}",
                inputs.ncols(),
                self.input_dim()
            )));
        }
        if inputs.nrows() == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        if let Some(keep) = keep {
            let ok = keep.len() == self.layer_sizes.len()
                && keep.iter().zip(&self.layer_sizes).all(|(k, &n)| k.len() == n);
            if !ok {
                return Err(Error::Shape("mask does not match network layer sizes".into()));
            }
        }

        let depth = self.depth();
        let mut activations = Vec::with_capacity(depth + 1);
        let mut pre_activations = Vec::with_capacity(depth);
        let mut current = inputs.to_owned();
        if let Some(keep) = keep {
            zero_masked_columns(&mut current, &keep[0]);
        }
        for k in 0..depth {
            let mut z = current.dot(&self.weights[k].t());
            z += &self.biases[k];
            let mut a = if k + 1 == depth {
                z.clone()
            } else {
                let act = self.activation;
                z.mapv(|v| act.apply(v))
            };
            if let Some(keep) = keep {
                zero_masked_columns(&mut a, &keep[k + 1]);
            }
            activations.push(current);
            pre_activations.push(z);
            current = a;
        }
        activations.push(current);
        Ok(ForwardTrace {
            activations,
            pre_activations,
        })
    }

    /// Exact gradients of a scalar loss given `d loss / d logits`.
    pub fn backward(&self, trace: &ForwardTrace, grad_logits: ArrayView2<'_, f64>) -> Result<NetworkGradients> {
        let depth = self.depth();
        if trace.pre_activations.len() != depth || trace.activations.len() != depth + 1 {
            return Err(Error::Contract(format!(
                "trace has {} layers, network has {depth}",
                trace.pre_activations.len()
            )));
        }
        for (k, z) in trace.pre_activations.iter().enumerate() {
            if z.ncols() != self.layer_sizes[k + 1] {
                return Err(Error::Contract(format!(
                    "stale trace: layer {} width {} != {}",
                    k + 1,
                    z.ncols(),
                    self.layer_sizes[k + 1]
                )));
            }
        }
        if grad_logits.dim() != trace.logits().dim() {
            return Err(Error::Shape(format!(
                "logit gradient shape {:?} != logits {:?}",
                grad_logits.dim(),
                trace.logits().dim()
            )));
        }

        let mut weights = vec![Array2::zeros((0, 0)); depth];
        let mut biases = vec![Array1::zeros(0); depth];
        let mut delta = grad_logits.to_owned();
        for k in (0..depth).rev() {
            weights[k] = delta.t().dot(&trace.activations[k]);
            biases[k] = delta.sum_axis(Axis(0));
            if k > 0 {
                let mut upstream = delta.dot(&self.weights[k]);
                let act = self.activation;
                Zip::from(&mut upstream)
                    .and(&trace.pre_activations[k - 1])
                    .and(&trace.activations[k])
                    .for_each(|g, &z, &y| *g *= act.derivative(z, y));
                delta = upstream;
            }
        }
        Ok(NetworkGradients { weights, biases })
    }
}

fn zero_masked_columns(m: &mut Array2<f64>, keep: &[bool]) {
    for (j, &k) in keep.iter().enumerate() {
        if !k {
            m.column_mut(j).fill(0.0);
        }
    }
}

/// Activations recorded by one forward pass over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Post-activations per neuron layer; `[0]` is the input batch and the last
    /// entry equals the raw output logits.
    pub activations: Vec<Array2<f64>>,
    /// Pre-activations per weight layer.
    pub pre_activations: Vec<Array2<f64>>,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.activations[0].nrows()
    }

    pub fn depth(&self) -> usize {
        self.pre_activations.len()
    }

    pub fn logits(&self) -> ArrayView2<'_, f64> {
        self.pre_activations.last().expect("non-empty trace").view()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl NetworkGradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            weights: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }
}

/// Which heads are active for each example. `[a, b]` with `a` the first
/// (MNIST) head and `b` the second (Fashion-MNIST) head.
pub type HeadLabels = [Option<u8>; NUM_TASKS];

#[derive(Debug, Clone)]
pub struct HeadLoss {
    /// Mean over the batch of the summed cross-entropy of active heads.
    pub loss: f64,
    /// `d loss / d logits`, already divided by the batch size.
    pub grad_logits: Array2<f64>,
}

/// Softmax of one head's logits.
pub fn head_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Per-head softmax cross-entropy on the trace's output logits.
pub fn task_cross_entropy(trace: &ForwardTrace, labels: &[HeadLabels]) -> Result<HeadLoss> {
    head_cross_entropy(trace.logits(), labels)
}

pub fn head_cross_entropy(logits: ArrayView2<'_, f64>, labels: &[HeadLabels]) -> Result<HeadLoss> {
    if logits.ncols() != OUTPUT_WIDTH {
        return Err(Error::Shape(format!(
            "expected {OUTPUT_WIDTH} logits, got {}",
            logits.ncols()
        )));
    }
    if logits.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logit rows but {} label rows",
            logits.nrows(),
            labels.len()
        )));
    }
    let batch = labels.len() as f64;
    let mut grad = Array2::zeros(logits.dim());
    let mut total = 0.0;
    for (i, row_labels) in labels.iter().enumerate() {
        if row_labels.iter().all(Option::is_none) {
            return Err(Error::Data(format!("example {i} has no active head")));
        }
        let row = logits.row(i);
        for (head, label) in row_labels.iter().enumerate() {
            let Some(label) = *label else { continue };
            let label = label as usize;
            if label >= HEAD_WIDTH {
                return Err(Error::Data(format!(
                    "label {label} outside 0..{HEAD_WIDTH} (example {i}, head {head})"
                )));
            }
            let offset = head * HEAD_WIDTH;
            let head_logits: Vec<f64> = row.iter().skip(offset).take(HEAD_WIDTH).copied().collect();
            let probs = head_softmax(&head_logits);
            // log-softmax form stays finite on saturated heads
            let max = head_logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + head_logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
            total += lse - head_logits[label];
            for (c, p) in probs.iter().enumerate() {
                let target = if c == label { 1.0 } else { 0.0 };
                grad[[i, offset + c]] = (p - target) / batch;
            }
        }
    }
    Ok(HeadLoss {
        loss: total / batch,
        grad_logits: grad,
    })
}
