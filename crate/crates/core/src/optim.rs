//! Adam (and plain SGD for ablations) over named flat tensors.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One trainable tensor and its gradient, flattened.
pub struct ParamTensor<'a> {
    pub name: String,
    pub value: &'a mut [f64],
    pub grad: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub step: u64,
    /// First-moment accumulators, one per tensor.
    pub first_moment: Vec<Vec<f64>>,
    /// Second-moment accumulators, one per tensor.
    pub second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    /// Fresh state for tensors of the given lengths.
    pub fn new(config: OptimizerConfig, tensor_lengths: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            first_moment: tensor_lengths.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: tensor_lengths.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn tensor_lengths(&self) -> Vec<usize> {
        self.first_moment.iter().map(Vec::len).collect()
    }

    /// Applies one update. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, tensors: &mut [ParamTensor<'_>]) -> Result<()> {
        if tensors.len() != self.first_moment.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, got {}",
                self.first_moment.len(),
                tensors.len()
            )));
        }
        for (t, m) in tensors.iter().zip(&self.first_moment) {
            if t.value.len() != m.len() || t.grad.len() != m.len() {
                return Err(Error::Shape(format!(
                    "{}: accumulator length {}, parameter {}, gradient {}",
                    t.name,
                    m.len(),
                    t.value.len(),
                    t.grad.len()
                )));
            }
            if let Some(i) = t.grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient in {} at index {i}",
                    t.name
                )));
            }
        }

        self.step += 1;
        let OptimizerConfig {
            kind,
            learning_rate: lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        match kind {
            OptimizerKind::Sgd => {
                for t in tensors.iter_mut() {
                    for (p, g) in t.value.iter_mut().zip(t.grad) {
                        *p -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t_f = self.step as f64;
                let correction1 = 1.0 - beta1.powf(t_f);
                let correction2 = 1.0 - beta2.powf(t_f);
                for ((t, m), v) in tensors
                    .iter_mut()
                    .zip(&mut self.first_moment)
                    .zip(&mut self.second_moment)
                {
                    for (((p, &g), m), v) in t.value.iter_mut().zip(t.grad).zip(m).zip(v) {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        let m_hat = *m / correction1;
                        let v_hat = *v / correction2;
                        *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}
