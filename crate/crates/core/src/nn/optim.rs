use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adagrad,
}

/// Optimizer hyperparameters plus per-slot Adagrad accumulators.
///
/// A slot is one parameter tensor (e.g. a layer's weight matrix); callers pick
/// stable slot ids so accumulators line up across steps.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub epsilon: f64,
    accumulators: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerState {
            kind: OptimizerKind::Sgd,
            learning_rate,
            epsilon: 0.0,
            accumulators: Vec::new(),
        }
    }

    pub fn adagrad(learning_rate: f64, epsilon: f64) -> Self {
        OptimizerState {
            kind: OptimizerKind::Adagrad,
            learning_rate,
            epsilon,
            accumulators: Vec::new(),
        }
    }

    pub fn accumulator(&self, slot: usize) -> Option<&[f64]> {
        self.accumulators.get(slot).map(Vec::as_slice)
    }

    pub fn step(&mut self, slot: usize, params: &mut [f64], grads: &[f64]) -> Result<()> {
        match self.kind {
            OptimizerKind::Sgd => sgd_step(params, grads, self.learning_rate),
            OptimizerKind::Adagrad => {
                if self.accumulators.len() <= slot {
                    self.accumulators.resize(slot + 1, Vec::new());
                }
                let acc = &mut self.accumulators[slot];
                if acc.is_empty() {
                    acc.resize(params.len(), 0.0);
                }
                adagrad_step(params, grads, acc, self.learning_rate, self.epsilon)
            }
        }
    }
}

fn check(params: &[f64], grads: &[f64]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::DimensionMismatch {
            context: "optimizer step",
            expected: params.len(),
            found: grads.len(),
        });
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient component {i}")));
    }
    Ok(())
}

/// `p <- p - lr * g`
pub fn sgd_step(params: &mut [f64], grads: &[f64], learning_rate: f64) -> Result<()> {
    check(params, grads)?;
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= learning_rate * g;
    }
    Ok(())
}

/// `acc <- acc + g^2; p <- p - lr * g / (sqrt(acc) + eps)`
pub fn adagrad_step(
    params: &mut [f64],
    grads: &[f64],
    accumulators: &mut [f64],
    learning_rate: f64,
    epsilon: f64,
) -> Result<()> {
    check(params, grads)?;
    if accumulators.len() != params.len() {
        return Err(Error::DimensionMismatch {
            context: "adagrad accumulators",
            expected: params.len(),
            found: accumulators.len(),
        });
    }
    for ((p, g), acc) in params.iter_mut().zip(grads).zip(accumulators.iter_mut()) {
        if *g == 0.0 {
            continue;
        }
        *acc += g * g;
        *p -= learning_rate * g / (acc.sqrt() + epsilon);
    }
    Ok(())
}
