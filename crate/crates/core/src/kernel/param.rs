use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::DenseMatrix;

/// A trainable matrix paired with its gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub value: DenseMatrix,
    pub grad: DenseMatrix,
}

impl ParamTensor {
    pub fn new(value: DenseMatrix) -> Self {
        let grad = DenseMatrix::zeros(value.rows(), value.cols());
        Self { value, grad }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(DenseMatrix::zeros(rows, cols))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Adds `g` into the gradient buffer.
    pub fn accumulate(&mut self, g: &DenseMatrix) -> Result<()> {
        self.grad.add_assign(g)
    }
}

fn check_step(p: &ParamTensor, lr: f64) -> Result<()> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::Config(format!("learning rate must be > 0, got {lr}")));
    }
    if !p.grad.is_finite() {
        return Err(Error::Numeric("non-finite gradient entry".into()));
    }
    Ok(())
}

/// Plain gradient step: `value -= lr * grad`, then the gradient is cleared.
pub fn sgd_step(p: &mut ParamTensor, lr: f64) -> Result<()> {
    check_step(p, lr)?;
    for (v, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
        *v -= lr * g;
    }
    p.zero_grad();
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd,
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }
}

/// Per-tensor optimizer state. SGD keeps none.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    moments: Vec<(DenseMatrix, DenseMatrix)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            step: 0,
            moments: Vec::new(),
        }
    }

    /// Applies one update to every tensor, in order, and clears their gradients.
    pub fn step(&mut self, params: &mut [&mut ParamTensor]) -> Result<()> {
        match self.kind {
            OptimizerKind::Sgd => {
                for p in params.iter_mut() {
                    sgd_step(p, self.lr)?;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.moments.is_empty() {
                    self.moments = params
                        .iter()
                        .map(|p| {
                            let (r, c) = p.shape();
                            (DenseMatrix::zeros(r, c), DenseMatrix::zeros(r, c))
                        })
                        .collect();
                }
                if self.moments.len() != params.len() {
                    return Err(Error::Config("optimizer parameter count changed".into()));
                }
                self.step += 1;
                let bc1 = 1.0 - beta1.powi(self.step as i32);
                let bc2 = 1.0 - beta2.powi(self.step as i32);
                for (p, (m, v)) in params.iter_mut().zip(self.moments.iter_mut()) {
                    check_step(p, self.lr)?;
                    let grads = p.grad.data();
                    for (((x, &g), mi), vi) in p
                        .value
                        .data_mut()
                        .iter_mut()
                        .zip(grads)
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        *mi = beta1 * *mi + (1.0 - beta1) * g;
                        *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                        let mhat = *mi / bc1;
                        let vhat = *vi / bc2;
                        *x -= self.lr * mhat / (vhat.sqrt() + eps);
                    }
                    p.zero_grad();
                }
            }
        }
        Ok(())
    }
}
