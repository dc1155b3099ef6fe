use std::collections::HashMap;

use super::{Result, Tensor, TensorError};

/// Ordered, named collection of parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        let name = name.into();
        if let Some(&i) = self.index.get(&name) {
            self.tensors[i] = tensor;
            return i;
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        self.names.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(|i| &mut self.tensors[i])
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adam with decoupled weight decay and bias-corrected moments.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &ParamSet) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.rows(), t.cols()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads` is aligned with `params` by index.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Tensor>]) -> Result<()> {
        if grads.len() != params.len() || self.first.len() != params.len() {
            return Err(TensorError::Invalid(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            match g {
                None => return Err(TensorError::MissingGrad(params.name(i).to_string())),
                Some(g) if g.shape() != params.tensor(i).shape() => {
                    return Err(TensorError::Shape {
                        op: "adamw_step",
                        left: params.tensor(i).shape(),
                        right: g.shape(),
                    })
                }
                Some(_) => {}
            }
        }

        self.step += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let decay = 1.0 - lr * weight_decay;

        for (i, g) in grads.iter().enumerate() {
            let g = g.as_ref().expect("checked above");
            let theta = &mut params.tensors[i];
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (((p, &gi), mi), vi) in theta
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *p *= decay;
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Multiplies the learning rate by `gamma` once per epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExponentialLr {
    pub base_lr: f64,
    pub gamma: f64,
    pub epoch: u32,
}

impl ExponentialLr {
    pub fn new(base_lr: f64, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(TensorError::Invalid(format!(
                "decay factor must lie in (0, 1], got {gamma}"
            )));
        }
        Ok(Self {
            base_lr,
            gamma,
            epoch: 0,
        })
    }

    pub fn current_lr(&self) -> f64 {
        self.base_lr * self.gamma.powi(self.epoch as i32)
    }

    pub fn step(&mut self, optimizers: &mut [&mut AdamW]) {
        self.epoch += 1;
        let lr = self.current_lr();
        for opt in optimizers.iter_mut() {
            opt.set_lr(lr);
        }
    }
}
