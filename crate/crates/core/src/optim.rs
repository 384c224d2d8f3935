//! Adam and Adadelta update rules over a flat parameter buffer.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Adam,
    Adadelta,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Adadelta => "adadelta",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Hyperparameters for either optimizer. Adam reads `beta1`/`beta2`,
/// Adadelta reads `rho`; both read `learning_rate` and `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Hyperparams {
    pub fn defaults(kind: OptimizerKind) -> Self {
        match kind {
            OptimizerKind::Adam => Self { learning_rate: 0.0005, beta1: 0.9, beta2: 0.999, rho: 0.95, epsilon: 1e-8 },
            OptimizerKind::Adadelta => Self { learning_rate: 0.01, beta1: 0.9, beta2: 0.999, rho: 0.95, epsilon: 1e-6 },
        }
    }

    fn validate(&self, kind: OptimizerKind) -> Result<()> {
        let positive = |name, value: f64| {
            if value.is_finite() && value > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidHyperparameter { name, value })
            }
        };
        let decay = |name, value: f64| {
            if (0.0..1.0).contains(&value) {
                Ok(())
            } else {
                Err(Error::InvalidHyperparameter { name, value })
            }
        };
        positive("learning_rate", self.learning_rate)?;
        positive("epsilon", self.epsilon)?;
        match kind {
            OptimizerKind::Adam => {
                decay("beta1", self.beta1)?;
                decay("beta2", self.beta2)
            }
            OptimizerKind::Adadelta => decay("rho", self.rho),
        }
    }
}

/// Optimizer accumulators. For Adam `first`/`second` hold the moment
/// estimates; for Adadelta they hold the running averages of squared
/// gradients and squared updates.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    hyper: Hyperparams,
    step_count: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

/// Fresh optimizer state for `n_params` parameters.
pub fn make_state(kind: OptimizerKind, hyper: Hyperparams, n_params: usize) -> Result<OptimizerState> {
    hyper.validate(kind)?;
    Ok(OptimizerState { kind, hyper, step_count: 0, first: vec![0.0; n_params], second: vec![0.0; n_params] })
}

impl OptimizerState {
    /// Rebuilds a state from serialized parts.
    pub fn from_parts(
        kind: OptimizerKind,
        hyper: Hyperparams,
        step_count: u64,
        first: Vec<f64>,
        second: Vec<f64>,
    ) -> Result<Self> {
        hyper.validate(kind)?;
        if first.len() != second.len() {
            return Err(Error::LengthMismatch { expected: first.len(), found: second.len() });
        }
        if first.iter().chain(&second).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("optimizer accumulators"));
        }
        Ok(Self { kind, hyper, step_count, first, second })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first(&self) -> &[f64] {
        &self.first
    }

    pub fn second(&self) -> &[f64] {
        &self.second
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    fn check(&self, kind: OptimizerKind, params: &[f64], grads: &[f64]) -> Result<()> {
        if self.kind != kind {
            return Err(Error::InvalidConfig("optimizer state does not match the requested update rule".into()));
        }
        if params.len() != self.first.len() {
            return Err(Error::LengthMismatch { expected: self.first.len(), found: params.len() });
        }
        if grads.len() != params.len() {
            return Err(Error::LengthMismatch { expected: params.len(), found: grads.len() });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        Ok(())
    }

    /// Applies whichever rule this state was created for.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        match self.kind {
            OptimizerKind::Adam => self.adam_step(params, grads),
            OptimizerKind::Adadelta => self.adadelta_step(params, grads),
        }
    }

    /// Adam with bias correction.
    pub fn adam_step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        self.check(OptimizerKind::Adam, params, grads)?;
        let Hyperparams { learning_rate, beta1, beta2, epsilon, .. } = self.hyper;
        self.step_count += 1;
        let t = self.step_count as f64;
        let correct1 = 1.0 - libm::pow(beta1, t);
        let correct2 = 1.0 - libm::pow(beta2, t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / correct1;
            let v_hat = *v / correct2;
            *p -= learning_rate * m_hat / (libm::sqrt(v_hat) + epsilon);
        }
        Ok(())
    }

    /// Adadelta, with the computed update scaled by the learning rate.
    pub fn adadelta_step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        self.check(OptimizerKind::Adadelta, params, grads)?;
        let Hyperparams { learning_rate, rho, epsilon, .. } = self.hyper;
        self.step_count += 1;
        for (((p, g), sq_grad), sq_update) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            *sq_grad = rho * *sq_grad + (1.0 - rho) * g * g;
            let delta = -(libm::sqrt(*sq_update + epsilon) / libm::sqrt(*sq_grad + epsilon)) * g;
            *sq_update = rho * *sq_update + (1.0 - rho) * delta * delta;
            *p += learning_rate * delta;
        }
        Ok(())
    }
}
