use std::fmt;
use std::str::FromStr;

use refinegan_nets::{Network, Scalar};

use crate::error::{Result, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    RmsProp,
    Adadelta,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::RmsProp => "rmsprop",
            OptimizerKind::Adadelta => "adadelta",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rmsprop" => Ok(OptimizerKind::RmsProp),
            "adadelta" => Ok(OptimizerKind::Adadelta),
            other => Err(TrainError::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
}

impl OptimizerSpec {
    pub const DEFAULT_LR: f64 = 1e-3;

    pub fn rmsprop(lr: f64) -> Self {
        Self { kind: OptimizerKind::RmsProp, lr, rho: 0.9, eps: 1e-8 }
    }

    pub fn adadelta(lr: f64) -> Self {
        Self { kind: OptimizerKind::Adadelta, lr, rho: 0.95, eps: 1e-6 }
    }

    /// Default constants for `kind`.
    pub fn of_kind(kind: OptimizerKind, lr: f64) -> Self {
        match kind {
            OptimizerKind::RmsProp => Self::rmsprop(lr),
            OptimizerKind::Adadelta => Self::adadelta(lr),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(TrainError::Config(format!("rho {} must lie in (0, 1)", self.rho)));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(TrainError::Config(format!("eps {} must be positive", self.eps)));
        }
        Ok(())
    }
}

/// Per-parameter running averages.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer<T> {
    pub spec: OptimizerSpec,
    /// Running average of squared gradients.
    acc: Vec<Vec<T>>,
    /// Running average of squared updates (Adadelta only).
    delta: Vec<Vec<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(spec: OptimizerSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec, acc: Vec::new(), delta: Vec::new() })
    }

    /// Updates one parameter tensor in place. `slot` identifies its state.
    pub fn update(&mut self, slot: usize, values: &mut [T], grads: &[T]) -> Result<()> {
        assert_eq!(values.len(), grads.len(), "parameter and gradient lengths differ");
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFiniteGradient(slot));
        }
        while self.acc.len() <= slot {
            self.acc.push(Vec::new());
            self.delta.push(Vec::new());
        }
        if self.acc[slot].len() != values.len() {
            self.acc[slot] = vec![T::zero(); values.len()];
            self.delta[slot] = vec![T::zero(); values.len()];
        }
        let lr = T::lit(self.spec.lr);
        let rho = T::lit(self.spec.rho);
        let eps = T::lit(self.spec.eps);
        let one = T::one();
        let acc = &mut self.acc[slot];
        match self.spec.kind {
            OptimizerKind::RmsProp => {
                for ((p, &g), a) in values.iter_mut().zip(grads).zip(acc.iter_mut()) {
                    *a = rho * *a + (one - rho) * g * g;
                    *p = *p - lr * g / (*a + eps).sqrt();
                }
            }
            OptimizerKind::Adadelta => {
                let delta = &mut self.delta[slot];
                for (((p, &g), a), d) in values.iter_mut().zip(grads).zip(acc.iter_mut()).zip(delta.iter_mut()) {
                    *a = rho * *a + (one - rho) * g * g;
                    let step = g * (*d + eps).sqrt() / (*a + eps).sqrt();
                    *p = *p - lr * step;
                    *d = rho * *d + (one - rho) * step * step;
                }
            }
        }
        Ok(())
    }

    /// Applies one update to every parameter of `net` from its accumulated
    /// gradients. Nothing changes if any gradient is non-finite.
    pub fn step(&mut self, net: &mut Network<T>) -> Result<()> {
        let mut params = net.params_mut();
        if let Some(i) = params.iter().position(|p| p.grad.iter().any(|g| !g.is_finite())) {
            return Err(TrainError::NonFiniteGradient(i));
        }
        for (slot, p) in params.iter_mut().enumerate() {
            let p = &mut **p;
            self.update(slot, &mut p.value, &p.grad)?;
        }
        Ok(())
    }
}
