use serde::{Deserialize, Serialize};

use crate::error::{Result, WaveError};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(WaveError::InvalidConfig(format!("bad Adam hyperparameters {self:?}")))
        }
    }
}

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(num_params: usize, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            t: 0,
            m: vec![T::zero(); num_params],
            v: vec![T::zero(); num_params],
        })
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        for (what, len) in [("parameters", params.len()), ("gradients", grads.len())] {
            if len != self.m.len() {
                return Err(WaveError::ShapeMismatch {
                    what,
                    expected: self.m.len(),
                    found: len,
                });
            }
        }
        self.t += 1;
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let bc1 = T::one() - T::lit(c.beta1.powi(t));
        let bc2 = T::one() - T::lit(c.beta2.powi(t));
        let lr = T::lit(c.lr);
        let eps = T::lit(c.epsilon);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Value-semantics form of [`Adam::step`].
pub fn adam_step<T: Real>(params: &[T], grads: &[T], state: &Adam<T>) -> Result<(Vec<T>, Adam<T>)> {
    let mut p = params.to_vec();
    let mut s = state.clone();
    s.step(&mut p, grads)?;
    Ok((p, s))
}
