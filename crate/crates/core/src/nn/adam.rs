//! Bias-corrected first-order adaptive optimizer (Adam).

use crate::error::{Error, Result};
use crate::nn::store::ParamStore;
use alloc::format;
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Optimizer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Adam state: first/second moment stores shaped like the parameters plus a
/// step counter.
#[derive(Debug, Clone)]
pub struct Adam {
    m: ParamStore,
    v: ParamStore,
    step: u64,
    pub hp: AdamParams,
}

impl Adam {
    pub fn new(params: &ParamStore, hp: AdamParams) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), step: 0, hp }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.hp.lr = lr;
    }

    /// One update: `θ -= lr · m̂ / (√v̂ + ε)` with bias-corrected moments.
    /// Rejects non-finite gradients, naming the offending parameter.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore) -> Result<()> {
        params.check_same_structure(grads)?;
        for (name, g) in grads.entries() {
            if !g.is_finite() {
                return Err(Error::Diverged(format!("non-finite gradient in {name}")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.hp.beta1.powi(t);
        let bc2 = 1.0 - self.hp.beta2.powi(t);
        let (b1, b2) = (self.hp.beta1, self.hp.beta2);

        for (((_, p), (_, m)), ((_, v), (_, g))) in params
            .entries_mut()
            .zip(self.m.entries_mut())
            .zip(self.v.entries_mut().zip(grads.entries()))
        {
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            let gd = g.data();
            for i in 0..pd.len() {
                md[i] = b1 * md[i] + (1.0 - b1) * gd[i];
                vd[i] = b2 * vd[i] + (1.0 - b2) * gd[i] * gd[i];
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                pd[i] -= self.hp.lr * m_hat / (v_hat.sqrt() + self.hp.eps);
            }
        }
        Ok(())
    }
}
