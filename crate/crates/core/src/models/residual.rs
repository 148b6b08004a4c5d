//! Residual dynamics: a physics-constrained base model plus a Transformer
//! correction head over the same inputs. The correction head is
//! zero-initialized, so before training the combination is exactly the
//! base model; training shapes the correction to absorb what the physics
//! core cannot express (actuator lag, surface changes, unmodeled effects).

use super::ddm::{DdmConfig, DdmNet};
use super::transformer::{TransNet, TransformerConfig};
use super::{normalized_mse_grad, DynamicsModel, HistoryWindow, TrainableDynamics};
use crate::data::{NormStats, TransitionSample};
use crate::error::Result;
use crate::nn::ParamStore;
use crate::rng::DetRng;
use crate::vehicle::{Action, BodyDelta, SurfaceLabel};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[derive(Default)]
pub struct ResidualConfig {
    pub base: DdmConfig,
    pub correction: TransformerConfig,
}


impl ResidualConfig {
    /// Surface-conditional residual over the default base.
    pub fn conditional() -> Self {
        let mut cfg = Self::default();
        cfg.correction.surface_conditional = true;
        cfg
    }
}

/// Base + correction sharing one parameter store; both parts train jointly.
pub struct ResidualDynamics {
    base: DdmNet,
    correction: TransNet,
    norm: NormStats,
    store: ParamStore,
}

impl ResidualDynamics {
    pub fn new(cfg: ResidualConfig, norm: NormStats, seed: u64) -> Result<Self> {
        norm.validate()?;
        if cfg.base.history != cfg.correction.history {
            return Err(crate::error::Error::Incompatible(alloc::format!(
                "base history {} != correction history {}",
                cfg.base.history,
                cfg.correction.history
            )));
        }
        let mut store = ParamStore::new();
        let mut rng = DetRng::seed(seed);
        let base = DdmNet::declare(&mut store, &mut rng, "base", cfg.base)?;
        let correction = TransNet::declare(&mut store, &mut rng, "res", cfg.correction)?;
        Ok(Self { base, correction, norm, store })
    }

    /// The base model's prediction alone (diagnostics and tests).
    pub fn base_prediction(&self, history: &HistoryWindow, action: Action) -> Result<BodyDelta> {
        Ok(self.base.forward(&self.store, &self.norm, history, action)?.0)
    }
}

impl DynamicsModel for ResidualDynamics {
    fn predict(
        &self,
        history: &HistoryWindow,
        action: Action,
        surface: Option<SurfaceLabel>,
    ) -> Result<BodyDelta> {
        let (b, _) = self.base.forward(&self.store, &self.norm, history, action)?;
        let (c, _) = self.correction.forward(&self.store, &self.norm, history, action, surface)?;
        let ba = b.as_array();
        let ca = c.as_array();
        BodyDelta::new(
            ba[0] + ca[0],
            ba[1] + ca[1],
            ba[2] + ca[2],
            ba[3] + ca[3],
            ba[4] + ca[4],
            ba[5] + ca[5],
        )
    }

    fn surface_conditional(&self) -> bool {
        self.correction.cfg.surface_conditional
    }

    fn history_len(&self) -> usize {
        self.base.cfg.history
    }
}

impl TrainableDynamics for ResidualDynamics {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn norm(&self) -> &NormStats {
        &self.norm
    }

    fn sample_loss_grad(&self, sample: &TransitionSample, grads: &mut ParamStore) -> Result<f64> {
        let win = HistoryWindow::new(sample.history.clone())?;
        let surface =
            if self.correction.cfg.surface_conditional { Some(sample.surface) } else { None };
        let (b, base_cache) = self.base.forward(&self.store, &self.norm, &win, sample.action)?;
        let (c, corr_cache) =
            self.correction.forward(&self.store, &self.norm, &win, sample.action, surface)?;
        let ba = b.as_array();
        let ca = c.as_array();
        let pred = BodyDelta::new(
            ba[0] + ca[0],
            ba[1] + ca[1],
            ba[2] + ca[2],
            ba[3] + ca[3],
            ba[4] + ca[4],
            ba[5] + ca[5],
        )?;
        let (loss, g) = normalized_mse_grad(&pred, &sample.target, &self.norm);
        // The sum routes the same upstream gradient into both parts.
        self.base.backward(&self.store, &base_cache, &g, grads)?;
        self.correction.backward(&self.store, &self.norm, &corr_cache, &g, grads)?;
        Ok(loss)
    }
}
