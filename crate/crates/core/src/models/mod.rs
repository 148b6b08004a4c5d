//! Dynamics-model families behind a single one-step prediction interface:
//! given a window of recent body-frame deltas and actions, the current
//! action, and (optionally) the surface label, predict the next body delta.
//!
//! Four families are provided: a kinematic bicycle with learned actuation
//! MLPs, a physics-constrained differentiable model with a recurrent
//! parameter encoder, a Transformer over the history window, and a residual
//! combination of the last two.

pub mod ddm;
pub mod dual;
pub mod guard;
pub mod kinematic;
pub mod residual;
pub mod rollout;
pub mod train;
pub mod transformer;

pub use ddm::{DdmConfig, DdmModel, FixedChassis};
pub use dual::{Dual, Scalar};
pub use guard::{PhysicsGuardBounds, GUARDED_NAMES, N_GUARDED};
pub use kinematic::{KinematicConfig, KinematicModel};
pub use residual::{ResidualConfig, ResidualDynamics};
pub use rollout::autoregressive_rollout;
pub use train::{train_dynamics, LossCurve, TrainConfig};
pub use transformer::{TransformerConfig, TransformerDynamics};

use crate::data::{NormStats, TransitionSample};
use crate::error::{Error, Result};
use crate::nn::{tanh_backward, tanh_forward, Dense, Init, Mat, ParamStore};
use crate::rng::DetRng;
use crate::vehicle::{Action, BodyDelta, SurfaceLabel, CONTROL_DT};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// Fixed-length window of `(body delta, action)` pairs, oldest first. The
/// delta in pair `i` ends at step `i`; the action in pair `i` was applied at
/// step `i` (its effect shows up in pair `i+1`).
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryWindow {
    pairs: Vec<(BodyDelta, Action)>,
}

impl HistoryWindow {
    pub fn new(pairs: Vec<(BodyDelta, Action)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::TooShort("history window must be non-empty"));
        }
        Ok(Self { pairs })
    }

    /// A rest window: zero deltas and zero actions, e.g. for episodes that
    /// start from standstill.
    pub fn stationary(len: usize) -> Result<Self> {
        Self::new(vec![(BodyDelta::zero(), Action { tau: 0.0, delta: 0.0 }); len.max(1)])
    }

    /// A window consistent with steady straight driving at `vx`.
    pub fn steady_straight(len: usize, vx: f64) -> Result<Self> {
        let d = BodyDelta::new(vx * CONTROL_DT, 0.0, 0.0, 0.0, 0.0, 0.0)?;
        Self::new(vec![(d, Action { tau: 0.0, delta: 0.0 }); len.max(1)])
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn pairs(&self) -> &[(BodyDelta, Action)] {
        &self.pairs
    }

    pub fn last(&self) -> &(BodyDelta, Action) {
        self.pairs.last().expect("window is non-empty by construction")
    }

    /// Appends the newest pair and evicts the oldest, keeping the length.
    pub fn push(&mut self, delta: BodyDelta, action: Action) {
        self.pairs.remove(0);
        self.pairs.push((delta, action));
    }
}

/// Longitudinal, lateral, and yaw velocity implied by the newest history
/// delta: over one control period the chassis translates with the mean
/// velocity, so `v_t ≈ d_pos/dt + dv/2`. Exact for constant acceleration
/// without rotation; O(dphi) otherwise.
pub fn estimate_velocity(history: &HistoryWindow) -> (f64, f64, f64) {
    let (d, _) = history.last();
    (
        d.dx_b / CONTROL_DT + 0.5 * d.dvx,
        d.dy_b / CONTROL_DT + 0.5 * d.dvy,
        d.dphi / CONTROL_DT + 0.5 * d.domega,
    )
}

/// Wheel angle implied by no-slip geometry, `atan(L·omega/vx)`, clamped to
/// a physical range; zero near standstill where the geometry degenerates.
pub fn estimate_wheel_angle(vx: f64, omega: f64, wheelbase: f64) -> f64 {
    if vx.abs() < 0.5 {
        0.0
    } else {
        dual::real::atan(wheelbase * omega / vx).clamp(-0.6, 0.6)
    }
}

/// One-step dynamics prediction interface shared by every family.
pub trait DynamicsModel {
    /// Predicts the body delta over the next control period. Models that
    /// are not surface-conditional ignore `surface`.
    fn predict(
        &self,
        history: &HistoryWindow,
        action: Action,
        surface: Option<SurfaceLabel>,
    ) -> Result<BodyDelta>;

    /// Whether the model consumes surface labels.
    fn surface_conditional(&self) -> bool;

    /// History length the model was built for.
    fn history_len(&self) -> usize;
}

/// Training-side interface: parameter access plus per-sample loss and
/// gradient. The trainer accumulates sample gradients in a fixed order, so
/// results are bit-reproducible under a seed.
pub trait TrainableDynamics: DynamicsModel {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    fn norm(&self) -> &NormStats;

    /// Accumulates `dL/dparams` for one sample into `grads`; returns the
    /// sample loss.
    fn sample_loss_grad(&self, sample: &TransitionSample, grads: &mut ParamStore) -> Result<f64>;

    /// Loss only (validation path).
    fn sample_loss(&self, sample: &TransitionSample) -> Result<f64> {
        let win = HistoryWindow::new(sample.history.clone())?;
        let pred = self.predict(&win, sample.action, Some(sample.surface))?;
        Ok(normalized_mse(&pred, &sample.target, self.norm()))
    }
}

/// Mean squared error over the six delta components, each scaled by the
/// train-split standard deviation so no component dominates by unit choice.
pub fn normalized_mse(pred: &BodyDelta, target: &BodyDelta, norm: &NormStats) -> f64 {
    let p = pred.as_array();
    let t = target.as_array();
    let mut acc = 0.0;
    for i in 0..6 {
        let e = (p[i] - t[i]) / norm.delta_std[i];
        acc += e * e;
    }
    acc / 6.0
}

/// Loss and `dL/dpred` in raw (denormalized) units.
pub fn normalized_mse_grad(
    pred: &BodyDelta,
    target: &BodyDelta,
    norm: &NormStats,
) -> (f64, [f64; 6]) {
    let p = pred.as_array();
    let t = target.as_array();
    let mut loss = 0.0;
    let mut g = [0.0; 6];
    for i in 0..6 {
        let s2 = norm.delta_std[i] * norm.delta_std[i];
        let e = p[i] - t[i];
        loss += e * e / s2;
        g[i] = 2.0 * e / (6.0 * s2);
    }
    (loss / 6.0, g)
}

/// Normalized per-step features for sequence models: the 6 delta components
/// then the 2 action components.
pub fn pair_features(norm: &NormStats, delta: &BodyDelta, action: &Action) -> [f64; 8] {
    let d = norm.norm_delta(delta);
    let a = norm.norm_action(action);
    [d[0], d[1], d[2], d[3], d[4], d[5], a[0], a[1]]
}

/// A small fully connected network with tanh hidden activations and a
/// linear output layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Inputs to each layer, saved during forward for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    xs: Vec<Mat>,
}

impl Mlp {
    /// `dims` is `[in, hidden…, out]`; hidden weights are fan-in
    /// initialized, the output layer takes `head_init`.
    pub fn declare(
        store: &mut ParamStore,
        rng: &mut DetRng,
        prefix: &str,
        dims: &[usize],
        head_init: Init,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidParam(format!(
                "mlp {prefix} needs at least input and output dims"
            )));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let init = if i + 2 == dims.len() { head_init } else { Init::FanIn };
            layers.push(Dense::declare(
                store,
                rng,
                &format!("{prefix}.l{i}"),
                dims[i],
                dims[i + 1],
                init,
            )?);
        }
        Ok(Self { layers })
    }

    pub fn forward(&self, store: &ParamStore, x: &Mat) -> Result<(Mat, MlpCache)> {
        let mut xs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let y = layer.forward(store, &cur)?;
            xs.push(cur);
            cur = if i + 1 < self.layers.len() { tanh_forward(&y) } else { y };
        }
        Ok((cur, MlpCache { xs }))
    }

    /// Returns the input gradient; parameter gradients accumulate into
    /// `grads`.
    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &MlpCache,
        grad_y: &Mat,
        grads: &mut ParamStore,
    ) -> Result<Mat> {
        let mut g = grad_y.clone();
        for i in (0..self.layers.len()).rev() {
            if i + 1 < self.layers.len() {
                // cache.xs[i + 1] is the tanh output feeding layer i + 1.
                g = tanh_backward(&cache.xs[i + 1], &g);
            }
            g = self.layers[i].backward(store, &cache.xs[i], &g, grads)?;
        }
        Ok(g)
    }
}

/// All model families under one dispatchable type, for checkpoint loading
/// and evaluation tables. Only a handful of instances ever exist at once,
/// so the variant size spread is not worth boxing.
#[allow(clippy::large_enum_variant)]
pub enum AnyDynamics {
    Kinematic(KinematicModel),
    Ddm(DdmModel),
    Transformer(TransformerDynamics),
    Residual(ResidualDynamics),
}

impl AnyDynamics {
    /// Stable identifier written into checkpoints.
    pub fn family_tag(&self) -> &'static str {
        match self {
            AnyDynamics::Kinematic(_) => "kinematic",
            AnyDynamics::Ddm(_) => "ddm",
            AnyDynamics::Transformer(_) => "transformer",
            AnyDynamics::Residual(_) => "residual",
        }
    }
}

impl DynamicsModel for AnyDynamics {
    fn predict(
        &self,
        history: &HistoryWindow,
        action: Action,
        surface: Option<SurfaceLabel>,
    ) -> Result<BodyDelta> {
        match self {
            AnyDynamics::Kinematic(m) => m.predict(history, action, surface),
            AnyDynamics::Ddm(m) => m.predict(history, action, surface),
            AnyDynamics::Transformer(m) => m.predict(history, action, surface),
            AnyDynamics::Residual(m) => m.predict(history, action, surface),
        }
    }

    fn surface_conditional(&self) -> bool {
        match self {
            AnyDynamics::Kinematic(m) => m.surface_conditional(),
            AnyDynamics::Ddm(m) => m.surface_conditional(),
            AnyDynamics::Transformer(m) => m.surface_conditional(),
            AnyDynamics::Residual(m) => m.surface_conditional(),
        }
    }

    fn history_len(&self) -> usize {
        match self {
            AnyDynamics::Kinematic(m) => m.history_len(),
            AnyDynamics::Ddm(m) => m.history_len(),
            AnyDynamics::Transformer(m) => m.history_len(),
            AnyDynamics::Residual(m) => m.history_len(),
        }
    }
}

impl TrainableDynamics for AnyDynamics {
    fn store(&self) -> &ParamStore {
        match self {
            AnyDynamics::Kinematic(m) => m.store(),
            AnyDynamics::Ddm(m) => m.store(),
            AnyDynamics::Transformer(m) => m.store(),
            AnyDynamics::Residual(m) => m.store(),
        }
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        match self {
            AnyDynamics::Kinematic(m) => m.store_mut(),
            AnyDynamics::Ddm(m) => m.store_mut(),
            AnyDynamics::Transformer(m) => m.store_mut(),
            AnyDynamics::Residual(m) => m.store_mut(),
        }
    }

    fn norm(&self) -> &NormStats {
        match self {
            AnyDynamics::Kinematic(m) => m.norm(),
            AnyDynamics::Ddm(m) => m.norm(),
            AnyDynamics::Transformer(m) => m.norm(),
            AnyDynamics::Residual(m) => m.norm(),
        }
    }

    fn sample_loss_grad(&self, sample: &TransitionSample, grads: &mut ParamStore) -> Result<f64> {
        match self {
            AnyDynamics::Kinematic(m) => m.sample_loss_grad(sample, grads),
            AnyDynamics::Ddm(m) => m.sample_loss_grad(sample, grads),
            AnyDynamics::Transformer(m) => m.sample_loss_grad(sample, grads),
            AnyDynamics::Residual(m) => m.sample_loss_grad(sample, grads),
        }
    }
}

/// Dead-reckoning helper used by several models: `x` as a 1×n row matrix.
pub(crate) fn row(values: &[f64]) -> Mat {
    Mat::row_vec(values.to_vec())
}

/// Convenience: y = mlp(x) for a single row without keeping the cache.
pub(crate) fn mlp_scalar(mlp: &Mlp, store: &ParamStore, inputs: &[f64]) -> Result<f64> {
    let (y, _) = mlp.forward(store, &row(inputs))?;
    Ok(y.at(0, 0))
}
