//! Physics-constrained differentiable dynamics model: a recurrent encoder
//! reads the history window and emits raw parameter estimates, the Physics
//! Guard maps them into physical bounds, and a lag-free single-track core
//! integrates one control period from the velocity state implied by the
//! history.
//!
//! The core is generic over [`Scalar`]: prediction runs it on `f64`;
//! training runs it on dual numbers with one tangent per guarded parameter,
//! yielding the exact Jacobian of the delta with respect to the parameters
//! in a single pass.

use super::dual::{real, Dual, Scalar};
use super::guard::{PhysicsGuardBounds, N_GUARDED};
use super::{
    estimate_velocity, normalized_mse_grad, pair_features, row, DynamicsModel, HistoryWindow,
    TrainableDynamics,
};
use crate::data::{NormStats, TransitionSample};
use crate::error::{Error, Result};
use crate::nn::{Dense, GruCache, GruCell, Init, Mat, ParamStore};
use crate::refsim::GRAVITY;
use crate::rng::DetRng;
use crate::vehicle::{Action, BodyDelta, SurfaceLabel, CONTROL_DT};
use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

/// Inner substeps per control period.
pub const DDM_SUBSTEPS: usize = 4;

/// Quantities assumed known (datasheet values), not identified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedChassis {
    pub m: f64,
    pub lf: f64,
    pub lr: f64,
    pub steer_max: f64,
    /// Pacejka curvature factors, fixed at nominal values.
    pub e_front: f64,
    pub e_rear: f64,
    pub v_eps: f64,
    /// Effective friction scale; identification folds surface grip into the
    /// peak factors D, so this stays at 1.
    pub mu: f64,
}

impl Default for FixedChassis {
    fn default() -> Self {
        Self {
            m: 1500.0,
            lf: 1.2,
            lr: 1.4,
            steer_max: 0.5,
            e_front: 0.9,
            e_rear: 0.9,
            v_eps: 0.5,
            mu: 1.0,
        }
    }
}

impl FixedChassis {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("m", self.m),
            ("lf", self.lf),
            ("lr", self.lr),
            ("steer_max", self.steer_max),
            ("v_eps", self.v_eps),
            ("mu", self.mu),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParam(format!("chassis {name} = {v} must be > 0")));
            }
        }
        for (name, v) in [("e_front", self.e_front), ("e_rear", self.e_rear)] {
            if !(0.0..1.5).contains(&v) {
                return Err(Error::InvalidParam(format!("chassis {name} = {v} out of range")));
            }
        }
        Ok(())
    }

    pub fn wheelbase(&self) -> f64 {
        self.lf + self.lr
    }

    pub fn fz_front(&self) -> f64 {
        self.m * GRAVITY * self.lr / self.wheelbase()
    }

    pub fn fz_rear(&self) -> f64 {
        self.m * GRAVITY * self.lf / self.wheelbase()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdmConfig {
    pub history: usize,
    /// Recurrent encoder width.
    pub hidden: usize,
    pub bounds: PhysicsGuardBounds,
    pub chassis: FixedChassis,
}

impl Default for DdmConfig {
    fn default() -> Self {
        Self {
            history: crate::data::HISTORY_LEN,
            hidden: 32,
            bounds: PhysicsGuardBounds::default(),
            chassis: FixedChassis::default(),
        }
    }
}

/// Magic-formula lateral force magnitude, generic over the scalar type.
fn pacejka<S: Scalar>(alpha: S, fz: f64, b: S, c: S, d: S, e: f64, mu: f64) -> S {
    let ba = b * alpha;
    let arg = ba - (ba - ba.atan()).scale(e);
    (c * arg.atan()).sin() * d.scale(mu * fz)
}

/// Integrates one control period of the lag-free single track from body
/// velocities `v0 = (vx, vy, omega)` and returns
/// `[dx_b, dy_b, dphi, dvx, dvy, domega]` in the start body frame.
///
/// Equation structure matches the reference model with the actuator states
/// removed: the steering angle is the command times `steer_max`, the drive
/// force applies instantaneously.
pub(crate) fn single_track_delta<S: Scalar>(
    chassis: &FixedChassis,
    p: &[S; N_GUARDED],
    v0: (f64, f64, f64),
    action: Action,
) -> [S; 6] {
    let dt = CONTROL_DT / DDM_SUBSTEPS as f64;
    let steer = action.delta.clamp(-1.0, 1.0) * chassis.steer_max;
    let tau = action.tau.clamp(-1.0, 1.0);
    let (sin_d, cos_d) = (real::sin(steer), real::cos(steer));
    let m = chassis.m;
    let (fz_f, fz_r) = (chassis.fz_front(), chassis.fz_rear());

    let mut x = S::constant(0.0);
    let mut y = S::constant(0.0);
    let mut phi = S::constant(0.0);
    let mut vx = S::constant(v0.0);
    let mut vy = S::constant(v0.1);
    let mut omega = S::constant(v0.2);

    for _ in 0..DDM_SUBSTEPS {
        let drive = (p[6] - p[7] * vx).scale(tau);
        let fx = drive - p[8] * vx.sign0() - p[9] * vx * vx.abs();
        let denom = vx.abs().max_val(S::constant(chassis.v_eps));
        let alpha_f = (vy + omega.scale(chassis.lf)).atan2(denom) - S::constant(steer);
        let alpha_r = (vy - omega.scale(chassis.lr)).atan2(denom);
        let fy_f = -pacejka(alpha_f, fz_f, p[0], p[1], p[2], chassis.e_front, chassis.mu);
        let fy_r = -pacejka(alpha_r, fz_r, p[3], p[4], p[5], chassis.e_rear, chassis.mu);

        let ax = (fx - fy_f.scale(sin_d)).scale(1.0 / m) + vy * omega;
        let ay = (fy_r + fy_f.scale(cos_d)).scale(1.0 / m) - vx * omega;
        let omega_dot = (fy_f.scale(chassis.lf * cos_d) - fy_r.scale(chassis.lr)) / p[10];

        let mut vx_new = vx + ax.scale(dt);
        // Standstill clamp: resistance alone cannot push the car through
        // zero longitudinal speed.
        if (vx.value() > 0.0 && vx_new.value() < 0.0 && tau <= 0.0)
            || (vx.value() < 0.0 && vx_new.value() > 0.0 && tau >= 0.0)
        {
            vx_new = S::constant(0.0);
        }
        let vy_new = vy + ay.scale(dt);
        let omega_new = omega + omega_dot.scale(dt);
        let (sin_p, cos_p) = (phi.sin(), phi.cos());
        x = x + (vx_new * cos_p - vy_new * sin_p).scale(dt);
        y = y + (vx_new * sin_p + vy_new * cos_p).scale(dt);
        phi = phi + omega_new.scale(dt);
        vx = vx_new;
        vy = vy_new;
        omega = omega_new;
    }

    [
        x,
        y,
        phi,
        vx - S::constant(v0.0),
        vy - S::constant(v0.1),
        omega - S::constant(v0.2),
    ]
}

/// Layer handles for one DDM (no parameter data; shareable inside a
/// combined store, e.g. by the residual model).
#[derive(Debug, Clone)]
pub(crate) struct DdmNet {
    gru: GruCell,
    head: Dense,
    pub(crate) cfg: DdmConfig,
}

pub(crate) struct DdmForward {
    gru_caches: Vec<GruCache>,
    final_h: Mat,
    raw: [f64; N_GUARDED],
    guarded: [f64; N_GUARDED],
    v0: (f64, f64, f64),
    action: Action,
}

impl DdmNet {
    pub(crate) fn declare(
        store: &mut ParamStore,
        rng: &mut DetRng,
        prefix: &str,
        cfg: DdmConfig,
    ) -> Result<Self> {
        if cfg.history == 0 || cfg.hidden == 0 {
            return Err(Error::InvalidParam("ddm history/hidden must be positive".into()));
        }
        cfg.bounds.validate()?;
        cfg.chassis.validate()?;
        let gru = GruCell::declare(store, rng, &format!("{prefix}.gru"), 8, cfg.hidden)?;
        // Zero-initialized head: initial parameters sit at mid-bounds.
        let head =
            Dense::declare(store, rng, &format!("{prefix}.head"), cfg.hidden, N_GUARDED, Init::Zeros)?;
        Ok(Self { gru, head, cfg })
    }

    pub(crate) fn forward(
        &self,
        store: &ParamStore,
        norm: &NormStats,
        history: &HistoryWindow,
        action: Action,
    ) -> Result<(BodyDelta, DdmForward)> {
        if history.len() != self.cfg.history {
            return Err(Error::ShapeMismatch(format!(
                "ddm expects history {}, got {}",
                self.cfg.history,
                history.len()
            )));
        }
        let mut h = Mat::zeros(1, self.cfg.hidden);
        let mut gru_caches = Vec::with_capacity(history.len());
        for (delta, act) in history.pairs() {
            let u = row(&pair_features(norm, delta, act));
            let (h_next, cache) = self.gru.forward(store, &u, &h)?;
            gru_caches.push(cache);
            h = h_next;
        }
        let raw_mat = self.head.forward(store, &h)?;
        let raw: [f64; N_GUARDED] = core::array::from_fn(|i| raw_mat.at(0, i));
        let guarded = self.cfg.bounds.guard(&raw);
        let v0 = estimate_velocity(history);
        let out = single_track_delta::<f64>(&self.cfg.chassis, &guarded, v0, action);
        let delta = BodyDelta::new(out[0], out[1], out[2], out[3], out[4], out[5])?;
        Ok((delta, DdmForward { gru_caches, final_h: h, raw, guarded, v0, action }))
    }

    /// Backpropagates `dL/ddelta` through the physics core (via a dual-
    /// number pass), the guard, the head, and the encoder.
    pub(crate) fn backward(
        &self,
        store: &ParamStore,
        cache: &DdmForward,
        g_delta: &[f64; 6],
        grads: &mut ParamStore,
    ) -> Result<()> {
        let duals: [Dual<N_GUARDED>; N_GUARDED] =
            core::array::from_fn(|i| Dual::seeded(cache.guarded[i], i));
        let out = single_track_delta::<Dual<N_GUARDED>>(
            &self.cfg.chassis,
            &duals,
            cache.v0,
            cache.action,
        );
        let mut g_param = [0.0; N_GUARDED];
        for (i, o) in out.iter().enumerate() {
            for (gp, od) in g_param.iter_mut().zip(&o.d) {
                *gp += g_delta[i] * od;
            }
        }
        let deriv = self.cfg.bounds.guard_deriv(&cache.raw);
        let g_raw: Vec<f64> = (0..N_GUARDED).map(|j| g_param[j] * deriv[j]).collect();
        let mut g_h = self.head.backward(store, &cache.final_h, &Mat::row_vec(g_raw), grads)?;
        for step in cache.gru_caches.iter().rev() {
            let g = self.gru.backward(store, step, &g_h, grads)?;
            g_h = g.g_hidden;
        }
        Ok(())
    }

    /// Guarded parameter estimate for a history window (diagnostics).
    pub(crate) fn identified(
        &self,
        store: &ParamStore,
        norm: &NormStats,
        history: &HistoryWindow,
    ) -> Result<[f64; N_GUARDED]> {
        let (_, fwd) =
            self.forward(store, norm, history, Action { tau: 0.0, delta: 0.0 })?;
        Ok(fwd.guarded)
    }
}

/// Standalone DDM: encoder + guard + physics core with its own parameters.
pub struct DdmModel {
    net: DdmNet,
    norm: NormStats,
    store: ParamStore,
}

impl DdmModel {
    pub fn new(cfg: DdmConfig, norm: NormStats, seed: u64) -> Result<Self> {
        norm.validate()?;
        let mut store = ParamStore::new();
        let mut rng = DetRng::seed(seed);
        let net = DdmNet::declare(&mut store, &mut rng, "ddm", cfg)?;
        Ok(Self { net, norm, store })
    }

    pub fn config(&self) -> &DdmConfig {
        &self.net.cfg
    }

    /// Physical parameters the encoder identifies from this history.
    pub fn identified_params(&self, history: &HistoryWindow) -> Result<[f64; N_GUARDED]> {
        self.net.identified(&self.store, &self.norm, history)
    }
}

impl DynamicsModel for DdmModel {
    fn predict(
        &self,
        history: &HistoryWindow,
        action: Action,
        _surface: Option<SurfaceLabel>,
    ) -> Result<BodyDelta> {
        Ok(self.net.forward(&self.store, &self.norm, history, action)?.0)
    }

    fn surface_conditional(&self) -> bool {
        false
    }

    fn history_len(&self) -> usize {
        self.net.cfg.history
    }
}

impl TrainableDynamics for DdmModel {
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
        let (pred, cache) = self.net.forward(&self.store, &self.norm, &win, sample.action)?;
        let (loss, g) = normalized_mse_grad(&pred, &sample.target, &self.norm);
        self.net.backward(&self.store, &cache, &g, grads)?;
        Ok(loss)
    }
}
