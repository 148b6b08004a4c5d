//! Kinematic single-track model with learned actuation: two small MLPs map
//! (throttle, speed) to longitudinal acceleration and (steer command, wheel
//! angle) to steering rate; a no-slip bicycle integrates both over one
//! control period.
//!
//! The no-slip convention: the model reports zero lateral velocity at the
//! CoG — turning is expressed purely through the yaw delta and the rotated
//! position delta. The yaw rate is the slip-free `v/L·tan(wheel angle)`.

use super::{
    estimate_velocity, estimate_wheel_angle, mlp_scalar, normalized_mse_grad, row, DynamicsModel,
    HistoryWindow, Mlp, MlpCache, TrainableDynamics,
};
use crate::data::{NormStats, TransitionSample};
use crate::error::{Error, Result};
use crate::nn::{Init, Mat, ParamStore};
use crate::rng::DetRng;
use crate::vehicle::{Action, BodyDelta, SurfaceLabel, CONTROL_DT};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Inner integration substeps per control period.
const SUBSTEPS: usize = 4;
/// Speed normalization for the acceleration MLP input.
const V_SCALE: f64 = 10.0;
/// Saturation bounds keeping the integration stable under untrained MLPs.
const A_MAX: f64 = 20.0;
const R_MAX: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicConfig {
    /// History length the model expects.
    pub history: usize,
    /// Hidden width of both MLPs.
    pub hidden: usize,
    /// Wheelbase, m.
    pub wheelbase: f64,
}

impl Default for KinematicConfig {
    fn default() -> Self {
        Self { history: crate::data::HISTORY_LEN, hidden: 32, wheelbase: 2.6 }
    }
}

/// Kinematic bicycle + actuation MLPs.
pub struct KinematicModel {
    cfg: KinematicConfig,
    norm: NormStats,
    store: ParamStore,
    accel_mlp: Mlp,
    steer_mlp: Mlp,
}

/// Per-substep values saved for the hand-written integration adjoint.
struct SubstepCache {
    vm: f64,
    tan_dm: f64,
    cos_dm: f64,
    sin_thm: f64,
    cos_thm: f64,
}

/// Everything the backward pass needs from one forward evaluation.
struct ForwardCache {
    accel_cache: MlpCache,
    steer_cache: MlpCache,
    a: f64,
    r: f64,
    v_end: f64,
    d_end: f64,
    steps: Vec<SubstepCache>,
}

impl KinematicModel {
    pub fn new(cfg: KinematicConfig, norm: NormStats, seed: u64) -> Result<Self> {
        if cfg.history == 0 || cfg.hidden == 0 {
            return Err(Error::InvalidParam("kinematic history/hidden must be positive".into()));
        }
        if cfg.wheelbase <= 0.0 || cfg.wheelbase.is_nan() {
            return Err(Error::InvalidParam("wheelbase must be positive".into()));
        }
        norm.validate()?;
        let mut store = ParamStore::new();
        let mut rng = DetRng::seed(seed);
        let dims = [2, cfg.hidden, cfg.hidden, 1];
        let accel_mlp = Mlp::declare(&mut store, &mut rng, "kin.accel", &dims, Init::Zeros)?;
        let steer_mlp = Mlp::declare(&mut store, &mut rng, "kin.steer", &dims, Init::Zeros)?;
        Ok(Self { cfg, norm, store, accel_mlp, steer_mlp })
    }

    pub fn config(&self) -> &KinematicConfig {
        &self.cfg
    }

    /// Saturated acceleration produced for `(tau, vx)`, m/s².
    pub fn accel_output(&self, tau: f64, vx: f64) -> Result<f64> {
        let a_in = self.accel_inputs(tau, vx);
        Ok(saturate(mlp_scalar(&self.accel_mlp, &self.store, &a_in)?, A_MAX))
    }

    /// Saturated steering rate for `(delta command, wheel angle)`, rad/s.
    pub fn steer_rate_output(&self, delta_cmd: f64, wheel_angle: f64) -> Result<f64> {
        let s_in = self.steer_inputs(delta_cmd, wheel_angle);
        Ok(saturate(mlp_scalar(&self.steer_mlp, &self.store, &s_in)?, R_MAX))
    }

    fn accel_inputs(&self, tau: f64, vx: f64) -> [f64; 2] {
        let a = self.norm.norm_action(&Action { tau, delta: 0.0 });
        [a[0], vx / V_SCALE]
    }

    fn steer_inputs(&self, delta_cmd: f64, wheel_angle: f64) -> [f64; 2] {
        let a = self.norm.norm_action(&Action { tau: 0.0, delta: delta_cmd });
        [a[1], wheel_angle]
    }

    fn forward(
        &self,
        store: &ParamStore,
        history: &HistoryWindow,
        action: Action,
    ) -> Result<(BodyDelta, ForwardCache)> {
        if history.len() != self.cfg.history {
            return Err(Error::ShapeMismatch(alloc::format!(
                "kinematic model expects history {}, got {}",
                self.cfg.history,
                history.len()
            )));
        }
        let (v0, vy0, w0) = estimate_velocity(history);
        let d0 = estimate_wheel_angle(v0, w0, self.cfg.wheelbase);

        let accel_in = row(&self.accel_inputs(action.tau, v0));
        let steer_in = row(&self.steer_inputs(action.delta, d0));
        let (a_out, accel_cache) = self.accel_mlp.forward(store, &accel_in)?;
        let (r_out, steer_cache) = self.steer_mlp.forward(store, &steer_in)?;
        let a_raw = a_out.at(0, 0);
        let r_raw = r_out.at(0, 0);
        let a = saturate(a_raw, A_MAX);
        let r = saturate(r_raw, R_MAX);

        // Midpoint integration of the no-slip bicycle. With constant a and r
        // the straight-line position integral telescopes exactly to
        // v·dt + a·dt²/2, and constant wheel angle gives exactly
        // dphi = v/L·tan(d)·dt.
        let h = CONTROL_DT / SUBSTEPS as f64;
        let l = self.cfg.wheelbase;
        let (mut v, mut d, mut phi, mut x, mut y) = (v0, d0, 0.0, 0.0, 0.0);
        let mut steps = Vec::with_capacity(SUBSTEPS);
        for _ in 0..SUBSTEPS {
            let v1 = v + a * h;
            let d1 = d + r * h;
            let vm = 0.5 * (v + v1);
            let dm = 0.5 * (d + d1);
            let tan_dm = dm.tan();
            let w = vm * tan_dm / l;
            let thm = phi + 0.5 * w * h;
            let (sin_thm, cos_thm) = thm.sin_cos();
            x += vm * cos_thm * h;
            y += vm * sin_thm * h;
            phi += w * h;
            steps.push(SubstepCache { vm, tan_dm, cos_dm: dm.cos(), sin_thm, cos_thm });
            v = v1;
            d = d1;
        }
        let domega = v * d.tan() / l - w0;
        let delta = BodyDelta::new(x, y, phi, a * CONTROL_DT, -vy0, domega)?;
        let cache =
            ForwardCache { accel_cache, steer_cache, a, r, v_end: v, d_end: d, steps };
        Ok((delta, cache))
    }

    /// Reverse pass of the integration: upstream delta gradient in, MLP
    /// parameter gradients out.
    fn backward(
        &self,
        store: &ParamStore,
        cache: &ForwardCache,
        g_delta: &[f64; 6],
        grads: &mut ParamStore,
    ) -> Result<()> {
        let h = CONTROL_DT / SUBSTEPS as f64;
        let l = self.cfg.wheelbase;
        let (gx, gy) = (g_delta[0], g_delta[1]);
        let mut ga = g_delta[3] * CONTROL_DT;
        let mut gr = 0.0;

        // domega = v_end/L·tan(d_end) - w0.
        let tan_de = cache.d_end.tan();
        let cos_de = cache.d_end.cos();
        let mut gv = g_delta[5] * tan_de / l;
        let mut gd = g_delta[5] * cache.v_end / (l * cos_de * cos_de);
        let mut gphi = g_delta[2];

        for s in cache.steps.iter().rev() {
            // Incoming (gv, gd, gphi) are the adjoints of this substep's
            // outputs (v1, d1, phi1).
            let mut gw = gphi * h;
            let mut gvm = (gx * s.cos_thm + gy * s.sin_thm) * h;
            let gthm = s.vm * (gy * s.cos_thm - gx * s.sin_thm) * h;
            gphi += gthm; // thm = phi + w·h/2; phi1 = phi + w·h
            gw += 0.5 * h * gthm;
            gvm += gw * s.tan_dm / l;
            let gdm = gw * s.vm / (l * s.cos_dm * s.cos_dm);
            // vm = v + a·h/2 (two routes through v1 combined); v1 = v + a·h.
            ga += gv * h + 0.5 * gvm * h;
            gr += gd * h + 0.5 * gdm * h;
            gv += gvm;
            gd += gdm;
        }
        // Initial v, d, phi come from history — no trainable inputs there.
        let _ = (gv, gd, gphi);

        let ga_raw = ga * saturate_deriv(cache.a, A_MAX);
        let gr_raw = gr * saturate_deriv(cache.r, R_MAX);
        self.accel_mlp.backward(
            store,
            &cache.accel_cache,
            &Mat::from_vec(1, 1, alloc::vec![ga_raw]),
            grads,
        )?;
        self.steer_mlp.backward(
            store,
            &cache.steer_cache,
            &Mat::from_vec(1, 1, alloc::vec![gr_raw]),
            grads,
        )?;
        Ok(())
    }
}

fn saturate(raw: f64, m: f64) -> f64 {
    m * (raw / m).tanh()
}

/// Derivative of the saturation expressed through its *output* value.
fn saturate_deriv(out: f64, m: f64) -> f64 {
    1.0 - (out / m) * (out / m)
}

impl DynamicsModel for KinematicModel {
    fn predict(
        &self,
        history: &HistoryWindow,
        action: Action,
        _surface: Option<SurfaceLabel>,
    ) -> Result<BodyDelta> {
        Ok(self.forward(&self.store, history, action)?.0)
    }

    fn surface_conditional(&self) -> bool {
        false
    }

    fn history_len(&self) -> usize {
        self.cfg.history
    }
}

impl TrainableDynamics for KinematicModel {
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
        let (pred, cache) = self.forward(&self.store, &win, sample.action)?;
        let (loss, g) = normalized_mse_grad(&pred, &sample.target, &self.norm);
        self.backward(&self.store, &cache, &g, grads)?;
        Ok(loss)
    }
}
