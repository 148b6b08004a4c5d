//! Open-loop dynamics evaluation against held-out logs: single-step
//! displacement error plus short-horizon autoregressive rollouts.
//!
//! Both metrics condition on ground truth only: one-step predictions start
//! from the true state with the true history, and rollouts replay the logged
//! actions and surface labels while the model consumes its own predicted
//! deltas as history (autoregressive in the dynamics, teacher-forced in the
//! commands).

use crate::data::Log10Hz;
use crate::error::{Error, Result};
use crate::models::{DynamicsModel, HistoryWindow};
use crate::vehicle::{compose_delta, delta_between, VehicleState};
use alloc::format;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};

/// Autoregressive rollout length (control steps).
pub const ROLLOUT_STEPS: usize = 10;

/// Open-loop accuracy summary. All errors are Euclidean position errors in
/// meters, averaged over anchors (and over rollout steps for `ade10`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopReport {
    /// Single-step displacement error: one predicted delta applied from the
    /// true state, compared to the next logged state.
    pub ssde: f64,
    /// Mean displacement over all steps of [`ROLLOUT_STEPS`]-step rollouts.
    pub ade10: f64,
    /// Displacement at the final rollout step.
    pub fde10: f64,
    /// Anchors contributing to `ssde`.
    pub one_step_anchors: usize,
    /// Anchors contributing to `ade10` / `fde10` (anchors without
    /// [`ROLLOUT_STEPS`] logged future steps are skipped).
    pub rollout_anchors: usize,
}

fn position_error(a: &VehicleState, b: &VehicleState) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// The history window ending at step `t` of `log`: `h` (delta, action) pairs
/// with the delta ending at each step paired with the action applied there.
fn window_at(log: &Log10Hz, t: usize, h: usize) -> Result<HistoryWindow> {
    let mut pairs = Vec::with_capacity(h);
    for i in t + 1 - h..=t {
        pairs.push((delta_between(&log.states[i - 1], &log.states[i])?, log.actions[i]));
    }
    HistoryWindow::new(pairs)
}

/// Evaluates `model` on the logs selected by `ids`, anchoring a prediction
/// at every step `t ∈ [h, len−2]`. Rollout metrics additionally require
/// `ROLLOUT_STEPS` logged future steps; shorter tails are skipped. Errors if
/// either metric ends up with zero anchors.
pub fn open_loop_eval(
    model: &dyn DynamicsModel,
    logs: &[Log10Hz],
    ids: &[usize],
    h: usize,
) -> Result<OpenLoopReport> {
    if h == 0 {
        return Err(Error::InvalidParam("history length must be >= 1".into()));
    }
    let mut one_step_sum = 0.0;
    let mut one_step_anchors = 0usize;
    let mut ade_sum = 0.0;
    let mut fde_sum = 0.0;
    let mut rollout_anchors = 0usize;

    for &id in ids {
        let log = logs
            .get(id)
            .ok_or_else(|| Error::OutOfRange(format!("log id {id} >= {}", logs.len())))?;
        let n = log.states.len();
        for t in h..n.saturating_sub(1) {
            let window = window_at(log, t, h)?;
            let pred = model.predict(&window, log.actions[t], Some(log.surfaces[t]))?;
            let next = compose_delta(&log.states[t], &pred)?;
            one_step_sum += position_error(&next, &log.states[t + 1]);
            one_step_anchors += 1;

            if t + ROLLOUT_STEPS >= n {
                continue;
            }
            let mut window = window;
            let mut sim = log.states[t];
            let mut last_err = 0.0;
            for k in 0..ROLLOUT_STEPS {
                let action = log.actions[t + k];
                let pred = model.predict(&window, action, Some(log.surfaces[t + k]))?;
                sim = compose_delta(&sim, &pred)?;
                window.push(pred, action);
                last_err = position_error(&sim, &log.states[t + k + 1]);
                ade_sum += last_err;
            }
            fde_sum += last_err;
            rollout_anchors += 1;
        }
    }

    if one_step_anchors == 0 {
        return Err(Error::TooShort("no log yields a complete history window"));
    }
    if rollout_anchors == 0 {
        return Err(Error::TooShort("no anchor has a full rollout horizon of logged steps"));
    }
    Ok(OpenLoopReport {
        ssde: one_step_sum / one_step_anchors as f64,
        ade10: ade_sum / (rollout_anchors * ROLLOUT_STEPS) as f64,
        fde10: fde_sum / rollout_anchors as f64,
        one_step_anchors,
        rollout_anchors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;
    use crate::testutil::TestBicycle;
    use crate::vehicle::{Action, BodyDelta, SurfaceLabel, CONTROL_DT};
    use alloc::vec;

    const H: usize = 6;

    /// A model that predicts a fixed delta regardless of inputs.
    struct ConstDelta(BodyDelta);

    impl DynamicsModel for ConstDelta {
        fn predict(
            &self,
            _history: &HistoryWindow,
            _action: Action,
            _surface: Option<SurfaceLabel>,
        ) -> Result<BodyDelta> {
            Ok(self.0)
        }

        fn surface_conditional(&self) -> bool {
            false
        }

        fn history_len(&self) -> usize {
            H
        }
    }

    /// An affine toy model: responds to the last history delta and the
    /// action with fixed coefficients. History-dependent, so autoregressive
    /// rollouts genuinely feed back.
    struct AffineModel;

    impl DynamicsModel for AffineModel {
        fn predict(
            &self,
            history: &HistoryWindow,
            action: Action,
            _surface: Option<SurfaceLabel>,
        ) -> Result<BodyDelta> {
            let (d, _) = *history.last();
            BodyDelta::new(
                0.9 * d.dx_b + 0.05 * action.tau,
                0.8 * d.dy_b + 0.02 * action.delta,
                0.7 * d.dphi + 0.03 * action.delta,
                0.5 * d.dvx + 0.01 * action.tau,
                0.5 * d.dvy,
                0.6 * d.domega,
            )
        }

        fn surface_conditional(&self) -> bool {
            false
        }

        fn history_len(&self) -> usize {
            H
        }
    }

    /// Rolls a model from a moving start to produce a self-consistent log.
    fn log_from_model(model: &dyn DynamicsModel, n: usize, seed: u64) -> Log10Hz {
        let mut rng = DetRng::seed(seed);
        let mut states = vec![VehicleState::new(0.0, 0.0, 0.0, rng.uniform(4.0, 9.0), 0.0, 0.0)
            .unwrap()];
        let mut window = HistoryWindow::steady_straight(H, states[0].vx).unwrap();
        let mut actions = Vec::new();
        for _ in 1..n {
            let a = Action::clamped(rng.uniform(-0.5, 0.8), rng.uniform(-0.4, 0.4)).unwrap();
            let d = model.predict(&window, a, Some(SurfaceLabel::Asphalt)).unwrap();
            states.push(compose_delta(states.last().unwrap(), &d).unwrap());
            window.push(d, a);
            actions.push(a);
        }
        let surfaces = vec![SurfaceLabel::Asphalt; n];
        Log10Hz { states, actions, surfaces }
    }

    #[test]
    fn model_evaluated_on_its_own_rollout_scores_near_zero() {
        // The log was generated by the plant itself, so predictions match
        // the logged transitions up to delta_between/compose round-trip
        // noise (~1e-15 per step).
        let logs = vec![log_from_model(&TestBicycle, 40, 3)];
        let report = open_loop_eval(&TestBicycle, &logs, &[0], H).unwrap();
        assert!(report.ssde < 1e-9, "ssde {}", report.ssde);
        assert!(report.ade10 < 1e-9, "ade10 {}", report.ade10);
        assert!(report.fde10 < 1e-9, "fde10 {}", report.fde10);
        assert_eq!(report.one_step_anchors, 40 - 1 - H);
        assert_eq!(report.rollout_anchors, 40 - ROLLOUT_STEPS - H);
    }

    #[test]
    fn straight_line_overshoot_hand_values() {
        // True motion: 1.0 m per step along +x. Model: 1.1 m per step with
        // exact heading. Error after k steps is 0.1·k, so SSDE = 0.1,
        // ADE@10 = 0.1·(1+…+10)/10 = 0.55, FDE@10 = 1.0.
        let n = H + ROLLOUT_STEPS + 5;
        let v = 1.0 / CONTROL_DT;
        let states: Vec<VehicleState> = (0..n)
            .map(|t| VehicleState::new(t as f64, 0.0, 0.0, v, 0.0, 0.0).unwrap())
            .collect();
        let log = Log10Hz {
            states,
            actions: vec![Action { tau: 0.0, delta: 0.0 }; n - 1],
            surfaces: vec![SurfaceLabel::Asphalt; n],
        };
        let model =
            ConstDelta(BodyDelta::new(1.1, 0.0, 0.0, 0.0, 0.0, 0.0).unwrap());
        let report = open_loop_eval(&model, &[log], &[0], H).unwrap();
        assert!((report.ssde - 0.1).abs() < 1e-12, "ssde {}", report.ssde);
        assert!((report.ade10 - 0.55).abs() < 1e-12, "ade10 {}", report.ade10);
        assert!((report.fde10 - 1.0).abs() < 1e-12, "fde10 {}", report.fde10);
    }

    /// Independent re-implementation: its own window bookkeeping (plain
    /// vectors, no HistoryWindow), its own pose composition written from the
    /// rotation formula, and its own accumulation order.
    fn brute_force(model: &dyn DynamicsModel, log: &Log10Hz, h: usize) -> (f64, f64, f64, usize, usize) {
        let n = log.states.len();
        let dist = |x: f64, y: f64, s: &VehicleState| ((x - s.x).powi(2) + (y - s.y).powi(2)).sqrt();
        let mut ssde = Vec::new();
        let mut ade = Vec::new();
        let mut fde = Vec::new();
        for t in h..n - 1 {
            let mut pairs = Vec::new();
            for i in (t - h + 1)..(t + 1) {
                let a = &log.states[i - 1];
                let b = &log.states[i];
                // Body-frame displacement: rotate the global displacement
                // into a's frame.
                let (gx, gy) = (b.x - a.x, b.y - a.y);
                let d = BodyDelta::new(
                    a.phi.cos() * gx + a.phi.sin() * gy,
                    -a.phi.sin() * gx + a.phi.cos() * gy,
                    {
                        let mut r = b.phi - a.phi;
                        while r >= core::f64::consts::PI {
                            r -= 2.0 * core::f64::consts::PI;
                        }
                        while r < -core::f64::consts::PI {
                            r += 2.0 * core::f64::consts::PI;
                        }
                        r
                    },
                    b.vx - a.vx,
                    b.vy - a.vy,
                    b.omega - a.omega,
                )
                .unwrap();
                pairs.push((d, log.actions[i]));
            }
            let window = HistoryWindow::new(pairs.clone()).unwrap();
            let pred = model.predict(&window, log.actions[t], Some(log.surfaces[t])).unwrap();
            let s = &log.states[t];
            let px = s.x + s.phi.cos() * pred.dx_b - s.phi.sin() * pred.dy_b;
            let py = s.y + s.phi.sin() * pred.dx_b + s.phi.cos() * pred.dy_b;
            ssde.push(dist(px, py, &log.states[t + 1]));

            if t + ROLLOUT_STEPS < n {
                let (mut x, mut y, mut phi) = (s.x, s.y, s.phi);
                let mut errs = Vec::new();
                for k in 0..ROLLOUT_STEPS {
                    let w = HistoryWindow::new(pairs.clone()).unwrap();
                    let a = log.actions[t + k];
                    let pred = model.predict(&w, a, Some(log.surfaces[t + k])).unwrap();
                    x += phi.cos() * pred.dx_b - phi.sin() * pred.dy_b;
                    y += phi.sin() * pred.dx_b + phi.cos() * pred.dy_b;
                    phi += pred.dphi;
                    pairs.remove(0);
                    pairs.push((pred, a));
                    errs.push(dist(x, y, &log.states[t + k + 1]));
                }
                ade.push(errs.iter().sum::<f64>() / errs.len() as f64);
                fde.push(errs[ROLLOUT_STEPS - 1]);
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        (mean(&ssde), mean(&ade), mean(&fde), ssde.len(), ade.len())
    }

    #[test]
    fn matches_brute_force_oracle_on_random_logs() {
        for seed in 0..10u64 {
            let n = 20 + (seed as usize % 4) * 7;
            let log = log_from_model(&TestBicycle, n, 100 + seed);
            let report = open_loop_eval(&AffineModel, std::slice::from_ref(&log), &[0], H).unwrap();
            let (ssde, ade, fde, n1, nr) = brute_force(&AffineModel, &log, H);
            assert!((report.ssde - ssde).abs() < 1e-9, "seed {seed}");
            assert!((report.ade10 - ade).abs() < 1e-9, "seed {seed}");
            assert!((report.fde10 - fde).abs() < 1e-9, "seed {seed}");
            assert_eq!(report.one_step_anchors, n1);
            assert_eq!(report.rollout_anchors, nr);
            assert!(report.ssde >= 0.0 && report.ade10 >= 0.0 && report.fde10 >= 0.0);
        }
    }

    #[test]
    fn short_tails_are_skipped_from_rollout_metrics() {
        // H+2 states: exactly one one-step anchor, no rollout anchor.
        let short = log_from_model(&TestBicycle, H + 2, 7);
        let long = log_from_model(&TestBicycle, 40, 8);
        let logs = vec![short, long];
        let report = open_loop_eval(&AffineModel, &logs, &[0, 1], H).unwrap();
        assert_eq!(report.one_step_anchors, 1 + (40 - 1 - H));
        assert_eq!(report.rollout_anchors, 40 - ROLLOUT_STEPS - H);

        // Only short logs: rollout metrics have nothing to average.
        let short = log_from_model(&TestBicycle, H + 2, 9);
        assert!(open_loop_eval(&AffineModel, &[short], &[0], H).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        let log = log_from_model(&TestBicycle, 30, 1);
        assert!(open_loop_eval(&AffineModel, std::slice::from_ref(&log), &[1], H).is_err());
        assert!(open_loop_eval(&AffineModel, &[log], &[0], 0).is_err());
    }
}
