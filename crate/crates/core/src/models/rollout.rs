//! Autoregressive rollout: feed each prediction back into the history
//! window and compose the absolute pose chain.

use super::{DynamicsModel, HistoryWindow};
use crate::error::{Error, Result};
use crate::vehicle::{compose_delta, Action, SurfaceLabel, VehicleState};
use alloc::format;
use alloc::vec::Vec;

/// Rolls the model forward over `actions`, starting from `start` with the
/// given seed window. Returns one predicted state per action. When a
/// surface schedule is given it must cover every step; models that are not
/// surface-conditional ignore the labels.
pub fn autoregressive_rollout(
    model: &dyn DynamicsModel,
    start: &VehicleState,
    history: &HistoryWindow,
    actions: &[Action],
    surfaces: Option<&[SurfaceLabel]>,
) -> Result<Vec<VehicleState>> {
    if actions.is_empty() {
        return Err(Error::TooShort("rollout needs at least one action"));
    }
    if let Some(s) = surfaces {
        if s.len() != actions.len() {
            return Err(Error::ShapeMismatch(format!(
                "surface schedule has {} entries for {} actions",
                s.len(),
                actions.len()
            )));
        }
    }
    let mut window = history.clone();
    let mut state = *start;
    let mut out = Vec::with_capacity(actions.len());
    for (i, &action) in actions.iter().enumerate() {
        let surface = surfaces.map(|s| s[i]);
        let delta = model
            .predict(&window, action, surface)
            .map_err(|e| Error::Diverged(format!("rollout failed at step {i}: {e}")))?;
        state = compose_delta(&state, &delta)?;
        out.push(state);
        window.push(delta, action);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Result;
    use crate::vehicle::BodyDelta;
    use alloc::vec;
    use alloc::vec::Vec;

    /// Test double: returns a fixed delta and records nothing.
    struct ConstModel {
        delta: BodyDelta,
        h: usize,
    }

    impl DynamicsModel for ConstModel {
        fn predict(
            &self,
            history: &HistoryWindow,
            _action: Action,
            _surface: Option<SurfaceLabel>,
        ) -> Result<BodyDelta> {
            assert_eq!(history.len(), self.h);
            Ok(self.delta)
        }

        fn surface_conditional(&self) -> bool {
            false
        }

        fn history_len(&self) -> usize {
            self.h
        }
    }

    /// Test double whose prediction depends on the newest window entry, to
    /// expose the window-maintenance order.
    struct EchoModel {
        h: usize,
    }

    impl DynamicsModel for EchoModel {
        fn predict(
            &self,
            history: &HistoryWindow,
            action: Action,
            _surface: Option<SurfaceLabel>,
        ) -> Result<BodyDelta> {
            let (last, _) = history.last();
            BodyDelta::new(0.9 * last.dx_b + 0.1 + 0.05 * action.tau, 0.0, 0.0, 0.0, 0.0, 0.0)
        }

        fn surface_conditional(&self) -> bool {
            false
        }

        fn history_len(&self) -> usize {
            self.h
        }
    }

    #[test]
    fn zero_delta_model_stays_at_seed_state() {
        let m = ConstModel { delta: BodyDelta::zero(), h: 4 };
        let start = VehicleState::new(3.0, -1.0, 0.7, 5.0, 0.1, 0.02).unwrap();
        let win = HistoryWindow::stationary(4).unwrap();
        let actions = vec![Action { tau: 0.5, delta: 0.2 }; 6];
        let states = autoregressive_rollout(&m, &start, &win, &actions, None).unwrap();
        assert_eq!(states.len(), 6);
        for s in states {
            assert_eq!(s.as_array(), start.as_array());
        }
    }

    #[test]
    fn single_step_equals_predict_plus_compose() {
        let d = BodyDelta::new(1.2, 0.1, 0.05, 0.3, 0.0, 0.01).unwrap();
        let m = ConstModel { delta: d, h: 3 };
        let start = VehicleState::new(0.0, 0.0, 0.3, 8.0, 0.0, 0.0).unwrap();
        let win = HistoryWindow::stationary(3).unwrap();
        let states =
            autoregressive_rollout(&m, &start, &win, &[Action { tau: 0.0, delta: 0.0 }], None)
                .unwrap();
        let direct = compose_delta(&start, &d).unwrap();
        assert_eq!(states[0].as_array(), direct.as_array());
    }

    #[test]
    fn window_matches_ring_buffer_oracle() {
        let h = 5;
        let m = EchoModel { h };
        let start = VehicleState::zero();
        let win = HistoryWindow::stationary(h).unwrap();
        let actions: Vec<Action> = (0..9)
            .map(|i| Action::clamped(0.1 * i as f64 - 0.4, 0.0).unwrap())
            .collect();
        autoregressive_rollout(&m, &start, &win, &actions, None).unwrap();

        // Hand-maintained ring buffer replaying the same recurrence.
        let mut ring: Vec<(BodyDelta, Action)> = win.pairs().to_vec();
        let mut window = win.clone();
        for &a in &actions {
            let last = ring.last().unwrap().0;
            let d = BodyDelta::new(0.9 * last.dx_b + 0.1 + 0.05 * a.tau, 0.0, 0.0, 0.0, 0.0, 0.0)
                .unwrap();
            ring.remove(0);
            ring.push((d, a));
            // Advance the real window the same way the rollout does.
            let dd = m.predict(&window, a, None).unwrap();
            window.push(dd, a);
            assert_eq!(window.pairs(), ring.as_slice());
        }
    }

    #[test]
    fn surface_schedule_length_checked() {
        let m = ConstModel { delta: BodyDelta::zero(), h: 2 };
        let win = HistoryWindow::stationary(2).unwrap();
        let actions = vec![Action { tau: 0.0, delta: 0.0 }; 3];
        let badlen = vec![SurfaceLabel::Asphalt; 2];
        assert!(autoregressive_rollout(
            &m,
            &VehicleState::zero(),
            &win,
            &actions,
            Some(&badlen)
        )
        .is_err());
        assert!(autoregressive_rollout(&m, &VehicleState::zero(), &win, &[], None).is_err());
    }
}
