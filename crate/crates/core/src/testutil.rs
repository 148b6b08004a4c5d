//! Shared test fixtures: a closed-form kinematic plant with real action
//! response, and hand-built scenarios. Used by the policy and evaluation
//! tests, which need a controllable dynamics backend that is cheap, exact,
//! and independent of the trained model families.

use crate::env::{Scenario, StartNoise, SurfaceSpec};
use crate::error::Result;
use crate::models::{estimate_velocity, DynamicsModel, HistoryWindow};
use crate::vehicle::{Action, BodyDelta, SurfaceLabel, Waypoint, CONTROL_DT};
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// A closed-form single-track plant: throttle scales acceleration, steering
/// sets curvature through a small-angle bicycle relation, and the pose delta
/// uses midpoint-heading integration. Zero action coasts at constant speed,
/// so a zero-initialized policy tracks a constant-speed straight reference
/// exactly.
pub(crate) struct TestBicycle;

impl DynamicsModel for TestBicycle {
    fn predict(
        &self,
        history: &HistoryWindow,
        action: Action,
        _surface: Option<SurfaceLabel>,
    ) -> Result<BodyDelta> {
        let (vx0, _, om0) = estimate_velocity(history);
        let v1 = (vx0 + 3.0 * action.tau * CONTROL_DT).max(0.0);
        let v_avg = 0.5 * (vx0 + v1);
        let om1 = v_avg * (0.5 * action.delta).tan() / 2.6;
        let dphi = om1 * CONTROL_DT;
        BodyDelta::new(
            v_avg * CONTROL_DT * (0.5 * dphi).cos(),
            v_avg * CONTROL_DT * (0.5 * dphi).sin(),
            dphi,
            v1 - vx0,
            0.0,
            om1 - om0,
        )
    }

    fn surface_conditional(&self) -> bool {
        false
    }

    fn history_len(&self) -> usize {
        4
    }
}

/// A straight constant-speed reference along +x with `steps + 1` waypoints.
pub(crate) fn straight_scenario(v: f64, steps: usize, start_noise: StartNoise) -> Scenario {
    let waypoints: Vec<Waypoint> = (0..=steps)
        .map(|k| Waypoint { x: v * CONTROL_DT * k as f64, y: 0.0, phi: 0.0, v })
        .collect();
    Scenario::new(waypoints, 3.0, 2.0, steps, SurfaceSpec::Asphalt, start_noise).unwrap()
}

/// Zero start noise for tests that need bit-reproducible starts on the
/// reference exactly.
pub(crate) fn no_noise() -> StartNoise {
    StartNoise { pos: 0.0, heading: 0.0, speed: 0.0 }
}
