//! Vectorized trajectory-tracking environment over a learned dynamics
//! model.
//!
//! An episode tracks a time-indexed reference trajectory inside a corridor:
//! the policy sees ego-frame observations ([`build_observation`]), the
//! transition operator is any [`crate::models::DynamicsModel`], and the
//! reward is multiplicative progress-times-penalties ([`compute_reward`]).
//! [`batch::EnvBatch`] steps many episodes as one batched call with
//! bit-reproducible results for any worker count.

pub mod batch;
pub mod scenario;

pub use batch::{EnvBatch, StepInfo, StepOutput};
pub use scenario::{
    generate_scenarios, PolyProjection, Scenario, ScenarioSpec, StartNoise, SurfaceSpec,
    LOOKAHEAD,
};

use crate::error::{Error, Result};
use crate::vehicle::{to_ego_frame, wrap_angle, Action, EgoDelta, SurfaceLabel, VehicleState};
use alloc::format;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};

/// Observation normalization constants. Raw physical quantities divide by
/// these before reaching the policy, so typical magnitudes sit near ±1.
pub mod obs_scale {
    /// Longitudinal velocity, speed, and waypoint Δv (m/s).
    pub const VEL: f64 = 20.0;
    /// Lateral velocity (m/s).
    pub const LAT_VEL: f64 = 5.0;
    /// Yaw rate (rad/s).
    pub const YAW_RATE: f64 = 2.0;
    /// Waypoint Δx / Δy (m).
    pub const POS: f64 = 20.0;
    /// Heading deltas (rad).
    pub const ANGLE: f64 = core::f64::consts::PI;
    /// Vehicle dimensions (m).
    pub const DIM: f64 = 5.0;
}

/// Vehicle footprint reported in the ego block (m). The chassis itself is
/// defined by wheelbase geometry; these are body dimensions for the
/// observation contract only.
pub const VEHICLE_LENGTH: f64 = 4.6;
pub const VEHICLE_WIDTH: f64 = 1.8;

/// Observation layout switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ObsMode {
    /// Collapse the ego block to a single normalized speed scalar.
    pub speed_only: bool,
    /// Append the ground-truth surface label to the ego block.
    pub surface_oracle: bool,
}

impl ObsMode {
    /// Flattened feature count for this mode.
    pub fn dim(&self) -> usize {
        let ego = if self.speed_only { 1 } else { 5 };
        ego + usize::from(self.surface_oracle) + 4 * LOOKAHEAD
    }
}

/// What the policy sees each step: a normalized ego block plus `LOOKAHEAD`
/// raw ego-frame waypoint deltas (normalized only in [`Observation::features`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub ego: Vec<f64>,
    pub waypoints: Vec<EgoDelta>,
}

impl Observation {
    /// Flat feature vector: ego block, then per-waypoint
    /// `[Δx, Δy, Δphi, Δv]`, all normalized by [`obs_scale`].
    pub fn features(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.ego.len() + 4 * self.waypoints.len());
        out.extend_from_slice(&self.ego);
        for w in &self.waypoints {
            out.push(w.dx / obs_scale::POS);
            out.push(w.dy / obs_scale::POS);
            out.push(w.dphi / obs_scale::ANGLE);
            out.push(w.dv / obs_scale::VEL);
        }
        out
    }
}

/// Builds an observation from an explicit plan of exactly `LOOKAHEAD`
/// waypoints (nearest first), already selected for the current step.
/// `surface` must be present when the mode appends the oracle label; the
/// indicator is the surface index (asphalt 0, ice 1). This is the single
/// featureization point: the transfer evaluator feeds reference-lap plans
/// through it so deployed policies see exactly the training layout.
pub fn observation_from_plan(
    state: &VehicleState,
    plan: &[crate::vehicle::Waypoint],
    mode: ObsMode,
    surface: Option<SurfaceLabel>,
) -> Result<Observation> {
    if plan.len() != LOOKAHEAD {
        return Err(Error::InvalidParam(format!(
            "plan has {} waypoints, observations need exactly {LOOKAHEAD}",
            plan.len()
        )));
    }
    let mut ego = Vec::with_capacity(6);
    if mode.speed_only {
        ego.push(state.speed() / obs_scale::VEL);
    } else {
        ego.push(state.vx / obs_scale::VEL);
        ego.push(state.vy / obs_scale::LAT_VEL);
        ego.push(state.omega / obs_scale::YAW_RATE);
        ego.push(VEHICLE_LENGTH / obs_scale::DIM);
        ego.push(VEHICLE_WIDTH / obs_scale::DIM);
    }
    if mode.surface_oracle {
        let label = surface.ok_or_else(|| {
            Error::Incompatible("surface-oracle observations need a surface label".into())
        })?;
        ego.push(label.index() as f64);
    }
    let waypoints =
        plan.iter().map(|w| to_ego_frame(w, state)).collect::<Result<Vec<_>>>()?;
    Ok(Observation { ego, waypoints })
}

/// Builds the observation at step `t`: lookahead waypoints `t+1..=t+LOOKAHEAD`
/// in the ego frame (indices past the trajectory end repeat the final
/// waypoint).
pub fn build_observation(
    state: &VehicleState,
    sc: &Scenario,
    t: usize,
    mode: ObsMode,
    surface: Option<SurfaceLabel>,
) -> Result<Observation> {
    let plan: Vec<crate::vehicle::Waypoint> =
        (1..=LOOKAHEAD).map(|k| *sc.lookahead(t, k)).collect();
    observation_from_plan(state, &plan, mode, surface)
}

/// Penalty weights of the multiplicative reward. The failure-termination
/// penalty is fixed at 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    /// Cross-track error weight (1/m).
    pub cte: f64,
    /// Heading error weight (1/rad).
    pub he: f64,
    /// Speed error weight (s/m).
    pub ste: f64,
    /// Longitudinal jerk weight.
    pub jerk: f64,
    /// Action-rate weight.
    pub act: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { cte: 0.5, he: 1.0, ste: 0.3, jerk: 0.01, act: 0.1 }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.cte, self.he, self.ste, self.jerk, self.act];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!("reward weights {self:?} must be >= 0")))
        }
    }
}

/// Non-negative error terms entering the reward penalties.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardTerms {
    pub cte: f64,
    pub he: f64,
    pub ste: f64,
    pub jerk: f64,
    pub act: f64,
}

/// Tracking errors of `next` against the first waypoint of the current
/// plan, plus smoothness terms. Cross-track error is the lateral offset in
/// the waypoint's own frame (the along-track component is what progress
/// already rewards); jerk is the change of the speed-difference
/// longitudinal acceleration; action rate is the L1 distance between
/// consecutive commands.
pub fn reward_terms(
    next: &VehicleState,
    wp: &crate::vehicle::Waypoint,
    action: Action,
    prev_action: Action,
    long_accel: f64,
    prev_long_accel: f64,
) -> RewardTerms {
    let (sin_w, cos_w) = wp.phi.sin_cos();
    let (dx, dy) = (next.x - wp.x, next.y - wp.y);
    RewardTerms {
        cte: (-sin_w * dx + cos_w * dy).abs(),
        he: wrap_angle(next.phi - wp.phi).map(f64::abs).unwrap_or(f64::INFINITY),
        ste: (next.speed() - wp.v).abs(),
        jerk: (long_accel - prev_long_accel).abs(),
        act: (action.tau - prev_action.tau).abs() + (action.delta - prev_action.delta).abs(),
    }
}

/// Multiplicative progress reward:
/// `r = ΔP · Π_i exp(−β_i e_i) − 1[failed]`, with ΔP clamped at ≥ 0.
/// `failed` marks failure terminations (corridor exit, model divergence);
/// reaching the goal or the horizon carries no penalty.
pub fn compute_reward(delta_p: f64, terms: &RewardTerms, w: &RewardWeights, failed: bool) -> f64 {
    let exponent = w.cte * terms.cte
        + w.he * terms.he
        + w.ste * terms.ste
        + w.jerk * terms.jerk
        + w.act * terms.act;
    delta_p.max(0.0) * (-exponent).exp() - f64::from(u8::from(failed))
}

/// Episode status after a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Running,
    /// Entered the goal region around the final waypoint.
    Success,
    /// Left the corridor (|CTE| above the half-width).
    OffRoad,
    /// Reached the horizon without success or failure.
    Horizon,
    /// The dynamics model produced a non-finite prediction.
    Diverged,
}

impl Outcome {
    pub fn is_terminal(self) -> bool {
        self != Outcome::Running
    }

    /// Failure terminations carry the fixed −1 reward penalty.
    pub fn is_failure(self) -> bool {
        matches!(self, Outcome::OffRoad | Outcome::Diverged)
    }
}

/// Classifies the episode after moving to `state` at step `t` with
/// cross-track distance `cte` to the reference polyline. Success is
/// checked first so finishing on the corridor edge still counts; this
/// function never reports [`Outcome::Diverged`] (the stepper handles
/// non-finite model output before getting here).
pub fn termination_check(state: &VehicleState, sc: &Scenario, t: usize, cte: f64) -> Outcome {
    let (gx, gy) = sc.goal();
    if (state.x - gx).hypot(state.y - gy) <= sc.goal_radius() {
        Outcome::Success
    } else if cte > sc.half_width() {
        Outcome::OffRoad
    } else if t >= sc.horizon() {
        Outcome::Horizon
    } else {
        Outcome::Running
    }
}
