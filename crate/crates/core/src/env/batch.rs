//! Batched episode stepping.
//!
//! [`EnvBatch`] holds N independent episodes and advances all live ones in
//! one call through an [`Executor`]. Episodes never share mutable state and
//! draw randomness only at reset (from per-episode substreams), so results
//! are bit-identical for any worker count and for a singleton batch
//! replaying one episode's substream.

use super::scenario::{PolyProjection, Scenario};
use super::{
    build_observation, compute_reward, reward_terms, termination_check, ObsMode, Observation,
    Outcome, RewardWeights,
};
use crate::error::{Error, Result};
use crate::exec::{for_each_mut, Executor};
use crate::models::{DynamicsModel, HistoryWindow};
use crate::vehicle::CONTROL_DT;
use crate::rng::DetRng;
use crate::vehicle::{wrap_angle, Action, SurfaceLabel, VehicleState};
use alloc::format;
use alloc::vec::Vec;

/// Projection scan window around the episode cursor, in segments. A few
/// segments of backward slack keep the cross-track distance honest when the
/// vehicle drops slightly behind its best progress; the forward span covers
/// the fastest plausible advance per step with margin.
const PROJ_BACK: usize = 10;
const PROJ_FWD: usize = 30;

/// Per-step diagnostics alongside the reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// Clamped arclength advance (m).
    pub delta_p: f64,
    /// Distance to the reference polyline (m).
    pub cte: f64,
    /// Heading error against the plan's first waypoint (rad).
    pub e_he: f64,
    /// Speed error against the plan's first waypoint (m/s).
    pub e_ste: f64,
    pub outcome: Outcome,
}

/// Everything one batched step returns, index-aligned with the episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// Observation after the step (frozen episodes repeat their last one).
    pub obs: Vec<Observation>,
    /// Reward earned this step; zero for episodes that were already done.
    pub rewards: Vec<f64>,
    /// Terminal flag after the step.
    pub dones: Vec<bool>,
    pub infos: Vec<StepInfo>,
}

struct StepCell {
    reward: f64,
    info: StepInfo,
    obs: Observation,
}

/// One episode's mutable state.
pub struct EpisodeSlot {
    pub state: VehicleState,
    /// Control steps taken so far (also the current waypoint-time index).
    pub step: usize,
    pub outcome: Outcome,
    /// Total clamped arclength progress (m).
    pub progress: f64,
    scenario: usize,
    window: HistoryWindow,
    surface_seq: Vec<SurfaceLabel>,
    cursor: usize,
    /// High-water arclength mark; progress is earned only beyond it, so
    /// backing up and re-driving covered ground earns nothing.
    s_best: f64,
    prev_action: Action,
    prev_speed: f64,
    prev_long_accel: f64,
    cell: Option<StepCell>,
}

impl EpisodeSlot {
    /// Index into the batch's scenario list.
    pub fn scenario(&self) -> usize {
        self.scenario
    }

    /// Surface under the vehicle at its current step.
    pub fn surface_now(&self) -> SurfaceLabel {
        self.surface_seq[self.step.min(self.surface_seq.len() - 1)]
    }
}

/// N parallel trajectory-tracking episodes over a shared dynamics model.
pub struct EnvBatch {
    episodes: Vec<EpisodeSlot>,
    scenarios: Vec<Scenario>,
    mode: ObsMode,
    weights: RewardWeights,
    history_len: usize,
    seed: u64,
}

impl EnvBatch {
    /// Builds `n` episodes; episode `i` runs scenario `i % scenarios.len()`
    /// and draws its reset randomness from `DetRng::substream(seed,
    /// stream_offset + i)`. Distinct offsets give fresh-but-reproducible
    /// episode populations (e.g. one offset per training round).
    pub fn new(
        scenarios: Vec<Scenario>,
        n: usize,
        history_len: usize,
        mode: ObsMode,
        weights: RewardWeights,
        seed: u64,
        stream_offset: u64,
    ) -> Result<Self> {
        if scenarios.is_empty() || n == 0 {
            return Err(Error::TooShort("need at least one scenario and one episode"));
        }
        if history_len == 0 {
            return Err(Error::InvalidParam("history length must be >= 1".into()));
        }
        weights.validate()?;
        let mut batch =
            Self { episodes: Vec::new(), scenarios, mode, weights, history_len, seed };
        batch.reset_all(stream_offset, n)?;
        Ok(batch)
    }

    /// Re-seeds episode `i` in place from `DetRng::substream(seed, stream)`,
    /// keeping its scenario binding. Lets trainers rotate finished episodes
    /// without disturbing the rest of the batch.
    pub fn reset_one(&mut self, i: usize, stream: u64) -> Result<()> {
        let sc_idx = self.episodes[i].scenario;
        self.episodes[i] = reset_slot(
            &self.scenarios[sc_idx],
            sc_idx,
            self.history_len,
            DetRng::substream(self.seed, stream),
        )?;
        Ok(())
    }

    /// Re-seeds all episodes from substreams at `stream_offset`.
    pub fn reset_all(&mut self, stream_offset: u64, n: usize) -> Result<()> {
        self.episodes = (0..n)
            .map(|i| {
                let sc_idx = i % self.scenarios.len();
                reset_slot(
                    &self.scenarios[sc_idx],
                    sc_idx,
                    self.history_len,
                    DetRng::substream(self.seed, stream_offset + i as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn episodes(&self) -> &[EpisodeSlot] {
        &self.episodes
    }

    pub fn scenarios(&self) -> &[Scenario] {
        &self.scenarios
    }

    pub fn mode(&self) -> ObsMode {
        self.mode
    }

    pub fn all_done(&self) -> bool {
        self.episodes.iter().all(|e| e.outcome.is_terminal())
    }

    /// Observation of episode `i` at its current step.
    pub fn observe(&self, i: usize) -> Result<Observation> {
        let slot = &self.episodes[i];
        build_observation(
            &slot.state,
            &self.scenarios[slot.scenario],
            slot.step,
            self.mode,
            Some(slot.surface_now()),
        )
    }

    pub fn observe_all(&self) -> Result<Vec<Observation>> {
        (0..self.episodes.len()).map(|i| self.observe(i)).collect()
    }

    /// Advances every live episode by one control period; frozen episodes
    /// return zero reward and their last observation. One action per
    /// episode, index-aligned.
    pub fn step(
        &mut self,
        model: &(dyn DynamicsModel + Sync),
        exec: &dyn Executor,
        actions: &[Action],
    ) -> Result<StepOutput> {
        if actions.len() != self.episodes.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} actions for {} episodes",
                actions.len(),
                self.episodes.len()
            )));
        }
        let scenarios = &self.scenarios;
        let mode = self.mode;
        let weights = self.weights;
        for_each_mut(exec, &mut self.episodes, &|i, slot| {
            let cell = advance(slot, &scenarios[slot.scenario], model, mode, &weights, actions[i]);
            slot.cell = Some(cell);
        });

        let n = self.episodes.len();
        let mut out = StepOutput {
            obs: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
            infos: Vec::with_capacity(n),
        };
        for slot in &mut self.episodes {
            let cell = slot.cell.take().expect("advance always fills the cell");
            out.obs.push(cell.obs);
            out.rewards.push(cell.reward);
            out.dones.push(slot.outcome.is_terminal());
            out.infos.push(cell.info);
        }
        Ok(out)
    }
}

fn reset_slot(
    sc: &Scenario,
    sc_idx: usize,
    history_len: usize,
    mut rng: DetRng,
) -> Result<EpisodeSlot> {
    // Fixed draw order: surface schedule first, then the start perturbation.
    let surface_seq = sc.surface_spec().materialize(sc.horizon(), &mut rng);
    let noise = sc.start_noise();
    let w0 = sc.waypoints()[0];
    let dx = rng.uniform(-noise.pos, noise.pos);
    let dy = rng.uniform(-noise.pos, noise.pos);
    let dphi = rng.uniform(-noise.heading, noise.heading);
    let v0 = w0.v * (1.0 + rng.uniform(-noise.speed, noise.speed));
    let state =
        VehicleState::new(w0.x + dx, w0.y + dy, wrap_angle(w0.phi + dphi)?, v0, 0.0, 0.0)?;
    let proj = sc.project_windowed(state.x, state.y, 0, PROJ_BACK, PROJ_FWD);
    Ok(EpisodeSlot {
        state,
        step: 0,
        outcome: Outcome::Running,
        progress: 0.0,
        scenario: sc_idx,
        window: HistoryWindow::steady_straight(history_len, v0)?,
        surface_seq,
        cursor: proj.seg,
        s_best: proj.s,
        prev_action: Action { tau: 0.0, delta: 0.0 },
        prev_speed: v0,
        prev_long_accel: 0.0,
        cell: None,
    })
}

fn frozen_cell(slot: &EpisodeSlot, sc: &Scenario, mode: ObsMode) -> StepCell {
    StepCell {
        reward: 0.0,
        info: StepInfo {
            delta_p: 0.0,
            cte: 0.0,
            e_he: 0.0,
            e_ste: 0.0,
            outcome: slot.outcome,
        },
        obs: build_observation(&slot.state, sc, slot.step, mode, Some(slot.surface_now()))
            .expect("frozen state observed before"),
    }
}

fn diverged_cell(slot: &mut EpisodeSlot, sc: &Scenario, mode: ObsMode, w: &RewardWeights) -> StepCell {
    slot.outcome = Outcome::Diverged;
    StepCell {
        reward: compute_reward(0.0, &super::RewardTerms::default(), w, true),
        info: StepInfo {
            delta_p: 0.0,
            cte: 0.0,
            e_he: 0.0,
            e_ste: 0.0,
            outcome: Outcome::Diverged,
        },
        obs: build_observation(&slot.state, sc, slot.step, mode, Some(slot.surface_now()))
            .expect("pre-divergence state is finite"),
    }
}

fn advance(
    slot: &mut EpisodeSlot,
    sc: &Scenario,
    model: &(dyn DynamicsModel + Sync),
    mode: ObsMode,
    weights: &RewardWeights,
    action: Action,
) -> StepCell {
    if slot.outcome.is_terminal() {
        return frozen_cell(slot, sc, mode);
    }

    let sigma = slot.surface_now();
    let delta = match model.predict(&slot.window, action, Some(sigma)) {
        Ok(d) if d.is_finite() => d,
        _ => return diverged_cell(slot, sc, mode, weights),
    };
    let next = match crate::vehicle::compose_delta(&slot.state, &delta) {
        Ok(s) if s.is_finite() => s,
        _ => return diverged_cell(slot, sc, mode, weights),
    };
    slot.window.push(delta, action);

    let proj: PolyProjection =
        sc.project_windowed(next.x, next.y, slot.cursor, PROJ_BACK, PROJ_FWD);
    let delta_p = (proj.s - slot.s_best).max(0.0);
    slot.s_best = slot.s_best.max(proj.s);
    slot.cursor = slot.cursor.max(proj.seg);
    slot.progress += delta_p;

    let speed = next.speed();
    let long_accel = (speed - slot.prev_speed) / CONTROL_DT;
    let plan_wp = sc.lookahead(slot.step, 1);
    let terms = reward_terms(&next, plan_wp, action, slot.prev_action, long_accel,
        slot.prev_long_accel);

    slot.step += 1;
    let outcome = termination_check(&next, sc, slot.step, proj.dist);
    let reward = compute_reward(delta_p, &terms, weights, outcome.is_failure());

    slot.state = next;
    slot.outcome = outcome;
    slot.prev_action = action;
    slot.prev_speed = speed;
    slot.prev_long_accel = long_accel;

    StepCell {
        reward,
        info: StepInfo { delta_p, cte: proj.dist, e_he: terms.he, e_ste: terms.ste, outcome },
        obs: build_observation(&slot.state, sc, slot.step, mode, Some(slot.surface_now()))
            .expect("composed state is finite"),
    }
}
