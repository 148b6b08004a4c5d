//! Closed-loop policy evaluation in the distilled environment:
//! deterministic-action rollouts over a scenario set, scored per scenario
//! and aggregated as unweighted means / outcome percentages.
//!
//! Tracking metrics follow the one-step-delay convention: the state reached
//! by step `t` is compared against the first waypoint of the plan issued at
//! step `t−1`, which is the reference waypoint with the same index. ADE/FDE
//! pair achieved positions with reference waypoints by step index (ADE also
//! includes the noisy start pose at index 0); CTE is the distance to the
//! reference polyline, minimized over every segment.

use crate::env::{EnvBatch, ObsMode, Outcome, RewardWeights, Scenario};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::models::DynamicsModel;
use crate::policy::Policy;
use crate::vehicle::{wrap_angle, Action, VehicleState};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};

/// One episode's achieved trajectory, the raw material for
/// [`trace_metrics`].
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    /// Index into the evaluated scenario list.
    pub scenario: usize,
    /// `s_0 ..= s_T` (start state plus one per step taken).
    pub states: Vec<VehicleState>,
    /// `a_0 ..= a_{T-1}`.
    pub actions: Vec<Action>,
    pub outcome: Outcome,
}

/// Per-scenario metric means (errors averaged over the episode's steps).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: usize,
    pub outcome: Outcome,
    /// Steps taken (T).
    pub steps: usize,
    /// Mean distance to the reference polyline (m), over all T+1 states.
    pub cte: f64,
    /// Mean displacement from the same-index reference waypoint (m), over
    /// all T+1 states.
    pub ade: f64,
    /// Displacement at the final achieved state (m).
    pub fde: f64,
    /// Mean one-step-delay position error (m), over the T transitions.
    pub pte: f64,
    /// Mean one-step-delay absolute heading error (rad).
    pub he: f64,
    /// Mean one-step-delay absolute speed error (m/s).
    pub ste: f64,
}

/// Aggregate over a scenario set: unweighted means of the per-scenario
/// values, outcome rates as percentages of scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopReport {
    pub cte: f64,
    pub ade: f64,
    pub fde: f64,
    pub pte: f64,
    pub he: f64,
    pub ste: f64,
    /// % of scenarios ending in [`Outcome::Success`].
    pub success_rate: f64,
    /// % ending in [`Outcome::OffRoad`].
    pub off_road_rate: f64,
    /// % ending in [`Outcome::Horizon`].
    pub timeout_rate: f64,
    /// % ending in [`Outcome::Diverged`] (non-finite model output).
    pub diverged_rate: f64,
    pub scenarios: usize,
    pub per_scenario: Vec<ScenarioResult>,
}

/// Distance from a point to the scenario's reference polyline, minimized
/// over every segment (no cursor: the metric is a global property).
fn polyline_distance(sc: &Scenario, x: f64, y: f64) -> f64 {
    sc.project_windowed(x, y, 0, 0, sc.waypoints().len()).dist
}

/// The reference waypoint paired with achieved step index `t` (clamped to
/// the final waypoint, matching the plan the policy was shown).
fn wp_at(sc: &Scenario, t: usize) -> &crate::vehicle::Waypoint {
    &sc.waypoints()[t.min(sc.waypoints().len() - 1)]
}

/// Scores one achieved trajectory against its scenario's reference.
pub fn trace_metrics(trace: &EpisodeTrace, sc: &Scenario) -> Result<ScenarioResult> {
    let t_end = trace.states.len().saturating_sub(1);
    if t_end == 0 {
        return Err(Error::TooShort("trace needs at least one step"));
    }
    if trace.actions.len() != t_end {
        return Err(Error::ShapeMismatch(format!(
            "{} actions for {} transitions",
            trace.actions.len(),
            t_end
        )));
    }
    let mut cte_sum = 0.0;
    let mut ade_sum = 0.0;
    let mut pte_sum = 0.0;
    let mut he_sum = 0.0;
    let mut ste_sum = 0.0;
    for (t, s) in trace.states.iter().enumerate() {
        cte_sum += polyline_distance(sc, s.x, s.y);
        let w = wp_at(sc, t);
        let disp = (s.x - w.x).hypot(s.y - w.y);
        ade_sum += disp;
        if t > 0 {
            pte_sum += disp;
            he_sum += wrap_angle(s.phi - w.phi)?.abs();
            ste_sum += (s.speed() - w.v).abs();
        }
    }
    let last = &trace.states[t_end];
    let wl = wp_at(sc, t_end);
    let states = (t_end + 1) as f64;
    let steps = t_end as f64;
    Ok(ScenarioResult {
        scenario: trace.scenario,
        outcome: trace.outcome,
        steps: t_end,
        cte: cte_sum / states,
        ade: ade_sum / states,
        fde: (last.x - wl.x).hypot(last.y - wl.y),
        pte: pte_sum / steps,
        he: he_sum / steps,
        ste: ste_sum / steps,
    })
}

/// Rolls every scenario once with deterministic actions (the squashed mean)
/// and records the achieved trajectories. Episode `i` runs scenario `i`
/// with reset randomness from `DetRng::substream(seed, i)`.
pub fn rollout_traces(
    policy: &Policy,
    model: &(dyn DynamicsModel + Sync),
    scenarios: &[Scenario],
    weights: RewardWeights,
    seed: u64,
    exec: &dyn Executor,
) -> Result<Vec<EpisodeTrace>> {
    let mut env = EnvBatch::new(
        scenarios.to_vec(),
        scenarios.len(),
        model.history_len(),
        policy.mode(),
        weights,
        seed,
        0,
    )?;
    let max_horizon =
        scenarios.iter().map(Scenario::horizon).max().expect("non-empty scenario list");

    let mut traces: Vec<EpisodeTrace> = env
        .episodes()
        .iter()
        .map(|slot| EpisodeTrace {
            scenario: slot.scenario(),
            states: vec![slot.state],
            actions: Vec::new(),
            outcome: slot.outcome,
        })
        .collect();

    let mut obs = env.observe_all()?;
    for _ in 0..max_horizon {
        if env.all_done() {
            break;
        }
        let live: Vec<bool> =
            env.episodes().iter().map(|s| !s.outcome.is_terminal()).collect();
        let mut actions = vec![Action::zero(); env.len()];
        for i in 0..env.len() {
            if live[i] {
                actions[i] = policy.act_deterministic(&obs[i].features())?;
            }
        }
        let out = env.step(model, exec, &actions)?;
        for i in 0..env.len() {
            if live[i] {
                traces[i].actions.push(actions[i]);
                traces[i].states.push(env.episodes()[i].state);
                traces[i].outcome = env.episodes()[i].outcome;
            }
        }
        obs = out.obs;
    }
    Ok(traces)
}

/// Evaluates a policy over a scenario set. `mode` is the configured
/// observation layout and must match the policy checkpoint; the mismatch is
/// rejected before any rollout.
pub fn closed_loop_eval(
    policy: &Policy,
    model: &(dyn DynamicsModel + Sync),
    scenarios: &[Scenario],
    mode: ObsMode,
    weights: RewardWeights,
    seed: u64,
    exec: &dyn Executor,
) -> Result<ClosedLoopReport> {
    if mode != policy.mode() {
        return Err(Error::Incompatible(format!(
            "configured observation mode {mode:?} does not match the policy's {:?}",
            policy.mode()
        )));
    }
    if scenarios.is_empty() {
        return Err(Error::TooShort("closed-loop evaluation needs at least one scenario"));
    }
    let traces = rollout_traces(policy, model, scenarios, weights, seed, exec)?;
    let per_scenario = traces
        .iter()
        .map(|trace| trace_metrics(trace, &scenarios[trace.scenario]))
        .collect::<Result<Vec<_>>>()?;

    let n = per_scenario.len() as f64;
    let mean = |f: &dyn Fn(&ScenarioResult) -> f64| per_scenario.iter().map(f).sum::<f64>() / n;
    let rate = |o: Outcome| {
        100.0 * per_scenario.iter().filter(|r| r.outcome == o).count() as f64 / n
    };
    Ok(ClosedLoopReport {
        cte: mean(&|r| r.cte),
        ade: mean(&|r| r.ade),
        fde: mean(&|r| r.fde),
        pte: mean(&|r| r.pte),
        he: mean(&|r| r.he),
        ste: mean(&|r| r.ste),
        success_rate: rate(Outcome::Success),
        off_road_rate: rate(Outcome::OffRoad),
        timeout_rate: rate(Outcome::Horizon),
        diverged_rate: rate(Outcome::Diverged),
        scenarios: per_scenario.len(),
        per_scenario,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::SurfaceSpec;
    use crate::exec::SerialExec;
    use crate::policy::PolicyConfig;
    use crate::rng::DetRng;
    use crate::testutil::{no_noise, straight_scenario, TestBicycle};
    use crate::vehicle::{Waypoint, CONTROL_DT};
    use core::f64::consts::PI;

    fn state_at(x: f64, y: f64, phi: f64, vx: f64) -> VehicleState {
        VehicleState::new(x, y, phi, vx, 0.0, 0.0).unwrap()
    }

    /// A scenario whose waypoints sit on a line with constant heading/speed.
    fn line_scenario(phi: f64, v: f64, n: usize) -> Scenario {
        let (sin, cos) = phi.sin_cos();
        let waypoints: Vec<Waypoint> = (0..=n)
            .map(|k| {
                let s = v * CONTROL_DT * k as f64;
                Waypoint { x: s * cos, y: s * sin, phi, v }
            })
            .collect();
        Scenario::new(waypoints, 3.0, 2.0, n, SurfaceSpec::Asphalt, no_noise()).unwrap()
    }

    #[test]
    fn heading_error_wraps_across_pi() {
        // One step landing exactly on waypoint 1's position and speed, but
        // with heading 3.1 against a reference of -3.1: the wrapped error is
        // 2*pi - 6.2, not 6.2.
        let sc = line_scenario(-3.1, 1.0, 12);
        let w1 = sc.waypoints()[1];
        let trace = EpisodeTrace {
            scenario: 0,
            states: vec![
                state_at(0.0, 0.0, -3.1, 1.0),
                state_at(w1.x, w1.y, 3.1, 1.0),
            ],
            actions: vec![Action::zero()],
            outcome: Outcome::Horizon,
        };
        let m = trace_metrics(&trace, &sc).unwrap();
        let want = 2.0 * PI - 6.2;
        assert!((m.he - want).abs() < 1e-12, "he {} want {want}", m.he);
        assert!(m.pte < 1e-12);
        assert!(m.ste < 1e-12);
        assert!((want - 0.08319).abs() < 1e-5);
    }

    #[test]
    fn one_step_delay_pairing_is_not_off_by_one() {
        // A rollout that runs ahead of the reference: achieved states land
        // on waypoint t+1 at step t. The correct (same-index) pairing gives
        // a nonzero constant error; shifting the comparison by one would
        // zero it out. Guards the delay convention.
        let sc = line_scenario(0.0, 2.0, 20);
        let wp = sc.waypoints();
        let states: Vec<VehicleState> =
            (0..=10).map(|t| state_at(wp[t + 1].x, wp[t + 1].y, 0.0, 2.0)).collect();
        let trace = EpisodeTrace {
            scenario: 0,
            states,
            actions: vec![Action::zero(); 10],
            outcome: Outcome::Horizon,
        };
        let m = trace_metrics(&trace, &sc).unwrap();
        let step = 2.0 * CONTROL_DT;
        assert!((m.pte - step).abs() < 1e-12, "pte {}", m.pte);
        // The shifted pairing (the off-by-one bug) would report zero.
        let shifted: f64 = (1..=10)
            .map(|t| {
                let s = &trace.states[t];
                let w = &wp[t + 1];
                (s.x - w.x).hypot(s.y - w.y)
            })
            .sum::<f64>()
            / 10.0;
        assert!(shifted < 1e-12);
        assert!((m.pte - shifted).abs() > 1e-6, "pairing shift must change PTE");
    }

    /// Independent scoring: plain loops, its own point-to-segment distance,
    /// its own angle wrapping via remainder arithmetic.
    fn brute_force(trace: &EpisodeTrace, sc: &Scenario) -> ScenarioResult {
        let wp = sc.waypoints();
        let seg_dist = |x: f64, y: f64| -> f64 {
            let mut best = f64::INFINITY;
            for s in 0..wp.len() - 1 {
                let (ax, ay) = (wp[s].x, wp[s].y);
                let (bx, by) = (wp[s + 1].x, wp[s + 1].y);
                let (ex, ey) = (bx - ax, by - ay);
                let len2 = ex * ex + ey * ey;
                let t = if len2 < 1e-18 {
                    0.0
                } else {
                    (((x - ax) * ex + (y - ay) * ey) / len2).clamp(0.0, 1.0)
                };
                let d = (x - (ax + t * ex)).hypot(y - (ay + t * ey));
                if d < best {
                    best = d;
                }
            }
            best
        };
        let wrap = |a: f64| -> f64 {
            let r = (a + PI).rem_euclid(2.0 * PI) - PI;
            if r == PI {
                -PI
            } else {
                r
            }
        };
        let t_end = trace.states.len() - 1;
        let idx = |t: usize| t.min(wp.len() - 1);
        let mut cte = 0.0;
        let mut ade = 0.0;
        let mut pte = 0.0;
        let mut he = 0.0;
        let mut ste = 0.0;
        for (t, s) in trace.states.iter().enumerate() {
            cte += seg_dist(s.x, s.y);
            let w = &wp[idx(t)];
            ade += (s.x - w.x).hypot(s.y - w.y);
            if t > 0 {
                pte += (s.x - w.x).hypot(s.y - w.y);
                he += wrap(s.phi - w.phi).abs();
                ste += ((s.vx * s.vx + s.vy * s.vy).sqrt() - w.v).abs();
            }
        }
        let s_last = &trace.states[t_end];
        let w_last = &wp[idx(t_end)];
        ScenarioResult {
            scenario: trace.scenario,
            outcome: trace.outcome,
            steps: t_end,
            cte: cte / (t_end + 1) as f64,
            ade: ade / (t_end + 1) as f64,
            fde: (s_last.x - w_last.x).hypot(s_last.y - w_last.y),
            pte: pte / t_end as f64,
            he: he / t_end as f64,
            ste: ste / t_end as f64,
        }
    }

    #[test]
    fn matches_brute_force_oracle_on_random_traces() {
        let mut rng = DetRng::seed(5);
        for case in 0..12 {
            // A bent reference with varying speed, and a trace wandering
            // around it (sometimes past the final waypoint index).
            let n = 12 + rng.below(10);
            let waypoints: Vec<Waypoint> = (0..=n)
                .map(|k| Waypoint {
                    x: k as f64 * rng.uniform(0.6, 1.4),
                    y: (k as f64 * 0.4).sin() * rng.uniform(0.5, 3.0),
                    phi: rng.uniform(-PI, PI),
                    v: rng.uniform(2.0, 9.0),
                })
                .collect();
            let sc =
                Scenario::new(waypoints, 5.0, 2.0, n, SurfaceSpec::Asphalt, no_noise()).unwrap();
            let steps = 3 + rng.below(n + 3);
            let states: Vec<VehicleState> = (0..=steps)
                .map(|_| {
                    VehicleState::new(
                        rng.uniform(-2.0, n as f64 * 1.5),
                        rng.uniform(-4.0, 4.0),
                        rng.uniform(-PI, PI),
                        rng.uniform(-1.0, 9.0),
                        rng.uniform(-2.0, 2.0),
                        rng.uniform(-1.0, 1.0),
                    )
                    .unwrap()
                })
                .collect();
            let trace = EpisodeTrace {
                scenario: 0,
                states,
                actions: vec![Action::zero(); steps],
                outcome: Outcome::Horizon,
            };
            let got = trace_metrics(&trace, &sc).unwrap();
            let want = brute_force(&trace, &sc);
            for (g, w) in [
                (got.cte, want.cte),
                (got.ade, want.ade),
                (got.fde, want.fde),
                (got.pte, want.pte),
                (got.he, want.he),
                (got.ste, want.ste),
            ] {
                assert!((g - w).abs() < 1e-9, "case {case}: {g} vs {w}");
                assert!(g >= 0.0);
            }
        }
    }

    fn zero_policy(mode: ObsMode) -> Policy {
        let cfg = PolicyConfig {
            ego_hidden: 8,
            d_model: 8,
            heads: 2,
            d_ff: 16,
            attn_layers: 1,
            trunk_hidden: 12,
            ..PolicyConfig::default()
        };
        Policy::new(cfg, mode, 0).unwrap()
    }

    #[test]
    fn matched_plant_tracks_reference_exactly() {
        // Zero-initialized policy -> zero action -> TestBicycle coasts at
        // the start speed, which (with noise disabled) is exactly the
        // constant reference speed: every tracking error vanishes and the
        // episode ends in the goal region.
        let policy = zero_policy(ObsMode::default());
        let scenarios = vec![straight_scenario(8.0, 40, no_noise())];
        let report = closed_loop_eval(
            &policy,
            &TestBicycle,
            &scenarios,
            ObsMode::default(),
            RewardWeights::default(),
            11,
            &SerialExec,
        )
        .unwrap();
        assert_eq!(report.success_rate, 100.0);
        assert_eq!(report.off_road_rate, 0.0);
        assert_eq!(report.diverged_rate, 0.0);
        for v in [report.cte, report.ade, report.fde, report.pte, report.he, report.ste] {
            assert!(v < 1e-9, "expected exact tracking, got {v}");
        }
        assert_eq!(report.scenarios, 1);
        assert_eq!(report.per_scenario.len(), 1);
        assert_eq!(report.per_scenario[0].outcome, Outcome::Success);
    }

    #[test]
    fn aggregates_re_sum_from_per_scenario_rows() {
        let policy = zero_policy(ObsMode::default());
        let scenarios = vec![
            straight_scenario(6.0, 30, no_noise()),
            straight_scenario(8.0, 35, no_noise()),
            line_scenario(0.3, 7.0, 40),
        ];
        let report = closed_loop_eval(
            &policy,
            &TestBicycle,
            &scenarios,
            ObsMode::default(),
            RewardWeights::default(),
            3,
            &SerialExec,
        )
        .unwrap();
        assert_eq!(report.per_scenario.len(), 3);
        let n = 3.0;
        let resum = |f: &dyn Fn(&ScenarioResult) -> f64| {
            report.per_scenario.iter().map(f).sum::<f64>() / n
        };
        assert!((report.cte - resum(&|r| r.cte)).abs() < 1e-15);
        assert!((report.pte - resum(&|r| r.pte)).abs() < 1e-15);
        assert!((report.fde - resum(&|r| r.fde)).abs() < 1e-15);
        let successes =
            report.per_scenario.iter().filter(|r| r.outcome == Outcome::Success).count();
        assert!((report.success_rate - 100.0 * successes as f64 / n).abs() < 1e-15);
        let total = report.success_rate
            + report.off_road_rate
            + report.timeout_rate
            + report.diverged_rate;
        assert!((total - 100.0).abs() < 1e-12);
    }

    #[test]
    fn observation_mode_mismatch_is_rejected_before_rollout() {
        let policy = zero_policy(ObsMode { speed_only: true, surface_oracle: false });
        let scenarios = vec![straight_scenario(8.0, 40, no_noise())];
        let err = closed_loop_eval(
            &policy,
            &TestBicycle,
            &scenarios,
            ObsMode::default(),
            RewardWeights::default(),
            0,
            &SerialExec,
        );
        assert!(matches!(err, Err(Error::Incompatible(_))));
    }
}
