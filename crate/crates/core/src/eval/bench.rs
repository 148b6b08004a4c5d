//! Wall-clock benchmarks: policy inference latency and distilled-env vs
//! reference-simulator throughput. Timing numbers are only meaningful on a
//! single worker; run these with a serial executor and no concurrent load.

use crate::env::{EnvBatch, ObsMode, RewardWeights, Scenario};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::models::DynamicsModel;
use crate::policy::Policy;
use crate::refsim::RefSim;
use crate::rng::DetRng;
use crate::vehicle::Action;
use serde::{Deserialize, Serialize};
use std::hint::black_box;
use std::time::Instant;

/// Single-observation inference timing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub std_ms: f64,
    pub max_ms: f64,
    pub trials: usize,
}

/// Times deterministic single-observation inference over a pool of feature
/// vectors (cycled so trials see varied inputs). At least 100 timed trials
/// are required for the statistics to mean anything.
pub fn latency_benchmark(
    policy: &Policy,
    features: &[Vec<f64>],
    warmup: usize,
    trials: usize,
) -> Result<LatencyStats> {
    if trials < 100 {
        return Err(Error::InvalidParam(format!(
            "latency benchmark needs at least 100 trials, got {trials}"
        )));
    }
    if features.is_empty() {
        return Err(Error::TooShort("latency benchmark needs at least one feature vector"));
    }
    for i in 0..warmup {
        black_box(policy.act_deterministic(&features[i % features.len()])?);
    }
    let mut samples = Vec::with_capacity(trials);
    for i in 0..trials {
        let f = &features[i % features.len()];
        let t0 = Instant::now();
        let action = policy.act_deterministic(f)?;
        let elapsed = t0.elapsed().as_secs_f64();
        black_box(action);
        samples.push(elapsed * 1000.0);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let max = samples.iter().fold(0.0f64, |a, &b| a.max(b));
    Ok(LatencyStats { mean_ms: mean, std_ms: var.sqrt(), max_ms: max, trials })
}

/// Aggregate stepping rate at one batch size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputPoint {
    pub n_envs: usize,
    /// Aggregate environment steps per second (envs times batch steps).
    pub steps_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub distilled: Vec<ThroughputPoint>,
    /// Reference-simulator control steps per second, single vehicle.
    pub reference_cps: f64,
    /// Largest-batch distilled rate over the reference rate.
    pub ratio: f64,
}

/// Reference-simulator control steps per second under a mild constant
/// action (gentle throttle, slight steer), after a short warmup.
pub fn refsim_control_rate(sim: &RefSim, steps: usize) -> Result<f64> {
    if steps == 0 {
        return Err(Error::InvalidParam("refsim rate needs at least one step".into()));
    }
    let action = Action { tau: 0.25, delta: 0.03 };
    let mut state = sim.state_on_track(0.0, 0.0, 0.0, 8.0)?;
    for _ in 0..steps.min(64) {
        state = sim.run_control_step(&state, action)?;
    }
    let t0 = Instant::now();
    for _ in 0..steps {
        state = sim.run_control_step(&state, action)?;
    }
    let elapsed = t0.elapsed().as_secs_f64();
    black_box(state);
    Ok(steps as f64 / elapsed.max(1e-12))
}

/// Measures aggregate distilled-environment stepping rates at each batch
/// size, then the reference simulator's control rate, and their ratio.
///
/// Episodes that terminate during the measurement are reset immediately so
/// every slot stays live; frozen slots are skipped by the batch step and
/// would inflate the rate. Actions are pre-drawn outside the timed region.
#[allow(clippy::too_many_arguments)]
pub fn throughput_benchmark(
    model: &(dyn DynamicsModel + Sync),
    scenarios: &[Scenario],
    mode: ObsMode,
    weights: RewardWeights,
    exec: &dyn Executor,
    sim: &RefSim,
    n_envs_list: &[usize],
    steps_per_point: usize,
    refsim_steps: usize,
    seed: u64,
) -> Result<ThroughputReport> {
    if n_envs_list.is_empty() || n_envs_list.contains(&0) {
        return Err(Error::InvalidParam("throughput needs positive batch sizes".into()));
    }
    if steps_per_point == 0 {
        return Err(Error::InvalidParam("throughput needs at least one step".into()));
    }
    let mut rng = DetRng::substream(seed, 1);
    let pool: Vec<Action> = (0..997)
        .map(|_| Action::clamped(rng.uniform(-0.4, 0.8), rng.uniform(-0.3, 0.3)))
        .collect::<Result<_>>()?;

    let mut distilled = Vec::with_capacity(n_envs_list.len());
    for &n in n_envs_list {
        let mut env = EnvBatch::new(
            scenarios.to_vec(),
            n,
            model.history_len(),
            mode,
            weights,
            seed,
            0,
        )?;
        let step_actions: Vec<Vec<Action>> = (0..steps_per_point)
            .map(|k| (0..n).map(|i| pool[(k * n + i) % pool.len()]).collect())
            .collect();
        // Warmup step outside the timed region.
        env.step(model, exec, &step_actions[0])?;
        let mut stream = n as u64;
        let t0 = Instant::now();
        for acts in &step_actions {
            black_box(env.step(model, exec, acts)?);
            for i in 0..n {
                if env.episodes()[i].outcome.is_terminal() {
                    env.reset_one(i, stream)?;
                    stream += 1;
                }
            }
        }
        let elapsed = t0.elapsed().as_secs_f64();
        distilled.push(ThroughputPoint {
            n_envs: n,
            steps_per_s: (steps_per_point * n) as f64 / elapsed.max(1e-12),
        });
    }
    let reference_cps = refsim_control_rate(sim, refsim_steps)?;
    let ratio = distilled.last().expect("non-empty").steps_per_s / reference_cps;
    Ok(ThroughputReport { distilled, reference_cps, ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ObsMode;
    use crate::exec::SerialExec;
    use crate::policy::PolicyConfig;
    use crate::refsim::RefSimParams;
    use crate::testutil::{no_noise, straight_scenario, TestBicycle};
    use crate::track::Track;
    use core::f64::consts::PI;

    fn small_policy() -> Policy {
        let cfg = PolicyConfig {
            ego_hidden: 8,
            d_model: 8,
            heads: 2,
            d_ff: 16,
            attn_layers: 1,
            trunk_hidden: 12,
            ..PolicyConfig::default()
        };
        Policy::new(cfg, ObsMode::default(), 0).unwrap()
    }

    fn circle_sim() -> RefSim {
        let pts: Vec<(f64, f64)> = (0..160)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / 160.0;
                (60.0 * a.cos(), 60.0 * a.sin())
            })
            .collect();
        let track = Track::from_centerline(&pts, 5.0, Vec::new(), 1.0, 0.3, true).unwrap();
        RefSim::new(track, RefSimParams::default()).unwrap()
    }

    #[test]
    fn latency_statistics_are_sane() {
        let policy = small_policy();
        let mut rng = DetRng::seed(4);
        let dim = policy.obs_dim();
        let features: Vec<Vec<f64>> =
            (0..8).map(|_| (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
        let stats = latency_benchmark(&policy, &features, 16, 120).unwrap();
        assert_eq!(stats.trials, 120);
        assert!(stats.mean_ms > 0.0);
        assert!(stats.max_ms >= stats.mean_ms);
        assert!(stats.std_ms >= 0.0);
    }

    #[test]
    fn latency_requires_enough_trials() {
        let policy = small_policy();
        let features = vec![vec![0.0; policy.obs_dim()]];
        assert!(latency_benchmark(&policy, &features, 0, 99).is_err());
        assert!(latency_benchmark(&policy, &[], 0, 100).is_err());
    }

    #[test]
    fn refsim_rate_is_positive() {
        let rate = refsim_control_rate(&circle_sim(), 64).unwrap();
        assert!(rate > 0.0);
        assert!(refsim_control_rate(&circle_sim(), 0).is_err());
    }

    #[test]
    fn throughput_report_has_one_point_per_batch_size() {
        let scenarios = vec![straight_scenario(8.0, 60, no_noise())];
        let report = throughput_benchmark(
            &TestBicycle,
            &scenarios,
            ObsMode::default(),
            RewardWeights::default(),
            &SerialExec,
            &circle_sim(),
            &[1, 4],
            24,
            32,
            7,
        )
        .unwrap();
        assert_eq!(report.distilled.len(), 2);
        assert_eq!(report.distilled[0].n_envs, 1);
        assert_eq!(report.distilled[1].n_envs, 4);
        for p in &report.distilled {
            assert!(p.steps_per_s > 0.0);
        }
        assert!(report.reference_cps > 0.0);
        assert!(report.ratio > 0.0);
        let expected = report.distilled[1].steps_per_s / report.reference_cps;
        assert!((report.ratio - expected).abs() < 1e-12);
    }

    #[test]
    fn throughput_rejects_degenerate_requests() {
        let scenarios = vec![straight_scenario(8.0, 60, no_noise())];
        let bad_batches = throughput_benchmark(
            &TestBicycle,
            &scenarios,
            ObsMode::default(),
            RewardWeights::default(),
            &SerialExec,
            &circle_sim(),
            &[],
            8,
            8,
            7,
        );
        assert!(bad_batches.is_err());
        let zero_steps = throughput_benchmark(
            &TestBicycle,
            &scenarios,
            ObsMode::default(),
            RewardWeights::default(),
            &SerialExec,
            &circle_sim(),
            &[1],
            0,
            8,
            7,
        );
        assert!(zero_steps.is_err());
    }
}
