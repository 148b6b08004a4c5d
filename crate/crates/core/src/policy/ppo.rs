//! Clipped-surrogate PPO over batched environment rollouts.
//!
//! One iteration collects `n_envs × rollout_horizon` on-policy transitions
//! (episodes rotate through fresh seeded resets as they finish), computes
//! GAE, then runs several epochs of minibatch Adam on the clipped
//! surrogate + value + entropy objective. All randomness flows through
//! seeded substreams, so single-worker runs reproduce bit-exactly.

use super::buffer::{RolloutBuffer, Transition};
use super::dist::{gaussian_entropy, squashed_log_prob, squashed_log_prob_grad};
use super::net::{HeadGrads, PolicyConfig, ACTION_DIM};
use super::Policy;
use crate::env::{EnvBatch, ObsMode, Outcome, RewardWeights, Scenario};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::models::DynamicsModel;
use crate::nn::{Adam, AdamParams, ParamStore};
use crate::rng::DetRng;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
#[cfg(not(feature = "std"))]
use num_traits::Float;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PPOConfig {
    /// Discount factor γ.
    pub gamma: f64,
    /// GAE trace decay λ.
    pub lambda: f64,
    /// Clipped-surrogate radius ε.
    pub clip: f64,
    /// Optimization epochs per rollout.
    pub epochs: usize,
    pub minibatch: usize,
    pub lr: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Total environment steps; the iteration count is this divided by one
    /// rollout's worth (`n_envs * rollout_horizon`), rounded down.
    pub total_steps: usize,
    pub n_envs: usize,
    pub rollout_horizon: usize,
    pub seed: u64,
}

impl Default for PPOConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            epochs: 4,
            minibatch: 256,
            lr: 3e-4,
            entropy_coef: 1e-3,
            value_coef: 0.5,
            total_steps: 1_000_000,
            n_envs: 256,
            rollout_horizon: 64,
            seed: 0,
        }
    }
}

impl PPOConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidParam(format!(
                "gamma {} and lambda {} must lie in [0, 1]",
                self.gamma, self.lambda
            )));
        }
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return Err(Error::InvalidParam(format!("clip {} must be positive", self.clip)));
        }
        if self.epochs == 0 || self.minibatch == 0 || self.n_envs == 0 || self.rollout_horizon == 0
        {
            return Err(Error::InvalidParam(
                "epochs, minibatch, n_envs, and rollout_horizon must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidParam(format!("learning rate {}", self.lr)));
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return Err(Error::InvalidParam("loss coefficients must be >= 0".into()));
        }
        Ok(())
    }

    /// Rollouts the step budget affords.
    pub fn iterations(&self) -> usize {
        self.total_steps / (self.n_envs * self.rollout_horizon)
    }
}

/// Averages over every minibatch of one [`ppo_update`] call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateDiagnostics {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Fraction of samples whose ratio left the clip interval.
    pub clip_fraction: f64,
    /// Mean of `log_prob_old - log_prob_new`.
    pub approx_kl: f64,
}

struct MinibatchEval {
    loss: f64,
    policy_loss: f64,
    value_loss: f64,
    entropy: f64,
    clip_fraction: f64,
    approx_kl: f64,
}

/// Loss, diagnostics, and (optionally) parameter gradients of one
/// minibatch, all as means over `idxs`. For every element the applied
/// surrogate is `min(ratio·A, clip(ratio, 1-ε, 1+ε)·A)`; gradient flows
/// through the ratio only where the unclipped branch attains the minimum.
fn minibatch_eval(
    policy: &Policy,
    store: &ParamStore,
    buf: &RolloutBuffer,
    adv_norm: &[f64],
    idxs: &[usize],
    cfg: &PPOConfig,
    mut grads: Option<&mut ParamStore>,
) -> Result<MinibatchEval> {
    let inv_b = 1.0 / idxs.len() as f64;
    let mut ev = MinibatchEval {
        loss: 0.0,
        policy_loss: 0.0,
        value_loss: 0.0,
        entropy: 0.0,
        clip_fraction: 0.0,
        approx_kl: 0.0,
    };
    let mut g_lp_mean = [0.0; ACTION_DIM];
    let mut g_lp_ls = [0.0; ACTION_DIM];
    for &row in idxs {
        let (out, cache) = policy.net.forward(store, buf.obs.row(row))?;
        let u = &buf.pre_squash[row];
        let lp_new = squashed_log_prob(u, &out.mean, &out.log_std);
        let lp_old = buf.log_probs[row];
        let ratio = (lp_new - lp_old).exp();
        let a = adv_norm[row];

        let unclipped = ratio * a;
        let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * a;
        let surrogate = unclipped.min(clipped);
        let v_err = out.value - buf.returns[row];
        let entropy = gaussian_entropy(&out.log_std);

        ev.policy_loss += -surrogate * inv_b;
        ev.value_loss += v_err * v_err * inv_b;
        ev.entropy += entropy * inv_b;
        ev.loss += (-surrogate + cfg.value_coef * v_err * v_err - cfg.entropy_coef * entropy)
            * inv_b;
        if (ratio - 1.0).abs() > cfg.clip {
            ev.clip_fraction += inv_b;
        }
        ev.approx_kl += (lp_old - lp_new) * inv_b;

        if let Some(grads) = grads.as_deref_mut() {
            let g_lp =
                if unclipped <= clipped { -ratio * a * inv_b } else { 0.0 };
            squashed_log_prob_grad(u, &out.mean, &out.log_std, &mut g_lp_mean, &mut g_lp_ls);
            let mut g = HeadGrads::default();
            for i in 0..ACTION_DIM {
                g.mean[i] = g_lp * g_lp_mean[i];
                g.log_std[i] = g_lp * g_lp_ls[i] - cfg.entropy_coef * inv_b;
            }
            g.value = cfg.value_coef * 2.0 * v_err * inv_b;
            policy.net.backward(store, &cache, &g, grads)?;
        }
    }
    Ok(ev)
}

/// Runs `cfg.epochs` of shuffled minibatch updates on a finished rollout.
/// Advantages are normalized to mean 0 / std 1 over the whole buffer
/// before the first epoch.
pub fn ppo_update(
    policy: &mut Policy,
    adam: &mut Adam,
    buf: &RolloutBuffer,
    cfg: &PPOConfig,
    rng: &mut DetRng,
) -> Result<UpdateDiagnostics> {
    cfg.validate()?;
    if !buf.is_finished() {
        return Err(Error::TooShort("rollout buffer needs finish() before updates"));
    }
    let n = buf.len();
    let mean = buf.advantages.iter().sum::<f64>() / n as f64;
    let var = buf.advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
    let inv_std = 1.0 / (var.sqrt() + 1e-8);
    let adv_norm: Vec<f64> = buf.advantages.iter().map(|a| (a - mean) * inv_std).collect();

    let mut idxs: Vec<usize> = (0..n).collect();
    let mut grads = policy.store.zeros_like();
    let mut total = UpdateDiagnostics {
        policy_loss: 0.0,
        value_loss: 0.0,
        entropy: 0.0,
        clip_fraction: 0.0,
        approx_kl: 0.0,
    };
    let mut batches = 0usize;
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut idxs);
        for chunk in idxs.chunks(cfg.minibatch) {
            grads.zero_all();
            let ev = minibatch_eval(
                policy,
                &policy.store,
                buf,
                &adv_norm,
                chunk,
                cfg,
                Some(&mut grads),
            )?;
            if !ev.loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite PPO loss in epoch {epoch}"
                )));
            }
            adam.step(&mut policy.store, &grads)?;
            total.policy_loss += ev.policy_loss;
            total.value_loss += ev.value_loss;
            total.entropy += ev.entropy;
            total.clip_fraction += ev.clip_fraction;
            total.approx_kl += ev.approx_kl;
            batches += 1;
        }
    }
    let inv = 1.0 / batches as f64;
    total.policy_loss *= inv;
    total.value_loss *= inv;
    total.entropy *= inv;
    total.clip_fraction *= inv;
    total.approx_kl *= inv;
    Ok(total)
}

/// One row of the learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    /// Cumulative environment steps after this iteration.
    pub env_steps: usize,
    /// Episodes that terminated during this rollout.
    pub episodes: usize,
    /// Mean undiscounted return of those episodes (absent if none ended).
    pub mean_return: Option<f64>,
    pub success_rate: Option<f64>,
    pub mean_length: Option<f64>,
    /// Mean per-step reward across the whole rollout (always defined).
    pub mean_step_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Trains a fresh policy with PPO on `model`-driven episodes over
/// `scenarios`. Episodes reset into fresh seeded substreams as they end;
/// `on_iter` runs after every iteration (checkpointing, logging). Returns
/// the trained policy and the per-iteration learning curve. A zero step
/// budget returns the initialized policy untouched.
#[allow(clippy::too_many_arguments)]
pub fn train_policy(
    scenarios: Vec<Scenario>,
    model: &(dyn DynamicsModel + Sync),
    mode: ObsMode,
    weights: RewardWeights,
    net_cfg: PolicyConfig,
    cfg: &PPOConfig,
    exec: &dyn Executor,
    on_iter: &mut dyn FnMut(&Policy, &IterationStats) -> Result<()>,
) -> Result<(Policy, Vec<IterationStats>)> {
    cfg.validate()?;
    let mut policy = Policy::new(net_cfg, mode, cfg.seed)?;
    let iters = cfg.iterations();
    let mut curve = Vec::with_capacity(iters);
    if iters == 0 {
        return Ok((policy, curve));
    }

    let n = cfg.n_envs;
    let mut env =
        EnvBatch::new(scenarios, n, model.history_len(), mode, weights, cfg.seed, 0)?;
    let mut adam = Adam::new(&policy.store, AdamParams::with_lr(cfg.lr));
    let mut noise_rng = DetRng::substream(cfg.seed, 1);
    // Streams 0..n seeded the initial episodes; resets continue from n.
    let mut next_stream = n as u64;

    let mut ep_return = vec![0.0; n];
    let mut ep_len = vec![0usize; n];
    let mut actions = vec![crate::vehicle::Action::zero(); n];

    for iter in 0..iters {
        let mut buf = RolloutBuffer::new(n, cfg.rollout_horizon, mode.dim())?;
        let mut obs_feats: Vec<Vec<f64>> =
            env.observe_all()?.iter().map(|o| o.features()).collect();
        let mut transitions: Vec<Transition> = Vec::with_capacity(n);
        let (mut ended, mut succeeded) = (0usize, 0usize);
        let (mut ret_sum, mut len_sum) = (0.0, 0usize);

        for _t in 0..cfg.rollout_horizon {
            transitions.clear();
            for (i, feats) in obs_feats.iter().enumerate() {
                let (action, u, log_prob, value) = policy.act(feats, &mut noise_rng)?;
                actions[i] = action;
                transitions.push(Transition {
                    action: [action.tau, action.delta],
                    pre_squash: u,
                    log_prob,
                    reward: 0.0,
                    done: false,
                    value,
                });
            }
            let out = env.step(model, exec, &actions)?;
            for (tr, (&reward, &done)) in
                transitions.iter_mut().zip(out.rewards.iter().zip(&out.dones))
            {
                tr.reward = reward;
                tr.done = done;
            }
            buf.push_step(&obs_feats, &transitions)?;

            for i in 0..n {
                ep_return[i] += out.rewards[i];
                ep_len[i] += 1;
                if out.dones[i] {
                    let slot = &env.episodes()[i];
                    if slot.outcome == Outcome::Diverged {
                        return Err(Error::Diverged(format!(
                            "dynamics diverged in scenario {} at iteration {iter}",
                            slot.scenario()
                        )));
                    }
                    ended += 1;
                    succeeded += usize::from(slot.outcome == Outcome::Success);
                    ret_sum += ep_return[i];
                    len_sum += ep_len[i];
                    ep_return[i] = 0.0;
                    ep_len[i] = 0;
                    env.reset_one(i, next_stream)?;
                    next_stream += 1;
                }
            }
            obs_feats = env.observe_all()?.iter().map(|o| o.features()).collect();
        }

        let last_values = obs_feats
            .iter()
            .map(|f| Ok(policy.forward(f)?.value))
            .collect::<Result<Vec<f64>>>()?;
        buf.finish(&last_values, cfg.gamma, cfg.lambda)?;

        let mut shuffle_rng = DetRng::substream(cfg.seed, 100 + iter as u64);
        let diag = ppo_update(&mut policy, &mut adam, &buf, cfg, &mut shuffle_rng)?;

        let stats = IterationStats {
            iteration: iter,
            env_steps: (iter + 1) * n * cfg.rollout_horizon,
            episodes: ended,
            mean_return: (ended > 0).then(|| ret_sum / ended as f64),
            success_rate: (ended > 0).then(|| succeeded as f64 / ended as f64),
            mean_length: (ended > 0).then(|| len_sum as f64 / ended as f64),
            mean_step_reward: buf.rewards.iter().sum::<f64>() / buf.len() as f64,
            policy_loss: diag.policy_loss,
            value_loss: diag.value_loss,
            entropy: diag.entropy,
            clip_fraction: diag.clip_fraction,
            approx_kl: diag.approx_kl,
        };
        on_iter(&policy, &stats)?;
        curve.push(stats);
    }
    Ok((policy, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::scenario::StartNoise;
    use crate::exec::SerialExec;
    use crate::testutil::{straight_scenario as straight_with_noise, TestBicycle};

    fn tiny_net() -> PolicyConfig {
        PolicyConfig {
            ego_hidden: 8,
            d_model: 8,
            heads: 2,
            d_ff: 16,
            attn_layers: 1,
            trunk_hidden: 12,
            ..PolicyConfig::default()
        }
    }

    /// Sample a consistent on-policy buffer from random observations.
    fn sampled_buffer(
        policy: &Policy,
        n_envs: usize,
        horizon: usize,
        seed: u64,
    ) -> RolloutBuffer {
        let mut rng = DetRng::seed(seed);
        let dim = policy.obs_dim();
        let mut buf = RolloutBuffer::new(n_envs, horizon, dim).unwrap();
        for t in 0..horizon {
            let obs: Vec<Vec<f64>> = (0..n_envs)
                .map(|_| (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect())
                .collect();
            let trs: Vec<Transition> = obs
                .iter()
                .map(|o| {
                    let (a, u, lp, v) = policy.act(o, &mut rng).unwrap();
                    Transition {
                        action: [a.tau, a.delta],
                        pre_squash: u,
                        log_prob: lp,
                        reward: rng.uniform(-1.0, 1.0),
                        done: t + 1 == horizon,
                        value: v,
                    }
                })
                .collect();
            buf.push_step(&obs, &trs).unwrap();
        }
        buf.finish(&vec![0.0; n_envs], 0.99, 0.95).unwrap();
        buf
    }

    #[test]
    fn unchanged_policy_has_unit_ratios_and_zero_kl() {
        let mut policy = Policy::new(tiny_net(), ObsMode::default(), 1).unwrap();
        let buf = sampled_buffer(&policy, 3, 4, 2);
        // One epoch over one full-buffer minibatch: every ratio is
        // recomputed with identical parameters, so it is exactly 1.
        let cfg = PPOConfig {
            epochs: 1,
            minibatch: buf.len(),
            n_envs: 3,
            rollout_horizon: 4,
            ..PPOConfig::default()
        };
        let mut adam = Adam::new(&policy.store, AdamParams::with_lr(cfg.lr));
        let mut rng = DetRng::seed(3);
        let diag = ppo_update(&mut policy, &mut adam, &buf, &cfg, &mut rng).unwrap();
        assert_eq!(diag.clip_fraction, 0.0);
        assert_eq!(diag.approx_kl, 0.0);
    }

    #[test]
    fn zero_advantages_leave_the_actor_mean_untouched() {
        let mut policy = Policy::new(tiny_net(), ObsMode::default(), 4).unwrap();
        // All-zero rewards and values make every advantage zero: only the
        // entropy bonus (log-std path) may move parameters.
        let mut rng = DetRng::seed(5);
        let dim = policy.obs_dim();
        let mut buf = RolloutBuffer::new(2, 3, dim).unwrap();
        for t in 0..3 {
            let obs: Vec<Vec<f64>> = (0..2)
                .map(|_| (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect())
                .collect();
            let trs: Vec<Transition> = obs
                .iter()
                .map(|o| {
                    let (a, u, lp, _) = policy.act(o, &mut rng).unwrap();
                    Transition {
                        action: [a.tau, a.delta],
                        pre_squash: u,
                        log_prob: lp,
                        reward: 0.0,
                        done: t == 2,
                        value: 0.0,
                    }
                })
                .collect();
            buf.push_step(&obs, &trs).unwrap();
        }
        buf.finish(&[0.0, 0.0], 0.99, 0.95).unwrap();
        assert!(buf.advantages.iter().all(|a| *a == 0.0));

        let mean_w = policy.store.get("pi.mean.w").unwrap().data().to_vec();
        let value_w = policy.store.get("pi.value.w").unwrap().data().to_vec();
        let logstd_b = policy.store.get("pi.logstd.b").unwrap().data().to_vec();
        let cfg = PPOConfig {
            epochs: 2,
            minibatch: 6,
            n_envs: 2,
            rollout_horizon: 3,
            lr: 1e-2,
            ..PPOConfig::default()
        };
        let mut adam = Adam::new(&policy.store, AdamParams::with_lr(cfg.lr));
        let mut rng = DetRng::seed(6);
        ppo_update(&mut policy, &mut adam, &buf, &cfg, &mut rng).unwrap();
        // Zero-initialized critic on zero returns also has zero gradient.
        assert_eq!(policy.store.get("pi.mean.w").unwrap().data(), &mean_w[..]);
        assert_eq!(policy.store.get("pi.value.w").unwrap().data(), &value_w[..]);
        assert_ne!(policy.store.get("pi.logstd.b").unwrap().data(), &logstd_b[..]);
    }

    #[test]
    fn minibatch_gradients_match_finite_differences() {
        let mut policy = Policy::new(tiny_net(), ObsMode::default(), 7).unwrap();
        // Randomize heads so the surrogate and value paths carry signal.
        let mut rng = DetRng::seed(8);
        for name in ["pi.mean.w", "pi.logstd.w", "pi.value.w"] {
            let (r, c) = {
                let w = policy.store.get(name).unwrap();
                (w.rows(), w.cols())
            };
            *policy.store.get_mut(name).unwrap() =
                crate::nn::Mat::from_fn(r, c, |_, _| rng.uniform(-0.2, 0.2));
        }
        let buf = sampled_buffer(&policy, 2, 3, 9);
        let n = buf.len();
        let mean = buf.advantages.iter().sum::<f64>() / n as f64;
        let var =
            buf.advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
        let inv_std = 1.0 / (var.sqrt() + 1e-8);
        let adv: Vec<f64> = buf.advantages.iter().map(|a| (a - mean) * inv_std).collect();
        let idxs: Vec<usize> = (0..n).collect();
        let cfg = PPOConfig::default();

        let analytic = {
            let mut grads = policy.store.zeros_like();
            minibatch_eval(&policy, &policy.store, &buf, &adv, &idxs, &cfg, Some(&mut grads))
                .unwrap();
            grads
        };
        let p2 = Policy::new(tiny_net(), ObsMode::default(), 7).unwrap();
        let loss = |s: &ParamStore| {
            Ok(minibatch_eval(&p2, s, &buf, &adv, &idxs, &cfg, None)?.loss)
        };
        let mut probe_store = policy.store.clone();
        let report = crate::nn::grad_check(loss, &analytic, &mut probe_store, 1e-5, 3).unwrap();
        assert!(
            report.passes(1e-4),
            "max rel err {} at {}",
            report.max_rel_err,
            report.worst_param
        );
    }

    /// One-step bandit with reward `-(a₀ - 0.5)²`: the actor mean must move
    /// toward the pre-squash optimum `atanh(0.5)`.
    #[test]
    fn toy_bandit_moves_the_mean_toward_the_optimum() {
        let mut policy = Policy::new(tiny_net(), ObsMode::default(), 10).unwrap();
        let dim = policy.obs_dim();
        let obs = vec![0.25; dim];
        let cfg = PPOConfig {
            epochs: 4,
            minibatch: 64,
            n_envs: 64,
            rollout_horizon: 1,
            lr: 3e-3,
            entropy_coef: 1e-3,
            ..PPOConfig::default()
        };
        let mut adam = Adam::new(&policy.store, AdamParams::with_lr(cfg.lr));
        let mut rng = DetRng::seed(11);
        for iter in 0..200 {
            let mut buf = RolloutBuffer::new(64, 1, dim).unwrap();
            let obs_rows: Vec<Vec<f64>> = (0..64).map(|_| obs.clone()).collect();
            let trs: Vec<Transition> = (0..64)
                .map(|_| {
                    let (a, u, lp, v) = policy.act(&obs, &mut rng).unwrap();
                    Transition {
                        action: [a.tau, a.delta],
                        pre_squash: u,
                        log_prob: lp,
                        reward: -(a.tau - 0.5) * (a.tau - 0.5),
                        done: true,
                        value: v,
                    }
                })
                .collect();
            buf.push_step(&obs_rows, &trs).unwrap();
            buf.finish(&vec![0.0; 64], cfg.gamma, cfg.lambda).unwrap();
            let mut shuffle = DetRng::substream(12, iter);
            ppo_update(&mut policy, &mut adam, &buf, &cfg, &mut shuffle).unwrap();
        }
        let out = policy.forward(&obs).unwrap();
        let a0 = out.mean[0].tanh();
        assert!(
            (a0 - 0.5).abs() < 0.1,
            "bandit mean action {a0}, pre-squash mean {}",
            out.mean[0]
        );
    }

    /// Test plant: a kinematic bicycle that answers to actions, so policies
    /// have real control authority without a trained dynamics model.
    fn straight_scenario(v: f64, steps: usize) -> Scenario {
        straight_with_noise(v, steps, StartNoise::default())
    }

    #[test]
    fn zero_budget_returns_the_initialized_policy() {
        let cfg = PPOConfig {
            total_steps: 0,
            n_envs: 2,
            rollout_horizon: 4,
            ..PPOConfig::default()
        };
        let fresh = Policy::new(tiny_net(), ObsMode::default(), cfg.seed).unwrap();
        let (policy, curve) = train_policy(
            vec![straight_scenario(8.0, 40)],
            &TestBicycle,
            ObsMode::default(),
            RewardWeights::default(),
            tiny_net(),
            &cfg,
            &SerialExec,
            &mut |_, _| Ok(()),
        )
        .unwrap();
        assert!(curve.is_empty());
        assert_eq!(policy.store.flat(), fresh.store.flat());
    }

    #[test]
    fn training_is_seeded_reproducible() {
        let cfg = PPOConfig {
            total_steps: 64,
            n_envs: 4,
            rollout_horizon: 8,
            minibatch: 16,
            epochs: 2,
            seed: 13,
            ..PPOConfig::default()
        };
        let run = || {
            let mut seen = 0usize;
            let (policy, curve) = train_policy(
                vec![straight_scenario(8.0, 40)],
                &TestBicycle,
                ObsMode::default(),
                RewardWeights::default(),
                tiny_net(),
                &cfg,
                &SerialExec,
                &mut |_, _| {
                    seen += 1;
                    Ok(())
                },
            )
            .unwrap();
            (policy.store.flat(), curve, seen)
        };
        let (p1, c1, seen1) = run();
        let (p2, c2, _) = run();
        assert_eq!(c1.len(), cfg.iterations());
        assert_eq!(seen1, c1.len());
        assert_eq!(c1, c2);
        let b1: Vec<u64> = p1.iter().map(|v| v.to_bits()).collect();
        let b2: Vec<u64> = p2.iter().map(|v| v.to_bits()).collect();
        assert_eq!(b1, b2, "training must be bit-reproducible under a seed");
    }

    /// Straight-line tracking with a responsive plant: episodic returns
    /// must improve substantially over the first iteration's mean.
    #[test]
    fn straight_line_training_improves_returns() {
        let cfg = PPOConfig {
            total_steps: 24_000,
            n_envs: 16,
            rollout_horizon: 30,
            minibatch: 120,
            epochs: 4,
            lr: 1e-3,
            seed: 14,
            ..PPOConfig::default()
        };
        let (_, curve) = train_policy(
            vec![straight_scenario(8.0, 40)],
            &TestBicycle,
            ObsMode::default(),
            RewardWeights::default(),
            tiny_net(),
            &cfg,
            &SerialExec,
            &mut |_, _| Ok(()),
        )
        .unwrap();
        let first = curve.first().unwrap().mean_return.expect("episodes finish within iter 0");
        let last5: Vec<f64> =
            curve.iter().rev().take(5).filter_map(|s| s.mean_return).collect();
        let late = last5.iter().sum::<f64>() / last5.len() as f64;
        assert!(
            late > first && late >= 1.5 * first.max(0.1),
            "first-iteration mean return {first}, late mean {late}"
        );
    }
}
