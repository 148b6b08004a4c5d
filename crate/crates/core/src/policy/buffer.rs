//! On-policy rollout storage and generalized advantage estimation.

use super::net::ACTION_DIM;
use crate::error::{Error, Result};
use crate::nn::Mat;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// Standard GAE(γ, λ) over one trajectory segment.
///
/// `rewards`, `values`, and `dones` are index-aligned; `dones[t]` marks a
/// terminal transition, which zeroes the bootstrap and resets the
/// recursion. `last_value` bootstraps past the final step when the segment
/// ends mid-episode. Returns `(advantages, returns)` with
/// `returns = advantages + values`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let t_len = rewards.len();
    if values.len() != t_len || dones.len() != t_len {
        return Err(Error::ShapeMismatch(format!(
            "GAE lengths: {} rewards, {} values, {} dones",
            t_len,
            values.len(),
            dones.len()
        )));
    }
    if !(0.0..=1.0).contains(&gamma) || !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParam(format!(
            "gamma {gamma} and lambda {lambda} must lie in [0, 1]"
        )));
    }
    let mut adv = vec![0.0; t_len];
    let mut ret = vec![0.0; t_len];
    let mut acc = 0.0;
    for t in (0..t_len).rev() {
        let (next_value, live) = if dones[t] {
            (0.0, 0.0)
        } else if t + 1 == t_len {
            (last_value, 1.0)
        } else {
            (values[t + 1], 1.0)
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        acc = delta + gamma * lambda * live * acc;
        adv[t] = acc;
        ret[t] = acc + values[t];
    }
    Ok((adv, ret))
}

/// Fixed-capacity on-policy buffer for `n_envs × horizon` transitions,
/// filled one synchronized step at a time. Row `t * n_envs + i` holds env
/// `i` at step `t`. Advantages are computed once by [`Self::finish`] before
/// any update touches the data.
pub struct RolloutBuffer {
    pub obs: Mat,
    pub actions: Vec<[f64; ACTION_DIM]>,
    /// Pre-squash Gaussian samples; PPO recomputes densities from these.
    pub pre_squash: Vec<[f64; ACTION_DIM]>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    n_envs: usize,
    horizon: usize,
    steps: usize,
    finished: bool,
}

/// Everything recorded for one env at one step.
pub struct Transition {
    pub action: [f64; ACTION_DIM],
    pub pre_squash: [f64; ACTION_DIM],
    pub log_prob: f64,
    pub reward: f64,
    pub done: bool,
    pub value: f64,
}

impl RolloutBuffer {
    pub fn new(n_envs: usize, horizon: usize, obs_dim: usize) -> Result<Self> {
        if n_envs == 0 || horizon == 0 || obs_dim == 0 {
            return Err(Error::InvalidParam("rollout buffer dimensions must be positive".into()));
        }
        let cap = n_envs * horizon;
        Ok(Self {
            obs: Mat::zeros(cap, obs_dim),
            actions: Vec::with_capacity(cap),
            pre_squash: Vec::with_capacity(cap),
            log_probs: Vec::with_capacity(cap),
            rewards: Vec::with_capacity(cap),
            dones: Vec::with_capacity(cap),
            values: Vec::with_capacity(cap),
            advantages: Vec::new(),
            returns: Vec::new(),
            n_envs,
            horizon,
            steps: 0,
            finished: false,
        })
    }

    pub fn n_envs(&self) -> usize {
        self.n_envs
    }

    pub fn capacity(&self) -> usize {
        self.n_envs * self.horizon
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.steps == self.horizon
    }

    /// True once [`Self::finish`] has filled advantages and returns.
    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Appends one synchronized step: `obs_rows[i]` is the observation env
    /// `i` acted on and `transitions[i]` what came back.
    pub fn push_step(&mut self, obs_rows: &[Vec<f64>], transitions: &[Transition]) -> Result<()> {
        if self.is_full() {
            return Err(Error::OutOfRange("rollout buffer is full".into()));
        }
        if obs_rows.len() != self.n_envs || transitions.len() != self.n_envs {
            return Err(Error::ShapeMismatch(format!(
                "push_step got {} obs / {} transitions for {} envs",
                obs_rows.len(),
                transitions.len(),
                self.n_envs
            )));
        }
        for (i, (o, tr)) in obs_rows.iter().zip(transitions).enumerate() {
            if o.len() != self.obs.cols() {
                return Err(Error::ShapeMismatch(format!(
                    "observation {i} has {} features, buffer holds {}",
                    o.len(),
                    self.obs.cols()
                )));
            }
            let row = self.steps * self.n_envs + i;
            self.obs.row_mut(row).copy_from_slice(o);
            self.actions.push(tr.action);
            self.pre_squash.push(tr.pre_squash);
            self.log_probs.push(tr.log_prob);
            self.rewards.push(tr.reward);
            self.dones.push(tr.done);
            self.values.push(tr.value);
        }
        self.steps += 1;
        Ok(())
    }

    /// Computes advantages and returns for the full buffer, one GAE pass
    /// per env column. `last_values[i]` bootstraps env `i` past the final
    /// step (ignored where the final transition was terminal).
    pub fn finish(&mut self, last_values: &[f64], gamma: f64, lambda: f64) -> Result<()> {
        if !self.is_full() {
            return Err(Error::TooShort("rollout buffer not full"));
        }
        if last_values.len() != self.n_envs {
            return Err(Error::ShapeMismatch(format!(
                "{} bootstrap values for {} envs",
                last_values.len(),
                self.n_envs
            )));
        }
        let cap = self.capacity();
        self.advantages = vec![0.0; cap];
        self.returns = vec![0.0; cap];
        let mut col_r = vec![0.0; self.horizon];
        let mut col_v = vec![0.0; self.horizon];
        let mut col_d = vec![false; self.horizon];
        for (i, &bootstrap) in last_values.iter().enumerate() {
            for t in 0..self.horizon {
                let row = t * self.n_envs + i;
                col_r[t] = self.rewards[row];
                col_v[t] = self.values[row];
                col_d[t] = self.dones[row];
            }
            let (adv, ret) = compute_gae(&col_r, &col_v, &col_d, bootstrap, gamma, lambda)?;
            for t in 0..self.horizon {
                let row = t * self.n_envs + i;
                self.advantages[row] = adv[t];
                self.returns[row] = ret[t];
            }
        }
        self.finished = true;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;

    #[test]
    fn gae_hand_recursion() {
        // γ = λ = 1, rewards (1, 1, 1), zero values, terminal end: the
        // advantage is the plain reward-to-go (3, 2, 1).
        let (adv, ret) = compute_gae(
            &[1.0, 1.0, 1.0],
            &[0.0, 0.0, 0.0],
            &[false, false, true],
            0.0,
            1.0,
            1.0,
        )
        .unwrap();
        assert_eq!(adv, alloc::vec![3.0, 2.0, 1.0]);
        assert_eq!(ret, alloc::vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn gamma_zero_is_one_step_td() {
        let r = [0.5, -1.0, 2.0];
        let v = [0.2, 0.7, -0.3];
        let (adv, _) =
            compute_gae(&r, &v, &[false, false, false], 0.9, 0.0, 0.7).unwrap();
        for t in 0..3 {
            assert!((adv[t] - (r[t] - v[t])).abs() < 1e-15);
        }
    }

    #[test]
    fn fixed_point_has_zero_advantage() {
        // Rewards exactly matching the value function's one-step
        // predictions leave nothing to correct.
        let gamma = 0.97;
        let mut rng = DetRng::seed(4);
        let v: Vec<f64> = (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let boot = rng.uniform(-1.0, 1.0);
        let r: Vec<f64> = (0..6)
            .map(|t| {
                let next = if t == 5 { boot } else { v[t + 1] };
                v[t] - gamma * next
            })
            .collect();
        let (adv, _) = compute_gae(&r, &v, &[false; 6], boot, gamma, 0.95).unwrap();
        assert!(adv.iter().all(|a| a.abs() < 1e-12), "{adv:?}");
    }

    /// Recursion vs. the defining truncated sum
    /// `A_t = Σ_l (γλ)^l δ_{t+l}` with episode cuts.
    #[test]
    fn gae_matches_brute_force_sum() {
        let mut rng = DetRng::seed(11);
        for case in 0..30 {
            let n = 1 + (case % 10);
            let r: Vec<f64> = (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let d: Vec<bool> = (0..n).map(|_| rng.chance(0.25)).collect();
            let boot = rng.uniform(-2.0, 2.0);
            let (gamma, lambda) = (rng.uniform(0.5, 1.0), rng.uniform(0.5, 1.0));
            let (adv, ret) = compute_gae(&r, &v, &d, boot, gamma, lambda).unwrap();

            let delta = |t: usize| {
                let next = if d[t] {
                    0.0
                } else if t + 1 == n {
                    boot
                } else {
                    v[t + 1]
                };
                r[t] + gamma * next - v[t]
            };
            for t in 0..n {
                let mut sum = 0.0;
                let mut w = 1.0;
                // Indexed on purpose: this is the literal truncated-sum
                // definition the vectorized recursion is checked against.
                #[allow(clippy::needless_range_loop)]
                for l in t..n {
                    sum += w * delta(l);
                    if d[l] {
                        break;
                    }
                    w *= gamma * lambda;
                }
                assert!((adv[t] - sum).abs() < 1e-12, "case {case} t {t}");
                assert!((ret[t] - (sum + v[t])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gae_validates_inputs() {
        assert!(compute_gae(&[1.0], &[0.0, 0.0], &[false], 0.0, 0.99, 0.95).is_err());
        assert!(compute_gae(&[1.0], &[0.0], &[false], 0.0, 1.5, 0.95).is_err());
    }

    #[test]
    fn buffer_layout_and_lifecycle() {
        let mut buf = RolloutBuffer::new(2, 3, 4).unwrap();
        assert!(!buf.is_full() && !buf.is_finished());
        for t in 0..3 {
            let obs: Vec<Vec<f64>> = (0..2)
                .map(|i| alloc::vec![t as f64, i as f64, 0.0, 1.0])
                .collect();
            let trs: Vec<Transition> = (0..2)
                .map(|i| Transition {
                    action: [0.1, 0.2],
                    pre_squash: [0.1, 0.2],
                    log_prob: -1.0,
                    reward: (t * 2 + i) as f64,
                    done: t == 2,
                    value: 0.0,
                })
                .collect();
            buf.push_step(&obs, &trs).unwrap();
        }
        assert!(buf.is_full());
        assert!(buf.push_step(&[], &[]).is_err());
        // Row t*n+i keeps env columns aligned.
        assert_eq!(buf.obs.row(3), &[1.0, 1.0, 0.0, 1.0]);
        assert_eq!(buf.rewards[3], 3.0);

        buf.finish(&[0.0, 0.0], 1.0, 1.0).unwrap();
        assert!(buf.is_finished());
        // Env 0 rewards (0, 2, 4) with terminal end: reward-to-go.
        assert_eq!(buf.advantages[0], 6.0);
        assert_eq!(buf.advantages[2], 6.0);
        assert_eq!(buf.advantages[4], 4.0);
    }

    #[test]
    fn buffer_rejects_misshapen_pushes() {
        let mut buf = RolloutBuffer::new(2, 2, 3).unwrap();
        let tr = || Transition {
            action: [0.0; 2],
            pre_squash: [0.0; 2],
            log_prob: 0.0,
            reward: 0.0,
            done: false,
            value: 0.0,
        };
        assert!(buf.push_step(&[alloc::vec![0.0; 3]], &[tr()]).is_err());
        assert!(buf
            .push_step(&[alloc::vec![0.0; 2], alloc::vec![0.0; 2]], &[tr(), tr()])
            .is_err());
        assert!(buf.finish(&[0.0, 0.0], 0.99, 0.95).is_err());
    }
}
