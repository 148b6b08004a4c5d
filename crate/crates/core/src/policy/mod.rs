//! Actor-critic policy and PPO trainer over batched environment rollouts.
//!
//! [`Policy`] wraps the network ([`net`]), its parameters, and the
//! observation mode it was built for; deployments against a different mode
//! are shape-incompatible by construction. [`ppo::train_policy`] runs the
//! full collect/estimate/update loop, bit-reproducibly under a seed.

pub mod buffer;
pub mod dist;
pub mod net;
pub mod ppo;

pub use buffer::{compute_gae, RolloutBuffer, Transition};
pub use dist::{gaussian_entropy, sample_squashed, squashed_log_prob, tanh_log_jacobian};
pub use net::{HeadGrads, PolicyConfig, PolicyOutput, ACTION_DIM};
pub use ppo::{ppo_update, train_policy, IterationStats, PPOConfig, UpdateDiagnostics};

use crate::env::ObsMode;
use crate::error::Result;
use crate::nn::ParamStore;
use crate::rng::DetRng;
use crate::vehicle::Action;
use net::PolicyNet;
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// A stochastic trajectory-tracking policy: tanh-squashed diagonal
/// Gaussian actor plus value critic over one observation layout.
pub struct Policy {
    pub(crate) net: PolicyNet,
    pub(crate) store: ParamStore,
    mode: ObsMode,
}

impl Policy {
    /// Fresh policy with zero-initialized heads: it starts as the zero
    /// (coast, centered) action with exploration σ = exp(log_std_init).
    pub fn new(cfg: PolicyConfig, mode: ObsMode, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = DetRng::seed(seed);
        let net = PolicyNet::declare(&mut store, &mut rng, "pi", cfg, mode)?;
        Ok(Self { net, store, mode })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.net.cfg
    }

    /// Observation layout this policy was built for. Checkpoints carry it
    /// so evaluation refuses a mismatched deployment.
    pub fn mode(&self) -> ObsMode {
        self.mode
    }

    pub fn obs_dim(&self) -> usize {
        self.net.obs_dim()
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Deterministic network outputs for one feature vector.
    pub fn forward(&self, features: &[f64]) -> Result<PolicyOutput> {
        Ok(self.net.forward(&self.store, features)?.0)
    }

    /// Samples an action; returns it with the pre-squash draw, its
    /// log-probability, and the value estimate (everything PPO stores).
    pub fn act(&self, features: &[f64], rng: &mut DetRng) -> Result<(Action, [f64; 2], f64, f64)> {
        let out = self.forward(features)?;
        let (a, u, log_prob) = dist::sample_squashed(&out.mean, &out.log_std, rng);
        Ok((Action { tau: a[0], delta: a[1] }, u, log_prob, out.value))
    }

    /// Evaluation-mode action: `tanh(mean)`, no sampling.
    pub fn act_deterministic(&self, features: &[f64]) -> Result<Action> {
        let out = self.forward(features)?;
        Ok(Action { tau: out.mean[0].tanh(), delta: out.mean[1].tanh() })
    }
}
