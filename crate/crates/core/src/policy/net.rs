//! Actor-critic network over trajectory-tracking observations.
//!
//! The ego block runs through a small MLP; the lookahead waypoints are
//! projected into a latent space, given learned positional encodings,
//! passed through a Transformer encoder, and mean-pooled. Both embeddings
//! concatenate into a shared trunk feeding three zero-initialized heads:
//! action mean, state-dependent log-std (offset and clamped), and value.

use crate::env::{ObsMode, LOOKAHEAD};
use crate::error::{Error, Result};
use crate::nn::{
    tanh_backward, tanh_forward, AttnBlock, AttnCache, Dense, Init, Mat, ParamStore,
};
use crate::rng::DetRng;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

/// Commanded torque and steer: two action components.
pub const ACTION_DIM: usize = 2;

/// Per-waypoint observation features (Δx, Δy, Δφ, Δv).
const WP_FEATS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    /// Width of the ego-state MLP encoder.
    pub ego_hidden: usize,
    /// Waypoint latent width (token dimension of the encoder).
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    /// Transformer encoder depth over the waypoint tokens.
    pub attn_layers: usize,
    /// Width of the shared trunk after concatenation.
    pub trunk_hidden: usize,
    /// Offset added to the zero-initialized log-std head, so the initial
    /// policy explores with σ = exp(log_std_init).
    pub log_std_init: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            ego_hidden: 32,
            d_model: 32,
            heads: 4,
            d_ff: 64,
            attn_layers: 1,
            trunk_hidden: 64,
            log_std_init: -0.5,
            log_std_min: -4.0,
            log_std_max: 1.0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ego_hidden == 0
            || self.d_model == 0
            || self.heads == 0
            || self.d_ff == 0
            || self.attn_layers == 0
            || self.trunk_hidden == 0
        {
            return Err(Error::InvalidParam("policy widths must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::InvalidParam(format!(
                "d_model {} must divide into {} heads",
                self.d_model, self.heads
            )));
        }
        if self.log_std_min.is_nan()
            || self.log_std_max.is_nan()
            || self.log_std_min >= self.log_std_max
            || !(self.log_std_min..=self.log_std_max).contains(&self.log_std_init)
        {
            return Err(Error::InvalidParam(format!(
                "log-std interval [{}, {}] must contain the init {}",
                self.log_std_min, self.log_std_max, self.log_std_init
            )));
        }
        Ok(())
    }
}

/// Deterministic network outputs for one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyOutput {
    pub mean: [f64; ACTION_DIM],
    /// Clamped state-dependent log standard deviation.
    pub log_std: [f64; ACTION_DIM],
    pub value: f64,
}

/// Output cotangents fed to [`PolicyNet::backward`]. The log-std component
/// is with respect to the *clamped* value; the backward pass zeroes it
/// where the clamp binds.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeadGrads {
    pub mean: [f64; ACTION_DIM],
    pub log_std: [f64; ACTION_DIM],
    pub value: f64,
}

/// Layer handles; parameters live in the owning store.
#[derive(Debug, Clone)]
pub(crate) struct PolicyNet {
    ego1: Dense,
    ego2: Dense,
    wproj: Dense,
    pos: String,
    blocks: Vec<AttnBlock>,
    trunk: Dense,
    actor_mean: Dense,
    actor_log_std: Dense,
    critic: Dense,
    pub(crate) cfg: PolicyConfig,
    pub(crate) ego_dim: usize,
}

/// Forward activations needed by the exact backward pass.
pub(crate) struct PolicyCache {
    ego_in: Mat,
    e1: Mat,
    e2: Mat,
    wp_in: Mat,
    block_caches: Vec<AttnCache>,
    cat: Mat,
    t1: Mat,
    raw_log_std: [f64; ACTION_DIM],
}

impl PolicyNet {
    pub(crate) fn declare(
        store: &mut ParamStore,
        rng: &mut DetRng,
        prefix: &str,
        cfg: PolicyConfig,
        mode: ObsMode,
    ) -> Result<Self> {
        cfg.validate()?;
        let ego_dim = mode.dim() - WP_FEATS * LOOKAHEAD;
        let ego1 = Dense::declare(
            store,
            rng,
            &format!("{prefix}.ego1"),
            ego_dim,
            cfg.ego_hidden,
            Init::FanIn,
        )?;
        let ego2 = Dense::declare(
            store,
            rng,
            &format!("{prefix}.ego2"),
            cfg.ego_hidden,
            cfg.ego_hidden,
            Init::FanIn,
        )?;
        let wproj = Dense::declare(
            store,
            rng,
            &format!("{prefix}.wproj"),
            WP_FEATS,
            cfg.d_model,
            Init::FanIn,
        )?;
        let pos = format!("{prefix}.pos");
        store.add(&pos, LOOKAHEAD, cfg.d_model, Init::Uniform { lo: -0.1, hi: 0.1 }, rng)?;
        let mut blocks = Vec::with_capacity(cfg.attn_layers);
        for i in 0..cfg.attn_layers {
            blocks.push(AttnBlock::declare(
                store,
                rng,
                &format!("{prefix}.blk{i}"),
                cfg.d_model,
                cfg.heads,
                cfg.d_ff,
            )?);
        }
        let trunk = Dense::declare(
            store,
            rng,
            &format!("{prefix}.trunk"),
            cfg.ego_hidden + cfg.d_model,
            cfg.trunk_hidden,
            Init::FanIn,
        )?;
        // Zero-initialized heads: the untrained policy has mean 0, value 0,
        // and log-std exactly at its configured init.
        let actor_mean = Dense::declare(
            store,
            rng,
            &format!("{prefix}.mean"),
            cfg.trunk_hidden,
            ACTION_DIM,
            Init::Zeros,
        )?;
        let actor_log_std = Dense::declare(
            store,
            rng,
            &format!("{prefix}.logstd"),
            cfg.trunk_hidden,
            ACTION_DIM,
            Init::Zeros,
        )?;
        let critic = Dense::declare(
            store,
            rng,
            &format!("{prefix}.value"),
            cfg.trunk_hidden,
            1,
            Init::Zeros,
        )?;
        Ok(Self {
            ego1,
            ego2,
            wproj,
            pos,
            blocks,
            trunk,
            actor_mean,
            actor_log_std,
            critic,
            cfg,
            ego_dim,
        })
    }

    /// Flat feature count this network accepts.
    pub(crate) fn obs_dim(&self) -> usize {
        self.ego_dim + WP_FEATS * LOOKAHEAD
    }

    pub(crate) fn forward(
        &self,
        store: &ParamStore,
        features: &[f64],
    ) -> Result<(PolicyOutput, PolicyCache)> {
        if features.len() != self.obs_dim() {
            return Err(Error::ShapeMismatch(format!(
                "observation has {} features, policy expects {}",
                features.len(),
                self.obs_dim()
            )));
        }
        if !features.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("observation features"));
        }
        let ego_in = Mat::row_vec(features[..self.ego_dim].to_vec());
        let e1 = tanh_forward(&self.ego1.forward(store, &ego_in)?);
        let e2 = tanh_forward(&self.ego2.forward(store, &e1)?);

        let mut wp_in = Mat::zeros(LOOKAHEAD, WP_FEATS);
        for k in 0..LOOKAHEAD {
            let base = self.ego_dim + WP_FEATS * k;
            wp_in.row_mut(k).copy_from_slice(&features[base..base + WP_FEATS]);
        }
        let mut x = self.wproj.forward(store, &wp_in)?;
        x.add_assign(store.get(&self.pos)?);
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.forward(store, &x)?;
            block_caches.push(cache);
            x = next;
        }
        // Mean-pool the waypoint tokens.
        let inv_k = 1.0 / LOOKAHEAD as f64;
        let mut pooled = Mat::zeros(1, self.cfg.d_model);
        for k in 0..LOOKAHEAD {
            for (acc, v) in pooled.row_mut(0).iter_mut().zip(x.row(k)) {
                *acc += v * inv_k;
            }
        }

        let mut cat = Mat::zeros(1, self.cfg.ego_hidden + self.cfg.d_model);
        cat.row_mut(0)[..self.cfg.ego_hidden].copy_from_slice(e2.row(0));
        cat.row_mut(0)[self.cfg.ego_hidden..].copy_from_slice(pooled.row(0));
        let t1 = tanh_forward(&self.trunk.forward(store, &cat)?);

        let mean_out = self.actor_mean.forward(store, &t1)?;
        let ls_out = self.actor_log_std.forward(store, &t1)?;
        let v_out = self.critic.forward(store, &t1)?;

        let mut mean = [0.0; ACTION_DIM];
        let mut raw_log_std = [0.0; ACTION_DIM];
        let mut log_std = [0.0; ACTION_DIM];
        for i in 0..ACTION_DIM {
            mean[i] = mean_out.at(0, i);
            raw_log_std[i] = ls_out.at(0, i) + self.cfg.log_std_init;
            log_std[i] = raw_log_std[i].clamp(self.cfg.log_std_min, self.cfg.log_std_max);
        }
        let out = PolicyOutput { mean, log_std, value: v_out.at(0, 0) };
        if !(out.value.is_finite()
            && mean.iter().all(|v| v.is_finite())
            && log_std.iter().all(|v| v.is_finite()))
        {
            return Err(Error::NonFinite("policy outputs"));
        }
        Ok((out, PolicyCache { ego_in, e1, e2, wp_in, block_caches, cat, t1, raw_log_std }))
    }

    pub(crate) fn backward(
        &self,
        store: &ParamStore,
        cache: &PolicyCache,
        g: &HeadGrads,
        grads: &mut ParamStore,
    ) -> Result<()> {
        // The log-std clamp passes gradient only where it is inactive.
        let g_ls: [f64; ACTION_DIM] = core::array::from_fn(|i| {
            let raw = cache.raw_log_std[i];
            if raw > self.cfg.log_std_min && raw < self.cfg.log_std_max {
                g.log_std[i]
            } else {
                0.0
            }
        });
        let g_mean = Mat::row_vec(g.mean.to_vec());
        let g_ls = Mat::row_vec(g_ls.to_vec());
        let g_val = Mat::row_vec(alloc::vec![g.value]);

        let mut g_t1 = self.actor_mean.backward(store, &cache.t1, &g_mean, grads)?;
        g_t1.add_assign(&self.actor_log_std.backward(store, &cache.t1, &g_ls, grads)?);
        g_t1.add_assign(&self.critic.backward(store, &cache.t1, &g_val, grads)?);

        let g_cat =
            self.trunk.backward(store, &cache.cat, &tanh_backward(&cache.t1, &g_t1), grads)?;
        let g_e2 = Mat::row_vec(g_cat.row(0)[..self.cfg.ego_hidden].to_vec());
        let g_pool = &g_cat.row(0)[self.cfg.ego_hidden..];

        // Un-pool: every token receives g_pool / K.
        let inv_k = 1.0 / LOOKAHEAD as f64;
        let mut g_x = Mat::zeros(LOOKAHEAD, self.cfg.d_model);
        for k in 0..LOOKAHEAD {
            for (dst, v) in g_x.row_mut(k).iter_mut().zip(g_pool) {
                *dst = v * inv_k;
            }
        }
        for (block, bc) in self.blocks.iter().zip(&cache.block_caches).rev() {
            g_x = block.backward(store, bc, &g_x, grads)?;
        }
        grads.accum(&self.pos, &g_x)?;
        self.wproj.backward(store, &cache.wp_in, &g_x, grads)?;

        let g_e1 =
            self.ego2.backward(store, &cache.e1, &tanh_backward(&cache.e2, &g_e2), grads)?;
        self.ego1.backward(store, &cache.ego_in, &tanh_backward(&cache.e1, &g_e1), grads)?;
        Ok(())
    }
}
