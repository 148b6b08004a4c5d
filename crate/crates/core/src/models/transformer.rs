//! Transformer dynamics: per-step tokens embed the normalized (delta,
//! action) pairs, learned positional encodings mark the temporal order, an
//! encoder stack attends over the full window, and a zero-initialized head
//! maps the final token (concatenated with the current action) to the
//! predicted delta.
//!
//! The surface-conditional variant adds a learned per-surface embedding to
//! every token. Output components are scaled by the train-split standard
//! deviation only — no mean shift — so a zero head yields the zero delta.

use super::{
    normalized_mse_grad, pair_features, DynamicsModel, HistoryWindow, TrainableDynamics,
};
use crate::data::{NormStats, TransitionSample};
use crate::error::{Error, Result};
use crate::nn::{AttnBlock, AttnCache, Dense, Init, Mat, ParamStore};
use crate::rng::DetRng;
use crate::vehicle::{Action, BodyDelta, SurfaceLabel};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub history: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub surface_conditional: bool,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            history: crate::data::HISTORY_LEN,
            d_model: 64,
            layers: 2,
            heads: 4,
            d_ff: 128,
            surface_conditional: false,
        }
    }
}

/// Layer handles; parameter data lives in the owning store.
#[derive(Debug, Clone)]
pub(crate) struct TransNet {
    embed: Dense,
    blocks: Vec<AttnBlock>,
    head: Dense,
    pos: String,
    surf: Option<String>,
    pub(crate) cfg: TransformerConfig,
}

pub(crate) struct TransForward {
    feats: Mat,
    block_caches: Vec<AttnCache>,
    head_in: Mat,
    surface_idx: Option<usize>,
}

impl TransNet {
    pub(crate) fn declare(
        store: &mut ParamStore,
        rng: &mut DetRng,
        prefix: &str,
        cfg: TransformerConfig,
    ) -> Result<Self> {
        if cfg.history == 0 || cfg.layers == 0 {
            return Err(Error::InvalidParam("transformer history/layers must be positive".into()));
        }
        let embed =
            Dense::declare(store, rng, &format!("{prefix}.embed"), 8, cfg.d_model, Init::FanIn)?;
        let pos = format!("{prefix}.pos");
        store.add(&pos, cfg.history, cfg.d_model, Init::Uniform { lo: -0.1, hi: 0.1 }, rng)?;
        let surf = if cfg.surface_conditional {
            let name = format!("{prefix}.surf");
            store.add(&name, 2, cfg.d_model, Init::Uniform { lo: -0.1, hi: 0.1 }, rng)?;
            Some(name)
        } else {
            None
        };
        let mut blocks = Vec::with_capacity(cfg.layers);
        for i in 0..cfg.layers {
            blocks.push(AttnBlock::declare(
                store,
                rng,
                &format!("{prefix}.blk{i}"),
                cfg.d_model,
                cfg.heads,
                cfg.d_ff,
            )?);
        }
        // Zero-initialized head: the untrained model predicts the zero delta.
        let head = Dense::declare(
            store,
            rng,
            &format!("{prefix}.head"),
            cfg.d_model + 2,
            6,
            Init::Zeros,
        )?;
        Ok(Self { embed, blocks, head, pos, surf, cfg })
    }

    pub(crate) fn forward(
        &self,
        store: &ParamStore,
        norm: &NormStats,
        history: &HistoryWindow,
        action: Action,
        surface: Option<SurfaceLabel>,
    ) -> Result<(BodyDelta, TransForward)> {
        if history.len() != self.cfg.history {
            return Err(Error::ShapeMismatch(format!(
                "transformer expects history {}, got {}",
                self.cfg.history,
                history.len()
            )));
        }
        let surface_idx = if self.cfg.surface_conditional {
            match surface {
                Some(s) => Some(s.index()),
                None => {
                    return Err(Error::Incompatible(
                        "surface-conditional model requires a surface label".into(),
                    ))
                }
            }
        } else {
            None
        };

        let h = self.cfg.history;
        let mut feats = Mat::zeros(h, 8);
        for (t, (delta, act)) in history.pairs().iter().enumerate() {
            feats.row_mut(t).copy_from_slice(&pair_features(norm, delta, act));
        }
        let mut x = self.embed.forward(store, &feats)?;
        x.add_assign(store.get(&self.pos)?);
        if let Some(idx) = surface_idx {
            let surf = store.get(self.surf.as_ref().expect("conditional net has embedding"))?;
            x.add_row_broadcast(&Mat::row_vec(surf.row(idx).to_vec()));
        }

        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.forward(store, &x)?;
            block_caches.push(cache);
            x = next;
        }

        let a = norm.norm_action(&action);
        let mut head_in = Mat::zeros(1, self.cfg.d_model + 2);
        head_in.row_mut(0)[..self.cfg.d_model].copy_from_slice(x.row(h - 1));
        head_in.row_mut(0)[self.cfg.d_model] = a[0];
        head_in.row_mut(0)[self.cfg.d_model + 1] = a[1];
        let out = self.head.forward(store, &head_in)?;

        let delta = BodyDelta::new(
            out.at(0, 0) * norm.delta_std[0],
            out.at(0, 1) * norm.delta_std[1],
            out.at(0, 2) * norm.delta_std[2],
            out.at(0, 3) * norm.delta_std[3],
            out.at(0, 4) * norm.delta_std[4],
            out.at(0, 5) * norm.delta_std[5],
        )?;
        Ok((delta, TransForward { feats, block_caches, head_in, surface_idx }))
    }

    pub(crate) fn backward(
        &self,
        store: &ParamStore,
        norm: &NormStats,
        cache: &TransForward,
        g_delta: &[f64; 6],
        grads: &mut ParamStore,
    ) -> Result<()> {
        let g_out = Mat::from_fn(1, 6, |_, i| g_delta[i] * norm.delta_std[i]);
        let g_head_in = self.head.backward(store, &cache.head_in, &g_out, grads)?;

        let h = self.cfg.history;
        let mut g_x = Mat::zeros(h, self.cfg.d_model);
        g_x.row_mut(h - 1).copy_from_slice(&g_head_in.row(0)[..self.cfg.d_model]);

        for (block, bc) in self.blocks.iter().zip(&cache.block_caches).rev() {
            g_x = block.backward(store, bc, &g_x, grads)?;
        }

        grads.accum(&self.pos, &g_x)?;
        if let Some(idx) = cache.surface_idx {
            let name = self.surf.as_ref().expect("conditional net has embedding");
            let summed = g_x.col_sum();
            let mut g_surf = Mat::zeros(2, self.cfg.d_model);
            g_surf.row_mut(idx).copy_from_slice(summed.row(0));
            grads.accum(name, &g_surf)?;
        }
        self.embed.backward(store, &cache.feats, &g_x, grads)?;
        Ok(())
    }
}

/// Standalone Transformer dynamics model.
pub struct TransformerDynamics {
    net: TransNet,
    norm: NormStats,
    store: ParamStore,
}

impl TransformerDynamics {
    pub fn new(cfg: TransformerConfig, norm: NormStats, seed: u64) -> Result<Self> {
        norm.validate()?;
        let mut store = ParamStore::new();
        let mut rng = DetRng::seed(seed);
        let net = TransNet::declare(&mut store, &mut rng, "trans", cfg)?;
        Ok(Self { net, norm, store })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.net.cfg
    }
}

impl DynamicsModel for TransformerDynamics {
    fn predict(
        &self,
        history: &HistoryWindow,
        action: Action,
        surface: Option<SurfaceLabel>,
    ) -> Result<BodyDelta> {
        Ok(self.net.forward(&self.store, &self.norm, history, action, surface)?.0)
    }

    fn surface_conditional(&self) -> bool {
        self.net.cfg.surface_conditional
    }

    fn history_len(&self) -> usize {
        self.net.cfg.history
    }
}

impl TrainableDynamics for TransformerDynamics {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn norm(&self) -> &NormStats {
        &self.norm
    }

    fn sample_loss_grad(&self, sample: &TransitionSample, grads: &mut ParamStore) -> Result<f64> {
        let win = HistoryWindow::new(sample.history.clone())?;
        let surface = if self.net.cfg.surface_conditional { Some(sample.surface) } else { None };
        let (pred, cache) =
            self.net.forward(&self.store, &self.norm, &win, sample.action, surface)?;
        let (loss, g) = normalized_mse_grad(&pred, &sample.target, &self.norm);
        self.net.backward(&self.store, &self.norm, &cache, &g, grads)?;
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;
    use alloc::vec::Vec;

    fn small_cfg(conditional: bool) -> TransformerConfig {
        TransformerConfig {
            history: 6,
            d_model: 16,
            layers: 1,
            heads: 2,
            d_ff: 32,
            surface_conditional: conditional,
        }
    }

    fn random_window(rng: &mut DetRng, len: usize) -> HistoryWindow {
        let mut pairs = Vec::with_capacity(len);
        for _ in 0..len {
            let d = BodyDelta::new(
                rng.uniform(-2.0, 2.0),
                rng.uniform(-0.5, 0.5),
                rng.uniform(-0.2, 0.2),
                rng.uniform(-0.5, 0.5),
                rng.uniform(-0.3, 0.3),
                rng.uniform(-0.2, 0.2),
            )
            .unwrap();
            let a = Action::clamped(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)).unwrap();
            pairs.push((d, a));
        }
        HistoryWindow::new(pairs).unwrap()
    }

    fn randomize_head(m: &mut TransformerDynamics, seed: u64) {
        let mut rng = DetRng::seed(seed);
        let shape = {
            let w = m.store.get("trans.head.w").unwrap();
            (w.rows(), w.cols())
        };
        *m.store.get_mut("trans.head.w").unwrap() =
            Mat::from_fn(shape.0, shape.1, |_, _| rng.uniform(-0.5, 0.5));
    }

    #[test]
    fn zero_head_predicts_zero_delta() {
        let m = TransformerDynamics::new(small_cfg(false), NormStats::identity(), 1).unwrap();
        let mut rng = DetRng::seed(2);
        let win = random_window(&mut rng, 6);
        let d = m.predict(&win, Action { tau: 0.3, delta: -0.2 }, None).unwrap();
        assert_eq!(d.as_array(), [0.0; 6]);
    }

    #[test]
    fn surface_conditioning_contract() {
        let mut cond =
            TransformerDynamics::new(small_cfg(true), NormStats::identity(), 3).unwrap();
        randomize_head(&mut cond, 4);
        let mut rng = DetRng::seed(5);
        let win = random_window(&mut rng, 6);
        let a = Action { tau: 0.2, delta: 0.1 };
        let on_asphalt = cond.predict(&win, a, Some(SurfaceLabel::Asphalt)).unwrap();
        let on_ice = cond.predict(&win, a, Some(SurfaceLabel::Ice)).unwrap();
        assert_ne!(on_asphalt.as_array(), on_ice.as_array());
        assert!(cond.predict(&win, a, None).is_err());

        let mut plain =
            TransformerDynamics::new(small_cfg(false), NormStats::identity(), 3).unwrap();
        randomize_head(&mut plain, 4);
        let x = plain.predict(&win, a, Some(SurfaceLabel::Asphalt)).unwrap();
        let y = plain.predict(&win, a, Some(SurfaceLabel::Ice)).unwrap();
        let z = plain.predict(&win, a, None).unwrap();
        assert_eq!(x.as_array(), y.as_array());
        assert_eq!(x.as_array(), z.as_array());
    }

    #[test]
    fn permuting_history_changes_output() {
        let mut m = TransformerDynamics::new(small_cfg(false), NormStats::identity(), 6).unwrap();
        randomize_head(&mut m, 7);
        let mut rng = DetRng::seed(8);
        let win = random_window(&mut rng, 6);
        let mut rev_pairs = win.pairs().to_vec();
        rev_pairs.reverse();
        let rev = HistoryWindow::new(rev_pairs).unwrap();
        let a = Action { tau: 0.4, delta: 0.0 };
        let fwd = m.predict(&win, a, None).unwrap();
        let bwd = m.predict(&rev, a, None).unwrap();
        assert_ne!(fwd.as_array(), bwd.as_array());
    }

    #[test]
    fn rejects_wrong_history_length() {
        let m = TransformerDynamics::new(small_cfg(false), NormStats::identity(), 9).unwrap();
        let mut rng = DetRng::seed(10);
        let win = random_window(&mut rng, 5);
        assert!(m.predict(&win, Action { tau: 0.0, delta: 0.0 }, None).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for conditional in [false, true] {
            let mut m =
                TransformerDynamics::new(small_cfg(conditional), NormStats::identity(), 11)
                    .unwrap();
            randomize_head(&mut m, 12);
            let mut rng = DetRng::seed(13);
            let win = random_window(&mut rng, 6);
            let sample = TransitionSample {
                history: win.pairs().to_vec(),
                action: Action { tau: 0.3, delta: -0.1 },
                surface: SurfaceLabel::Ice,
                target: BodyDelta::new(0.5, 0.1, 0.02, 0.1, -0.05, 0.01).unwrap(),
            };
            let mut grads = m.store.zeros_like();
            m.sample_loss_grad(&sample, &mut grads).unwrap();

            let net = m.net.clone();
            let norm = m.norm;
            let s2 = sample.clone();
            let probe = move |s: &ParamStore| -> Result<f64> {
                let win = HistoryWindow::new(s2.history.clone())?;
                let surface = if net.cfg.surface_conditional { Some(s2.surface) } else { None };
                let (pred, _) = net.forward(s, &norm, &win, s2.action, surface)?;
                Ok(super::super::normalized_mse(&pred, &s2.target, &norm))
            };
            let report = crate::nn::grad_check(probe, &grads, &mut m.store, 1e-5, 7).unwrap();
            assert!(
                report.passes(1e-4),
                "conditional={conditional}: max rel err {} at {}",
                report.max_rel_err,
                report.worst_param
            );
        }
    }

    #[test]
    fn unused_surface_row_gets_zero_gradient() {
        // Only the active surface row should accumulate gradient.
        let mut m = TransformerDynamics::new(small_cfg(true), NormStats::identity(), 14).unwrap();
        randomize_head(&mut m, 15);
        let mut rng = DetRng::seed(16);
        let win = random_window(&mut rng, 6);
        let sample = TransitionSample {
            history: win.pairs().to_vec(),
            action: Action { tau: 0.0, delta: 0.0 },
            surface: SurfaceLabel::Asphalt,
            target: BodyDelta::zero(),
        };
        let mut grads = m.store.zeros_like();
        m.sample_loss_grad(&sample, &mut grads).unwrap();
        let g_surf = grads.get("trans.surf").unwrap();
        let asphalt_row: f64 = g_surf.row(SurfaceLabel::Asphalt.index()).iter().sum();
        let ice_row: f64 = g_surf.row(SurfaceLabel::Ice.index()).iter().map(|v| v.abs()).sum();
        assert!(asphalt_row != 0.0);
        assert_eq!(ice_row, 0.0);
    }
}
