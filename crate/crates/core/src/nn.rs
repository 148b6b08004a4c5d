//! Differentiable-computation substrate: matrices, named parameter storage,
//! layers (dense, layer norm, attention, GRU) with hand-written backward
//! passes, an adaptive optimizer, and finite-difference gradient checking.
//!
//! Everything is 64-bit, CPU-only, and deterministic under a fixed seed.

pub mod adam;
pub mod attn;
pub mod gradcheck;
pub mod gru;
pub mod layers;
pub mod mat;
pub mod store;

pub use adam::{Adam, AdamParams};
pub use attn::{AttnBlock, AttnCache};
pub use gradcheck::{grad_check, GradCheckReport};
pub use gru::{GruCache, GruCell, GruInputGrads};
pub use layers::{
    sigmoid, sigmoid_backward, sigmoid_forward, softplus, softplus_backward, softplus_forward,
    tanh_backward, tanh_forward, Dense, LayerNorm, LnCache,
};
pub use mat::{matmul, matmul_nt, matmul_tn, Mat};
pub use store::{Init, ParamStore};
