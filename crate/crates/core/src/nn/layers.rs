//! Dense layers, elementwise nonlinearities, and layer normalization, each
//! with hand-written exact backward passes.
//!
//! Layers do not own their parameters; they hold names into a [`ParamStore`]
//! plus declared dimensions. Forward passes take the store, backward passes
//! accumulate into a structurally identical gradient store and return the
//! input gradient.

use crate::error::{Error, Result};
use crate::nn::mat::{matmul, matmul_nt, matmul_tn, Mat};
use crate::nn::store::{Init, ParamStore};
use crate::rng::DetRng;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `y = tanh(x)` elementwise.
pub fn tanh_forward(x: &Mat) -> Mat {
    x.map(f64::tanh)
}

/// Backward through tanh given its output `y`.
pub fn tanh_backward(y: &Mat, grad_y: &Mat) -> Mat {
    let mut out = grad_y.clone();
    for (g, &yv) in out.data_mut().iter_mut().zip(y.data()) {
        *g *= 1.0 - yv * yv;
    }
    out
}

/// `y = sigmoid(x)` elementwise.
pub fn sigmoid_forward(x: &Mat) -> Mat {
    x.map(sigmoid)
}

/// Backward through sigmoid given its output `y`.
pub fn sigmoid_backward(y: &Mat, grad_y: &Mat) -> Mat {
    let mut out = grad_y.clone();
    for (g, &yv) in out.data_mut().iter_mut().zip(y.data()) {
        *g *= yv * (1.0 - yv);
    }
    out
}

/// `y = softplus(x)` elementwise.
pub fn softplus_forward(x: &Mat) -> Mat {
    x.map(softplus)
}

/// Backward through softplus given its *input* `x`.
pub fn softplus_backward(x: &Mat, grad_y: &Mat) -> Mat {
    let mut out = grad_y.clone();
    for (g, &xv) in out.data_mut().iter_mut().zip(x.data()) {
        *g *= sigmoid(xv);
    }
    out
}

/// Affine layer `y = x·W + b` over batched row vectors.
#[derive(Debug, Clone)]
pub struct Dense {
    w: String,
    b: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    /// Declares `{prefix}.w` and `{prefix}.b` in the store. `init` applies
    /// to the weight; the bias is always zero-initialized.
    pub fn declare(
        store: &mut ParamStore,
        rng: &mut DetRng,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
    ) -> Result<Self> {
        let w = format!("{prefix}.w");
        let b = format!("{prefix}.b");
        store.add(&w, in_dim, out_dim, init, rng)?;
        store.add(&b, 1, out_dim, Init::Zeros, rng)?;
        Ok(Self { w, b, in_dim, out_dim })
    }

    pub fn forward(&self, store: &ParamStore, x: &Mat) -> Result<Mat> {
        if x.cols() != self.in_dim {
            return Err(Error::ShapeMismatch(format!(
                "{}: input has {} cols, expected {}",
                self.w,
                x.cols(),
                self.in_dim
            )));
        }
        let mut y = matmul(x, store.get(&self.w)?);
        y.add_row_broadcast(store.get(&self.b)?);
        Ok(y)
    }

    /// Accumulates dW, db into `grads` and returns the input gradient.
    /// `x` must be the same input given to `forward`.
    pub fn backward(
        &self,
        store: &ParamStore,
        x: &Mat,
        grad_y: &Mat,
        grads: &mut ParamStore,
    ) -> Result<Mat> {
        if grad_y.cols() != self.out_dim || grad_y.rows() != x.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{}: grad is {}x{}, expected {}x{}",
                self.w,
                grad_y.rows(),
                grad_y.cols(),
                x.rows(),
                self.out_dim
            )));
        }
        grads.accum(&self.w, &matmul_tn(x, grad_y))?;
        grads.accum(&self.b, &grad_y.col_sum())?;
        Ok(matmul_nt(grad_y, store.get(&self.w)?))
    }
}

/// Per-row layer normalization with learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    g: String,
    b: String,
    pub dim: usize,
    pub eps: f64,
}

/// Forward cache: normalized activations and per-row inverse std.
#[derive(Debug, Clone)]
pub struct LnCache {
    pub xhat: Mat,
    pub inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn declare(
        store: &mut ParamStore,
        rng: &mut DetRng,
        prefix: &str,
        dim: usize,
    ) -> Result<Self> {
        let g = format!("{prefix}.g");
        let b = format!("{prefix}.b");
        store.add(&g, 1, dim, Init::Const(1.0), rng)?;
        store.add(&b, 1, dim, Init::Zeros, rng)?;
        Ok(Self { g, b, dim, eps: 1e-5 })
    }

    pub fn forward(&self, store: &ParamStore, x: &Mat) -> Result<(Mat, LnCache)> {
        if x.cols() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "{}: input has {} cols, expected {}",
                self.g,
                x.cols(),
                self.dim
            )));
        }
        let d = self.dim as f64;
        let gain = store.get(&self.g)?;
        let bias = store.get(&self.b)?;
        let mut xhat = Mat::zeros(x.rows(), x.cols());
        let mut inv_std = Vec::with_capacity(x.rows());
        let mut y = Mat::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std.push(istd);
            for (c, &rv) in row.iter().enumerate() {
                let xh = (rv - mean) * istd;
                xhat.set(r, c, xh);
                y.set(r, c, xh * gain.data()[c] + bias.data()[c]);
            }
        }
        Ok((y, LnCache { xhat, inv_std }))
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &LnCache,
        grad_y: &Mat,
        grads: &mut ParamStore,
    ) -> Result<Mat> {
        let gain = store.get(&self.g)?;
        let d = self.dim as f64;
        // Parameter gradients.
        grads.accum(&self.g, &grad_y.hadamard(&cache.xhat).col_sum())?;
        grads.accum(&self.b, &grad_y.col_sum())?;
        // Input gradient:
        // dx = istd/d * (d*dyg - sum(dyg) - xhat * sum(dyg*xhat)),
        // with dyg = dy ⊙ gain, sums taken per row.
        let mut gx = Mat::zeros(grad_y.rows(), grad_y.cols());
        for r in 0..grad_y.rows() {
            let istd = cache.inv_std[r];
            let gyr = grad_y.row(r);
            let xhr = cache.xhat.row(r);
            let mut sum_dyg = 0.0;
            let mut sum_dyg_xh = 0.0;
            for c in 0..grad_y.cols() {
                let dyg = gyr[c] * gain.data()[c];
                sum_dyg += dyg;
                sum_dyg_xh += dyg * xhr[c];
            }
            for c in 0..grad_y.cols() {
                let dyg = gyr[c] * gain.data()[c];
                gx.set(r, c, istd / d * (d * dyg - sum_dyg - xhr[c] * sum_dyg_xh));
            }
        }
        Ok(gx)
    }
}
