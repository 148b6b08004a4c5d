//! Gated recurrent cell with an exact hand-written backward pass, suitable
//! for backpropagation through time by chaining step caches.

use crate::error::{Error, Result};
use crate::nn::mat::{matmul, matmul_nt, matmul_tn, Mat};
use crate::nn::store::{Init, ParamStore};
use crate::rng::DetRng;
use alloc::format;
use alloc::string::String;
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// GRU cell.
///
/// Gate convention: `z` is the amount of *new* content admitted, so
/// `h' = (1 - z) ⊙ h + z ⊙ n`. Saturating the update-gate bias negative
/// closes the gate (`z → 0`) and the hidden state passes through unchanged.
#[derive(Debug, Clone)]
pub struct GruCell {
    wz: String,
    wr: String,
    wn: String,
    uz: String,
    ur: String,
    un: String,
    bz: String,
    br: String,
    bn: String,
    pub in_dim: usize,
    pub hidden_dim: usize,
}

/// Per-step cache for backward.
#[derive(Debug, Clone)]
pub struct GruCache {
    u: Mat,
    h: Mat,
    z: Mat,
    r: Mat,
    n: Mat,
    /// `r ⊙ h`, the recurrent input to the candidate.
    rh: Mat,
}

/// Gradients flowing out of one backward step.
pub struct GruInputGrads {
    /// Gradient with respect to the step input.
    pub g_input: Mat,
    /// Gradient with respect to the previous hidden state.
    pub g_hidden: Mat,
}

impl GruCell {
    pub fn declare(
        store: &mut ParamStore,
        rng: &mut DetRng,
        prefix: &str,
        in_dim: usize,
        hidden_dim: usize,
    ) -> Result<Self> {
        let add_w = |store: &mut ParamStore, rng: &mut DetRng, tag: &str| -> Result<String> {
            let name = format!("{prefix}.w{tag}");
            store.add(&name, in_dim, hidden_dim, Init::FanIn, rng)?;
            Ok(name)
        };
        let wz = add_w(store, rng, "z")?;
        let wr = add_w(store, rng, "r")?;
        let wn = add_w(store, rng, "n")?;
        let add_u = |store: &mut ParamStore, rng: &mut DetRng, tag: &str| -> Result<String> {
            let name = format!("{prefix}.u{tag}");
            store.add(&name, hidden_dim, hidden_dim, Init::FanIn, rng)?;
            Ok(name)
        };
        let uz = add_u(store, rng, "z")?;
        let ur = add_u(store, rng, "r")?;
        let un = add_u(store, rng, "n")?;
        let add_b = |store: &mut ParamStore, rng: &mut DetRng, tag: &str| -> Result<String> {
            let name = format!("{prefix}.b{tag}");
            store.add(&name, 1, hidden_dim, Init::Zeros, rng)?;
            Ok(name)
        };
        let bz = add_b(store, rng, "z")?;
        let br = add_b(store, rng, "r")?;
        let bn = add_b(store, rng, "n")?;
        Ok(Self { wz, wr, wn, uz, ur, un, bz, br, bn, in_dim, hidden_dim })
    }

    /// One step over a batch: `u` is `B×in_dim`, `h` is `B×hidden_dim`.
    pub fn forward(&self, store: &ParamStore, u: &Mat, h: &Mat) -> Result<(Mat, GruCache)> {
        if u.cols() != self.in_dim || h.cols() != self.hidden_dim || u.rows() != h.rows() {
            return Err(Error::ShapeMismatch(format!(
                "gru {}: input {}x{}, hidden {}x{}, expected in {} hidden {}",
                self.wz,
                u.rows(),
                u.cols(),
                h.rows(),
                h.cols(),
                self.in_dim,
                self.hidden_dim
            )));
        }
        let gate = |w: &str, uu: &str, b: &str, hin: &Mat| -> Result<Mat> {
            let mut a = matmul(u, store.get(w)?);
            a.add_assign(&matmul(hin, store.get(uu)?));
            a.add_row_broadcast(store.get(b)?);
            Ok(a)
        };
        let z = gate(&self.wz, &self.uz, &self.bz, h)?.map(crate::nn::layers::sigmoid);
        let r = gate(&self.wr, &self.ur, &self.br, h)?.map(crate::nn::layers::sigmoid);
        let rh = r.hadamard(h);
        let n = gate(&self.wn, &self.un, &self.bn, &rh)?.map(f64::tanh);

        let mut h_next = Mat::zeros(h.rows(), h.cols());
        for i in 0..h.data().len() {
            let (zv, hv, nv) = (z.data()[i], h.data()[i], n.data()[i]);
            h_next.data_mut()[i] = (1.0 - zv) * hv + zv * nv;
        }
        Ok((h_next, GruCache { u: u.clone(), h: h.clone(), z, r, n, rh }))
    }

    /// Backward through one step given the gradient of the next hidden
    /// state. Accumulates parameter gradients and returns input/hidden
    /// gradients for BPTT chaining.
    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &GruCache,
        grad_h_next: &Mat,
        grads: &mut ParamStore,
    ) -> Result<GruInputGrads> {
        let GruCache { u, h, z, r, n, rh } = cache;
        let b = h.rows();
        let dh_elems = h.data().len();

        // h' = (1-z)*h + z*n
        let mut dz = Mat::zeros(b, self.hidden_dim);
        let mut dn = Mat::zeros(b, self.hidden_dim);
        let mut dh = Mat::zeros(b, self.hidden_dim);
        for i in 0..dh_elems {
            let g = grad_h_next.data()[i];
            dz.data_mut()[i] = g * (n.data()[i] - h.data()[i]);
            dn.data_mut()[i] = g * z.data()[i];
            dh.data_mut()[i] = g * (1.0 - z.data()[i]);
        }

        // Candidate: n = tanh(u·Wn + rh·Un + bn)
        let mut dan = dn;
        for (g, &nv) in dan.data_mut().iter_mut().zip(n.data()) {
            *g *= 1.0 - nv * nv;
        }
        grads.accum(&self.wn, &matmul_tn(u, &dan))?;
        grads.accum(&self.un, &matmul_tn(rh, &dan))?;
        grads.accum(&self.bn, &dan.col_sum())?;
        let mut du = matmul_nt(&dan, store.get(&self.wn)?);
        let drh = matmul_nt(&dan, store.get(&self.un)?);
        let dr = drh.hadamard(h);
        dh.add_assign(&drh.hadamard(r));

        // Reset gate: r = sigmoid(u·Wr + h·Ur + br)
        let mut dar = dr;
        for (g, &rv) in dar.data_mut().iter_mut().zip(r.data()) {
            *g *= rv * (1.0 - rv);
        }
        grads.accum(&self.wr, &matmul_tn(u, &dar))?;
        grads.accum(&self.ur, &matmul_tn(h, &dar))?;
        grads.accum(&self.br, &dar.col_sum())?;
        du.add_assign(&matmul_nt(&dar, store.get(&self.wr)?));
        dh.add_assign(&matmul_nt(&dar, store.get(&self.ur)?));

        // Update gate: z = sigmoid(u·Wz + h·Uz + bz)
        let mut daz = dz;
        for (g, &zv) in daz.data_mut().iter_mut().zip(z.data()) {
            *g *= zv * (1.0 - zv);
        }
        grads.accum(&self.wz, &matmul_tn(u, &daz))?;
        grads.accum(&self.uz, &matmul_tn(h, &daz))?;
        grads.accum(&self.bz, &daz.col_sum())?;
        du.add_assign(&matmul_nt(&daz, store.get(&self.wz)?));
        dh.add_assign(&matmul_nt(&daz, store.get(&self.uz)?));

        Ok(GruInputGrads { g_input: du, g_hidden: dh })
    }

    /// Name of the update-gate bias (used by tests to force the gate).
    pub fn update_bias_name(&self) -> &str {
        &self.bz
    }
}
