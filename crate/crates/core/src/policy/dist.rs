//! Tanh-squashed diagonal Gaussian: sampling, exact log-density with the
//! change-of-variables correction, and the pre-squash entropy.
//!
//! Actions are `a = tanh(u)` with `u ~ N(mean, diag(exp(log_std))²)`, so
//! samples live strictly inside `(-1, 1)` per component and the density
//! picks up a `-Σ log(1 - tanh(u)²)` correction. All functions take the
//! *pre-squash* variable `u`; PPO stores it so the density under updated
//! parameters can be recomputed exactly.

use crate::nn::layers::softplus;
use crate::rng::DetRng;
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// `log(2π)`.
const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// `log(1 - tanh(u)²)` evaluated as `2(log 2 - u - softplus(-2u))`, which
/// stays finite for any `u` (the naive form underflows to `log 0` past
/// |u| ≈ 19).
#[inline]
pub fn tanh_log_jacobian(u: f64) -> f64 {
    2.0 * (core::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

/// Log-density of the squashed action `tanh(u)` under the parameters:
/// Gaussian log-density of `u` minus the tanh Jacobian, summed over
/// components.
pub fn squashed_log_prob(u: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    debug_assert!(u.len() == mean.len() && u.len() == log_std.len());
    let mut lp = 0.0;
    for i in 0..u.len() {
        let std = log_std[i].exp();
        let z = (u[i] - mean[i]) / std;
        lp += -0.5 * z * z - log_std[i] - 0.5 * LN_2PI;
        lp -= tanh_log_jacobian(u[i]);
    }
    lp
}

/// Differential entropy of the pre-squash Gaussian,
/// `Σ_i (log σ_i + ½(1 + log 2π))`.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 * (1.0 + LN_2PI)).sum()
}

/// Gradient of [`squashed_log_prob`] in the distribution parameters:
/// `∂lp/∂mean_i = z_i/σ_i` and `∂lp/∂log_std_i = z_i² - 1` with
/// `z_i = (u_i - mean_i)/σ_i`. The Jacobian term depends only on the stored
/// `u`, so it contributes nothing here.
pub fn squashed_log_prob_grad(
    u: &[f64],
    mean: &[f64],
    log_std: &[f64],
    g_mean: &mut [f64],
    g_log_std: &mut [f64],
) {
    for i in 0..u.len() {
        let std = log_std[i].exp();
        let z = (u[i] - mean[i]) / std;
        g_mean[i] = z / std;
        g_log_std[i] = z * z - 1.0;
    }
}

/// Draws `u ~ N(mean, diag(exp(log_std))²)` component-wise and returns
/// `(tanh(u), u, log_prob)`.
pub fn sample_squashed<const N: usize>(
    mean: &[f64; N],
    log_std: &[f64; N],
    rng: &mut DetRng,
) -> ([f64; N], [f64; N], f64) {
    let mut u = [0.0; N];
    let mut a = [0.0; N];
    for i in 0..N {
        u[i] = mean[i] + log_std[i].exp() * rng.normal();
        a[i] = u[i].tanh();
    }
    (a, u, squashed_log_prob(&u, mean, log_std))
}
