//! Central-difference gradient verification.
//!
//! Every trainable block in the repository is validated against this oracle:
//! perturb each parameter scalar by ±h, evaluate the loss closure twice, and
//! compare the central difference against the analytic gradient.

use crate::error::Result;
use crate::nn::store::ParamStore;
use alloc::string::{String, ToString};

/// Outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error across checked scalars.
    pub max_rel_err: f64,
    /// Parameter name owning the worst scalar.
    pub worst_param: String,
    /// Flat index of the worst scalar.
    pub worst_index: usize,
    /// Number of scalars checked.
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err < tolerance
    }
}

/// Checks `analytic` against central finite differences of `loss`.
///
/// The relative error per scalar is `|a - n| / max(|a|, |n|, 1)`; the floor
/// keeps near-zero gradients from amplifying the difference-quotient noise
/// floor (test losses are constructed with O(1) gradients, so the floor is
/// rarely the active term).
///
/// `stride` checks every `stride`-th flat scalar (1 = all); use a stride
/// coprime to layer widths to cover all parameter roles on large models.
/// The store is restored bit-exactly before returning.
pub fn grad_check(
    mut loss: impl FnMut(&ParamStore) -> Result<f64>,
    analytic: &ParamStore,
    params: &mut ParamStore,
    h: f64,
    stride: usize,
) -> Result<GradCheckReport> {
    params.check_same_structure(analytic)?;
    debug_assert!(h > 0.0 && stride > 0);
    let analytic_flat = analytic.flat();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    let n = params.num_scalars();
    let mut i = 0;
    while i < n {
        let saved = params.scalar_at(i);
        params.set_scalar_at(i, saved + h);
        let up = loss(params)?;
        params.set_scalar_at(i, saved - h);
        let down = loss(params)?;
        params.set_scalar_at(i, saved);

        let numeric = (up - down) / (2.0 * h);
        let a = analytic_flat[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
        if rel > report.max_rel_err || !rel.is_finite() {
            report.max_rel_err = rel;
            report.worst_param = params.name_at(i).to_string();
            report.worst_index = i;
        }
        report.checked += 1;
        i += stride;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::store::Init;
    use crate::rng::DetRng;

    #[test]
    fn linear_model_is_exact() {
        // loss = sum(c_i * w_i): analytic gradient is the coefficient
        // vector; central differences are exact up to cancellation.
        let mut rng = DetRng::seed(5);
        let mut params = ParamStore::new();
        params.add("w", 1, 10, Init::Uniform { lo: -1.0, hi: 1.0 }, &mut rng).unwrap();
        let coeffs: alloc::vec::Vec<f64> = (0..10).map(|_| rng.uniform(-2.0, 2.0)).collect();

        let mut analytic = params.zeros_like();
        analytic.get_mut("w").unwrap().data_mut().copy_from_slice(&coeffs);

        let c = coeffs.clone();
        let loss = move |p: &ParamStore| {
            Ok(p.get("w")?.data().iter().zip(&c).map(|(w, k)| w * k).sum())
        };
        let report = grad_check(loss, &analytic, &mut params, 1e-5, 1).unwrap();
        assert!(report.max_rel_err < 1e-9, "rel err {}", report.max_rel_err);
        assert_eq!(report.checked, 10);
    }

    #[test]
    fn corrupted_gradient_is_reported() {
        let mut rng = DetRng::seed(6);
        let mut params = ParamStore::new();
        params.add("w", 1, 4, Init::Uniform { lo: -1.0, hi: 1.0 }, &mut rng).unwrap();

        // loss = sum(w^2); true gradient 2w. Corrupt one component.
        let mut analytic = params.zeros_like();
        let g: alloc::vec::Vec<f64> =
            params.get("w").unwrap().data().iter().map(|w| 2.0 * w).collect();
        analytic.get_mut("w").unwrap().data_mut().copy_from_slice(&g);
        analytic.get_mut("w").unwrap().data_mut()[2] += 0.5;

        let loss = |p: &ParamStore| Ok(p.get("w")?.data().iter().map(|w| w * w).sum());
        let report = grad_check(loss, &analytic, &mut params, 1e-5, 1).unwrap();
        assert!(!report.passes(1e-4));
        assert_eq!(report.worst_param, "w");
        assert_eq!(report.worst_index, 2);
    }

    #[test]
    fn store_restored_bit_exactly() {
        let mut rng = DetRng::seed(7);
        let mut params = ParamStore::new();
        params.add("w", 3, 3, Init::FanIn, &mut rng).unwrap();
        let before = params.flat();
        let analytic = params.zeros_like();
        let loss = |_: &ParamStore| Ok(0.0);
        grad_check(loss, &analytic, &mut params, 1e-5, 2).unwrap();
        for (a, b) in before.iter().zip(params.flat()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
