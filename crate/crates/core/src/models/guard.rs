//! Physics Guard: a smooth bijection from unconstrained encoder outputs to
//! bounded physical parameters, `p = lo + (hi - lo) * sigmoid(raw)`.
//!
//! The guarded set covers the quantities a desk experiment cannot read off
//! a datasheet: per-axle Pacejka stiffness/shape/peak (B, C, D), drivetrain
//! coefficients (Cm1, Cm2), rolling/drag resistance (Cr0, Cr2), and yaw
//! inertia (Iz). Mass, geometry, and the curvature factor E stay fixed.

use crate::error::{Error, Result};
use crate::nn::sigmoid;
use alloc::format;
#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};

/// Number of guarded parameters.
pub const N_GUARDED: usize = 11;

/// Canonical parameter order; every raw vector and Jacobian follows it.
pub const GUARDED_NAMES: [&str; N_GUARDED] = [
    "front_b", "front_c", "front_d", "rear_b", "rear_c", "rear_d", "cm1", "cm2", "cr0", "cr2",
    "iz",
];

/// Per-parameter open intervals the guard maps into.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsGuardBounds {
    pub lo: [f64; N_GUARDED],
    pub hi: [f64; N_GUARDED],
}

impl Default for PhysicsGuardBounds {
    /// Wide brackets around plausible passenger-car values. Deliberately
    /// not centered on any particular vehicle so identification is neither
    /// impossible nor pre-solved.
    fn default() -> Self {
        Self {
            lo: [4.0, 1.0, 0.5, 4.0, 1.0, 0.5, 3000.0, 0.0, 0.0, 0.0, 1000.0],
            hi: [20.0, 2.5, 1.5, 20.0, 2.5, 1.5, 12000.0, 400.0, 800.0, 2.0, 5000.0],
        }
    }
}

impl PhysicsGuardBounds {
    pub fn validate(&self) -> Result<()> {
        for (i, name) in GUARDED_NAMES.iter().enumerate() {
            let (lo, hi) = (self.lo[i], self.hi[i]);
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(Error::NonFinite("guard bounds"));
            }
            if lo >= hi {
                return Err(Error::InvalidParam(format!(
                    "guard bound {name}: lo {lo} must be < hi {hi}"
                )));
            }
            if lo < 0.0 {
                return Err(Error::InvalidParam(format!(
                    "guard bound {name}: lo {lo} must be >= 0 for a positive quantity"
                )));
            }
        }
        Ok(())
    }

    /// Maps one raw scalar into `(lo_i, hi_i)`.
    pub fn guard_one(&self, i: usize, raw: f64) -> f64 {
        self.lo[i] + (self.hi[i] - self.lo[i]) * sigmoid(raw)
    }

    /// Maps a raw vector into the bounded box.
    pub fn guard(&self, raw: &[f64; N_GUARDED]) -> [f64; N_GUARDED] {
        core::array::from_fn(|i| self.guard_one(i, raw[i]))
    }

    /// `d guard / d raw`, component-wise.
    pub fn guard_deriv(&self, raw: &[f64; N_GUARDED]) -> [f64; N_GUARDED] {
        core::array::from_fn(|i| {
            let s = sigmoid(raw[i]);
            (self.hi[i] - self.lo[i]) * s * (1.0 - s)
        })
    }

    /// Inverse map (logit); `p` must lie strictly inside the bounds.
    pub fn invert(&self, p: &[f64; N_GUARDED]) -> Result<[f64; N_GUARDED]> {
        let mut raw = [0.0; N_GUARDED];
        for i in 0..N_GUARDED {
            let t = (p[i] - self.lo[i]) / (self.hi[i] - self.lo[i]);
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::OutOfRange(format!(
                    "{} = {} is outside ({}, {})",
                    GUARDED_NAMES[i], p[i], self.lo[i], self.hi[i]
                )));
            }
            raw[i] = (t / (1.0 - t)).ln();
        }
        Ok(raw)
    }
}
