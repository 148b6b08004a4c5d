//! Frame conventions, state/delta algebra, and angle handling.
//!
//! The global frame is a fixed world frame; the body frame is attached to the
//! vehicle CoG with x forward and y left. Headings live in `(-pi, pi]` with
//! `pi` included, and every angle comparison goes through wrapped differences.

use crate::error::{Error, Result};
use core::f64::consts::PI;
use serde::{Deserialize, Serialize};
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Control period in seconds (10 Hz), shared by every module downstream of
/// the data pipeline.
pub const CONTROL_DT: f64 = 0.1;

/// Global vehicle state `[x, y, phi, vx, vy, omega]`.
///
/// Positions are global, `phi` is the heading wrapped to `(-pi, pi]`, and
/// `vx`/`vy` are body-frame longitudinal/lateral velocities at the CoG.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub phi: f64,
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl VehicleState {
    /// Builds a state, wrapping the heading and rejecting non-finite fields.
    pub fn new(x: f64, y: f64, phi: f64, vx: f64, vy: f64, omega: f64) -> Result<Self> {
        let s = Self { x, y, phi, vx, vy, omega };
        s.check_finite()?;
        Ok(Self { phi: wrap(phi), ..s })
    }

    pub const fn zero() -> Self {
        Self { x: 0.0, y: 0.0, phi: 0.0, vx: 0.0, vy: 0.0, omega: 0.0 }
    }

    /// Ground speed at the CoG.
    pub fn speed(&self) -> f64 {
        (self.vx * self.vx + self.vy * self.vy).sqrt()
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.x, self.y, self.phi, self.vx, self.vy, self.omega]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self { x: a[0], y: a[1], phi: a[2], vx: a[3], vy: a[4], omega: a[5] }
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    fn check_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite("VehicleState"))
        }
    }
}

/// Normalized control command: throttle/brake `tau` and steering `delta`,
/// both in `[-1, 1]`. The default is the zero (coast, centered) command.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Action {
    pub tau: f64,
    pub delta: f64,
}

impl Action {
    /// Clamps both components into `[-1, 1]`; non-finite inputs are rejected.
    pub fn clamped(tau: f64, delta: f64) -> Result<Self> {
        if !tau.is_finite() || !delta.is_finite() {
            return Err(Error::NonFinite("Action"));
        }
        Ok(Self { tau: tau.clamp(-1.0, 1.0), delta: delta.clamp(-1.0, 1.0) })
    }

    pub const fn zero() -> Self {
        Self { tau: 0.0, delta: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.tau.is_finite() && self.delta.is_finite()
    }
}

/// One control-period state change expressed in the body frame of the
/// earlier state. Velocity components are plain differences of body-frame
/// velocity values; `dphi` is wrapped to `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyDelta {
    pub dx_b: f64,
    pub dy_b: f64,
    pub dphi: f64,
    pub dvx: f64,
    pub dvy: f64,
    pub domega: f64,
}

impl BodyDelta {
    pub fn new(dx_b: f64, dy_b: f64, dphi: f64, dvx: f64, dvy: f64, domega: f64) -> Result<Self> {
        let d = Self { dx_b, dy_b, dphi, dvx, dvy, domega };
        if !d.is_finite() {
            return Err(Error::NonFinite("BodyDelta"));
        }
        Ok(Self { dphi: wrap(dphi), ..d })
    }

    pub const fn zero() -> Self {
        Self { dx_b: 0.0, dy_b: 0.0, dphi: 0.0, dvx: 0.0, dvy: 0.0, domega: 0.0 }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.dx_b, self.dy_b, self.dphi, self.dvx, self.dvy, self.domega]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self { dx_b: a[0], dy_b: a[1], dphi: a[2], dvx: a[3], dvy: a[4], domega: a[5] }
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

/// Road surface under the vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SurfaceLabel {
    Asphalt,
    Ice,
}

impl SurfaceLabel {
    /// Stable numeric encoding used by datasets and embeddings.
    pub fn index(self) -> usize {
        match self {
            SurfaceLabel::Asphalt => 0,
            SurfaceLabel::Ice => 1,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(SurfaceLabel::Asphalt),
            1 => Ok(SurfaceLabel::Ice),
            _ => Err(Error::OutOfRange(alloc::format!("surface index {i}"))),
        }
    }
}

/// A reference-trajectory sample: global pose plus target speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub phi: f64,
    pub v: f64,
}

/// A waypoint expressed relative to an ego state (Δx, Δy, Δphi, Δv).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoDelta {
    pub dx: f64,
    pub dy: f64,
    pub dphi: f64,
    pub dv: f64,
}

/// Euclidean remainder for `f64`, available without `std`.
#[inline]
pub(crate) fn rem_euclid(a: f64, m: f64) -> f64 {
    debug_assert!(m > 0.0);
    let r = a % m;
    if r < 0.0 {
        r + m
    } else {
        r
    }
}

/// Wraps an angle into `(-pi, pi]` without validating the input.
///
/// Internal fast path; callers guarantee finiteness.
#[inline]
pub(crate) fn wrap(theta: f64) -> f64 {
    debug_assert!(theta.is_finite());
    let r = rem_euclid(theta, 2.0 * PI); // [0, 2*pi)
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Wraps `theta` into `(-pi, pi]`, congruent to the input modulo 2π.
pub fn wrap_angle(theta: f64) -> Result<f64> {
    if !theta.is_finite() {
        return Err(Error::NonFinite("wrap_angle input"));
    }
    Ok(wrap(theta))
}

/// Applies a body-frame delta to a state: the positional components are
/// rotated by the state heading into the global frame, the heading is
/// re-wrapped, and velocities/yaw-rate add component-wise.
pub fn compose_delta(state: &VehicleState, delta: &BodyDelta) -> Result<VehicleState> {
    if !state.is_finite() {
        return Err(Error::NonFinite("compose_delta state"));
    }
    if !delta.is_finite() {
        return Err(Error::NonFinite("compose_delta delta"));
    }
    let (sin_phi, cos_phi) = state.phi.sin_cos();
    Ok(VehicleState {
        x: state.x + cos_phi * delta.dx_b - sin_phi * delta.dy_b,
        y: state.y + sin_phi * delta.dx_b + cos_phi * delta.dy_b,
        phi: wrap(state.phi + delta.dphi),
        vx: state.vx + delta.dvx,
        vy: state.vy + delta.dvy,
        omega: state.omega + delta.domega,
    })
}

/// Exact inverse of [`compose_delta`]: the body-frame delta that carries
/// `s_prev` to `s_next`. Used to build training targets.
pub fn delta_between(s_prev: &VehicleState, s_next: &VehicleState) -> Result<BodyDelta> {
    if !s_prev.is_finite() || !s_next.is_finite() {
        return Err(Error::NonFinite("delta_between state"));
    }
    let dx_g = s_next.x - s_prev.x;
    let dy_g = s_next.y - s_prev.y;
    let (sin_phi, cos_phi) = s_prev.phi.sin_cos();
    Ok(BodyDelta {
        dx_b: cos_phi * dx_g + sin_phi * dy_g,
        dy_b: -sin_phi * dx_g + cos_phi * dy_g,
        dphi: wrap(s_next.phi - s_prev.phi),
        dvx: s_next.vx - s_prev.vx,
        dvy: s_next.vy - s_prev.vy,
        domega: s_next.omega - s_prev.omega,
    })
}

/// Expresses a waypoint in the ego frame: position difference rotated by
/// `-ego.phi`, wrapped heading difference, and speed difference against the
/// ego ground speed.
pub fn to_ego_frame(waypoint: &Waypoint, ego: &VehicleState) -> Result<EgoDelta> {
    if !ego.is_finite() {
        return Err(Error::NonFinite("to_ego_frame ego"));
    }
    if ![waypoint.x, waypoint.y, waypoint.phi, waypoint.v].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("to_ego_frame waypoint"));
    }
    let dx_g = waypoint.x - ego.x;
    let dy_g = waypoint.y - ego.y;
    let (sin_phi, cos_phi) = ego.phi.sin_cos();
    Ok(EgoDelta {
        dx: cos_phi * dx_g + sin_phi * dy_g,
        dy: -sin_phi * dx_g + cos_phi * dy_g,
        dphi: wrap(waypoint.phi - ego.phi),
        dv: waypoint.v - ego.speed(),
    })
}
