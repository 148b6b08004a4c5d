//! High-fidelity reference simulator: a dynamic single-track vehicle with
//! Pacejka tires, drivetrain and resistance forces, actuator rate limits and
//! lag, and position-dependent surface friction, integrated at 200 Hz.
//!
//! This plays the "source simulator" role: it is deliberately richer than any
//! learned model downstream (the actuator states alone are unobservable from
//! 10 Hz logs), so distilling it is nontrivial.

use crate::error::{Error, Result};
use crate::track::Track;
use crate::vehicle::{wrap, Action, SurfaceLabel, VehicleState};
use alloc::format;
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Standard gravity, m/s².
pub const GRAVITY: f64 = 9.81;

/// Reference-sim integration step, s (200 Hz).
pub const SIM_DT: f64 = 0.005;

/// Substeps per 0.1 s control period.
pub const SUBSTEPS: usize = 20;

/// Magic-formula tire parameters for one axle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacejkaParams {
    /// Stiffness factor.
    pub b: f64,
    /// Shape factor.
    pub c: f64,
    /// Peak factor (multiplies `mu * Fz`).
    pub d: f64,
    /// Curvature factor.
    pub e: f64,
}

impl PacejkaParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.b > 0.0
            && self.c > 1.0
            && self.c < 2.5
            && self.d > 0.0
            && self.e < 1.0
            && [self.b, self.c, self.d, self.e].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!("Pacejka params out of range: {self:?}")))
        }
    }
}

/// Chassis, drivetrain, resistance, and actuator parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChassisParams {
    /// Mass, kg.
    pub m: f64,
    /// Yaw inertia, kg·m².
    pub iz: f64,
    /// CoG to front axle, m.
    pub lf: f64,
    /// CoG to rear axle, m.
    pub lr: f64,
    /// Drivetrain force at rest per unit throttle, N.
    pub cm1: f64,
    /// Drivetrain force falloff with speed, N·s/m.
    pub cm2: f64,
    /// Constant rolling resistance, N.
    pub cr0: f64,
    /// Quadratic drag, N·s²/m².
    pub cr2: f64,
    /// Maximum wheel steering angle, rad.
    pub steer_max: f64,
    /// Maximum steering slew rate, rad/s.
    pub steer_rate_max: f64,
    /// First-order lag time constant on commanded drive acceleration, s.
    pub accel_lag_tau: f64,
}

impl ChassisParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.m,
            self.iz,
            self.lf,
            self.lr,
            self.cm1,
            self.cm2,
            self.cr0,
            self.cr2,
            self.steer_max,
            self.steer_rate_max,
            self.accel_lag_tau,
        ];
        if fields.iter().all(|v| v.is_finite() && *v > 0.0) && self.lf + self.lr > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!("chassis params out of range: {self:?}")))
        }
    }

    /// Wheelbase, m.
    pub fn wheelbase(&self) -> f64 {
        self.lf + self.lr
    }

    /// Static front-axle load, N.
    pub fn fz_front(&self) -> f64 {
        self.m * GRAVITY * self.lr / self.wheelbase()
    }

    /// Static rear-axle load, N.
    pub fn fz_rear(&self) -> f64 {
        self.m * GRAVITY * self.lf / self.wheelbase()
    }
}

/// Full reference-simulator parameter set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefSimParams {
    pub chassis: ChassisParams,
    pub front: PacejkaParams,
    pub rear: PacejkaParams,
    /// Slip-angle denominator clamp, m/s.
    pub v_eps: f64,
    /// Integration step, s.
    pub dt: f64,
}

impl Default for RefSimParams {
    /// Documented ground-truth values. The learnable physics model brackets
    /// these with bounds that are deliberately not centered on them.
    fn default() -> Self {
        Self {
            chassis: ChassisParams {
                m: 1500.0,
                iz: 2500.0,
                lf: 1.2,
                lr: 1.4,
                cm1: 7500.0,
                cm2: 120.0,
                cr0: 250.0,
                cr2: 0.4,
                steer_max: 0.5,
                steer_rate_max: 1.0,
                accel_lag_tau: 0.2,
            },
            front: PacejkaParams { b: 11.0, c: 1.7, d: 1.15, e: 0.9 },
            rear: PacejkaParams { b: 13.0, c: 1.55, d: 1.25, e: 0.85 },
            v_eps: 0.5,
            dt: SIM_DT,
        }
    }
}

impl RefSimParams {
    pub fn validate(&self) -> Result<()> {
        self.chassis.validate()?;
        self.front.validate()?;
        self.rear.validate()?;
        if !(self.v_eps > 0.0 && self.v_eps.is_finite()) {
            return Err(Error::InvalidParam(format!("v_eps {} must be positive", self.v_eps)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParam(format!("dt {} must be positive", self.dt)));
        }
        Ok(())
    }
}

/// Simulator state: vehicle plus actuator internals plus track progress.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefSimState {
    pub vehicle: VehicleState,
    /// Actual wheel steering angle (rate-limited actuator state), rad.
    pub steer_angle: f64,
    /// First-order-lagged commanded drive acceleration, m/s².
    pub accel_cmd_filtered: f64,
    /// Arclength of the centerline projection, m (wrapped on closed tracks).
    pub arclength: f64,
    /// Projection segment cache; maintained by `step`, seeded by `make_state`.
    pub seg: usize,
}

/// Pacejka magic formula: lateral force as a function of slip angle.
///
/// `F = mu * Fz * D * sin(C * atan(B*alpha - E*(B*alpha - atan(B*alpha))))`
pub fn tire_lateral_force(alpha: f64, fz: f64, p: &PacejkaParams, mu: f64) -> Result<f64> {
    if !(alpha.is_finite() && fz.is_finite() && mu.is_finite()) {
        return Err(Error::NonFinite("tire_lateral_force input"));
    }
    if fz < 0.0 || mu <= 0.0 {
        return Err(Error::InvalidParam(format!("Fz {fz} must be >= 0 and mu {mu} > 0")));
    }
    let ba = p.b * alpha;
    Ok(mu * fz * p.d * (p.c * (ba - p.e * (ba - ba.atan())).atan()).sin())
}

/// Sign with `sign(0) = 0`, unlike `f64::signum`.
#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Width of the windowed projection search, in segments. The vehicle moves
/// well under one segment per 5 ms substep on every generated track, so a
/// window this wide always contains the true nearest segment.
const PROJ_WINDOW: usize = 12;

/// The reference simulator: track plus parameters. Stepping is pure; state
/// is explicit, so independent instances can run concurrently.
#[derive(Debug, Clone)]
pub struct RefSim {
    track: Track,
    params: RefSimParams,
}

impl RefSim {
    pub fn new(track: Track, params: RefSimParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { track, params })
    }

    pub fn track(&self) -> &Track {
        &self.track
    }

    pub fn params(&self) -> &RefSimParams {
        &self.params
    }

    /// Builds a simulator state from a vehicle state with relaxed actuators,
    /// establishing the projection by global search.
    pub fn make_state(&self, vehicle: VehicleState) -> Result<RefSimState> {
        if !vehicle.is_finite() {
            return Err(Error::NonFinite("make_state vehicle"));
        }
        let proj = self.track.project(vehicle.x, vehicle.y);
        Ok(RefSimState {
            vehicle,
            steer_angle: 0.0,
            accel_cmd_filtered: 0.0,
            arclength: proj.s,
            seg: proj.seg,
        })
    }

    /// Convenience: a state on the centerline at arclength `s0`, offset
    /// laterally and in heading, moving at `vx0` along the body x-axis.
    pub fn state_on_track(&self, s0: f64, lateral: f64, heading_off: f64, vx0: f64) -> Result<RefSimState> {
        let p = self.track.sample_at(s0)?;
        let (sin_h, cos_h) = p.heading.sin_cos();
        // Positive lateral is left of the travel direction.
        let vehicle = VehicleState::new(
            p.x - sin_h * lateral,
            p.y + cos_h * lateral,
            wrap(p.heading + heading_off),
            vx0,
            0.0,
            0.0,
        )?;
        self.make_state(vehicle)
    }

    /// Front/rear slip angles for a state (uses the actuator steer angle).
    pub fn slip_angles(&self, state: &RefSimState) -> (f64, f64) {
        let ch = &self.params.chassis;
        let v = &state.vehicle;
        let denom = v.vx.abs().max(self.params.v_eps);
        let alpha_f = (v.vy + ch.lf * v.omega).atan2(denom) - state.steer_angle;
        let alpha_r = (v.vy - ch.lr * v.omega).atan2(denom);
        (alpha_f, alpha_r)
    }

    /// Surface under the vehicle at its current projection.
    pub fn surface_under(&self, state: &RefSimState) -> Result<SurfaceLabel> {
        self.track.surface_at(self.query_s(state.arclength))
    }

    /// Clamps an arclength into the queryable range (wrap on closed tracks,
    /// nudge off the exclusive end on open ones).
    fn query_s(&self, s: f64) -> f64 {
        let len = self.track.total_length();
        if self.track.closed() {
            self.track.wrap_s(s)
        } else {
            s.clamp(0.0, len - 1e-9 * len.max(1.0))
        }
    }

    /// One 5 ms integration step.
    ///
    /// Order of operations: advance actuator states from the held action,
    /// evaluate forces at the current velocities with the new actuator
    /// states, semi-implicit Euler (velocities first, pose from the new
    /// velocities at the old heading), then update the track projection.
    pub fn step(&self, state: &RefSimState, action: Action) -> Result<RefSimState> {
        if !action.is_finite() {
            return Err(Error::NonFinite("step action"));
        }
        if !state.vehicle.is_finite() {
            return Err(Error::NonFinite("step state"));
        }
        let p = &self.params;
        let ch = &p.chassis;
        let dt = p.dt;
        let v = &state.vehicle;

        // Actuators.
        let steer_target = action.delta.clamp(-1.0, 1.0) * ch.steer_max;
        let max_dsteer = ch.steer_rate_max * dt;
        let steer = state.steer_angle
            + (steer_target - state.steer_angle).clamp(-max_dsteer, max_dsteer);
        let tau = action.tau.clamp(-1.0, 1.0);
        let accel_cmd = (ch.cm1 - ch.cm2 * v.vx) * tau / ch.m;
        let accel_f = state.accel_cmd_filtered
            + dt / ch.accel_lag_tau * (accel_cmd - state.accel_cmd_filtered);

        // Longitudinal force: lagged drive force plus instantaneous resistance.
        let fx = ch.m * accel_f - ch.cr0 * sign(v.vx) - ch.cr2 * v.vx * v.vx.abs();

        // Tire forces. The magic formula returns the restoring magnitude for
        // positive slip; the physical axle force opposes slip, hence the
        // negation.
        let mu = self.track.mu_at(self.query_s(state.arclength))?;
        let denom = v.vx.abs().max(p.v_eps);
        let alpha_f = (v.vy + ch.lf * v.omega).atan2(denom) - steer;
        let alpha_r = (v.vy - ch.lr * v.omega).atan2(denom);
        let fy_f = -tire_lateral_force(alpha_f, ch.fz_front(), &p.front, mu)?;
        let fy_r = -tire_lateral_force(alpha_r, ch.fz_rear(), &p.rear, mu)?;

        // Body-frame accelerations.
        let (sin_d, cos_d) = steer.sin_cos();
        let ax = (fx - fy_f * sin_d) / ch.m + v.vy * v.omega;
        let ay = (fy_r + fy_f * cos_d) / ch.m - v.vx * v.omega;
        let omega_dot = (ch.lf * fy_f * cos_d - ch.lr * fy_r) / ch.iz;

        // Semi-implicit Euler: velocities first.
        let mut vx = v.vx + dt * ax;
        // Standstill clamp: without positive (resp. negative) drive command,
        // resistance cannot push the car through zero longitudinal speed.
        if (v.vx > 0.0 && vx < 0.0 && tau <= 0.0) || (v.vx < 0.0 && vx > 0.0 && tau >= 0.0) {
            vx = 0.0;
        }
        let vy = v.vy + dt * ay;
        let omega = v.omega + dt * omega_dot;
        let phi = wrap(v.phi + dt * omega);
        let (sin_p, cos_p) = v.phi.sin_cos();
        let x = v.x + dt * (vx * cos_p - vy * sin_p);
        let y = v.y + dt * (vx * sin_p + vy * cos_p);

        let vehicle = VehicleState { x, y, phi, vx, vy, omega };
        if !vehicle.is_finite() {
            return Err(Error::Diverged(format!("non-finite state after step: {vehicle:?}")));
        }
        let proj = self.track.project_windowed(x, y, state.seg, PROJ_WINDOW);
        Ok(RefSimState {
            vehicle,
            steer_angle: steer,
            accel_cmd_filtered: accel_f,
            arclength: proj.s,
            seg: proj.seg,
        })
    }

    /// One 0.1 s control period: 20 substeps with the action held.
    pub fn run_control_step(&self, state: &RefSimState, action: Action) -> Result<RefSimState> {
        let mut s = *state;
        for _ in 0..SUBSTEPS {
            s = self.step(&s, action)?;
        }
        Ok(s)
    }
}
