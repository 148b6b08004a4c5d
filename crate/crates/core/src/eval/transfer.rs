//! Transfer evaluation: a trained policy drives the reference simulator
//! around a held-out closed circuit at the control rate, planning against a
//! precomputed reference lap. Reports per-run tracking metrics, distance
//! fraction, steering roughness, inference latency, and completion /
//! loss-of-control rates (mean and spread over runs).
//!
//! Loss of control is flagged when either (a) the body slip angle
//! `|atan2(vy, max(|vx|, v_eps))|` exceeds `slip_rad` for a sustained
//! window of `sustain_s` seconds, or (b) the heading diverges from the path
//! tangent by more than `heading_rad` instantaneously. The speed floor
//! `v_eps` keeps crawling or parked cars from registering large slip out of
//! tiny velocity components. All four thresholds are configurable through
//! [`LocConfig`]; the defaults are 0.6 rad slip sustained for 0.5 s, a
//! 90-degree heading envelope, and a 0.5 m/s floor.

use crate::env::{observation_from_plan, StartNoise, LOOKAHEAD};
use crate::error::{Error, Result};
use crate::eval::Clock;
use crate::policy::Policy;
use crate::refsim::{RefSim, RefSimParams};
use crate::rng::DetRng;
use crate::track::Track;
use crate::vehicle::{wrap_angle, VehicleState, Waypoint, CONTROL_DT};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};
#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};

/// Centerline length of the procedural transfer circuit, m.
pub const TRANSFER_TRACK_LEN: f64 = 2765.0;
/// Corner count of the transfer circuit.
pub const TRANSFER_CORNERS: usize = 10;
/// Low-friction patch count on the icy variant.
pub const TRANSFER_ICE_PATCHES: usize = 7;

/// Projection search window (segments each way) when tracking the car.
const PROJ_WINDOW: usize = 12;

/// Mean absolute first difference of a steering command sequence; the
/// steering-roughness metric (dimensionless, commands are in [-1, 1]).
pub fn steer_d1(deltas: &[f64]) -> Result<f64> {
    if deltas.len() < 2 {
        return Err(Error::TooShort("steering roughness needs at least two commands"));
    }
    let sum: f64 = deltas.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    Ok(sum / (deltas.len() - 1) as f64)
}

/// Thresholds for the loss-of-control detector. See the module docs for
/// the semantics of each field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocConfig {
    /// Body slip angle beyond which the car counts as sliding, rad.
    pub slip_rad: f64,
    /// How long the slip must persist before control counts as lost, s.
    pub sustain_s: f64,
    /// Instantaneous heading-vs-path-tangent error that counts as lost, rad.
    pub heading_rad: f64,
    /// Speed floor inside the slip angle's denominator, m/s.
    pub v_eps: f64,
}

impl Default for LocConfig {
    fn default() -> Self {
        Self { slip_rad: 0.6, sustain_s: 0.5, heading_rad: FRAC_PI_2, v_eps: 0.5 }
    }
}

impl LocConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("slip_rad", self.slip_rad),
            ("sustain_s", self.sustain_s),
            ("heading_rad", self.heading_rad),
            ("v_eps", self.v_eps),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParam(format!("{name} {v} must be positive")));
            }
        }
        Ok(())
    }

    /// The sustain window in control steps (at least one).
    pub fn sustain_steps(&self) -> usize {
        let steps = (self.sustain_s / CONTROL_DT).round() as usize;
        steps.max(1)
    }
}

fn slip_angle(s: &VehicleState, cfg: &LocConfig) -> f64 {
    s.vy.atan2(s.vx.abs().max(cfg.v_eps)).abs()
}

/// Whether the newest state of a trajectory shows loss of control.
/// `path_headings[i]` is the path tangent at `states[i]`'s projection.
pub fn loss_of_control(
    states: &[VehicleState],
    path_headings: &[f64],
    cfg: &LocConfig,
) -> Result<bool> {
    cfg.validate()?;
    if states.len() != path_headings.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} states vs {} path headings",
            states.len(),
            path_headings.len()
        )));
    }
    let Some(last) = states.last() else {
        return Ok(false);
    };
    let he = wrap_angle(last.phi - path_headings[path_headings.len() - 1])?.abs();
    if he > cfg.heading_rad {
        return Ok(true);
    }
    let window = cfg.sustain_steps();
    if states.len() < window {
        return Ok(false);
    }
    Ok(states[states.len() - window..].iter().all(|s| slip_angle(s, cfg) > cfg.slip_rad))
}

/// `100 * dist / len`, clamped into [0, 100].
pub fn distance_fraction(distance_m: f64, track_len_m: f64) -> f64 {
    (100.0 * distance_m / track_len_m).clamp(0.0, 100.0)
}

// ---------------------------------------------------------------------------
// Procedural transfer circuit
// ---------------------------------------------------------------------------

/// Polyline sample spacing when discretizing the circuit, m.
const TRACK_SPACING: f64 = 2.5;
/// Shortest allowed straight between corners, m.
const MIN_STRAIGHT: f64 = 12.0;
/// Allowed corner radius band after length normalization, m.
const RADIUS_BAND: (f64, f64) = (18.0, 140.0);

struct LoopPlan {
    /// Signed corner angles (positive = left), rad. Sums to 2*pi.
    angles: Vec<f64>,
    /// Corner radii, m.
    radii: Vec<f64>,
    /// Straight lengths; `straights[i]` precedes corner `i`, m.
    straights: Vec<f64>,
}

/// Draws one candidate loop: corner angles summing to a full turn, mixed
/// radii, and straight lengths adjusted (minimum-norm) so the loop closes
/// in position. Returns `None` when a constraint fails; the caller retries.
fn draw_loop(rng: &mut DetRng) -> Option<LoopPlan> {
    let n = TRANSFER_CORNERS;
    // Seven left corners, three right, in shuffled order.
    let mut signs = vec![1.0; n];
    for s in signs.iter_mut().take(3) {
        *s = -1.0;
    }
    rng.shuffle(&mut signs);

    // Raw magnitudes; the lefts are then rescaled so the signed total is
    // exactly one full turn (the closed loop's heading closure).
    let mut mags: Vec<f64> = (0..n).map(|_| rng.uniform(0.35, 1.5)).collect();
    let right_total: f64 =
        signs.iter().zip(&mags).filter(|(s, _)| **s < 0.0).map(|(_, m)| m).sum();
    let left_total: f64 =
        signs.iter().zip(&mags).filter(|(s, _)| **s > 0.0).map(|(_, m)| m).sum();
    let left_scale = (2.0 * PI + right_total) / left_total;
    for (s, m) in signs.iter().zip(mags.iter_mut()) {
        if *s > 0.0 {
            *m *= left_scale;
        }
    }
    let angles: Vec<f64> = signs.iter().zip(&mags).map(|(s, m)| s * m).collect();
    if angles.iter().any(|a| !(0.2..=1.9).contains(&a.abs())) {
        return None;
    }

    let radii: Vec<f64> = (0..n).map(|_| rng.uniform(25.0, 110.0)).collect();
    let mut straights: Vec<f64> = (0..n).map(|_| rng.uniform(80.0, 300.0)).collect();

    // Headings entering each straight.
    let mut headings = Vec::with_capacity(n);
    let mut h = 0.0;
    for a in &angles {
        headings.push(h);
        h += a;
    }

    // Position-closure error with the drawn straights.
    let mut ex = 0.0;
    let mut ey = 0.0;
    for i in 0..n {
        ex += straights[i] * headings[i].cos();
        ey += straights[i] * headings[i].sin();
        let kappa = angles[i].signum() / radii[i];
        let h1 = headings[i] + angles[i];
        ex += (h1.sin() - headings[i].sin()) / kappa;
        ey += (headings[i].cos() - h1.cos()) / kappa;
    }
    // Minimum-norm straight adjustment solving sum dL_i * u(h_i) = -E.
    let (mut gxx, mut gxy, mut gyy) = (0.0, 0.0, 0.0);
    for &hi in &headings {
        let (s, c) = hi.sin_cos();
        gxx += c * c;
        gxy += c * s;
        gyy += s * s;
    }
    let det = gxx * gyy - gxy * gxy;
    if det.abs() < 1e-6 {
        return None;
    }
    let wx = (-ex * gyy + ey * gxy) / det;
    let wy = (-ey * gxx + ex * gxy) / det;
    for i in 0..n {
        straights[i] += headings[i].cos() * wx + headings[i].sin() * wy;
    }

    // Normalize total length to the target, then enforce geometry bounds at
    // the final scale (uniform scaling preserves closure and angles).
    let arc_len: f64 = (0..n).map(|i| mags[i] * radii[i]).sum();
    let total: f64 = straights.iter().sum::<f64>() + arc_len;
    let scale = TRANSFER_TRACK_LEN / total;
    if !(0.7..=1.4).contains(&scale) {
        return None;
    }
    let straights: Vec<f64> = straights.iter().map(|l| l * scale).collect();
    let radii: Vec<f64> = radii.iter().map(|r| r * scale).collect();
    if straights.iter().any(|&l| l < MIN_STRAIGHT) {
        return None;
    }
    if radii.iter().any(|&r| !(RADIUS_BAND.0..=RADIUS_BAND.1).contains(&r)) {
        return None;
    }
    Some(LoopPlan { angles, radii, straights })
}

/// Discretizes the loop into a polyline at roughly [`TRACK_SPACING`],
/// starting (and ending) at the midpoint of the first straight so the seam
/// falls on a straight. The duplicate closing point is omitted.
fn loop_polyline(plan: &LoopPlan) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    let mut x = 0.0;
    let mut y = 0.0;
    let mut h = 0.0;

    let march_straight = |x: &mut f64, y: &mut f64, h: f64, len: f64, pts: &mut Vec<(f64, f64)>| {
        let steps = (len / TRACK_SPACING).ceil() as usize;
        let (sx, sy) = (*x, *y);
        let (sin, cos) = h.sin_cos();
        for k in 1..=steps.max(1) {
            let d = len * k as f64 / steps.max(1) as f64;
            *x = sx + d * cos;
            *y = sy + d * sin;
            pts.push((*x, *y));
        }
    };
    let march_arc = |x: &mut f64, y: &mut f64, h: &mut f64, angle: f64, radius: f64, pts: &mut Vec<(f64, f64)>| {
        let arc = angle.abs() * radius;
        let kappa = angle.signum() / radius;
        let steps = ((arc / TRACK_SPACING).ceil() as usize).max(2);
        let (sx, sy) = (*x, *y);
        let h0 = *h;
        for k in 1..=steps {
            let s = arc * k as f64 / steps as f64;
            let h1 = h0 + kappa * s;
            *x = sx + (h1.sin() - h0.sin()) / kappa;
            *y = sy + (h0.cos() - h1.cos()) / kappa;
            pts.push((*x, *y));
        }
        *h = h0 + angle;
    };

    march_straight(&mut x, &mut y, h, plan.straights[0] / 2.0, &mut pts);
    for i in 0..plan.angles.len() {
        march_arc(&mut x, &mut y, &mut h, plan.angles[i], plan.radii[i], &mut pts);
        let next_len = if i + 1 < plan.straights.len() {
            plan.straights[i + 1]
        } else {
            plan.straights[0] / 2.0
        };
        march_straight(&mut x, &mut y, h, next_len, &mut pts);
    }
    // The march returns to the origin (closure was solved exactly); drop
    // the duplicate so the track constructor closes the loop itself.
    let (lx, ly) = *pts.last().expect("non-empty polyline");
    if lx.hypot(ly) < 1e-6 {
        pts.pop();
    }
    pts
}

/// Minimum clearance between non-neighboring polyline points for the
/// corridor not to overlap itself.
fn self_clearance_ok(pts: &[(f64, f64)], clearance: f64) -> bool {
    let n = pts.len();
    // Points within this circular index distance are legitimately close.
    let guard = (6.0 * clearance / TRACK_SPACING).ceil() as usize;
    for i in 0..n {
        for j in i + 1..n {
            let ring_dist = (j - i).min(n - (j - i));
            if ring_dist <= guard {
                continue;
            }
            let d = (pts[i].0 - pts[j].0).hypot(pts[i].1 - pts[j].1);
            if d < clearance {
                return false;
            }
        }
    }
    true
}

fn polyline_length(pts: &[(f64, f64)]) -> f64 {
    let mut total = 0.0;
    for w in pts.windows(2) {
        total += (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
    }
    let (fx, fy) = pts[0];
    let (lx, ly) = *pts.last().expect("non-empty");
    total + (fx - lx).hypot(fy - ly)
}

/// Builds the held-out transfer circuit: a closed loop of
/// [`TRANSFER_TRACK_LEN`] meters with [`TRANSFER_CORNERS`] corners of mixed
/// radius and direction. With `icy`, [`TRANSFER_ICE_PATCHES`] low-friction
/// intervals are scattered around the lap (one per equal arclength slot,
/// never at the start line); the flag does not perturb the geometry, which
/// draws from its own random substream.
pub fn transfer_track(
    seed: u64,
    icy: bool,
    half_width: f64,
    mu_asphalt: f64,
    mu_ice: f64,
) -> Result<Track> {
    let mut geom = DetRng::substream(seed, 0);
    let clearance = 2.0 * half_width + 2.0;
    let mut polyline = None;
    for _ in 0..400 {
        let Some(plan) = draw_loop(&mut geom) else {
            continue;
        };
        let pts = loop_polyline(&plan);
        if self_clearance_ok(&pts, clearance) {
            polyline = Some(pts);
            break;
        }
    }
    let mut pts = polyline.ok_or_else(|| {
        Error::InvalidParam(format!("transfer track synthesis failed for seed {seed}"))
    })?;
    // The chord length of the sampled polyline falls slightly short of the
    // analytic arc length; rescale so the track measures the target exactly.
    let factor = TRANSFER_TRACK_LEN / polyline_length(&pts);
    for p in pts.iter_mut() {
        p.0 *= factor;
        p.1 *= factor;
    }

    let ice = if icy {
        let mut ice_rng = DetRng::substream(seed, 1);
        let slot = TRANSFER_TRACK_LEN / TRANSFER_ICE_PATCHES as f64;
        (0..TRANSFER_ICE_PATCHES)
            .map(|k| {
                let len = ice_rng.uniform(18.0, 45.0);
                let start = slot * k as f64 + ice_rng.uniform(25.0, slot - len - 25.0);
                (start, start + len)
            })
            .collect()
    } else {
        Vec::new()
    };
    Track::from_centerline(&pts, half_width, ice, mu_asphalt, mu_ice, true)
}

// ---------------------------------------------------------------------------
// Reference lap
// ---------------------------------------------------------------------------

/// Speed-profile limits for the reference lap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LapConfig {
    /// Speed cap, m/s.
    pub v_max: f64,
    /// Lateral acceleration cap (limits cornering speed), m/s^2.
    pub a_lat_max: f64,
    /// Longitudinal acceleration cap (limits braking/accelerating), m/s^2.
    pub a_long_max: f64,
    /// Arclength grid resolution for the speed profile, m.
    pub grid_ds: f64,
}

impl Default for LapConfig {
    fn default() -> Self {
        Self { v_max: 12.0, a_lat_max: 3.0, a_long_max: 2.5, grid_ds: 2.0 }
    }
}

impl LapConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("v_max", self.v_max),
            ("a_lat_max", self.a_lat_max),
            ("a_long_max", self.a_long_max),
            ("grid_ds", self.grid_ds),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParam(format!("{name} {v} must be positive")));
            }
        }
        Ok(())
    }
}

/// A lap of the track time-marched at the control rate: the waypoint
/// stream the policy plans against during transfer.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceLap {
    /// Waypoints at successive control steps; extends one lookahead past
    /// the finish line so plans near completion stay full length.
    pub waypoints: Vec<Waypoint>,
    /// Unwrapped arclength of each waypoint from the start line, m.
    pub arclengths: Vec<f64>,
    /// Control steps needed to complete the lap at the reference speed.
    pub lap_steps: usize,
}

/// Computes a curvature- and acceleration-limited speed profile on an
/// arclength grid (cyclic forward/backward passes), then time-marches it
/// at the control rate to produce the reference waypoint stream.
pub fn reference_lap(track: &Track, cfg: &LapConfig) -> Result<ReferenceLap> {
    cfg.validate()?;
    if !track.closed() {
        return Err(Error::InvalidParam("reference lap needs a closed track".into()));
    }
    let len = track.total_length();
    let n = ((len / cfg.grid_ds).ceil() as usize).max(4);
    let ds = len / n as f64;
    let mut v: Vec<f64> = (0..n)
        .map(|k| {
            let kappa = track.curvature_at(k as f64 * ds)?.abs();
            Ok(cfg.v_max.min((cfg.a_lat_max / kappa.max(1e-9)).sqrt()))
        })
        .collect::<Result<_>>()?;
    // Braking limit (backward) and acceleration limit (forward); two
    // cyclic sweeps each so constraints propagate across the seam.
    for _ in 0..2 {
        for i in (0..n).rev() {
            let nx = (i + 1) % n;
            v[i] = v[i].min((v[nx] * v[nx] + 2.0 * cfg.a_long_max * ds).sqrt());
        }
        for i in 0..n {
            let nx = (i + 1) % n;
            v[nx] = v[nx].min((v[i] * v[i] + 2.0 * cfg.a_long_max * ds).sqrt());
        }
    }
    let v_min = v.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if !(v_min.is_finite() && v_min > 0.0) {
        return Err(Error::Diverged(format!("reference speed profile floor {v_min}")));
    }
    let speed_at = |s_un: f64| -> f64 {
        let t = track.wrap_s(s_un) / ds;
        let i = (t.floor() as usize).min(n - 1);
        let frac = t - i as f64;
        v[i] * (1.0 - frac) + v[(i + 1) % n] * frac.min(1.0)
    };

    let cap = ((len / (v_min * CONTROL_DT)).ceil() as usize) * 2 + LOOKAHEAD + 16;
    let mut waypoints = Vec::new();
    let mut arclengths = Vec::new();
    let mut s_un = 0.0;
    let mut lap_steps = None;
    loop {
        let sample = track.sample_at(track.wrap_s(s_un))?;
        waypoints.push(Waypoint {
            x: sample.x,
            y: sample.y,
            phi: sample.heading,
            v: speed_at(s_un),
        });
        arclengths.push(s_un);
        if lap_steps.is_none() && s_un >= len {
            lap_steps = Some(waypoints.len() - 1);
        }
        if let Some(steps) = lap_steps {
            if waypoints.len() > steps + LOOKAHEAD {
                break;
            }
        }
        if waypoints.len() > cap {
            return Err(Error::Diverged("reference lap failed to close".into()));
        }
        // Sub-stepped march for integration accuracy within a control step.
        const SUBSTEPS: usize = 5;
        for _ in 0..SUBSTEPS {
            s_un += speed_at(s_un) * (CONTROL_DT / SUBSTEPS as f64);
        }
    }
    Ok(ReferenceLap {
        waypoints,
        arclengths,
        lap_steps: lap_steps.expect("loop exits only after the lap closes"),
    })
}

// ---------------------------------------------------------------------------
// Transfer evaluation
// ---------------------------------------------------------------------------

/// Mean and population standard deviation over runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn from_slice(xs: &[f64]) -> Self {
        // Identical samples have exactly zero spread; the general path
        // would report rounding noise (mean = n*x/n need not equal x).
        if let Some((first, rest)) = xs.split_first() {
            if rest.iter().all(|x| x == first) {
                return Self { mean: *first, std: 0.0 };
            }
        }
        let n = xs.len().max(1) as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    /// Independent runs (each with its own start perturbation).
    pub runs: usize,
    pub seed: u64,
    pub lap: LapConfig,
    /// Start perturbation bounds (uniform draws, matching training resets;
    /// the position bound applies laterally).
    pub start_noise: StartNoise,
    /// Initial speed as a fraction of the reference speed at the start line.
    pub start_speed_scale: f64,
    /// Timeout: a run ends after `lap_margin * lap_steps` control steps.
    pub lap_margin: f64,
    pub loc: LocConfig,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            runs: 10,
            seed: 0,
            lap: LapConfig::default(),
            start_noise: StartNoise::default(),
            start_speed_scale: 1.0,
            lap_margin: 2.0,
            loc: LocConfig::default(),
        }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::InvalidParam("transfer needs at least one run".into()));
        }
        if !(self.start_speed_scale.is_finite() && self.start_speed_scale >= 0.0) {
            return Err(Error::InvalidParam(format!(
                "start_speed_scale {} must be >= 0",
                self.start_speed_scale
            )));
        }
        if !(self.lap_margin.is_finite() && self.lap_margin >= 1.0) {
            return Err(Error::InvalidParam(format!(
                "lap_margin {} must be >= 1",
                self.lap_margin
            )));
        }
        self.lap.validate()?;
        self.start_noise.validate()?;
        self.loc.validate()
    }
}

/// One run's outcome and per-step-averaged metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferRun {
    /// The car crossed the finish line.
    pub completed: bool,
    /// The run ended in loss of control (or simulator divergence).
    pub loss_of_control: bool,
    /// Control steps executed.
    pub steps: usize,
    /// Net forward progress along the centerline, m (capped at one lap).
    pub distance_m: f64,
    /// `100 * distance_m / track length`, in [0, 100].
    pub distance_frac: f64,
    /// Mean |lateral offset| from the centerline, m (includes the start).
    pub cte: f64,
    /// Mean one-step-delay position error vs the plan's first waypoint, m.
    pub pte: f64,
    /// Mean one-step-delay absolute heading error, rad.
    pub he: f64,
    /// Mean one-step-delay absolute speed error, m/s.
    pub ste: f64,
    /// Steering roughness (0.0 when fewer than two commands were issued).
    pub steer_d1: f64,
    /// Mean policy inference latency per control step, ms.
    pub latency_ms: f64,
}

/// Aggregate over runs: per-metric mean and spread, plus outcome rates
/// as percentages of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub cte: MeanStd,
    pub pte: MeanStd,
    pub he: MeanStd,
    pub ste: MeanStd,
    pub distance_frac: MeanStd,
    pub steer_d1: MeanStd,
    pub latency_ms: MeanStd,
    /// % of runs that completed the lap.
    pub completion_rate: f64,
    /// % of runs that ended in loss of control.
    pub loc_rate: f64,
    pub n_runs: usize,
    pub runs: Vec<TransferRun>,
}

/// Wraps an arclength difference into [-len/2, len/2) so progress across
/// the seam accumulates correctly.
fn wrap_progress(d: f64, len: f64) -> f64 {
    crate::vehicle::rem_euclid(d + 0.5 * len, len) - 0.5 * len
}

fn run_once(
    policy: &Policy,
    sim: &RefSim,
    lap: &ReferenceLap,
    cfg: &TransferConfig,
    clock: &dyn Clock,
    run_idx: u64,
) -> Result<TransferRun> {
    let track = sim.track();
    let len = track.total_length();
    let mut rng = DetRng::substream(cfg.seed, run_idx);
    let noise = cfg.start_noise;
    let lateral = rng.uniform(-noise.pos, noise.pos);
    let dheading = rng.uniform(-noise.heading, noise.heading);
    let dspeed = rng.uniform(-noise.speed, noise.speed);
    let v0 = (lap.waypoints[0].v * cfg.start_speed_scale * (1.0 + dspeed)).max(0.0);
    let mut state = sim.state_on_track(0.0, lateral, dheading, v0)?;

    let proj0 = track.project_windowed(state.vehicle.x, state.vehicle.y, state.seg, PROJ_WINDOW);
    let mut states = vec![state.vehicle];
    let mut tangents = vec![proj0.heading];
    let mut cte_sum = proj0.lateral.abs();
    let (mut pte_sum, mut he_sum, mut ste_sum) = (0.0, 0.0, 0.0);
    let mut deltas: Vec<f64> = Vec::new();
    let mut latency_sum = 0.0;
    let mut s_un = 0.0;
    let mut cursor = 0usize;
    let mut steps = 0usize;
    let mut completed = false;
    let mut loc = false;

    let timeout = ((cfg.lap_margin * lap.lap_steps as f64).ceil() as usize).max(1);
    for _ in 0..timeout {
        // Plan: the first reference waypoint strictly ahead of our progress,
        // then the lookahead horizon (monotone cursor; clamped at the end).
        while cursor + 1 < lap.arclengths.len() && lap.arclengths[cursor] <= s_un {
            cursor += 1;
        }
        let plan: Vec<Waypoint> = (0..LOOKAHEAD)
            .map(|k| lap.waypoints[(cursor + k).min(lap.waypoints.len() - 1)])
            .collect();
        let surface = sim.surface_under(&state)?;
        let features =
            observation_from_plan(&state.vehicle, &plan, policy.mode(), Some(surface))?
                .features();
        let t0 = clock.now();
        let action = policy.act_deterministic(&features)?;
        latency_sum += clock.now() - t0;
        deltas.push(action.delta);

        let prev_s = state.arclength;
        match sim.run_control_step(&state, action) {
            Ok(next) => state = next,
            Err(_) => {
                // A diverging plant is loss of control at this distance.
                loc = true;
                break;
            }
        }
        steps += 1;
        s_un += wrap_progress(state.arclength - prev_s, len);

        let target = plan[0];
        pte_sum += (state.vehicle.x - target.x).hypot(state.vehicle.y - target.y);
        he_sum += wrap_angle(state.vehicle.phi - target.phi)?.abs();
        ste_sum += (state.vehicle.speed() - target.v).abs();
        let proj =
            track.project_windowed(state.vehicle.x, state.vehicle.y, state.seg, PROJ_WINDOW);
        cte_sum += proj.lateral.abs();
        states.push(state.vehicle);
        tangents.push(proj.heading);

        if s_un >= len {
            completed = true;
            break;
        }
        if loss_of_control(&states, &tangents, &cfg.loc)? {
            loc = true;
            break;
        }
    }

    let distance_m = s_un.clamp(0.0, len);
    let inferences = deltas.len().max(1) as f64;
    Ok(TransferRun {
        completed,
        loss_of_control: loc,
        steps,
        distance_m,
        distance_frac: distance_fraction(distance_m, len),
        cte: cte_sum / (steps + 1) as f64,
        pte: pte_sum / steps.max(1) as f64,
        he: he_sum / steps.max(1) as f64,
        ste: ste_sum / steps.max(1) as f64,
        steer_d1: if deltas.len() < 2 { 0.0 } else { steer_d1(&deltas)? },
        latency_ms: 1000.0 * latency_sum / inferences,
    })
}

/// Drives the reference simulator with the policy for `cfg.runs` runs and
/// aggregates the per-run metrics. Run `r` draws its start perturbation
/// from `DetRng::substream(cfg.seed, r)`. Inference latency is measured
/// with `clock`; pass a null clock when timing is not of interest.
pub fn transfer_eval(
    policy: &Policy,
    track: &Track,
    params: &RefSimParams,
    cfg: &TransferConfig,
    clock: &dyn Clock,
) -> Result<TransferReport> {
    cfg.validate()?;
    let lap = reference_lap(track, &cfg.lap)?;
    let sim = RefSim::new(track.clone(), *params)?;
    let runs = (0..cfg.runs)
        .map(|r| run_once(policy, &sim, &lap, cfg, clock, r as u64))
        .collect::<Result<Vec<_>>>()?;

    let collect = |f: &dyn Fn(&TransferRun) -> f64| -> MeanStd {
        let xs: Vec<f64> = runs.iter().map(f).collect();
        MeanStd::from_slice(&xs)
    };
    let n = runs.len() as f64;
    Ok(TransferReport {
        cte: collect(&|r| r.cte),
        pte: collect(&|r| r.pte),
        he: collect(&|r| r.he),
        ste: collect(&|r| r.ste),
        distance_frac: collect(&|r| r.distance_frac),
        steer_d1: collect(&|r| r.steer_d1),
        latency_ms: collect(&|r| r.latency_ms),
        completion_rate: 100.0 * runs.iter().filter(|r| r.completed).count() as f64 / n,
        loc_rate: 100.0 * runs.iter().filter(|r| r.loss_of_control).count() as f64 / n,
        n_runs: runs.len(),
        runs,
    })
}
