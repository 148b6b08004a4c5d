//! Procedural trajectory-tracking scenarios.
//!
//! A scenario is a time-indexed reference trajectory at the control rate
//! (one [`Waypoint`] per 0.1 s), a corridor the vehicle must stay inside, a
//! goal region around the final waypoint, and a surface schedule. The
//! generator composes random straights, constant-curvature arcs, S-curves,
//! and U-turns, then plans a speed profile that respects lateral- and
//! longitudinal-acceleration caps, so every reference is drivable on
//! asphalt by construction.

use crate::error::{Error, Result};
use crate::vehicle::CONTROL_DT;
use crate::rng::DetRng;
use crate::vehicle::{wrap_angle, SurfaceLabel, Waypoint};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};

/// Number of lookahead waypoints in every observation.
pub const LOOKAHEAD: usize = 10;

/// Arclength resolution of the generator's internal path grid (m).
const GRID_DS: f64 = 0.5;

/// Fraction of the lateral-acceleration budget the speed plan actually
/// uses, leaving headroom for discretization at curvature switches.
const LAT_SAFETY: f64 = 0.95;

/// How a per-step surface sequence is produced at episode reset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SurfaceSpec {
    /// Asphalt for the whole episode.
    Asphalt,
    /// With probability `p_switch`, a single asphalt→ice switch at a
    /// uniformly random step in `1..horizon`; otherwise all-asphalt.
    Stochastic { p_switch: f64 },
    /// Deterministic switch: asphalt before `step`, ice from it onward.
    IceFromStep(usize),
    /// Fully user-defined sequence (must cover the horizon).
    Explicit(Vec<SurfaceLabel>),
}

impl SurfaceSpec {
    pub fn validate(&self) -> Result<()> {
        if let SurfaceSpec::Stochastic { p_switch } = self {
            if !(0.0..=1.0).contains(p_switch) {
                return Err(Error::InvalidParam(format!(
                    "p_switch {p_switch} must lie in [0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// Materializes the per-step sequence `sigma_0 .. sigma_{T-1}`.
    ///
    /// Draw order is fixed (switch coin, then switch step) so episode
    /// streams stay reproducible.
    pub fn materialize(&self, horizon: usize, rng: &mut DetRng) -> Vec<SurfaceLabel> {
        let mut seq = vec![SurfaceLabel::Asphalt; horizon];
        match self {
            SurfaceSpec::Asphalt => {}
            SurfaceSpec::Stochastic { p_switch } => {
                if rng.chance(*p_switch) && horizon >= 2 {
                    let at = 1 + rng.below(horizon - 1);
                    seq[at..].fill(SurfaceLabel::Ice);
                }
            }
            SurfaceSpec::IceFromStep(at) => {
                if *at < horizon {
                    seq[*at..].fill(SurfaceLabel::Ice);
                }
            }
            SurfaceSpec::Explicit(labels) => {
                seq.copy_from_slice(&labels[..horizon]);
            }
        }
        seq
    }
}

/// Initial-state distribution: uniform perturbations applied to the first
/// waypoint's pose and speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartNoise {
    /// Position offset bound per axis (m).
    pub pos: f64,
    /// Heading offset bound (rad).
    pub heading: f64,
    /// Relative speed perturbation bound (fraction of the waypoint speed).
    pub speed: f64,
}

impl Default for StartNoise {
    fn default() -> Self {
        Self { pos: 0.1, heading: 0.02, speed: 0.05 }
    }
}

impl StartNoise {
    pub fn validate(&self) -> Result<()> {
        let ok = self.pos.is_finite()
            && self.heading.is_finite()
            && self.speed.is_finite()
            && self.pos >= 0.0
            && self.heading >= 0.0
            && (0.0..1.0).contains(&self.speed);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!("start noise {self:?}")))
        }
    }
}

/// Curriculum knobs for [`generate_scenarios`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    /// Episode horizon T (control steps); the trajectory has T+1 waypoints.
    pub horizon: usize,
    /// Speed ceiling of the reference (m/s).
    pub v_max: f64,
    /// Lateral-acceleration cap the speed plan respects on asphalt (m/s²).
    pub a_lat_max: f64,
    /// Longitudinal acceleration/deceleration bound of the plan (m/s²).
    pub a_long_max: f64,
    /// Arc radius range (m); U-turns use the lower part of it.
    pub radius_range: (f64, f64),
    /// Corridor half-width (m).
    pub half_width: f64,
    /// Goal-region radius around the final waypoint (m).
    pub goal_radius: f64,
    pub surface: SurfaceSpec,
    pub start_noise: StartNoise,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            horizon: 100,
            v_max: 12.0,
            a_lat_max: 3.0,
            a_long_max: 2.5,
            radius_range: (8.0, 60.0),
            half_width: 3.0,
            goal_radius: 2.0,
            surface: SurfaceSpec::Asphalt,
            start_noise: StartNoise::default(),
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < LOOKAHEAD {
            return Err(Error::InvalidParam(format!(
                "horizon {} must be at least the lookahead {LOOKAHEAD}",
                self.horizon
            )));
        }
        let (r_lo, r_hi) = self.radius_range;
        let positive =
            [self.v_max, self.a_lat_max, self.a_long_max, r_lo, self.half_width, self.goal_radius];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || r_hi <= r_lo || r_hi.is_nan() {
            return Err(Error::InvalidParam(format!("scenario spec {self:?}")));
        }
        self.surface.validate()?;
        self.start_noise.validate()
    }
}

/// Nearest point on the reference polyline: segment index, arclength from
/// the start, and Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolyProjection {
    pub seg: usize,
    pub s: f64,
    pub dist: f64,
}

/// One trajectory-tracking episode definition.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    waypoints: Vec<Waypoint>,
    /// Cumulative polyline arclength per waypoint; `cum_s[0] = 0`.
    cum_s: Vec<f64>,
    half_width: f64,
    goal_radius: f64,
    horizon: usize,
    surface: SurfaceSpec,
    start_noise: StartNoise,
}

impl Scenario {
    pub fn new(
        waypoints: Vec<Waypoint>,
        half_width: f64,
        goal_radius: f64,
        horizon: usize,
        surface: SurfaceSpec,
        start_noise: StartNoise,
    ) -> Result<Self> {
        if waypoints.len() < LOOKAHEAD + 1 {
            return Err(Error::TooShort("scenario needs at least LOOKAHEAD+1 waypoints"));
        }
        if horizon == 0 || horizon > waypoints.len() {
            return Err(Error::InvalidParam(format!(
                "horizon {horizon} must lie in 1..={} (waypoint count)",
                waypoints.len()
            )));
        }
        for w in &waypoints {
            if ![w.x, w.y, w.phi, w.v].iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("scenario waypoint"));
            }
        }
        if !(half_width.is_finite() && half_width > 0.0) ||
            !(goal_radius.is_finite() && goal_radius > 0.0)
        {
            return Err(Error::InvalidParam(format!(
                "half_width {half_width} / goal_radius {goal_radius} must be positive"
            )));
        }
        surface.validate()?;
        if let SurfaceSpec::Explicit(labels) = &surface {
            if labels.len() < horizon {
                return Err(Error::TooShort("explicit surface schedule shorter than horizon"));
            }
        }
        start_noise.validate()?;

        let mut cum_s = Vec::with_capacity(waypoints.len());
        let mut acc = 0.0;
        cum_s.push(0.0);
        for pair in waypoints.windows(2) {
            acc += (pair[1].x - pair[0].x).hypot(pair[1].y - pair[0].y);
            cum_s.push(acc);
        }
        Ok(Self { waypoints, cum_s, half_width, goal_radius, horizon, surface, start_noise })
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn goal_radius(&self) -> f64 {
        self.goal_radius
    }

    pub fn surface_spec(&self) -> &SurfaceSpec {
        &self.surface
    }

    pub fn start_noise(&self) -> StartNoise {
        self.start_noise
    }

    /// Goal-region center: the final waypoint's position.
    pub fn goal(&self) -> (f64, f64) {
        let w = self.waypoints.last().expect("validated non-empty");
        (w.x, w.y)
    }

    /// Total polyline length (m).
    pub fn total_length(&self) -> f64 {
        *self.cum_s.last().expect("validated non-empty")
    }

    /// The k-th lookahead waypoint from step `t` (1-based k); indices past
    /// the trajectory end repeat the final waypoint.
    pub fn lookahead(&self, t: usize, k: usize) -> &Waypoint {
        let idx = (t + k).min(self.waypoints.len() - 1);
        &self.waypoints[idx]
    }

    /// Projects `(x, y)` onto the polyline, scanning segments in
    /// `[hint - back, hint + fwd]`. Ties keep the earliest segment.
    pub fn project_windowed(
        &self,
        x: f64,
        y: f64,
        hint: usize,
        back: usize,
        fwd: usize,
    ) -> PolyProjection {
        let last_seg = self.waypoints.len() - 2;
        let lo = hint.saturating_sub(back).min(last_seg);
        let hi = (hint.saturating_add(fwd)).min(last_seg);
        let mut best = PolyProjection { seg: lo, s: self.cum_s[lo], dist: f64::INFINITY };
        for seg in lo..=hi {
            let a = &self.waypoints[seg];
            let b = &self.waypoints[seg + 1];
            let (ex, ey) = (b.x - a.x, b.y - a.y);
            let len2 = ex * ex + ey * ey;
            let t = if len2 < 1e-18 {
                0.0
            } else {
                (((x - a.x) * ex + (y - a.y) * ey) / len2).clamp(0.0, 1.0)
            };
            let (px, py) = (a.x + t * ex, a.y + t * ey);
            let dist = (x - px).hypot(y - py);
            if dist < best.dist {
                let seg_len = self.cum_s[seg + 1] - self.cum_s[seg];
                best = PolyProjection { seg, s: self.cum_s[seg] + t * seg_len, dist };
            }
        }
        best
    }
}

/// One piecewise-constant-curvature section of the generated path.
struct Leg {
    kappa: f64,
    len: f64,
}

fn draw_legs(rng: &mut DetRng, spec: &ScenarioSpec, needed: f64) -> Vec<Leg> {
    let (r_lo, r_hi) = spec.radius_range;
    // Always open with a straight so the initial steady-straight history
    // seeding is consistent with the reference.
    let mut legs = vec![Leg { kappa: 0.0, len: rng.uniform(25.0, 50.0) }];
    let mut total = legs[0].len;
    while total < needed {
        match rng.below(4) {
            0 => legs.push(Leg { kappa: 0.0, len: rng.uniform(20.0, 80.0) }),
            1 => {
                let r = rng.uniform(r_lo, r_hi);
                let sign = if rng.chance(0.5) { 1.0 } else { -1.0 };
                let sweep = rng.uniform(0.4, 1.2);
                legs.push(Leg { kappa: sign / r, len: r * sweep });
            }
            2 => {
                let r = rng.uniform(r_lo, r_hi);
                let sign = if rng.chance(0.5) { 1.0 } else { -1.0 };
                let sweep = rng.uniform(0.5, 1.0);
                legs.push(Leg { kappa: sign / r, len: r * sweep });
                legs.push(Leg { kappa: -sign / r, len: r * sweep });
            }
            _ => {
                let r = rng.uniform(r_lo, (r_lo * 3.0).min(r_hi));
                let sign = if rng.chance(0.5) { 1.0 } else { -1.0 };
                legs.push(Leg { kappa: sign / r, len: core::f64::consts::PI * r });
            }
        }
        total = legs.iter().map(|l| l.len).sum();
    }
    legs
}

/// Pose/curvature/speed grid over arclength, `GRID_DS` apart.
struct PathGrid {
    x: Vec<f64>,
    y: Vec<f64>,
    phi: Vec<f64>,
    kappa: Vec<f64>,
    v: Vec<f64>,
}

impl PathGrid {
    fn build(legs: &[Leg], spec: &ScenarioSpec, v_start: f64) -> Self {
        let total: f64 = legs.iter().map(|l| l.len).sum();
        let n = (total / GRID_DS) as usize;

        // Curvature per node from the leg layout.
        let mut kappa = Vec::with_capacity(n + 1);
        let mut leg_idx = 0;
        let mut leg_end = legs[0].len;
        for j in 0..=n {
            let s = j as f64 * GRID_DS;
            while s >= leg_end && leg_idx + 1 < legs.len() {
                leg_idx += 1;
                leg_end += legs[leg_idx].len;
            }
            kappa.push(legs[leg_idx].kappa);
        }

        // Pose by midpoint integration of the heading.
        let (mut x, mut y, mut phi) =
            (Vec::with_capacity(n + 1), Vec::with_capacity(n + 1), Vec::with_capacity(n + 1));
        let (mut cx, mut cy, mut cphi) = (0.0, 0.0, 0.0);
        for &kap in &kappa {
            x.push(cx);
            y.push(cy);
            phi.push(cphi);
            let mid = cphi + 0.5 * kap * GRID_DS;
            cx += mid.cos() * GRID_DS;
            cy += mid.sin() * GRID_DS;
            cphi += kap * GRID_DS;
        }

        // Speed limit from lateral acceleration, then backward/forward
        // passes so the plan never needs more than a_long_max to follow.
        let mut v: Vec<f64> = kappa
            .iter()
            .map(|k| {
                let curve = if k.abs() < 1e-12 {
                    f64::INFINITY
                } else {
                    LAT_SAFETY * (spec.a_lat_max / k.abs()).sqrt()
                };
                spec.v_max.min(curve)
            })
            .collect();
        for j in (0..n).rev() {
            let reach = (v[j + 1] * v[j + 1] + 2.0 * spec.a_long_max * GRID_DS).sqrt();
            v[j] = v[j].min(reach);
        }
        v[0] = v[0].min(v_start);
        for j in 0..n {
            let reach = (v[j] * v[j] + 2.0 * spec.a_long_max * GRID_DS).sqrt();
            v[j + 1] = v[j + 1].min(reach);
        }

        Self { x, y, phi, kappa, v }
    }

    /// Pose and speed at arclength `s` (clamped to the grid interior).
    fn sample(&self, s: f64) -> Waypoint {
        let max_s = (self.x.len() - 1) as f64 * GRID_DS;
        let s = s.clamp(0.0, max_s - 1e-9);
        let j = (s / GRID_DS) as usize;
        let r = s - j as f64 * GRID_DS;
        let mid = self.phi[j] + 0.5 * self.kappa[j] * r;
        let frac = r / GRID_DS;
        Waypoint {
            x: self.x[j] + mid.cos() * r,
            y: self.y[j] + mid.sin() * r,
            phi: wrap_angle(self.phi[j] + self.kappa[j] * r).expect("finite by construction"),
            v: self.v[j] * (1.0 - frac) + self.v[j + 1] * frac,
        }
    }
}

/// Generates `count` scenarios deterministically from `(seed, index)`
/// substreams.
pub fn generate_scenarios(seed: u64, count: usize, spec: &ScenarioSpec) -> Result<Vec<Scenario>> {
    if count == 0 {
        return Err(Error::InvalidParam("scenario count must be >= 1".into()));
    }
    spec.validate()?;
    (0..count)
        .map(|i| generate_one(&mut DetRng::substream(seed, i as u64), spec))
        .collect()
}

fn generate_one(rng: &mut DetRng, spec: &ScenarioSpec) -> Result<Scenario> {
    // Enough path for the worst case: full speed for the whole horizon,
    // plus braking distance and a grid-edge margin.
    let steps = spec.horizon + 1;
    let needed = spec.v_max * steps as f64 * CONTROL_DT
        + spec.v_max * spec.v_max / (2.0 * spec.a_long_max)
        + 20.0;
    let legs = draw_legs(rng, spec, needed);
    let v_start = rng.uniform(0.5 * spec.v_max, 0.9 * spec.v_max);
    let grid = PathGrid::build(&legs, spec, v_start);

    // March along the profile at the control rate; the waypoint at step t
    // is where the reference vehicle sits after t control periods.
    let mut waypoints = Vec::with_capacity(steps);
    let mut s = 0.0;
    for _ in 0..steps {
        let w = grid.sample(s);
        s += w.v * CONTROL_DT;
        waypoints.push(w);
    }

    Scenario::new(
        waypoints,
        spec.half_width,
        spec.goal_radius,
        spec.horizon,
        spec.surface.clone(),
        spec.start_noise,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(sc: &Scenario) -> Vec<u64> {
        sc.waypoints
            .iter()
            .flat_map(|w| [w.x, w.y, w.phi, w.v])
            .map(f64::to_bits)
            .collect()
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = ScenarioSpec::default();
        let a = generate_scenarios(42, 8, &spec).unwrap();
        let b = generate_scenarios(42, 8, &spec).unwrap();
        for (sa, sb) in a.iter().zip(&b) {
            assert_eq!(bits(sa), bits(sb));
        }
        let c = generate_scenarios(43, 8, &spec).unwrap();
        assert_ne!(bits(&a[0]), bits(&c[0]), "different seeds must differ");
    }

    #[test]
    fn speed_profiles_respect_the_lateral_cap() {
        let spec = ScenarioSpec::default();
        let scenarios = generate_scenarios(7, 40, &spec).unwrap();
        for sc in &scenarios {
            let wps = sc.waypoints();
            for i in 0..wps.len() - 1 {
                let ds = (wps[i + 1].x - wps[i].x).hypot(wps[i + 1].y - wps[i].y);
                if ds < 1e-9 {
                    continue;
                }
                let kappa = wrap_angle(wps[i + 1].phi - wps[i].phi).unwrap().abs() / ds;
                let a_lat = wps[i].v * wps[i].v * kappa;
                assert!(
                    a_lat <= spec.a_lat_max + 1e-9,
                    "lateral accel {a_lat} exceeds cap {} at waypoint {i}",
                    spec.a_lat_max
                );
            }
        }
    }

    #[test]
    fn requested_count_is_honored() {
        let spec = ScenarioSpec { horizon: 60, ..ScenarioSpec::default() };
        let scenarios = generate_scenarios(11, 150, &spec).unwrap();
        assert_eq!(scenarios.len(), 150);
        for sc in &scenarios {
            assert_eq!(sc.waypoints().len(), 61);
            assert!(sc.horizon() <= sc.waypoints().len());
            assert!(sc.waypoints().len() > LOOKAHEAD);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let spec = ScenarioSpec { horizon: 5, ..ScenarioSpec::default() };
        assert!(spec.validate().is_err());
        let spec = ScenarioSpec { radius_range: (10.0, 10.0), ..ScenarioSpec::default() };
        assert!(spec.validate().is_err());
        let spec = ScenarioSpec {
            surface: SurfaceSpec::Stochastic { p_switch: 1.5 },
            ..ScenarioSpec::default()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn surface_schedules() {
        let mut rng = DetRng::seed(1);
        let seq = SurfaceSpec::IceFromStep(30).materialize(64, &mut rng);
        assert!(seq[..30].iter().all(|s| *s == SurfaceLabel::Asphalt));
        assert!(seq[30..].iter().all(|s| *s == SurfaceLabel::Ice));

        let seq = SurfaceSpec::Stochastic { p_switch: 0.0 }.materialize(64, &mut rng);
        assert!(seq.iter().all(|s| *s == SurfaceLabel::Asphalt));

        // A certain switch produces an asphalt prefix and an ice suffix.
        let mut r1 = DetRng::substream(9, 4);
        let seq = SurfaceSpec::Stochastic { p_switch: 1.0 }.materialize(64, &mut r1);
        let at = seq.iter().position(|s| *s == SurfaceLabel::Ice).unwrap();
        assert!(at >= 1 && seq[at..].iter().all(|s| *s == SurfaceLabel::Ice));

        // Reproducible under the same substream.
        let mut r2 = DetRng::substream(9, 4);
        let again = SurfaceSpec::Stochastic { p_switch: 1.0 }.materialize(64, &mut r2);
        assert_eq!(seq, again);
    }

    #[test]
    fn projection_advances_monotonically_along_the_reference() {
        let sc = &generate_scenarios(3, 1, &ScenarioSpec::default()).unwrap()[0];
        let mut cursor = 0;
        let mut s_prev = -1.0;
        // Walking the waypoints themselves must project onto themselves.
        for (i, w) in sc.waypoints().iter().enumerate() {
            let p = sc.project_windowed(w.x, w.y, cursor, 10, 30);
            assert!(p.dist < 1e-9, "waypoint {i} projects {} away", p.dist);
            assert!(p.s >= s_prev);
            assert!((p.s - sc.cum_s[i]).abs() < 1e-9 || i == sc.waypoints().len() - 1);
            cursor = p.seg;
            s_prev = p.s;
        }
    }

    #[test]
    fn explicit_schedule_must_cover_horizon() {
        let sc = generate_scenarios(3, 1, &ScenarioSpec::default()).unwrap()[0].clone();
        let short = SurfaceSpec::Explicit(vec![SurfaceLabel::Asphalt; 10]);
        let err = Scenario::new(
            sc.waypoints().to_vec(),
            3.0,
            2.0,
            sc.horizon(),
            short,
            StartNoise::default(),
        );
        assert!(err.is_err());
    }
}
