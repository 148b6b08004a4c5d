//! Track geometry: an arclength-parameterized centerline polyline with a
//! corridor width, plus a surface map assigning ice intervals along it.
//!
//! Tracks are the shared spatial substrate: the reference simulator projects
//! onto them to find the surface under the car, the scripted driver and the
//! transfer evaluator follow them, and scenario generation slices them into
//! reference trajectories.

use crate::error::{Error, Result};
use crate::vehicle::{wrap, SurfaceLabel};
use alloc::format;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// One centerline sample: cumulative arclength, global position, tangent
/// heading, and corridor half-width at that point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub half_width: f64,
}

/// Ice intervals along the track plus per-surface friction coefficients.
/// Intervals are half-open `[start, end)` in arclength; everything outside
/// them is asphalt.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceMap {
    ice: Vec<(f64, f64)>,
    mu_asphalt: f64,
    mu_ice: f64,
    track_len: f64,
}

impl SurfaceMap {
    /// Validates and builds a surface map for a track of length `track_len`.
    pub fn new(
        mut ice: Vec<(f64, f64)>,
        mu_asphalt: f64,
        mu_ice: f64,
        track_len: f64,
    ) -> Result<Self> {
        if !(mu_asphalt.is_finite() && mu_ice.is_finite() && track_len.is_finite()) {
            return Err(Error::NonFinite("SurfaceMap"));
        }
        if !(mu_ice > 0.0 && mu_ice < mu_asphalt) {
            return Err(Error::InvalidParam(format!(
                "require 0 < mu_ice < mu_asphalt, got {mu_ice} vs {mu_asphalt}"
            )));
        }
        ice.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite interval bounds"));
        let mut prev_end = 0.0;
        for &(start, end) in &ice {
            if !(start.is_finite() && end.is_finite()) {
                return Err(Error::NonFinite("ice interval"));
            }
            if !(0.0..track_len).contains(&start) || end <= start || end > track_len {
                return Err(Error::InvalidParam(format!(
                    "ice interval [{start}, {end}) outside track [0, {track_len})"
                )));
            }
            if start < prev_end {
                return Err(Error::InvalidParam(format!(
                    "ice intervals overlap at {start}"
                )));
            }
            prev_end = end;
        }
        Ok(Self { ice, mu_asphalt, mu_ice, track_len })
    }

    /// Surface label at an arclength in `[0, track_len)`.
    pub fn surface_at(&self, s: f64) -> Result<SurfaceLabel> {
        if !s.is_finite() || s < 0.0 || s >= self.track_len {
            return Err(Error::OutOfRange(format!(
                "arclength {s} outside [0, {})",
                self.track_len
            )));
        }
        let on_ice = self.ice.iter().any(|&(a, b)| s >= a && s < b);
        Ok(if on_ice { SurfaceLabel::Ice } else { SurfaceLabel::Asphalt })
    }

    /// Friction coefficient for a surface label.
    pub fn mu_of(&self, label: SurfaceLabel) -> f64 {
        match label {
            SurfaceLabel::Asphalt => self.mu_asphalt,
            SurfaceLabel::Ice => self.mu_ice,
        }
    }

    /// Friction coefficient at an arclength.
    pub fn mu_at(&self, s: f64) -> Result<f64> {
        Ok(self.mu_of(self.surface_at(s)?))
    }

    pub fn ice_intervals(&self) -> &[(f64, f64)] {
        &self.ice
    }

    pub fn mu_asphalt(&self) -> f64 {
        self.mu_asphalt
    }

    pub fn mu_ice(&self) -> f64 {
        self.mu_ice
    }

    pub fn track_len(&self) -> f64 {
        self.track_len
    }
}

/// Result of projecting a global point onto the centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arclength of the closest centerline point.
    pub s: f64,
    /// Signed lateral offset; positive to the left of the travel direction.
    pub lateral: f64,
    /// Interpolated tangent heading at the projection.
    pub heading: f64,
    /// Index of the segment (`points[seg]..points[seg+1]`) containing it.
    pub seg: usize,
}

/// Interpolated centerline sample at a given arclength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSample {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub half_width: f64,
}

/// An arclength-parameterized track: centerline polyline, corridor width,
/// surface map, and open/closed topology. Closed tracks repeat their first
/// point as the final polyline point, so segments always cover the loop.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    points: Vec<TrackPoint>,
    surface: SurfaceMap,
    closed: bool,
}

/// Circular mean of two angles, halfway along the shorter arc from `a` to `b`.
fn mean_angle(a: f64, b: f64) -> f64 {
    wrap(a + 0.5 * wrap(b - a))
}

impl Track {
    /// Builds a track from fully specified points, validating invariants:
    /// arclength starts at zero and strictly increases, chords are nonzero,
    /// corridor widths are positive, and closed tracks return to their start.
    pub fn new(
        points: Vec<TrackPoint>,
        ice: Vec<(f64, f64)>,
        mu_asphalt: f64,
        mu_ice: f64,
        closed: bool,
    ) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::TooShort("track needs at least two points"));
        }
        for (i, p) in points.iter().enumerate() {
            if ![p.s, p.x, p.y, p.heading, p.half_width].iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("track point"));
            }
            if p.half_width <= 0.0 {
                return Err(Error::InvalidParam(format!(
                    "half_width {} at point {i} must be positive",
                    p.half_width
                )));
            }
        }
        if points[0].s != 0.0 {
            return Err(Error::InvalidParam(format!(
                "arclength must start at 0, got {}",
                points[0].s
            )));
        }
        for w in points.windows(2) {
            if w[1].s <= w[0].s {
                return Err(Error::InvalidParam(format!(
                    "arclength not strictly increasing at s={}",
                    w[0].s
                )));
            }
            let chord = (w[1].x - w[0].x).hypot(w[1].y - w[0].y);
            if chord <= 0.0 {
                return Err(Error::InvalidParam(format!(
                    "zero-length segment at s={}",
                    w[0].s
                )));
            }
        }
        if closed {
            let (first, last) = (&points[0], points.last().expect("non-empty"));
            let gap = (first.x - last.x).hypot(first.y - last.y);
            if gap > 1e-6 {
                return Err(Error::InvalidParam(format!(
                    "closed track must return to start (gap {gap} m)"
                )));
            }
        }
        let total = points.last().expect("non-empty").s;
        let surface = SurfaceMap::new(ice, mu_asphalt, mu_ice, total)?;
        Ok(Self { points, surface, closed })
    }

    /// Builds a track from a bare centerline, deriving arclength as
    /// cumulative chord length and headings from segment directions
    /// (circular-averaged at interior points, and across the seam for
    /// closed tracks).
    pub fn from_centerline(
        xy: &[(f64, f64)],
        half_width: f64,
        ice: Vec<(f64, f64)>,
        mu_asphalt: f64,
        mu_ice: f64,
        closed: bool,
    ) -> Result<Self> {
        if xy.len() < 2 {
            return Err(Error::TooShort("centerline needs at least two points"));
        }
        let mut pts: Vec<(f64, f64)> = xy.to_vec();
        if closed {
            let (fx, fy) = pts[0];
            let (lx, ly) = *pts.last().expect("non-empty");
            if (fx - lx).hypot(fy - ly) > 1e-9 {
                pts.push((fx, fy));
            }
        }
        let n = pts.len();
        // Segment directions.
        let dirs: Vec<f64> = pts
            .windows(2)
            .map(|w| (w[1].1 - w[0].1).atan2(w[1].0 - w[0].0))
            .collect();
        let mut s = 0.0;
        let mut points = Vec::with_capacity(n);
        for i in 0..n {
            if i > 0 {
                let (px, py) = pts[i - 1];
                let (qx, qy) = pts[i];
                s += (qx - px).hypot(qy - py);
            }
            let heading = if closed && (i == 0 || i == n - 1) {
                mean_angle(dirs[n - 2], dirs[0])
            } else if i == 0 {
                dirs[0]
            } else if i == n - 1 {
                dirs[n - 2]
            } else {
                mean_angle(dirs[i - 1], dirs[i])
            };
            points.push(TrackPoint { s, x: pts[i].0, y: pts[i].1, heading, half_width });
        }
        Self::new(points, ice, mu_asphalt, mu_ice, closed)
    }

    pub fn points(&self) -> &[TrackPoint] {
        &self.points
    }

    pub fn surface(&self) -> &SurfaceMap {
        &self.surface
    }

    pub fn closed(&self) -> bool {
        self.closed
    }

    pub fn total_length(&self) -> f64 {
        self.points.last().expect("validated non-empty").s
    }

    fn num_segments(&self) -> usize {
        self.points.len() - 1
    }

    /// Wraps an arclength into `[0, total_length)` for closed tracks;
    /// open tracks pass through unchanged.
    pub fn wrap_s(&self, s: f64) -> f64 {
        if self.closed {
            crate::vehicle::rem_euclid(s, self.total_length())
        } else {
            s
        }
    }

    /// Projects a global point onto one segment; returns (t, dist2).
    fn project_on_segment(&self, seg: usize, x: f64, y: f64) -> (f64, f64) {
        let p0 = &self.points[seg];
        let p1 = &self.points[seg + 1];
        let (dx, dy) = (p1.x - p0.x, p1.y - p0.y);
        let len2 = dx * dx + dy * dy;
        let t = (((x - p0.x) * dx + (y - p0.y) * dy) / len2).clamp(0.0, 1.0);
        let (px, py) = (p0.x + t * dx, p0.y + t * dy);
        let d2 = (x - px) * (x - px) + (y - py) * (y - py);
        (t, d2)
    }

    fn projection_at(&self, seg: usize, t: f64, x: f64, y: f64) -> Projection {
        let p0 = &self.points[seg];
        let p1 = &self.points[seg + 1];
        let (dx, dy) = (p1.x - p0.x, p1.y - p0.y);
        let chord = (dx * dx + dy * dy).sqrt();
        let (px, py) = (p0.x + t * dx, p0.y + t * dy);
        // Signed lateral: cross(segment direction, point - projection) / |d|.
        let lateral = (dx * (y - py) - dy * (x - px)) / chord;
        Projection {
            s: p0.s + t * (p1.s - p0.s),
            lateral,
            heading: wrap(p0.heading + t * wrap(p1.heading - p0.heading)),
            seg,
        }
    }

    /// Projects a global point onto the centerline, searching every segment.
    /// Ties break toward the lower segment index, so the result is a pure
    /// function of the inputs.
    pub fn project(&self, x: f64, y: f64) -> Projection {
        debug_assert!(x.is_finite() && y.is_finite());
        let mut best = (0usize, 0.0f64, f64::INFINITY);
        for seg in 0..self.num_segments() {
            let (t, d2) = self.project_on_segment(seg, x, y);
            if d2 < best.2 {
                best = (seg, t, d2);
            }
        }
        self.projection_at(best.0, best.1, x, y)
    }

    /// Projects searching only segments within `window` of `hint_seg`
    /// (wrapping around the seam on closed tracks). Equal to [`Self::project`]
    /// whenever the true nearest segment lies inside the window; callers that
    /// track a moving vehicle keep the hint from the previous step.
    pub fn project_windowed(&self, x: f64, y: f64, hint_seg: usize, window: usize) -> Projection {
        debug_assert!(x.is_finite() && y.is_finite());
        let n = self.num_segments();
        if 2 * window + 1 >= n {
            return self.project(x, y);
        }
        let hint = hint_seg.min(n - 1);
        let mut best = (hint, 0.0f64, f64::INFINITY);
        if self.closed {
            // Iterate a fixed wrapped range; order is deterministic.
            for k in 0..=2 * window {
                let seg = (hint + n - window + k) % n;
                let (t, d2) = self.project_on_segment(seg, x, y);
                if d2 < best.2 {
                    best = (seg, t, d2);
                }
            }
        } else {
            let lo = hint.saturating_sub(window);
            let hi = (hint + window).min(n - 1);
            for seg in lo..=hi {
                let (t, d2) = self.project_on_segment(seg, x, y);
                if d2 < best.2 {
                    best = (seg, t, d2);
                }
            }
        }
        self.projection_at(best.0, best.1, x, y)
    }

    /// Segment index containing arclength `s` (last segment for `s` = length).
    fn segment_of(&self, s: f64) -> usize {
        let idx = self.points.partition_point(|p| p.s <= s);
        idx.saturating_sub(1).min(self.num_segments() - 1)
    }

    /// Interpolated centerline sample at arclength `s`. Closed tracks wrap
    /// the query; open tracks reject queries outside `[0, total_length]`.
    pub fn sample_at(&self, s: f64) -> Result<PathSample> {
        if !s.is_finite() {
            return Err(Error::NonFinite("sample_at arclength"));
        }
        let s = self.wrap_s(s);
        if s < 0.0 || s > self.total_length() {
            return Err(Error::OutOfRange(format!(
                "arclength {s} outside [0, {}]",
                self.total_length()
            )));
        }
        let seg = self.segment_of(s);
        let p0 = &self.points[seg];
        let p1 = &self.points[seg + 1];
        let t = (s - p0.s) / (p1.s - p0.s);
        Ok(PathSample {
            x: p0.x + t * (p1.x - p0.x),
            y: p0.y + t * (p1.y - p0.y),
            heading: wrap(p0.heading + t * wrap(p1.heading - p0.heading)),
            half_width: p0.half_width + t * (p1.half_width - p0.half_width),
        })
    }

    /// Corridor half-width at arclength `s`.
    pub fn half_width_at(&self, s: f64) -> Result<f64> {
        Ok(self.sample_at(s)?.half_width)
    }

    /// Piecewise-constant curvature estimate on the segment containing `s`:
    /// wrapped heading change per unit arclength.
    pub fn curvature_at(&self, s: f64) -> Result<f64> {
        if !s.is_finite() {
            return Err(Error::NonFinite("curvature_at arclength"));
        }
        let s = self.wrap_s(s);
        if s < 0.0 || s > self.total_length() {
            return Err(Error::OutOfRange(format!(
                "arclength {s} outside [0, {}]",
                self.total_length()
            )));
        }
        let seg = self.segment_of(s);
        let p0 = &self.points[seg];
        let p1 = &self.points[seg + 1];
        Ok(wrap(p1.heading - p0.heading) / (p1.s - p0.s))
    }

    /// Surface label at arclength `s` (wrapped first on closed tracks).
    pub fn surface_at(&self, s: f64) -> Result<SurfaceLabel> {
        self.surface.surface_at(self.wrap_s(s))
    }

    /// Friction coefficient at arclength `s` (wrapped on closed tracks).
    pub fn mu_at(&self, s: f64) -> Result<f64> {
        self.surface.mu_at(self.wrap_s(s))
    }
}
