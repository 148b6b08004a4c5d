//! Data pipeline: scripted collection from the reference simulator, 10 Hz
//! subsampling, history-window construction, normalization, and
//! trajectory-level train/validation splits.
//!
//! Collection runs on a long straight corridor with optional ice bands laid
//! across it, so the arclength projection (and therefore the surface under
//! the car) stays well-defined even through U-turns. Each log gets its own
//! seeded command profile and band layout.

use crate::error::{Error, Result};
use crate::refsim::{RefSim, RefSimParams, SUBSTEPS};
use crate::rng::DetRng;
use crate::track::Track;
use crate::vehicle::{delta_between, Action, BodyDelta, SurfaceLabel, VehicleState};
use alloc::format;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// History length (10 Hz steps, 1.2 s).
pub const HISTORY_LEN: usize = 12;

/// Maneuver families the scripted driver can execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManeuverKind {
    Straight,
    ConstantTurn,
    SCurve,
    UTurn,
    AbruptBrake,
    SpeedSweep,
}

impl ManeuverKind {
    pub const ALL: [ManeuverKind; 6] = [
        ManeuverKind::Straight,
        ManeuverKind::ConstantTurn,
        ManeuverKind::SCurve,
        ManeuverKind::UTurn,
        ManeuverKind::AbruptBrake,
        ManeuverKind::SpeedSweep,
    ];
}

/// Whether a log's corridor is bare asphalt or striped with ice bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceRegime {
    AsphaltOnly,
    Mixed,
}

/// One scripted maneuver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManeuverSpec {
    pub kind: ManeuverKind,
    /// Length of the log, s.
    pub duration: f64,
    /// Base throttle level in [-1, 1].
    pub tau_level: f64,
    /// Steering amplitude in [-1, 1]; sign sets the initial direction.
    pub steer_amp: f64,
    /// Period of periodic steering profiles, s.
    pub period: f64,
    /// Uniform command-noise amplitude added to both channels.
    pub noise: f64,
    pub surface: SurfaceRegime,
}

impl ManeuverSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "maneuver duration {} must be positive",
                self.duration
            )));
        }
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "maneuver period {} must be positive",
                self.period
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidParam(format!("noise {} must be >= 0", self.noise)));
        }
        Ok(())
    }
}

/// Collection-time configuration shared by all logs.
#[derive(Debug, Clone)]
pub struct CollectConfig {
    pub params: RefSimParams,
    /// Corridor length, m.
    pub track_len: f64,
    /// Start arclength, m (middle of the corridor so U-turns stay inside).
    pub start_s: f64,
    /// Corridor half-width, m (wide: collection never terminates off-road).
    pub half_width: f64,
    pub mu_asphalt: f64,
    pub mu_ice: f64,
    /// Initial longitudinal speed range, m/s.
    pub v0_range: (f64, f64),
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            params: RefSimParams::default(),
            track_len: 6000.0,
            start_s: 3000.0,
            half_width: 400.0,
            mu_asphalt: 1.0,
            mu_ice: 0.15,
            v0_range: (8.0, 20.0),
        }
    }
}

/// A 200 Hz log: `states.len() = actions.len() + 1`, one surface label per
/// state. Actions are held constant over each 0.1 s control period.
#[derive(Debug, Clone, PartialEq)]
pub struct RawLog {
    pub states: Vec<VehicleState>,
    pub actions: Vec<Action>,
    pub surfaces: Vec<SurfaceLabel>,
}

/// A 10 Hz log with the same layout convention as [`RawLog`]:
/// `actions[t]` is the command held over `[t, t+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Log10Hz {
    pub states: Vec<VehicleState>,
    pub actions: Vec<Action>,
    pub surfaces: Vec<SurfaceLabel>,
}

impl Log10Hz {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// One supervised sample: H history pairs, the current action and surface,
/// and the next-step body delta as target.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSample {
    /// `(Δs_i, a_i)` for `i = t-H+1 ..= t`: the delta *ending* at step `i`
    /// paired with the action *applied* at step `i`. The last pair's action
    /// is the current action again; the duplication mirrors conditioning on
    /// `(h_t, a_t)` separately.
    pub history: Vec<(BodyDelta, Action)>,
    /// Action applied at `t` (produces the target delta).
    pub action: Action,
    /// Surface label at `t`.
    pub surface: SurfaceLabel,
    /// `Δs_{t+1}`, the body delta from `s_t` to `s_{t+1}`.
    pub target: BodyDelta,
}

/// Scripted command at 10 Hz tick `k` (before noise), as (tau, delta).
fn profile(spec: &ManeuverSpec, t: f64) -> (f64, f64) {
    let d = spec.duration;
    match spec.kind {
        ManeuverKind::Straight => {
            // Piecewise-linear throttle: level -> 0.6*level -> level.
            let half = d / 2.0;
            let frac = if t < half { t / half } else { (t - half) / half };
            let tau = if t < half {
                spec.tau_level * (1.0 - 0.4 * frac)
            } else {
                spec.tau_level * (0.6 + 0.4 * frac)
            };
            (tau, 0.0)
        }
        ManeuverKind::ConstantTurn => (spec.tau_level, spec.steer_amp),
        ManeuverKind::SCurve => {
            let delta = spec.steer_amp * (2.0 * core::f64::consts::PI * t / spec.period).sin();
            (spec.tau_level, delta)
        }
        ManeuverKind::UTurn => {
            // Steer hard through the middle half of the log.
            let delta = if t >= d * 0.25 && t < d * 0.75 { spec.steer_amp } else { 0.0 };
            (spec.tau_level, delta)
        }
        ManeuverKind::AbruptBrake => {
            let tau = if t < d * 0.6 { spec.tau_level } else { -1.0 };
            (tau, 0.0)
        }
        ManeuverKind::SpeedSweep => {
            // Throttle sweeps up then into braking; gentle weaving.
            let frac = t / d;
            let tau = if frac < 0.5 {
                0.2 + 1.6 * frac // 0.2 -> 1.0
            } else {
                1.0 - 3.0 * (frac - 0.5) // 1.0 -> -0.5
            };
            let delta =
                0.3 * spec.steer_amp * (2.0 * core::f64::consts::PI * t / spec.period).sin();
            (tau, delta)
        }
    }
}

/// Builds the per-log collection corridor: a straight track along +x with
/// seeded ice bands when the regime is mixed. One band is always placed just
/// ahead of the start so even short mixed logs cross it.
fn collection_track(spec: &ManeuverSpec, cfg: &CollectConfig, rng: &mut DetRng) -> Result<Track> {
    let n = (cfg.track_len / 100.0).ceil() as usize;
    let xy: Vec<(f64, f64)> = (0..=n).map(|i| (cfg.track_len * i as f64 / n as f64, 0.0)).collect();
    let mut bands = Vec::new();
    if spec.surface == SurfaceRegime::Mixed {
        let first = cfg.start_s + rng.uniform(20.0, 35.0);
        let len = rng.uniform(20.0, 60.0);
        bands.push((first, (first + len).min(cfg.track_len)));
        // Stripe outward in both directions.
        let mut s = first + len;
        loop {
            s += rng.uniform(60.0, 140.0);
            let l = rng.uniform(20.0, 60.0);
            if s >= cfg.track_len {
                break;
            }
            bands.push((s, (s + l).min(cfg.track_len)));
            s += l;
        }
        let mut s = first;
        loop {
            let l = rng.uniform(20.0, 60.0);
            let gap = rng.uniform(60.0, 140.0);
            if s < gap + l {
                break;
            }
            s -= gap + l;
            bands.push((s, s + l));
        }
    }
    Track::from_centerline(&xy, cfg.half_width, bands, cfg.mu_asphalt, cfg.mu_ice, false)
}

/// Runs one scripted maneuver and records the 200 Hz log.
///
/// The log is a pure function of `(spec, cfg, seed)`. Command noise, the
/// initial speed, and the ice-band layout all come from the given seed.
pub fn collect(spec: &ManeuverSpec, cfg: &CollectConfig, seed: u64) -> Result<RawLog> {
    spec.validate()?;
    let mut rng = DetRng::seed(seed);
    let track = collection_track(spec, cfg, &mut rng)?;
    let sim = RefSim::new(track, cfg.params)?;

    let steps = (spec.duration * 200.0).round() as usize;
    if steps == 0 {
        return Err(Error::InvalidParam(format!(
            "duration {} too short for one 5 ms step",
            spec.duration
        )));
    }
    let ticks = steps.div_ceil(SUBSTEPS);
    let mut commands = Vec::with_capacity(ticks);
    for k in 0..ticks {
        let (tau, delta) = profile(spec, k as f64 * 0.1);
        let tau = tau + rng.uniform(-1.0, 1.0) * spec.noise;
        let delta = delta + rng.uniform(-1.0, 1.0) * spec.noise;
        commands.push(Action::clamped(tau, delta)?);
    }

    let v0 = rng.uniform(cfg.v0_range.0, cfg.v0_range.1);
    let mut state = sim.state_on_track(cfg.start_s, 0.0, 0.0, v0)?;

    let mut log = RawLog {
        states: Vec::with_capacity(steps + 1),
        actions: Vec::with_capacity(steps),
        surfaces: Vec::with_capacity(steps + 1),
    };
    log.states.push(state.vehicle);
    log.surfaces.push(sim.surface_under(&state)?);
    for k in 0..steps {
        let action = commands[k / SUBSTEPS];
        state = sim.step(&state, action).map_err(|e| {
            Error::Diverged(format!("collection diverged at step {k} (seed {seed}): {e}"))
        })?;
        log.states.push(state.vehicle);
        log.actions.push(action);
        log.surfaces.push(sim.surface_under(&state)?);
    }
    Ok(log)
}

/// Decimates a raw log by `factor`, keeping indices 0, factor, 2·factor, …
/// The kept action at step `t` is the command held over that control period
/// (the driver holds commands for a full period, so any index in the block
/// is the same action; index `t·factor` is used).
pub fn subsample(log: &RawLog, factor: usize) -> Result<Log10Hz> {
    if factor == 0 {
        return Err(Error::InvalidParam("subsample factor must be >= 1".into()));
    }
    if log.states.is_empty() {
        return Err(Error::TooShort("cannot subsample an empty log"));
    }
    let mut out = Log10Hz { states: Vec::new(), actions: Vec::new(), surfaces: Vec::new() };
    let mut i = 0;
    while i < log.states.len() {
        out.states.push(log.states[i]);
        out.surfaces.push(log.surfaces[i]);
        i += factor;
    }
    for t in 0..out.states.len() - 1 {
        out.actions.push(log.actions[t * factor]);
    }
    Ok(out)
}

/// Number of windows a log of `n` states yields for history length `h`:
/// one per `t ∈ [h, n-2]`.
pub fn window_count(n: usize, h: usize) -> usize {
    if n >= h + 2 {
        n - 1 - h
    } else {
        0
    }
}

/// Materializes the sample anchored at time `t` (`h ≤ t ≤ len-2`).
pub fn make_sample(log: &Log10Hz, t: usize, h: usize) -> Result<TransitionSample> {
    if t < h || t + 1 >= log.states.len() {
        return Err(Error::OutOfRange(format!(
            "window anchor {t} outside [{h}, {}]",
            log.states.len().saturating_sub(2)
        )));
    }
    let mut history = Vec::with_capacity(h);
    for i in t - h + 1..=t {
        let delta = delta_between(&log.states[i - 1], &log.states[i])?;
        history.push((delta, log.actions[i]));
    }
    Ok(TransitionSample {
        history,
        action: log.actions[t],
        surface: log.surfaces[t],
        target: delta_between(&log.states[t], &log.states[t + 1])?,
    })
}

/// All samples from one 10 Hz log. Too-short logs yield an empty list.
pub fn build_windows(log: &Log10Hz, h: usize) -> Result<Vec<TransitionSample>> {
    let n = log.states.len();
    let mut out = Vec::with_capacity(window_count(n, h));
    for t in h..n.saturating_sub(1) {
        out.push(make_sample(log, t, h)?);
    }
    Ok(out)
}

/// Assigns whole logs to train/validation sides: seeded shuffle, then the
/// first `round(n·fraction)` (clamped so both sides are non-empty) go to
/// train. Splitting at log granularity prevents overlapping windows from
/// leaking across the boundary.
pub fn assign_split(n_logs: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_logs < 2 {
        return Err(Error::TooShort("split needs at least two logs"));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParam(format!(
            "train fraction {train_fraction} must be in (0, 1)"
        )));
    }
    let mut ids: Vec<usize> = (0..n_logs).collect();
    DetRng::seed(seed).shuffle(&mut ids);
    let n_train = ((n_logs as f64 * train_fraction).round() as usize).clamp(1, n_logs - 1);
    let val = ids.split_off(n_train);
    Ok((ids, val))
}

/// Per-field normalization statistics over body deltas and actions,
/// computed on the training split only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub delta_mean: [f64; 6],
    pub delta_std: [f64; 6],
    pub act_mean: [f64; 2],
    pub act_std: [f64; 2],
}

/// Standard deviations below this are treated as "no variance": the field
/// gets unit scale instead, so normalizing a degenerate component (e.g.
/// lateral drift in straight-only data) neither divides by ~zero nor blows
/// its targets up by 1/std.
pub const STD_FLOOR: f64 = 1e-8;

fn sanitize_std(s: f64) -> f64 {
    if s < STD_FLOOR {
        1.0
    } else {
        s
    }
}

impl NormStats {
    /// Identity statistics (zero mean, unit std).
    pub fn identity() -> Self {
        Self {
            delta_mean: [0.0; 6],
            delta_std: [1.0; 6],
            act_mean: [0.0; 2],
            act_std: [1.0; 2],
        }
    }

    /// Computes statistics from every consecutive-state delta and action in
    /// the given logs.
    pub fn compute(logs: &[Log10Hz], log_ids: &[usize]) -> Result<Self> {
        let mut deltas: Vec<[f64; 6]> = Vec::new();
        let mut acts: Vec<[f64; 2]> = Vec::new();
        for &id in log_ids {
            let log = &logs[id];
            for t in 1..log.states.len() {
                let d = delta_between(&log.states[t - 1], &log.states[t])?;
                deltas.push(d.as_array());
                acts.push([log.actions[t - 1].tau, log.actions[t - 1].delta]);
            }
        }
        if deltas.is_empty() {
            return Err(Error::TooShort("no transitions to compute statistics from"));
        }
        let n = deltas.len() as f64;
        let mut delta_mean = [0.0; 6];
        let mut delta_std = [0.0; 6];
        for d in &deltas {
            for (m, v) in delta_mean.iter_mut().zip(d) {
                *m += v;
            }
        }
        delta_mean.iter_mut().for_each(|m| *m /= n);
        for d in &deltas {
            for i in 0..6 {
                delta_std[i] += (d[i] - delta_mean[i]) * (d[i] - delta_mean[i]);
            }
        }
        delta_std.iter_mut().for_each(|s| *s = sanitize_std((*s / n).sqrt()));

        let mut act_mean = [0.0; 2];
        let mut act_std = [0.0; 2];
        for a in &acts {
            act_mean[0] += a[0];
            act_mean[1] += a[1];
        }
        act_mean.iter_mut().for_each(|m| *m /= n);
        for a in &acts {
            act_std[0] += (a[0] - act_mean[0]) * (a[0] - act_mean[0]);
            act_std[1] += (a[1] - act_mean[1]) * (a[1] - act_mean[1]);
        }
        act_std.iter_mut().for_each(|s| *s = sanitize_std((*s / n).sqrt()));

        Ok(Self { delta_mean, delta_std, act_mean, act_std })
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .delta_mean
            .iter()
            .chain(&self.delta_std)
            .chain(&self.act_mean)
            .chain(&self.act_std);
        for v in all {
            if !v.is_finite() {
                return Err(Error::NonFinite("normalization statistics"));
            }
        }
        if self.delta_std.iter().chain(&self.act_std).any(|s| *s <= 0.0) {
            return Err(Error::InvalidParam("normalization std must be positive".into()));
        }
        Ok(())
    }

    pub fn norm_delta(&self, d: &BodyDelta) -> [f64; 6] {
        let a = d.as_array();
        core::array::from_fn(|i| (a[i] - self.delta_mean[i]) / self.delta_std[i])
    }

    pub fn denorm_delta(&self, v: [f64; 6]) -> BodyDelta {
        BodyDelta::from_array(core::array::from_fn(|i| {
            v[i] * self.delta_std[i] + self.delta_mean[i]
        }))
    }

    pub fn norm_action(&self, a: &Action) -> [f64; 2] {
        [
            (a.tau - self.act_mean[0]) / self.act_std[0],
            (a.delta - self.act_mean[1]) / self.act_std[1],
        ]
    }
}

/// The assembled dataset: 10 Hz logs, window indices per split, and
/// normalization statistics from the training side.
#[derive(Debug, Clone)]
pub struct DynamicsDataset {
    pub logs: Vec<Log10Hz>,
    pub h: usize,
    pub norm: NormStats,
    pub train_logs: Vec<usize>,
    pub val_logs: Vec<usize>,
    /// `(log index, anchor t)` pairs; windows are materialized lazily.
    pub train_windows: Vec<(u32, u32)>,
    pub val_windows: Vec<(u32, u32)>,
    /// Master seed the collection ran under (provenance).
    pub seed: u64,
}

impl DynamicsDataset {
    /// Splits logs, enumerates windows, and computes train-side statistics.
    pub fn build(
        logs: Vec<Log10Hz>,
        h: usize,
        train_fraction: f64,
        split_seed: u64,
        provenance_seed: u64,
    ) -> Result<Self> {
        let (train_logs, val_logs) = assign_split(logs.len(), train_fraction, split_seed)?;
        let enumerate = |ids: &[usize]| -> Vec<(u32, u32)> {
            let mut out = Vec::new();
            for &id in ids {
                let n = logs[id].states.len();
                for t in h..n.saturating_sub(1) {
                    out.push((id as u32, t as u32));
                }
            }
            out
        };
        let train_windows = enumerate(&train_logs);
        let val_windows = enumerate(&val_logs);
        if train_windows.is_empty() || val_windows.is_empty() {
            return Err(Error::TooShort("a split side has no complete windows"));
        }
        let norm = NormStats::compute(&logs, &train_logs)?;
        Ok(Self { logs, h, norm, train_logs, val_logs, train_windows, val_windows, seed: provenance_seed })
    }

    /// Materializes one sample by window index pair.
    pub fn sample(&self, window: (u32, u32)) -> Result<TransitionSample> {
        make_sample(&self.logs[window.0 as usize], window.1 as usize, self.h)
    }
}
