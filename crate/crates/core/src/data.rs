//! Synthetic log generation from a ground-truth plant and the preprocessing
//! pipeline: gap segmentation, resampling to the control rate, median and
//! moving-average filtering, fixed-length segmentation, and splitting.
//!
//! The ground-truth plant is the physical vehicle model plus a small analytic
//! residual on the dynamic states (quadratic drag, steering saturation, yaw
//! damping) and optional per-step process noise, so the learning stack has
//! something real to recover that the physical-only fit cannot express.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    euler_step, normalize_trig, phys_derivative, ControlInput, PhysicalParams, State,
};
use crate::error::{Error, Result};
use crate::learning::Transition;
use crate::path::wrap_angle;
use crate::rng::{rng_from, splitmix64, stream_seed, DOMAIN_EXCITE, DOMAIN_PLANT};

/// Nominal logging rate of the recorded datasets.
pub const LOG_RATE_HZ: f64 = 15.0;

/// One recorded row: pose with wrapped heading angle, world-frame velocities,
/// yaw rate, and the applied inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub vx: f64,
    pub vy: f64,
    pub r: f64,
    pub a: f64,
    pub delta: f64,
}

/// A time-stamped log at ~15 Hz, possibly with recording gaps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawLog {
    pub samples: Vec<RawSample>,
}

impl RawLog {
    pub fn validate(&self) -> Result<()> {
        for w in self.samples.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(Error::Preprocess(format!(
                    "timestamps not strictly increasing at t={}",
                    w[0].t
                )));
            }
        }
        for s in &self.samples {
            let vals = [s.t, s.x, s.y, s.psi, s.vx, s.vy, s.r, s.a, s.delta];
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::Preprocess(format!("non-finite sample at t={}", s.t)));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Ground-truth plant
// ---------------------------------------------------------------------------

/// Analytic dynamics the physical model deliberately does not capture; acts
/// only on (vX, vY, r), leaving the kinematic rows exact.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct InjectedResidual {
    /// quadratic drag coefficient: force −c·V·(vX, vY)
    pub drag_quad: f64,
    /// cubic steering loss: yaw torque −c·k_delta·V·δ³
    pub steer_sat_cubic: f64,
    /// quadratic yaw damping: −c·r·|r|
    pub yaw_damp_quad: f64,
}

impl InjectedResidual {
    pub const ZERO: InjectedResidual =
        InjectedResidual { drag_quad: 0.0, steer_sat_cubic: 0.0, yaw_damp_quad: 0.0 };

    pub fn is_zero(&self) -> bool {
        self.drag_quad == 0.0 && self.steer_sat_cubic == 0.0 && self.yaw_damp_quad == 0.0
    }

    /// Extra derivative on (vX, vY, r).
    pub fn deriv(&self, x: &State, u: &ControlInput, phys: &PhysicalParams) -> [f64; 3] {
        let v = x.speed();
        let d_rad = u.delta.to_radians();
        [
            -self.drag_quad * v * x.vx,
            -self.drag_quad * v * x.vy,
            -self.steer_sat_cubic * phys.k_delta * v * d_rad.powi(3)
                - self.yaw_damp_quad * x.r * x.r.abs(),
        ]
    }
}

impl Default for InjectedResidual {
    fn default() -> Self {
        InjectedResidual { drag_quad: 0.8, steer_sat_cubic: 0.20, yaw_damp_quad: 0.5 }
    }
}

/// The simulated vehicle that stands in for the real forklift: physical core,
/// injected residual, and per-step process noise on (vX, vY, r).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GroundTruthPlant {
    pub phys: PhysicalParams,
    pub residual: InjectedResidual,
    pub noise_std: [f64; 3],
    /// integration and logging step (s)
    pub h_log: f64,
}

impl Default for GroundTruthPlant {
    fn default() -> Self {
        GroundTruthPlant {
            phys: PhysicalParams { k_a: 0.00175, k_v: 0.7, k_delta: 1.6, k_r: 1.5 },
            residual: InjectedResidual::default(),
            noise_std: [1e-4, 1e-4, 2e-4],
            h_log: 1.0 / LOG_RATE_HZ,
        }
    }
}

impl GroundTruthPlant {
    pub fn validate(&self) -> Result<()> {
        self.phys.validate()?;
        if !(self.h_log > 0.0) {
            return Err(Error::Config("plant step size must be positive".into()));
        }
        let res = [
            self.residual.drag_quad,
            self.residual.steer_sat_cubic,
            self.residual.yaw_damp_quad,
        ];
        if res.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::Config("residual coefficients must be finite and ≥ 0".into()));
        }
        if self.noise_std.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Config("noise std must be finite and ≥ 0".into()));
        }
        Ok(())
    }

    /// Advance one step. With zero residual and no noise this is exactly
    /// `euler_step` followed by heading renormalization.
    pub fn step(&self, x: &State, u: &ControlInput, noise: Option<&mut ChaCha8Rng>) -> State {
        let mut next = if self.residual.is_zero() {
            euler_step(x, u, &self.phys, self.h_log)
        } else {
            let d = phys_derivative(x, u, &self.phys);
            let e = self.residual.deriv(x, u, &self.phys);
            State {
                x: x.x + self.h_log * d[0],
                y: x.y + self.h_log * d[1],
                s: x.s + self.h_log * d[2],
                c: x.c + self.h_log * d[3],
                vx: x.vx + self.h_log * (d[4] + e[0]),
                vy: x.vy + self.h_log * (d[5] + e[1]),
                r: x.r + self.h_log * (d[6] + e[2]),
            }
        };
        if let Some(rng) = noise {
            if self.noise_std.iter().any(|s| *s > 0.0) {
                let mut draw = |std: f64| std * rng.sample::<f64, _>(rand_distr::StandardNormal);
                next.vx += draw(self.noise_std[0]);
                next.vy += draw(self.noise_std[1]);
                next.r += draw(self.noise_std[2]);
            }
        }
        normalize_trig(&next).expect("plant heading cannot degenerate from a unit start")
    }
}

/// Roll the plant from `x0` under the given per-step inputs and record every
/// state, starting at `t0`. Row k holds the state at t_k and the input
/// applied over [t_k, t_{k+1}).
pub fn simulate_log(
    plant: &GroundTruthPlant,
    x0: State,
    inputs: &[ControlInput],
    t0: f64,
    mut noise: Option<&mut ChaCha8Rng>,
) -> RawLog {
    let mut samples = Vec::with_capacity(inputs.len());
    let mut x = x0;
    for (k, u) in inputs.iter().enumerate() {
        samples.push(RawSample {
            t: t0 + k as f64 * plant.h_log,
            x: x.x,
            y: x.y,
            psi: x.yaw(),
            vx: x.vx,
            vy: x.vy,
            r: x.r,
            a: u.a,
            delta: u.delta,
        });
        x = plant.step(&x, u, noise.as_deref_mut());
    }
    RawLog { samples }
}

/// Smooth pseudo-random excitation: piecewise-constant targets tracked
/// through a rate-limited first-order lag, clamped to the actuator ranges.
fn excitation_inputs(n: usize, h: f64, rng: &mut ChaCha8Rng) -> Vec<ControlInput> {
    const A_RANGE: (f64, f64) = (0.0, 100.0);
    const D_RANGE: (f64, f64) = (-65.0, 65.0);
    // per-second slew limits matching the actuator rate constraints
    const A_RATE: f64 = 32.0;
    const D_RATE: f64 = 100.0;
    let hold_a = (3.0 / h).round() as usize; // new accelerator target every ~3 s
    let hold_d = (2.5 / h).round() as usize; // new steering target every ~2.5 s

    let mut out = Vec::with_capacity(n);
    let mut a = 30.0f64;
    let mut d = 0.0f64;
    let (mut a_target, mut d_target) = (a, d);
    for k in 0..n {
        if k % hold_a == 0 {
            a_target = rng.gen_range(10.0..95.0);
        }
        if k % hold_d == 0 {
            d_target = rng.gen_range(-60.0..60.0);
        }
        let pull_a = (0.12 * (a_target - a)).clamp(-A_RATE * h, A_RATE * h);
        let pull_d = (0.12 * (d_target - d)).clamp(-D_RATE * h, D_RATE * h);
        a = (a + pull_a).clamp(A_RANGE.0, A_RANGE.1);
        d = (d + pull_d).clamp(D_RANGE.0, D_RANGE.1);
        out.push(ControlInput::new(a, d));
    }
    out
}

/// Generate `n_logs` independent logs of the given duration under smooth
/// random excitation, with a handful of recording gaps > 0.1 s dropped from
/// each log. Fully deterministic in `seed`; excitation and process noise use
/// separate tagged streams.
pub fn generate_logs(
    plant: &GroundTruthPlant,
    n_logs: usize,
    duration: f64,
    seed: u64,
) -> Result<Vec<RawLog>> {
    plant.validate()?;
    if !(duration > 5.0) {
        return Err(Error::Config(format!("log duration must exceed 5 s, got {duration}")));
    }
    let n = (duration * LOG_RATE_HZ).floor() as usize + 1;
    let mut logs = Vec::with_capacity(n_logs);
    for l in 0..n_logs {
        let mut rng_e = rng_from(stream_seed(seed ^ DOMAIN_EXCITE, l as u64, 0, 0));
        let mut rng_p = rng_from(stream_seed(seed ^ DOMAIN_PLANT, l as u64, 0, 0));

        // draw order is frozen: initial state, gap windows, then excitation
        let psi0: f64 = rng_e.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let x0 = State::at_pose(
            rng_e.gen_range(-2.0..2.0),
            rng_e.gen_range(-2.0..2.0),
            psi0,
            rng_e.gen_range(0.02..0.2),
        );
        let n_gaps = rng_e.gen_range(4..=8usize);
        let gaps: Vec<(f64, f64)> = (0..n_gaps)
            .map(|_| {
                let center = rng_e.gen_range(0.05..0.95) * duration;
                let width = rng_e.gen_range(0.12..0.8);
                (center - width / 2.0, center + width / 2.0)
            })
            .collect();

        let inputs = excitation_inputs(n, plant.h_log, &mut rng_e);
        let noise = if plant.noise_std.iter().any(|s| *s > 0.0) { Some(&mut rng_p) } else { None };
        let mut log = simulate_log(plant, x0, &inputs, 0.0, noise);
        let last = log.samples.len() - 1;
        log.samples = log
            .samples
            .into_iter()
            .enumerate()
            .filter(|(k, s)| {
                *k == 0 || *k == last || !gaps.iter().any(|(lo, hi)| s.t > *lo && s.t < *hi)
            })
            .map(|(_, s)| s)
            .collect();
        log.validate()?;
        logs.push(log);
    }
    Ok(logs)
}

/// Noiseless transitions that satisfy the discrete speed and yaw-rate laws
/// exactly (zero sideslip by construction): the identification oracle input.
/// General simulated trajectories carry O(h²) sideslip coupling in the speed
/// readout, so exact-recovery checks use this generator instead.
pub fn exact_identification_transitions(
    p: &PhysicalParams,
    h: f64,
    n: usize,
    seed: u64,
) -> Vec<Transition> {
    let mut st = seed;
    let mut unif = || {
        st = splitmix64(st);
        st as f64 / u64::MAX as f64
    };
    let mut v = 0.05;
    let mut r = 0.02;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let a = unif() * 90.0;
        let delta = (unif() - 0.5) * 110.0;
        let v_next = v + h * (p.k_a * a - p.k_v * v);
        let r_next = r + h * (p.k_delta * v * delta.to_radians() - p.k_r * r);
        let mk = |vv: f64, rr: f64| State { x: 0.0, y: 0.0, s: 0.0, c: 1.0, vx: vv, vy: 0.0, r: rr };
        out.push(Transition {
            x: mk(v, r),
            u: ControlInput::new(a, delta),
            x_next: mk(v_next, r_next),
        });
        v = v_next;
        r = r_next;
    }
    out
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

/// A contiguous, uniformly-sampled, filtered span of data ready for learning.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub states: Vec<State>,
    pub inputs: Vec<ControlInput>,
    pub h: f64,
    pub t0: f64,
}

impl Segment {
    pub fn new(states: Vec<State>, inputs: Vec<ControlInput>, h: f64) -> Self {
        assert_eq!(states.len(), inputs.len(), "one input per sample");
        assert!(states.len() >= 2, "a segment needs at least two samples");
        assert!(h > 0.0);
        Segment { states, inputs, h, t0: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// target resampling step (s)
    pub h: f64,
    /// split raw logs where the time difference exceeds this (s)
    pub gap_split: f64,
    /// samples per segment
    pub segment_len: usize,
    /// seed for the shuffle that precedes the split
    pub split_seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { h: 0.0667, gap_split: 0.1, segment_len: 75, split_seed: 7 }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.gap_split > 0.0) {
            return Err(Error::Config("preprocess steps must be positive".into()));
        }
        if self.segment_len < 2 {
            return Err(Error::Config("segments need at least 2 samples".into()));
        }
        Ok(())
    }
}

/// Train/val/test segments plus bookkeeping from the preprocessing run.
#[derive(Clone, Debug, Default)]
pub struct DataSplits {
    pub train: Vec<Segment>,
    pub val: Vec<Segment>,
    pub test: Vec<Segment>,
    /// continuous intervals found after gap splitting
    pub n_intervals: usize,
    /// intervals discarded for being shorter than the largest filter window
    pub dropped_short: usize,
}

impl DataSplits {
    pub fn all_counts(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

/// Median filter with truncated (shrinking) windows at the boundaries; the
/// median of an even count is the mean of the two central values. Output
/// length equals input length.
fn median_filter(xs: &[f64], w: usize) -> Vec<f64> {
    debug_assert!(w % 2 == 1 && w <= 9);
    let half = w / 2;
    let mut buf = [0.0f64; 9];
    xs.iter()
        .enumerate()
        .map(|(i, _)| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(xs.len() - 1);
            let n = hi - lo + 1;
            buf[..n].copy_from_slice(&xs[lo..=hi]);
            buf[..n].sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            if n % 2 == 1 {
                buf[n / 2]
            } else {
                0.5 * (buf[n / 2 - 1] + buf[n / 2])
            }
        })
        .collect()
}

/// Moving average with truncated windows at the boundaries.
fn moving_average(xs: &[f64], w: usize) -> Vec<f64> {
    debug_assert!(w % 2 == 1);
    let half = w / 2;
    xs.iter()
        .enumerate()
        .map(|(i, _)| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(xs.len() - 1);
            xs[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Cumulative unwrap: each step moves by the wrapped increment, so the result
/// is continuous and congruent to the input mod 2π.
fn unwrap_angles(psi: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(psi.len());
    let mut acc = match psi.first() {
        Some(p) => *p,
        None => return out,
    };
    out.push(acc);
    for w in psi.windows(2) {
        acc += wrap_angle(w[1] - w[0]);
        out.push(acc);
    }
    out
}

/// Linear interpolation of one channel onto the uniform grid t0 + j·h.
fn resample_channel(ts: &[f64], vals: &[f64], grid: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    let mut j = 0usize;
    for &tg in grid {
        while j + 2 < ts.len() && ts[j + 1] < tg {
            j += 1;
        }
        let (t0, t1) = (ts[j], ts[j + 1]);
        let w = ((tg - t0) / (t1 - t0)).clamp(0.0, 1.0);
        out.push(vals[j] + w * (vals[j + 1] - vals[j]));
    }
    out
}

const MEDIAN_WINDOW: usize = 3;
const MA_WINDOW_POSE: usize = 9; // X, Y, ψ
const MA_WINDOW_VEL: usize = 7; // vX, vY, r
const MA_WINDOW_INPUT: usize = 5; // a, δ

/// Largest filter window: intervals shorter than this are dropped.
pub const MIN_INTERVAL_SAMPLES: usize = MA_WINDOW_POSE;

/// Full preprocessing pipeline: gap splitting, heading unwrap, resampling,
/// per-signal median + moving-average filtering, (s, c) conversion,
/// fixed-length segmentation, seeded shuffle, and the 70:15:15 split
/// (train gets floor(0.70·n); the rest is halved, odd remainder to val).
pub fn preprocess(logs: &[RawLog], cfg: &PreprocessConfig) -> Result<DataSplits> {
    cfg.validate()?;
    if logs.is_empty() {
        return Err(Error::Preprocess("no logs to preprocess".into()));
    }
    let mut segments: Vec<Segment> = Vec::new();
    let mut n_intervals = 0usize;
    let mut dropped_short = 0usize;

    for log in logs {
        log.validate()?;
        // (1) split at gaps
        let mut start = 0usize;
        let mut intervals: Vec<&[RawSample]> = Vec::new();
        for k in 1..log.samples.len() {
            if log.samples[k].t - log.samples[k - 1].t > cfg.gap_split {
                intervals.push(&log.samples[start..k]);
                start = k;
            }
        }
        intervals.push(&log.samples[start..]);

        for interval in intervals {
            n_intervals += 1;
            if interval.len() < 2 {
                dropped_short += 1;
                continue;
            }
            let ts: Vec<f64> = interval.iter().map(|s| s.t).collect();
            let span = ts[ts.len() - 1] - ts[0];
            // (2) uniform grid; tiny slack keeps exactly-aligned endpoints
            let n_grid = ((span / cfg.h) + 1e-9).floor() as usize + 1;
            if n_grid < MIN_INTERVAL_SAMPLES {
                dropped_short += 1;
                continue;
            }
            let grid: Vec<f64> = (0..n_grid).map(|j| ts[0] + j as f64 * cfg.h).collect();

            let col = |f: fn(&RawSample) -> f64| -> Vec<f64> {
                interval.iter().map(f).collect()
            };
            let psi_u = unwrap_angles(&col(|s| s.psi));
            let rs = |vals: &[f64]| resample_channel(&ts, vals, &grid);
            let filt = |vals: Vec<f64>, ma: usize| -> Vec<f64> {
                moving_average(&median_filter(&vals, MEDIAN_WINDOW), ma)
            };

            // (3) resample then filter each signal with its window pair
            let x = filt(rs(&col(|s| s.x)), MA_WINDOW_POSE);
            let y = filt(rs(&col(|s| s.y)), MA_WINDOW_POSE);
            let psi = filt(rs(&psi_u), MA_WINDOW_POSE);
            let vx = filt(rs(&col(|s| s.vx)), MA_WINDOW_VEL);
            let vy = filt(rs(&col(|s| s.vy)), MA_WINDOW_VEL);
            let r = filt(rs(&col(|s| s.r)), MA_WINDOW_VEL);
            let a = filt(rs(&col(|s| s.a)), MA_WINDOW_INPUT);
            let delta = filt(rs(&col(|s| s.delta)), MA_WINDOW_INPUT);

            // (4) heading to (s, c), renormalized to the unit circle;
            // (5) fixed-length chunks, remainder dropped
            let mut chunk_start = 0usize;
            while chunk_start + cfg.segment_len <= n_grid {
                let rng_idx = chunk_start..chunk_start + cfg.segment_len;
                let mut states = Vec::with_capacity(cfg.segment_len);
                let mut inputs = Vec::with_capacity(cfg.segment_len);
                for j in rng_idx {
                    let (mut s, mut c) = (psi[j].sin(), psi[j].cos());
                    let norm = s.hypot(c);
                    s /= norm;
                    c /= norm;
                    states.push(State { x: x[j], y: y[j], s, c, vx: vx[j], vy: vy[j], r: r[j] });
                    inputs.push(ControlInput::new(a[j], delta[j]));
                }
                let mut seg = Segment::new(states, inputs, cfg.h);
                seg.t0 = grid[chunk_start];
                segments.push(seg);
                chunk_start += cfg.segment_len;
            }
        }
    }

    // (6) seeded shuffle, then deterministic split by position
    let mut rng = rng_from(cfg.split_seed);
    for i in (1..segments.len()).rev() {
        let j = rng.gen_range(0..=i);
        segments.swap(i, j);
    }
    let n = segments.len();
    let n_train = (0.70 * n as f64).floor() as usize;
    let rest = n - n_train;
    let n_test = rest / 2;
    let test = segments.split_off(n - n_test);
    let val = segments.split_off(n_train);
    Ok(DataSplits { train: segments, val, test, n_intervals, dropped_short })
}

// ---------------------------------------------------------------------------
// CSV I/O
// ---------------------------------------------------------------------------

pub const RAW_LOG_HEADER: &str = "t,X,Y,psi,vX,vY,r,a,delta";
pub const SEGMENT_HEADER: &str = "t,X,Y,s,c,vX,vY,r,a,delta";

/// Write a raw log; floats use the shortest round-trippable representation.
pub fn write_raw_log_csv<W: Write>(log: &RawLog, mut w: W) -> Result<()> {
    writeln!(w, "{RAW_LOG_HEADER}")?;
    for s in &log.samples {
        writeln!(
            w,
            "{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            s.t, s.x, s.y, s.psi, s.vx, s.vy, s.r, s.a, s.delta
        )?;
    }
    Ok(())
}

fn parse_row(line: &str, n: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = line
        .split(',')
        .map(|f| f.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Preprocess(format!("bad CSV field: {e} in {line:?}")))?;
    if vals.len() != n {
        return Err(Error::Preprocess(format!("expected {n} fields, got {}", vals.len())));
    }
    Ok(vals)
}

pub fn read_raw_log_csv<R: BufRead>(r: R) -> Result<RawLog> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != RAW_LOG_HEADER {
        return Err(Error::Preprocess(format!("expected header {RAW_LOG_HEADER:?}")));
    }
    let mut log = RawLog::default();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v = parse_row(&line, 9)?;
        log.samples.push(RawSample {
            t: v[0],
            x: v[1],
            y: v[2],
            psi: v[3],
            vx: v[4],
            vy: v[5],
            r: v[6],
            a: v[7],
            delta: v[8],
        });
    }
    log.validate()?;
    Ok(log)
}

pub fn write_segment_csv<W: Write>(seg: &Segment, mut w: W) -> Result<()> {
    writeln!(w, "{SEGMENT_HEADER}")?;
    for (j, (x, u)) in seg.states.iter().zip(&seg.inputs).enumerate() {
        writeln!(
            w,
            "{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            seg.t0 + j as f64 * seg.h,
            x.x,
            x.y,
            x.s,
            x.c,
            x.vx,
            x.vy,
            x.r,
            u.a,
            u.delta
        )?;
    }
    Ok(())
}

/// Read a segment back; the step size is supplied by the caller because the
/// CSV stores absolute times.
pub fn read_segment_csv<R: BufRead>(r: R, h: f64) -> Result<Segment> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != SEGMENT_HEADER {
        return Err(Error::Preprocess(format!("expected header {SEGMENT_HEADER:?}")));
    }
    let mut states = Vec::new();
    let mut inputs = Vec::new();
    let mut t0 = 0.0;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v = parse_row(&line, 10)?;
        if states.is_empty() {
            t0 = v[0];
        }
        states.push(State { x: v[1], y: v[2], s: v[3], c: v[4], vx: v[5], vy: v[6], r: v[7] });
        inputs.push(ControlInput::new(v[8], v[9]));
    }
    if states.len() < 2 {
        return Err(Error::Preprocess("segment CSV has fewer than 2 rows".into()));
    }
    let mut seg = Segment::new(states, inputs, h);
    seg.t0 = t0;
    Ok(seg)
}
