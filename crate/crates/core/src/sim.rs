//! Closed-loop experiment engine: the ground-truth plant stepped with a
//! controller's output each tick. Supports fixed-gain PID, the conventional
//! sampling planner, and the gain-space planner, at any sample budget, and
//! collects the tracking/smoothness metrics the comparison tables need.
//!
//! The plant and the controller's internal model are distinct objects by
//! construction; passing the same physics to both is an explicit
//! perfect-model ablation, not the default.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{
    mppi_pid_plan, mppi_plan, pid_step, project_in_range, signed_errors, InputConstraints,
    OptimizerConfig, PidConfig, PidGains, PidState, PlanContext, GAIN_DIM,
};
use crate::cost::CostWeights;
use crate::data::GroundTruthPlant;
use crate::dynamics::{ControlInput, State, TransitionModel};
use crate::error::{Error, Result};
use crate::path::{build_hermite_path, pid_errors_at, Pose, ReferencePath, Vec2};
use crate::rng::{rng_from, stream_seed, DOMAIN_PLANT};

// ---------------------------------------------------------------------------
// Scenario
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    FixedPid,
    Mppi,
    MppiPid,
}

impl ControllerKind {
    /// Token used in file names and summary tables.
    pub fn token(&self) -> &'static str {
        match self {
            ControllerKind::FixedPid => "fixed_pid",
            ControllerKind::Mppi => "mppi",
            ControllerKind::MppiPid => "mppi_pid",
        }
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed_pid" | "fixed-pid" | "pid" => Ok(ControllerKind::FixedPid),
            "mppi" => Ok(ControllerKind::Mppi),
            "mppi_pid" | "mppi-pid" => Ok(ControllerKind::MppiPid),
            other => Err(Error::Config(format!(
                "unknown controller '{other}' (expected fixed_pid | mppi | mppi_pid)"
            ))),
        }
    }
}

/// One closed-loop experiment: path endpoints, horizonless runtime limits,
/// the full controller parameterization, and the seed. The reference speed
/// lives in `weights.v_ref`; `v_ref_schedule` optionally overrides it as a
/// piecewise-constant function of time (pairs of (t_from, v_ref)).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Where the reference path begins.
    pub start: Pose,
    /// Where the vehicle begins; defaults to the path start.
    #[serde(default)]
    pub vehicle_start: Option<Pose>,
    pub start_speed: f64,
    pub goal: Pose,
    pub path_points: usize,
    /// Maximum run time [s]; the goal-stop criterion may end the run earlier.
    pub duration: f64,
    pub v_ref_schedule: Vec<(f64, f64)>,
    pub constraints: InputConstraints,
    pub weights: CostWeights,
    pub optimizer: OptimizerConfig,
    pub pid: PidConfig,
    pub theta0: PidGains,
    pub controller: ControllerKind,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.constraints.validate()?;
        self.weights.validate()?;
        self.optimizer.validate()?;
        if !(self.duration > 0.0) {
            return Err(Error::Config(format!("duration must be > 0, got {}", self.duration)));
        }
        if self.path_points < 2 {
            return Err(Error::Config("path needs at least 2 points".into()));
        }
        if !(self.start_speed >= 0.0 && self.start_speed.is_finite()) {
            return Err(Error::Config("start speed must be finite and ≥ 0".into()));
        }
        if !self.theta0.is_finite() {
            return Err(Error::Config("non-finite initial gains".into()));
        }
        for w in self.v_ref_schedule.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Config("v_ref schedule times must increase".into()));
            }
        }
        Ok(())
    }

    fn v_ref_at(&self, t: f64) -> f64 {
        let mut v = self.weights.v_ref;
        for &(from, vr) in &self.v_ref_schedule {
            if t + 1e-12 >= from {
                v = vr;
            } else {
                break;
            }
        }
        v
    }
}

// ---------------------------------------------------------------------------
// Run record
// ---------------------------------------------------------------------------

/// One control tick: the measured state, the applied input, tracking and
/// smoothness metrics, and planner diagnostics. Wall-clock stays out of the
/// CSV so records are byte-reproducible.
#[derive(Clone, Debug)]
pub struct Tick {
    pub t: f64,
    pub state: State,
    pub u: ControlInput,
    /// ‖[X,Y]ᵀ − p*‖ against the reference path.
    pub e_path: f64,
    pub d_a: f64,
    pub d_delta: f64,
    /// Empirical ESS per optimizer iteration (empty for fixed PID).
    pub ess: Vec<f64>,
    /// Gain vector after this tick's update (gain-space planner only).
    pub theta: Option<[f64; GAIN_DIM]>,
    /// Planning time for this tick [µs]; diagnostic only, never serialized.
    pub wall_us: f64,
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub scenario: String,
    pub controller: ControllerKind,
    pub n_samples: usize,
    pub seed: u64,
    pub h: f64,
    pub ticks: Vec<Tick>,
    /// e_path exceeded the guard radius; the run was aborted.
    pub diverged: bool,
    /// The trajectory entered the goal ball at some tick.
    pub reached_goal_ball: bool,
    /// The goal-stop criterion (10 consecutive slow in-ball ticks) fired.
    pub stopped_at_goal: bool,
}

/// Abort radius for clearly broken runs [m].
pub const DIVERGENCE_RADIUS: f64 = 10.0;
/// Consecutive slow in-ball ticks that end a run.
pub const GOAL_STOP_TICKS: usize = 10;

impl RunRecord {
    pub fn mean_e_path(&self) -> f64 {
        mean(self.ticks.iter().map(|k| k.e_path))
    }

    pub fn max_e_path(&self) -> f64 {
        self.ticks.iter().map(|k| k.e_path).fold(0.0, f64::max)
    }

    pub fn mean_d_a(&self) -> f64 {
        mean(self.ticks.iter().map(|k| k.d_a))
    }

    pub fn mean_d_delta(&self) -> f64 {
        mean(self.ticks.iter().map(|k| k.d_delta))
    }

    pub fn mean_tick_ms(&self) -> f64 {
        mean(self.ticks.iter().map(|k| k.wall_us)) / 1e3
    }

    /// File stem per the naming contract: `{scenario}_{controller}_{I}_{seed}`.
    pub fn file_stem(&self) -> String {
        format!(
            "{}_{}_{}_{}",
            self.scenario,
            self.controller.token(),
            self.n_samples,
            self.seed
        )
    }

    /// CSV with one row per tick. Column set depends on the controller:
    /// planners add `ess_*` columns, the gain-space planner adds `theta_*`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n_iter = self.ticks.iter().map(|k| k.ess.len()).max().unwrap_or(0);
        let with_theta = self.ticks.iter().any(|k| k.theta.is_some());
        let mut header =
            String::from("t,x,y,s,c,vx,vy,r,a,delta,e_path,d_a,d_delta");
        for i in 1..=n_iter {
            header.push_str(&format!(",ess_{i}"));
        }
        if with_theta {
            for i in 1..=GAIN_DIM {
                header.push_str(&format!(",theta_{i}"));
            }
        }
        writeln!(w, "{header}")?;
        for k in &self.ticks {
            let s = &k.state;
            write!(
                w,
                "{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                k.t, s.x, s.y, s.s, s.c, s.vx, s.vy, s.r, k.u.a, k.u.delta, k.e_path, k.d_a,
                k.d_delta
            )?;
            for i in 0..n_iter {
                match k.ess.get(i) {
                    Some(e) => write!(w, ",{e:?}")?,
                    None => write!(w, ",")?,
                }
            }
            if with_theta {
                match &k.theta {
                    Some(th) => {
                        for v in th {
                            write!(w, ",{v:?}")?;
                        }
                    }
                    None => write!(w, "{}", ",".repeat(GAIN_DIM))?,
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for v in it {
        s += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

// ---------------------------------------------------------------------------
// Closed loop
// ---------------------------------------------------------------------------

enum ControllerState {
    FixedPid { pid: PidState },
    Mppi { nominal: Vec<ControlInput>, u_prev: ControlInput },
    MppiPid { pid: PidState, theta: PidGains },
}

/// Run one scenario against `plant`, with the controller planning on
/// `model`. Divergence is recorded in the result, not returned as an error,
/// so batch jobs keep going.
pub fn run_scenario<M: TransitionModel>(
    s: &Scenario,
    plant: &GroundTruthPlant,
    model: &M,
) -> Result<RunRecord> {
    let mut rng = rng_from(stream_seed(s.seed ^ DOMAIN_PLANT, 0, 0, 0));
    let p0 = s.vehicle_start.unwrap_or(s.start);
    let x0 = State::at_pose(p0.x, p0.y, p0.psi, s.start_speed);
    run_leg(s, plant, model, x0, 0, &mut rng).map(|(rec, _)| rec)
}

/// Run chained legs (e.g. the two halves of an S-curve) as one logical run:
/// each leg's plant state carries into the next, controller memory and the
/// reference path reset per leg, and ticks concatenate on a common clock.
pub fn run_chain<M: TransitionModel>(
    legs: &[Scenario],
    plant: &GroundTruthPlant,
    model: &M,
) -> Result<RunRecord> {
    let first = legs.first().ok_or_else(|| Error::Config("empty scenario chain".into()))?;
    let mut rng = rng_from(stream_seed(first.seed ^ DOMAIN_PLANT, 0, 0, 0));
    let p0 = first.vehicle_start.unwrap_or(first.start);
    let mut x = State::at_pose(p0.x, p0.y, p0.psi, first.start_speed);
    let mut out: Option<RunRecord> = None;
    let mut tick0 = 0usize;
    for leg in legs {
        let (rec, x_end) = run_leg(leg, plant, model, x, tick0, &mut rng)?;
        tick0 += rec.ticks.len();
        x = x_end;
        let diverged = rec.diverged;
        match &mut out {
            None => out = Some(rec),
            Some(acc) => {
                acc.ticks.extend(rec.ticks);
                acc.diverged |= rec.diverged;
                acc.reached_goal_ball = rec.reached_goal_ball;
                acc.stopped_at_goal = rec.stopped_at_goal;
            }
        }
        if diverged {
            break;
        }
    }
    let mut rec = out.expect("at least one leg");
    rec.scenario = first.name.clone();
    Ok(rec)
}

fn run_leg<M: TransitionModel>(
    s: &Scenario,
    plant: &GroundTruthPlant,
    model: &M,
    x0: State,
    tick0: usize,
    plant_rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<(RunRecord, State)> {
    s.validate()?;
    plant.validate()?;
    let h = plant.h_log;
    if (model.step_size() - h).abs() > 1e-12 {
        return Err(Error::Config(format!(
            "step-size mismatch: plant h = {h}, model h = {}",
            model.step_size()
        )));
    }
    let path = build_hermite_path(s.start, s.goal, s.path_points)?;
    let n_ticks = (s.duration / h + 1e-9).floor() as usize;
    if n_ticks == 0 {
        return Err(Error::Config("duration shorter than one control step".into()));
    }

    let mut opt = s.optimizer;
    opt.seed = s.seed;
    let u_start = ControlInput::new(0.0, 0.0);
    if !s.constraints.contains_absolute(u_start) {
        return Err(Error::Config("zero input outside the absolute bounds".into()));
    }
    let mut ctrl = match s.controller {
        ControllerKind::FixedPid => ControllerState::FixedPid { pid: PidState::new(u_start) },
        ControllerKind::Mppi => {
            // feasible warm start: chain-project the bias input from rest
            let mut nominal = vec![s.pid.u_bias; opt.n_horizon];
            let mut prev = u_start;
            for u in nominal.iter_mut() {
                *u = project_in_range(*u, prev, &s.constraints);
                prev = *u;
            }
            ControllerState::Mppi { nominal, u_prev: u_start }
        }
        ControllerKind::MppiPid => {
            ControllerState::MppiPid { pid: PidState::new(u_start), theta: s.theta0 }
        }
    };

    let mut rec = RunRecord {
        scenario: s.name.clone(),
        controller: s.controller,
        n_samples: if s.controller == ControllerKind::FixedPid { 0 } else { opt.n_samples },
        seed: s.seed,
        h,
        ticks: Vec::with_capacity(n_ticks),
        diverged: false,
        reached_goal_ball: false,
        stopped_at_goal: false,
    };

    let goal = path.goal();
    let mut x = x0;
    let mut hint = 0usize;
    let mut slow_in_ball = 0usize;
    for k in 0..n_ticks {
        let t = (tick0 + k) as f64 * h;
        let q = path.nearest_from_hint(Vec2::new(x.x, x.y), hint);
        hint = q.k;
        let pos = Vec2::new(x.x, x.y);
        let e_path = pos.sub(q.point).norm();
        if e_path > DIVERGENCE_RADIUS {
            rec.diverged = true;
            break;
        }

        let mut weights = s.weights;
        weights.v_ref = s.v_ref_at(t);

        let started = Instant::now();
        let (u, u_before, ess, theta_now) = match &mut ctrl {
            ControllerState::FixedPid { pid } => {
                let e = signed_errors(pid_errors_at(&q, &x, weights.v_ref), &s.pid.error_signs);
                let u_before = pid.u_prev;
                let step = pid_step(&s.theta0, pid, e, &s.pid, h, &s.constraints);
                (step.u, u_before, Vec::new(), None)
            }
            ControllerState::Mppi { nominal, u_prev } => {
                let ctx = PlanContext { model, path: &path, weights, constraints: s.constraints };
                let before = *u_prev;
                let out =
                    mppi_plan(&ctx, &x, before, nominal, &opt, (tick0 + k) as u64)?;
                *u_prev = out.u;
                (out.u, before, out.ess_per_iter, None)
            }
            ControllerState::MppiPid { pid, theta } => {
                let ctx = PlanContext { model, path: &path, weights, constraints: s.constraints };
                let before = pid.u_prev;
                let out = mppi_pid_plan(&ctx, &s.pid, &x, pid, theta, &opt, (tick0 + k) as u64)?;
                (out.u, before, out.ess_per_iter, Some(theta.0))
            }
        };
        let wall_us = started.elapsed().as_secs_f64() * 1e6;

        // applied inputs must be feasible w.r.t. the previous applied input
        for d in 0..2 {
            let prev = if d == 0 { u_before.a } else { u_before.delta };
            let v = if d == 0 { u.a } else { u.delta };
            let (lo, hi) = s.constraints.interval(d, prev);
            assert!(lo <= v && v <= hi, "tick {k}: applied input {v} outside [{lo}, {hi}]");
        }

        rec.ticks.push(Tick {
            t,
            state: x,
            u,
            e_path,
            d_a: (u.a - u_before.a).abs(),
            d_delta: (u.delta - u_before.delta).abs(),
            ess,
            theta: theta_now,
            wall_us,
        });

        let in_ball = pos.sub(goal).norm() <= weights.eps_goal_pos;
        if in_ball {
            rec.reached_goal_ball = true;
        }
        if in_ball && x.speed() < weights.eps_goal_vel {
            slow_in_ball += 1;
            if slow_in_ball >= GOAL_STOP_TICKS {
                rec.stopped_at_goal = true;
                break;
            }
        } else {
            slow_in_ball = 0;
        }

        x = plant.step(&x, &u, Some(plant_rng));
    }
    Ok((rec, x))
}

// ---------------------------------------------------------------------------
// Experiment matrix
// ---------------------------------------------------------------------------

/// Aggregates for one (scenario, controller, sample-count) cell.
#[derive(Clone, Debug, Serialize)]
pub struct CellSummary {
    pub scenario: String,
    pub controller: ControllerKind,
    pub n_samples: usize,
    pub n_runs: usize,
    /// Mean over runs of the per-run mean path error [m].
    pub mean_e_path: f64,
    pub max_e_path: f64,
    pub mean_d_a: f64,
    pub mean_d_delta: f64,
    /// Fraction of runs whose trajectory entered the goal ball.
    pub completion_rate: f64,
    pub diverged_runs: usize,
    /// Mean planning time per tick [ms]; timing metadata, varies run to run.
    pub mean_tick_ms: f64,
}

/// A scenario is either a single leg or a chain of legs run back to back.
#[derive(Clone, Debug)]
pub struct ScenarioSpec {
    pub legs: Vec<Scenario>,
}

impl ScenarioSpec {
    pub fn name(&self) -> &str {
        &self.legs[0].name
    }
}

/// Run every (scenario, controller, samples, seed) combination and aggregate
/// per cell. Cells run concurrently; record order is the deterministic
/// cell-major, seed-minor enumeration order regardless of scheduling. The
/// fixed-gain controller ignores the sample budget, so it contributes one
/// cell (labeled I = 0) instead of one per budget.
pub fn run_matrix<M: TransitionModel + Sync>(
    scenarios: &[ScenarioSpec],
    controllers: &[ControllerKind],
    sample_counts: &[usize],
    seeds: &[u64],
    plant: &GroundTruthPlant,
    model: &M,
    parallel_cells: bool,
) -> Result<(Vec<RunRecord>, Vec<CellSummary>)> {
    if seeds.is_empty() || sample_counts.is_empty() || scenarios.is_empty() {
        return Err(Error::Config("matrix needs scenarios, sample counts, and seeds".into()));
    }
    let mut jobs: Vec<(usize, ControllerKind, usize, u64)> = Vec::new();
    for (si, _) in scenarios.iter().enumerate() {
        for &ctrl in controllers {
            let budgets: &[usize] =
                if ctrl == ControllerKind::FixedPid { &sample_counts[..1] } else { sample_counts };
            for &n_samples in budgets {
                for &seed in seeds {
                    jobs.push((si, ctrl, n_samples, seed));
                }
            }
        }
    }

    let run_job = |&(si, ctrl, n_samples, seed): &(usize, ControllerKind, usize, u64)| {
        let spec = &scenarios[si];
        let legs: Vec<Scenario> = spec
            .legs
            .iter()
            .map(|leg| {
                let mut l = leg.clone();
                l.controller = ctrl;
                l.optimizer.n_samples = n_samples;
                l.seed = seed;
                l
            })
            .collect();
        run_chain(&legs, plant, model)
    };

    let records: Vec<RunRecord> = if parallel_cells {
        jobs.par_iter().map(run_job).collect::<Result<_>>()?
    } else {
        jobs.iter().map(run_job).collect::<Result<_>>()?
    };

    // aggregate in enumeration order
    let mut summaries: Vec<CellSummary> = Vec::new();
    for (ji, rec) in records.iter().enumerate() {
        let (si, ctrl, n_samples, _) = jobs[ji];
        let label_samples = if ctrl == ControllerKind::FixedPid { 0 } else { n_samples };
        let found = summaries.iter_mut().find(|c| {
            c.scenario == scenarios[si].name()
                && c.controller == ctrl
                && c.n_samples == label_samples
        });
        let cell = match found {
            Some(c) => c,
            None => {
                summaries.push(CellSummary {
                    scenario: scenarios[si].name().to_string(),
                    controller: ctrl,
                    n_samples: label_samples,
                    n_runs: 0,
                    mean_e_path: 0.0,
                    max_e_path: 0.0,
                    mean_d_a: 0.0,
                    mean_d_delta: 0.0,
                    completion_rate: 0.0,
                    diverged_runs: 0,
                    mean_tick_ms: 0.0,
                });
                summaries.last_mut().unwrap()
            }
        };
        cell.n_runs += 1;
        cell.mean_e_path += rec.mean_e_path();
        cell.max_e_path = cell.max_e_path.max(rec.max_e_path());
        cell.mean_d_a += rec.mean_d_a();
        cell.mean_d_delta += rec.mean_d_delta();
        cell.completion_rate += if rec.reached_goal_ball { 1.0 } else { 0.0 };
        cell.diverged_runs += rec.diverged as usize;
        cell.mean_tick_ms += rec.mean_tick_ms();
    }
    for c in &mut summaries {
        let n = c.n_runs as f64;
        c.mean_e_path /= n;
        c.mean_d_a /= n;
        c.mean_d_delta /= n;
        c.completion_rate /= n;
        c.mean_tick_ms /= n;
    }
    Ok((records, summaries))
}

/// Summary CSV, one row per cell. Timing is excluded so the file is
/// byte-reproducible; it lives in the JSON summary instead.
pub fn write_summary_csv<W: Write>(cells: &[CellSummary], mut w: W) -> Result<()> {
    writeln!(
        w,
        "scenario,controller,n_samples,n_runs,mean_e_path,max_e_path,mean_d_a,mean_d_delta,\
         completion_rate,diverged_runs"
    )?;
    for c in cells {
        writeln!(
            w,
            "{},{},{},{},{:?},{:?},{:?},{:?},{:?},{}",
            c.scenario,
            c.controller.token(),
            c.n_samples,
            c.n_runs,
            c.mean_e_path,
            c.max_e_path,
            c.mean_d_a,
            c.mean_d_delta,
            c.completion_rate,
            c.diverged_runs
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Trajectory plot
// ---------------------------------------------------------------------------

const SVG_PALETTE: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

/// Minimal SVG: the reference path dashed (one per chained leg), each run's
/// trajectory solid.
pub fn trajectory_svg<W: Write>(
    paths: &[&ReferencePath],
    runs: &[(&str, &RunRecord)],
    mut w: W,
) -> Result<()> {
    let (width, height, margin) = (640.0, 480.0, 40.0);
    let mut min = (f64::INFINITY, f64::INFINITY);
    let mut max = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut extend = |x: f64, y: f64| {
        min.0 = min.0.min(x);
        min.1 = min.1.min(y);
        max.0 = max.0.max(x);
        max.1 = max.1.max(y);
    };
    for path in paths {
        for p in &path.points {
            extend(p.x, p.y);
        }
    }
    for (_, r) in runs {
        for k in &r.ticks {
            extend(k.state.x, k.state.y);
        }
    }
    if !min.0.is_finite() {
        return Err(Error::Config("nothing to plot".into()));
    }
    let span = ((max.0 - min.0).max(1e-9), (max.1 - min.1).max(1e-9));
    let scale =
        ((width - 2.0 * margin) / span.0).min((height - 2.0 * margin) / span.1);
    let to_px = |x: f64, y: f64| -> (f64, f64) {
        ((x - min.0) * scale + margin, height - margin - (y - min.1) * scale)
    };
    let polyline = |pts: &mut dyn Iterator<Item = (f64, f64)>| -> String {
        let mut s = String::new();
        for (x, y) in pts {
            let (px, py) = to_px(x, y);
            s.push_str(&format!("{px:.2},{py:.2} "));
        }
        s
    };

    writeln!(
        w,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">"
    )?;
    writeln!(w, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>")?;
    for path in paths {
        let ref_pts = polyline(&mut path.points.iter().map(|p| (p.x, p.y)));
        writeln!(
            w,
            "<polyline points=\"{ref_pts}\" fill=\"none\" stroke=\"#888888\" stroke-width=\"1.5\" \
             stroke-dasharray=\"6 4\"/>"
        )?;
    }
    for (i, (label, r)) in runs.iter().enumerate() {
        let color = SVG_PALETTE[i % SVG_PALETTE.len()];
        let pts = polyline(&mut r.ticks.iter().map(|k| (k.state.x, k.state.y)));
        writeln!(
            w,
            "<polyline points=\"{pts}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>"
        )?;
        let ly = 20.0 + 16.0 * i as f64;
        writeln!(
            w,
            "<line x1=\"{margin}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" \
             stroke-width=\"2\"/><text x=\"{}\" y=\"{}\" font-size=\"12\" \
             font-family=\"sans-serif\">{label}</text>",
            margin + 24.0,
            margin + 30.0,
            ly + 4.0
        )?;
    }
    if let Some(last) = paths.last() {
        let (gx, gy) = to_px(last.goal().x, last.goal().y);
        writeln!(
            w,
            "<circle cx=\"{gx:.2}\" cy=\"{gy:.2}\" r=\"4\" fill=\"none\" stroke=\"#444444\"/>"
        )?;
    }
    writeln!(w, "</svg>")?;
    Ok(())
}
