//! Command-line front end for the sampling-based path-following toolkit:
//! synthetic log generation, dynamics identification, statistical validation
//! of the sampler theory, and closed-loop experiments.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use mppi_pid::analysis;
use mppi_pid::config::{load_config, ExperimentConfig};
use mppi_pid::data::{generate_logs, preprocess, read_raw_log_csv, write_raw_log_csv, RawLog};
use mppi_pid::dynamics::{
    load_model, save_model, MlpParams, PhysicalModel, ResidualDynamicsModel, StandardNnModel,
    State, TransitionModel, VEHICLE_MASK,
};
use mppi_pid::learning::{
    collect_transitions, fit_physical_params, compute_scales, init_layers, mlp_arch,
    recursive_r2, train_residual, train_standard, EpochStats, R2Report,
};
use mppi_pid::path::build_hermite_path;
use mppi_pid::sim::{
    run_chain, run_matrix, trajectory_svg, write_summary_csv, ControllerKind, ScenarioSpec,
};
use mppi_pid::tolerances as tol;
use mppi_pid::dynamics::ControlInput;

#[derive(Parser)]
#[command(
    name = "mppi-pid",
    version,
    about = "Sampling-based MPC for forklift path following: data, models, theory checks, runs"
)]
struct Cli {
    /// JSON config file; defaults apply where absent.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a config field, e.g. --set control.optimizer.n_samples=256
    /// (repeatable; dotted paths, array indices allowed).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate the instrumented vehicle and write raw sensor logs as CSV.
    GenData {
        /// Output directory for raw_log_NN.csv files [default: <output_dir>/data].
        #[arg(long, value_name = "DIR")]
        out_dir: Option<PathBuf>,
        /// Number of logs [default: from config].
        #[arg(long)]
        n_logs: Option<usize>,
        /// Duration of each log in seconds [default: from config].
        #[arg(long)]
        duration: Option<f64>,
        /// Master seed for the log batch [default: from config].
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit the physical parameters and train the learned models from logs.
    Identify {
        /// Directory containing raw_log_*.csv files.
        #[arg(long, value_name = "DIR")]
        data_dir: PathBuf,
        /// Output directory for models and reports [default: <output_dir>/models].
        #[arg(long, value_name = "DIR")]
        out_dir: Option<PathBuf>,
        /// Which models to produce.
        #[arg(long, value_enum, default_value_t = ModelChoice::All)]
        model: ModelChoice,
    },
    /// Run the statistical validators for the sampler's theoretical claims.
    ValidateTheory {
        /// Restrict to one check instead of running all four.
        #[arg(long, value_enum)]
        only: Option<TheoryCheck>,
        /// Output directory for the JSON reports [default: <output_dir>/theory].
        #[arg(long, value_name = "DIR")]
        out_dir: Option<PathBuf>,
    },
    /// Closed-loop path following: a single run, or the full experiment matrix.
    Run {
        /// Scenario name: straight | curve90 | scurve [default: curve90;
        /// with --matrix, restricts the matrix to this scenario].
        #[arg(long)]
        scenario: Option<String>,
        /// Controller: fixed_pid | mppi | mppi_pid [default: mppi_pid].
        #[arg(long)]
        controller: Option<String>,
        /// Sample budget per planner iteration [default: from config].
        #[arg(long)]
        samples: Option<usize>,
        /// Run seed [default: first configured seed].
        #[arg(long)]
        seed: Option<u64>,
        /// Run every scenario x controller x sample budget x seed cell.
        #[arg(long)]
        matrix: bool,
        /// Plan with a trained residual model loaded from this JSON file.
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
        /// Plan with the data-generating physical parameters instead of
        /// identifying them from synthetic logs first.
        #[arg(long)]
        true_params: bool,
        /// Output directory for run CSVs, summaries and plots
        /// [default: <output_dir>/runs].
        #[arg(long, value_name = "DIR")]
        out_dir: Option<PathBuf>,
    },
    /// Print the effective configuration (defaults + file + overrides) as JSON.
    DumpConfig,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelChoice {
    All,
    Physical,
    Residual,
    Standard,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TheoryCheck {
    Ess,
    Kl,
    Gradient,
    Continuity,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

/// 2 for configuration/IO problems, 3 for divergence, 1 for everything else
/// (failed validation gates, degenerate data, training trouble).
fn exit_code_for(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<mppi_pid::Error>() {
        Some(mppi_pid::Error::Config(_))
        | Some(mppi_pid::Error::Io(_))
        | Some(mppi_pid::Error::Json(_)) => 2,
        Some(mppi_pid::Error::Diverged { .. }) => 3,
        Some(_) => 1,
        None => 2,
    }
}

fn dispatch(cli: &Cli) -> Result<ExitCode> {
    let cfg = load_config(cli.config.as_deref(), &cli.sets)?;
    match &cli.cmd {
        Cmd::GenData { out_dir, n_logs, duration, seed } => {
            cmd_gen_data(&cfg, out_dir.as_deref(), *n_logs, *duration, *seed)
        }
        Cmd::Identify { data_dir, out_dir, model } => {
            cmd_identify(&cfg, data_dir, out_dir.as_deref(), *model)
        }
        Cmd::ValidateTheory { only, out_dir } => {
            cmd_validate_theory(&cfg, *only, out_dir.as_deref())
        }
        Cmd::Run { scenario, controller, samples, seed, matrix, model, true_params, out_dir } => {
            let opts = RunOpts {
                scenario: scenario.as_deref(),
                controller: controller.as_deref(),
                samples: *samples,
                seed: *seed,
                matrix: *matrix,
                model_path: model.as_deref(),
                true_params: *true_params,
            };
            cmd_run(&cfg, &opts, out_dir.as_deref())
        }
        Cmd::DumpConfig => {
            // tolerate a reader that closes early (e.g. piping into `head`)
            let _ = writeln!(std::io::stdout(), "{}", cfg.to_json_pretty());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn resolve_out_dir(cfg: &ExperimentConfig, sub: &str, explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .unwrap_or_else(|| Path::new(&cfg.output_dir).join(sub))
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

fn cmd_gen_data(
    cfg: &ExperimentConfig,
    out_dir: Option<&Path>,
    n_logs: Option<usize>,
    duration: Option<f64>,
    seed: Option<u64>,
) -> Result<ExitCode> {
    let dir = resolve_out_dir(cfg, "data", out_dir);
    let n_logs = n_logs.unwrap_or(cfg.data.n_logs);
    let duration = duration.unwrap_or(cfg.data.log_duration);
    let seed = seed.unwrap_or(cfg.data.log_seed);

    let plant = cfg.logging_plant();
    let logs = generate_logs(&plant, n_logs, duration, seed)?;
    fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let mut total = 0usize;
    for (i, log) in logs.iter().enumerate() {
        let path = dir.join(format!("raw_log_{i:02}.csv"));
        let f = File::create(&path)
            .with_context(|| format!("cannot write {}", path.display()))?;
        write_raw_log_csv(log, BufWriter::new(f))?;
        total += log.samples.len();
    }
    println!(
        "wrote {} logs x {:.0} s ({} samples) to {}",
        logs.len(),
        duration,
        total,
        dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// identify
// ---------------------------------------------------------------------------

fn read_logs(data_dir: &Path) -> Result<Vec<RawLog>> {
    let entries = fs::read_dir(data_dir)
        .with_context(|| format!("cannot read data directory {}", data_dir.display()))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("raw_log_") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        bail!(mppi_pid::Error::Config(format!(
            "no raw_log_*.csv files in {} (run `mppi-pid gen-data` first)",
            data_dir.display()
        )));
    }
    let mut logs = Vec::with_capacity(files.len());
    for p in &files {
        let f = File::open(p).with_context(|| format!("cannot open {}", p.display()))?;
        logs.push(
            read_raw_log_csv(BufReader::new(f))
                .with_context(|| format!("malformed log {}", p.display()))?,
        );
    }
    Ok(logs)
}

fn write_loss_csv(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut w = BufWriter::new(
        File::create(path).with_context(|| format!("cannot write {}", path.display()))?,
    );
    writeln!(w, "epoch,train_loss,val_loss")?;
    for e in history {
        writeln!(w, "{},{:?},{:?}", e.epoch, e.train_loss, e.val_loss)?;
    }
    Ok(())
}

const STATE_LABELS: [&str; 7] = ["x", "y", "s", "c", "vx", "vy", "r"];

fn print_r2_row(name: &str, r: &R2Report) {
    let mut line = format!("{name:<10}");
    for d in r.per_dim {
        match d {
            Some(v) => line.push_str(&format!(" {v:>8.4}")),
            None => line.push_str(&format!(" {:>8}", "--")),
        }
    }
    line.push_str(&format!(" {:>8.4}", r.average));
    println!("{line}");
}

fn cmd_identify(
    cfg: &ExperimentConfig,
    data_dir: &Path,
    out_dir: Option<&Path>,
    choice: ModelChoice,
) -> Result<ExitCode> {
    let dir = resolve_out_dir(cfg, "models", out_dir);
    fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;

    let logs = read_logs(data_dir)?;
    let splits = preprocess(&logs, &cfg.data.preprocess)?;
    let (n_train, n_val, n_test) = splits.all_counts();
    println!(
        "preprocessed {} logs: {} intervals ({} dropped short) -> {} train / {} val / {} test segments",
        logs.len(),
        splits.n_intervals,
        splits.dropped_short,
        n_train,
        n_val,
        n_test
    );

    let h = cfg.data.preprocess.h;
    let transitions = collect_transitions(&splits.train);
    let phys = fit_physical_params(&transitions, h)?;
    println!(
        "identified physical parameters: k_a={:.6} k_V={:.6} k_delta={:.6} k_r={:.6}",
        phys.k_a, phys.k_v, phys.k_delta, phys.k_r
    );
    let phys_model = PhysicalModel { phys, h };
    let r2_phys = recursive_r2(&phys_model, &splits.test)?;

    let (state_scales, input_scales) = compute_scales(&splits.train);
    let train_cfg = &cfg.training.train;

    let mut r2_standard = None;
    if matches!(choice, ModelChoice::All | ModelChoice::Standard) {
        let template = StandardNnModel {
            nn: MlpParams {
                layers: init_layers(
                    &mlp_arch(&cfg.training.hidden, 7),
                    train_cfg.rng_seed ^ 0x5354_4e44,
                ),
                state_scales,
                input_scales,
            },
            h,
        };
        println!("training direct next-state baseline ...");
        let mut std_cfg = *train_cfg;
        std_cfg.rng_seed ^= 0x5354_4e44;
        let (model, history, best_epoch) =
            train_standard(&template, &splits.train, &splits.val, &std_cfg)?;
        println!(
            "  {} epochs, best validation loss {:.6e} at epoch {}",
            history.len(),
            history[best_epoch].val_loss,
            best_epoch
        );
        write_loss_csv(&dir.join("training_loss_standard.csv"), &history)?;
        let json = serde_json::to_string_pretty(&model)?;
        fs::write(dir.join("model_standard.json"), json)?;
        r2_standard = Some(recursive_r2(&model, &splits.test)?);
    }

    let mut r2_residual = None;
    if matches!(choice, ModelChoice::All | ModelChoice::Residual) {
        let template = ResidualDynamicsModel {
            phys,
            nn: MlpParams {
                layers: init_layers(&mlp_arch(&cfg.training.hidden, 3), train_cfg.rng_seed),
                state_scales,
                input_scales,
            },
            mask: VEHICLE_MASK,
            v_th: cfg.training.v_th,
            h,
        };
        println!("training residual correction ...");
        let (model, history, best_epoch) =
            train_residual(&template, &splits.train, &splits.val, train_cfg)?;
        println!(
            "  {} epochs, best validation loss {:.6e} at epoch {}",
            history.len(),
            history[best_epoch].val_loss,
            best_epoch
        );
        write_loss_csv(&dir.join("training_loss_residual.csv"), &history)?;
        save_model(&model, &dir.join("model_residual.json"))?;
        r2_residual = Some(recursive_r2(&model, &splits.test)?);
    }

    println!("\nrecursive prediction R^2 on held-out segments:");
    let mut header = format!("{:<10}", "model");
    for l in STATE_LABELS {
        header.push_str(&format!(" {l:>8}"));
    }
    header.push_str(&format!(" {:>8}", "avg"));
    println!("{header}");
    print_r2_row("physical", &r2_phys);
    if let Some(r) = &r2_standard {
        print_r2_row("standard", r);
    }
    if let Some(r) = &r2_residual {
        print_r2_row("residual", r);
    }

    #[derive(serde::Serialize)]
    struct IdentifyReport {
        phys: mppi_pid::dynamics::PhysicalParams,
        n_train_segments: usize,
        n_val_segments: usize,
        n_test_segments: usize,
        r2_physical: R2Report,
        r2_standard: Option<R2Report>,
        r2_residual: Option<R2Report>,
    }
    let report = IdentifyReport {
        phys,
        n_train_segments: n_train,
        n_val_segments: n_val,
        n_test_segments: n_test,
        r2_physical: r2_phys,
        r2_standard,
        r2_residual,
    };
    fs::write(dir.join("identification.json"), serde_json::to_string_pretty(&report)?)?;
    println!("\nreports written to {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// validate-theory
// ---------------------------------------------------------------------------

fn write_report<T: serde::Serialize>(dir: &Path, name: &str, report: &T) -> Result<()> {
    let path = dir.join(name);
    let f = File::create(&path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    analysis::write_json(report, BufWriter::new(f))?;
    Ok(())
}

fn cmd_validate_theory(
    cfg: &ExperimentConfig,
    only: Option<TheoryCheck>,
    out_dir: Option<&Path>,
) -> Result<ExitCode> {
    let dir = resolve_out_dir(cfg, "theory", out_dir);
    fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let want = |c: TheoryCheck| only.is_none() || only == Some(c);
    let mut all_pass = true;
    let seed = tol::VALIDATION_SEED;

    if want(TheoryCheck::Kl) {
        let report = analysis::reference_kl_report(seed)?;
        let pass = report.passes(tol::KL_REL_TOL);
        all_pass &= pass;
        println!(
            "optimal-mean projection: {} (grid vs MC deviation {:.3e}, optimum beat {}/{} perturbed means)",
            if pass { "PASS" } else { "FAIL" },
            report.rel_deviation,
            report.n_perturb_beaten,
            report.n_perturb
        );
        write_report(&dir, "kl_projection.json", &report)?;
    }

    if want(TheoryCheck::Gradient) {
        let report = analysis::reference_grad_report(seed)?;
        let pass = report.passes(tol::GRAD_FINAL_REL_TOL);
        all_pass &= pass;
        let finest = report.stats.last().expect("alphas nonempty");
        println!(
            "gradient direction:      {} (rel err {:.3e} at alpha={}, monotone: {})",
            if pass { "PASS" } else { "FAIL" },
            finest.rel_err,
            finest.alpha,
            report.monotone_within_slack
        );
        write_report(&dir, "gradient_direction.json", &report)?;
    }

    if want(TheoryCheck::Ess) {
        let cells = analysis::ess_scaling_study(
            tol::ESS_CONFIGS,
            &tol::ESS_DIMS,
            tol::ESS_MC_SAMPLES,
            seed,
        );
        let gated: Vec<_> = cells
            .iter()
            .filter(|c| c.predicted_ratio > tol::ESS_MIN_PREDICTED_RATIO)
            .collect();
        let worst = gated.iter().map(|c| c.rel_err).fold(0.0f64, f64::max);
        let pass = !gated.is_empty() && worst <= tol::ESS_REL_TOL;
        all_pass &= pass;
        println!(
            "effective sample size:   {} ({} cells, worst rel err {:.3e} over {} gated)",
            if pass { "PASS" } else { "FAIL" },
            cells.len(),
            worst,
            gated.len()
        );
        write_report(&dir, "ess_scaling.json", &cells)?;
    }

    if want(TheoryCheck::Continuity) {
        let (gain, input) = analysis::reference_continuity_reports(seed)?;
        let gain_pass = gain.passes(tol::CONT_COV_SIGMAS, tol::CONT_INCREMENT_REL_TOL);
        let increments_flat = input
            .increments
            .iter()
            .all(|i| (i.predicted - tol::CONT_MPPI_INCREMENT).abs() < 1e-9);
        let input_pass = increments_flat
            && input.passes(tol::CONT_COV_SIGMAS, tol::CONT_INCREMENT_REL_TOL);
        all_pass &= gain_pass && input_pass;
        println!(
            "temporal continuity:     {} (gain-scheduled worst {:.2} sigma, increment err {:.3e}; \
             input-sampled increment err {:.3e}, whiteness {:.2} sigma)",
            if gain_pass && input_pass { "PASS" } else { "FAIL" },
            gain.max_cov_sigma,
            gain.max_increment_err,
            input.max_increment_err,
            input.max_offdiag_normalized
        );
        write_report(&dir, "continuity_gain.json", &gain)?;
        write_report(&dir, "continuity_input.json", &input)?;
    }

    println!("reports written to {}", dir.display());
    if all_pass {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("one or more theory checks FAILED");
        Ok(ExitCode::from(1))
    }
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

struct RunOpts<'a> {
    scenario: Option<&'a str>,
    controller: Option<&'a str>,
    samples: Option<usize>,
    seed: Option<u64>,
    matrix: bool,
    model_path: Option<&'a Path>,
    true_params: bool,
}

/// Planning model for the controllers: either physics with (identified or
/// true) parameters, or a trained residual model.
enum PlanModel {
    Physical(PhysicalModel),
    Residual(ResidualDynamicsModel),
}

impl TransitionModel for PlanModel {
    fn step(&self, x: &State, u: &ControlInput) -> State {
        match self {
            PlanModel::Physical(m) => m.step(x, u),
            PlanModel::Residual(m) => m.step(x, u),
        }
    }
    fn step_size(&self) -> f64 {
        match self {
            PlanModel::Physical(m) => m.step_size(),
            PlanModel::Residual(m) => m.step_size(),
        }
    }
}

fn resolve_plan_model(cfg: &ExperimentConfig, opts: &RunOpts) -> Result<PlanModel> {
    if let Some(path) = opts.model_path {
        let m = load_model(path)?;
        if (m.h - cfg.plant.h_control).abs() > 1e-12 {
            bail!(mppi_pid::Error::Config(format!(
                "model step {} does not match the control period {}",
                m.h, cfg.plant.h_control
            )));
        }
        println!("planning with residual model from {}", path.display());
        return Ok(PlanModel::Residual(m));
    }
    if opts.true_params {
        println!("planning with the data-generating physical parameters");
        return Ok(PlanModel::Physical(PhysicalModel {
            phys: cfg.plant.phys,
            h: cfg.plant.h_control,
        }));
    }
    // Default: identify the physical parameters from a synthetic log batch,
    // mirroring the real workflow where the controller never sees the plant.
    let plant = cfg.logging_plant();
    let logs = generate_logs(&plant, cfg.data.n_logs, cfg.data.log_duration, cfg.data.log_seed)?;
    let splits = preprocess(&logs, &cfg.data.preprocess)?;
    let transitions = collect_transitions(&splits.train);
    let phys = fit_physical_params(&transitions, cfg.data.preprocess.h)?;
    println!(
        "planning with physical parameters identified from {} synthetic logs: \
         k_a={:.5} k_V={:.5} k_delta={:.5} k_r={:.5}",
        logs.len(),
        phys.k_a,
        phys.k_v,
        phys.k_delta,
        phys.k_r
    );
    Ok(PlanModel::Physical(PhysicalModel { phys, h: cfg.plant.h_control }))
}

fn spec_paths(spec: &ScenarioSpec) -> Result<Vec<mppi_pid::path::ReferencePath>> {
    spec.legs
        .iter()
        .map(|l| build_hermite_path(l.start, l.goal, l.path_points).map_err(Into::into))
        .collect()
}

fn cmd_run(cfg: &ExperimentConfig, opts: &RunOpts, out_dir: Option<&Path>) -> Result<ExitCode> {
    let dir = resolve_out_dir(cfg, "runs", out_dir);
    fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let plant = cfg.control_plant();
    let model = resolve_plan_model(cfg, opts)?;

    if opts.matrix {
        return cmd_run_matrix(cfg, opts, &dir, &plant, &model);
    }

    let name = opts.scenario.unwrap_or("curve90");
    let mut spec = cfg.scenario(name)?;
    let controller = match opts.controller {
        Some(s) => s.parse::<ControllerKind>()?,
        None => ControllerKind::MppiPid,
    };
    let samples = opts.samples.unwrap_or(cfg.control.optimizer.n_samples);
    let seed = opts.seed.unwrap_or_else(|| cfg.scenarios.seeds.first().copied().unwrap_or(1));
    for leg in &mut spec.legs {
        leg.controller = controller;
        leg.optimizer.n_samples = samples;
        leg.seed = seed;
    }

    match controller {
        ControllerKind::FixedPid => {
            println!("running {} with {} (seed {}) ...", name, controller.token(), seed)
        }
        _ => println!(
            "running {} with {} (I={}, seed {}) ...",
            name,
            controller.token(),
            samples,
            seed
        ),
    }
    let rec = run_chain(&spec.legs, &plant, &model)?;
    let csv_path = dir.join(format!("{}.csv", rec.file_stem()));
    rec.write_csv(BufWriter::new(File::create(&csv_path)?))?;

    let paths = spec_paths(&spec)?;
    let path_refs: Vec<&_> = paths.iter().collect();
    let svg_path = dir.join(format!("{}.svg", rec.file_stem()));
    trajectory_svg(&path_refs, &[(controller.token(), &rec)], BufWriter::new(File::create(&svg_path)?))?;

    println!(
        "mean |e_path| {:.4} m, max {:.4} m; mean |da| {:.4}, |ddelta| {:.4}; \
         goal ball: {}, stopped: {}; {:.2} ms/tick",
        rec.mean_e_path(),
        rec.max_e_path(),
        rec.mean_d_a(),
        rec.mean_d_delta(),
        rec.reached_goal_ball,
        rec.stopped_at_goal,
        rec.mean_tick_ms()
    );
    println!("wrote {} and {}", csv_path.display(), svg_path.display());
    if rec.diverged {
        eprintln!("run DIVERGED from the reference path");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_run_matrix(
    cfg: &ExperimentConfig,
    opts: &RunOpts,
    dir: &Path,
    plant: &mppi_pid::data::GroundTruthPlant,
    model: &PlanModel,
) -> Result<ExitCode> {
    let names: Vec<&str> = match opts.scenario {
        Some(n) => vec![n],
        None => ExperimentConfig::scenario_names().to_vec(),
    };
    let mut specs = Vec::new();
    for n in &names {
        specs.push(cfg.scenario(n)?);
    }
    let controllers = match opts.controller {
        Some(s) => vec![s.parse::<ControllerKind>()?],
        None => vec![ControllerKind::FixedPid, ControllerKind::Mppi, ControllerKind::MppiPid],
    };
    let sample_counts: Vec<usize> = match opts.samples {
        Some(s) => vec![s],
        None => cfg.scenarios.sample_counts.clone(),
    };
    let seeds: Vec<u64> = match opts.seed {
        Some(s) => vec![s],
        None => cfg.scenarios.seeds.clone(),
    };

    println!(
        "matrix: {} scenario(s) x {} controller(s) x {:?} samples x {} seed(s)",
        specs.len(),
        controllers.len(),
        sample_counts,
        seeds.len()
    );
    let (records, cells) = run_matrix(
        &specs,
        &controllers,
        &sample_counts,
        &seeds,
        plant,
        model,
        cfg.control.optimizer.parallel,
    )?;

    for rec in &records {
        let p = dir.join(format!("{}.csv", rec.file_stem()));
        rec.write_csv(BufWriter::new(File::create(&p)?))?;
    }
    let summary_csv = dir.join("summary.csv");
    write_summary_csv(&cells, BufWriter::new(File::create(&summary_csv)?))?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&cells)?)?;

    // One overlay per scenario: largest budget, first seed, every controller.
    for spec in &specs {
        let big = *sample_counts.iter().max().expect("nonempty");
        let chosen: Vec<(&str, &mppi_pid::sim::RunRecord)> = records
            .iter()
            .filter(|r| {
                r.scenario == spec.name()
                    && r.seed == seeds[0]
                    && (r.n_samples == big || r.controller == ControllerKind::FixedPid)
            })
            .map(|r| (r.controller.token(), r))
            .collect();
        if chosen.is_empty() {
            continue;
        }
        let paths = spec_paths(spec)?;
        let path_refs: Vec<&_> = paths.iter().collect();
        let svg = dir.join(format!("{}_overlay.svg", spec.name()));
        trajectory_svg(&path_refs, &chosen, BufWriter::new(File::create(&svg)?))?;
    }

    println!(
        "\n{:<10} {:<10} {:>7} {:>6} {:>12} {:>11} {:>9} {:>9} {:>10} {:>8}",
        "scenario", "controller", "samples", "runs", "mean_e_path", "max_e_path", "mean_da",
        "mean_dd", "completed", "diverged"
    );
    for c in &cells {
        println!(
            "{:<10} {:<10} {:>7} {:>6} {:>12.4} {:>11.4} {:>9.4} {:>9.4} {:>10.2} {:>8}",
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
        );
    }
    let diverged: usize = cells.iter().map(|c| c.diverged_runs).sum();
    if diverged > 0 {
        eprintln!("{diverged} run(s) diverged; see summary.csv");
    }
    println!("\nwrote {} run CSVs and summaries to {}", records.len(), dir.display());
    Ok(ExitCode::SUCCESS)
}
