//! Every numeric gate the acceptance suite enforces, pinned in one place.
//! Tests read these constants instead of embedding their own numbers, so a
//! tolerance change is a reviewable one-line diff here — never a silent edit
//! inside a test body.

/// Seed for every stochastic validation study; frozen so the checks are
/// deterministic end to end.
pub const VALIDATION_SEED: u64 = 2718;

// --- input projection --------------------------------------------------------

/// Random (u, u_prev, bounds) tuples checked against the closed form.
pub const PROJ_RANDOM_TUPLES: usize = 100_000;
/// Grid pitch for the exhaustive low-resolution sweep.
pub const PROJ_GRID_STEP: f64 = 1e-3;

// --- optimal-mean validation (grid vs Monte Carlo) ---------------------------

/// Monte-Carlo sample count for the weighted-mean estimator.
pub const KL_MC_SAMPLES: usize = 1_000_000;
/// Max relative deviation between the grid and MC estimates of m*.
pub const KL_REL_TOL: f64 = 0.01;
/// Random perturbed means the cross-entropy objective must beat.
pub const KL_PERTURBATIONS: usize = 100;

// --- gradient-direction validation -------------------------------------------

/// Covariance scale factors, largest first; the error must shrink along it.
pub const GRAD_ALPHAS: [f64; 3] = [0.1, 0.05, 0.01];
pub const GRAD_MC_SAMPLES: usize = 1_000_000;
/// Relative error bound at the smallest alpha.
pub const GRAD_FINAL_REL_TOL: f64 = 0.02;
/// Temperature for the gradient study (small enough to bite, large enough
/// to keep the weights well-conditioned).
pub const GRAD_LAMBDA: f64 = 0.2;

// --- effective-sample-size scaling -------------------------------------------

pub const ESS_CONFIGS: usize = 10;
pub const ESS_DIMS: [usize; 4] = [1, 9, 30, 120];
pub const ESS_MC_SAMPLES: usize = 1_000_000;
/// Relative agreement between empirical and predicted ESS ratios.
pub const ESS_REL_TOL: f64 = 0.05;
/// Cells with a predicted ratio at or below this are exempt from the gate
/// (the empirical estimator itself is too noisy there).
pub const ESS_MIN_PREDICTED_RATIO: f64 = 1e-3;

// --- temporal-continuity statistics -------------------------------------------

pub const CONT_TRIALS: usize = 100_000;
/// Covariance entries must match within this many standard errors.
pub const CONT_COV_SIGMAS: f64 = 4.0;
/// Relative tolerance on the mean squared one-step increment.
pub const CONT_INCREMENT_REL_TOL: f64 = 0.03;
/// Expected input-sampling increment 2·Tr[Σ_u] at σ_u = (8, 6).
pub const CONT_MPPI_INCREMENT: f64 = 200.0;

// --- degeneration and identification ------------------------------------------

/// Closed-loop seconds over which σ_θ = 0 must reproduce fixed PID bitwise.
pub const DEGEN_DURATION: f64 = 30.0;
/// Relative parameter error for noiseless identification.
pub const IDENT_REL_TOL: f64 = 1e-6;
/// Relative tolerance of analytic network gradients vs central differences.
pub const GRAD_CHECK_REL_TOL: f64 = 1e-4;
/// Prediction-horizon length for the rolling R² comparison [s].
pub const R2_HORIZON_SECONDS: f64 = 5.0;

// --- closed-loop comparison matrix ---------------------------------------------

pub const MATRIX_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
pub const MATRIX_SAMPLE_COUNTS: [usize; 2] = [2048, 16];
/// Gain-space planning must keep mean input increments smaller than
/// input-space planning at the full sample budget by at least this factor.
/// Calibration on the curved scenario measured 17.6x (accelerator) and
/// 20.0x (steering) over 5 seeds, so 5 leaves a 3.5x safety margin while
/// still asserting a qualitative gap rather than a rounding artifact.
pub const SMOOTHNESS_FACTOR: f64 = 5.0;
