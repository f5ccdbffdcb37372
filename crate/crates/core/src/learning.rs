//! System identification: least-squares fitting of the physical parameters,
//! minibatch MLP training (manual backprop, Adam, gradient clipping, early
//! stopping), and open-loop recursive R² evaluation.
//!
//! Training is single-threaded and bit-reproducible given the seed. The loss
//! is the mean squared one-step prediction error in normalized units,
//! averaged over samples and all 7 state dimensions; for the residual model
//! the unmasked dimensions contribute weight-independent constants, so the
//! gradient flows exactly through the masked channels.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Segment;
use crate::dynamics::{
    euler_step, residual_weight, ControlInput, DenseLayer, MlpParams, PhysicalParams,
    ResidualDynamicsModel, StandardNnModel, State, TransitionModel, INPUT_DIM, MLP_MAX_WIDTH,
    STATE_DIM,
};
use crate::error::{Error, Result};
use crate::rng::{rng_from, splitmix64};

/// One observed state transition at the model step size.
#[derive(Clone, Copy, Debug)]
pub struct Transition {
    pub x: State,
    pub u: ControlInput,
    pub x_next: State,
}

/// Flatten segments into one-step transitions (inputs are taken at the
/// earlier sample of each pair).
pub fn collect_transitions(segments: &[Segment]) -> Vec<Transition> {
    let mut out = Vec::new();
    for seg in segments {
        for k in 0..seg.len() - 1 {
            out.push(Transition { x: seg.states[k], u: seg.inputs[k], x_next: seg.states[k + 1] });
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Physical-parameter identification
// ---------------------------------------------------------------------------

/// Solve the 2×2 least-squares system AᵀA·θ = Aᵀy accumulated as moments.
fn solve_2x2(
    s11: f64,
    s12: f64,
    s22: f64,
    b1: f64,
    b2: f64,
    block: &'static str,
) -> Result<(f64, f64)> {
    let det = s11 * s22 - s12 * s12;
    let scale = s11.abs().max(s22.abs()).max(s12.abs());
    if scale == 0.0 || det.abs() < 1e-12 * scale * scale {
        return Err(Error::Identifiability {
            block,
            detail: format!("normal-equation determinant {det:.3e} at scale {scale:.3e}"),
        });
    }
    Ok(((s22 * b1 - s12 * b2) / det, (s11 * b2 - s12 * b1) / det))
}

/// Identify (k_a, k_V) from the speed law dV = k_a·a − k_V·V and
/// (k_delta, k_r) from the yaw law ṙ = k_delta·V·δ − k_r·r, each by linear
/// least squares on finite-difference derivatives. The two blocks are
/// structurally independent and solved separately; a rank-deficient block is
/// reported by name.
pub fn fit_physical_params(data: &[Transition], h: f64) -> Result<PhysicalParams> {
    if data.len() < 4 {
        return Err(Error::Identifiability {
            block: "all",
            detail: format!("need at least 4 transitions, got {}", data.len()),
        });
    }
    assert!(h > 0.0);

    // speed block: regressors [a, −V], target dV
    let (mut s11, mut s12, mut s22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    // yaw block: regressors [V·δ_rad, −r], target dr
    let (mut y11, mut y12, mut y22, mut c1, mut c2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for tr in data {
        let v = tr.x.speed();
        let dv = (tr.x_next.speed() - v) / h;
        let (r1, r2) = (tr.u.a, -v);
        s11 += r1 * r1;
        s12 += r1 * r2;
        s22 += r2 * r2;
        b1 += r1 * dv;
        b2 += r2 * dv;

        let dr = (tr.x_next.r - tr.x.r) / h;
        let (q1, q2) = (v * tr.u.delta.to_radians(), -tr.x.r);
        y11 += q1 * q1;
        y12 += q1 * q2;
        y22 += q2 * q2;
        c1 += q1 * dr;
        c2 += q2 * dr;
    }
    let (k_a, k_v) = solve_2x2(s11, s12, s22, b1, b2, "speed")?;
    let (k_delta, k_r) = solve_2x2(y11, y12, y22, c1, c2, "yaw")?;
    let p = PhysicalParams { k_a, k_v, k_delta, k_r };
    p.validate().map_err(|_| Error::Identifiability {
        block: "all",
        detail: format!("non-physical fit {p:?} (expected strictly positive parameters)"),
    })?;
    Ok(p)
}

// ---------------------------------------------------------------------------
// Normalization scales and supervised datasets
// ---------------------------------------------------------------------------

/// Per-dimension standard deviations of the state and input channels over
/// the given segments. Near-constant channels fall back to a unit scale so
/// normalization never divides by ~0.
pub fn compute_scales(segments: &[Segment]) -> ([f64; STATE_DIM], [f64; INPUT_DIM]) {
    let mut n = 0usize;
    let mut mean = [0.0; STATE_DIM + INPUT_DIM];
    for seg in segments {
        for k in 0..seg.len() {
            let xa = seg.states[k].as_array();
            let ua = seg.inputs[k].as_array();
            for d in 0..STATE_DIM {
                mean[d] += xa[d];
            }
            for d in 0..INPUT_DIM {
                mean[STATE_DIM + d] += ua[d];
            }
            n += 1;
        }
    }
    assert!(n > 1, "need data to compute scales");
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = [0.0; STATE_DIM + INPUT_DIM];
    for seg in segments {
        for k in 0..seg.len() {
            let xa = seg.states[k].as_array();
            let ua = seg.inputs[k].as_array();
            for d in 0..STATE_DIM {
                let e = xa[d] - mean[d];
                var[d] += e * e;
            }
            for d in 0..INPUT_DIM {
                let e = ua[d] - mean[STATE_DIM + d];
                var[STATE_DIM + d] += e * e;
            }
        }
    }
    let mut out = [1.0; STATE_DIM + INPUT_DIM];
    for d in 0..STATE_DIM + INPUT_DIM {
        let s = (var[d] / n as f64).sqrt();
        out[d] = if s > 1e-8 { s } else { 1.0 };
    }
    let mut state_scales = [0.0; STATE_DIM];
    state_scales.copy_from_slice(&out[..STATE_DIM]);
    let mut input_scales = [0.0; INPUT_DIM];
    input_scales.copy_from_slice(&out[STATE_DIM..]);
    (state_scales, input_scales)
}

/// A prepared supervised set: normalized network inputs `z`, per-sample
/// output targets `t`, the per-sample multiplier `w` applied to the network
/// output inside the loss, and the weight-independent per-sample constant
/// from dimensions the network cannot influence. Loss for sample k:
/// `(Σ_j (w_k·y_kj − t_kj)² + const_k) / 7`, averaged over samples.
pub struct SupervisedSet {
    pub z: Vec<f64>,
    pub t: Vec<f64>,
    pub w: Vec<f64>,
    pub consts: Vec<f64>,
    pub n: usize,
    pub out_dim: usize,
}

impl SupervisedSet {
    pub fn in_dim(&self) -> usize {
        STATE_DIM + INPUT_DIM
    }
}

/// Assemble the residual-model training set. Targets are the normalized
/// one-step residuals (truth minus physical prediction) on the masked
/// dimensions; optional Gaussian noise (std in normalized units) is added to
/// the targets once, here. Unmasked dimensions contribute their constant
/// squared errors via `consts` so the reported loss covers the full state.
pub fn residual_dataset(
    model: &ResidualDynamicsModel,
    segments: &[Segment],
    noise_std: f64,
    noise_seed: Option<u64>,
) -> SupervisedSet {
    let transitions = collect_transitions(segments);
    let n = transitions.len();
    let masked: Vec<usize> = (0..STATE_DIM).filter(|i| model.mask[*i] != 0.0).collect();
    let out_dim = masked.len();
    let mut z = vec![0.0; n * (STATE_DIM + INPUT_DIM)];
    let mut t = vec![0.0; n * out_dim];
    let mut w = vec![0.0; n];
    let mut consts = vec![0.0; n];
    let mut rng = noise_seed.map(rng_from);

    for (k, tr) in transitions.iter().enumerate() {
        let zin = model.nn.normalize_input(&tr.x, &tr.u);
        z[k * zin.len()..(k + 1) * zin.len()].copy_from_slice(&zin);
        w[k] = residual_weight(&tr.x, model.v_th);
        let base = euler_step(&tr.x, &tr.u, &model.phys, model.h).as_array();
        let truth = tr.x_next.as_array();
        let mut j = 0;
        for i in 0..STATE_DIM {
            let mut target_norm = truth[i] / model.nn.state_scales[i];
            if let Some(rng) = rng.as_mut() {
                target_norm += noise_std * rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
            let base_norm = base[i] / model.nn.state_scales[i];
            if model.mask[i] != 0.0 {
                t[k * out_dim + j] = target_norm - base_norm;
                j += 1;
            } else {
                let e = base_norm - target_norm;
                consts[k] += e * e;
            }
        }
    }
    SupervisedSet { z, t, w, consts, n, out_dim }
}

/// Assemble the direct next-state training set for the purely learned
/// baseline: targets are the full normalized next state, multiplier 1.
pub fn standard_dataset(
    nn: &MlpParams,
    segments: &[Segment],
    noise_std: f64,
    noise_seed: Option<u64>,
) -> SupervisedSet {
    let transitions = collect_transitions(segments);
    let n = transitions.len();
    let mut z = vec![0.0; n * (STATE_DIM + INPUT_DIM)];
    let mut t = vec![0.0; n * STATE_DIM];
    let mut rng = noise_seed.map(rng_from);
    for (k, tr) in transitions.iter().enumerate() {
        let zin = nn.normalize_input(&tr.x, &tr.u);
        z[k * zin.len()..(k + 1) * zin.len()].copy_from_slice(&zin);
        let truth = tr.x_next.as_array();
        for i in 0..STATE_DIM {
            let mut target = truth[i] / nn.state_scales[i];
            if let Some(rng) = rng.as_mut() {
                target += noise_std * rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
            t[k * STATE_DIM + i] = target;
        }
    }
    SupervisedSet { z, t, w: vec![1.0; n], consts: vec![0.0; n], n, out_dim: STATE_DIM }
}

/// Loss of the all-zero network on a set — the physical-model-only baseline
/// for residual sets.
pub fn baseline_loss(ds: &SupervisedSet) -> f64 {
    let mut acc = 0.0;
    for k in 0..ds.n {
        let mut s = ds.consts[k];
        for j in 0..ds.out_dim {
            let t = ds.t[k * ds.out_dim + j];
            s += t * t;
        }
        acc += s;
    }
    acc / (ds.n as f64 * STATE_DIM as f64)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub next_state_noise_std: f64,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 1024,
            grad_clip: 1.0,
            next_state_noise_std: 1e-4,
            early_stop_patience: 10,
            max_epochs: 200,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.grad_clip > 0.0 && self.next_state_noise_std >= 0.0)
        {
            return Err(Error::Config("learning rate and clip must be positive".into()));
        }
        if self.batch_size < 1 || self.early_stop_patience < 1 || self.max_epochs < 1 {
            return Err(Error::Config("batch size, patience, max epochs must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

pub struct TrainedMlp {
    pub layers: Vec<DenseLayer>,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val: f64,
}

/// Zeroed layer skeleton from the 9 (state, input) channels through the given
/// hidden ReLU widths to `out_dim` linear outputs. Run the result through
/// [`init_layers`] before training.
pub fn mlp_arch(hidden: &[usize], out_dim: usize) -> Vec<DenseLayer> {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(STATE_DIM + INPUT_DIM);
    dims.extend_from_slice(hidden);
    dims.push(out_dim);
    dims.windows(2)
        .map(|p| DenseLayer {
            in_dim: p[0],
            out_dim: p[1],
            w: vec![0.0; p[0] * p[1]],
            b: vec![0.0; p[1]],
        })
        .collect()
}

/// Fresh seeded initialization: weights uniform in ±√(1/fan_in), zero biases.
pub fn init_layers(arch: &[DenseLayer], seed: u64) -> Vec<DenseLayer> {
    let mut rng = rng_from(seed);
    arch.iter()
        .map(|l| {
            let bound = (1.0 / l.in_dim as f64).sqrt();
            DenseLayer {
                in_dim: l.in_dim,
                out_dim: l.out_dim,
                w: (0..l.w.len()).map(|_| rng.gen_range(-bound..bound)).collect(),
                b: vec![0.0; l.out_dim],
            }
        })
        .collect()
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Supremum of |m̂_t|/√(v̂_t) for Adam with exponential moment estimates:
/// by Cauchy–Schwarz against the second-moment accumulator,
/// |m_t| ≤ (1−β₁)·√(v_t/((1−β₂)(1−β₁²/β₂))), so the bias-corrected update
/// magnitude never exceeds lr·√(1−β₂ᵗ)/(1−β₁ᵗ) times this constant.
fn adam_step_bound() -> f64 {
    (1.0 - ADAM_BETA1) / ((1.0 - ADAM_BETA2) * (1.0 - ADAM_BETA1 * ADAM_BETA1 / ADAM_BETA2)).sqrt()
}

struct Adam {
    m: Vec<(Vec<f64>, Vec<f64>)>,
    v: Vec<(Vec<f64>, Vec<f64>)>,
    t: u64,
}

impl Adam {
    fn new(layers: &[DenseLayer]) -> Self {
        let zeros =
            |l: &DenseLayer| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]);
        Adam { m: layers.iter().map(zeros).collect(), v: layers.iter().map(zeros).collect(), t: 0 }
    }

    /// Apply one clipped Adam step; asserts the per-parameter update bound.
    fn step(&mut self, layers: &mut [DenseLayer], grads: &[(Vec<f64>, Vec<f64>)], lr: f64, clip: f64) {
        self.t += 1;
        let mut norm_sq = 0.0;
        for (gw, gb) in grads {
            norm_sq += gw.iter().map(|g| g * g).sum::<f64>();
            norm_sq += gb.iter().map(|g| g * g).sum::<f64>();
        }
        let norm = norm_sq.sqrt();
        let scale = if norm > clip { clip / norm } else { 1.0 };

        let bc = (1.0 - ADAM_BETA2.powi(self.t as i32)).sqrt() / (1.0 - ADAM_BETA1.powi(self.t as i32));
        let max_step = lr * bc * adam_step_bound() * (1.0 + 1e-12);

        for (li, layer) in layers.iter_mut().enumerate() {
            let apply = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                for i in 0..p.len() {
                    let gi = g[i] * scale;
                    m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
                    v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
                    let mh = m[i] / (1.0 - ADAM_BETA1.powi(self.t as i32));
                    let vh = v[i] / (1.0 - ADAM_BETA2.powi(self.t as i32));
                    let step = lr * mh / (vh.sqrt() + ADAM_EPS);
                    debug_assert!(step.is_finite());
                    assert!(
                        step.abs() <= max_step,
                        "Adam step {} exceeds bound {max_step}",
                        step.abs()
                    );
                    p[i] -= step;
                }
            };
            apply(&mut layer.w, &grads[li].0, &mut self.m[li].0, &mut self.v[li].0);
            apply(&mut layer.b, &grads[li].1, &mut self.m[li].1, &mut self.v[li].1);
        }
    }
}

/// Forward pass over the given sample indices, returning the mean loss
/// (per sample and state dimension).
fn eval_loss(layers: &[DenseLayer], ds: &SupervisedSet, idx: &[usize]) -> f64 {
    let in_dim = ds.in_dim();
    let mut acc = 0.0;
    let mut y = [0.0; MLP_MAX_WIDTH];
    let params = MlpShim { layers };
    for &k in idx {
        let z = &ds.z[k * in_dim..(k + 1) * in_dim];
        params.forward(z, &mut y);
        let mut s = ds.consts[k];
        for j in 0..ds.out_dim {
            let e = ds.w[k] * y[j] - ds.t[k * ds.out_dim + j];
            s += e * e;
        }
        acc += s;
    }
    acc / (idx.len() as f64 * STATE_DIM as f64)
}

/// Borrowed view so forward code can run on a plain layer slice during
/// training without cloning into an [`MlpParams`].
struct MlpShim<'a> {
    layers: &'a [DenseLayer],
}

impl MlpShim<'_> {
    fn forward(&self, z: &[f64], out: &mut [f64]) {
        let n = self.layers.len();
        let mut cur = [0.0; MLP_MAX_WIDTH];
        let mut next = [0.0; MLP_MAX_WIDTH];
        let mut cur_len = self.layers[0].in_dim;
        cur[..cur_len].copy_from_slice(&z[..cur_len]);
        for (li, layer) in self.layers.iter().enumerate() {
            if li == n - 1 {
                layer.affine(&cur[..cur_len], out);
            } else {
                layer.affine(&cur[..cur_len], &mut next);
                for v in next[..layer.out_dim].iter_mut() {
                    *v = v.max(0.0);
                }
                cur = next;
                cur_len = layer.out_dim;
            }
        }
    }
}

/// Mean loss over `idx` plus analytic gradients, via per-sample
/// backpropagation accumulated in index order.
fn loss_and_grads(
    layers: &[DenseLayer],
    ds: &SupervisedSet,
    idx: &[usize],
) -> (f64, Vec<(Vec<f64>, Vec<f64>)>) {
    let n_layers = layers.len();
    let in_dim = ds.in_dim();
    let mut grads: Vec<(Vec<f64>, Vec<f64>)> =
        layers.iter().map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()])).collect();
    // per-layer activations: acts[0] is the input, acts[l+1] the output of
    // layer l post-ReLU (final layer linear)
    let mut acts = vec![[0.0; MLP_MAX_WIDTH]; n_layers + 1];
    let mut delta = [0.0; MLP_MAX_WIDTH];
    let mut delta_next = [0.0; MLP_MAX_WIDTH];
    let denom = idx.len() as f64 * STATE_DIM as f64;
    let mut loss = 0.0;

    for &k in idx {
        let z = &ds.z[k * in_dim..(k + 1) * in_dim];
        acts[0][..in_dim].copy_from_slice(z);
        for (li, layer) in layers.iter().enumerate() {
            let (lo, hi) = acts.split_at_mut(li + 1);
            layer.affine(&lo[li][..layer.in_dim], &mut hi[0]);
            if li < n_layers - 1 {
                for v in hi[0][..layer.out_dim].iter_mut() {
                    *v = v.max(0.0);
                }
            }
        }
        let y = &acts[n_layers];
        let wk = ds.w[k];
        let mut s = ds.consts[k];
        for j in 0..ds.out_dim {
            let e = wk * y[j] - ds.t[k * ds.out_dim + j];
            s += e * e;
            delta[j] = 2.0 * e * wk / denom;
        }
        loss += s;

        for li in (0..n_layers).rev() {
            let layer = &layers[li];
            let a_in = &acts[li];
            // parameter gradients
            for i in 0..layer.in_dim {
                let ai = a_in[i];
                if ai != 0.0 {
                    let gw = &mut grads[li].0[i * layer.out_dim..(i + 1) * layer.out_dim];
                    for (g, d) in gw.iter_mut().zip(&delta[..layer.out_dim]) {
                        *g += ai * d;
                    }
                }
            }
            for (g, d) in grads[li].1.iter_mut().zip(&delta[..layer.out_dim]) {
                *g += d;
            }
            if li == 0 {
                break;
            }
            // propagate through the weights, then the previous ReLU
            for i in 0..layer.in_dim {
                let row = &layer.w[i * layer.out_dim..(i + 1) * layer.out_dim];
                let mut acc = 0.0;
                for (w, d) in row.iter().zip(&delta[..layer.out_dim]) {
                    acc += w * d;
                }
                // ReLU derivative: activations were already rectified
                delta_next[i] = if acts[li][i] > 0.0 { acc } else { 0.0 };
            }
            delta[..layer.in_dim].copy_from_slice(&delta_next[..layer.in_dim]);
        }
    }
    (loss / denom, grads)
}

/// Worst relative deviation between the analytic gradient and a central
/// difference over `n_probes` randomly chosen parameters (weights and
/// biases). A verification hook, not part of training.
pub fn gradient_check(
    layers: &[DenseLayer],
    ds: &SupervisedSet,
    n_probes: usize,
    fd_step: f64,
    seed: u64,
) -> f64 {
    assert!(n_probes > 0 && fd_step > 0.0 && ds.n > 0);
    let idx: Vec<usize> = (0..ds.n).collect();
    let (_, grads) = loss_and_grads(layers, ds, &idx);
    let mut st = seed;
    let mut pick = |m: usize| {
        st = splitmix64(st);
        (st % m as u64) as usize
    };
    let mut worst = 0.0f64;
    for probe in 0..n_probes {
        let li = pick(layers.len());
        let take_bias = probe % 5 == 4; // every fifth probe hits a bias
        let (slot, analytic) = if take_bias {
            let bi = pick(layers[li].b.len());
            (ParamSlot::Bias(bi), grads[li].1[bi])
        } else {
            let wi = pick(layers[li].w.len());
            (ParamSlot::Weight(wi), grads[li].0[wi])
        };
        let mut plus = layers.to_vec();
        let mut minus = layers.to_vec();
        match slot {
            ParamSlot::Weight(wi) => {
                plus[li].w[wi] += fd_step;
                minus[li].w[wi] -= fd_step;
            }
            ParamSlot::Bias(bi) => {
                plus[li].b[bi] += fd_step;
                minus[li].b[bi] -= fd_step;
            }
        }
        let fd = (eval_loss(&plus, ds, &idx) - eval_loss(&minus, ds, &idx)) / (2.0 * fd_step);
        let denom = fd.abs().max(analytic.abs()).max(1e-8);
        worst = worst.max(((fd - analytic) / denom).abs());
    }
    worst
}

enum ParamSlot {
    Weight(usize),
    Bias(usize),
}

/// Minibatch training with Adam, global-norm clipping, and early stopping on
/// the validation loss; returns the snapshot with the best validation loss.
pub fn train_mlp(
    arch: &[DenseLayer],
    train: &SupervisedSet,
    val: &SupervisedSet,
    cfg: &TrainConfig,
) -> Result<TrainedMlp> {
    cfg.validate()?;
    assert_eq!(train.out_dim, arch.last().unwrap().out_dim);
    assert!(train.n > 0 && val.n > 0, "empty training or validation set");

    let mut layers = init_layers(arch, cfg.rng_seed);
    let mut adam = Adam::new(&layers);
    let mut shuffle_rng = rng_from(cfg.rng_seed ^ 0x5155_4646_4c45); // epoch shuffling stream
    let val_idx: Vec<usize> = (0..val.n).collect();
    let mut order: Vec<usize> = (0..train.n).collect();

    let mut history = Vec::with_capacity(cfg.max_epochs);
    let mut best: Option<(f64, usize, Vec<DenseLayer>)> = None;

    for epoch in 0..cfg.max_epochs {
        // Fisher–Yates with the dedicated stream
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut train_loss_acc = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grads) = loss_and_grads(&layers, train, batch);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            train_loss_acc += loss * batch.len() as f64;
            adam.step(&mut layers, &grads, cfg.learning_rate, cfg.grad_clip);
        }
        let train_loss = train_loss_acc / train.n as f64;
        let val_loss = eval_loss(&layers, val, &val_idx);
        if !val_loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        history.push(EpochStats { epoch, train_loss, val_loss });

        let improved = best.as_ref().map_or(true, |(b, _, _)| val_loss < *b);
        if improved {
            best = Some((val_loss, epoch, layers.clone()));
        } else if epoch - best.as_ref().unwrap().1 >= cfg.early_stop_patience {
            break;
        }
    }

    let (best_val, best_epoch, best_layers) = best.expect("at least one epoch ran");
    Ok(TrainedMlp { layers: best_layers, history, best_epoch, best_val })
}

/// Train the residual correction for `model` (architecture, scales, physical
/// core and gating taken from it; weights are re-initialized from the seed).
/// Returns the updated model, the loss history, and the best epoch.
pub fn train_residual(
    model: &ResidualDynamicsModel,
    train_segs: &[Segment],
    val_segs: &[Segment],
    cfg: &TrainConfig,
) -> Result<(ResidualDynamicsModel, Vec<EpochStats>, usize)> {
    model.validate()?;
    let train = residual_dataset(model, train_segs, cfg.next_state_noise_std, Some(cfg.rng_seed ^ 0x4e4f_4953_45));
    let val = residual_dataset(model, val_segs, 0.0, None);
    let out = train_mlp(&model.nn.layers, &train, &val, cfg)?;
    let mut trained = model.clone();
    trained.nn.layers = out.layers;
    Ok((trained, out.history, out.best_epoch))
}

/// Train the direct next-state baseline with the same pipeline.
pub fn train_standard(
    template: &StandardNnModel,
    train_segs: &[Segment],
    val_segs: &[Segment],
    cfg: &TrainConfig,
) -> Result<(StandardNnModel, Vec<EpochStats>, usize)> {
    template.validate()?;
    let train = standard_dataset(&template.nn, train_segs, cfg.next_state_noise_std, Some(cfg.rng_seed ^ 0x4e4f_4953_45));
    let val = standard_dataset(&template.nn, val_segs, 0.0, None);
    let out = train_mlp(&template.nn.layers, &train, &val, cfg)?;
    let mut trained = template.clone();
    trained.nn.layers = out.layers;
    Ok((trained, out.history, out.best_epoch))
}

// ---------------------------------------------------------------------------
// Recursive prediction R²
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct R2Report {
    /// R² per state dimension; `None` where the ground truth has no variance.
    pub per_dim: [Option<f64>; STATE_DIM],
    /// Mean over the defined dimensions.
    pub average: f64,
}

/// Open-loop rollout accuracy: from each segment's first state, roll the
/// model forward under the recorded inputs, pool all predictions, and compute
/// per-dimension R² = 1 − SSE/SST against the pooled ground-truth mean.
pub fn recursive_r2<M: TransitionModel>(model: &M, segments: &[Segment]) -> Result<R2Report> {
    let mut truths: Vec<[f64; STATE_DIM]> = Vec::new();
    let mut preds: Vec<[f64; STATE_DIM]> = Vec::new();
    for seg in segments {
        if seg.len() < 2 {
            return Err(Error::Config("segment shorter than 2 samples".into()));
        }
        let mut x = seg.states[0];
        for k in 0..seg.len() - 1 {
            x = model.step(&x, &seg.inputs[k]);
            preds.push(x.as_array());
            truths.push(seg.states[k + 1].as_array());
        }
    }
    if truths.is_empty() {
        return Err(Error::Config("no transitions to evaluate".into()));
    }
    let n = truths.len() as f64;
    let mut mean = [0.0; STATE_DIM];
    for t in &truths {
        for d in 0..STATE_DIM {
            mean[d] += t[d];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut sse = [0.0; STATE_DIM];
    let mut sst = [0.0; STATE_DIM];
    for (t, p) in truths.iter().zip(&preds) {
        for d in 0..STATE_DIM {
            let e = t[d] - p[d];
            sse[d] += e * e;
            let m = t[d] - mean[d];
            sst[d] += m * m;
        }
    }
    let mut per_dim = [None; STATE_DIM];
    let mut acc = 0.0;
    let mut defined = 0usize;
    for d in 0..STATE_DIM {
        if sst[d] > f64::EPSILON * n {
            let r2 = 1.0 - sse[d] / sst[d];
            per_dim[d] = Some(r2);
            acc += r2;
            defined += 1;
        }
    }
    if defined == 0 {
        return Err(Error::Config("ground truth constant in every dimension".into()));
    }
    Ok(R2Report { per_dim, average: acc / defined as f64 })
}
