//! Vehicle dynamics: the physical model, Euler stepping, MLP inference, and
//! the residual-corrected transition used by every planner rollout.
//!
//! State layout is `[X, Y, s, c, vX, vY, r]` where `(s, c) = (sin ψ, cos ψ)`
//! — the yaw is carried in trig form so the state stays continuous through
//! ±π. The physical core is
//!
//! ```text
//!   Ẋ  = vX                     v̇X = k_a·a·c − k_V·vX − r·vY
//!   Ẏ  = vY                     v̇Y = k_a·a·s − k_V·vY + r·vX
//!   ṡ  =  c·r                   ṙ  = k_δ·V·δ − k_r·r,   V = √(vX²+vY²)
//!   ċ  = −s·r
//! ```
//!
//! with the accelerator command `a` dimensionless in [0, 100] and the steering
//! angle `δ` stored in degrees (converted to radians inside the derivative;
//! `k_delta` is identified in radian-consistent units).
//!
//! The learned correction enters as
//! `x' = euler(x, u) + w_res(x) · (mask ⊙ scale ⊙ nn(x, u))`, followed by a
//! renormalization of `(s, c)` back onto the unit circle. The residual weight
//! `w_res = V²/(V² + v_th²)` fades the network out at low speed where training
//! data is sparse. The mask restricts the correction to `(vX, vY, r)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STATE_DIM: usize = 7;
pub const INPUT_DIM: usize = 2;
/// Residual mask for the vehicle application: corrections on (vX, vY, r) only.
pub const VEHICLE_MASK: [f64; STATE_DIM] = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0];

/// 7-dim vehicle state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub y: f64,
    /// sin(yaw)
    pub s: f64,
    /// cos(yaw)
    pub c: f64,
    pub vx: f64,
    pub vy: f64,
    pub r: f64,
}

impl State {
    pub fn zero() -> Self {
        Self::from_array([0.0; STATE_DIM])
    }

    /// State at a pose, moving at `speed` along the heading, zero yaw rate.
    pub fn at_pose(x: f64, y: f64, psi: f64, speed: f64) -> Self {
        let (s, c) = psi.sin_cos();
        State { x, y, s, c, vx: speed * c, vy: speed * s, r: 0.0 }
    }

    pub fn from_array(a: [f64; STATE_DIM]) -> Self {
        State { x: a[0], y: a[1], s: a[2], c: a[3], vx: a[4], vy: a[5], r: a[6] }
    }

    pub fn as_array(&self) -> [f64; STATE_DIM] {
        [self.x, self.y, self.s, self.c, self.vx, self.vy, self.r]
    }

    /// Speed magnitude V = √(vX² + vY²).
    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    /// Yaw angle reconstructed from the trig pair.
    pub fn yaw(&self) -> f64 {
        self.s.atan2(self.c)
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

/// Accelerator command (dimensionless) and steering angle (degrees).
///
/// Bounds are enforced only by explicit projection, never implicitly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub a: f64,
    pub delta: f64,
}

impl ControlInput {
    pub fn new(a: f64, delta: f64) -> Self {
        ControlInput { a, delta }
    }

    pub fn as_array(&self) -> [f64; INPUT_DIM] {
        [self.a, self.delta]
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.delta.is_finite()
    }
}

/// Identified physical parameters; all strictly positive (gain/damping roles).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub k_a: f64,
    pub k_v: f64,
    pub k_delta: f64,
    pub k_r: f64,
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.k_a, self.k_v, self.k_delta, self.k_r];
        if vals.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "physical parameters must be finite and strictly positive, got {vals:?}"
            )))
        }
    }
}

/// Right-hand side of the continuous-time physical model.
pub fn phys_derivative(x: &State, u: &ControlInput, p: &PhysicalParams) -> [f64; STATE_DIM] {
    let delta_rad = u.delta.to_radians();
    let v = x.speed();
    [
        x.vx,
        x.vy,
        x.c * x.r,
        -x.s * x.r,
        p.k_a * u.a * x.c - p.k_v * x.vx - x.r * x.vy,
        p.k_a * u.a * x.s - p.k_v * x.vy + x.r * x.vx,
        p.k_delta * v * delta_rad - p.k_r * x.r,
    ]
}

/// One explicit Euler step `x + h·f(x, u)`. No trig normalization here —
/// identification regresses on the raw discretized model.
pub fn euler_step(x: &State, u: &ControlInput, p: &PhysicalParams, h: f64) -> State {
    assert!(h > 0.0, "euler_step requires h > 0");
    let f = phys_derivative(x, u, p);
    let xa = x.as_array();
    let mut out = [0.0; STATE_DIM];
    for i in 0..STATE_DIM {
        out[i] = xa[i] + h * f[i];
    }
    State::from_array(out)
}

/// Rescale `(s, c)` back onto the unit circle; other fields untouched.
pub fn normalize_trig(x: &State) -> Result<State> {
    let norm = x.s.hypot(x.c);
    if norm == 0.0 {
        return Err(Error::DegenerateHeading);
    }
    Ok(State { s: x.s / norm, c: x.c / norm, ..*x })
}

/// Residual gate `V² / (V² + v_th²)` ∈ [0, 1).
pub fn residual_weight(x: &State, v_th: f64) -> f64 {
    debug_assert!(v_th > 0.0);
    let v2 = x.vx * x.vx + x.vy * x.vy;
    v2 / (v2 + v_th * v_th)
}

// ---------------------------------------------------------------------------
// MLP
// ---------------------------------------------------------------------------

/// Widest layer the stack-allocated inference buffers can hold.
pub const MLP_MAX_WIDTH: usize = 64;

/// One dense layer. Weights are stored input-major: `w[i*out_dim + j]` is the
/// weight from input `i` to output `j`, so inference walks each input once and
/// streams along the output row (the loop the compiler vectorizes).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl DenseLayer {
    pub fn validate(&self) -> Result<()> {
        if self.w.len() != self.in_dim * self.out_dim || self.b.len() != self.out_dim {
            return Err(Error::Config(format!(
                "dense layer {}x{} has {} weights / {} biases",
                self.in_dim,
                self.out_dim,
                self.w.len(),
                self.b.len()
            )));
        }
        if self.out_dim == 0 || self.in_dim == 0 || self.out_dim > MLP_MAX_WIDTH {
            return Err(Error::Config(format!(
                "dense layer dimensions {}x{} out of supported range",
                self.in_dim, self.out_dim
            )));
        }
        if !self.w.iter().chain(self.b.iter()).all(|v| v.is_finite()) {
            return Err(Error::Config("non-finite MLP parameter".into()));
        }
        Ok(())
    }

    /// `out[j] = b[j] + Σ_i x[i]·w[i,j]`
    #[inline]
    pub fn affine(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        out[..self.out_dim].copy_from_slice(&self.b);
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.w[i * self.out_dim..(i + 1) * self.out_dim];
            for (o, &wij) in out[..self.out_dim].iter_mut().zip(row) {
                *o += xi * wij;
            }
        }
    }
}

/// MLP weights plus the per-dimension normalization scales. Hidden layers use
/// ReLU; the output layer is linear. Inputs are the 7 state and 2 input
/// channels divided by their scales; outputs are in normalized units and the
/// caller rescales them (see [`residual_step`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<DenseLayer>,
    /// Per-dimension standard deviations of the state channels.
    pub state_scales: [f64; STATE_DIM],
    /// Per-dimension standard deviations of the input channels.
    pub input_scales: [f64; INPUT_DIM],
}

impl MlpParams {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("MLP has no layers".into()));
        }
        for l in &self.layers {
            l.validate()?;
        }
        for pair in self.layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Config(format!(
                    "layer dimension mismatch: {} -> {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        if self.layers[0].in_dim != STATE_DIM + INPUT_DIM {
            return Err(Error::Config(format!(
                "MLP input dim {} != {}",
                self.layers[0].in_dim,
                STATE_DIM + INPUT_DIM
            )));
        }
        let all_scales = self.state_scales.iter().chain(self.input_scales.iter());
        if !all_scales.into_iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::Config("normalization scales must be positive".into()));
        }
        Ok(())
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    /// Normalize `(x, u)` into the network input layout.
    #[inline]
    pub fn normalize_input(&self, x: &State, u: &ControlInput) -> [f64; STATE_DIM + INPUT_DIM] {
        let xa = x.as_array();
        let ua = u.as_array();
        let mut z = [0.0; STATE_DIM + INPUT_DIM];
        for i in 0..STATE_DIM {
            z[i] = xa[i] / self.state_scales[i];
        }
        for i in 0..INPUT_DIM {
            z[STATE_DIM + i] = ua[i] / self.input_scales[i];
        }
        z
    }

    /// Raw forward pass on an already-normalized input vector.
    #[inline]
    pub fn forward_raw(&self, z: &[f64], out: &mut [f64]) {
        let n_layers = self.layers.len();
        let mut cur = [0.0; MLP_MAX_WIDTH];
        let mut next = [0.0; MLP_MAX_WIDTH];
        let mut cur_len = self.layers[0].in_dim;
        cur[..cur_len].copy_from_slice(&z[..cur_len]);
        for (li, layer) in self.layers.iter().enumerate() {
            if li == n_layers - 1 {
                layer.affine(&cur[..cur_len], out);
            } else {
                layer.affine(&cur[..cur_len], &mut next);
                for v in next[..layer.out_dim].iter_mut() {
                    *v = v.max(0.0); // ReLU on hidden layers
                }
                cur = next; // small fixed-size copy keeps the loop borrow-free
                cur_len = layer.out_dim;
            }
        }
    }
}

/// Forward pass for the residual network: normalized (state, input) in,
/// 3-dim normalized residual out.
pub fn mlp_forward(nn: &MlpParams, x: &State, u: &ControlInput) -> [f64; 3] {
    debug_assert_eq!(nn.out_dim(), 3);
    let z = nn.normalize_input(x, u);
    let mut out3 = [0.0; 3];
    nn.forward_raw(&z, &mut out3);
    out3
}

// ---------------------------------------------------------------------------
// Transition models
// ---------------------------------------------------------------------------

/// Physical core + masked, speed-gated MLP residual.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResidualDynamicsModel {
    pub phys: PhysicalParams,
    pub nn: MlpParams,
    pub mask: [f64; STATE_DIM],
    pub v_th: f64,
    pub h: f64,
}

impl ResidualDynamicsModel {
    pub fn validate(&self) -> Result<()> {
        self.phys.validate()?;
        self.nn.validate()?;
        if !self.mask.iter().all(|m| *m == 0.0 || *m == 1.0) {
            return Err(Error::Config("mask entries must be 0 or 1".into()));
        }
        let n_masked = self.mask.iter().filter(|m| **m != 0.0).count();
        if n_masked != self.nn.out_dim() {
            return Err(Error::Config(format!(
                "mask selects {n_masked} dims but the MLP emits {}",
                self.nn.out_dim()
            )));
        }
        if !(self.v_th > 0.0) || !(self.h > 0.0) {
            return Err(Error::Config("v_th and h must be positive".into()));
        }
        Ok(())
    }
}

/// One step of the residual model: Euler-discretized physics plus the gated,
/// rescaled network correction on the masked dimensions, then trig
/// renormalization. Callers are expected to hold a validated model.
pub fn residual_step(m: &ResidualDynamicsModel, x: &State, u: &ControlInput) -> State {
    let base = euler_step(x, u, &m.phys, m.h);
    let w = residual_weight(x, m.v_th);
    let nn_out = mlp_forward(&m.nn, x, u);
    let mut out = base.as_array();
    let mut j = 0;
    for i in 0..STATE_DIM {
        if m.mask[i] != 0.0 {
            out[i] += w * m.mask[i] * nn_out[j] * m.nn.state_scales[i];
            j += 1;
        }
    }
    let mut st = State::from_array(out);
    // (s, c) drift off the unit circle only through Euler's O(h²) growth, so
    // the norm stays near one and the degenerate case cannot arise here.
    let norm = st.s.hypot(st.c);
    debug_assert!(norm > 0.0);
    st.s /= norm;
    st.c /= norm;
    st
}

/// Anything that can advance a state one step — the planners, the recursive-R²
/// evaluator, and the simulator's "perfect model" ablation all work through
/// this.
pub trait TransitionModel: Sync {
    fn step(&self, x: &State, u: &ControlInput) -> State;
    fn step_size(&self) -> f64;
}

impl TransitionModel for ResidualDynamicsModel {
    fn step(&self, x: &State, u: &ControlInput) -> State {
        residual_step(self, x, u)
    }
    fn step_size(&self) -> f64 {
        self.h
    }
}

/// Physics-only transition (zero residual), with the same trig
/// renormalization applied at every inference step.
#[derive(Clone, Copy, Debug)]
pub struct PhysicalModel {
    pub phys: PhysicalParams,
    pub h: f64,
}

impl TransitionModel for PhysicalModel {
    fn step(&self, x: &State, u: &ControlInput) -> State {
        let mut st = euler_step(x, u, &self.phys, self.h);
        let norm = st.s.hypot(st.c);
        debug_assert!(norm > 0.0);
        st.s /= norm;
        st.c /= norm;
        st
    }
    fn step_size(&self) -> f64 {
        self.h
    }
}

/// Purely learned transition: the network maps normalized (state, input)
/// directly to the normalized next state (7 outputs), then trig
/// renormalization. Used as the "standard NN" baseline in the model
/// comparison.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StandardNnModel {
    pub nn: MlpParams,
    pub h: f64,
}

impl StandardNnModel {
    pub fn validate(&self) -> Result<()> {
        self.nn.validate()?;
        if self.nn.out_dim() != STATE_DIM {
            return Err(Error::Config(format!(
                "standard NN must emit {} dims, got {}",
                STATE_DIM,
                self.nn.out_dim()
            )));
        }
        if !(self.h > 0.0) {
            return Err(Error::Config("h must be positive".into()));
        }
        Ok(())
    }
}

impl TransitionModel for StandardNnModel {
    fn step(&self, x: &State, u: &ControlInput) -> State {
        let z = self.nn.normalize_input(x, u);
        let mut out = [0.0; STATE_DIM];
        self.nn.forward_raw(&z, &mut out);
        for i in 0..STATE_DIM {
            out[i] *= self.nn.state_scales[i];
        }
        let mut st = State::from_array(out);
        let norm = st.s.hypot(st.c);
        if norm > 0.0 {
            st.s /= norm;
            st.c /= norm;
        }
        st
    }
    fn step_size(&self) -> f64 {
        self.h
    }
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema_version: u32,
    #[serde(flatten)]
    model: ResidualDynamicsModel,
}

pub fn save_model(m: &ResidualDynamicsModel, path: &std::path::Path) -> Result<()> {
    let file = ModelFile { schema_version: MODEL_SCHEMA_VERSION, model: m.clone() };
    let json = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_model(path: &std::path::Path) -> Result<ResidualDynamicsModel> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&text)?;
    if file.schema_version != MODEL_SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "model schema version {} unsupported (expected {})",
            file.schema_version, MODEL_SCHEMA_VERSION
        )));
    }
    file.model.validate()?;
    Ok(file.model)
}
