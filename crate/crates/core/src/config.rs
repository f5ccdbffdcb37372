//! One configuration tree for the whole toolkit. Every leaf has a default
//! matching the reference parameter set; a config file only needs the fields
//! it changes, and `--set key.path=value` overrides win over the file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::control::{InputConstraints, OptimizerConfig, PidConfig, PidGains};
use crate::cost::CostWeights;
use crate::data::{GroundTruthPlant, InjectedResidual, PreprocessConfig};
use crate::dynamics::{ControlInput, PhysicalParams};
use crate::error::{Error, Result};
use crate::learning::TrainConfig;
use crate::path::Pose;
use crate::sim::{ControllerKind, Scenario, ScenarioSpec};

/// Control step shared by the plant, the planners, and the identified
/// models [s].
pub const H_CONTROL: f64 = 0.0667;

// ---------------------------------------------------------------------------
// Sections
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSection {
    pub phys: PhysicalParams,
    pub residual: InjectedResidual,
    /// Per-step process noise std on (vX, vY, r).
    pub noise_std: [f64; 3],
    /// Plant step for closed-loop control [s].
    pub h_control: f64,
}

impl Default for PlantSection {
    fn default() -> Self {
        PlantSection {
            phys: PhysicalParams { k_a: 0.00175, k_v: 0.7, k_delta: 1.6, k_r: 1.5 },
            residual: InjectedResidual::default(),
            noise_std: [1e-4, 1e-4, 2e-4],
            h_control: H_CONTROL,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub n_logs: usize,
    /// Duration of each raw log [s].
    pub log_duration: f64,
    pub log_seed: u64,
    pub preprocess: PreprocessConfig,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            n_logs: 12,
            log_duration: 394.0,
            log_seed: 42,
            preprocess: PreprocessConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    /// Hidden-layer widths of the correction network.
    pub hidden: Vec<usize>,
    /// Speed scale of the residual gate [m/s].
    pub v_th: f64,
    pub train: TrainConfig,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection { hidden: vec![50, 50], v_th: 0.20, train: TrainConfig::default() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSection {
    pub optimizer: OptimizerConfig,
    pub weights: CostWeights,
    pub constraints: InputConstraints,
    pub pid: PidConfig,
    pub theta0: PidGains,
}

impl Default for ControlSection {
    fn default() -> Self {
        ControlSection {
            optimizer: OptimizerConfig {
                n_horizon: 60,
                n_samples: 2048,
                n_iter: 3,
                lambda: 1.0,
                sigma_u: [8.0, 6.0],
                sigma_theta: [10.0, 0.1, 5.0, 30.0, 0.05, 2.0, 20.0, 0.05, 2.0],
                seed: 0,
                parallel: true,
            },
            weights: CostWeights {
                w_v: 50.0,
                w_path: 500.0,
                w_align: 10.0,
                w_du: 0.05,
                w_goal: 50_000.0,
                eps_goal_pos: 0.10,
                eps_goal_vel: 0.04,
                v_ref: 0.10,
            },
            constraints: InputConstraints {
                u_min: [0.0, -65.0],
                u_max: [100.0, 65.0],
                du_min: [-2.13, -6.67],
                du_max: [2.13, 6.67],
            },
            pid: PidConfig {
                u_bias: ControlInput::new(40.0, 0.0),
                error_signs: [1.0, -1.0, -1.0],
            },
            theta0: PidGains([50.0, 0.2, 10.0, 100.0, 0.1, 5.0, 150.0, 0.1, 3.0]),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub path_points: usize,
    pub start_speed: f64,
    pub straight_length: f64,
    pub straight_duration: f64,
    pub curve_goal: Pose,
    pub curve_duration: f64,
    pub scurve_mid: Pose,
    pub scurve_goal: Pose,
    pub scurve_leg_duration: f64,
    /// Seeds for matrix runs (one run per seed per cell).
    pub seeds: Vec<u64>,
    pub sample_counts: Vec<usize>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection {
            path_points: 800,
            start_speed: 0.0,
            straight_length: 8.0,
            straight_duration: 150.0,
            curve_goal: Pose::new(5.0, 5.0, std::f64::consts::FRAC_PI_2),
            curve_duration: 110.0,
            scurve_mid: Pose::new(5.0, 5.0, std::f64::consts::FRAC_PI_2),
            scurve_goal: Pose::new(10.0, 10.0, 0.0),
            scurve_leg_duration: 130.0,
            seeds: vec![1, 2, 3, 4, 5],
            sample_counts: vec![2048, 16],
        }
    }
}

// ---------------------------------------------------------------------------
// Top-level config
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantSection,
    pub data: DataSection,
    pub training: TrainingSection,
    pub control: ControlSection,
    pub scenarios: ScenarioSection,
    pub output_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            plant: PlantSection::default(),
            data: DataSection::default(),
            training: TrainingSection::default(),
            control: ControlSection::default(),
            scenarios: ScenarioSection::default(),
            output_dir: "out".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.plant.phys.validate()?;
        if self.plant.noise_std.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("plant noise std must be ≥ 0".into()));
        }
        if !(self.plant.h_control > 0.0) {
            return Err(Error::Config("plant step must be positive".into()));
        }
        self.data.preprocess.validate()?;
        if self.training.hidden.is_empty()
            || self.training.hidden.iter().any(|w| *w == 0 || *w > crate::dynamics::MLP_MAX_WIDTH)
        {
            return Err(Error::Config(format!(
                "hidden widths must be 1..={}, got {:?}",
                crate::dynamics::MLP_MAX_WIDTH,
                self.training.hidden
            )));
        }
        if !(self.training.v_th > 0.0) {
            return Err(Error::Config("v_th must be positive".into()));
        }
        self.training.train.validate()?;
        self.control.optimizer.validate()?;
        self.control.weights.validate()?;
        self.control.constraints.validate()?;
        if !self.control.theta0.is_finite() {
            return Err(Error::Config("theta0 must be finite".into()));
        }
        if self.scenarios.path_points < 2 {
            return Err(Error::Config("path_points must be ≥ 2".into()));
        }
        if self.scenarios.seeds.is_empty() || self.scenarios.sample_counts.is_empty() {
            return Err(Error::Config("need at least one seed and one sample count".into()));
        }
        Ok(())
    }

    /// The simulated vehicle for closed-loop runs (control step, not the
    /// 15 Hz logging step).
    pub fn control_plant(&self) -> GroundTruthPlant {
        GroundTruthPlant {
            phys: self.plant.phys,
            residual: self.plant.residual,
            noise_std: self.plant.noise_std,
            h_log: self.plant.h_control,
        }
    }

    /// The same vehicle at the data-logging rate.
    pub fn logging_plant(&self) -> GroundTruthPlant {
        GroundTruthPlant {
            phys: self.plant.phys,
            residual: self.plant.residual,
            noise_std: self.plant.noise_std,
            h_log: 1.0 / crate::data::LOG_RATE_HZ,
        }
    }

    fn leg(&self, name: &str, start: Pose, goal: Pose, duration: f64) -> Scenario {
        Scenario {
            name: name.to_string(),
            start,
            vehicle_start: None,
            start_speed: self.scenarios.start_speed,
            goal,
            path_points: self.scenarios.path_points,
            duration,
            v_ref_schedule: Vec::new(),
            constraints: self.control.constraints,
            weights: self.control.weights,
            optimizer: self.control.optimizer,
            pid: self.control.pid,
            theta0: self.control.theta0,
            controller: ControllerKind::MppiPid,
            seed: self.scenarios.seeds[0],
        }
    }

    /// Canonical scenario by name: `straight`, `curve90`, or `scurve`.
    pub fn scenario(&self, name: &str) -> Result<ScenarioSpec> {
        let sc = &self.scenarios;
        let origin = Pose::new(0.0, 0.0, 0.0);
        match name {
            "straight" => Ok(ScenarioSpec {
                legs: vec![self.leg(
                    "straight",
                    origin,
                    Pose::new(sc.straight_length, 0.0, 0.0),
                    sc.straight_duration,
                )],
            }),
            "curve90" => Ok(ScenarioSpec {
                legs: vec![self.leg("curve90", origin, sc.curve_goal, sc.curve_duration)],
            }),
            "scurve" => Ok(ScenarioSpec {
                legs: vec![
                    self.leg("scurve", origin, sc.scurve_mid, sc.scurve_leg_duration),
                    self.leg("scurve", sc.scurve_mid, sc.scurve_goal, sc.scurve_leg_duration),
                ],
            }),
            other => Err(Error::Config(format!(
                "unknown scenario '{other}' (expected straight | curve90 | scurve)"
            ))),
        }
    }

    pub fn scenario_names() -> [&'static str; 3] {
        ["straight", "curve90", "scurve"]
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

// ---------------------------------------------------------------------------
// Loading and overrides
// ---------------------------------------------------------------------------

fn deep_merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => deep_merge(slot, v),
                    // unknown key: keep it so deserialization rejects the typo
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Apply one `key.path=value` override. The value parses as JSON when it can
/// (numbers, booleans, arrays) and falls back to a plain string. Numeric path
/// segments index into arrays.
fn apply_set(root: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{spec}' is not key.path=value")))?;
    let val: Value =
        serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = path.split('.').collect();
    let (last, dirs) =
        parts.split_last().ok_or_else(|| Error::Config(format!("empty key in '{spec}'")))?;

    let mut cur = root;
    for p in dirs {
        cur = match cur {
            Value::Object(m) => m
                .get_mut(*p)
                .ok_or_else(|| Error::Config(format!("unknown config key '{p}' in '{path}'")))?,
            Value::Array(a) => {
                let idx: usize = p
                    .parse()
                    .map_err(|_| Error::Config(format!("'{p}' is not an array index")))?;
                a.get_mut(idx)
                    .ok_or_else(|| Error::Config(format!("index {idx} out of range in '{path}'")))?
            }
            _ => return Err(Error::Config(format!("'{p}' in '{path}' is not a container"))),
        };
    }
    match cur {
        Value::Object(m) => {
            if !m.contains_key(*last) {
                return Err(Error::Config(format!("unknown config key '{last}' in '{path}'")));
            }
            m.insert(last.to_string(), val);
        }
        Value::Array(a) => {
            let idx: usize = last
                .parse()
                .map_err(|_| Error::Config(format!("'{last}' is not an array index")))?;
            let slot = a
                .get_mut(idx)
                .ok_or_else(|| Error::Config(format!("index {idx} out of range in '{path}'")))?;
            *slot = val;
        }
        _ => return Err(Error::Config(format!("'{last}' in '{path}' is not settable"))),
    }
    Ok(())
}

/// Defaults, optionally merged with a JSON file, then with `--set` overrides;
/// schema-validated at the end (unknown keys are errors).
pub fn load_config(file: Option<&Path>, sets: &[String]) -> Result<ExperimentConfig> {
    let mut tree = serde_json::to_value(ExperimentConfig::default())?;
    if let Some(p) = file {
        let text = std::fs::read_to_string(p)?;
        let over: Value = serde_json::from_str(&text)?;
        deep_merge(&mut tree, over);
    }
    for s in sets {
        apply_set(&mut tree, s)?;
    }
    let cfg: ExperimentConfig = serde_json::from_value(tree)?;
    cfg.validate()?;
    Ok(cfg)
}
