//! Run configuration: a JSON document with defaults for everything except the
//! model constants, thresholds and initial populations.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::ipa::AndrogenSensitivity;
use crate::model::{HybridState, Mode, ModelParams, Params, ThetaIndex, Thresholds};
use crate::noise::NoiseConfig;

pub const DEFAULT_HORIZON: f64 = 2500.0;
pub const DEFAULT_DT: f64 = 0.01;
pub const DEFAULT_WEIGHT: f64 = 0.5;

/// Admissible threshold ranges; `theta1_max < theta2_min`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaBounds {
    pub theta1_min: f64,
    pub theta1_max: f64,
    pub theta2_min: f64,
    pub theta2_max: f64,
}

impl ThetaBounds {
    pub fn validate(&self) -> Result<()> {
        let ok = self.theta1_min <= self.theta1_max
            && self.theta2_min <= self.theta2_max
            && self.theta1_max < self.theta2_min;
        if ok {
            Ok(())
        } else {
            Err(Error::config("theta1_min <= theta1_max < theta2_min <= theta2_max violated"))
        }
    }

    pub fn contains(&self, th: &Thresholds) -> bool {
        (self.theta1_min..=self.theta1_max).contains(&th.theta1)
            && (self.theta2_min..=self.theta2_max).contains(&th.theta2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
    #[serde(default = "default_mode")]
    pub mode: Mode,
}

fn default_mode() -> Mode {
    Mode::On
}

impl InitialState {
    pub fn to_state(&self) -> HybridState {
        HybridState::new(self.mode, self.x1, self.x2, self.x3)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub params: Params,
    pub theta_bounds: Option<ThetaBounds>,
    pub weight_w: f64,
    pub horizon_t: f64,
    pub dt: f64,
    pub noise: NoiseConfig,
    pub init: InitialState,
    pub seed: u64,
    /// Sample every `record_stride` steps; 0 disables sample recording.
    pub record_stride: usize,
    pub androgen_sensitivity: AndrogenSensitivity,
}

/// On-disk layout.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    model: ModelParams,
    theta: Thresholds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    theta_bounds: Option<ThetaBounds>,
    #[serde(rename = "weight_W", default = "default_weight")]
    weight_w: f64,
    #[serde(rename = "horizon_T", default = "default_horizon")]
    horizon_t: f64,
    #[serde(default = "default_dt")]
    dt: f64,
    #[serde(default)]
    noise: NoiseConfig,
    init: InitialState,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_stride")]
    record_stride: usize,
    #[serde(default)]
    androgen_sensitivity: AndrogenSensitivity,
}

fn default_weight() -> f64 {
    DEFAULT_WEIGHT
}
fn default_horizon() -> f64 {
    DEFAULT_HORIZON
}
fn default_dt() -> f64 {
    DEFAULT_DT
}
fn default_stride() -> usize {
    1
}

const REQUIRED_MODEL_KEYS: [&str; 15] = [
    "alpha1", "alpha2", "beta1", "beta2", "k1", "k2", "k3", "k4", "m1", "x3_0", "sigma",
    "lambda1", "mu1", "mu3", "d",
];

fn missing_keys(root: &Value) -> Vec<String> {
    let mut missing = Vec::new();
    let groups: [(&str, &[&str]); 3] = [
        ("model", &REQUIRED_MODEL_KEYS),
        ("theta", &["theta1", "theta2"]),
        ("init", &["x1", "x2", "x3"]),
    ];
    for (group, keys) in groups {
        let node = root.get(group);
        for key in keys {
            if node.and_then(|n| n.get(*key)).is_none() {
                missing.push(format!("{group}.{key}"));
            }
        }
    }
    missing
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let root: Value = if text.trim().is_empty() {
            Value::Object(Default::default())
        } else {
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?
        };
        if !root.is_object() {
            return Err(Error::Parse("top level must be an object".into()));
        }
        let missing = missing_keys(&root);
        if !missing.is_empty() {
            return Err(Error::config(format!(
                "missing required keys: {}",
                missing.join(", ")
            )));
        }
        // Round-trip through text so unknown-key errors carry line/column.
        let file: FileConfig =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let cfg = RunConfig {
            params: Params {
                model: file.model,
                thresholds: file.theta,
            },
            theta_bounds: file.theta_bounds,
            weight_w: file.weight_w,
            horizon_t: file.horizon_t,
            dt: file.dt,
            noise: file.noise,
            init: file.init,
            seed: file.seed,
            record_stride: file.record_stride,
            androgen_sensitivity: file.androgen_sensitivity,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_string(&self) -> String {
        let file = FileConfig {
            model: self.params.model.clone(),
            theta: self.params.thresholds,
            theta_bounds: self.theta_bounds,
            weight_w: self.weight_w,
            horizon_t: self.horizon_t,
            dt: self.dt,
            noise: self.noise,
            init: self.init,
            seed: self.seed,
            record_stride: self.record_stride,
            androgen_sensitivity: self.androgen_sensitivity,
        };
        let mut s = serde_json::to_string_pretty(&file).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.noise.validate()?;
        if !(0.0..=1.0).contains(&self.weight_w) {
            return Err(Error::config("weight_W in [0, 1] violated"));
        }
        if !(self.horizon_t.is_finite() && self.horizon_t > 0.0) {
            return Err(Error::config("horizon_T > 0 violated"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0 && self.dt <= self.horizon_t) {
            return Err(Error::config("0 < dt <= horizon_T violated"));
        }
        let i = &self.init;
        for (name, v) in [("x1", i.x1), ("x2", i.x2), ("x3", i.x3)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("init.{name} >= 0 violated")));
            }
        }
        if let Some(b) = &self.theta_bounds {
            b.validate()?;
            if !b.contains(&self.params.thresholds) {
                return Err(Error::config("thresholds outside theta_bounds"));
            }
        }
        Ok(())
    }

    /// Whether `theta_i = value` is admissible for this configuration.
    pub fn check_theta(&self, i: ThetaIndex, value: f64) -> Result<()> {
        let p = self.params.with_theta(i, value);
        p.validate()?;
        if let Some(b) = &self.theta_bounds {
            if !b.contains(&p.thresholds) {
                return Err(Error::config(format!(
                    "theta{i} = {value} outside admissible range"
                )));
            }
        }
        Ok(())
    }

    pub fn with_theta(&self, i: ThetaIndex, value: f64) -> RunConfig {
        let mut c = self.clone();
        c.params.set_theta(i, value);
        c
    }

    pub fn with_thresholds(&self, theta1: f64, theta2: f64) -> RunConfig {
        let mut c = self.clone();
        c.params.thresholds = Thresholds { theta1, theta2 };
        c
    }

    /// Same configuration with every noise source switched off.
    pub fn deterministic(&self) -> RunConfig {
        let mut c = self.clone();
        c.noise = NoiseConfig::silent();
        c
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    RunConfig::from_json_str(&text)
}

/// Built-in cyclic configuration. The constants are illustrative, chosen so
/// that a 2500-day horizon shows several full treatment cycles with the
/// thresholds at [1.5, 8.0]; they are not fitted to any patient.
pub fn default_config() -> RunConfig {
    RunConfig {
        params: Params {
            model: ModelParams {
                alpha1: 0.025,
                alpha2: 0.015,
                beta1: 0.008,
                beta2: 0.012,
                k1: 4.0,
                k2: 1.0,
                k3: 6.0,
                k4: 0.5,
                m1: 1e-4,
                x3_0: 12.0,
                sigma: 5.0,
                lambda1: 0.01,
                mu1: 1e-3,
                mu3: 0.02,
                d: 1.0,
            },
            thresholds: Thresholds {
                theta1: 1.5,
                theta2: 8.0,
            },
        },
        theta_bounds: Some(ThetaBounds {
            theta1_min: 0.5,
            theta1_max: 7.5,
            theta2_min: 7.75,
            theta2_max: 16.0,
        }),
        weight_w: DEFAULT_WEIGHT,
        horizon_t: DEFAULT_HORIZON,
        dt: DEFAULT_DT,
        noise: NoiseConfig::default(),
        init: InitialState {
            x1: 7.9,
            x2: 0.1,
            x3: 12.1,
            mode: Mode::On,
        },
        seed: 0,
        record_stride: 1,
        androgen_sensitivity: AndrogenSensitivity::default(),
    }
}
