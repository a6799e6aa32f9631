//! Experiment configuration files.
//!
//! A config is TOML with nested tables. Unknown keys are rejected. Times may be
//! given as numbers in units of ω⁻¹ or as multiples of π, e.g. `"40pi"`.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::dynamics::Integrator;
use crate::metrics::MachineRole;
use crate::model::{MachineParams, ModelError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

/// A time (or any scalar) accepted either as a number or as a multiple of π.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Scalar(pub f64);

impl Scalar {
    /// Parses `"3.5"`, `"40pi"`, `"40π"`, `"2*pi"`, `"pi/2"` or `"pi"`.
    pub fn parse(s: &str) -> Option<f64> {
        let t: String = s.chars().filter(|c| !c.is_whitespace()).collect::<String>().to_lowercase();
        let t = t.replace('π', "pi");
        if let Some(pos) = t.find("pi") {
            let (head, tail) = (&t[..pos], &t[pos + 2..]);
            let head = head.strip_suffix('*').unwrap_or(head);
            let coeff = match head {
                "" => 1.0,
                "-" => -1.0,
                h => h.parse::<f64>().ok()?,
            };
            let div = match tail {
                "" => 1.0,
                tl => tl.strip_prefix('/')?.parse::<f64>().ok()?,
            };
            Some(coeff * PI / div)
        } else {
            t.parse::<f64>().ok()
        }
    }
}

impl Serialize for Scalar {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.0)
    }
}

impl<'de> Deserialize<'de> for Scalar {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Scalar;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or a multiple of pi such as \"40pi\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Scalar, E> {
                Ok(Scalar(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Scalar, E> {
                Ok(Scalar(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Scalar, E> {
                Ok(Scalar(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Scalar, E> {
                Scalar::parse(v)
                    .map(Scalar)
                    .ok_or_else(|| E::invalid_value(de::Unexpected::Str(v), &self))
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    EnginePreset,
    RefrigeratorPreset,
    Custom,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitoring {
    /// Single measurement after the final cycle.
    #[default]
    Unmeasured,
    /// Projective battery energy measurement after every cycle.
    #[serde(alias = "per-cycle", alias = "measured")]
    PerCycle,
}

impl Monitoring {
    pub fn is_measured(self) -> bool {
        matches!(self, Monitoring::PerCycle)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Monitoring::Unmeasured => "unmeasured",
            Monitoring::PerCycle => "per_cycle",
        }
    }
}

impl std::str::FromStr for Monitoring {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "unmeasured" => Ok(Monitoring::Unmeasured),
            "per-cycle" | "per_cycle" | "measured" => Ok(Monitoring::PerCycle),
            other => Err(format!("unknown monitoring scheme {other:?}")),
        }
    }
}

/// Overrides applied on top of a preset. In `custom` mode they must be complete.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineOverrides {
    pub delta: Option<f64>,
    pub sweep_rate: Option<f64>,
    /// Final longitudinal field `vT₁`; alternative to `sweep_rate`.
    pub field_span: Option<f64>,
    pub work_time: Option<Scalar>,
    pub therm_time: Option<Scalar>,
    pub coupling: Option<f64>,
    pub level_spacing: Option<f64>,
    pub levels: Option<usize>,
    pub beta_hot: Option<f64>,
    pub beta_cold: Option<f64>,
}

impl MachineOverrides {
    /// Applies the overrides. Changing `work_time` alone keeps `vT₁` fixed.
    pub fn apply(&self, mode: Mode) -> Result<MachineParams, ConfigError> {
        if self.sweep_rate.is_some() && self.field_span.is_some() {
            return invalid("give either machine.sweep_rate or machine.field_span, not both");
        }
        let mut p = match mode {
            Mode::EnginePreset => MachineParams::engine_preset(),
            Mode::RefrigeratorPreset => MachineParams::refrigerator_preset(),
            Mode::Custom => {
                let missing: Vec<&str> = [
                    ("delta", self.delta.is_none()),
                    ("work_time", self.work_time.is_none()),
                    ("sweep_rate or field_span", self.sweep_rate.is_none() && self.field_span.is_none()),
                    ("coupling", self.coupling.is_none()),
                    ("levels", self.levels.is_none()),
                    ("beta_hot", self.beta_hot.is_none()),
                    ("beta_cold", self.beta_cold.is_none()),
                ]
                .iter()
                .filter_map(|(k, m)| m.then_some(*k))
                .collect();
                if !missing.is_empty() {
                    return invalid(format!("custom mode needs machine.{}", missing.join(", machine.")));
                }
                MachineParams::with_field_span(1.0, 1.0, 1.0, 0.0, 1, 0.0, 0.0)
            }
        };
        let span = p.field_span();
        if let Some(v) = self.delta {
            p.delta = v;
        }
        if let Some(v) = self.work_time {
            p.work_time = v.0;
        }
        p.sweep_rate = match (self.sweep_rate, self.field_span) {
            (Some(v), _) => v,
            (None, Some(s)) => s / p.work_time,
            (None, None) => span / p.work_time,
        };
        if let Some(v) = self.therm_time {
            p.therm_time = v.0;
        }
        if let Some(v) = self.coupling {
            p.coupling = v;
        }
        if let Some(v) = self.level_spacing {
            p.level_spacing = v;
        }
        if let Some(v) = self.levels {
            p.levels = v;
        }
        if let Some(v) = self.beta_hot {
            p.beta_hot = v;
        }
        if let Some(v) = self.beta_cold {
            p.beta_cold = v;
        }
        p.validate()?;
        Ok(p)
    }
}

/// Parameters a sweep axis can vary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// `T₁` at fixed `vT₁`.
    WorkTime,
    ThermTime,
    Coupling,
    Delta,
    FieldSpan,
    Levels,
    BetaHot,
    BetaCold,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::WorkTime => "work_time",
            SweepParameter::ThermTime => "therm_time",
            SweepParameter::Coupling => "coupling",
            SweepParameter::Delta => "delta",
            SweepParameter::FieldSpan => "field_span",
            SweepParameter::Levels => "levels",
            SweepParameter::BetaHot => "beta_hot",
            SweepParameter::BetaCold => "beta_cold",
        }
    }

    pub fn apply(self, p: &mut MachineParams, value: f64) {
        match self {
            SweepParameter::WorkTime => {
                let span = p.field_span();
                p.work_time = value;
                p.sweep_rate = span / value;
            }
            SweepParameter::ThermTime => p.therm_time = value,
            SweepParameter::Coupling => p.coupling = value,
            SweepParameter::Delta => p.delta = value,
            SweepParameter::FieldSpan => p.sweep_rate = value / p.work_time,
            SweepParameter::Levels => p.levels = value.round().max(0.0) as usize,
            SweepParameter::BetaHot => p.beta_hot = value,
            SweepParameter::BetaCold => p.beta_cold = value,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub parameter: SweepParameter,
    pub min: Scalar,
    pub max: Scalar,
    pub count: usize,
}

impl SweepAxis {
    /// Default `T₁` grid: 30 points on `[2π, 60π]`.
    pub fn default_work_time() -> Self {
        Self {
            parameter: SweepParameter::WorkTime,
            min: Scalar(2.0 * PI),
            max: Scalar(60.0 * PI),
            count: 30,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        crate::analytic::GridAxis::new(self.min.0, self.max.0, self.count).values()
    }
}

/// Metric names accepted in `outputs`.
pub const METRIC_NAMES: [&str; 12] = [
    "q_hot",
    "q_cold",
    "work",
    "e_battery",
    "variance",
    "coeff_var",
    "ergotropy",
    "erg_incoherent",
    "erg_coherent",
    "speed_e",
    "speed_erg",
    "populations",
];

fn default_output_path() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub machine: MachineOverrides,
    #[serde(default)]
    pub monitoring: Monitoring,
    pub cycles: usize,
    #[serde(default)]
    pub sweep: Vec<SweepAxis>,
    /// Requested metrics. The scalar columns are always written; `populations`
    /// adds the `pop_l` columns.
    #[serde(default)]
    pub outputs: Vec<String>,
    #[serde(default = "default_output_path")]
    pub output_path: PathBuf,
    /// Criterion for the critical cycles; inferred from the first cycle if absent.
    #[serde(default)]
    pub role: Option<MachineRole>,
    #[serde(default)]
    pub integrator: Integrator,
    /// Directory for cached work-stroke propagators.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

/// One fully resolved trajectory to run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    /// Sweep coordinates of this point, in axis order.
    pub point: Vec<(SweepParameter, f64)>,
    pub params: MachineParams,
    pub monitoring: Monitoring,
    pub cycles: usize,
    pub keep_populations: bool,
    pub role: Option<MachineRole>,
}

impl ExperimentConfig {
    /// A config for one of the presets with every other field defaulted.
    pub fn preset(mode: Mode, cycles: usize) -> Self {
        Self {
            mode,
            machine: MachineOverrides::default(),
            monitoring: Monitoring::default(),
            cycles,
            sweep: Vec::new(),
            outputs: Vec::new(),
            output_path: default_output_path(),
            role: None,
            integrator: Integrator::default(),
            cache_dir: None,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.cycles < 1 {
            return invalid("cycles must be at least 1");
        }
        if let Some(bad) = self.outputs.iter().find(|o| !METRIC_NAMES.contains(&o.as_str())) {
            return invalid(format!("unknown metric {bad:?}"));
        }
        for (i, a) in self.sweep.iter().enumerate() {
            if a.count == 0 {
                return invalid(format!("sweep axis {} has no points", a.parameter.name()));
            }
            if self.sweep[..i].iter().any(|b| b.parameter == a.parameter) {
                return invalid(format!("sweep axis {} given twice", a.parameter.name()));
            }
        }
        self.machine.apply(self.mode)?;
        Ok(())
    }

    /// The base parameters before sweeping.
    pub fn machine_params(&self) -> Result<MachineParams, ConfigError> {
        self.machine.apply(self.mode)
    }

    pub fn keep_populations(&self) -> bool {
        self.outputs.iter().any(|o| o == "populations")
    }

    fn default_role(&self) -> Option<MachineRole> {
        self.role.or(match self.mode {
            Mode::EnginePreset => Some(MachineRole::Engine),
            Mode::RefrigeratorPreset => Some(MachineRole::Refrigerator),
            Mode::Custom => None,
        })
    }

    /// Expands the sweep into trajectories, first axis slowest.
    pub fn runs(&self) -> Result<Vec<RunSpec>, ConfigError> {
        self.validate()?;
        let base = self.machine_params()?;
        let mut points: Vec<Vec<(SweepParameter, f64)>> = vec![Vec::new()];
        for axis in &self.sweep {
            let values = axis.values();
            points = points
                .into_iter()
                .flat_map(|pt| {
                    values.iter().map(move |v| {
                        let mut next = pt.clone();
                        next.push((axis.parameter, *v));
                        next
                    })
                })
                .collect();
        }
        points
            .into_iter()
            .map(|point| {
                let mut params = base.clone();
                for (axis, v) in &point {
                    axis.apply(&mut params, *v);
                }
                params.validate()?;
                Ok(RunSpec {
                    point,
                    params,
                    monitoring: self.monitoring,
                    cycles: self.cycles,
                    keep_populations: self.keep_populations(),
                    role: self.default_role(),
                })
            })
            .collect()
    }
}
