use serde::{Deserialize, Serialize};

use pgmpc::options::{OptionError, OptionValue, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    /// Fixed horizon MPC in closed loop with the plant.
    Mpc,
    /// Free end time MPC whose horizon shrinks until `T_min`.
    ShrinkingMpc,
    /// A single optimal control problem, no plant.
    Ocp,
    /// MPC fed by a moving horizon estimator from noisy outputs.
    MpcMhe,
}

/// Run configuration of one benchmark. Times are in the model's time unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub kind: ScenarioKind,
    pub x0: Vec<f64>,
    pub x_des: Vec<f64>,
    pub u_des: Vec<f64>,
    /// Prediction horizon, or the initial one in shrinking mode.
    pub horizon: f64,
    pub dt: f64,
    /// Stop threshold of the shrinking horizon.
    pub t_min: f64,
    /// Simulated duration; an upper bound in shrinking mode.
    pub duration: f64,
    pub seed: u64,
    /// Write measured step times into the CSV log.
    pub log_timing: bool,
    /// Plant states logged per sampling interval.
    pub log_substeps: usize,
    pub options: SolverOptions,
    /// Estimator settings of [`ScenarioKind::MpcMhe`].
    pub mhe: Option<MheSettings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MheSettings {
    pub window: f64,
    pub noise_std: f64,
    pub options: SolverOptions,
}

/// Keys handled by [`Scenario::set`] in addition to the solver keys.
pub const SCENARIO_KEYS: &[&str] = &[
    "Thor", "dt", "Tsim", "Tmin", "Seed", "LogTiming", "LogSubsteps", "x0", "xdes", "udes",
    "MheThor", "MheNoiseStd",
];

/// Prefix routing a solver key to the estimator, e.g. `MheNhor`.
pub const MHE_PREFIX: &str = "Mhe";

impl Scenario {
    /// Sets a scenario or solver option by key.
    pub fn set(&mut self, key: &str, value: &OptionValue) -> Result<(), OptionError> {
        let positive = |v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(OptionError::InvalidValue { key: key.into(), reason: "must be positive".into() })
            }
        };
        match key {
            "Thor" => self.horizon = positive(value.as_f64(key)?)?,
            "dt" => self.dt = positive(value.as_f64(key)?)?,
            "Tmin" => self.t_min = positive(value.as_f64(key)?)?,
            "Tsim" => {
                let v = value.as_f64(key)?;
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(OptionError::InvalidValue { key: key.into(), reason: "must be non-negative".into() });
                }
                self.duration = v;
            }
            "Seed" => self.seed = value.as_usize(key)? as u64,
            "LogTiming" => self.log_timing = value.as_bool(key)?,
            "LogSubsteps" => {
                self.log_substeps = value.as_usize(key)?;
                if self.log_substeps == 0 {
                    return Err(OptionError::InvalidValue { key: key.into(), reason: "must be at least 1".into() });
                }
            }
            "x0" => self.x0 = sized(key, value, self.x0.len())?,
            "xdes" => self.x_des = sized(key, value, self.x_des.len())?,
            "udes" => self.u_des = sized(key, value, self.u_des.len())?,
            "MheThor" | "MheNoiseStd" => {
                let mhe = self.mhe.as_mut().ok_or_else(|| OptionError::UnknownKey(key.into()))?;
                let v = value.as_f64(key)?;
                if key == "MheThor" {
                    mhe.window = positive(v)?;
                } else if v >= 0.0 {
                    mhe.noise_std = v;
                } else {
                    return Err(OptionError::InvalidValue { key: key.into(), reason: "must be non-negative".into() });
                }
            }
            _ => match (key.strip_prefix(MHE_PREFIX), self.mhe.as_mut()) {
                (Some(inner), Some(mhe)) if pgmpc::options::SOLVER_KEYS.contains(&inner) => {
                    mhe.options.set(inner, value)?
                }
                _ => self.options.set(key, value)?,
            },
        }
        Ok(())
    }

    /// Every settable key with its current value.
    pub fn entries(&self) -> Vec<(String, OptionValue)> {
        use OptionValue::{Bool, List, Number};
        let mut out: Vec<(String, OptionValue)> = vec![
            ("Thor".into(), Number(self.horizon)),
            ("dt".into(), Number(self.dt)),
            ("Tsim".into(), Number(self.duration)),
            ("Tmin".into(), Number(self.t_min)),
            ("Seed".into(), Number(self.seed as f64)),
            ("LogTiming".into(), Bool(self.log_timing)),
            ("LogSubsteps".into(), Number(self.log_substeps as f64)),
            ("x0".into(), List(self.x0.clone())),
            ("xdes".into(), List(self.x_des.clone())),
            ("udes".into(), List(self.u_des.clone())),
        ];
        out.extend(self.options.entries().into_iter().map(|(k, v)| (k.to_string(), v)));
        if let Some(mhe) = &self.mhe {
            out.push(("MheThor".into(), Number(mhe.window)));
            out.push(("MheNoiseStd".into(), Number(mhe.noise_std)));
            out.extend(mhe.options.entries().into_iter().map(|(k, v)| (format!("{MHE_PREFIX}{k}"), v)));
        }
        out
    }

    /// Cross-field checks before a run.
    pub fn validate(&self) -> Result<(), OptionError> {
        self.options.validate()?;
        if let Some(mhe) = &self.mhe {
            mhe.options.validate()?;
        }
        let invalid = |key: &str, reason: &str| OptionError::InvalidValue { key: key.into(), reason: reason.into() };
        if self.kind != ScenarioKind::Ocp && self.dt > self.horizon {
            return Err(invalid("dt", "must not exceed Thor"));
        }
        if self.kind == ScenarioKind::ShrinkingMpc && self.t_min > self.horizon {
            return Err(invalid("Tmin", "must not exceed Thor"));
        }
        Ok(())
    }

    /// Number of closed-loop samples covered by the duration.
    pub fn steps(&self) -> usize {
        (self.duration / self.dt + 1e-9).floor() as usize
    }
}

fn sized(key: &str, value: &OptionValue, n: usize) -> Result<Vec<f64>, OptionError> {
    let v = value.as_list(key)?;
    if v.len() != n {
        return Err(OptionError::InvalidValue { key: key.into(), reason: format!("expects {n} entries") });
    }
    Ok(v)
}
