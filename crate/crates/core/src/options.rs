//! Solver options and their flat key/value schema.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auglag::UpdateParams;
use crate::integrators::{IntegratorChoice, Rk45Tolerances};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LineSearchKind {
    Adaptive,
    Explicit1,
    Explicit2,
}

impl LineSearchKind {
    pub fn name(&self) -> &'static str {
        match self {
            LineSearchKind::Adaptive => "adaptive",
            LineSearchKind::Explicit1 => "explicit1",
            LineSearchKind::Explicit2 => "explicit2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSearchConfig {
    pub kind: LineSearchKind,
    /// Middle sample of the first adaptive interval; fallback step of the explicit variants.
    pub init: f64,
    pub min: f64,
    pub max: f64,
    /// Factor by which the adaptive interval moves when the step hits a border.
    pub adapt_factor: f64,
    /// Half width of the adaptive interval relative to its middle sample.
    pub interval_factor: f64,
    /// Fraction of the interval width treated as "at the border".
    pub interval_tol: f64,
    pub gamma_p: f64,
    pub gamma_t: f64,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        LineSearchConfig {
            kind: LineSearchKind::Adaptive,
            init: 1e-4,
            min: 1e-10,
            max: 1e2,
            adapt_factor: 2.0,
            interval_factor: 0.85,
            interval_tol: 0.1,
            gamma_p: 1.0,
            gamma_t: 1.0,
        }
    }
}

/// Augmented Lagrangian settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlOptions {
    pub eps_rel_c: f64,
    pub eps_rel_u: f64,
    /// Either one value or one per constraint, stacked as `[g, h, g_T, h_T]`.
    pub constraints_abs_tol: Vec<f64>,
    pub rho: f64,
    pub beta_in: f64,
    pub beta_de: f64,
    pub gamma_in: f64,
    pub gamma_de: f64,
    pub mu_max: f64,
    pub c_min: f64,
    pub c_max: f64,
    pub c_init: f64,
    pub mu_init: f64,
    /// Raise `c_min` from the initial trajectory on the first solve.
    pub estimate_c_min: bool,
}

impl Default for AlOptions {
    fn default() -> Self {
        AlOptions {
            eps_rel_c: 1e-6,
            eps_rel_u: 1e-5,
            constraints_abs_tol: vec![1e-4],
            rho: 0.0,
            beta_in: 2.0,
            beta_de: 0.5,
            gamma_in: 0.9,
            gamma_de: 0.2,
            mu_max: 1e6,
            c_min: 1e-4,
            c_max: 1e6,
            c_init: 1.0,
            mu_init: 0.0,
            estimate_c_min: false,
        }
    }
}

impl AlOptions {
    pub fn update_params(&self) -> UpdateParams {
        UpdateParams {
            rho: self.rho,
            eps_rel_u: self.eps_rel_u,
            mu_max: self.mu_max,
            beta_in: self.beta_in,
            beta_de: self.beta_de,
            gamma_in: self.gamma_in,
            gamma_de: self.gamma_de,
            c_min: self.c_min,
            c_max: self.c_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntegratorKind {
    Euler,
    ModifiedEuler,
    Heun,
    Rk45,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub n_hor: usize,
    pub max_grad_iter: usize,
    pub max_mult_iter: usize,
    pub integrator: IntegratorKind,
    /// Used only with [`IntegratorKind::Rk45`].
    pub rk45: Rk45Tolerances,
    pub line_search: LineSearchConfig,
    pub optim_param: bool,
    pub optim_time: bool,
    pub al: AlOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            n_hor: 30,
            max_grad_iter: 2,
            max_mult_iter: 1,
            integrator: IntegratorKind::Heun,
            rk45: Rk45Tolerances::default(),
            line_search: LineSearchConfig::default(),
            optim_param: false,
            optim_time: false,
            al: AlOptions::default(),
        }
    }
}

/// A single option value as given on the command line or in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OptionValue {
    Bool(bool),
    Number(f64),
    List(Vec<f64>),
    Text(String),
}

impl OptionValue {
    /// Parses `true`/`false`, a number, a comma separated list (optionally
    /// bracketed) or falls back to text.
    pub fn parse(raw: &str) -> OptionValue {
        let s = raw.trim();
        match s {
            "true" | "on" => return OptionValue::Bool(true),
            "false" | "off" => return OptionValue::Bool(false),
            _ => {}
        }
        if let Ok(v) = s.parse::<f64>() {
            return OptionValue::Number(v);
        }
        let inner = s.strip_prefix('[').and_then(|r| r.strip_suffix(']')).unwrap_or(s);
        if inner.contains(',') || s.starts_with('[') {
            let parsed: Result<Vec<f64>, _> = inner
                .split(',')
                .map(str::trim)
                .filter(|p| !p.is_empty())
                .map(str::parse::<f64>)
                .collect();
            if let Ok(list) = parsed {
                return OptionValue::List(list);
            }
        }
        OptionValue::Text(s.to_string())
    }

    pub fn as_f64(&self, key: &str) -> Result<f64, OptionError> {
        match self {
            OptionValue::Number(v) => Ok(*v),
            OptionValue::List(l) if l.len() == 1 => Ok(l[0]),
            _ => Err(OptionError::type_mismatch(key, "number")),
        }
    }

    pub fn as_usize(&self, key: &str) -> Result<usize, OptionError> {
        let v = self.as_f64(key).map_err(|_| OptionError::type_mismatch(key, "integer"))?;
        if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
            Ok(v as usize)
        } else {
            Err(OptionError::type_mismatch(key, "integer"))
        }
    }

    pub fn as_bool(&self, key: &str) -> Result<bool, OptionError> {
        match self {
            OptionValue::Bool(b) => Ok(*b),
            OptionValue::Number(v) if *v == 0.0 || *v == 1.0 => Ok(*v == 1.0),
            _ => Err(OptionError::type_mismatch(key, "boolean")),
        }
    }

    pub fn as_list(&self, key: &str) -> Result<Vec<f64>, OptionError> {
        match self {
            OptionValue::List(l) => Ok(l.clone()),
            OptionValue::Number(v) => Ok(vec![*v]),
            _ => Err(OptionError::type_mismatch(key, "list of numbers")),
        }
    }

    pub fn as_text(&self, key: &str) -> Result<&str, OptionError> {
        match self {
            OptionValue::Text(s) => Ok(s),
            _ => Err(OptionError::type_mismatch(key, "string")),
        }
    }
}

impl fmt::Display for OptionValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptionValue::Bool(b) => write!(f, "{b}"),
            OptionValue::Number(v) => write!(f, "{v}"),
            OptionValue::List(l) => {
                let parts: Vec<String> = l.iter().map(|v| v.to_string()).collect();
                write!(f, "[{}]", parts.join(","))
            }
            OptionValue::Text(s) => write!(f, "{s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptionError {
    #[error("unknown option key '{0}'")]
    UnknownKey(String),
    #[error("option '{key}' expects a {expected}")]
    TypeMismatch { key: String, expected: &'static str },
    #[error("invalid value for option '{key}': {reason}")]
    InvalidValue { key: String, reason: String },
}

impl OptionError {
    fn type_mismatch(key: &str, expected: &'static str) -> Self {
        OptionError::TypeMismatch {
            key: key.to_string(),
            expected,
        }
    }

    fn invalid(key: &str, reason: impl Into<String>) -> Self {
        OptionError::InvalidValue {
            key: key.to_string(),
            reason: reason.into(),
        }
    }
}

/// Keys understood by [`SolverOptions::set`].
pub const SOLVER_KEYS: &[&str] = &[
    "Nhor",
    "MaxGradIter",
    "MaxMultIter",
    "Integrator",
    "IntegratorRelTol",
    "IntegratorAbsTol",
    "IntegratorMinStepSize",
    "LineSearch",
    "LineSearchInit",
    "LineSearchMin",
    "LineSearchMax",
    "LineSearchAdaptFactor",
    "LineSearchIntervalFactor",
    "LineSearchIntervalTol",
    "OptimParam",
    "OptimTime",
    "OptimParamLineSearchFactor",
    "OptimTimeLineSearchFactor",
    "ConvergenceGradientRelTol",
    "ConstraintsAbsTol",
    "AugLagUpdateGradientRelTol",
    "MultiplierMax",
    "MultiplierDampingFactor",
    "PenaltyMax",
    "PenaltyMin",
    "PenaltyIncreaseFactor",
    "PenaltyDecreaseFactor",
    "PenaltyIncreaseThreshold",
    "PenaltyDecreaseThreshold",
    "PenaltyInit",
    "MultiplierInit",
    "EstimatePenaltyMin",
];

impl SolverOptions {
    pub fn integrator_choice(&self) -> IntegratorChoice {
        match self.integrator {
            IntegratorKind::Euler => IntegratorChoice::Euler,
            IntegratorKind::ModifiedEuler => IntegratorChoice::ModifiedEuler,
            IntegratorKind::Heun => IntegratorChoice::Heun,
            IntegratorKind::Rk45 => IntegratorChoice::Rk45(self.rk45),
        }
    }

    /// Sets one option by key; the value is type-checked but cross-option
    /// invariants are left to [`SolverOptions::validate`].
    pub fn set(&mut self, key: &str, value: &OptionValue) -> Result<(), OptionError> {
        match key {
            "Nhor" => self.n_hor = value.as_usize(key)?,
            "MaxGradIter" => self.max_grad_iter = value.as_usize(key)?,
            "MaxMultIter" => self.max_mult_iter = value.as_usize(key)?,
            "Integrator" => {
                self.integrator = match value.as_text(key)? {
                    "euler" => IntegratorKind::Euler,
                    "modeuler" => IntegratorKind::ModifiedEuler,
                    "heun" => IntegratorKind::Heun,
                    "rk45" => IntegratorKind::Rk45,
                    other => {
                        return Err(OptionError::invalid(
                            key,
                            format!("'{other}' is not one of euler, modeuler, heun, rk45"),
                        ))
                    }
                }
            }
            "IntegratorRelTol" => self.rk45.rel_tol = value.as_f64(key)?,
            "IntegratorAbsTol" => self.rk45.abs_tol = value.as_f64(key)?,
            "IntegratorMinStepSize" => self.rk45.min_step = value.as_f64(key)?,
            "LineSearch" => {
                self.line_search.kind = match value.as_text(key)? {
                    "adaptive" => LineSearchKind::Adaptive,
                    "explicit1" => LineSearchKind::Explicit1,
                    "explicit2" => LineSearchKind::Explicit2,
                    other => {
                        return Err(OptionError::invalid(
                            key,
                            format!("'{other}' is not one of adaptive, explicit1, explicit2"),
                        ))
                    }
                }
            }
            "LineSearchInit" => self.line_search.init = value.as_f64(key)?,
            "LineSearchMin" => self.line_search.min = value.as_f64(key)?,
            "LineSearchMax" => self.line_search.max = value.as_f64(key)?,
            "LineSearchAdaptFactor" => self.line_search.adapt_factor = value.as_f64(key)?,
            "LineSearchIntervalFactor" => self.line_search.interval_factor = value.as_f64(key)?,
            "LineSearchIntervalTol" => self.line_search.interval_tol = value.as_f64(key)?,
            "OptimParam" => self.optim_param = value.as_bool(key)?,
            "OptimTime" => self.optim_time = value.as_bool(key)?,
            "OptimParamLineSearchFactor" => self.line_search.gamma_p = value.as_f64(key)?,
            "OptimTimeLineSearchFactor" => self.line_search.gamma_t = value.as_f64(key)?,
            "ConvergenceGradientRelTol" => self.al.eps_rel_c = value.as_f64(key)?,
            "ConstraintsAbsTol" => self.al.constraints_abs_tol = value.as_list(key)?,
            "AugLagUpdateGradientRelTol" => self.al.eps_rel_u = value.as_f64(key)?,
            "MultiplierMax" => self.al.mu_max = value.as_f64(key)?,
            "MultiplierDampingFactor" => self.al.rho = value.as_f64(key)?,
            "PenaltyMax" => self.al.c_max = value.as_f64(key)?,
            "PenaltyMin" => self.al.c_min = value.as_f64(key)?,
            "PenaltyIncreaseFactor" => self.al.beta_in = value.as_f64(key)?,
            "PenaltyDecreaseFactor" => self.al.beta_de = value.as_f64(key)?,
            "PenaltyIncreaseThreshold" => self.al.gamma_in = value.as_f64(key)?,
            "PenaltyDecreaseThreshold" => self.al.gamma_de = value.as_f64(key)?,
            "PenaltyInit" => self.al.c_init = value.as_f64(key)?,
            "MultiplierInit" => self.al.mu_init = value.as_f64(key)?,
            "EstimatePenaltyMin" => self.al.estimate_c_min = value.as_bool(key)?,
            _ => return Err(OptionError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// All options as key/value pairs, in schema order.
    pub fn entries(&self) -> Vec<(&'static str, OptionValue)> {
        use OptionValue::{Bool, List, Number, Text};
        let t = self.rk45;
        let ls = &self.line_search;
        let al = &self.al;
        vec![
            ("Nhor", Number(self.n_hor as f64)),
            ("MaxGradIter", Number(self.max_grad_iter as f64)),
            ("MaxMultIter", Number(self.max_mult_iter as f64)),
            ("Integrator", Text(self.integrator_choice().name().into())),
            ("IntegratorRelTol", Number(t.rel_tol)),
            ("IntegratorAbsTol", Number(t.abs_tol)),
            ("IntegratorMinStepSize", Number(t.min_step)),
            ("LineSearch", Text(ls.kind.name().into())),
            ("LineSearchInit", Number(ls.init)),
            ("LineSearchMin", Number(ls.min)),
            ("LineSearchMax", Number(ls.max)),
            ("LineSearchAdaptFactor", Number(ls.adapt_factor)),
            ("LineSearchIntervalFactor", Number(ls.interval_factor)),
            ("LineSearchIntervalTol", Number(ls.interval_tol)),
            ("OptimParam", Bool(self.optim_param)),
            ("OptimTime", Bool(self.optim_time)),
            ("OptimParamLineSearchFactor", Number(ls.gamma_p)),
            ("OptimTimeLineSearchFactor", Number(ls.gamma_t)),
            ("ConvergenceGradientRelTol", Number(al.eps_rel_c)),
            ("ConstraintsAbsTol", List(al.constraints_abs_tol.clone())),
            ("AugLagUpdateGradientRelTol", Number(al.eps_rel_u)),
            ("MultiplierMax", Number(al.mu_max)),
            ("MultiplierDampingFactor", Number(al.rho)),
            ("PenaltyMax", Number(al.c_max)),
            ("PenaltyMin", Number(al.c_min)),
            ("PenaltyIncreaseFactor", Number(al.beta_in)),
            ("PenaltyDecreaseFactor", Number(al.beta_de)),
            ("PenaltyIncreaseThreshold", Number(al.gamma_in)),
            ("PenaltyDecreaseThreshold", Number(al.gamma_de)),
            ("PenaltyInit", Number(al.c_init)),
            ("MultiplierInit", Number(al.mu_init)),
            ("EstimatePenaltyMin", Bool(al.estimate_c_min)),
        ]
    }

    /// Checks cross-option invariants.
    pub fn validate(&self) -> Result<(), OptionError> {
        let ls = &self.line_search;
        let al = &self.al;
        let check = |ok: bool, key: &str, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(OptionError::invalid(key, reason))
            }
        };
        check(self.n_hor >= 2, "Nhor", "must be at least 2")?;
        check(self.max_grad_iter >= 1, "MaxGradIter", "must be at least 1")?;
        check(self.max_mult_iter >= 1, "MaxMultIter", "must be at least 1")?;
        if self.integrator == IntegratorKind::Rk45 {
            let t = self.rk45;
            check(t.rel_tol > 0.0, "IntegratorRelTol", "must be positive")?;
            check(t.abs_tol > 0.0, "IntegratorAbsTol", "must be positive")?;
            check(t.min_step > 0.0, "IntegratorMinStepSize", "must be positive")?;
        }
        check(0.0 < ls.min && ls.min <= ls.max, "LineSearchMin", "requires 0 < LineSearchMin <= LineSearchMax")?;
        check(
            ls.min <= ls.init && ls.init <= ls.max,
            "LineSearchInit",
            "must lie in [LineSearchMin, LineSearchMax]",
        )?;
        check(ls.adapt_factor > 1.0, "LineSearchAdaptFactor", "must exceed 1")?;
        check(
            ls.interval_factor > 0.0 && ls.interval_factor < 1.0,
            "LineSearchIntervalFactor",
            "must lie in (0, 1)",
        )?;
        check(
            (0.0..0.5).contains(&ls.interval_tol),
            "LineSearchIntervalTol",
            "must lie in [0, 0.5)",
        )?;
        check(ls.gamma_p > 0.0, "OptimParamLineSearchFactor", "must be positive")?;
        check(ls.gamma_t > 0.0, "OptimTimeLineSearchFactor", "must be positive")?;
        check(al.eps_rel_c > 0.0, "ConvergenceGradientRelTol", "must be positive")?;
        check(
            al.eps_rel_u >= al.eps_rel_c,
            "AugLagUpdateGradientRelTol",
            "must not be below ConvergenceGradientRelTol",
        )?;
        check(
            !al.constraints_abs_tol.is_empty() && al.constraints_abs_tol.iter().all(|&v| v > 0.0),
            "ConstraintsAbsTol",
            "must be positive",
        )?;
        check((0.0..=1.0).contains(&al.rho), "MultiplierDampingFactor", "must lie in [0, 1]")?;
        check(al.beta_in >= 1.0, "PenaltyIncreaseFactor", "must be at least 1")?;
        check(al.beta_de > 0.0 && al.beta_de <= 1.0, "PenaltyDecreaseFactor", "must lie in (0, 1]")?;
        check(al.gamma_in > 0.0, "PenaltyIncreaseThreshold", "must be positive")?;
        check(al.gamma_de > 0.0 && al.gamma_de < 1.0, "PenaltyDecreaseThreshold", "must lie in (0, 1)")?;
        check(al.mu_max > 0.0, "MultiplierMax", "must be positive")?;
        check(0.0 < al.c_min && al.c_min <= al.c_max, "PenaltyMin", "requires 0 < PenaltyMin <= PenaltyMax")?;
        check(
            al.c_min <= al.c_init && al.c_init <= al.c_max,
            "PenaltyInit",
            "must lie in [PenaltyMin, PenaltyMax]",
        )?;
        check(al.mu_init.abs() <= al.mu_max, "MultiplierInit", "must not exceed MultiplierMax")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        SolverOptions::default().validate().unwrap();
        assert_eq!(SolverOptions::default().entries().len(), SOLVER_KEYS.len());
    }

    #[test]
    fn parse_values() {
        assert_eq!(OptionValue::parse("2"), OptionValue::Number(2.0));
        assert_eq!(OptionValue::parse("1e-5"), OptionValue::Number(1e-5));
        assert_eq!(OptionValue::parse("true"), OptionValue::Bool(true));
        assert_eq!(OptionValue::parse("[1, 2.5]"), OptionValue::List(vec![1.0, 2.5]));
        assert_eq!(OptionValue::parse("0.1,-0.2"), OptionValue::List(vec![0.1, -0.2]));
        assert_eq!(OptionValue::parse("heun"), OptionValue::Text("heun".into()));
    }

    #[test]
    fn unknown_and_mistyped_keys() {
        let mut o = SolverOptions::default();
        assert_eq!(
            o.set("BogusKey", &OptionValue::Number(1.0)),
            Err(OptionError::UnknownKey("BogusKey".into()))
        );
        assert!(matches!(
            o.set("MaxGradIter", &OptionValue::Number(2.5)),
            Err(OptionError::TypeMismatch { .. })
        ));
        assert!(matches!(
            o.set("Integrator", &OptionValue::Text("rk4".into())),
            Err(OptionError::InvalidValue { .. })
        ));
    }

    #[test]
    fn entries_round_trip() {
        let mut o = SolverOptions::default();
        o.set("Integrator", &OptionValue::parse("rk45")).unwrap();
        o.set("IntegratorRelTol", &OptionValue::parse("1e-9")).unwrap();
        o.set("LineSearch", &OptionValue::parse("explicit2")).unwrap();
        o.set("ConstraintsAbsTol", &OptionValue::parse("[1e-3,2e-3]")).unwrap();
        o.set("OptimTime", &OptionValue::parse("true")).unwrap();
        let mut back = SolverOptions::default();
        for (k, v) in o.entries() {
            back.set(k, &v).unwrap();
        }
        assert_eq!(back, o);
    }

    #[test]
    fn update_threshold_must_not_be_tighter() {
        let mut o = SolverOptions::default();
        o.al.eps_rel_u = 1e-7;
        assert!(o.validate().is_err());
    }
}
