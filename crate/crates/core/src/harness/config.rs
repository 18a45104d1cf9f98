//! Declarative run configuration: a flat sectioned `key = value` text format
//! with `#` comments, full defaulting, and unknown-key rejection.
//!
//! Lines before any `[section]` header belong to `[run]`, which also accepts
//! the shorthand keys `theta`, `lambda` and `shells` for the common knobs.

use crate::certificate::CertificateParams;
use crate::harness::ic::InitialConditionSpec;
use crate::integrator::{IntegratorConfig, PositivityMode};
use crate::model::ModelParams;
use std::fmt;
use std::path::PathBuf;

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    Parse { line: usize, message: String },
    UnknownSection { line: usize, section: String },
    UnknownKey { line: usize, section: String, key: String },
    Value { line: usize, key: String, message: String },
    Constraint { key: String, message: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Parse { line, message } => write!(f, "line {line}: {message}"),
            ConfigError::UnknownSection { line, section } => {
                write!(f, "line {line}: unknown section [{section}]")
            }
            ConfigError::UnknownKey { line, section, key } => {
                write!(f, "line {line}: unknown key '{key}' in section [{section}]")
            }
            ConfigError::Value { line, key, message } => {
                write!(f, "line {line}: key '{key}': {message}")
            }
            ConfigError::Constraint { key, message } => {
                write!(f, "key '{key}': {message}")
            }
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    Simulate,
    Regularity,
    Decay,
    Scaling,
    EnergyBalance,
    Onsager,
    GalerkinConvergence,
    Certificate,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 8] = [
        ScenarioKind::Simulate,
        ScenarioKind::Regularity,
        ScenarioKind::Decay,
        ScenarioKind::Scaling,
        ScenarioKind::EnergyBalance,
        ScenarioKind::Onsager,
        ScenarioKind::GalerkinConvergence,
        ScenarioKind::Certificate,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::Simulate => "simulate",
            ScenarioKind::Regularity => "regularity",
            ScenarioKind::Decay => "decay",
            ScenarioKind::Scaling => "scaling",
            ScenarioKind::EnergyBalance => "energy-balance",
            ScenarioKind::Onsager => "onsager",
            ScenarioKind::GalerkinConvergence => "galerkin-convergence",
            ScenarioKind::Certificate => "certificate",
        }
    }

    pub fn parse(s: &str) -> Option<ScenarioKind> {
        ScenarioKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruncationMode {
    Plain,
    GalerkinFlux,
}

impl TruncationMode {
    pub fn name(&self) -> &'static str {
        match self {
            TruncationMode::Plain => "plain",
            TruncationMode::GalerkinFlux => "galerkin",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepperKind {
    Adaptive,
    Exponential,
}

impl StepperKind {
    pub fn name(&self) -> &'static str {
        match self {
            StepperKind::Adaptive => "adaptive",
            StepperKind::Exponential => "exponential",
        }
    }
}

/// A fully resolved experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub t_end: f64,
    pub model: ModelParams,
    pub truncation: TruncationMode,
    pub shells: usize,
    pub galerkin_order: usize,
    pub galerkin_theta: f64,
    /// None means the scenario derives the family at run time (the
    /// regularity scenario takes its delta-ball radius from the certificate).
    pub ic: Option<InitialConditionSpec>,
    pub integrator: IntegratorConfig,
    pub stepper: StepperKind,
    pub dt_fixed: f64,
    pub dt_ramp_init: Option<f64>,
    pub sobolev_exponents: Vec<f64>,
    pub flux_shells: Vec<usize>,
    /// Row cap for written CSV time series (first/last rows always kept).
    pub max_rows: usize,
    pub eta: f64,
    pub scaling_grid: usize,
    pub window: (f64, f64),
    pub fit_samples: usize,
    pub onsager_shells: Option<Vec<usize>>,
    pub orders: Vec<usize>,
    pub probe_t: f64,
    pub certificate: CertificateParams,
}

impl RunConfig {
    pub fn default_for(scenario: ScenarioKind) -> RunConfig {
        let mut b = Builder::new();
        b.scenario = Some(scenario);
        b.finish().expect("defaults are valid")
    }

    /// Canonical rendering of every resolved value; the digest input.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        let kv = |s: &mut String, k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv(&mut s, "run.scenario", self.scenario.name().to_string());
        kv(&mut s, "run.seed", self.seed.to_string());
        kv(&mut s, "run.t_end", self.t_end.to_string());
        kv(&mut s, "model.lambda", self.model.lambda_base().to_string());
        kv(&mut s, "model.theta", self.model.theta().to_string());
        kv(&mut s, "model.truncation", self.truncation.name().to_string());
        kv(&mut s, "galerkin.order", self.galerkin_order.to_string());
        kv(&mut s, "galerkin.theta", self.galerkin_theta.to_string());
        kv(&mut s, "ic.shells", self.shells.to_string());
        let ic = match self.ic {
            None => "auto".to_string(),
            Some(InitialConditionSpec::Geometric { amplitude, decay }) => {
                format!("geometric({amplitude}, {decay})")
            }
            Some(InitialConditionSpec::Single { shell, amplitude }) => {
                format!("single({shell}, {amplitude})")
            }
            Some(InitialConditionSpec::Random { decay }) => format!("random({decay})"),
            Some(InitialConditionSpec::DeltaBall { delta }) => format!("delta-ball({delta})"),
        };
        kv(&mut s, "ic.family", ic);
        let ic_cfg = &self.integrator;
        kv(&mut s, "integrator.rel_tol", ic_cfg.rel_tol.to_string());
        kv(&mut s, "integrator.abs_tol", ic_cfg.abs_tol.to_string());
        kv(&mut s, "integrator.dt_init", ic_cfg.dt_init.to_string());
        kv(&mut s, "integrator.dt_min", ic_cfg.dt_min.to_string());
        kv(&mut s, "integrator.dt_max", ic_cfg.dt_max.to_string());
        kv(&mut s, "integrator.max_steps", ic_cfg.max_steps.to_string());
        let positivity = match ic_cfg.positivity_mode {
            PositivityMode::Off => "off",
            PositivityMode::RejectStep => "reject",
            PositivityMode::Clamp => "clamp",
        };
        kv(&mut s, "integrator.positivity", positivity.to_string());
        kv(&mut s, "integrator.stride", ic_cfg.sample_stride.to_string());
        kv(&mut s, "integrator.dense", ic_cfg.store_segments.to_string());
        kv(&mut s, "integrator.stepper", self.stepper.name().to_string());
        kv(&mut s, "integrator.dt_fixed", self.dt_fixed.to_string());
        kv(
            &mut s,
            "integrator.dt_ramp_init",
            self.dt_ramp_init.map_or("none".to_string(), |v| v.to_string()),
        );
        let join_f64 = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let join_usize = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        kv(
            &mut s,
            "diagnostics.sobolev",
            join_f64(&self.sobolev_exponents),
        );
        kv(&mut s, "diagnostics.flux", join_usize(&self.flux_shells));
        kv(&mut s, "diagnostics.max_rows", self.max_rows.to_string());
        kv(&mut s, "scaling.eta", self.eta.to_string());
        kv(&mut s, "scaling.grid", self.scaling_grid.to_string());
        kv(&mut s, "decay.window_lo", self.window.0.to_string());
        kv(&mut s, "decay.window_hi", self.window.1.to_string());
        kv(&mut s, "decay.samples", self.fit_samples.to_string());
        kv(
            &mut s,
            "onsager.shells",
            self.onsager_shells
                .as_deref()
                .map_or("all".to_string(), join_usize),
        );
        kv(&mut s, "convergence.orders", join_usize(&self.orders));
        kv(&mut s, "convergence.probe_t", self.probe_t.to_string());
        let c = &self.certificate;
        kv(&mut s, "certificate.k", c.k.to_string());
        kv(&mut s, "certificate.theta", c.theta.to_string());
        kv(&mut s, "certificate.lambda", c.lambda.to_string());
        kv(&mut s, "certificate.b_target", c.b_target.to_string());
        kv(
            &mut s,
            "certificate.delta",
            c.delta.map_or("none".to_string(), |v| v.to_string()),
        );
        kv(&mut s, "certificate.t0", c.t0.to_string());
        kv(&mut s, "certificate.margin", c.margin.to_string());
        kv(&mut s, "certificate.t_check", c.t_check.to_string());
        kv(&mut s, "certificate.quad_tol", c.quad_tol.to_string());
        kv(&mut s, "certificate.grid_points", c.grid_points.to_string());
        s
    }

    /// FNV-1a 64-bit hash of the canonical text, as fixed-width hex.
    pub fn digest(&self) -> String {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in self.canonical_text().bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{hash:016x}")
    }
}

/// Accumulates raw keys, then resolves scenario defaults for the rest.
#[derive(Debug, Default)]
struct Builder {
    scenario: Option<ScenarioKind>,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    t_end: Option<f64>,
    lambda: Option<f64>,
    theta: Option<f64>,
    truncation: Option<TruncationMode>,
    galerkin_order: Option<usize>,
    galerkin_theta: Option<f64>,
    shells: Option<usize>,
    ic_family: Option<String>,
    ic_amplitude: Option<f64>,
    ic_decay: Option<f64>,
    ic_shell: Option<usize>,
    ic_delta: Option<f64>,
    rel_tol: Option<f64>,
    abs_tol: Option<f64>,
    dt_init: Option<f64>,
    dt_min: Option<f64>,
    dt_max: Option<f64>,
    max_steps: Option<u64>,
    positivity: Option<PositivityMode>,
    stepper: Option<StepperKind>,
    dt_fixed: Option<f64>,
    dt_ramp_init: Option<f64>,
    stride: Option<usize>,
    dense: Option<bool>,
    sobolev: Option<Vec<f64>>,
    flux: Option<Vec<usize>>,
    max_rows: Option<usize>,
    eta: Option<f64>,
    scaling_grid: Option<usize>,
    window_lo: Option<f64>,
    window_hi: Option<f64>,
    fit_samples: Option<usize>,
    onsager_shells: Option<Vec<usize>>,
    orders: Option<Vec<usize>>,
    probe_t: Option<f64>,
    cert_k: Option<f64>,
    cert_theta: Option<f64>,
    cert_lambda: Option<f64>,
    cert_b_target: Option<f64>,
    cert_delta: Option<f64>,
    cert_t0: Option<f64>,
    cert_margin: Option<f64>,
    cert_t_check: Option<f64>,
    cert_quad_tol: Option<f64>,
    cert_grid_points: Option<usize>,
}

fn value_err(line: usize, key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Value {
        line,
        key: key.to_string(),
        message: message.into(),
    }
}

fn parse_f64(line: usize, key: &str, v: &str) -> Result<f64, ConfigError> {
    v.parse::<f64>()
        .map_err(|_| value_err(line, key, format!("expected a number, got '{v}'")))
}

fn parse_u64(line: usize, key: &str, v: &str) -> Result<u64, ConfigError> {
    v.parse::<u64>()
        .map_err(|_| value_err(line, key, format!("expected an unsigned integer, got '{v}'")))
}

fn parse_usize(line: usize, key: &str, v: &str) -> Result<usize, ConfigError> {
    v.parse::<usize>()
        .map_err(|_| value_err(line, key, format!("expected an unsigned integer, got '{v}'")))
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(value_err(line, key, format!("expected true/false, got '{v}'"))),
    }
}

fn parse_f64_list(line: usize, key: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
    v.split(',')
        .map(|p| parse_f64(line, key, p.trim()))
        .collect()
}

fn parse_usize_list(line: usize, key: &str, v: &str) -> Result<Vec<usize>, ConfigError> {
    v.split(',')
        .map(|p| parse_usize(line, key, p.trim()))
        .collect()
}

impl Builder {
    fn new() -> Self {
        Builder::default()
    }

    fn apply(&mut self, line: usize, section: &str, key: &str, value: &str) -> Result<(), ConfigError> {
        match (section, key) {
            ("run", "scenario") => {
                self.scenario = Some(ScenarioKind::parse(value).ok_or_else(|| {
                    value_err(
                        line,
                        key,
                        format!(
                            "unknown scenario '{value}' (expected one of {})",
                            ScenarioKind::ALL.map(|s| s.name()).join(", ")
                        ),
                    )
                })?)
            }
            ("run", "seed") => self.seed = Some(parse_u64(line, key, value)?),
            ("run", "out") => self.out_dir = Some(PathBuf::from(value)),
            ("run", "t_end") => self.t_end = Some(parse_f64(line, key, value)?),
            // [run] shorthands for the most common knobs.
            ("run", "theta") | ("model", "theta") => {
                self.theta = Some(parse_f64(line, key, value)?)
            }
            ("run", "lambda") | ("model", "lambda") => {
                self.lambda = Some(parse_f64(line, key, value)?)
            }
            ("run", "shells") | ("ic", "shells") => {
                self.shells = Some(parse_usize(line, key, value)?)
            }
            ("model", "truncation") => {
                self.truncation = Some(match value {
                    "plain" => TruncationMode::Plain,
                    "galerkin" => TruncationMode::GalerkinFlux,
                    _ => {
                        return Err(value_err(
                            line,
                            key,
                            format!("expected plain or galerkin, got '{value}'"),
                        ))
                    }
                })
            }
            ("galerkin", "order") => self.galerkin_order = Some(parse_usize(line, key, value)?),
            ("galerkin", "theta") => self.galerkin_theta = Some(parse_f64(line, key, value)?),
            ("ic", "family") => self.ic_family = Some(value.to_string()),
            ("ic", "amplitude") => self.ic_amplitude = Some(parse_f64(line, key, value)?),
            ("ic", "decay") => self.ic_decay = Some(parse_f64(line, key, value)?),
            ("ic", "shell") => self.ic_shell = Some(parse_usize(line, key, value)?),
            ("ic", "delta") => self.ic_delta = Some(parse_f64(line, key, value)?),
            ("integrator", "rel_tol") => self.rel_tol = Some(parse_f64(line, key, value)?),
            ("integrator", "abs_tol") => self.abs_tol = Some(parse_f64(line, key, value)?),
            ("integrator", "dt_init") => self.dt_init = Some(parse_f64(line, key, value)?),
            ("integrator", "dt_min") => self.dt_min = Some(parse_f64(line, key, value)?),
            ("integrator", "dt_max") => self.dt_max = Some(parse_f64(line, key, value)?),
            ("integrator", "max_steps") => self.max_steps = Some(parse_u64(line, key, value)?),
            ("integrator", "positivity") => {
                self.positivity = Some(match value {
                    "off" => PositivityMode::Off,
                    "reject" | "reject_step" => PositivityMode::RejectStep,
                    "clamp" => PositivityMode::Clamp,
                    _ => {
                        return Err(value_err(
                            line,
                            key,
                            format!("expected off/reject/clamp, got '{value}'"),
                        ))
                    }
                })
            }
            ("integrator", "stepper") => {
                self.stepper = Some(match value {
                    "adaptive" => StepperKind::Adaptive,
                    "exponential" => StepperKind::Exponential,
                    _ => {
                        return Err(value_err(
                            line,
                            key,
                            format!("expected adaptive or exponential, got '{value}'"),
                        ))
                    }
                })
            }
            ("integrator", "dt_fixed") => self.dt_fixed = Some(parse_f64(line, key, value)?),
            ("integrator", "dt_ramp_init") => {
                self.dt_ramp_init = Some(parse_f64(line, key, value)?)
            }
            ("integrator", "stride") => self.stride = Some(parse_usize(line, key, value)?),
            ("integrator", "dense") => self.dense = Some(parse_bool(line, key, value)?),
            ("diagnostics", "sobolev") => self.sobolev = Some(parse_f64_list(line, key, value)?),
            ("diagnostics", "flux") => self.flux = Some(parse_usize_list(line, key, value)?),
            ("diagnostics", "max_rows") => self.max_rows = Some(parse_usize(line, key, value)?),
            ("scaling", "eta") => self.eta = Some(parse_f64(line, key, value)?),
            ("scaling", "grid") => self.scaling_grid = Some(parse_usize(line, key, value)?),
            ("decay", "window_lo") => self.window_lo = Some(parse_f64(line, key, value)?),
            ("decay", "window_hi") => self.window_hi = Some(parse_f64(line, key, value)?),
            ("decay", "samples") => self.fit_samples = Some(parse_usize(line, key, value)?),
            ("onsager", "shells") => {
                self.onsager_shells = Some(parse_usize_list(line, key, value)?)
            }
            ("convergence", "orders") => self.orders = Some(parse_usize_list(line, key, value)?),
            ("convergence", "probe_t") => self.probe_t = Some(parse_f64(line, key, value)?),
            ("certificate", "k") => self.cert_k = Some(parse_f64(line, key, value)?),
            ("certificate", "theta") => self.cert_theta = Some(parse_f64(line, key, value)?),
            ("certificate", "lambda") => self.cert_lambda = Some(parse_f64(line, key, value)?),
            ("certificate", "b_target") => self.cert_b_target = Some(parse_f64(line, key, value)?),
            ("certificate", "delta") => self.cert_delta = Some(parse_f64(line, key, value)?),
            ("certificate", "t0") => self.cert_t0 = Some(parse_f64(line, key, value)?),
            ("certificate", "margin") => self.cert_margin = Some(parse_f64(line, key, value)?),
            ("certificate", "t_check") => self.cert_t_check = Some(parse_f64(line, key, value)?),
            ("certificate", "quad_tol") => self.cert_quad_tol = Some(parse_f64(line, key, value)?),
            ("certificate", "grid_points") => {
                self.cert_grid_points = Some(parse_usize(line, key, value)?)
            }
            ("run" | "model" | "galerkin" | "ic" | "integrator" | "diagnostics" | "scaling"
            | "decay" | "onsager" | "convergence" | "certificate", _) => {
                return Err(ConfigError::UnknownKey {
                    line,
                    section: section.to_string(),
                    key: key.to_string(),
                })
            }
            _ => {
                return Err(ConfigError::UnknownSection {
                    line,
                    section: section.to_string(),
                })
            }
        }
        Ok(())
    }

    fn finish(self) -> Result<RunConfig, ConfigError> {
        let scenario = self.scenario.unwrap_or(ScenarioKind::Simulate);
        let constraint = |key: &str, message: String| ConfigError::Constraint {
            key: key.to_string(),
            message,
        };

        let lambda = self.lambda.unwrap_or(2.0);
        let theta = self.theta.unwrap_or(0.6);
        let model = ModelParams::new(lambda, theta)
            .map_err(|e| constraint("model", e.to_string()))?;

        use ScenarioKind::*;
        let shells = self.shells.unwrap_or(match scenario {
            Regularity | Decay => 12,
            _ => 10,
        });
        if shells < 1 {
            return Err(constraint("ic.shells", "need at least one shell".into()));
        }
        let t_end = self.t_end.unwrap_or(match scenario {
            Regularity | Decay => 50.0,
            Scaling => 2.0,
            GalerkinConvergence => self.probe_t.unwrap_or(0.1),
            Certificate => self.cert_t_check.unwrap_or(20.0),
            _ => 1.0,
        });
        if !(t_end > 0.0) {
            return Err(constraint("run.t_end", format!("t_end = {t_end} must be positive")));
        }
        let truncation = self.truncation.unwrap_or(match scenario {
            Scaling => TruncationMode::Plain,
            _ => TruncationMode::GalerkinFlux,
        });
        let galerkin_order = self.galerkin_order.unwrap_or(shells);
        if galerkin_order < 1 {
            return Err(constraint("galerkin.order", "order >= 1".into()));
        }
        let galerkin_theta = self.galerkin_theta.unwrap_or(theta);
        if !(galerkin_theta > 0.0) {
            return Err(constraint("galerkin.theta", "damping theta > 0".into()));
        }

        let ic = match self.ic_family.as_deref() {
            None => match scenario {
                Regularity => None, // delta-ball radius resolved from the certificate
                EnergyBalance | Onsager => Some(InitialConditionSpec::Geometric {
                    amplitude: 1.0,
                    decay: 0.7,
                }),
                GalerkinConvergence => Some(InitialConditionSpec::Geometric {
                    amplitude: 1.0,
                    decay: 2.75,
                }),
                _ => Some(InitialConditionSpec::Geometric {
                    amplitude: 1.0,
                    decay: 1.0,
                }),
            },
            Some("geometric") => Some(InitialConditionSpec::Geometric {
                amplitude: self.ic_amplitude.unwrap_or(1.0),
                decay: self.ic_decay.unwrap_or(1.0),
            }),
            Some("single") => Some(InitialConditionSpec::Single {
                shell: self.ic_shell.unwrap_or(1),
                amplitude: self.ic_amplitude.unwrap_or(1.0),
            }),
            Some("random") => Some(InitialConditionSpec::Random {
                decay: self.ic_decay.unwrap_or(1.0),
            }),
            Some("delta-ball") => match self.ic_delta {
                Some(delta) => Some(InitialConditionSpec::DeltaBall { delta }),
                None => None, // resolved from the certificate at run time
            },
            Some(other) => {
                return Err(constraint(
                    "ic.family",
                    format!("unknown family '{other}' (geometric, single, random, delta-ball)"),
                ))
            }
        };
        if let Some(spec) = &ic {
            spec.validate(shells)
                .map_err(|e| constraint("ic", e.to_string()))?;
        }

        let stepper = self.stepper.unwrap_or(match scenario {
            Regularity | Decay | GalerkinConvergence => StepperKind::Exponential,
            _ => StepperKind::Adaptive,
        });
        let positivity = self.positivity.unwrap_or(match stepper {
            StepperKind::Adaptive => PositivityMode::RejectStep,
            StepperKind::Exponential => PositivityMode::Clamp,
        });
        let integrator = IntegratorConfig {
            rel_tol: self.rel_tol.unwrap_or(match scenario {
                EnergyBalance | Scaling => 1e-10,
                _ => 1e-9,
            }),
            abs_tol: self.abs_tol.unwrap_or(match scenario {
                Scaling => 1e-13,
                _ => 1e-12,
            }),
            dt_init: self.dt_init.unwrap_or(1e-6),
            dt_min: self.dt_min.unwrap_or(1e-14),
            dt_max: self.dt_max.unwrap_or(1e6),
            max_steps: self.max_steps.unwrap_or(200_000_000),
            positivity_mode: positivity,
            store_segments: self.dense.unwrap_or(false),
            sample_stride: self.stride.unwrap_or(match scenario {
                Simulate => 1,
                Scaling => 20,
                Regularity | Decay => 50,
                _ => 100,
            }),
        };
        integrator
            .validate()
            .map_err(|e| constraint("integrator", e.to_string()))?;
        let dt_fixed = self.dt_fixed.unwrap_or(match scenario {
            GalerkinConvergence => 1e-3,
            _ => 5e-6,
        });
        if !(dt_fixed > 0.0) {
            return Err(constraint("integrator.dt_fixed", "dt_fixed > 0".into()));
        }
        let dt_ramp_init = match stepper {
            StepperKind::Exponential => Some(self.dt_ramp_init.unwrap_or(dt_fixed * 1e-4)),
            StepperKind::Adaptive => self.dt_ramp_init,
        };

        let sobolev_exponents = self.sobolev.unwrap_or_else(|| vec![theta, 5.0 / 6.0]);
        let flux_shells = self.flux.unwrap_or_else(|| {
            [3usize, 5, 8]
                .into_iter()
                .filter(|&j| j + 1 <= shells.saturating_sub(1) + 1 && j < shells)
                .collect()
        });
        for &j in &flux_shells {
            if j < 1 || j >= shells {
                return Err(constraint(
                    "diagnostics.flux",
                    format!("flux shell {j} outside 1..{}", shells - 1),
                ));
            }
        }
        let max_rows = self.max_rows.unwrap_or(2000).max(2);

        let eta = self.eta.unwrap_or(2.0);
        if !(eta > 0.0) {
            return Err(constraint("scaling.eta", "eta > 0".into()));
        }
        let scaling_grid = self.scaling_grid.unwrap_or(21).max(2);

        let window = (self.window_lo.unwrap_or(1.0), self.window_hi.unwrap_or(50.0));
        if !(window.0 > 0.0 && window.1 > window.0) {
            return Err(constraint(
                "decay.window",
                format!("invalid window [{}, {}]", window.0, window.1),
            ));
        }
        let fit_samples = self.fit_samples.unwrap_or(40).max(2);

        if let Some(shells_list) = &self.onsager_shells {
            for &j in shells_list {
                if j < 1 || j > shells {
                    return Err(constraint(
                        "onsager.shells",
                        format!("shell {j} outside 1..{shells}"),
                    ));
                }
            }
        }

        let orders = self.orders.unwrap_or_else(|| vec![8, 16, 32]);
        if orders.len() < 2 || orders.windows(2).any(|w| w[1] <= w[0]) || orders[0] < 2 {
            return Err(constraint(
                "convergence.orders",
                "orders must be increasing and each >= 2".into(),
            ));
        }
        let probe_t = self.probe_t.unwrap_or(0.1);
        if !(probe_t > 0.0) {
            return Err(constraint("convergence.probe_t", "probe_t > 0".into()));
        }

        let certificate = CertificateParams {
            k: self.cert_k.unwrap_or(0.96),
            theta: self.cert_theta.unwrap_or(theta),
            lambda: self.cert_lambda.unwrap_or(lambda),
            b_target: self.cert_b_target.unwrap_or(0.447),
            delta: self.cert_delta,
            t0: self.cert_t0.unwrap_or(0.0),
            margin: self.cert_margin.unwrap_or(0.01),
            t_check: self.cert_t_check.unwrap_or(20.0),
            quad_tol: self.cert_quad_tol.unwrap_or(1e-10),
            grid_points: self.cert_grid_points.unwrap_or(2048),
        };
        certificate
            .validate()
            .map_err(|e| constraint("certificate", e.to_string()))?;

        Ok(RunConfig {
            scenario,
            seed: self.seed.unwrap_or(42),
            out_dir: self.out_dir.unwrap_or_else(|| PathBuf::from("out")),
            t_end,
            model,
            truncation,
            shells,
            galerkin_order,
            galerkin_theta,
            ic,
            integrator,
            stepper,
            dt_fixed,
            dt_ramp_init,
            sobolev_exponents,
            flux_shells,
            max_rows,
            eta,
            scaling_grid,
            window,
            fit_samples,
            onsager_shells: self.onsager_shells,
            orders,
            probe_t,
            certificate,
        })
    }
}

fn split_line(line_no: usize, raw: &str) -> Result<Option<(String, String)>, ConfigError> {
    let stripped = match raw.find('#') {
        Some(pos) => &raw[..pos],
        None => raw,
    }
    .trim();
    if stripped.is_empty() {
        return Ok(None);
    }
    match stripped.split_once('=') {
        Some((k, v)) => {
            let key = k.trim();
            if key.is_empty() {
                return Err(ConfigError::Parse {
                    line: line_no,
                    message: "empty key before '='".into(),
                });
            }
            Ok(Some((key.to_string(), v.trim().to_string())))
        }
        None => Err(ConfigError::Parse {
            line: line_no,
            message: format!("expected 'key = value', got '{stripped}'"),
        }),
    }
}

/// Parse the sectioned text format into a fully defaulted [`RunConfig`].
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    parse_config_with_overrides(text, &[])
}

/// Like [`parse_config`], then apply `section.key = value` overrides (the
/// CLI's `--set`); a bare key addresses the `[run]` section.
pub fn parse_config_with_overrides(
    text: &str,
    overrides: &[(String, String)],
) -> Result<RunConfig, ConfigError> {
    let mut builder = Builder::new();
    let mut section = "run".to_string();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let stripped = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if stripped.is_empty() {
            continue;
        }
        if let Some(name) = stripped.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or(ConfigError::Parse {
                line: line_no,
                message: "unterminated section header".into(),
            })?;
            section = name.trim().to_string();
            continue;
        }
        if let Some((key, value)) = split_line(line_no, raw)? {
            builder.apply(line_no, &section, &key, &value)?;
        }
    }
    for (key, value) in overrides {
        let (section, bare) = match key.split_once('.') {
            Some((s, k)) => (s, k),
            None => ("run", key.as_str()),
        };
        builder.apply(0, section, bare, value)?;
    }
    builder.finish()
}
