//! Python bindings for the shell-model laboratory: the right-hand sides,
//! variable transforms, integration, diagnostics, and the envelope
//! certificate, over plain lists of floats.

use dyadic_core::certificate::{
    adversarial_simulation, b_limit as core_b_limit, b_of_delta as core_b_of_delta,
    delta_star_with_fallback, find_delta as core_find_delta, verify_certificate,
    CertificateParams, DeltaSearch, EnvelopeBounds,
};
use dyadic_core::diagnostics as diag;
use dyadic_core::harness::ic::InitialConditionSpec;
use dyadic_core::integrator::{
    integrate, integrate_split, IntegratorConfig, PositivityMode, SplitStepSpec, Trajectory,
};
use dyadic_core::model::{self, GalerkinSpec, ModelParams, ShellState, VariableKind};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn params(lambda_base: f64, theta: f64) -> PyResult<ModelParams> {
    ModelParams::new(lambda_base, theta).map_err(value_err)
}

fn state(coeffs: Vec<f64>, kind: VariableKind) -> PyResult<ShellState> {
    ShellState::new(0.0, coeffs, kind).map_err(value_err)
}

/// Derivative of the plainly truncated shell system.
#[pyfunction]
#[pyo3(signature = (coeffs, theta = 0.6, lambda_base = 2.0))]
fn rhs_dyadic(coeffs: Vec<f64>, theta: f64, lambda_base: f64) -> PyResult<Vec<f64>> {
    let p = params(lambda_base, theta)?;
    model::rhs_dyadic(&state(coeffs, VariableKind::A)?, &p).map_err(value_err)
}

/// Derivative of the Galerkin-with-flux system (order = last shell index).
#[pyfunction]
#[pyo3(signature = (coeffs, theta = 0.6, lambda_base = 2.0, damping_theta = None))]
fn rhs_galerkin(
    coeffs: Vec<f64>,
    theta: f64,
    lambda_base: f64,
    damping_theta: Option<f64>,
) -> PyResult<Vec<f64>> {
    let p = params(lambda_base, theta)?;
    let order = coeffs.len().saturating_sub(1);
    let spec = GalerkinSpec::new(order, damping_theta.unwrap_or(theta)).map_err(value_err)?;
    model::rhs_galerkin_flux(&state(coeffs, VariableKind::A)?, &p, &spec).map_err(value_err)
}

/// Derivative of the rescaled c-variable system.
#[pyfunction]
#[pyo3(signature = (coeffs, theta = 0.6, lambda_base = 2.0))]
fn rhs_c(coeffs: Vec<f64>, theta: f64, lambda_base: f64) -> PyResult<Vec<f64>> {
    let p = params(lambda_base, theta)?;
    model::rhs_c(&state(coeffs, VariableKind::C)?, &p).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (coeffs, theta = 0.6, lambda_base = 2.0))]
fn a_to_c(coeffs: Vec<f64>, theta: f64, lambda_base: f64) -> PyResult<Vec<f64>> {
    let p = params(lambda_base, theta)?;
    Ok(model::a_to_c(&state(coeffs, VariableKind::A)?, &p)
        .map_err(value_err)?
        .coeffs()
        .to_vec())
}

#[pyfunction]
#[pyo3(signature = (coeffs, theta = 0.6, lambda_base = 2.0))]
fn c_to_a(coeffs: Vec<f64>, theta: f64, lambda_base: f64) -> PyResult<Vec<f64>> {
    let p = params(lambda_base, theta)?;
    Ok(model::c_to_a(&state(coeffs, VariableKind::C)?, &p)
        .map_err(value_err)?
        .coeffs()
        .to_vec())
}

/// Total energy, the squared l2 norm.
#[pyfunction]
fn energy(coeffs: Vec<f64>) -> PyResult<f64> {
    Ok(model::energy(&state(coeffs, VariableKind::A)?))
}

/// max over shells of lambda_j^theta |a_j|.
#[pyfunction]
#[pyo3(signature = (coeffs, theta = 0.6, lambda_base = 2.0))]
fn sup_theta_norm(coeffs: Vec<f64>, theta: f64, lambda_base: f64) -> PyResult<f64> {
    let p = params(lambda_base, theta)?;
    Ok(diag::sup_theta_norm(&state(coeffs, VariableKind::A)?, theta, &p))
}

/// (strong, weak) distances between two coefficient sequences.
#[pyfunction]
fn distances(x: Vec<f64>, y: Vec<f64>) -> PyResult<(f64, f64)> {
    Ok(diag::distances(
        &state(x, VariableKind::A)?,
        &state(y, VariableKind::A)?,
    ))
}

/// A completed integration: times, states, events, interpolation.
#[pyclass(name = "Trajectory")]
struct PyTrajectory {
    inner: Trajectory,
    theta: f64,
    lambda_base: f64,
}

#[pymethods]
impl PyTrajectory {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn times(&self) -> Vec<f64> {
        self.inner.samples().iter().map(|s| s.t).collect()
    }

    fn states(&self) -> Vec<Vec<f64>> {
        self.inner
            .samples()
            .iter()
            .map(|s| s.coeffs.to_vec())
            .collect()
    }

    fn energies(&self) -> Vec<f64> {
        (0..self.inner.len())
            .map(|i| model::energy(&self.inner.state_at(i)))
            .collect()
    }

    fn sup_theta_series(&self) -> PyResult<Vec<f64>> {
        let p = params(self.lambda_base, self.theta)?;
        Ok((0..self.inner.len())
            .map(|i| diag::sup_theta_norm(&self.inner.state_at(i), self.theta, &p))
            .collect())
    }

    fn min_coefficient(&self) -> f64 {
        self.inner.min_coefficient()
    }

    /// (shell, threshold, time, direction) per located crossing.
    fn events(&self) -> Vec<(usize, f64, f64, String)> {
        self.inner
            .events()
            .iter()
            .map(|e| {
                (
                    e.shell,
                    e.threshold,
                    e.time,
                    format!("{:?}", e.direction).to_lowercase(),
                )
            })
            .collect()
    }

    fn dense_sample(&self, t: f64) -> PyResult<Vec<f64>> {
        Ok(self
            .inner
            .dense_sample(t)
            .map_err(value_err)?
            .coeffs()
            .to_vec())
    }

    fn status(&self) -> String {
        format!("{:?}", self.inner.status())
    }

    /// Least-squares power-law fit of the weighted sup norm:
    /// (slope, intercept, r_squared).
    #[pyo3(signature = (window_lo, window_hi, samples = 40))]
    fn fit_decay(&self, window_lo: f64, window_hi: f64, samples: usize) -> PyResult<(f64, f64, f64)> {
        let p = params(self.lambda_base, self.theta)?;
        let fit = diag::decay_fit(&self.inner, self.theta, &p, (window_lo, window_hi), samples)
            .map_err(value_err)?;
        Ok((fit.slope, fit.intercept, fit.r_squared))
    }
}

/// Integrate the shell system from the given amplitudes over [0, t_end].
/// `galerkin = True` uses the flux-damped truncation; `stepper` is
/// "adaptive" or "exponential" (fixed-step, exact on the damping shell).
#[pyfunction]
#[pyo3(signature = (
    coeffs, t_end, theta = 0.6, lambda_base = 2.0, galerkin = true,
    rel_tol = 1e-9, abs_tol = 1e-12, positivity = "reject", stride = 1,
    stepper = "adaptive", dt_fixed = 5e-6,
    watch = Vec::new(),
))]
#[allow(clippy::too_many_arguments)]
fn integrate_shells(
    coeffs: Vec<f64>,
    t_end: f64,
    theta: f64,
    lambda_base: f64,
    galerkin: bool,
    rel_tol: f64,
    abs_tol: f64,
    positivity: &str,
    stride: usize,
    stepper: &str,
    dt_fixed: f64,
    watch: Vec<(usize, f64)>,
) -> PyResult<PyTrajectory> {
    let p = params(lambda_base, theta)?;
    let initial = state(coeffs, VariableKind::A)?;
    let positivity_mode = match positivity {
        "off" => PositivityMode::Off,
        "reject" => PositivityMode::RejectStep,
        "clamp" => PositivityMode::Clamp,
        other => return Err(value_err(format!("unknown positivity mode '{other}'"))),
    };
    let config = IntegratorConfig {
        rel_tol,
        abs_tol,
        positivity_mode,
        sample_stride: stride,
        store_segments: false,
        ..Default::default()
    };
    let result = match (stepper, galerkin) {
        ("adaptive", true) => {
            let spec = GalerkinSpec::new(initial.truncation(), theta).map_err(value_err)?;
            let rhs = dyadic_core::model::GalerkinRhs::new(&p, &spec);
            integrate(
                |_, y, dy| rhs.eval(y, dy),
                &initial,
                (0.0, t_end),
                &config,
                &watch,
                &[],
            )
        }
        ("adaptive", false) => {
            let rhs = dyadic_core::model::DyadicRhs::new(&p, initial.truncation());
            integrate(
                |_, y, dy| rhs.eval(y, dy),
                &initial,
                (0.0, t_end),
                &config,
                &watch,
                &[],
            )
        }
        ("exponential", galerkin) => {
            let config = IntegratorConfig {
                positivity_mode: if positivity_mode == PositivityMode::RejectStep {
                    PositivityMode::Clamp
                } else {
                    positivity_mode
                },
                ..config
            };
            let steps = SplitStepSpec::ramped(dt_fixed * 1e-4, dt_fixed);
            if galerkin {
                let spec = GalerkinSpec::new(initial.truncation(), theta).map_err(value_err)?;
                let rhs = dyadic_core::model::GalerkinRhs::new(&p, &spec);
                integrate_split(
                    |_, y, dy| rhs.eval_nonlinear(y, dy),
                    &rhs.linear_diagonal(),
                    &initial,
                    (0.0, t_end),
                    steps,
                    &config,
                    &watch,
                    &[],
                )
            } else {
                let rhs = dyadic_core::model::DyadicRhs::new(&p, initial.truncation());
                let diag_zero = vec![0.0; initial.coeffs().len()];
                integrate_split(
                    |_, y, dy| rhs.eval(y, dy),
                    &diag_zero,
                    &initial,
                    (0.0, t_end),
                    steps,
                    &config,
                    &watch,
                    &[],
                )
            }
        }
        (other, _) => return Err(value_err(format!("unknown stepper '{other}'"))),
    };
    Ok(PyTrajectory {
        inner: result.map_err(runtime_err)?,
        theta,
        lambda_base,
    })
}

/// Build a named initial-condition family (geometric, single, random,
/// delta-ball) of the given size.
#[pyfunction]
#[pyo3(signature = (family, shells, seed = 42, theta = 0.6, lambda_base = 2.0, **kwargs))]
fn initial_condition(
    family: &str,
    shells: usize,
    seed: u64,
    theta: f64,
    lambda_base: f64,
    kwargs: Option<&Bound<'_, PyDict>>,
) -> PyResult<Vec<f64>> {
    let p = params(lambda_base, theta)?;
    let get = |key: &str, default: f64| -> PyResult<f64> {
        match kwargs {
            Some(d) => match d.get_item(key)? {
                Some(v) => v.extract::<f64>(),
                None => Ok(default),
            },
            None => Ok(default),
        }
    };
    let spec = match family {
        "geometric" => InitialConditionSpec::Geometric {
            amplitude: get("amplitude", 1.0)?,
            decay: get("decay", 1.0)?,
        },
        "single" => InitialConditionSpec::Single {
            shell: get("shell", 1.0)? as usize,
            amplitude: get("amplitude", 1.0)?,
        },
        "random" => InitialConditionSpec::Random {
            decay: get("decay", 1.0)?,
        },
        "delta-ball" => InitialConditionSpec::DeltaBall {
            delta: get("delta", 0.3)?,
        },
        other => return Err(value_err(format!("unknown family '{other}'"))),
    };
    Ok(spec.build(shells, &p, seed).map_err(value_err)?.coeffs().to_vec())
}

/// The closed-form accumulation bound B(delta).
#[pyfunction]
#[pyo3(signature = (delta, k = 0.96, theta = 0.6, lambda_base = 2.0))]
fn b_of_delta(delta: f64, k: f64, theta: f64, lambda_base: f64) -> PyResult<f64> {
    core_b_of_delta(delta, k, theta, lambda_base).map_err(value_err)
}

/// The delta -> 0 limit of B(delta).
#[pyfunction]
#[pyo3(signature = (k = 0.96, theta = 0.6, lambda_base = 2.0))]
fn b_limit(k: f64, theta: f64, lambda_base: f64) -> f64 {
    core_b_limit(k, theta, lambda_base)
}

/// Largest delta with B(delta) >= b_target, or None when unattainable.
#[pyfunction]
#[pyo3(signature = (b_target, k = 0.96, theta = 0.6, lambda_base = 2.0))]
fn find_delta(b_target: f64, k: f64, theta: f64, lambda_base: f64) -> Option<(f64, f64)> {
    match core_find_delta(k, theta, lambda_base, b_target) {
        DeltaSearch::Feasible {
            delta_star,
            b_at_delta_star,
        } => Some((delta_star, b_at_delta_star)),
        DeltaSearch::Infeasible { .. } => None,
    }
}

/// The upper envelope beta(t) for the pivot shell of the surrogate system.
#[pyfunction]
#[pyo3(signature = (t, b, k = 0.96, theta = 0.6, lambda_base = 2.0, quad_tol = 1e-10))]
fn beta_eval(t: f64, b: f64, k: f64, theta: f64, lambda_base: f64, quad_tol: f64) -> PyResult<f64> {
    EnvelopeBounds::new(k, theta, lambda_base, b, 0.0)
        .beta(t, quad_tol)
        .map_err(runtime_err)
}

fn default_certificate_params(
    k: f64,
    theta: f64,
    lambda_base: f64,
    b_target: f64,
    t_check: f64,
    margin: f64,
    quad_tol: f64,
    grid_points: usize,
) -> CertificateParams {
    CertificateParams {
        k,
        theta,
        lambda: lambda_base,
        b_target,
        delta: None,
        t0: 0.0,
        margin,
        t_check,
        quad_tol,
        grid_points,
    }
}

/// Run the full envelope verification; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (
    k = 0.96, theta = 0.6, lambda_base = 2.0, b_target = 0.447,
    t_check = 20.0, margin = 0.01, quad_tol = 1e-10, grid_points = 2048,
    include_samples = false,
))]
#[allow(clippy::too_many_arguments)]
fn certificate<'py>(
    py: Python<'py>,
    k: f64,
    theta: f64,
    lambda_base: f64,
    b_target: f64,
    t_check: f64,
    margin: f64,
    quad_tol: f64,
    grid_points: usize,
    include_samples: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let params =
        default_certificate_params(k, theta, lambda_base, b_target, t_check, margin, quad_tol, grid_points);
    let report = verify_certificate(&params).map_err(runtime_err)?;
    let out = PyDict::new(py);
    out.set_item("delta_star", report.delta_star)?;
    out.set_item("b_at_delta_star", report.b_at_delta_star)?;
    out.set_item("b_limit", report.b_limit)?;
    out.set_item("target_feasible", report.target_feasible)?;
    out.set_item("b_used", report.b_used)?;
    out.set_item("sup_beta", report.sup_beta)?;
    out.set_item("sup_beta_time", report.sup_beta_time)?;
    out.set_item("beta_at_t_check", report.beta_at_t_check)?;
    out.set_item("tail_bound", report.tail_bound)?;
    out.set_item("verdict", report.verdict)?;
    out.set_item("failing_condition", report.failing_condition.clone())?;
    out.set_item("tool_version", report.tool_version.clone())?;
    if include_samples {
        out.set_item("beta_samples", report.beta_samples.clone())?;
    }
    Ok(out)
}

/// Worst-case three-shell surrogate run; returns (sup_b_n, exit_time).
#[pyfunction]
#[pyo3(signature = (k = 0.96, theta = 0.6, lambda_base = 2.0, b_target = 0.447, t_check = 20.0))]
fn adversarial(
    k: f64,
    theta: f64,
    lambda_base: f64,
    b_target: f64,
    t_check: f64,
) -> PyResult<(f64, Option<f64>)> {
    let params = default_certificate_params(k, theta, lambda_base, b_target, t_check, 0.01, 1e-10, 256);
    let resolution = delta_star_with_fallback(&params).map_err(runtime_err)?;
    let outcome = adversarial_simulation(&params, resolution.b_used).map_err(runtime_err)?;
    Ok((outcome.sup_b_n, outcome.envelope_exit_time))
}

#[pymodule]
fn dyadic_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(rhs_dyadic, m)?)?;
    m.add_function(wrap_pyfunction!(rhs_galerkin, m)?)?;
    m.add_function(wrap_pyfunction!(rhs_c, m)?)?;
    m.add_function(wrap_pyfunction!(a_to_c, m)?)?;
    m.add_function(wrap_pyfunction!(c_to_a, m)?)?;
    m.add_function(wrap_pyfunction!(energy, m)?)?;
    m.add_function(wrap_pyfunction!(sup_theta_norm, m)?)?;
    m.add_function(wrap_pyfunction!(distances, m)?)?;
    m.add_function(wrap_pyfunction!(integrate_shells, m)?)?;
    m.add_function(wrap_pyfunction!(initial_condition, m)?)?;
    m.add_function(wrap_pyfunction!(b_of_delta, m)?)?;
    m.add_function(wrap_pyfunction!(b_limit, m)?)?;
    m.add_function(wrap_pyfunction!(find_delta, m)?)?;
    m.add_function(wrap_pyfunction!(beta_eval, m)?)?;
    m.add_function(wrap_pyfunction!(certificate, m)?)?;
    m.add_function(wrap_pyfunction!(adversarial, m)?)?;
    m.add_class::<PyTrajectory>()?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
