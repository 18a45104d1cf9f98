//! Scenario orchestration: each scenario integrates the configured system,
//! evaluates its diagnostics, writes CSV/JSON artifacts into the output
//! directory, and returns a [`RunRecord`].

use crate::certificate::{
    adversarial_simulation, delta_star_with_fallback, verify_certificate, CertificateError,
    EnvelopeBounds, ADVERSARIAL_ABOVE, ADVERSARIAL_BELOW, ADVERSARIAL_PIVOT,
};
use crate::diagnostics::{
    decay_fit, distances, energy_balance_residual, flux_watch, galerkin_drain_watch,
    onsager_integral, onsager_watch, sup_theta_norm, DiagnosticsError, GALERKIN_DRAIN_LABEL,
};
use crate::harness::config::{RunConfig, ScenarioKind, StepperKind, TruncationMode};
use crate::harness::ic::InitialConditionSpec;
use crate::harness::output::{
    diagnostics_rows, write_diagnostics_csv, write_json, write_pairs_csv, write_plot_script,
    write_states_csv, write_summary_json, OutputError, RunRecord,
};
use crate::integrator::{
    integrate, integrate_split, IntegrationStatus, IntegratorError, QuadWatch, SplitStepSpec,
    Trajectory,
};
use crate::model::{
    c_prefactor, energy, rescale, DyadicRhs, GalerkinRhs, GalerkinSpec, ModelError, ScalingMap,
    ShellState,
};
use std::fmt;
use std::fs;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

#[derive(Debug)]
pub enum HarnessError {
    Model(ModelError),
    Integrator(IntegratorError),
    Diagnostics(DiagnosticsError),
    Certificate(CertificateError),
    Output(OutputError),
    Invalid(String),
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HarnessError::Model(e) => write!(f, "{e}"),
            HarnessError::Integrator(e) => write!(f, "{e}"),
            HarnessError::Diagnostics(e) => write!(f, "{e}"),
            HarnessError::Certificate(e) => write!(f, "{e}"),
            HarnessError::Output(e) => write!(f, "{e}"),
            HarnessError::Invalid(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for HarnessError {}

impl From<ModelError> for HarnessError {
    fn from(e: ModelError) -> Self {
        HarnessError::Model(e)
    }
}
impl From<IntegratorError> for HarnessError {
    fn from(e: IntegratorError) -> Self {
        HarnessError::Integrator(e)
    }
}
impl From<DiagnosticsError> for HarnessError {
    fn from(e: DiagnosticsError) -> Self {
        HarnessError::Diagnostics(e)
    }
}
impl From<CertificateError> for HarnessError {
    fn from(e: CertificateError) -> Self {
        HarnessError::Certificate(e)
    }
}
impl From<OutputError> for HarnessError {
    fn from(e: OutputError) -> Self {
        HarnessError::Output(e)
    }
}

/// Number of concurrent ladder integrations, capped by DYADIC_THREADS.
fn thread_cap(jobs: usize) -> usize {
    let hw = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let cap = std::env::var("DYADIC_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(hw);
    cap.min(jobs).max(1)
}

/// Integration outcome folded into a status string: budget exhaustion and
/// stiffness keep their partial trajectories so outputs are still written.
fn run_integration(
    config: &RunConfig,
    rhs: Rhs<'_>,
    initial: &ShellState,
    t_span: (f64, f64),
    watch: &[(usize, f64)],
    quads: &[QuadWatch],
) -> Result<(Trajectory, String), HarnessError> {
    let result = match (config.stepper, &rhs) {
        (StepperKind::Adaptive, _) => {
            let f = rhs.as_fn();
            integrate(
                move |t, y, dy| f(t, y, dy),
                initial,
                t_span,
                &config.integrator,
                watch,
                quads,
            )
        }
        (StepperKind::Exponential, r) => {
            let steps = match config.dt_ramp_init {
                Some(d0) => SplitStepSpec::ramped(d0, config.dt_fixed),
                None => SplitStepSpec::fixed(config.dt_fixed),
            };
            let diag = r.linear_diagonal(initial.coeffs().len());
            let f = r.as_nonlinear_fn();
            integrate_split(
                move |t, y, dy| f(t, y, dy),
                &diag,
                initial,
                t_span,
                steps,
                &config.integrator,
                watch,
                quads,
            )
        }
    };
    match result {
        Ok(traj) => {
            let status = match traj.status() {
                IntegrationStatus::Complete => "ok".to_string(),
                IntegrationStatus::BudgetExhausted { t } => {
                    format!("budget exhausted at t = {t}")
                }
            };
            Ok((traj, status))
        }
        Err(IntegratorError::Stiffness {
            t,
            dt,
            shell,
            partial,
        }) => Ok((
            *partial,
            format!("numerical-failure: dt underflow at t = {t} (dt = {dt}), shell {shell} limiting"),
        )),
        Err(e) => Err(HarnessError::Integrator(e)),
    }
}

/// The right-hand side selected by the configuration.
enum Rhs<'a> {
    Dyadic(&'a DyadicRhs),
    Galerkin(&'a GalerkinRhs),
}

impl<'a> Rhs<'a> {
    fn as_fn(&self) -> impl Fn(f64, &[f64], &mut [f64]) + '_ {
        let this = match self {
            Rhs::Dyadic(r) => Rhs::Dyadic(*r),
            Rhs::Galerkin(r) => Rhs::Galerkin(*r),
        };
        move |_t: f64, y: &[f64], dy: &mut [f64]| match &this {
            Rhs::Dyadic(r) => r.eval(y, dy),
            Rhs::Galerkin(r) => r.eval(y, dy),
        }
    }

    fn as_nonlinear_fn(&self) -> impl Fn(f64, &[f64], &mut [f64]) + '_ {
        let this = match self {
            Rhs::Dyadic(r) => Rhs::Dyadic(*r),
            Rhs::Galerkin(r) => Rhs::Galerkin(*r),
        };
        move |_t: f64, y: &[f64], dy: &mut [f64]| match &this {
            Rhs::Dyadic(r) => r.eval(y, dy),
            Rhs::Galerkin(r) => r.eval_nonlinear(y, dy),
        }
    }

    fn linear_diagonal(&self, dim: usize) -> Vec<f64> {
        match self {
            Rhs::Dyadic(_) => vec![0.0; dim],
            Rhs::Galerkin(r) => r.linear_diagonal(),
        }
    }
}

fn build_rhs(config: &RunConfig) -> Result<(Option<DyadicRhs>, Option<GalerkinRhs>), HarnessError> {
    match config.truncation {
        TruncationMode::Plain => Ok((Some(DyadicRhs::new(&config.model, config.shells)), None)),
        TruncationMode::GalerkinFlux => {
            if config.galerkin_order != config.shells {
                return Err(HarnessError::Invalid(format!(
                    "galerkin order {} must match shells {}",
                    config.galerkin_order, config.shells
                )));
            }
            let spec = GalerkinSpec::new(config.galerkin_order, config.galerkin_theta)?;
            Ok((None, Some(GalerkinRhs::new(&config.model, &spec))))
        }
    }
}

fn required_ic(config: &RunConfig) -> Result<ShellState, HarnessError> {
    let spec = config.ic.ok_or_else(|| {
        HarnessError::Invalid("this scenario requires a fully specified [ic] family".into())
    })?;
    Ok(spec.build(config.shells, &config.model, config.seed)?)
}

fn ensure_out_dir(config: &RunConfig) -> Result<(), HarnessError> {
    fs::create_dir_all(&config.out_dir).map_err(|source| {
        HarnessError::Output(OutputError {
            path: config.out_dir.clone(),
            source,
        })
    })
}

fn push_file(record: &mut RunRecord, name: &str) {
    record.files.push(name.to_string());
}

fn sup_theta_over(traj: &Trajectory, config: &RunConfig) -> f64 {
    (0..traj.len())
        .map(|i| sup_theta_norm(&traj.state_at(i), config.model.theta(), &config.model))
        .fold(0.0f64, f64::max)
}

fn write_standard_series(
    config: &RunConfig,
    record: &mut RunRecord,
    traj: &Trajectory,
) -> Result<(), HarnessError> {
    let dir = &config.out_dir;
    write_states_csv(
        &dir.join("states.csv"),
        traj.samples(),
        config.shells,
        config.max_rows,
    )?;
    push_file(record, "states.csv");
    let rows = diagnostics_rows(traj, &config.model, &config.sobolev_exponents, &config.flux_shells)?;
    write_diagnostics_csv(
        &dir.join("diagnostics.csv"),
        &rows,
        &config.sobolev_exponents,
        &config.flux_shells,
        config.max_rows,
    )?;
    push_file(record, "diagnostics.csv");
    write_plot_script(&dir.join("plot.gp"), "diagnostics.csv", "states.csv", config.shells)?;
    push_file(record, "plot.gp");
    Ok(())
}

fn finalize(
    config: &RunConfig,
    mut record: RunRecord,
) -> Result<RunRecord, HarnessError> {
    record.finish();
    write_summary_json(&config.out_dir.join("summary.json"), &record)?;
    // summary.json lists itself last.
    Ok(record)
}

/// Execute the configured scenario, writing artifacts under `config.out_dir`.
/// Integration failures are recorded in the returned record's status with
/// partial outputs preserved; configuration problems are hard errors.
pub fn run_scenario(config: &RunConfig) -> Result<RunRecord, HarnessError> {
    ensure_out_dir(config)?;
    let mut record = RunRecord::begin(config.digest(), config.scenario.name());
    push_file(&mut record, "summary.json");
    match config.scenario {
        ScenarioKind::Simulate => scenario_simulate(config, &mut record)?,
        ScenarioKind::Regularity => scenario_regularity(config, &mut record)?,
        ScenarioKind::Decay => scenario_decay(config, &mut record)?,
        ScenarioKind::Scaling => scenario_scaling(config, &mut record)?,
        ScenarioKind::EnergyBalance => scenario_energy_balance(config, &mut record)?,
        ScenarioKind::Onsager => scenario_onsager(config, &mut record)?,
        ScenarioKind::GalerkinConvergence => scenario_convergence(config, &mut record)?,
        ScenarioKind::Certificate => scenario_certificate(config, &mut record)?,
    }
    finalize(config, record)
}

fn scenario_simulate(config: &RunConfig, record: &mut RunRecord) -> Result<(), HarnessError> {
    let initial = required_ic(config)?;
    let (dyadic, galerkin) = build_rhs(config)?;
    let rhs = match (&dyadic, &galerkin) {
        (Some(r), _) => Rhs::Dyadic(r),
        (_, Some(r)) => Rhs::Galerkin(r),
        _ => unreachable!(),
    };
    let (traj, status) = run_integration(config, rhs, &initial, (0.0, config.t_end), &[], &[])?;
    record.status = status;
    record.put_f64("initial_energy", energy(&initial));
    record.put_f64("final_energy", energy(&traj.final_state()));
    record.put_f64("sup_theta_max", sup_theta_over(&traj, config));
    record.put("accepted_steps", traj.stats().accepted);
    record.put("rejected_steps", traj.stats().rejected);
    record.put("samples", traj.len() as u64);
    write_standard_series(config, record, &traj)?;
    Ok(())
}

fn scenario_regularity(config: &RunConfig, record: &mut RunRecord) -> Result<(), HarnessError> {
    // The delta-ball radius defaults to the certificate's delta*.
    let resolution = delta_star_with_fallback(&config.certificate)?;
    let spec = config.ic.unwrap_or(InitialConditionSpec::DeltaBall {
        delta: resolution.delta_star,
    });
    spec.validate(config.shells)?;
    let initial = spec.build(config.shells, &config.model, config.seed)?;
    if config.truncation != TruncationMode::GalerkinFlux {
        return Err(HarnessError::Invalid(
            "the regularity scenario runs the Galerkin-with-flux system".into(),
        ));
    }
    let (_, galerkin) = build_rhs(config)?;
    let rhs_struct = galerkin.expect("galerkin truncation");
    let (traj, status) =
        run_integration(config, Rhs::Galerkin(&rhs_struct), &initial, (0.0, config.t_end), &[], &[])?;
    record.status = status;

    let theta = config.model.theta();
    let mut sup_c = 0.0f64;
    let mut sup_c_series = Vec::with_capacity(traj.len());
    let prefactors: Vec<f64> = (0..=config.shells)
        .map(|j| c_prefactor(&config.model, j))
        .collect();
    for sample in traj.samples() {
        let mut m = 0.0f64;
        for (j, &a) in sample.coeffs.iter().enumerate().skip(1) {
            m = m.max(prefactors[j] * a);
        }
        sup_c = sup_c.max(m);
        sup_c_series.push((sample.t, m));
    }
    let m0 = sup_theta_norm(&initial, theta, &config.model);
    let sup_theta_max = sup_theta_over(&traj, config);
    let bound = m0 / resolution.delta_star;

    record.put_f64("delta_star", resolution.delta_star);
    record.put_f64("b_limit", resolution.b_limit);
    record.put("target_feasible", resolution.target_feasible);
    record.put_f64("initial_sup_theta", m0);
    record.put_f64("sup_theta_max", sup_theta_max);
    record.put_f64("sup_c_max", sup_c);
    record.put("c_stays_below_one", sup_c < 1.0);
    record.put_f64("sup_norm_bound", bound);
    record.put_f64("bound_ratio", sup_theta_max / bound);
    record.put_f64("final_energy", energy(&traj.final_state()));

    write_pairs_csv(&config.out_dir.join("c_sup.csv"), "t,sup_c", &sup_c_series)?;
    push_file(record, "c_sup.csv");
    write_standard_series(config, record, &traj)?;
    Ok(())
}

fn scenario_decay(config: &RunConfig, record: &mut RunRecord) -> Result<(), HarnessError> {
    let initial = required_ic(config)?;
    if config.window.1 > config.t_end {
        return Err(HarnessError::Invalid(format!(
            "fit window end {} past t_end {}",
            config.window.1, config.t_end
        )));
    }
    let (dyadic, galerkin) = build_rhs(config)?;
    let rhs = match (&dyadic, &galerkin) {
        (Some(r), _) => Rhs::Dyadic(r),
        (_, Some(r)) => Rhs::Galerkin(r),
        _ => unreachable!(),
    };
    let (traj, status) = run_integration(config, rhs, &initial, (0.0, config.t_end), &[], &[])?;
    record.status = status;

    let theta = config.model.theta();
    let fit = decay_fit(&traj, theta, &config.model, config.window, config.fit_samples)?;
    // The closed-form bound is an upper envelope: report how tight
    // sup * t^{1/3} / |a(0)|^{2/3} is over the window.
    let e0 = energy(&initial);
    let denom = e0.powf(1.0 / 3.0); // |a(0)|^{2/3} = E^{1/3}
    let mut envelope_ratio_max = 0.0f64;
    let samples = config.fit_samples;
    let ratio = (config.window.1 / config.window.0).powf(1.0 / (samples - 1) as f64);
    let mut fit_series = Vec::with_capacity(samples);
    for i in 0..samples {
        let t = if i + 1 == samples {
            config.window.1
        } else {
            config.window.0 * ratio.powi(i as i32)
        };
        let sup = sup_theta_norm(&traj.dense_sample(t)?, theta, &config.model);
        fit_series.push((t, sup));
        envelope_ratio_max = envelope_ratio_max.max(sup * t.powf(1.0 / 3.0) / denom);
    }

    record.put_f64("slope", fit.slope);
    record.put_f64("intercept", fit.intercept);
    record.put_f64("r_squared", fit.r_squared);
    record.put_f64("window_lo", fit.window.0);
    record.put_f64("window_hi", fit.window.1);
    record.put_f64("envelope_ratio_max", envelope_ratio_max);
    record.put_f64("final_energy", energy(&traj.final_state()));
    write_json(&config.out_dir.join("fit.json"), &fit)?;
    push_file(record, "fit.json");
    write_pairs_csv(&config.out_dir.join("sup_norm.csv"), "t,sup_theta", &fit_series)?;
    push_file(record, "sup_norm.csv");
    write_standard_series(config, record, &traj)?;
    Ok(())
}

fn scenario_scaling(config: &RunConfig, record: &mut RunRecord) -> Result<(), HarnessError> {
    let initial = required_ic(config)?;
    let eta = config.eta;
    let map = ScalingMap::new(eta)?;
    let rescaled_initial = rescale(&initial, &map)?.with_time(0.0);

    let (dyadic, galerkin) = build_rhs(config)?;
    let rhs = match (&dyadic, &galerkin) {
        (Some(r), _) => Rhs::Dyadic(r),
        (_, Some(r)) => Rhs::Galerkin(r),
        _ => unreachable!(),
    };
    // Base run must reach eta * t_end to supply a(eta t); with eta = 1 the
    // spans coincide and the two runs are bit-identical.
    let base_span = (0.0, config.t_end * eta.max(1.0));
    let (base, status_a) = run_integration(config, rhs, &initial, base_span, &[], &[])?;
    let rhs2 = match (&dyadic, &galerkin) {
        (Some(r), _) => Rhs::Dyadic(r),
        (_, Some(r)) => Rhs::Galerkin(r),
        _ => unreachable!(),
    };
    let (scaled, status_b) =
        run_integration(config, rhs2, &rescaled_initial, (0.0, config.t_end), &[], &[])?;
    if status_a != "ok" {
        record.status = status_a;
    } else if status_b != "ok" {
        record.status = status_b;
    }

    let mut max_dev = 0.0f64;
    let mut dev_series = Vec::with_capacity(config.scaling_grid);
    for i in 0..config.scaling_grid {
        let t = config.t_end * i as f64 / (config.scaling_grid - 1) as f64;
        let tilde = scaled.dense_sample(t.min(scaled.span().1))?;
        let a_of_eta_t = base.dense_sample((eta * t).min(base.span().1))?;
        let mut dev = 0.0f64;
        for j in 0..=config.shells {
            dev = dev.max((tilde.coeff(j) - eta * a_of_eta_t.coeff(j)).abs());
        }
        dev_series.push((t, dev));
        max_dev = max_dev.max(dev);
    }
    record.put_f64("eta", eta);
    record.put_f64("max_deviation", max_dev);
    record.put("grid_points", config.scaling_grid as u64);
    write_pairs_csv(&config.out_dir.join("deviation.csv"), "t,max_abs_dev", &dev_series)?;
    push_file(record, "deviation.csv");
    write_states_csv(
        &config.out_dir.join("states.csv"),
        base.samples(),
        config.shells,
        config.max_rows,
    )?;
    push_file(record, "states.csv");
    write_states_csv(
        &config.out_dir.join("rescaled_states.csv"),
        scaled.samples(),
        config.shells,
        config.max_rows,
    )?;
    push_file(record, "rescaled_states.csv");
    Ok(())
}

fn scenario_energy_balance(config: &RunConfig, record: &mut RunRecord) -> Result<(), HarnessError> {
    let initial = required_ic(config)?;
    if config.truncation != TruncationMode::GalerkinFlux {
        return Err(HarnessError::Invalid(
            "the energy-balance scenario runs the Galerkin-with-flux system".into(),
        ));
    }
    let spec = GalerkinSpec::new(config.galerkin_order, config.galerkin_theta)?;
    let rhs_struct = GalerkinRhs::new(&config.model, &spec);
    let mut quads: Vec<QuadWatch> = config
        .flux_shells
        .iter()
        .map(|&j| flux_watch(&config.model, j))
        .collect();
    quads.push(galerkin_drain_watch(&config.model, &spec));
    let (traj, status) = run_integration(
        config,
        Rhs::Galerkin(&rhs_struct),
        &initial,
        (0.0, config.t_end),
        &[],
        &quads,
    )?;
    record.status = status;

    let e0 = energy(&initial);
    let e1 = energy(&traj.final_state());
    record.put_f64("initial_energy", e0);
    record.put_f64("final_energy", e1);
    record.put_f64("dissipated", e0 - e1);
    for &j in &config.flux_shells {
        let r = energy_balance_residual(&traj, j, &config.model)?;
        record.put_f64(&format!("residual_flux_{j}"), r);
        record.put_f64(&format!("residual_flux_{j}_relative"), r / e0);
    }
    // Drain identity: E(0) - E(t) = int 2 D a_n^2, checked at every sample.
    let drain = traj
        .quad_cumulative(GALERKIN_DRAIN_LABEL)
        .expect("drain watch requested");
    let mut worst = 0.0f64;
    for (sample, &q) in traj.samples().iter().zip(drain) {
        let e_t = crate::model::energy_of(&sample.coeffs);
        worst = worst.max(((e0 - e_t) - q).abs());
    }
    let dissipated = e0 - e1;
    record.put_f64("drain_residual_max", worst);
    record.put_f64(
        "drain_residual_relative",
        if dissipated > 0.0 { worst / dissipated } else { worst },
    );
    write_standard_series(config, record, &traj)?;
    Ok(())
}

fn scenario_onsager(config: &RunConfig, record: &mut RunRecord) -> Result<(), HarnessError> {
    let initial = required_ic(config)?;
    let shells_list: Vec<usize> = config
        .onsager_shells
        .clone()
        .unwrap_or_else(|| (1..=config.shells).collect());
    let (dyadic, galerkin) = build_rhs(config)?;
    let rhs = match (&dyadic, &galerkin) {
        (Some(r), _) => Rhs::Dyadic(r),
        (_, Some(r)) => Rhs::Galerkin(r),
        _ => unreachable!(),
    };
    let quads: Vec<QuadWatch> = shells_list
        .iter()
        .map(|&j| onsager_watch(&config.model, j))
        .collect();
    let (traj, status) =
        run_integration(config, rhs, &initial, (0.0, config.t_end), &[], &quads)?;
    record.status = status;

    let mut rows = Vec::with_capacity(shells_list.len());
    let mut prev: Option<f64> = None;
    for &j in &shells_list {
        let v = onsager_integral(&traj, j, &config.model)?;
        record.put_f64(&format!("onsager_{j}"), v);
        if let Some(p) = prev {
            if p > 0.0 {
                record.put_f64(&format!("onsager_ratio_{j}"), v / p);
            }
        }
        prev = Some(v);
        rows.push((j as f64, v));
    }
    let e0 = energy(&initial);
    let e1 = energy(&traj.final_state());
    record.put_f64("initial_energy", e0);
    record.put_f64("final_energy", e1);
    record.put_f64("dissipated", e0 - e1);
    write_pairs_csv(&config.out_dir.join("onsager.csv"), "shell,integral", &rows)?;
    push_file(record, "onsager.csv");
    write_standard_series(config, record, &traj)?;
    Ok(())
}

/// One rung of the Galerkin refinement ladder.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ConvergencePoint {
    pub order_low: usize,
    pub order_high: usize,
    pub d_weak: f64,
    pub d_strong: f64,
}

/// Integrate the Galerkin systems of the given orders from prefix-consistent
/// initial data and tabulate consecutive-pair distances at the probe time.
/// Rungs run concurrently, capped by DYADIC_THREADS; assembly order is fixed.
pub fn convergence_study(
    config: &RunConfig,
    orders: &[usize],
) -> Result<Vec<ConvergencePoint>, HarnessError> {
    if orders.len() < 2 || orders.windows(2).any(|w| w[1] <= w[0]) {
        return Err(HarnessError::Invalid(
            "orders must be strictly increasing with at least two entries".into(),
        ));
    }
    let spec = config.ic.ok_or_else(|| {
        HarnessError::Invalid("the convergence scenario requires an [ic] family".into())
    })?;

    let states: Vec<Mutex<Option<Result<ShellState, HarnessError>>>> =
        orders.iter().map(|_| Mutex::new(None)).collect();
    let next_job = AtomicUsize::new(0);
    let workers = thread_cap(orders.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next_job.fetch_add(1, Ordering::Relaxed);
                if i >= orders.len() {
                    break;
                }
                let n = orders[i];
                let run_one = || -> Result<ShellState, HarnessError> {
                    let gspec = GalerkinSpec::new(n, config.galerkin_theta)?;
                    let rhs = GalerkinRhs::new(&config.model, &gspec);
                    let initial = spec.build(n, &config.model, config.seed)?;
                    let (traj, status) = run_integration(
                        config,
                        Rhs::Galerkin(&rhs),
                        &initial,
                        (0.0, config.probe_t),
                        &[],
                        &[],
                    )?;
                    if status != "ok" {
                        return Err(HarnessError::Invalid(format!("order {n}: {status}")));
                    }
                    Ok(traj.dense_sample(config.probe_t)?)
                };
                *states[i].lock().expect("no poisoned ladder slot") = Some(run_one());
            });
        }
    });

    let mut finals = Vec::with_capacity(orders.len());
    for slot in states {
        finals.push(slot.into_inner().expect("no poisoned ladder slot").expect("every job ran")?);
    }
    let mut table = Vec::with_capacity(orders.len() - 1);
    for i in 0..orders.len() - 1 {
        let (d_strong, d_weak) = distances(&finals[i], &finals[i + 1]);
        table.push(ConvergencePoint {
            order_low: orders[i],
            order_high: orders[i + 1],
            d_weak,
            d_strong,
        });
    }
    Ok(table)
}

fn scenario_convergence(config: &RunConfig, record: &mut RunRecord) -> Result<(), HarnessError> {
    let table = convergence_study(config, &config.orders)?;
    let mut csv = String::from("order_low,order_high,d_weak,d_strong\n");
    for p in &table {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            p.order_low, p.order_high, p.d_weak, p.d_strong
        ));
    }
    fs::write(config.out_dir.join("ladder.csv"), csv).map_err(|source| OutputError {
        path: config.out_dir.join("ladder.csv"),
        source,
    })?;
    push_file(record, "ladder.csv");
    let monotone = table.windows(2).all(|w| w[1].d_weak <= w[0].d_weak);
    record.put("d_weak_monotone_decreasing", monotone);
    record.put_f64("probe_t", config.probe_t);
    for p in &table {
        record.put_f64(&format!("d_weak_{}_{}", p.order_low, p.order_high), p.d_weak);
        record.put_f64(
            &format!("d_strong_{}_{}", p.order_low, p.order_high),
            p.d_strong,
        );
    }
    write_json(&config.out_dir.join("ladder.json"), &table)?;
    push_file(record, "ladder.json");
    Ok(())
}

fn scenario_certificate(config: &RunConfig, record: &mut RunRecord) -> Result<(), HarnessError> {
    let report = verify_certificate(&config.certificate)?;
    let adversarial = adversarial_simulation(&config.certificate, report.b_used)?;

    // Domination checks hold on [t0, exit], where exit is the first time b_n
    // falls back through k (the envelope hypotheses assume b_n >= k).
    let env = EnvelopeBounds::new(
        config.certificate.k,
        config.certificate.theta,
        config.certificate.lambda,
        report.b_used,
        config.certificate.t0,
    );
    let exit = adversarial
        .envelope_exit_time
        .unwrap_or(config.certificate.t0 + config.certificate.t_check);
    let traj = &adversarial.trajectory;
    let stride = (traj.len() / 256).max(1);
    let mut max_bn_minus_beta = f64::NEG_INFINITY;
    let mut min_above_minus_tilde = f64::INFINITY;
    let mut max_below_minus_hat = f64::NEG_INFINITY;
    let mut compared = 0usize;
    for (i, sample) in traj.samples().iter().enumerate() {
        if sample.t > exit {
            break;
        }
        if i % stride != 0 {
            continue;
        }
        let beta = env.beta(sample.t, config.certificate.quad_tol)?;
        max_bn_minus_beta = max_bn_minus_beta.max(sample.coeffs[ADVERSARIAL_PIVOT] - beta);
        min_above_minus_tilde = min_above_minus_tilde
            .min(sample.coeffs[ADVERSARIAL_ABOVE] - env.b_tilde(sample.t)?);
        max_below_minus_hat =
            max_below_minus_hat.max(sample.coeffs[ADVERSARIAL_BELOW] - env.b_hat(sample.t)?);
        compared += 1;
    }

    record.put("verdict", report.verdict);
    if let Some(c) = &report.failing_condition {
        record.put("failing_condition", c.clone());
    }
    record.put_f64("b_limit", report.b_limit);
    record.put_f64("b_used", report.b_used);
    record.put("target_feasible", report.target_feasible);
    record.put_f64("delta_star", report.delta_star);
    record.put_f64("sup_beta", report.sup_beta);
    record.put_f64("sup_beta_time", report.sup_beta_time);
    record.put_f64("tail_bound", report.tail_bound);
    record.put_f64("adversarial_sup_b_n", adversarial.sup_b_n);
    record.put_f64("envelope_exit_time", exit);
    record.put("domination_points_compared", compared as u64);
    record.put_f64("max_b_n_minus_beta", max_bn_minus_beta);
    record.put_f64("min_above_minus_tilde", min_above_minus_tilde);
    record.put_f64("max_below_minus_hat", max_below_minus_hat);

    write_json(&config.out_dir.join("report.json"), &report)?;
    push_file(record, "report.json");
    write_pairs_csv(&config.out_dir.join("beta.csv"), "t,beta", &report.beta_samples)?;
    push_file(record, "beta.csv");
    let mut csv = String::from("t,b_below,b_pivot,b_above\n");
    for s in traj.samples() {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            s.t, s.coeffs[ADVERSARIAL_BELOW], s.coeffs[ADVERSARIAL_PIVOT], s.coeffs[ADVERSARIAL_ABOVE]
        ));
    }
    fs::write(config.out_dir.join("adversarial.csv"), csv).map_err(|source| OutputError {
        path: config.out_dir.join("adversarial.csv"),
        source,
    })?;
    push_file(record, "adversarial.csv");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::parse_config;

    fn test_config(text: &str) -> RunConfig {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = parse_config(text).unwrap();
        cfg.out_dir = dir.keep();
        cfg
    }

    fn cleanup(config: &RunConfig) {
        let _ = fs::remove_dir_all(&config.out_dir);
    }

    #[test]
    fn simulate_writes_artifacts_and_scalars() {
        let cfg = test_config("scenario = simulate\nshells = 5\nt_end = 0.2\n");
        let record = run_scenario(&cfg).unwrap();
        assert_eq!(record.status, "ok");
        for f in &record.files {
            let path = cfg.out_dir.join(f);
            assert!(path.exists(), "{f} missing");
            assert!(fs::metadata(&path).unwrap().len() > 0, "{f} empty");
        }
        assert!(record.summary.contains_key("final_energy"));
        cleanup(&cfg);
    }

    #[test]
    fn identical_configs_reproduce_digests_and_csv_bytes() {
        let cfg1 = test_config("scenario = simulate\nshells = 4\nt_end = 0.1\nseed = 5\n");
        let cfg2 = test_config("scenario = simulate\nshells = 4\nt_end = 0.1\nseed = 5\n");
        let r1 = run_scenario(&cfg1).unwrap();
        let r2 = run_scenario(&cfg2).unwrap();
        assert_eq!(r1.config_digest, r2.config_digest);
        let a = fs::read(cfg1.out_dir.join("states.csv")).unwrap();
        let b = fs::read(cfg2.out_dir.join("states.csv")).unwrap();
        assert_eq!(a, b);
        cleanup(&cfg1);
        cleanup(&cfg2);
    }

    #[test]
    fn scaling_identity_at_eta_one() {
        let cfg = test_config(
            "scenario = scaling\nshells = 5\nt_end = 0.2\n[scaling]\neta = 1.0\ngrid = 5\n",
        );
        let record = run_scenario(&cfg).unwrap();
        let dev = record.summary["max_deviation"].as_f64().unwrap();
        assert_eq!(dev, 0.0, "identical runs must agree exactly");
        cleanup(&cfg);
    }

    #[test]
    fn energy_balance_zero_data_residual_zero() {
        let cfg = test_config(
            "scenario = energy-balance\nshells = 5\nt_end = 0.2\n[ic]\nfamily = geometric\namplitude = 0\n",
        );
        let record = run_scenario(&cfg).unwrap();
        assert_eq!(record.summary["residual_flux_3"].as_f64().unwrap(), 0.0);
        assert_eq!(record.summary["drain_residual_max"].as_f64().unwrap(), 0.0);
        cleanup(&cfg);
    }

    #[test]
    fn convergence_zero_data_gives_zero_distances() {
        let cfg = test_config(
            "scenario = galerkin-convergence\n[ic]\nfamily = geometric\namplitude = 0\n[convergence]\norders = 4,6,8\nprobe_t = 0.05\n",
        );
        let table = convergence_study(&cfg, &cfg.orders).unwrap();
        assert_eq!(table.len(), 2);
        assert!(table.iter().all(|p| p.d_weak == 0.0 && p.d_strong == 0.0));
        cleanup(&cfg);
    }

    #[test]
    fn convergence_orders_validation() {
        let cfg = test_config("scenario = galerkin-convergence\n");
        assert!(convergence_study(&cfg, &[8]).is_err());
        assert!(convergence_study(&cfg, &[8, 8]).is_err());
        cleanup(&cfg);
    }

    #[test]
    fn summary_json_reparses_to_equal_record() {
        let cfg = test_config("scenario = simulate\nshells = 4\nt_end = 0.1\n");
        let record = run_scenario(&cfg).unwrap();
        let text = fs::read_to_string(cfg.out_dir.join("summary.json")).unwrap();
        let back: RunRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(record, back);
        cleanup(&cfg);
    }

    #[test]
    fn budget_exhaustion_is_reported_not_fatal() {
        let cfg = test_config(
            "scenario = simulate\nshells = 6\nt_end = 5\n[integrator]\nmax_steps = 40\n",
        );
        let record = run_scenario(&cfg).unwrap();
        assert!(record.status.starts_with("budget exhausted"), "{}", record.status);
        assert!(cfg.out_dir.join("states.csv").exists());
        cleanup(&cfg);
    }
}
