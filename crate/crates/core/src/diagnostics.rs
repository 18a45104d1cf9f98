//! Functionals of states and trajectories: energy balance, flux, weighted
//! sup- and Sobolev-type norms, dissipation integrals, the strong and weak
//! distances, and power-law decay fits.

use crate::integrator::{simpson_refine, IntegratorError, QuadWatch, Trajectory};
use crate::model::{energy_of, GalerkinSpec, ModelParams, ShellState, CASCADE_EXPONENT};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum DiagnosticsError {
    ShellOutOfRange { shell: usize, truncation: usize },
    InsufficientSamples { len: usize },
    /// A fit-window sample produced a nonpositive norm (log undefined).
    NonPositiveNorm { t: f64, value: f64 },
    InvalidWindow { t_a: f64, t_b: f64 },
    Integrator(String),
}

impl fmt::Display for DiagnosticsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiagnosticsError::ShellOutOfRange { shell, truncation } => {
                write!(f, "shell {shell} out of range for truncation {truncation}")
            }
            DiagnosticsError::InsufficientSamples { len } => {
                write!(f, "trajectory has {len} samples, need at least 2")
            }
            DiagnosticsError::NonPositiveNorm { t, value } => {
                write!(f, "nonpositive norm {value} at t = {t} in fit window")
            }
            DiagnosticsError::InvalidWindow { t_a, t_b } => {
                write!(f, "invalid fit window [{t_a}, {t_b}]")
            }
            DiagnosticsError::Integrator(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for DiagnosticsError {}

impl From<IntegratorError> for DiagnosticsError {
    fn from(e: IntegratorError) -> Self {
        DiagnosticsError::Integrator(e.to_string())
    }
}

/// One row of the diagnostics time series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub energy: f64,
    pub sup_theta: f64,
    /// H^s values, in the order of the configured exponent list.
    pub sobolev: Vec<f64>,
    /// Flux values, in the order of the configured shell list.
    pub flux: Vec<f64>,
}

impl DiagnosticsRecord {
    pub fn from_state(
        state: &ShellState,
        params: &ModelParams,
        sobolev_exponents: &[f64],
        flux_shells: &[usize],
    ) -> Result<Self, DiagnosticsError> {
        let sobolev = sobolev_exponents
            .iter()
            .map(|&s| sobolev_norm(state, s, params))
            .collect();
        let flux_values = flux_shells
            .iter()
            .map(|&j| flux(state, j, params))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DiagnosticsRecord {
            t: state.time(),
            energy: crate::model::energy(state),
            sup_theta: sup_theta_norm(state, params.theta(), params),
            sobolev,
            flux: flux_values,
        })
    }
}

/// max over 1 <= j <= N of lambda_j^theta |a_j|.
pub fn sup_theta_norm(state: &ShellState, theta: f64, params: &ModelParams) -> f64 {
    let mut sup = 0.0f64;
    for (j, &a) in state.coeffs().iter().enumerate().skip(1) {
        let weighted = params.lambda_j_pow(j as i32, theta) * a.abs();
        sup = sup.max(weighted);
    }
    sup
}

/// H^s norm (sum of lambda_j^{2s} a_j^2)^{1/2}.
pub fn sobolev_norm(state: &ShellState, s: f64, params: &ModelParams) -> f64 {
    state
        .coeffs()
        .iter()
        .enumerate()
        .skip(1)
        .map(|(j, &a)| params.lambda_j_pow(j as i32, 2.0 * s) * a * a)
        .sum::<f64>()
        .sqrt()
}

/// Energy flux through shell J: lambda_J^{5/2} a_J^2 a_{J+1}.
pub fn flux(
    state: &ShellState,
    shell: usize,
    params: &ModelParams,
) -> Result<f64, DiagnosticsError> {
    let n = state.truncation();
    if shell < 1 || shell >= n {
        return Err(DiagnosticsError::ShellOutOfRange {
            shell,
            truncation: n,
        });
    }
    Ok(params.lambda_j_pow(shell as i32, CASCADE_EXPONENT)
        * state.coeff(shell)
        * state.coeff(shell)
        * state.coeff(shell + 1))
}

pub fn flux_watch_label(shell: usize) -> String {
    format!("flux_{shell}")
}

pub fn onsager_watch_label(shell: usize) -> String {
    format!("onsager_{shell}")
}

pub const GALERKIN_DRAIN_LABEL: &str = "galerkin_drain";

/// Streaming flux accumulator for [`crate::integrator::integrate`].
pub fn flux_watch(params: &ModelParams, shell: usize) -> QuadWatch<'static> {
    let coef = params.lambda_j_pow(shell as i32, CASCADE_EXPONENT);
    QuadWatch::new(flux_watch_label(shell), move |y: &[f64]| {
        let up = y.get(shell + 1).copied().unwrap_or(0.0);
        coef * y[shell] * y[shell] * up
    })
}

pub fn onsager_watch(params: &ModelParams, shell: usize) -> QuadWatch<'static> {
    let w = params.lambda_j_pow(shell as i32, 5.0 / 6.0);
    QuadWatch::new(onsager_watch_label(shell), move |y: &[f64]| {
        let v = w * y[shell];
        v * v * v
    })
}

/// Integrand of the Galerkin energy-drain identity: 2 D a_n^2.
pub fn galerkin_drain_watch(params: &ModelParams, spec: &GalerkinSpec) -> QuadWatch<'static> {
    let d = spec.damping_coefficient(params);
    let n = spec.order();
    QuadWatch::new(GALERKIN_DRAIN_LABEL, move |y: &[f64]| 2.0 * d * y[n] * y[n])
}

/// Integrate a state functional over [a, b] of the trajectory by composite
/// Simpson refinement on the dense output, one stored interval at a time.
fn dense_integral(
    traj: &Trajectory,
    a: f64,
    b: f64,
    f: &dyn Fn(&[f64]) -> f64,
) -> Result<f64, DiagnosticsError> {
    let dim = traj.samples()[0].coeffs.len();
    let mut buf = vec![0.0; dim];
    let mut total = 0.0;
    for w in traj.samples().windows(2) {
        let (lo, hi) = (w[0].t.max(a), w[1].t.min(b));
        if lo >= hi {
            continue;
        }
        let mut g = |t: f64| {
            traj.dense_eval_into(t, &mut buf)
                .expect("t within trajectory span");
            f(&buf)
        };
        total += simpson_refine(&mut g, lo, hi, 1e-8, f64::MIN_POSITIVE);
    }
    Ok(total)
}

fn cumulative_at_samples(
    traj: &Trajectory,
    label: &str,
    f: &dyn Fn(&[f64]) -> f64,
) -> Result<Vec<f64>, DiagnosticsError> {
    if let Some(series) = traj.quad_cumulative(label) {
        return Ok(series.to_vec());
    }
    // Post-hoc path for trajectories without a streamed accumulator.
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(traj.len());
    out.push(0.0);
    for i in 1..traj.len() {
        let (ta, tb) = (traj.samples()[i - 1].t, traj.samples()[i].t);
        acc += dense_integral(traj, ta, tb, f)?;
        out.push(acc);
    }
    Ok(out)
}

/// Maximum over sample times of the telescoped energy-balance residual
/// |1/2 sum_{j<=J} a_j^2(t) - 1/2 sum_{j<=J} a_j^2(0) + int_0^t Pi_J dtau|.
pub fn energy_balance_residual(
    traj: &Trajectory,
    shell: usize,
    params: &ModelParams,
) -> Result<f64, DiagnosticsError> {
    if traj.len() < 2 {
        return Err(DiagnosticsError::InsufficientSamples { len: traj.len() });
    }
    let truncation = traj.samples()[0].coeffs.len() - 1;
    if shell < 1 || shell >= truncation {
        return Err(DiagnosticsError::ShellOutOfRange { shell, truncation });
    }
    let coef = params.lambda_j_pow(shell as i32, CASCADE_EXPONENT);
    let integrand = move |y: &[f64]| coef * y[shell] * y[shell] * y[shell + 1];
    let cumulative = cumulative_at_samples(traj, &flux_watch_label(shell), &integrand)?;

    let half_low_energy = |coeffs: &[f64]| 0.5 * energy_of(&coeffs[..=shell]);
    let e0 = half_low_energy(&traj.samples()[0].coeffs);
    let mut worst = 0.0f64;
    for (sample, &q) in traj.samples().iter().zip(&cumulative) {
        let r = (half_low_energy(&sample.coeffs) - e0 + q).abs();
        worst = worst.max(r);
    }
    Ok(worst)
}

/// int over the trajectory span of (lambda_j^{5/6} a_j)^3 dt.
pub fn onsager_integral(
    traj: &Trajectory,
    shell: usize,
    params: &ModelParams,
) -> Result<f64, DiagnosticsError> {
    if traj.len() < 2 {
        return Err(DiagnosticsError::InsufficientSamples { len: traj.len() });
    }
    let truncation = traj.samples()[0].coeffs.len() - 1;
    if shell < 1 || shell > truncation {
        return Err(DiagnosticsError::ShellOutOfRange { shell, truncation });
    }
    if let Some(series) = traj.quad_cumulative(&onsager_watch_label(shell)) {
        return Ok(*series.last().expect("nonempty series"));
    }
    let w = params.lambda_j_pow(shell as i32, 5.0 / 6.0);
    let (a, b) = traj.span();
    dense_integral(traj, a, b, &move |y: &[f64]| {
        let v = w * y[shell];
        v * v * v
    })
}

/// Strong and weak distances (d_S, d_W). States of different truncations are
/// compared by zero-padding the shorter one. The weak weight is 2^{-j^2}.
pub fn distances(x: &ShellState, y: &ShellState) -> (f64, f64) {
    let n = x.coeffs().len().max(y.coeffs().len());
    let mut sum_sq = 0.0;
    let mut weak = 0.0;
    for j in 0..n {
        let d = (x.coeff(j) - y.coeff(j)).abs();
        sum_sq += d * d;
        if d > 0.0 {
            let weight = (-((j * j) as f64)).exp2();
            weak += weight * d / (1.0 + d);
        }
    }
    (sum_sq.sqrt(), weak)
}

/// Least-squares power-law fit of a trajectory's sup-theta norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
}

/// Fit log(sup_j lambda_j^theta a_j) against log(t) over `window`, sampling
/// the dense output at `samples` geometrically spaced times.
pub fn decay_fit(
    traj: &Trajectory,
    theta: f64,
    params: &ModelParams,
    window: (f64, f64),
    samples: usize,
) -> Result<FitResult, DiagnosticsError> {
    let (t_a, t_b) = window;
    if !(t_a > 0.0 && t_b > t_a) || samples < 2 {
        return Err(DiagnosticsError::InvalidWindow { t_a, t_b });
    }
    let ratio = (t_b / t_a).powf(1.0 / (samples - 1) as f64);
    let mut xs = Vec::with_capacity(samples);
    let mut ys = Vec::with_capacity(samples);
    for i in 0..samples {
        let t = if i + 1 == samples {
            t_b
        } else {
            t_a * ratio.powi(i as i32)
        };
        let state = traj.dense_sample(t)?;
        let norm = sup_theta_norm(&state, theta, params);
        if norm <= 0.0 {
            return Err(DiagnosticsError::NonPositiveNorm { t, value: norm });
        }
        xs.push(t.ln());
        ys.push(norm.ln());
    }
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    let syy: f64 = ys.iter().map(|y| (y - ym) * (y - ym)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 {
        1.0 // constant data: a zero-slope line explains everything
    } else {
        (sxy * sxy) / (sxx * syy)
    };
    Ok(FitResult {
        slope,
        intercept: ym - slope * xm,
        r_squared,
        window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::rng::SplitMix64;
    use crate::integrator::{integrate, IntegratorConfig};
    use crate::model::{DyadicRhs, VariableKind};

    fn state_a(coeffs: &[f64]) -> ShellState {
        ShellState::new(0.0, coeffs.to_vec(), VariableKind::A).unwrap()
    }

    #[test]
    fn sup_norm_values() {
        let p = ModelParams::standard();
        assert_eq!(
            sup_theta_norm(&ShellState::zeros(5, VariableKind::A), 0.6, &p),
            0.0
        );
        // a_j = 2^{-j}: weighted sequence 2^{-2j/5} peaks at j = 1.
        let mut coeffs = vec![0.0];
        for j in 1..=10 {
            coeffs.push(2.0f64.powi(-j));
        }
        let sup = sup_theta_norm(&state_a(&coeffs), 0.6, &p);
        assert!((sup - 0.757858283255199).abs() < 1e-14);
        // single mode a_5 = 1: lambda_5^{3/5} = 2^3.
        let mut coeffs = vec![0.0; 6];
        coeffs[5] = 1.0;
        assert!((sup_theta_norm(&state_a(&coeffs), 0.6, &p) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn sup_norm_is_absolutely_homogeneous() {
        let p = ModelParams::standard();
        let s = state_a(&[0.0, 0.4, 0.7, 0.1]);
        let scaled =
            crate::model::rescale(&s, &crate::model::ScalingMap::new(3.5).unwrap()).unwrap();
        let a = sup_theta_norm(&scaled, 0.6, &p);
        let b = 3.5 * sup_theta_norm(&s, 0.6, &p);
        assert!((a - b).abs() < 1e-14 * b);
    }

    #[test]
    fn flux_values() {
        let p = ModelParams::standard();
        let s = state_a(&[0.0, 0.0, 1.0, 1.0, 0.0]);
        assert_eq!(flux(&s, 2, &p).unwrap(), 32.0);
        assert_eq!(flux(&s, 3, &p).unwrap(), 0.0); // a_4 = 0
        assert!(flux(&s, 0, &p).is_err());
        assert!(flux(&s, 4, &p).is_err());
    }

    #[test]
    fn sobolev_norm_single_mode() {
        let p = ModelParams::standard();
        let mut coeffs = vec![0.0; 4];
        coeffs[3] = 2.0;
        let v = sobolev_norm(&state_a(&coeffs), 0.5, &p);
        assert!((v - 2.0 * 8.0f64.powf(0.5)).abs() < 1e-12);
    }

    #[test]
    fn residual_zero_trajectory() {
        let p = ModelParams::standard();
        let traj = Trajectory::from_samples(
            VariableKind::A,
            vec![(0.0, vec![0.0; 6]), (0.5, vec![0.0; 6]), (1.0, vec![0.0; 6])],
        )
        .unwrap();
        assert_eq!(energy_balance_residual(&traj, 3, &p).unwrap(), 0.0);
    }

    #[test]
    fn residual_small_on_integrated_run() {
        let p = ModelParams::standard();
        let rhs = DyadicRhs::new(&p, 6);
        let init = state_a(&[0.0, 0.7, 0.3, 0.1, 0.05, 0.02, 0.01]);
        let rel_tol = 1e-10;
        let traj = integrate(
            |_, y, dy| rhs.eval(y, dy),
            &init,
            (0.0, 1.0),
            &IntegratorConfig {
                rel_tol,
                abs_tol: 1e-13,
                ..Default::default()
            },
            &[],
            &[],
        )
        .unwrap();
        let e0 = crate::model::energy(&init);
        let budget = 10.0 * rel_tol * e0 * 1.0;
        for j in [2usize, 4] {
            let r = energy_balance_residual(&traj, j, &p).unwrap();
            assert!(r <= budget.max(1e-11), "J = {j}: residual {r} > {budget}");
        }
    }

    #[test]
    fn streamed_and_dense_quadrature_agree() {
        let p = ModelParams::standard();
        let rhs = DyadicRhs::new(&p, 5);
        let init = state_a(&[0.0, 0.8, 0.4, 0.2, 0.1, 0.05]);
        let watches = [flux_watch(&p, 2)];
        let traj = integrate(
            |_, y, dy| rhs.eval(y, dy),
            &init,
            (0.0, 0.8),
            &IntegratorConfig::default(),
            &[],
            &watches,
        )
        .unwrap();
        let dense_total = super::dense_integral(&traj, 0.0, 0.8, &|y: &[f64]| {
            p.lambda_j_pow(2, CASCADE_EXPONENT) * y[2] * y[2] * y[3]
        })
        .unwrap();
        let streamed_total = *traj
            .quad_cumulative(&flux_watch_label(2))
            .unwrap()
            .last()
            .unwrap();
        assert!(
            (dense_total - streamed_total).abs() <= 1e-7 * streamed_total.abs() + 1e-12,
            "dense {dense_total} vs streamed {streamed_total}"
        );
    }

    #[test]
    fn onsager_constant_boundary_case() {
        // a_j = 2^{-5j/6} held fixed on [0, 1]: integral is exactly 1 per shell.
        let p = ModelParams::standard();
        let n = 6;
        let mut coeffs = vec![0.0];
        for j in 1..=n {
            coeffs.push(2.0f64.powf(-5.0 * j as f64 / 6.0));
        }
        let traj = Trajectory::from_samples(
            VariableKind::A,
            vec![
                (0.0, coeffs.clone()),
                (0.5, coeffs.clone()),
                (1.0, coeffs.clone()),
            ],
        )
        .unwrap();
        for j in 1..=n {
            let v = onsager_integral(&traj, j, &p).unwrap();
            assert!((v - 1.0).abs() < 1e-9, "shell {j}: {v}");
        }
    }

    #[test]
    fn onsager_zero_trajectory() {
        let p = ModelParams::standard();
        let traj = Trajectory::from_samples(
            VariableKind::A,
            vec![(0.0, vec![0.0; 4]), (1.0, vec![0.0; 4])],
        )
        .unwrap();
        assert_eq!(onsager_integral(&traj, 2, &p).unwrap(), 0.0);
    }

    #[test]
    fn distance_values() {
        let x = state_a(&[0.0, 1.0]);
        let y = ShellState::zeros(1, VariableKind::A);
        let (ds, dw) = distances(&x, &y);
        assert_eq!(ds, 1.0);
        assert!((dw - 0.25).abs() < 1e-15);
        let (ds, dw) = distances(&x, &x);
        assert_eq!((ds, dw), (0.0, 0.0));
        // zero-padding: compare different truncations
        let z = ShellState::zeros(8, VariableKind::A);
        let (ds2, dw2) = distances(&x, &z);
        assert_eq!(ds2, 1.0);
        assert!((dw2 - 0.25).abs() < 1e-15);
    }

    #[test]
    fn weak_distance_metric_properties() {
        let mut rng = SplitMix64::new(13);
        let mut random_state = |n: usize| {
            let mut coeffs = vec![0.0];
            for _ in 1..=n {
                coeffs.push(4.0 * rng.next_f64() - 2.0);
            }
            ShellState::new(0.0, coeffs, VariableKind::A).unwrap()
        };
        for _ in 0..200 {
            let x = random_state(6);
            let y = random_state(6);
            let z = random_state(6);
            let (_, dxy) = distances(&x, &y);
            let (_, dyx) = distances(&y, &x);
            assert_eq!(dxy, dyx);
            assert!(dxy < 1.2);
            let (_, dxz) = distances(&x, &z);
            let (_, dzy) = distances(&z, &y);
            assert!(dxy <= dxz + dzy + 1e-15, "{dxy} > {dxz} + {dzy}");
            if x != y {
                assert!(dxy > 0.0);
            }
        }
    }

    #[test]
    fn fit_recovers_exact_power_law() {
        let p = ModelParams::standard();
        // sup norm realized at shell 1: a_1(t) = C t^{-1/3} / lambda_1^theta.
        let c = 0.7;
        let w = 2.0f64.powf(0.6);
        let samples = 40;
        let (t_a, t_b) = (1.0f64, 50.0f64);
        let ratio = (t_b / t_a).powf(1.0 / (samples - 1) as f64);
        let mut rows = Vec::new();
        for i in 0..samples {
            let t: f64 = if i + 1 == samples {
                t_b
            } else {
                t_a * ratio.powi(i as i32)
            };
            rows.push((t, vec![0.0, c * t.powf(-1.0 / 3.0) / w]));
        }
        let traj = Trajectory::from_samples(VariableKind::A, rows).unwrap();
        let fit = decay_fit(&traj, 0.6, &p, (t_a, t_b), samples).unwrap();
        assert!((fit.slope + 1.0 / 3.0).abs() < 1e-10, "slope {}", fit.slope);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!((fit.intercept - c.ln()).abs() < 1e-10);
    }

    #[test]
    fn fit_constant_norm_has_zero_slope() {
        let p = ModelParams::standard();
        let rows = vec![
            (0.5, vec![0.0, 1.0]),
            (1.0, vec![0.0, 1.0]),
            (2.0, vec![0.0, 1.0]),
            (4.0, vec![0.0, 1.0]),
        ];
        let traj = Trajectory::from_samples(VariableKind::A, rows).unwrap();
        let fit = decay_fit(&traj, 0.6, &p, (0.5, 4.0), 4).unwrap();
        assert_eq!(fit.slope, 0.0);
        assert_eq!(fit.r_squared, 1.0);
    }

    #[test]
    fn fit_rejects_nonpositive_norms_and_bad_windows() {
        let p = ModelParams::standard();
        let rows = vec![(0.5, vec![0.0, 0.0]), (4.0, vec![0.0, 0.0])];
        let traj = Trajectory::from_samples(VariableKind::A, rows).unwrap();
        assert!(matches!(
            decay_fit(&traj, 0.6, &p, (0.5, 4.0), 4),
            Err(DiagnosticsError::NonPositiveNorm { .. })
        ));
        assert!(decay_fit(&traj, 0.6, &p, (4.0, 0.5), 4).is_err());
        assert!(decay_fit(&traj, 0.6, &p, (-1.0, 4.0), 4).is_err());
    }

    #[test]
    fn record_row_shape() {
        let p = ModelParams::standard();
        let s = state_a(&[0.0, 0.5, 0.25, 0.12, 0.06]);
        let rec = DiagnosticsRecord::from_state(&s, &p, &[0.6, 5.0 / 6.0], &[1, 2]).unwrap();
        assert!(rec.energy >= 0.0);
        assert!(rec.sup_theta >= 0.0);
        assert_eq!(rec.sobolev.len(), 2);
        assert_eq!(rec.flux.len(), 2);
        assert!(rec.flux.iter().all(|&f| f >= 0.0)); // nonnegative state
    }
}
