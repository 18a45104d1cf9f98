//! Closed-form Gronwall envelopes for the pivot-shell surrogate system and a
//! numerical verdict that the top envelope stays below 1 on a finite
//! interval plus an exponentially small tail.
//!
//! The machinery, with pivot shell n, reference time t0, drain constant
//! gamma = lambda^{5/2-3θ} and fast rate r = lambda^{5/2-θ} gamma:
//!
//! - `B(δ)`: lower bound for b_{n+1}(t0) accumulated while b_n climbs from δ
//!   to the threshold constant k;
//! - `b_hat`/`b_tilde`: exponential envelopes for b_{n∓1}(t) past t0;
//! - `beta(t)`: the resulting upper envelope for b_n(t), evaluated by
//!   adaptive quadrature of its explicit integral form;
//! - `beta_prime_tail`: a closed-form overestimate of the envelope's motion
//!   past a finite horizon.
//!
//! The verifier reports every intermediate constant rather than assuming the
//! literature values; discrepancies are surfaced in the report, not patched.

use crate::integrator::{
    integrate, CrossingDirection, IntegratorConfig, IntegratorError, PositivityMode, Trajectory,
};
use crate::model::{ModelError, ShellState, VariableKind, CASCADE_EXPONENT};
use crate::quad::{self, QuadError};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug)]
pub enum CertificateError {
    Domain { what: String },
    Quadrature(QuadError),
    Integrator(IntegratorError),
    Model(ModelError),
}

impl fmt::Display for CertificateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CertificateError::Domain { what } => write!(f, "domain error: {what}"),
            CertificateError::Quadrature(e) => write!(f, "quadrature error: {e}"),
            CertificateError::Integrator(e) => write!(f, "integration error: {e}"),
            CertificateError::Model(e) => write!(f, "model error: {e}"),
        }
    }
}

impl std::error::Error for CertificateError {}

impl From<QuadError> for CertificateError {
    fn from(e: QuadError) -> Self {
        CertificateError::Quadrature(e)
    }
}

impl From<IntegratorError> for CertificateError {
    fn from(e: IntegratorError) -> Self {
        CertificateError::Integrator(e)
    }
}

impl From<ModelError> for CertificateError {
    fn from(e: ModelError) -> Self {
        CertificateError::Model(e)
    }
}

/// Inputs of the verification run. The literature constants are defaults to
/// be re-derived, not assumptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateParams {
    /// Threshold constant below 1 (default 0.96).
    pub k: f64,
    /// Regularity exponent (default 3/5).
    pub theta: f64,
    /// Wavenumber ratio (default 2).
    pub lambda: f64,
    /// Requested lower bound for b_{n+1}(t0) (default 0.447).
    pub b_target: f64,
    /// Optional pinned initial-data bound; when set, B = B(delta) directly.
    pub delta: Option<f64>,
    /// Reference time; every formula depends only on t - t0.
    pub t0: f64,
    /// Safety gap below 1 for the verdict.
    pub margin: f64,
    /// Finite verification horizon past t0.
    pub t_check: f64,
    /// Absolute quadrature tolerance for envelope evaluation.
    pub quad_tol: f64,
    /// Number of points of the geometric verification grid.
    pub grid_points: usize,
}

impl Default for CertificateParams {
    fn default() -> Self {
        CertificateParams {
            k: 0.96,
            theta: 0.6,
            lambda: 2.0,
            b_target: 0.447,
            delta: None,
            t0: 0.0,
            margin: 0.01,
            t_check: 20.0,
            quad_tol: 1e-10,
            grid_points: 2048,
        }
    }
}

impl CertificateParams {
    pub fn validate(&self) -> Result<(), CertificateError> {
        let fail = |what: &str| {
            Err(CertificateError::Domain {
                what: what.to_string(),
            })
        };
        if !(self.k > 0.0 && self.k < 1.0) {
            return fail("require 0 < k < 1");
        }
        if !(self.theta > 0.0 && self.theta <= 5.0 / 6.0) {
            return fail("require 0 < theta <= 5/6");
        }
        if !(self.lambda > 1.0) {
            return fail("require lambda > 1");
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d < self.k) {
                return fail("require 0 < delta < k");
            }
        }
        if !(self.margin > 0.0 && self.margin < 1.0 - self.k) {
            return fail("require 0 < margin < 1 - k");
        }
        if !(self.t_check > 0.0) {
            return fail("require t_check > 0");
        }
        if !(self.quad_tol > 0.0) {
            return fail("require quad_tol > 0");
        }
        if self.grid_points < 8 {
            return fail("require at least 8 grid points");
        }
        Ok(())
    }
}

/// Derived constants shared by every bound at fixed (k, theta, lambda).
#[derive(Debug, Clone, Copy)]
struct Rates {
    gamma: f64,
    /// lambda^{5/2-θ}
    fast_factor: f64,
    /// r = lambda^{5/2-θ} gamma: decay rate of b_tilde and of B's memory.
    r: f64,
    /// mu = lambda^{θ-5/2} k gamma: decay rate of b_hat.
    mu: f64,
    k: f64,
}

impl Rates {
    fn new(k: f64, theta: f64, lambda: f64) -> Self {
        let gamma = lambda.powf(CASCADE_EXPONENT - 3.0 * theta);
        let fast_factor = lambda.powf(CASCADE_EXPONENT - theta);
        Rates {
            gamma,
            fast_factor,
            r: fast_factor * gamma,
            mu: k * gamma / fast_factor,
            k,
        }
    }
}

/// The closed form of the accumulation bound:
/// B(δ) = [k²/γ - 2k/(λ^{5/2-θ}γ²) + 2/(λ^{5-2θ}γ³)]
///        - e^{-λ^{5/2-θ}γ(k-δ)} [δ²/γ - 2δ/(λ^{5/2-θ}γ²) + 2/(λ^{5-2θ}γ³)].
pub fn b_of_delta(delta: f64, k: f64, theta: f64, lambda: f64) -> Result<f64, CertificateError> {
    if !(0.0..1.0).contains(&k) || k <= 0.0 {
        return Err(CertificateError::Domain {
            what: format!("k = {k} outside (0, 1)"),
        });
    }
    if !(0.0..=1.0).contains(&delta) || delta >= k {
        return Err(CertificateError::Domain {
            what: format!("delta = {delta} outside [0, k) with k = {k}"),
        });
    }
    let rt = Rates::new(k, theta, lambda);
    let (g, a) = (rt.gamma, rt.fast_factor);
    let poly = |x: f64| x * x / g - 2.0 * x / (a * g * g) + 2.0 / (a * a * g * g * g);
    Ok(poly(k) - (-rt.r * (k - delta)).exp() * poly(delta))
}

/// The δ -> 0 limit of B(δ).
pub fn b_limit(k: f64, theta: f64, lambda: f64) -> f64 {
    b_of_delta(0.0, k, theta, lambda).expect("delta = 0 is always admissible")
}

/// Outcome of the bisection for the largest admissible initial-data bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum DeltaSearch {
    Feasible { delta_star: f64, b_at_delta_star: f64 },
    /// No δ attains the target; carries the achievable supremum.
    Infeasible { b_limit: f64 },
}

/// Largest δ (to 1e-10 by bisection) with B(δ) >= b_target. B is strictly
/// decreasing in δ, so the feasible set is an interval anchored at 0.
pub fn find_delta(k: f64, theta: f64, lambda: f64, b_target: f64) -> DeltaSearch {
    let limit = b_limit(k, theta, lambda);
    if limit < b_target {
        return DeltaSearch::Infeasible { b_limit: limit };
    }
    let b_at = |d: f64| b_of_delta(d, k, theta, lambda).expect("delta within [0, k)");
    let mut lo = 0.0f64;
    let mut hi = k;
    // b(k^-) = 0 < b_target for positive targets; for b_target <= 0 every
    // admissible delta qualifies.
    if b_target <= 0.0 {
        let delta_star = k - 1e-10;
        return DeltaSearch::Feasible {
            delta_star,
            b_at_delta_star: b_at(delta_star),
        };
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if b_at(mid) >= b_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    DeltaSearch::Feasible {
        delta_star: lo,
        b_at_delta_star: b_at(lo),
    }
}

/// The neighbor-shell envelopes and the upper envelope beta, at fixed
/// parameters (k, θ, λ, B, t0).
#[derive(Debug, Clone, Copy)]
pub struct EnvelopeBounds {
    pub k: f64,
    pub theta: f64,
    pub lambda: f64,
    pub b: f64,
    pub t0: f64,
    rates: Rates,
}

impl EnvelopeBounds {
    pub fn new(k: f64, theta: f64, lambda: f64, b: f64, t0: f64) -> Self {
        EnvelopeBounds {
            k,
            theta,
            lambda,
            b,
            t0,
            rates: Rates::new(k, theta, lambda),
        }
    }

    fn rates(&self) -> Rates {
        self.rates
    }

    fn check_time(&self, t: f64) -> Result<(), CertificateError> {
        if t < self.t0 {
            Err(CertificateError::Domain {
                what: format!("t = {t} before t0 = {}", self.t0),
            })
        } else {
            Ok(())
        }
    }

    /// Upper envelope for b_{n-1}:
    /// b_hat = e^{-μ(t-t0)} (1 - 1/(kγ)) + 1/(kγ).
    pub fn b_hat(&self, t: f64) -> Result<f64, CertificateError> {
        self.check_time(t)?;
        let rt = self.rates();
        let inv_kg = 1.0 / (rt.k * rt.gamma);
        Ok((-(rt.mu) * (t - self.t0)).exp() * (1.0 - inv_kg) + inv_kg)
    }

    /// Lower envelope for b_{n+1}:
    /// b_tilde = e^{-r(t-t0)} (B - k²/γ) + k²/γ.
    pub fn b_tilde(&self, t: f64) -> Result<f64, CertificateError> {
        self.check_time(t)?;
        let rt = self.rates();
        let floor = rt.k * rt.k / rt.gamma;
        Ok((-(rt.r) * (t - self.t0)).exp() * (self.b - floor) + floor)
    }

    /// Large-time limits of (b_hat, b_tilde): (1/(kγ), k²/γ).
    pub fn envelope_limits(&self) -> (f64, f64) {
        let rt = self.rates();
        (1.0 / (rt.k * rt.gamma), rt.k * rt.k / rt.gamma)
    }

    /// The upper envelope for b_n, by adaptive quadrature of its integral
    /// term to absolute tolerance `quad_tol`.
    pub fn beta(&self, t: f64, quad_tol: f64) -> Result<f64, CertificateError> {
        self.check_time(t)?;
        let rt = self.rates();
        let t0 = self.t0;
        // P = lambda^{θ-5/2} (B - k²/γ); nonpositive whenever B <= k²/γ.
        let p = (self.b - rt.k * rt.k / rt.gamma) / rt.fast_factor;
        let e_t = (-(rt.r) * (t - t0)).exp();
        let k2 = rt.k * rt.k;
        let first = rt.k * (p * (e_t - 1.0) - k2 * (t - t0)).exp();
        if t == t0 {
            return Ok(first);
        }
        let inv_kg = 1.0 / (rt.k * rt.gamma);
        let mut integrand = |s: f64| {
            let b_hat = (-(rt.mu) * (s - t0)).exp() * (1.0 - inv_kg) + inv_kg;
            let e_s = (-(rt.r) * (s - t0)).exp();
            (p * (e_t - e_s) - k2 * (t - s)).exp() * b_hat * b_hat
        };
        let integral = quad::adaptive(&mut integrand, t0, t, quad_tol)?;
        Ok(first + integral)
    }

    /// The printed five-term exponential bound on d beta/dt.
    pub fn beta_prime_bound(&self, t: f64) -> Result<f64, CertificateError> {
        self.check_time(t)?;
        let dt = t - self.t0;
        Ok(self
            .beta_prime_terms()
            .iter()
            .map(|&(c, rate)| c * (-rate * dt).exp())
            .sum())
    }

    /// (coefficient, decay rate) of each term of the beta-prime bound.
    fn beta_prime_terms(&self) -> [(f64, f64); 5] {
        let rt = self.rates();
        let inv_kg = 1.0 / (rt.k * rt.gamma);
        let k2 = rt.k * rt.k;
        let c4 = inv_kg * inv_kg * (1.0 - self.b * rt.gamma / k2);
        [
            ((1.0 - inv_kg) * (1.0 - inv_kg), 2.0 * rt.mu),
            (2.0 * inv_kg * (1.0 - inv_kg), rt.mu),
            (inv_kg * inv_kg, k2),
            (c4, rt.r),
            (-c4, rt.r + k2),
        ]
    }

    /// Closed-form integral over [T, ∞) of the positive terms of the
    /// beta-prime bound; the negative term is discarded, making the tail a
    /// safe overestimate of the envelope's residual motion.
    pub fn beta_prime_tail(&self, t_from: f64) -> Result<f64, CertificateError> {
        self.check_time(t_from)?;
        let dt = t_from - self.t0;
        Ok(self
            .beta_prime_terms()
            .iter()
            .filter(|&&(c, _)| c > 0.0)
            .map(|&(c, rate)| c * (-rate * dt).exp() / rate)
            .sum())
    }
}

/// Everything the verification run measured, in one archivable document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub params: ReportedParams,
    pub delta_star: f64,
    pub b_at_delta_star: f64,
    pub b_limit: f64,
    /// Whether the requested b_target was attainable.
    pub target_feasible: bool,
    /// The bound the envelopes actually used (the requested target when
    /// feasible, otherwise the recomputed fallback).
    pub b_used: f64,
    pub beta_samples: Vec<(f64, f64)>,
    pub sup_beta: f64,
    pub sup_beta_time: f64,
    pub beta_at_t_check: f64,
    pub tail_bound: f64,
    pub verdict: bool,
    /// Names the first failed condition when the verdict is false.
    pub failing_condition: Option<String>,
    pub tool_version: String,
}

/// Input parameters echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedParams {
    pub k: f64,
    pub theta: f64,
    pub lambda: f64,
    pub b_target: f64,
    pub t0: f64,
    pub margin: f64,
    pub t_check: f64,
    pub quad_tol: f64,
    pub grid_points: usize,
}

/// Geometric grid over [t0, t0 + span]: spacings grow by a fixed ratio so
/// the early envelope peak is finely resolved and the settled tail coarsely.
fn geometric_grid(t0: f64, span: f64, points: usize) -> Vec<f64> {
    let m = points - 1;
    // First-to-last spacing ratio; 512 gives ~1e-4 * span near t0 for the
    // default 2048-point grid.
    let growth: f64 = 512.0;
    let g = growth.powf(1.0 / (m - 1) as f64);
    let s0 = span * (g - 1.0) / (g.powi(m as i32) - 1.0);
    let mut grid = Vec::with_capacity(points);
    grid.push(t0);
    let mut t = t0;
    let mut step = s0;
    for i in 0..m {
        t += step;
        step *= g;
        grid.push(if i + 1 == m { t0 + span } else { t });
    }
    grid
}

/// Resolved initial-data bound after the feasibility fallback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaResolution {
    pub delta_star: f64,
    pub b_at_delta_star: f64,
    pub b_limit: f64,
    /// Whether the originally requested target was attainable.
    pub target_feasible: bool,
    /// The bound the envelopes should use.
    pub b_used: f64,
}

/// Resolve delta*: bisect for the requested target, or fall back to the
/// achievable supremum floored at the three-decimal precision the default
/// target carries.
pub fn delta_star_with_fallback(params: &CertificateParams) -> Result<DeltaResolution, CertificateError> {
    let (k, theta, lambda) = (params.k, params.theta, params.lambda);
    let limit = b_limit(k, theta, lambda);
    let (delta_star, b_at_delta_star, target_feasible, b_used) = match params.delta {
        Some(d) => {
            let b = b_of_delta(d, k, theta, lambda)?;
            (d, b, b >= params.b_target, b)
        }
        None => match find_delta(k, theta, lambda, params.b_target) {
            DeltaSearch::Feasible {
                delta_star,
                b_at_delta_star,
            } => (delta_star, b_at_delta_star, true, params.b_target),
            DeltaSearch::Infeasible { .. } => {
                let fallback = (limit * 1000.0).floor() / 1000.0;
                match find_delta(k, theta, lambda, fallback) {
                    DeltaSearch::Feasible {
                        delta_star,
                        b_at_delta_star,
                    } => (delta_star, b_at_delta_star, false, fallback),
                    DeltaSearch::Infeasible { .. } => (0.0, limit, false, limit),
                }
            }
        },
    };
    Ok(DeltaResolution {
        delta_star,
        b_at_delta_star,
        b_limit: limit,
        target_feasible,
        b_used,
    })
}

/// Verify that beta stays below 1 - margin on [t0, t0 + t_check] and that
/// the tail bound keeps it below 1 beyond. The verdict is false when any
/// condition fails, including an under-resolved grid.
pub fn verify_certificate(
    params: &CertificateParams,
) -> Result<CertificateReport, CertificateError> {
    params.validate()?;
    let (k, theta, lambda) = (params.k, params.theta, params.lambda);
    let resolution = delta_star_with_fallback(params)?;
    let DeltaResolution {
        delta_star,
        b_at_delta_star,
        b_limit: limit,
        target_feasible,
        b_used,
    } = resolution;

    let env = EnvelopeBounds::new(k, theta, lambda, b_used, params.t0);
    let grid = geometric_grid(params.t0, params.t_check, params.grid_points);

    let mut beta_samples = Vec::with_capacity(grid.len());
    let mut sup_beta = f64::NEG_INFINITY;
    let mut sup_beta_time = params.t0;
    for &t in &grid {
        let b = env.beta(t, params.quad_tol)?;
        if b > sup_beta {
            sup_beta = b;
            sup_beta_time = t;
        }
        beta_samples.push((t, b));
    }

    // Grid fineness: between samples beta can move at most
    // max(beta' bound at endpoints) * spacing; require that below margin/2.
    let mut grid_fine = true;
    for w in grid.windows(2) {
        let spacing = w[1] - w[0];
        let bound = env
            .beta_prime_bound(w[0])?
            .max(env.beta_prime_bound(w[1])?);
        if spacing * bound >= params.margin / 2.0 {
            grid_fine = false;
            break;
        }
    }

    let beta_at_t_check = env.beta(params.t0 + params.t_check, params.quad_tol)?;
    let tail_bound = env.beta_prime_tail(params.t0 + params.t_check)?;

    let mut failing_condition = None;
    if sup_beta > 1.0 - params.margin {
        failing_condition = Some(format!(
            "sup beta = {sup_beta:.6} at t = {sup_beta_time:.4} exceeds 1 - margin = {:.6}",
            1.0 - params.margin
        ));
    } else if !grid_fine {
        failing_condition = Some("verification grid too coarse for the margin".to_string());
    } else if beta_at_t_check + tail_bound >= 1.0 {
        failing_condition = Some(format!(
            "beta(T_check) + tail = {:.6} reaches 1",
            beta_at_t_check + tail_bound
        ));
    }

    Ok(CertificateReport {
        params: ReportedParams {
            k,
            theta,
            lambda,
            b_target: params.b_target,
            t0: params.t0,
            margin: params.margin,
            t_check: params.t_check,
            quad_tol: params.quad_tol,
            grid_points: params.grid_points,
        },
        delta_star,
        b_at_delta_star,
        b_limit: limit,
        target_feasible,
        b_used,
        beta_samples,
        sup_beta,
        sup_beta_time,
        beta_at_t_check,
        tail_bound,
        verdict: failing_condition.is_none(),
        failing_condition,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    })
}

/// Outcome of the worst-case three-shell surrogate integration.
#[derive(Debug)]
pub struct AdversarialOutcome {
    /// Trajectory of (0, b_{n-1}, b_n, b_{n+1}) in b-variables.
    pub trajectory: Trajectory,
    pub sup_b_n: f64,
    /// First time b_n falls back through k, past which the envelope
    /// hypotheses (b_n >= k) no longer hold; None if it never exits.
    pub envelope_exit_time: Option<f64>,
}

/// Shell indices of the surrogate state vector.
pub const ADVERSARIAL_BELOW: usize = 1;
pub const ADVERSARIAL_PIVOT: usize = 2;
pub const ADVERSARIAL_ABOVE: usize = 3;

/// Integrate the three-shell surrogate of the b-system with frozen boundary
/// values b_{n-2} = b_{n+2} = 1 and worst-case initial data
/// (b_{n-1}, b_n, b_{n+1})(t0) = (1, k, B).
pub fn adversarial_simulation(
    params: &CertificateParams,
    b_used: f64,
) -> Result<AdversarialOutcome, CertificateError> {
    params.validate()?;
    let rt = Rates::new(params.k, params.theta, params.lambda);
    let (slow, fast, gamma) = (1.0 / rt.fast_factor, rt.fast_factor, rt.gamma);
    let rhs = move |_t: f64, y: &[f64], dy: &mut [f64]| {
        dy[0] = 0.0;
        dy[ADVERSARIAL_BELOW] = slow * (1.0 - gamma * y[ADVERSARIAL_BELOW] * y[ADVERSARIAL_PIVOT]);
        dy[ADVERSARIAL_PIVOT] = y[ADVERSARIAL_BELOW] * y[ADVERSARIAL_BELOW]
            - gamma * y[ADVERSARIAL_PIVOT] * y[ADVERSARIAL_ABOVE];
        dy[ADVERSARIAL_ABOVE] =
            fast * (y[ADVERSARIAL_PIVOT] * y[ADVERSARIAL_PIVOT] - gamma * y[ADVERSARIAL_ABOVE]);
    };
    let initial = ShellState::new(
        params.t0,
        vec![0.0, 1.0, params.k, b_used],
        VariableKind::B,
    )?;
    let config = IntegratorConfig {
        rel_tol: 1e-11,
        abs_tol: 1e-13,
        positivity_mode: PositivityMode::Off,
        ..Default::default()
    };
    let traj = integrate(
        rhs,
        &initial,
        (params.t0, params.t0 + params.t_check),
        &config,
        &[(ADVERSARIAL_PIVOT, params.k)],
        &[],
    )?;
    let sup_b_n = traj
        .samples()
        .iter()
        .map(|s| s.coeffs[ADVERSARIAL_PIVOT])
        .fold(f64::NEG_INFINITY, f64::max);
    let envelope_exit_time = traj
        .events()
        .iter()
        .find(|e| {
            e.shell == ADVERSARIAL_PIVOT
                && e.threshold == params.k
                && e.direction == CrossingDirection::Downward
        })
        .map(|e| e.time);
    Ok(AdversarialOutcome {
        trajectory: traj,
        sup_b_n,
        envelope_exit_time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::rng::SplitMix64;

    const K: f64 = 0.96;
    const THETA: f64 = 0.6;
    const LAMBDA: f64 = 2.0;

    #[test]
    fn b_limit_matches_frozen_value() {
        // Computed once with an independent Simpson oracle of the underlying
        // integral; the published "> 0.447" claim is not reproduced.
        let limit = b_limit(K, THETA, LAMBDA);
        assert!((limit - 0.4057643324265389).abs() < 1e-13, "{limit}");
        assert!(limit < 0.447);
    }

    #[test]
    fn b_of_delta_continuity_at_zero() {
        let limit = b_limit(K, THETA, LAMBDA);
        let near = b_of_delta(1e-8, K, THETA, LAMBDA).unwrap();
        assert!((near - limit).abs() < 1e-6);
    }

    #[test]
    fn b_of_delta_derivative_identity() {
        // dB/ddelta = -lambda^{5/2-θ} e^{-r(k-δ)} δ², by construction of the
        // accumulation integral; checked by central differences.
        let rt = Rates::new(K, THETA, LAMBDA);
        let h = 1e-6;
        for delta in [0.1, 0.3, 0.5, 0.8] {
            let num = (b_of_delta(delta + h, K, THETA, LAMBDA).unwrap()
                - b_of_delta(delta - h, K, THETA, LAMBDA).unwrap())
                / (2.0 * h);
            let exact = -rt.fast_factor * (-rt.r * (K - delta)).exp() * delta * delta;
            assert!((num - exact).abs() < 1e-7, "delta {delta}: {num} vs {exact}");
        }
    }

    #[test]
    fn b_of_delta_rejects_bad_domains() {
        assert!(b_of_delta(0.97, K, THETA, LAMBDA).is_err());
        assert!(b_of_delta(-0.1, K, THETA, LAMBDA).is_err());
        assert!(b_of_delta(0.5, 1.2, THETA, LAMBDA).is_err());
    }

    #[test]
    fn find_delta_outcomes() {
        // target 0: every admissible delta qualifies.
        match find_delta(K, THETA, LAMBDA, 0.0) {
            DeltaSearch::Feasible { delta_star, .. } => {
                assert!((delta_star - K).abs() < 1e-9);
            }
            _ => panic!("target 0 must be feasible"),
        }
        // unattainable target.
        let limit = b_limit(K, THETA, LAMBDA);
        match find_delta(K, THETA, LAMBDA, limit + 0.1) {
            DeltaSearch::Infeasible { b_limit: l } => assert_eq!(l, limit),
            _ => panic!("target above the limit must be infeasible"),
        }
        // a mid target: bisection brackets the boundary.
        match find_delta(K, THETA, LAMBDA, 0.4) {
            DeltaSearch::Feasible {
                delta_star,
                b_at_delta_star,
            } => {
                assert!(b_at_delta_star >= 0.4);
                let past = b_of_delta(delta_star + 1e-9, K, THETA, LAMBDA).unwrap();
                assert!(past < 0.4 + 1e-10, "delta_star not maximal: {past}");
            }
            _ => panic!("0.4 < b_limit must be feasible"),
        }
        // the published 0.447 target is infeasible at the default constants.
        assert!(matches!(
            find_delta(K, THETA, LAMBDA, 0.447),
            DeltaSearch::Infeasible { .. }
        ));
    }

    #[test]
    fn envelopes_at_reference_time_and_limits() {
        let b = 0.405;
        let env = EnvelopeBounds::new(K, THETA, LAMBDA, b, 0.0);
        assert!((env.b_hat(0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((env.b_tilde(0.0).unwrap() - b).abs() < 1e-15);
        let (hat_inf, tilde_inf) = env.envelope_limits();
        assert!((hat_inf - 0.6412210486171439).abs() < 1e-14);
        assert!((tilde_inf - 0.5673113456693374).abs() < 1e-14);
        assert!((env.b_hat(200.0).unwrap() - hat_inf).abs() < 1e-14);
        assert!((env.b_tilde(200.0).unwrap() - tilde_inf).abs() < 1e-14);
        // k gamma > 1 at defaults, so b_hat is nonincreasing.
        let mut prev = f64::INFINITY;
        for i in 0..40 {
            let v = env.b_hat(i as f64 * 0.5).unwrap();
            assert!(v <= prev);
            prev = v;
        }
        assert!(env.b_hat(-0.5).is_err());
    }

    #[test]
    fn beta_at_reference_time_is_exactly_k() {
        let env = EnvelopeBounds::new(K, THETA, LAMBDA, 0.405, 0.0);
        assert_eq!(env.beta(0.0, 1e-10).unwrap(), K);
    }

    #[test]
    fn beta_reaches_published_asymptote() {
        // beta(t) -> (1/(k gamma))² / k² as t -> infinity.
        let env = EnvelopeBounds::new(K, THETA, LAMBDA, 0.405, 0.0);
        let asymptote = 0.44614196309642973;
        let v = env.beta(50.0, 1e-11).unwrap();
        assert!((v - asymptote).abs() < 1e-6, "beta(50) = {v}");
    }

    #[test]
    fn beta_refinement_agreement() {
        let env = EnvelopeBounds::new(K, THETA, LAMBDA, 0.405, 0.0);
        for t in [0.1, 0.36, 1.0, 5.0] {
            let coarse = env.beta(t, 1e-8).unwrap();
            let fine = env.beta(t, 1e-9).unwrap();
            assert!((coarse - fine).abs() <= 10.0 * 1e-8, "t = {t}");
        }
    }

    #[test]
    fn beta_prime_bound_dominates_numerical_derivative() {
        let env = EnvelopeBounds::new(K, THETA, LAMBDA, 0.405, 0.0);
        let mut rng = SplitMix64::new(5);
        for _ in 0..20 {
            let t = 0.05 + 10.0 * rng.next_f64();
            let h = 1e-4;
            let d = (env.beta(t + h, 1e-11).unwrap() - env.beta(t - h, 1e-11).unwrap())
                / (2.0 * h);
            let bound = env.beta_prime_bound(t).unwrap();
            assert!(d <= bound + 1e-6, "t = {t}: derivative {d} > bound {bound}");
        }
    }

    #[test]
    fn tail_is_a_decreasing_quadrature_overestimate() {
        let env = EnvelopeBounds::new(K, THETA, LAMBDA, 0.405, 0.0);
        let mut prev = f64::INFINITY;
        for i in 1..=6 {
            let t = 4.0 * i as f64;
            let tail = env.beta_prime_tail(t).unwrap();
            assert!(tail < prev);
            prev = tail;
        }
        assert!(prev < 1e-2);
        // Positive-part tail agrees with direct quadrature of the positive
        // terms over a long window.
        let t_from = 5.0;
        let mut positive_part = |t: f64| -> f64 {
            env.beta_prime_terms()
                .iter()
                .filter(|&&(c, _)| c > 0.0)
                .map(|&(c, rate)| c * (-rate * (t - env.t0)).exp())
                .sum()
        };
        let quad_val = crate::quad::adaptive(&mut positive_part, t_from, t_from + 200.0, 1e-12)
            .unwrap();
        let closed = env.beta_prime_tail(t_from).unwrap();
        assert!((quad_val - closed).abs() < 1e-8, "{quad_val} vs {closed}");
    }

    #[test]
    fn verdict_false_at_default_parameters() {
        // The printed envelope peaks just above 1 near t - t0 = 0.36, so the
        // honest default verdict is false with the failing condition named.
        let report = verify_certificate(&CertificateParams::default()).unwrap();
        assert!(!report.target_feasible);
        assert!((report.b_used - 0.405).abs() < 1e-12);
        assert!(report.delta_star > 0.3 && report.delta_star < 0.4);
        assert!(report.sup_beta > 1.0 && report.sup_beta < 1.02, "{}", report.sup_beta);
        assert!(!report.verdict);
        assert!(report
            .failing_condition
            .as_deref()
            .unwrap()
            .contains("sup beta"));
        assert!((report.sup_beta_time - 0.36).abs() < 0.05);
    }

    #[test]
    fn verdict_stable_under_quadrature_tightening() {
        let coarse = verify_certificate(&CertificateParams {
            quad_tol: 1e-8,
            ..Default::default()
        })
        .unwrap();
        let fine = verify_certificate(&CertificateParams {
            quad_tol: 1e-10,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(coarse.verdict, fine.verdict);
        assert!((coarse.sup_beta - fine.sup_beta).abs() < 1e-6);
    }

    #[test]
    fn oversized_margin_is_rejected_by_validation() {
        // margin >= 1 - k leaves no admissible corridor (beta(t0) = k).
        let params = CertificateParams {
            margin: 0.05,
            ..Default::default()
        };
        assert!(params.validate().is_err());
    }

    #[test]
    fn adversarial_zero_data_forces_growth_below_pivot() {
        // With all-zero initial data the frozen boundary pushes b_{n-1} up
        // toward its fixed point.
        let params = CertificateParams {
            t_check: 5.0,
            ..Default::default()
        };
        let rt = Rates::new(params.k, params.theta, params.lambda);
        let rhs = move |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = 0.0;
            dy[1] = (1.0 / rt.fast_factor) * (1.0 - rt.gamma * y[1] * y[2]);
            dy[2] = y[1] * y[1] - rt.gamma * y[2] * y[3];
            dy[3] = rt.fast_factor * (y[2] * y[2] - rt.gamma * y[3]);
        };
        let initial = ShellState::new(0.0, vec![0.0; 4], VariableKind::B).unwrap();
        let traj = integrate(
            rhs,
            &initial,
            (0.0, 5.0),
            &IntegratorConfig::default(),
            &[],
            &[],
        )
        .unwrap();
        let final_state = traj.final_state();
        assert!(final_state.coeff(1) > 0.5, "b_(n-1) = {}", final_state.coeff(1));
    }

    #[test]
    fn adversarial_outcome_shape() {
        let params = CertificateParams {
            t_check: 10.0,
            ..Default::default()
        };
        let out = adversarial_simulation(&params, 0.405).unwrap();
        assert!(out.sup_b_n > params.k);
        // b_n rises then falls back through k within the horizon.
        assert!(out.envelope_exit_time.is_some());
        assert!(out.trajectory.status().is_complete());
    }

    #[test]
    fn report_serializes_and_round_trips() {
        let report = verify_certificate(&CertificateParams {
            grid_points: 64,
            t_check: 2.0,
            ..Default::default()
        })
        .unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let back: CertificateReport = serde_json::from_str(&json).unwrap();
        assert_eq!(report, back);
    }
}
