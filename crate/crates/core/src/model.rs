//! The dyadic shell system, its Galerkin-with-flux truncation, the rescaled
//! c- and b-variable forms, variable transforms, the scaling map, and energy.
//!
//! Shell `j` carries amplitude `a_j` on the wavenumber band of radius
//! `lambda_j = lambda^j`. The inviscid system is
//!
//! ```text
//! da_j/dt = lambda_{j-1}^{5/2} a_{j-1}^2 - lambda_j^{5/2} a_j a_{j+1},   a_0 = 0,
//! ```
//!
//! truncated either plainly (`a_{N+1} = 0`) or with the modified Galerkin
//! flux closure, which replaces the nonlinear drain of the last resolved
//! shell by the linear damping `lambda^{5/2-2θ} lambda_n^{5/2-θ} a_n`.

use std::fmt;

/// Exponent of the wavenumber factor in the nonlinear flux, fixed at 5/2.
pub const CASCADE_EXPONENT: f64 = 2.5;

/// Upper end of the admissible regularity-exponent range.
pub const THETA_MAX: f64 = 5.0 / 6.0;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    /// A scalar parameter violated its documented constraint.
    InvalidParameter {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },
    /// A coefficient entry was NaN or infinite.
    NonFiniteEntry { index: usize, value: f64 },
    /// Shell 0 must carry a zero amplitude.
    NonzeroShellZero { value: f64 },
    /// An operation was handed a state in the wrong variables.
    VariableKindMismatch {
        expected: VariableKind,
        found: VariableKind,
    },
    /// Empty coefficient sequence (at least shell 0 must be present).
    EmptyState,
    /// A shell index fell outside the active range.
    ShellOutOfRange { index: usize, truncation: usize },
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::InvalidParameter {
                name,
                value,
                constraint,
            } => write!(f, "invalid parameter {name} = {value}: requires {constraint}"),
            ModelError::NonFiniteEntry { index, value } => {
                write!(f, "non-finite coefficient a_{index} = {value}")
            }
            ModelError::NonzeroShellZero { value } => {
                write!(f, "shell 0 must be zero, got {value}")
            }
            ModelError::VariableKindMismatch { expected, found } => {
                write!(f, "expected a state in {expected:?}-variables, got {found:?}")
            }
            ModelError::EmptyState => write!(f, "state has no coefficients"),
            ModelError::ShellOutOfRange { index, truncation } => {
                write!(f, "shell index {index} out of range (truncation {truncation})")
            }
        }
    }
}

impl std::error::Error for ModelError {}

/// Wavenumber ladder and regularity exponent; `gamma` is derived.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    lambda_base: f64,
    theta: f64,
    gamma: f64,
}

impl ModelParams {
    pub fn new(lambda_base: f64, theta: f64) -> Result<Self, ModelError> {
        if !(lambda_base > 1.0) || !lambda_base.is_finite() {
            return Err(ModelError::InvalidParameter {
                name: "lambda_base",
                value: lambda_base,
                constraint: "lambda_base > 1",
            });
        }
        if !(theta > 0.0 && theta <= THETA_MAX) {
            return Err(ModelError::InvalidParameter {
                name: "theta",
                value: theta,
                constraint: "0 < theta <= 5/6",
            });
        }
        let gamma = lambda_base.powf(CASCADE_EXPONENT - 3.0 * theta);
        Ok(ModelParams {
            lambda_base,
            theta,
            gamma,
        })
    }

    /// lambda = 2, theta = 3/5.
    pub fn standard() -> Self {
        ModelParams::new(2.0, 0.6).expect("standard parameters are valid")
    }

    pub fn lambda_base(&self) -> f64 {
        self.lambda_base
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// gamma = lambda^{5/2 - 3 theta}.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// lambda_j = lambda^j, for possibly negative j.
    pub fn lambda_j(&self, j: i32) -> f64 {
        self.lambda_base.powi(j)
    }

    /// lambda^p (the subscript-free lambda, read as lambda_1).
    pub fn lambda_pow(&self, p: f64) -> f64 {
        self.lambda_base.powf(p)
    }

    /// lambda_j^p = lambda^{j p}.
    pub fn lambda_j_pow(&self, j: i32, p: f64) -> f64 {
        self.lambda_base.powf(j as f64 * p)
    }
}

/// Which change of variables a coefficient sequence lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariableKind {
    /// Raw shell amplitudes of the dyadic system.
    A,
    /// c_j = lambda^{2θ-5/2} lambda_j^θ a_j.
    C,
    /// b_j = c_j evaluated in time rescaled by lambda_n^{θ-5/2} about a pivot shell n.
    B,
}

/// A finite coefficient sequence at a time instant. `coeffs[0]` is always 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ShellState {
    time: f64,
    coeffs: Vec<f64>,
    kind: VariableKind,
}

impl ShellState {
    pub fn new(time: f64, coeffs: Vec<f64>, kind: VariableKind) -> Result<Self, ModelError> {
        if coeffs.is_empty() {
            return Err(ModelError::EmptyState);
        }
        if !time.is_finite() {
            return Err(ModelError::InvalidParameter {
                name: "time",
                value: time,
                constraint: "finite",
            });
        }
        for (index, &value) in coeffs.iter().enumerate() {
            if !value.is_finite() {
                return Err(ModelError::NonFiniteEntry { index, value });
            }
        }
        if coeffs[0] != 0.0 {
            return Err(ModelError::NonzeroShellZero { value: coeffs[0] });
        }
        Ok(ShellState { time, coeffs, kind })
    }

    /// Zero state with `truncation` active shells (coefficients 0..=truncation).
    pub fn zeros(truncation: usize, kind: VariableKind) -> Self {
        ShellState {
            time: 0.0,
            coeffs: vec![0.0; truncation + 1],
            kind,
        }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn kind(&self) -> VariableKind {
        self.kind
    }

    /// Index of the last active shell.
    pub fn truncation(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeff(&self, j: usize) -> f64 {
        self.coeffs.get(j).copied().unwrap_or(0.0)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.coeffs.iter().all(|&x| x >= 0.0)
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    fn expect_kind(&self, expected: VariableKind) -> Result<(), ModelError> {
        if self.kind == expected {
            Ok(())
        } else {
            Err(ModelError::VariableKindMismatch {
                expected,
                found: self.kind,
            })
        }
    }
}

/// Order and damping exponent of the modified Galerkin approximation with flux.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GalerkinSpec {
    order: usize,
    damping_theta: f64,
}

impl GalerkinSpec {
    pub fn new(order: usize, damping_theta: f64) -> Result<Self, ModelError> {
        if order < 1 {
            return Err(ModelError::InvalidParameter {
                name: "order",
                value: order as f64,
                constraint: "order >= 1",
            });
        }
        if !(damping_theta > 0.0) || !damping_theta.is_finite() {
            return Err(ModelError::InvalidParameter {
                name: "damping_theta",
                value: damping_theta,
                constraint: "damping_theta > 0",
            });
        }
        Ok(GalerkinSpec {
            order,
            damping_theta,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn damping_theta(&self) -> f64 {
        self.damping_theta
    }

    /// The linear drain coefficient lambda^{5/2-2θ} lambda_n^{5/2-θ} of the last shell.
    pub fn damping_coefficient(&self, params: &ModelParams) -> f64 {
        let theta = self.damping_theta;
        params.lambda_pow(CASCADE_EXPONENT - 2.0 * theta)
            * params.lambda_j_pow(self.order as i32, CASCADE_EXPONENT - theta)
    }
}

/// The solution-family scaling a(t) -> eta a(eta t).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingMap {
    eta: f64,
}

impl ScalingMap {
    pub fn new(eta: f64) -> Result<Self, ModelError> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(ModelError::InvalidParameter {
                name: "eta",
                value: eta,
                constraint: "eta > 0",
            });
        }
        Ok(ScalingMap { eta })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }
}

/// Which printed form of the b-variable rate factor to evaluate. The two are
/// algebraically identical (lambda_{n-j}^{θ-5/2} = lambda_{j-n}^{5/2-θ}); the
/// flag exists so neither reading is silently preferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BIndexing {
    /// lambda_{j-n}^{5/2-θ}: shell n has unit rate, shell n+1 is fast.
    #[default]
    ProofOrder,
    /// lambda_{n-j}^{θ-5/2}, exactly as printed next to the b-equation.
    PrintedOrder,
}

// ---------------------------------------------------------------------------
// Right-hand sides. The *Rhs structs precompute the wavenumber coefficient
// tables once per (lambda, N) and evaluate without allocating; the free
// functions below them validate a ShellState and return a fresh derivative.
// ---------------------------------------------------------------------------

/// Plainly truncated dyadic system: a_{N+1} = 0.
#[derive(Debug, Clone)]
pub struct DyadicRhs {
    /// coef[j] = lambda_j^{5/2}
    coef: Vec<f64>,
}

impl DyadicRhs {
    pub fn new(params: &ModelParams, truncation: usize) -> Self {
        let coef = (0..=truncation)
            .map(|j| params.lambda_j_pow(j as i32, CASCADE_EXPONENT))
            .collect();
        DyadicRhs { coef }
    }

    pub fn dim(&self) -> usize {
        self.coef.len()
    }

    pub fn eval(&self, y: &[f64], dy: &mut [f64]) {
        let n = self.coef.len() - 1;
        dy[0] = 0.0;
        for j in 1..=n {
            let up = if j < n { y[j + 1] } else { 0.0 };
            dy[j] = self.coef[j - 1] * y[j - 1] * y[j - 1] - self.coef[j] * y[j] * up;
        }
    }
}

/// Modified Galerkin approximation with flux: shells 1..n-1 as the dyadic
/// system, shell n drained by the linear damping term.
#[derive(Debug, Clone)]
pub struct GalerkinRhs {
    coef: Vec<f64>,
    damping: f64,
}

impl GalerkinRhs {
    pub fn new(params: &ModelParams, spec: &GalerkinSpec) -> Self {
        let n = spec.order();
        let coef = (0..=n)
            .map(|j| params.lambda_j_pow(j as i32, CASCADE_EXPONENT))
            .collect();
        GalerkinRhs {
            coef,
            damping: spec.damping_coefficient(params),
        }
    }

    pub fn dim(&self) -> usize {
        self.coef.len()
    }

    pub fn damping(&self) -> f64 {
        self.damping
    }

    pub fn eval(&self, y: &[f64], dy: &mut [f64]) {
        let n = self.coef.len() - 1;
        dy[0] = 0.0;
        for j in 1..n {
            dy[j] = self.coef[j - 1] * y[j - 1] * y[j - 1] - self.coef[j] * y[j] * y[j + 1];
        }
        dy[n] = self.coef[n - 1] * y[n - 1] * y[n - 1] - self.damping * y[n];
    }

    /// Damping as a diagonal linear operator, for exponential stepping:
    /// all zeros except -damping on the last shell.
    pub fn linear_diagonal(&self) -> Vec<f64> {
        let mut diag = vec![0.0; self.coef.len()];
        *diag.last_mut().unwrap() = -self.damping;
        diag
    }

    /// The nonlinear remainder (full RHS minus the linear diagonal part).
    pub fn eval_nonlinear(&self, y: &[f64], dy: &mut [f64]) {
        let n = self.coef.len() - 1;
        dy[0] = 0.0;
        for j in 1..n {
            dy[j] = self.coef[j - 1] * y[j - 1] * y[j - 1] - self.coef[j] * y[j] * y[j + 1];
        }
        dy[n] = self.coef[n - 1] * y[n - 1] * y[n - 1];
    }
}

/// The c-variable system dc_j/dt = lambda_j^{5/2-θ}(c_{j-1}^2 - gamma c_j c_{j+1}).
#[derive(Debug, Clone)]
pub struct CvarRhs {
    /// rate[j] = lambda_j^{5/2-θ}
    rate: Vec<f64>,
    gamma: f64,
}

impl CvarRhs {
    pub fn new(params: &ModelParams, truncation: usize) -> Self {
        let p = CASCADE_EXPONENT - params.theta();
        let rate = (0..=truncation)
            .map(|j| params.lambda_j_pow(j as i32, p))
            .collect();
        CvarRhs {
            rate,
            gamma: params.gamma(),
        }
    }

    pub fn dim(&self) -> usize {
        self.rate.len()
    }

    pub fn eval(&self, y: &[f64], dy: &mut [f64]) {
        let n = self.rate.len() - 1;
        dy[0] = 0.0;
        for j in 1..=n {
            let up = if j < n { y[j + 1] } else { 0.0 };
            dy[j] = self.rate[j] * (y[j - 1] * y[j - 1] - self.gamma * y[j] * up);
        }
    }
}

/// The pivot-rescaled b-variable system: shell `pivot` evolves with unit rate.
#[derive(Debug, Clone)]
pub struct BvarRhs {
    rate: Vec<f64>,
    gamma: f64,
}

impl BvarRhs {
    pub fn new(
        params: &ModelParams,
        truncation: usize,
        pivot: usize,
        indexing: BIndexing,
    ) -> Result<Self, ModelError> {
        if pivot < 1 || pivot > truncation {
            return Err(ModelError::ShellOutOfRange {
                index: pivot,
                truncation,
            });
        }
        let theta = params.theta();
        let rate = (0..=truncation as i32)
            .map(|j| {
                let n = pivot as i32;
                match indexing {
                    BIndexing::ProofOrder => params.lambda_j_pow(j - n, CASCADE_EXPONENT - theta),
                    BIndexing::PrintedOrder => {
                        params.lambda_j_pow(n - j, theta - CASCADE_EXPONENT)
                    }
                }
            })
            .collect();
        Ok(BvarRhs {
            rate,
            gamma: params.gamma(),
        })
    }

    pub fn dim(&self) -> usize {
        self.rate.len()
    }

    pub fn eval(&self, y: &[f64], dy: &mut [f64]) {
        let n = self.rate.len() - 1;
        dy[0] = 0.0;
        for j in 1..=n {
            let up = if j < n { y[j + 1] } else { 0.0 };
            dy[j] = self.rate[j] * (y[j - 1] * y[j - 1] - self.gamma * y[j] * up);
        }
    }
}

fn validated_derivative(
    state: &ShellState,
    kind: VariableKind,
    eval: impl FnOnce(&[f64], &mut [f64]),
) -> Result<Vec<f64>, ModelError> {
    state.expect_kind(kind)?;
    for (index, &value) in state.coeffs().iter().enumerate() {
        if !value.is_finite() {
            return Err(ModelError::NonFiniteEntry { index, value });
        }
    }
    let mut dy = vec![0.0; state.coeffs().len()];
    eval(state.coeffs(), &mut dy);
    Ok(dy)
}

/// Derivative of the plainly truncated dyadic system at `state`.
pub fn rhs_dyadic(state: &ShellState, params: &ModelParams) -> Result<Vec<f64>, ModelError> {
    let rhs = DyadicRhs::new(params, state.truncation());
    validated_derivative(state, VariableKind::A, |y, dy| rhs.eval(y, dy))
}

/// Derivative of the Galerkin-with-flux system; `state.truncation()` must equal the order.
pub fn rhs_galerkin_flux(
    state: &ShellState,
    params: &ModelParams,
    spec: &GalerkinSpec,
) -> Result<Vec<f64>, ModelError> {
    if state.truncation() != spec.order() {
        return Err(ModelError::InvalidParameter {
            name: "order",
            value: spec.order() as f64,
            constraint: "spec.order == state.truncation",
        });
    }
    let rhs = GalerkinRhs::new(params, spec);
    validated_derivative(state, VariableKind::A, |y, dy| rhs.eval(y, dy))
}

/// Derivative of the c-variable system at `state`.
pub fn rhs_c(state: &ShellState, params: &ModelParams) -> Result<Vec<f64>, ModelError> {
    let rhs = CvarRhs::new(params, state.truncation());
    validated_derivative(state, VariableKind::C, |y, dy| rhs.eval(y, dy))
}

/// Derivative of the b-variable system with the given pivot shell.
pub fn rhs_b(
    state: &ShellState,
    params: &ModelParams,
    pivot: usize,
    indexing: BIndexing,
) -> Result<Vec<f64>, ModelError> {
    let rhs = BvarRhs::new(params, state.truncation(), pivot, indexing)?;
    validated_derivative(state, VariableKind::B, |y, dy| rhs.eval(y, dy))
}

/// Prefactor of the a -> c change of variables at shell j:
/// c_j = lambda^{2θ-5/2} lambda_j^θ a_j.
pub fn c_prefactor(params: &ModelParams, j: usize) -> f64 {
    params.lambda_pow(2.0 * params.theta() - CASCADE_EXPONENT)
        * params.lambda_j_pow(j as i32, params.theta())
}

pub fn a_to_c(state: &ShellState, params: &ModelParams) -> Result<ShellState, ModelError> {
    state.expect_kind(VariableKind::A)?;
    let coeffs = state
        .coeffs()
        .iter()
        .enumerate()
        .map(|(j, &a)| c_prefactor(params, j) * a)
        .collect();
    ShellState::new(state.time(), coeffs, VariableKind::C)
}

pub fn c_to_a(state: &ShellState, params: &ModelParams) -> Result<ShellState, ModelError> {
    state.expect_kind(VariableKind::C)?;
    let coeffs = state
        .coeffs()
        .iter()
        .enumerate()
        .map(|(j, &c)| c / c_prefactor(params, j))
        .collect();
    ShellState::new(state.time(), coeffs, VariableKind::A)
}

/// Amplitude part of the solution-family scaling: multiplies every shell by eta and
/// places the state at the rescaled time coordinate t/eta. Consumers compare
/// the rescaled trajectory against eta * a(eta t).
pub fn rescale(state: &ShellState, map: &ScalingMap) -> Result<ShellState, ModelError> {
    let eta = map.eta();
    let coeffs = state.coeffs().iter().map(|&a| eta * a).collect();
    ShellState::new(state.time() / eta, coeffs, state.kind())
}

/// Total energy |a|^2 = sum of squared amplitudes.
pub fn energy(state: &ShellState) -> f64 {
    energy_of(state.coeffs())
}

pub(crate) fn energy_of(coeffs: &[f64]) -> f64 {
    coeffs.iter().map(|&x| x * x).sum()
}
