//! Adaptive explicit integration of the shell systems with positivity
//! preservation, dense output, and threshold-crossing event detection.
//!
//! The workhorse is an embedded Dormand-Prince 5(4) pair with the standard
//! fourth-order continuous extension. A fixed-step exponential stepper
//! (ETDRK4 on a diagonal linear part) is provided for Galerkin runs whose
//! linear drain coefficient exceeds any explicit stability budget; with a
//! zero diagonal it reduces exactly to the classical fourth-order method.

use crate::model::{ModelError, ShellState, VariableKind};
use std::fmt;

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A21: f64 = 0.2;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b - bhat, for the embedded error estimate.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Dense-output constants (Shampine's interpolant).
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const MIN_SCALE: f64 = 0.2;
const MAX_SCALE: f64 = 10.0;
/// Absolute time tolerance for event refinement.
pub const EVENT_TIME_TOL: f64 = 1e-10;

#[derive(Debug)]
pub enum IntegratorError {
    InvalidConfig(String),
    Model(ModelError),
    EmptySpan { t_start: f64, t_end: f64 },
    /// Step size underflow below dt_min; `shell` is the error-dominating
    /// (or most negative, for positivity rejections) component. The partial
    /// trajectory up to the failure time is preserved.
    Stiffness {
        t: f64,
        dt: f64,
        shell: usize,
        partial: Box<Trajectory>,
    },
    OutOfSpan { t: f64, t_start: f64, t_end: f64 },
}

impl fmt::Display for IntegratorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IntegratorError::InvalidConfig(msg) => write!(f, "invalid integrator config: {msg}"),
            IntegratorError::Model(e) => write!(f, "invalid state: {e}"),
            IntegratorError::EmptySpan { t_start, t_end } => {
                write!(f, "empty time span [{t_start}, {t_end}]")
            }
            IntegratorError::Stiffness { t, dt, shell, .. } => write!(
                f,
                "step size underflow at t = {t} (dt = {dt}): shell {shell} limits the step"
            ),
            IntegratorError::OutOfSpan { t, t_start, t_end } => {
                write!(f, "t = {t} outside trajectory span [{t_start}, {t_end}]")
            }
        }
    }
}

impl std::error::Error for IntegratorError {}

impl From<ModelError> for IntegratorError {
    fn from(e: ModelError) -> Self {
        IntegratorError::Model(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PositivityMode {
    Off,
    /// Halve dt when a step would produce an entry below -abs_tol; clamp
    /// tiny negatives within -abs_tol to zero.
    #[default]
    RejectStep,
    /// Clamp any negative entry to zero after each accepted step.
    Clamp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub max_steps: u64,
    pub positivity_mode: PositivityMode,
    /// Keep the per-step dense polynomials (memory ~ 5 vectors per step).
    pub store_segments: bool,
    /// Store every k-th accepted step (first and last are always kept).
    pub sample_stride: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            dt_init: 1e-4,
            dt_min: 1e-14,
            dt_max: 1e6,
            max_steps: 50_000_000,
            positivity_mode: PositivityMode::RejectStep,
            store_segments: true,
            sample_stride: 1,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<(), IntegratorError> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(IntegratorError::InvalidConfig(
                "tolerances must be positive".into(),
            ));
        }
        if !(0.0 < self.dt_min && self.dt_min <= self.dt_init && self.dt_init <= self.dt_max) {
            return Err(IntegratorError::InvalidConfig(
                "require 0 < dt_min <= dt_init <= dt_max".into(),
            ));
        }
        if self.max_steps < 1 {
            return Err(IntegratorError::InvalidConfig("max_steps >= 1".into()));
        }
        if self.sample_stride == 0 {
            return Err(IntegratorError::InvalidConfig("sample_stride >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossingDirection {
    Upward,
    Downward,
    Touch,
}

/// A refined threshold crossing of one shell amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossingEvent {
    pub shell: usize,
    pub threshold: f64,
    pub time: f64,
    pub direction: CrossingDirection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepStats {
    pub accepted: u64,
    pub rejected: u64,
    pub positivity_rejections: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum IntegrationStatus {
    Complete,
    BudgetExhausted { t: f64 },
}

impl IntegrationStatus {
    pub fn is_complete(&self) -> bool {
        matches!(self, IntegrationStatus::Complete)
    }
}

/// One stored state with its derivative (derivatives make the stored grid
/// interpolable to fourth order even without dense segments).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub coeffs: Box<[f64]>,
    pub deriv: Box<[f64]>,
}

/// The dense polynomial of one accepted step, in Horner form over
/// sigma = (t - t0)/h.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSegment {
    t0: f64,
    h: f64,
    dim: usize,
    /// Five stacked coefficient vectors of length `dim`.
    rcont: Box<[f64]>,
}

impl StepSegment {
    pub fn t_start(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Interpolated value of shell `j` at time `t` inside the step.
    pub fn value_at(&self, t: f64, j: usize) -> f64 {
        let sigma = (t - self.t0) / self.h;
        self.eval_component(sigma, j)
    }

    fn eval_component(&self, sigma: f64, j: usize) -> f64 {
        let n = self.dim;
        let r1 = self.rcont[j];
        let r2 = self.rcont[n + j];
        let r3 = self.rcont[2 * n + j];
        let r4 = self.rcont[3 * n + j];
        let r5 = self.rcont[4 * n + j];
        let s1 = 1.0 - sigma;
        r1 + sigma * (r2 + s1 * (r3 + sigma * (r4 + s1 * r5)))
    }

    fn eval_into(&self, sigma: f64, out: &mut [f64]) {
        for j in 0..self.dim {
            out[j] = self.eval_component(sigma, j);
        }
    }
}

/// Locate a threshold crossing of shell `j` inside a dense segment.
/// Returns the bisection-refined event, or `None` when the endpoints do not
/// bracket the threshold. Exact endpoint hits are reported as touches.
pub fn detect_crossing(
    segment: &StepSegment,
    shell: usize,
    threshold: f64,
) -> Option<CrossingEvent> {
    let eval = |t: f64| segment.value_at(t, shell);
    refine_crossing(&eval, segment.t_start(), segment.t_end(), shell, threshold)
}

fn refine_crossing(
    eval: &dyn Fn(f64) -> f64,
    t_lo: f64,
    t_hi: f64,
    shell: usize,
    threshold: f64,
) -> Option<CrossingEvent> {
    let g_lo = eval(t_lo) - threshold;
    let g_hi = eval(t_hi) - threshold;
    if g_hi == 0.0 {
        return Some(CrossingEvent {
            shell,
            threshold,
            time: t_hi,
            direction: CrossingDirection::Touch,
        });
    }
    if g_lo == 0.0 || g_lo * g_hi > 0.0 {
        // A touch at the left endpoint belongs to the previous segment's
        // right endpoint; same-sign endpoints mean no bracketed crossing.
        return None;
    }
    let direction = if g_lo < 0.0 {
        CrossingDirection::Upward
    } else {
        CrossingDirection::Downward
    };
    let (mut lo, mut hi) = (t_lo, t_hi);
    while hi - lo > EVENT_TIME_TOL {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let g_mid = eval(mid) - threshold;
        if g_mid == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if (g_mid < 0.0) == (g_lo < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(CrossingEvent {
        shell,
        threshold,
        time: 0.5 * (lo + hi),
        direction,
    })
}

/// A streaming integral of a state functional, accumulated step by step with
/// the same-order quadrature as the post-hoc dense path.
pub struct QuadWatch<'a> {
    pub label: String,
    pub integrand: Box<dyn Fn(&[f64]) -> f64 + 'a>,
}

impl<'a> QuadWatch<'a> {
    pub fn new(label: impl Into<String>, integrand: impl Fn(&[f64]) -> f64 + 'a) -> Self {
        QuadWatch {
            label: label.into(),
            integrand: Box::new(integrand),
        }
    }
}

/// Cumulative values of one streamed integral at the stored sample times.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadSeries {
    pub label: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    kind: VariableKind,
    samples: Vec<Sample>,
    segments: Vec<StepSegment>,
    events: Vec<CrossingEvent>,
    stats: StepStats,
    status: IntegrationStatus,
    quad_series: Vec<QuadSeries>,
}

impl Trajectory {
    /// Build a trajectory from explicit samples (used for synthetic inputs
    /// in diagnostics and tests). Derivatives default to zero.
    pub fn from_samples(
        kind: VariableKind,
        samples: Vec<(f64, Vec<f64>)>,
    ) -> Result<Self, IntegratorError> {
        if samples.is_empty() {
            return Err(IntegratorError::InvalidConfig(
                "trajectory needs at least one sample".into(),
            ));
        }
        let dim = samples[0].1.len();
        let mut out = Vec::with_capacity(samples.len());
        let mut prev = f64::NEG_INFINITY;
        for (t, coeffs) in samples {
            if t <= prev {
                return Err(IntegratorError::InvalidConfig(
                    "sample times must be strictly increasing".into(),
                ));
            }
            if coeffs.len() != dim {
                return Err(IntegratorError::InvalidConfig(
                    "inconsistent sample dimensions".into(),
                ));
            }
            prev = t;
            out.push(Sample {
                t,
                coeffs: coeffs.into_boxed_slice(),
                deriv: vec![0.0; dim].into_boxed_slice(),
            });
        }
        Ok(Trajectory {
            kind,
            samples: out,
            segments: Vec::new(),
            events: Vec::new(),
            stats: StepStats::default(),
            status: IntegrationStatus::Complete,
            quad_series: Vec::new(),
        })
    }

    pub fn kind(&self) -> VariableKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn segments(&self) -> &[StepSegment] {
        &self.segments
    }

    pub fn events(&self) -> &[CrossingEvent] {
        &self.events
    }

    pub fn stats(&self) -> StepStats {
        self.stats
    }

    pub fn status(&self) -> &IntegrationStatus {
        &self.status
    }

    pub fn quad_series(&self) -> &[QuadSeries] {
        &self.quad_series
    }

    pub fn quad_cumulative(&self, label: &str) -> Option<&[f64]> {
        self.quad_series
            .iter()
            .find(|s| s.label == label)
            .map(|s| s.values.as_slice())
    }

    pub fn span(&self) -> (f64, f64) {
        (
            self.samples.first().map(|s| s.t).unwrap_or(0.0),
            self.samples.last().map(|s| s.t).unwrap_or(0.0),
        )
    }

    pub fn state_at(&self, index: usize) -> ShellState {
        let s = &self.samples[index];
        ShellState::new(s.t, s.coeffs.to_vec(), self.kind)
            .expect("stored samples satisfy state invariants")
    }

    pub fn final_state(&self) -> ShellState {
        self.state_at(self.samples.len() - 1)
    }

    /// Smallest coefficient over every stored sample.
    pub fn min_coefficient(&self) -> f64 {
        self.samples
            .iter()
            .flat_map(|s| s.coeffs.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    /// Interpolate the state at `t`. Exact at stored nodes; between nodes the
    /// step's dense polynomial is used when stored, otherwise cubic Hermite
    /// interpolation on the stored (state, derivative) pairs.
    pub fn dense_sample(&self, t: f64) -> Result<ShellState, IntegratorError> {
        let mut coeffs = vec![0.0; self.samples[0].coeffs.len()];
        self.dense_eval_into(t, &mut coeffs)?;
        ShellState::new(t, coeffs, self.kind).map_err(IntegratorError::Model)
    }

    /// Allocation-free form of [`Trajectory::dense_sample`].
    pub fn dense_eval_into(&self, t: f64, out: &mut [f64]) -> Result<(), IntegratorError> {
        let (t0, t1) = self.span();
        if !(t0..=t1).contains(&t) {
            return Err(IntegratorError::OutOfSpan {
                t,
                t_start: t0,
                t_end: t1,
            });
        }
        // Exact at stored nodes.
        if let Ok(i) = self
            .samples
            .binary_search_by(|s| s.t.partial_cmp(&t).expect("finite times"))
        {
            out.copy_from_slice(&self.samples[i].coeffs);
            return Ok(());
        }
        if !self.segments.is_empty() {
            let idx = match self
                .segments
                .binary_search_by(|seg| seg.t0.partial_cmp(&t).expect("finite times"))
            {
                Ok(i) => i,
                Err(i) => i.saturating_sub(1),
            };
            let seg = &self.segments[idx];
            seg.eval_into((t - seg.t0) / seg.h, out);
        } else {
            let hi = match self
                .samples
                .binary_search_by(|s| s.t.partial_cmp(&t).expect("finite times"))
            {
                Ok(i) => i,
                Err(i) => i,
            };
            let a = &self.samples[hi - 1];
            let b = &self.samples[hi];
            hermite_eval(a, b, t, out);
        }
        Ok(())
    }
}

fn hermite_eval(a: &Sample, b: &Sample, t: f64, out: &mut [f64]) {
    let h = b.t - a.t;
    let s = (t - a.t) / h;
    let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
    let h10 = s * (1.0 - s) * (1.0 - s);
    let h01 = s * s * (3.0 - 2.0 * s);
    let h11 = s * s * (s - 1.0);
    for j in 0..out.len() {
        out[j] = h00 * a.coeffs[j] + h10 * h * a.deriv[j] + h01 * b.coeffs[j] + h11 * h * b.deriv[j];
    }
}

/// Composite-Simpson refinement until successive halvings agree to
/// `rel_tol` (with a small absolute floor for vanishing integrals).
pub(crate) fn simpson_refine(
    f: &mut dyn FnMut(f64) -> f64,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_floor: f64,
) -> f64 {
    if a == b {
        return 0.0;
    }
    let mut panels = 2usize;
    let mut prev = simpson_fixed(f, a, b, panels);
    for _ in 0..12 {
        panels *= 2;
        let cur = simpson_fixed(f, a, b, panels);
        if (cur - prev).abs() <= rel_tol * cur.abs() + abs_floor {
            return cur;
        }
        prev = cur;
    }
    prev
}

fn simpson_fixed(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = 2 * panels;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let x = a + i as f64 * h;
        acc += if i % 2 == 1 { 4.0 * f(x) } else { 2.0 * f(x) };
    }
    acc * h / 3.0
}

/// Working buffers for one integration, reused across steps.
struct Workspace {
    k: [Vec<f64>; 7],
    y_stage: Vec<f64>,
    y_new: Vec<f64>,
    err: Vec<f64>,
    rcont: Vec<f64>,
    quad_scratch: Vec<f64>,
}

impl Workspace {
    fn new(dim: usize) -> Self {
        Workspace {
            k: std::array::from_fn(|_| vec![0.0; dim]),
            y_stage: vec![0.0; dim],
            y_new: vec![0.0; dim],
            err: vec![0.0; dim],
            rcont: vec![0.0; 5 * dim],
            quad_scratch: vec![0.0; dim],
        }
    }
}

struct Recorder<'a> {
    samples: Vec<Sample>,
    segments: Vec<StepSegment>,
    events: Vec<CrossingEvent>,
    quad_watches: &'a [QuadWatch<'a>],
    quad_cumulative: Vec<f64>,
    quad_values: Vec<Vec<f64>>,
    stride: usize,
    accepted_since_store: usize,
}

impl<'a> Recorder<'a> {
    fn new(quad_watches: &'a [QuadWatch<'a>], config: &IntegratorConfig) -> Self {
        Recorder {
            samples: Vec::new(),
            segments: Vec::new(),
            events: Vec::new(),
            quad_watches,
            quad_cumulative: vec![0.0; quad_watches.len()],
            quad_values: vec![Vec::new(); quad_watches.len()],
            stride: config.sample_stride,
            accepted_since_store: 0,
        }
    }

    fn store_sample(&mut self, t: f64, y: &[f64], dy: &[f64]) {
        self.samples.push(Sample {
            t,
            coeffs: y.to_vec().into_boxed_slice(),
            deriv: dy.to_vec().into_boxed_slice(),
        });
        for (w, series) in self.quad_values.iter_mut().enumerate() {
            series.push(self.quad_cumulative[w]);
        }
        self.accepted_since_store = 0;
    }

    fn finish(
        mut self,
        kind: VariableKind,
        stats: StepStats,
        status: IntegrationStatus,
        final_t: f64,
        y: &[f64],
        dy: &[f64],
    ) -> Trajectory {
        if self.samples.last().map(|s| s.t) != Some(final_t) {
            self.store_sample(final_t, y, dy);
        }
        let quad_series = self
            .quad_watches
            .iter()
            .zip(self.quad_values)
            .map(|(w, values)| QuadSeries {
                label: w.label.clone(),
                values,
            })
            .collect();
        Trajectory {
            kind,
            samples: self.samples,
            segments: self.segments,
            events: self.events,
            stats,
            status,
            quad_series,
        }
    }
}

fn validate_initial(
    initial: &ShellState,
    t_span: (f64, f64),
    config: &IntegratorConfig,
) -> Result<(), IntegratorError> {
    config.validate()?;
    if !(t_span.1 > t_span.0) {
        return Err(IntegratorError::EmptySpan {
            t_start: t_span.0,
            t_end: t_span.1,
        });
    }
    for (index, &value) in initial.coeffs().iter().enumerate() {
        if !value.is_finite() {
            return Err(IntegratorError::Model(ModelError::NonFiniteEntry {
                index,
                value,
            }));
        }
    }
    Ok(())
}

/// Integrate `rhs` over `t_span` from `initial` with the adaptive 5(4) pair.
///
/// `watch` lists (shell, threshold) pairs whose crossings are located to
/// 1e-10 in time; `quad_watches` are state functionals accumulated by
/// per-step quadrature on the dense output.
pub fn integrate<F>(
    rhs: F,
    initial: &ShellState,
    t_span: (f64, f64),
    config: &IntegratorConfig,
    watch: &[(usize, f64)],
    quad_watches: &[QuadWatch],
) -> Result<Trajectory, IntegratorError>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    validate_initial(initial, t_span, config)?;
    let dim = initial.coeffs().len();
    let (t_start, t_end) = t_span;
    let enforce_nonneg =
        config.positivity_mode != PositivityMode::Off && initial.is_nonnegative();

    let mut ws = Workspace::new(dim);
    let mut rec = Recorder::new(quad_watches, config);
    let mut stats = StepStats::default();

    let mut t = t_start;
    let mut y = initial.coeffs().to_vec();
    rhs(t, &y, &mut ws.k[0]);
    rec.store_sample(t, &y, &ws.k[0]);

    // Initial touches are reported once, at the span start.
    for &(shell, threshold) in watch {
        if shell < dim && y[shell] == threshold {
            rec.events.push(CrossingEvent {
                shell,
                threshold,
                time: t,
                direction: CrossingDirection::Touch,
            });
        }
    }

    let mut h = config.dt_init.min(t_end - t_start);
    let mut rejected_last = false;

    loop {
        if t >= t_end {
            let status = IntegrationStatus::Complete;
            return Ok(rec.finish(initial.kind(), stats, status, t, &y, &ws.k[0]));
        }
        if stats.accepted + stats.rejected >= config.max_steps {
            let status = IntegrationStatus::BudgetExhausted { t };
            return Ok(rec.finish(initial.kind(), stats, status, t, &y, &ws.k[0]));
        }

        h = h.min(config.dt_max);
        let mut last_step = false;
        if t + h >= t_end {
            h = t_end - t;
            last_step = true;
        }

        // Stages (k1 is fresh from FSAL or initialization).
        stage(&rhs, t, h, &y, &ws.k, &mut ws.y_stage, 1);
        rhs(t + C[1] * h, &ws.y_stage, &mut ws.k[1]);
        stage(&rhs, t, h, &y, &ws.k, &mut ws.y_stage, 2);
        rhs(t + C[2] * h, &ws.y_stage, &mut ws.k[2]);
        stage(&rhs, t, h, &y, &ws.k, &mut ws.y_stage, 3);
        rhs(t + C[3] * h, &ws.y_stage, &mut ws.k[3]);
        stage(&rhs, t, h, &y, &ws.k, &mut ws.y_stage, 4);
        rhs(t + C[4] * h, &ws.y_stage, &mut ws.k[4]);
        stage(&rhs, t, h, &y, &ws.k, &mut ws.y_stage, 5);
        rhs(t + C[5] * h, &ws.y_stage, &mut ws.k[5]);
        for j in 0..dim {
            ws.y_new[j] = y[j]
                + h * (B1 * ws.k[0][j]
                    + B3 * ws.k[2][j]
                    + B4 * ws.k[3][j]
                    + B5 * ws.k[4][j]
                    + B6 * ws.k[5][j]);
        }
        rhs(t + h, &ws.y_new, &mut ws.k[6]);

        // Embedded error estimate against abs_tol + rel_tol * |a|.
        let mut err_norm_sq = 0.0;
        let mut worst_shell = 0usize;
        let mut worst_ratio = 0.0f64;
        for j in 0..dim {
            let e = h
                * (E1 * ws.k[0][j]
                    + E3 * ws.k[2][j]
                    + E4 * ws.k[3][j]
                    + E5 * ws.k[4][j]
                    + E6 * ws.k[5][j]
                    + E7 * ws.k[6][j]);
            ws.err[j] = e;
            let sc = config.abs_tol + config.rel_tol * y[j].abs().max(ws.y_new[j].abs());
            let ratio = (e / sc).abs();
            if ratio > worst_ratio {
                worst_ratio = ratio;
                worst_shell = j;
            }
            err_norm_sq += ratio * ratio;
        }
        let err_norm = (err_norm_sq / dim as f64).sqrt();

        // Positivity screen on the proposed endpoint.
        let mut positivity_reject = false;
        let mut most_negative_shell = 0usize;
        if enforce_nonneg {
            let mut most_negative = 0.0f64;
            for j in 0..dim {
                if ws.y_new[j] < most_negative {
                    most_negative = ws.y_new[j];
                    most_negative_shell = j;
                }
            }
            match config.positivity_mode {
                PositivityMode::RejectStep => {
                    if most_negative < -config.abs_tol {
                        positivity_reject = true;
                    } else if most_negative < 0.0 {
                        for v in ws.y_new.iter_mut() {
                            if *v < 0.0 {
                                *v = 0.0;
                            }
                        }
                    }
                }
                PositivityMode::Clamp => {
                    for v in ws.y_new.iter_mut() {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                }
                PositivityMode::Off => {}
            }
        }

        if err_norm <= 1.0 && !positivity_reject {
            stats.accepted += 1;

            build_dense(&y, &ws.y_new, &ws.k, h, dim, &mut ws.rcont);
            let segment = StepSegment {
                t0: t,
                h,
                dim,
                rcont: ws.rcont.clone().into_boxed_slice(),
            };
            for &(shell, threshold) in watch {
                if shell < dim {
                    if let Some(ev) = detect_crossing(&segment, shell, threshold) {
                        rec.events.push(ev);
                    }
                }
            }
            for (w, qw) in quad_watches.iter().enumerate() {
                let seg = &segment;
                let scratch = &mut ws.quad_scratch;
                let mut f = |tau: f64| {
                    seg.eval_into((tau - seg.t0) / seg.h, scratch);
                    (qw.integrand)(scratch)
                };
                rec.quad_cumulative[w] +=
                    simpson_refine(&mut f, t, t + h, 1e-8, f64::MIN_POSITIVE);
            }
            if config.store_segments {
                rec.segments.push(segment);
            }

            t += h;
            std::mem::swap(&mut y, &mut ws.y_new);
            ws.k.swap(0, 6); // FSAL

            rec.accepted_since_store += 1;
            if last_step || rec.accepted_since_store >= rec.stride {
                rec.store_sample(t, &y, &ws.k[0]);
            }

            let scale = if err_norm == 0.0 {
                MAX_SCALE
            } else {
                (SAFETY * err_norm.powf(-0.2)).clamp(MIN_SCALE, MAX_SCALE)
            };
            let scale = if rejected_last { scale.min(1.0) } else { scale };
            rejected_last = false;
            h *= scale;
        } else {
            stats.rejected += 1;
            rejected_last = true;
            let limiting_shell;
            if positivity_reject {
                stats.positivity_rejections += 1;
                h *= 0.5;
                limiting_shell = most_negative_shell;
            } else {
                let scale = (SAFETY * err_norm.powf(-0.2)).clamp(MIN_SCALE, 1.0);
                h *= scale;
                limiting_shell = worst_shell;
            }
            if h < config.dt_min && !last_step {
                let partial = rec.finish(
                    initial.kind(),
                    stats,
                    IntegrationStatus::Complete,
                    t,
                    &y,
                    &ws.k[0],
                );
                return Err(IntegratorError::Stiffness {
                    t,
                    dt: h,
                    shell: limiting_shell,
                    partial: Box::new(partial),
                });
            }
            h = h.max(config.dt_min);
        }
    }
}

fn stage<F>(
    _rhs: &F,
    _t: f64,
    h: f64,
    y: &[f64],
    k: &[Vec<f64>; 7],
    y_stage: &mut [f64],
    stage_index: usize,
) where
    F: Fn(f64, &[f64], &mut [f64]),
{
    match stage_index {
        1 => {
            for j in 0..y.len() {
                y_stage[j] = y[j] + h * A21 * k[0][j];
            }
        }
        2 => {
            for j in 0..y.len() {
                y_stage[j] = y[j] + h * (A31 * k[0][j] + A32 * k[1][j]);
            }
        }
        3 => {
            for j in 0..y.len() {
                y_stage[j] = y[j] + h * (A41 * k[0][j] + A42 * k[1][j] + A43 * k[2][j]);
            }
        }
        4 => {
            for j in 0..y.len() {
                y_stage[j] =
                    y[j] + h * (A51 * k[0][j] + A52 * k[1][j] + A53 * k[2][j] + A54 * k[3][j]);
            }
        }
        5 => {
            for j in 0..y.len() {
                y_stage[j] = y[j]
                    + h * (A61 * k[0][j]
                        + A62 * k[1][j]
                        + A63 * k[2][j]
                        + A64 * k[3][j]
                        + A65 * k[4][j]);
            }
        }
        _ => unreachable!(),
    }
}

fn build_dense(y0: &[f64], y1: &[f64], k: &[Vec<f64>; 7], h: f64, dim: usize, rcont: &mut [f64]) {
    for j in 0..dim {
        let ydiff = y1[j] - y0[j];
        let bspl = h * k[0][j] - ydiff;
        rcont[j] = y0[j];
        rcont[dim + j] = ydiff;
        rcont[2 * dim + j] = bspl;
        rcont[3 * dim + j] = ydiff - h * k[6][j] - bspl;
        rcont[4 * dim + j] = h
            * (D1 * k[0][j]
                + D3 * k[2][j]
                + D4 * k[3][j]
                + D5 * k[4][j]
                + D6 * k[5][j]
                + D7 * k[6][j]);
    }
}

// ---------------------------------------------------------------------------
// Exponential fixed-step mode (ETDRK4 with a diagonal linear part).
// ---------------------------------------------------------------------------

fn phi1(z: f64) -> f64 {
    if z.abs() < 0.1 {
        // Taylor: 1 + z/2 + z^2/6 + ...
        let mut term = 1.0;
        let mut acc = 1.0;
        for n in 1..12 {
            term *= z / (n as f64 + 1.0);
            acc += term;
        }
        acc
    } else {
        (z.exp() - 1.0) / z
    }
}

fn phi2(z: f64) -> f64 {
    if z.abs() < 0.1 {
        let mut term = 0.5;
        let mut acc = 0.5;
        for n in 1..12 {
            term *= z / (n as f64 + 2.0);
            acc += term;
        }
        acc
    } else {
        (z.exp() - 1.0 - z) / (z * z)
    }
}

fn phi3(z: f64) -> f64 {
    if z.abs() < 0.1 {
        let mut term = 1.0 / 6.0;
        let mut acc = 1.0 / 6.0;
        for n in 1..12 {
            term *= z / (n as f64 + 3.0);
            acc += term;
        }
        acc
    } else {
        (z.exp() - 1.0 - z - 0.5 * z * z) / (z * z * z)
    }
}

/// Per-component exponential stage weights for one step size.
struct ExpWeights {
    e_full: Vec<f64>,
    e_half: Vec<f64>,
    phi_half: Vec<f64>,
    w1: Vec<f64>,
    w2: Vec<f64>,
    w3: Vec<f64>,
}

impl ExpWeights {
    fn build(diag: &[f64], h: f64) -> Self {
        let dim = diag.len();
        let mut w = ExpWeights {
            e_full: vec![0.0; dim],
            e_half: vec![0.0; dim],
            phi_half: vec![0.0; dim],
            w1: vec![0.0; dim],
            w2: vec![0.0; dim],
            w3: vec![0.0; dim],
        };
        for j in 0..dim {
            let z = diag[j] * h;
            w.e_full[j] = z.exp();
            w.e_half[j] = (0.5 * z).exp();
            w.phi_half[j] = 0.5 * h * phi1(0.5 * z);
            let (p1, p2, p3) = (phi1(z), phi2(z), phi3(z));
            w.w1[j] = h * (p1 - 3.0 * p2 + 4.0 * p3);
            w.w2[j] = h * (p2 - 2.0 * p3);
            w.w3[j] = h * (4.0 * p3 - p2);
        }
        w
    }
}

/// Step-size plan for the exponential stepper: a fixed `dt`, optionally
/// preceded by a geometric ramp from `dt_init` so that fast initial
/// transients (a far-from-slaved damping shell) are resolved before the
/// working step size is reached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitStepSpec {
    pub dt: f64,
    pub dt_init: Option<f64>,
}

impl SplitStepSpec {
    pub fn fixed(dt: f64) -> Self {
        SplitStepSpec { dt, dt_init: None }
    }

    pub fn ramped(dt_init: f64, dt: f64) -> Self {
        SplitStepSpec {
            dt,
            dt_init: Some(dt_init),
        }
    }
}

/// Integrate a system split as dy/dt = diag .* y + nonlinear(t, y) with the
/// fixed-step ETDRK4 scheme. The diagonal part is treated exactly, so an
/// arbitrarily stiff linear drain (the Galerkin damping shell) costs nothing;
/// with a zero diagonal the scheme is the classical fourth-order method.
///
/// Supports `PositivityMode::Clamp`; step rejection needs the adaptive pair.
pub fn integrate_split<F>(
    nonlinear: F,
    diag: &[f64],
    initial: &ShellState,
    t_span: (f64, f64),
    steps: SplitStepSpec,
    config: &IntegratorConfig,
    watch: &[(usize, f64)],
    quad_watches: &[QuadWatch],
) -> Result<Trajectory, IntegratorError>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    validate_initial(initial, t_span, config)?;
    if config.positivity_mode == PositivityMode::RejectStep {
        return Err(IntegratorError::InvalidConfig(
            "positivity_mode = reject_step requires the adaptive stepper".into(),
        ));
    }
    let dim = initial.coeffs().len();
    if diag.len() != dim {
        return Err(IntegratorError::InvalidConfig(
            "diagonal length must match the state dimension".into(),
        ));
    }
    let dt = steps.dt;
    if !(dt > 0.0) {
        return Err(IntegratorError::InvalidConfig("dt must be positive".into()));
    }
    if let Some(d0) = steps.dt_init {
        if !(d0 > 0.0 && d0 <= dt) {
            return Err(IntegratorError::InvalidConfig(
                "require 0 < dt_init <= dt".into(),
            ));
        }
    }
    let (t_start, t_end) = t_span;
    let n_steps = ((t_end - t_start) / dt).ceil() as u64 + 64;
    if n_steps > config.max_steps {
        return Err(IntegratorError::InvalidConfig(format!(
            "~{n_steps} fixed steps exceed max_steps = {}",
            config.max_steps
        )));
    }
    let clamp = config.positivity_mode == PositivityMode::Clamp && initial.is_nonnegative();

    let regular = ExpWeights::build(diag, dt);

    let mut rec = Recorder::new(quad_watches, config);
    let mut stats = StepStats::default();
    let full_rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        nonlinear(t, y, dy);
        for j in 0..y.len() {
            dy[j] += diag[j] * y[j];
        }
    };

    let mut y = initial.coeffs().to_vec();
    let mut t = t_start;
    let mut dy0 = vec![0.0; dim];
    full_rhs(t, &y, &mut dy0);
    rec.store_sample(t, &y, &dy0);
    for &(shell, threshold) in watch {
        if shell < dim && y[shell] == threshold {
            rec.events.push(CrossingEvent {
                shell,
                threshold,
                time: t,
                direction: CrossingDirection::Touch,
            });
        }
    }

    let mut nu = vec![0.0; dim];
    let mut na = vec![0.0; dim];
    let mut nb = vec![0.0; dim];
    let mut nc = vec![0.0; dim];
    let mut sa = vec![0.0; dim];
    let mut sb = vec![0.0; dim];
    let mut sc = vec![0.0; dim];
    let mut y_new = vec![0.0; dim];
    let mut dy1 = vec![0.0; dim];

    let mut irregular: Option<(f64, ExpWeights)> = None;
    let mut h_plan = steps.dt_init.unwrap_or(dt);
    loop {
        if t >= t_end {
            break;
        }
        if stats.accepted >= config.max_steps {
            return Ok(rec.finish(
                initial.kind(),
                stats,
                IntegrationStatus::BudgetExhausted { t },
                t,
                &y,
                &dy0,
            ));
        }
        let mut h = h_plan;
        let last_step = t + h >= t_end;
        if last_step {
            h = t_end - t;
        }
        // Ramp and remainder steps rebuild the weights; the working dt
        // reuses the precomputed set.
        let w = if (h - dt).abs() <= 1e-12 * dt {
            &regular
        } else {
            let stale = !matches!(&irregular, Some((hw, _)) if *hw == h);
            if stale {
                irregular = Some((h, ExpWeights::build(diag, h)));
            }
            &irregular.as_ref().expect("just built").1
        };

        nonlinear(t, &y, &mut nu);
        for j in 0..dim {
            sa[j] = w.e_half[j] * y[j] + w.phi_half[j] * nu[j];
        }
        nonlinear(t + 0.5 * h, &sa, &mut na);
        for j in 0..dim {
            sb[j] = w.e_half[j] * y[j] + w.phi_half[j] * na[j];
        }
        nonlinear(t + 0.5 * h, &sb, &mut nb);
        for j in 0..dim {
            sc[j] = w.e_half[j] * sa[j] + w.phi_half[j] * (2.0 * nb[j] - nu[j]);
        }
        nonlinear(t + h, &sc, &mut nc);
        for j in 0..dim {
            y_new[j] = w.e_full[j] * y[j]
                + w.w1[j] * nu[j]
                + w.w2[j] * 2.0 * (na[j] + nb[j])
                + w.w3[j] * nc[j];
        }
        if clamp {
            for v in y_new.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        full_rhs(t + h, &y_new, &mut dy1);

        // Events and streamed quadrature on the step's Hermite cubic.
        let t1 = t + h;
        if !watch.is_empty() || !quad_watches.is_empty() {
            let a = Sample {
                t,
                coeffs: y.clone().into_boxed_slice(),
                deriv: dy0.clone().into_boxed_slice(),
            };
            let b = Sample {
                t: t1,
                coeffs: y_new.clone().into_boxed_slice(),
                deriv: dy1.clone().into_boxed_slice(),
            };
            for &(shell, threshold) in watch {
                if shell < dim {
                    let eval = |tau: f64| {
                        let mut out = vec![0.0; dim];
                        hermite_eval(&a, &b, tau, &mut out);
                        out[shell]
                    };
                    if let Some(ev) = refine_crossing(&eval, t, t1, shell, threshold) {
                        rec.events.push(ev);
                    }
                }
            }
            let mut scratch = vec![0.0; dim];
            for (w, qw) in quad_watches.iter().enumerate() {
                let mut f = |tau: f64| {
                    hermite_eval(&a, &b, tau, &mut scratch);
                    (qw.integrand)(&scratch)
                };
                rec.quad_cumulative[w] += simpson_refine(&mut f, t, t1, 1e-8, f64::MIN_POSITIVE);
            }
        }

        t = t1;
        std::mem::swap(&mut y, &mut y_new);
        std::mem::swap(&mut dy0, &mut dy1);
        stats.accepted += 1;
        rec.accepted_since_store += 1;
        if last_step || rec.accepted_since_store >= rec.stride {
            rec.store_sample(t, &y, &dy0);
        }
        h_plan = (h_plan * 1.25).min(dt);
    }

    Ok(rec.finish(
        initial.kind(),
        stats,
        IntegrationStatus::Complete,
        t,
        &y,
        &dy0,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DyadicRhs, GalerkinRhs, GalerkinSpec, ModelParams, ShellState, VariableKind};

    fn state(coeffs: &[f64]) -> ShellState {
        ShellState::new(0.0, coeffs.to_vec(), VariableKind::A).unwrap()
    }

    fn tight() -> IntegratorConfig {
        IntegratorConfig {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            ..Default::default()
        }
    }

    #[test]
    fn zero_data_stays_zero() {
        let p = ModelParams::standard();
        let rhs = DyadicRhs::new(&p, 4);
        let traj = integrate(
            |_, y, dy| rhs.eval(y, dy),
            &ShellState::zeros(4, VariableKind::A),
            (0.0, 1.0),
            &IntegratorConfig::default(),
            &[(1, 0.5)],
            &[],
        )
        .unwrap();
        assert!(traj.status().is_complete());
        assert_eq!(traj.min_coefficient(), 0.0);
        assert!(traj.samples().iter().all(|s| s.coeffs.iter().all(|&x| x == 0.0)));
        assert!(traj.events().is_empty());
    }

    #[test]
    fn matches_exponential_decay() {
        // da_1/dt = -a_1 with a_1(0) = 1.
        let traj = integrate(
            |_, y, dy| {
                dy[0] = 0.0;
                dy[1] = -y[1];
            },
            &state(&[0.0, 1.0]),
            (0.0, 2.0),
            &tight(),
            &[],
            &[],
        )
        .unwrap();
        let end = traj.final_state();
        assert!((end.coeff(1) - (-2.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn energy_conserved_under_plain_truncation() {
        // N = 3, a(0) = (0, 1, 0, 0): E constant to 1e-9 relative over [0, 1].
        let p = ModelParams::standard();
        let rhs = DyadicRhs::new(&p, 3);
        let traj = integrate(
            |_, y, dy| rhs.eval(y, dy),
            &state(&[0.0, 1.0, 0.0, 0.0]),
            (0.0, 1.0),
            &tight(),
            &[],
            &[],
        )
        .unwrap();
        let e0 = crate::model::energy(&traj.state_at(0));
        for i in 0..traj.len() {
            let e = crate::model::energy(&traj.state_at(i));
            assert!((e - e0).abs() <= 1e-9 * e0, "E drifted to {e} from {e0}");
        }
    }

    #[test]
    fn positivity_reject_keeps_samples_nonnegative() {
        let p = ModelParams::standard();
        let rhs = DyadicRhs::new(&p, 6);
        let traj = integrate(
            |_, y, dy| rhs.eval(y, dy),
            &state(&[0.0, 0.9, 0.4, 0.05, 0.3, 0.01, 0.2]),
            (0.0, 2.0),
            &IntegratorConfig {
                positivity_mode: PositivityMode::RejectStep,
                ..Default::default()
            },
            &[],
            &[],
        )
        .unwrap();
        assert!(traj.min_coefficient() >= 0.0);
    }

    #[test]
    fn dense_sample_exact_at_nodes_and_accurate_between() {
        let p = ModelParams::standard();
        let rhs = DyadicRhs::new(&p, 5);
        let init = state(&[0.0, 0.8, 0.3, 0.1, 0.05, 0.02]);
        let coarse = integrate(
            |_, y, dy| rhs.eval(y, dy),
            &init,
            (0.0, 0.5),
            &IntegratorConfig {
                rel_tol: 1e-7,
                abs_tol: 1e-10,
                ..Default::default()
            },
            &[],
            &[],
        )
        .unwrap();
        let fine = integrate(
            |_, y, dy| rhs.eval(y, dy),
            &init,
            (0.0, 0.5),
            &IntegratorConfig {
                rel_tol: 1e-12,
                abs_tol: 1e-14,
                ..Default::default()
            },
            &[],
            &[],
        )
        .unwrap();
        // Exact at a stored node.
        let mid_index = coarse.len() / 2;
        let node = coarse.samples()[mid_index].t;
        let at_node = coarse.dense_sample(node).unwrap();
        assert_eq!(at_node.coeffs(), &*coarse.samples()[mid_index].coeffs);
        // Midpoints of steps agree with the refined run.
        for i in (1..coarse.len()).step_by(3) {
            let tm = 0.5 * (coarse.samples()[i - 1].t + coarse.samples()[i].t);
            let a = coarse.dense_sample(tm).unwrap();
            let b = fine.dense_sample(tm).unwrap();
            for j in 0..=a.truncation() {
                assert!(
                    (a.coeff(j) - b.coeff(j)).abs() < 1e-6,
                    "shell {j} at t = {tm}: {} vs {}",
                    a.coeff(j),
                    b.coeff(j)
                );
            }
        }
        assert!(coarse.dense_sample(0.6).is_err());
    }

    #[test]
    fn hermite_fallback_interpolates_without_segments() {
        let traj = integrate(
            |_, y, dy| {
                dy[0] = 0.0;
                dy[1] = -y[1];
            },
            &state(&[0.0, 1.0]),
            (0.0, 1.0),
            &IntegratorConfig {
                store_segments: false,
                ..tight()
            },
            &[],
            &[],
        )
        .unwrap();
        assert!(traj.segments().is_empty());
        let s = traj.dense_sample(0.37).unwrap();
        assert!((s.coeff(1) - (-0.37f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn tolerance_convergence_toward_reference() {
        let p = ModelParams::standard();
        let rhs = DyadicRhs::new(&p, 5);
        let init = state(&[0.0, 0.7, 0.2, 0.1, 0.03, 0.01]);
        let run = |rel: f64| {
            integrate(
                |_, y, dy| rhs.eval(y, dy),
                &init,
                (0.0, 1.0),
                &IntegratorConfig {
                    rel_tol: rel,
                    abs_tol: 1e-14,
                    ..Default::default()
                },
                &[],
                &[],
            )
            .unwrap()
            .final_state()
        };
        let reference = run(1e-12);
        let err = |s: &ShellState| {
            s.coeffs()
                .iter()
                .zip(reference.coeffs())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max)
        };
        let coarse = err(&run(1e-5));
        let fine = err(&run(5e-6));
        assert!(fine < coarse, "halving rel_tol: {coarse} -> {fine}");
    }

    #[test]
    fn budget_exhaustion_reports_partial() {
        let p = ModelParams::standard();
        let rhs = DyadicRhs::new(&p, 5);
        let traj = integrate(
            |_, y, dy| rhs.eval(y, dy),
            &state(&[0.0, 0.7, 0.2, 0.1, 0.03, 0.01]),
            (0.0, 100.0),
            &IntegratorConfig {
                max_steps: 50,
                ..Default::default()
            },
            &[],
            &[],
        )
        .unwrap();
        match traj.status() {
            IntegrationStatus::BudgetExhausted { t } => {
                assert!(*t < 100.0);
                assert_eq!(traj.span().1, *t);
            }
            s => panic!("expected budget exhaustion, got {s:?}"),
        }
    }

    #[test]
    fn stiff_underflow_names_the_limiting_shell() {
        // Shell 2 decays at rate 1e8; dt_min far above its stability limit.
        let err = integrate(
            |_, y, dy| {
                dy[0] = 0.0;
                dy[1] = -y[1];
                dy[2] = -1e8 * y[2];
            },
            &state(&[0.0, 1.0, 1.0]),
            (0.0, 10.0),
            &IntegratorConfig {
                dt_min: 1e-4,
                dt_init: 1e-2,
                positivity_mode: PositivityMode::Off,
                ..Default::default()
            },
            &[],
            &[],
        )
        .unwrap_err();
        match err {
            IntegratorError::Stiffness { shell, partial, .. } => {
                assert_eq!(shell, 2);
                assert!(partial.len() >= 1);
            }
            e => panic!("expected stiffness error, got {e}"),
        }
    }

    #[test]
    fn linear_crossing_located_to_tolerance() {
        // a_1 rises linearly from 0.9 at rate 0.2: crosses 1.0 at t = 0.5.
        let traj = integrate(
            |_, _y, dy| {
                dy[0] = 0.0;
                dy[1] = 0.2;
            },
            &state(&[0.0, 0.9]),
            (0.0, 1.0),
            &IntegratorConfig::default(),
            &[(1, 1.0)],
            &[],
        )
        .unwrap();
        assert_eq!(traj.events().len(), 1);
        let ev = traj.events()[0];
        assert_eq!(ev.direction, CrossingDirection::Upward);
        assert!((ev.time - 0.5).abs() < 1e-9, "event at {}", ev.time);
    }

    #[test]
    fn downward_and_touch_events() {
        let traj = integrate(
            |_, _y, dy| {
                dy[0] = 0.0;
                dy[1] = -0.4;
            },
            &state(&[0.0, 1.0]),
            (0.0, 1.0),
            &IntegratorConfig::default(),
            &[(1, 0.8), (1, 1.0)],
            &[],
        )
        .unwrap();
        let down = traj
            .events()
            .iter()
            .find(|e| e.threshold == 0.8)
            .expect("downward crossing");
        assert_eq!(down.direction, CrossingDirection::Downward);
        assert!((down.time - 0.5).abs() < 1e-9);
        let touch = traj
            .events()
            .iter()
            .find(|e| e.threshold == 1.0)
            .expect("initial touch");
        assert_eq!(touch.direction, CrossingDirection::Touch);
        assert_eq!(touch.time, 0.0);
    }

    #[test]
    fn deterministic_repetition() {
        let p = ModelParams::standard();
        let rhs = DyadicRhs::new(&p, 6);
        let init = state(&[0.0, 0.5, 0.25, 0.12, 0.06, 0.03, 0.01]);
        let run = || {
            integrate(
                |_, y, dy| rhs.eval(y, dy),
                &init,
                (0.0, 1.0),
                &IntegratorConfig::default(),
                &[(3, 0.1)],
                &[],
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    fn streamed_quadrature_matches_closed_form() {
        // d a_1/dt = -a_1: integral of a_1^2 over [0, T] is (1 - e^{-2T})/2.
        let traj = integrate(
            |_, y, dy| {
                dy[0] = 0.0;
                dy[1] = -y[1];
            },
            &state(&[0.0, 1.0]),
            (0.0, 2.0),
            &tight(),
            &[],
            &[QuadWatch::new("sq", |y: &[f64]| y[1] * y[1])],
        )
        .unwrap();
        let series = traj.quad_cumulative("sq").unwrap();
        let total = *series.last().unwrap();
        let exact = 0.5 * (1.0 - (-4.0f64).exp());
        assert!((total - exact).abs() < 1e-9, "{total} vs {exact}");
        assert_eq!(series.len(), traj.len());
    }

    #[test]
    fn split_with_zero_diagonal_matches_adaptive() {
        let p = ModelParams::standard();
        let rhs = DyadicRhs::new(&p, 4);
        let init = state(&[0.0, 0.6, 0.3, 0.1, 0.05]);
        let adaptive = integrate(
            |_, y, dy| rhs.eval(y, dy),
            &init,
            (0.0, 0.5),
            &tight(),
            &[],
            &[],
        )
        .unwrap();
        let split = integrate_split(
            |_, y, dy| rhs.eval(y, dy),
            &[0.0; 5],
            &init,
            (0.0, 0.5),
            SplitStepSpec::fixed(1e-4),
            &IntegratorConfig {
                positivity_mode: PositivityMode::Off,
                sample_stride: 100,
                ..Default::default()
            },
            &[],
            &[],
        )
        .unwrap();
        let a = adaptive.final_state();
        let b = split.final_state();
        for j in 0..=4 {
            assert!(
                (a.coeff(j) - b.coeff(j)).abs() < 1e-9,
                "shell {j}: {} vs {}",
                a.coeff(j),
                b.coeff(j)
            );
        }
    }

    #[test]
    fn split_handles_arbitrarily_stiff_diagonal() {
        // dy/dt = -D y + 1 with D = 1e12: slaved to 1/D almost instantly.
        let d = 1e12;
        let traj = integrate_split(
            |_, _y, dy| {
                dy[0] = 0.0;
                dy[1] = 1.0;
            },
            &[0.0, -d],
            &state(&[0.0, 1.0]),
            (0.0, 1.0),
            SplitStepSpec::fixed(1e-3),
            &IntegratorConfig {
                positivity_mode: PositivityMode::Off,
                sample_stride: 100,
                ..Default::default()
            },
            &[],
            &[],
        )
        .unwrap();
        let end = traj.final_state();
        assert!(
            (end.coeff(1) - 1.0 / d).abs() < 1e-15,
            "slaved value {}",
            end.coeff(1)
        );
    }

    #[test]
    fn split_fourth_order_convergence() {
        // da_1/dt = -a_1 + a_1^2 * 0: use logistic-like nonlinearity.
        let f = |_: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = 0.0;
            dy[1] = -0.5 * y[1] * y[1];
        };
        let exact = |t: f64| 1.0 / (1.0 + 0.5 * t);
        let cfg = IntegratorConfig {
            positivity_mode: PositivityMode::Off,
            ..Default::default()
        };
        let err_at = |dt: f64| {
            let traj = integrate_split(
                f,
                &[0.0, 0.0],
                &state(&[0.0, 1.0]),
                (0.0, 1.0),
                SplitStepSpec::fixed(dt),
                &cfg,
                &[],
                &[],
            )
            .unwrap();
            (traj.final_state().coeff(1) - exact(1.0)).abs()
        };
        let e1 = err_at(0.02);
        let e2 = err_at(0.01);
        let order = (e1 / e2).log2();
        assert!(order > 3.5, "observed order {order} (errors {e1}, {e2})");
    }

    #[test]
    fn split_galerkin_drain_tracks_adaptive() {
        let p = ModelParams::standard();
        let spec = GalerkinSpec::new(6, 0.6).unwrap();
        let rhs = GalerkinRhs::new(&p, &spec);
        let init = state(&[0.0, 0.5, 0.25, 0.12, 0.06, 0.03, 0.015]);
        let adaptive = integrate(
            |_, y, dy| rhs.eval(y, dy),
            &init,
            (0.0, 0.3),
            &tight(),
            &[],
            &[],
        )
        .unwrap();
        let split = integrate_split(
            |_, y, dy| rhs.eval_nonlinear(y, dy),
            &rhs.linear_diagonal(),
            &init,
            (0.0, 0.3),
            SplitStepSpec::fixed(2e-5),
            &IntegratorConfig {
                positivity_mode: PositivityMode::Off,
                sample_stride: 1000,
                ..Default::default()
            },
            &[],
            &[],
        )
        .unwrap();
        let a = adaptive.final_state();
        let b = split.final_state();
        for j in 0..=6 {
            assert!(
                (a.coeff(j) - b.coeff(j)).abs() < 1e-8,
                "shell {j}: {} vs {}",
                a.coeff(j),
                b.coeff(j)
            );
        }
    }

    #[test]
    fn galerkin_energy_nonincreasing_for_positive_data() {
        let p = ModelParams::standard();
        let spec = GalerkinSpec::new(6, 0.6).unwrap();
        let rhs = GalerkinRhs::new(&p, &spec);
        let traj = integrate(
            |_, y, dy| rhs.eval(y, dy),
            &state(&[0.0, 0.6, 0.4, 0.2, 0.1, 0.06, 0.03]),
            (0.0, 1.0),
            &IntegratorConfig::default(),
            &[],
            &[],
        )
        .unwrap();
        let mut prev = f64::INFINITY;
        for i in 0..traj.len() {
            let e = crate::model::energy(&traj.state_at(i));
            assert!(e <= prev + 1e-13, "energy rose: {prev} -> {e}");
            prev = e;
        }
    }

    #[test]
    fn synthetic_trajectory_construction() {
        let traj = Trajectory::from_samples(
            VariableKind::A,
            vec![(0.0, vec![0.0, 1.0]), (1.0, vec![0.0, 2.0])],
        )
        .unwrap();
        assert_eq!(traj.len(), 2);
        assert!(Trajectory::from_samples(VariableKind::A, vec![]).is_err());
        assert!(Trajectory::from_samples(
            VariableKind::A,
            vec![(0.0, vec![0.0]), (0.0, vec![0.0])]
        )
        .is_err());
    }
}
