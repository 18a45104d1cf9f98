//! Named initial-condition families. Every family produces entrywise
//! nonnegative data with a_0 = 0; the random families draw one variate per
//! shell in index order from a seeded splitmix64 stream, so prefixes agree
//! across truncations.

use crate::harness::rng::SplitMix64;
use crate::model::{ModelError, ModelParams, ShellState, VariableKind, CASCADE_EXPONENT};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialConditionSpec {
    /// a_j = amplitude * lambda^{-decay * j}.
    Geometric { amplitude: f64, decay: f64 },
    /// A single excited shell.
    Single { shell: usize, amplitude: f64 },
    /// a_j = u_j * lambda^{-decay * j}, u_j uniform in [0, 1).
    Random { decay: f64 },
    /// c_j(0) <= delta via a_j = delta * lambda^{5/2-2θ} lambda_j^{-θ} v_j.
    DeltaBall { delta: f64 },
}

impl InitialConditionSpec {
    pub fn family_name(&self) -> &'static str {
        match self {
            InitialConditionSpec::Geometric { .. } => "geometric",
            InitialConditionSpec::Single { .. } => "single",
            InitialConditionSpec::Random { .. } => "random",
            InitialConditionSpec::DeltaBall { .. } => "delta-ball",
        }
    }

    pub fn validate(&self, shells: usize) -> Result<(), ModelError> {
        let bad = |name: &'static str, value: f64, constraint: &'static str| {
            Err(ModelError::InvalidParameter {
                name,
                value,
                constraint,
            })
        };
        match *self {
            InitialConditionSpec::Geometric { amplitude, decay } => {
                if !(amplitude >= 0.0) || !amplitude.is_finite() {
                    return bad("amplitude", amplitude, "amplitude >= 0");
                }
                if !(decay > 0.0) {
                    return bad("decay", decay, "decay > 0");
                }
            }
            InitialConditionSpec::Single { shell, amplitude } => {
                if shell < 1 || shell > shells {
                    return Err(ModelError::ShellOutOfRange {
                        index: shell,
                        truncation: shells,
                    });
                }
                if !(amplitude >= 0.0) || !amplitude.is_finite() {
                    return bad("amplitude", amplitude, "amplitude >= 0");
                }
            }
            InitialConditionSpec::Random { decay } => {
                if !(decay > 0.0) {
                    return bad("decay", decay, "decay > 0");
                }
            }
            InitialConditionSpec::DeltaBall { delta } => {
                if !(delta > 0.0 && delta < 1.0) {
                    return bad("delta", delta, "0 < delta < 1");
                }
            }
        }
        Ok(())
    }

    pub fn build(
        &self,
        shells: usize,
        params: &ModelParams,
        seed: u64,
    ) -> Result<ShellState, ModelError> {
        self.validate(shells)?;
        let mut coeffs = vec![0.0; shells + 1];
        let mut rng = SplitMix64::new(seed);
        match *self {
            InitialConditionSpec::Geometric { amplitude, decay } => {
                for (j, c) in coeffs.iter_mut().enumerate().skip(1) {
                    *c = amplitude * params.lambda_j_pow(j as i32, -decay);
                }
            }
            InitialConditionSpec::Single { shell, amplitude } => {
                coeffs[shell] = amplitude;
            }
            InitialConditionSpec::Random { decay } => {
                for (j, c) in coeffs.iter_mut().enumerate().skip(1) {
                    *c = rng.next_f64() * params.lambda_j_pow(j as i32, -decay);
                }
            }
            InitialConditionSpec::DeltaBall { delta } => {
                let prefactor =
                    delta * params.lambda_pow(CASCADE_EXPONENT - 2.0 * params.theta());
                for (j, c) in coeffs.iter_mut().enumerate().skip(1) {
                    *c = prefactor * params.lambda_j_pow(j as i32, -params.theta()) * rng.next_f64();
                }
            }
        }
        ShellState::new(0.0, coeffs, VariableKind::A)
    }
}
