//! Sampling-based MDCS variants: MEF (neighbourhood exploration with inner
//! and outer momenta) and OPS (gradients averaged over random input
//! operators and perturbations).

use std::fmt;

use crate::constraints::BoxConstraint;
use crate::numerics::{l1_normalize, sign, Point, SeededRng};
use crate::problems::{GradientOracle, ProblemError};

use super::steps::{apply_caps, CapRule, OptimizerState, OracleStep, StepOutcome};
use super::{AttackConfig, MefParams, OpsParams};
use crate::numerics::l1_norm;

/// A coordinate-wise input transformation.
///
/// `apply` returns the transformed point together with the diagonal of the
/// transformation's Jacobian, which maps a gradient taken at the
/// transformed point back to the original coordinates.
pub trait InputOperator: Send + Sync + fmt::Debug {
    fn name(&self) -> String;
    fn apply(&self, z: &Point, rng: &mut SeededRng) -> (Point, Point);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Identity;

impl InputOperator for Identity {
    fn name(&self) -> String {
        "identity".into()
    }

    fn apply(&self, z: &Point, _rng: &mut SeededRng) -> (Point, Point) {
        (z.clone(), z.map(|_| 1.0))
    }
}

/// Adds independent Gaussian noise of standard deviation `sigma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdditiveNoise {
    pub sigma: f64,
}

impl InputOperator for AdditiveNoise {
    fn name(&self) -> String {
        format!("noise({})", self.sigma)
    }

    fn apply(&self, z: &Point, rng: &mut SeededRng) -> (Point, Point) {
        let noisy = z.map(|v| v + self.sigma * rng.standard_normal());
        (noisy, z.map(|_| 1.0))
    }
}

/// Multiplies the whole input by a factor drawn uniformly from `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateScaling {
    pub lo: f64,
    pub hi: f64,
}

impl InputOperator for CoordinateScaling {
    fn name(&self) -> String {
        format!("scale[{}, {}]", self.lo, self.hi)
    }

    fn apply(&self, z: &Point, rng: &mut SeededRng) -> (Point, Point) {
        let s = rng.uniform(self.lo, self.hi);
        (z.scale(s), z.map(|_| s))
    }
}

/// Zeroes each coordinate independently with probability `drop_prob`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateMask {
    pub drop_prob: f64,
}

impl InputOperator for CoordinateMask {
    fn name(&self) -> String {
        format!("mask({})", self.drop_prob)
    }

    fn apply(&self, z: &Point, rng: &mut SeededRng) -> (Point, Point) {
        let mask = z.map(|_| if rng.bernoulli(self.drop_prob) { 0.0 } else { 1.0 });
        (z.zip_map(&mask, |v, k| v * k), mask)
    }
}

/// Pool of operators sampled (uniformly, with replacement) by MDCS-OPS.
#[derive(Debug, Default)]
pub struct OperatorSet {
    ops: Vec<Box<dyn InputOperator>>,
}

impl OperatorSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn identity_only() -> Self {
        Self::new().with(Identity)
    }

    /// Identity, light noise, mild rescaling and sparse masking.
    pub fn builtin() -> Self {
        Self::new()
            .with(Identity)
            .with(AdditiveNoise { sigma: 0.01 })
            .with(CoordinateScaling { lo: 0.9, hi: 1.0 })
            .with(CoordinateMask { drop_prob: 0.1 })
    }

    pub fn with(mut self, op: impl InputOperator + 'static) -> Self {
        self.ops.push(Box::new(op));
        self
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.ops.iter().map(|o| o.name()).collect()
    }

    fn sample(&self, rng: &mut SeededRng) -> &dyn InputOperator {
        self.ops[rng.index(self.ops.len())].as_ref()
    }
}

fn mdcs_outcome(
    state: &mut OptimizerState,
    x: &Point,
    momentum: Point,
    feasible: &BoxConstraint,
    cfg: &AttackConfig,
    gradient_l1: f64,
) -> StepOutcome {
    let t = state.next_step();
    let alpha = cfg.step_size(t);
    let scaled = apply_caps(state, &momentum, CapRule::Monotone);
    state.m = momentum;
    state.iter = t;
    let disp = scaled.scale(alpha);
    let proposal = x.add(&disp);
    let next = feasible.clip_unchecked(&proposal);
    StepOutcome {
        projected: next != proposal,
        next,
        alpha,
        effective: state.d.iter().map(|&d| Some(alpha * d)).collect(),
        max_displacement: disp.linf_norm(),
        gradient_l1,
    }
}

/// MDCS-MEF iteration state: the outer momentum lives in `state.m`, one
/// inner momentum per sample.
#[derive(Debug, Clone)]
pub struct MefStepper {
    pub state: OptimizerState,
    inner: Vec<Point>,
    params: MefParams,
    rng: SeededRng,
}

impl MefStepper {
    pub fn new(dim: usize, params: MefParams, rng: SeededRng) -> Result<Self, ProblemError> {
        if params.n_samples == 0 {
            return Err(ProblemError::InvalidParameter(
                "MEF needs at least one sample".into(),
            ));
        }
        Ok(Self {
            state: OptimizerState::new(dim),
            inner: vec![Point::zeros(dim); params.n_samples],
            params,
            rng,
        })
    }

    /// Samples around `x`, offsets along each inner momentum's sign, folds
    /// the normalized gradients into the inner and outer momenta, then
    /// applies the monotone caps and projects.
    pub fn step(
        &mut self,
        x: &Point,
        oracle: &mut dyn GradientOracle,
        feasible: &BoxConstraint,
        cfg: &AttackConfig,
    ) -> Result<OracleStep, ProblemError> {
        let evaluation = oracle.eval(x)?;
        let n = self.params.n_samples;
        let mut mean_dir = Point::zeros(x.len());
        let mut max_l1 = 0.0f64;
        for k in 0..n {
            let around = x.add(&self.rng.uniform_ball(x.len(), self.params.explore_radius));
            let probe = around.axpy(self.params.xi, &sign(&self.inner[k]));
            let g = if probe == *x {
                evaluation.gradient.clone()
            } else {
                oracle.eval(&probe)?.gradient
            };
            max_l1 = max_l1.max(l1_norm(&g));
            let dir = l1_normalize(&g);
            self.inner[k] = dir.axpy(-self.params.mu_inner, &self.inner[k]);
            mean_dir = mean_dir.add(&dir);
        }
        let mean_dir = mean_dir.scale(1.0 / n as f64);
        let momentum = self.state.m.scale(self.params.mu_outer).add(&mean_dir);
        let outcome = mdcs_outcome(&mut self.state, x, momentum, feasible, cfg, max_l1);
        Ok(OracleStep {
            outcome,
            evaluation,
        })
    }
}

/// MDCS-OPS iteration state.
#[derive(Debug)]
pub struct OpsStepper<'a> {
    pub state: OptimizerState,
    params: OpsParams,
    operators: &'a OperatorSet,
    rng: SeededRng,
}

impl<'a> OpsStepper<'a> {
    pub fn new(
        dim: usize,
        params: OpsParams,
        operators: &'a OperatorSet,
        rng: SeededRng,
    ) -> Result<Self, ProblemError> {
        if operators.is_empty() && params.n_ops > 0 {
            return Err(ProblemError::InvalidParameter(
                "OPS needs a non-empty operator set when n_ops > 0".into(),
            ));
        }
        Ok(Self {
            state: OptimizerState::new(dim),
            params,
            operators,
            rng,
        })
    }

    /// Averages the gradient at `x` with gradients at `n_perturb × n_ops`
    /// transformed, perturbed copies, then takes an MDCS step with
    /// momentum decay `μ`.
    pub fn step(
        &mut self,
        x: &Point,
        oracle: &mut dyn GradientOracle,
        feasible: &BoxConstraint,
        cfg: &AttackConfig,
    ) -> Result<OracleStep, ProblemError> {
        let evaluation = oracle.eval(x)?;
        let mut total = evaluation.gradient.clone();
        for _ in 0..self.params.n_perturb {
            let delta = self.rng.uniform_ball(x.len(), self.params.perturb_radius);
            let shifted = x.add(&delta);
            for _ in 0..self.params.n_ops {
                let op = self.operators.sample(&mut self.rng);
                let (z, jac) = op.apply(&shifted, &mut self.rng);
                let g = oracle.eval(&z)?.gradient;
                total = total.add(&g.zip_map(&jac, |a, b| a * b));
            }
        }
        let count = (self.params.n_perturb * self.params.n_ops + 1) as f64;
        let averaged = total.scale(1.0 / count);
        let momentum = self.state.m.scale(cfg.mu).add(&l1_normalize(&averaged));
        let outcome = mdcs_outcome(
            &mut self.state,
            x,
            momentum,
            feasible,
            cfg,
            l1_norm(&evaluation.gradient),
        );
        Ok(OracleStep {
            outcome,
            evaluation,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_jacobians_match_the_maps() {
        let z = Point::new(vec![0.2, -0.4, 0.9, 0.1]);
        let mut rng = SeededRng::new(4, 0);
        for op in OperatorSet::builtin().ops.iter() {
            let mut a = rng.clone();
            let (out, jac) = op.apply(&z, &mut a);
            assert_eq!(out.len(), z.len());
            assert_eq!(jac.len(), z.len());
            // Every built-in is affine per coordinate with slope `jac`.
            let mut b = rng.clone();
            let (shifted, _) = op.apply(&z.map(|v| v + 1.0), &mut b);
            for i in 0..z.len() {
                assert!((shifted[i] - out[i] - jac[i]).abs() < 1e-12, "{}", op.name());
            }
            rng.next_u64();
        }
    }

    #[test]
    fn ops_rejects_empty_set_when_sampling() {
        let empty = OperatorSet::new();
        let params = OpsParams {
            n_ops: 1,
            ..OpsParams::default()
        };
        assert!(OpsStepper::new(2, params, &empty, SeededRng::new(0, 0)).is_err());
        let params = OpsParams {
            n_ops: 0,
            ..OpsParams::default()
        };
        assert!(OpsStepper::new(2, params, &empty, SeededRng::new(0, 0)).is_ok());
    }

    #[test]
    fn mef_rejects_zero_samples() {
        let params = MefParams {
            n_samples: 0,
            ..MefParams::default()
        };
        assert!(MefStepper::new(2, params, SeededRng::new(0, 0)).is_err());
    }
}
