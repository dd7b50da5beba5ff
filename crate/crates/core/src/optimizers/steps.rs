//! Single-iteration update rules.
//!
//! Each rule comes in two layers: a pure `*_update` taking the gradient at
//! the current point, and an oracle-driven `*_step` that evaluates the
//! gradient first. Steps are numbered from 1.

use crate::constraints::{BoxConstraint, DiagScaling};
use crate::numerics::{l1_norm, l1_normalize, sign, Point, SeededRng};
use crate::problems::{Evaluation, GradientOracle, ProblemError};

use super::AttackConfig;

/// Mutable per-run optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// Momentum `m_t`.
    pub m: Point,
    /// Step-size caps `d_t` of the MDCS family, initialized to 1.
    pub d: Point,
    /// Adam second-moment diagonal `V_t`.
    pub v: Point,
    /// AMSGrad running maximum `V̂_t`.
    pub v_hat: Point,
    /// Completed steps.
    pub iter: usize,
}

impl OptimizerState {
    pub fn new(dim: usize) -> Self {
        Self {
            m: Point::zeros(dim),
            d: Point::filled(dim, 1.0),
            v: Point::zeros(dim),
            v_hat: Point::zeros(dim),
            iter: 0,
        }
    }

    /// 1-based number of the step about to be taken.
    pub fn next_step(&self) -> usize {
        self.iter + 1
    }
}

/// How MDCS-MI turns the momentum into per-coordinate caps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapRule {
    /// `d_t = min(1/|m_{t+1}|, d_{t−1})`; frozen where `m_{t+1} = 0`.
    Monotone,
    /// `d_t = 1/|m_{t+1}|` with no running minimum and no cap at 1. Reduces
    /// the update to MI-FGSM; used only as an equivalence oracle.
    Reciprocal,
}

/// Result of one update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next: Point,
    pub alpha: f64,
    /// Per-coordinate effective step-size; `None` where undefined (a zero
    /// gradient or momentum coordinate).
    pub effective: Vec<Option<f64>>,
    /// `max_i |x_{t+1,i} − x_{t,i}|` before projection.
    pub max_displacement: f64,
    /// Whether projection moved any coordinate.
    pub projected: bool,
    pub gradient_l1: f64,
}

/// Result of an oracle-driven step: the update plus the evaluation at the
/// point the step started from.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleStep {
    pub outcome: StepOutcome,
    pub evaluation: Evaluation,
}

fn finish(
    feasible: &BoxConstraint,
    x: &Point,
    displacement: Point,
    alpha: f64,
    effective: Vec<Option<f64>>,
    gradient: &Point,
) -> StepOutcome {
    let proposal = x.add(&displacement);
    let next = feasible.clip_unchecked(&proposal);
    StepOutcome {
        projected: next != proposal,
        next,
        alpha,
        effective,
        max_displacement: displacement.linf_norm(),
        gradient_l1: l1_norm(gradient),
    }
}

fn reciprocal_steps(scale: f64, v: &Point) -> Vec<Option<f64>> {
    v.iter()
        .map(|&g| if g != 0.0 { Some(scale / g.abs()) } else { None })
        .collect()
}

/// `x + ε·sign(∇J(x))`, clipped.
pub fn fgsm_update(x: &Point, grad: &Point, feasible: &BoxConstraint, cfg: &AttackConfig) -> StepOutcome {
    let eps = cfg.epsilon;
    let disp = sign(grad).scale(eps);
    finish(feasible, x, disp, eps, reciprocal_steps(eps, grad), grad)
}

pub fn fgsm(
    oracle: &mut dyn GradientOracle,
    feasible: &BoxConstraint,
    cfg: &AttackConfig,
) -> Result<Point, ProblemError> {
    let x = feasible.center().clone();
    let e = oracle.eval(&x)?;
    Ok(fgsm_update(&x, &e.gradient, feasible, cfg).next)
}

/// `x_{t+1} = clip(x_t + α·sign(g_t))`. Shared by I-FGSM and PGD.
pub fn ifgsm_update(
    state: &mut OptimizerState,
    x: &Point,
    grad: &Point,
    feasible: &BoxConstraint,
    cfg: &AttackConfig,
) -> StepOutcome {
    let t = state.next_step();
    let alpha = cfg.step_size(t);
    state.iter = t;
    let disp = sign(grad).scale(alpha);
    finish(feasible, x, disp, alpha, reciprocal_steps(alpha, grad), grad)
}

/// Uniform random start in the ε-ball, clipped to the global bounds.
pub fn pgd_init(feasible: &BoxConstraint, rng: &mut SeededRng) -> Point {
    let noise = rng.uniform_ball(feasible.dim(), feasible.radius());
    let start = feasible.center().add(&noise);
    feasible.clip_unchecked(&start)
}

/// `m_{t+1} = μ·m_t + g/‖g‖₁`, `x_{t+1} = clip(x_t + α·sign(m_{t+1}))`.
pub fn mi_update(
    state: &mut OptimizerState,
    x: &Point,
    grad: &Point,
    feasible: &BoxConstraint,
    cfg: &AttackConfig,
) -> StepOutcome {
    let t = state.next_step();
    let alpha = cfg.step_size(t);
    state.m = state.m.scale(cfg.mu).add(&l1_normalize(grad));
    state.iter = t;
    let disp = sign(&state.m).scale(alpha);
    finish(feasible, x, disp, alpha, reciprocal_steps(alpha, &state.m), grad)
}

/// Applies the MDCS cap update to `state.d` given the fresh momentum and
/// returns the products `d_{t,i}·m_{t+1,i}`.
///
/// Where the cap is set by `1/|m_{t+1,i}|`, the product is evaluated as
/// `m_{t+1,i}/|m_{t+1,i}|`, which is exactly `±1`.
pub(crate) fn apply_caps(state: &mut OptimizerState, momentum: &Point, rule: CapRule) -> Point {
    let mut scaled = vec![0.0; momentum.len()];
    for (i, &mi) in momentum.iter().enumerate() {
        if mi == 0.0 {
            if rule == CapRule::Reciprocal {
                state.d[i] = f64::INFINITY;
            }
            continue;
        }
        let recip = 1.0 / mi.abs();
        match rule {
            CapRule::Monotone => {
                if recip < state.d[i] {
                    state.d[i] = recip;
                    scaled[i] = mi / mi.abs();
                } else {
                    scaled[i] = state.d[i] * mi;
                }
            }
            CapRule::Reciprocal => {
                state.d[i] = recip;
                scaled[i] = mi / mi.abs();
            }
        }
    }
    momentum.like(scaled)
}

fn mdcs_effective(alpha: f64, d: &Point) -> Vec<Option<f64>> {
    d.iter()
        .map(|&di| if di.is_finite() { Some(alpha * di) } else { None })
        .collect()
}

/// MDCS-MI with an explicit cap rule.
pub fn mdcs_mi_update_with(
    state: &mut OptimizerState,
    x: &Point,
    grad: &Point,
    feasible: &BoxConstraint,
    cfg: &AttackConfig,
    rule: CapRule,
) -> StepOutcome {
    let t = state.next_step();
    let alpha = cfg.step_size(t);
    let beta_t = cfg.momentum_weight(t);
    let momentum = state.m.scale(beta_t).add(&l1_normalize(grad));
    let scaled = apply_caps(state, &momentum, rule);
    let effective = mdcs_effective(alpha, &state.d);
    state.m = momentum;
    state.iter = t;
    finish(feasible, x, scaled.scale(alpha), alpha, effective, grad)
}

/// One MDCS-MI iteration:
///
/// ```text
/// m_{t+1} = β_t·m_t + g/‖g‖₁
/// d_{t,i} = min(1/|m_{t+1,i}|, d_{t−1,i})
/// x_{t+1} = P_{Q,D⁻¹}(x_t + α_t·D_t·m_{t+1})
/// ```
///
/// The projection is the diagonal-metric projection onto the box, which is
/// the coordinate clamp.
pub fn mdcs_mi_update(
    state: &mut OptimizerState,
    x: &Point,
    grad: &Point,
    feasible: &BoxConstraint,
    cfg: &AttackConfig,
) -> StepOutcome {
    mdcs_mi_update_with(state, x, grad, feasible, cfg, CapRule::Monotone)
}

fn inverse_sqrt(v: &Point, floor: f64) -> Point {
    v.map(|vi| 1.0 / vi.max(floor).sqrt())
}

fn adam_like_update(
    state: &mut OptimizerState,
    x: &Point,
    grad: &Point,
    feasible: &BoxConstraint,
    cfg: &AttackConfig,
    amsgrad: bool,
) -> StepOutcome {
    let t = state.next_step();
    let alpha = cfg.step_size(t);
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    state.m = state.m.zip_map(grad, |m, g| b1 * m + (1.0 - b1) * g);
    state.v = state.v.zip_map(grad, |v, g| b2 * v + (1.0 - b2) * g * g);
    state.v_hat = state.v_hat.zip_map(&state.v, f64::max);
    state.iter = t;
    let second = if amsgrad { &state.v_hat } else { &state.v };
    let inv = inverse_sqrt(second, cfg.adam_floor);
    let disp = inv.zip_map(&state.m, |s, m| alpha * s * m);
    let effective = inv.iter().map(|s| Some(alpha * s)).collect();
    let metric = DiagScaling::new(second.map(|v| v.max(cfg.adam_floor)))
        .expect("floored second moments are positive");
    let proposal = x.add(&disp);
    let next = feasible
        .project_diag(&metric, &proposal)
        .expect("state matches box dimension");
    StepOutcome {
        projected: next != proposal,
        next,
        alpha,
        effective,
        max_displacement: disp.linf_norm(),
        gradient_l1: l1_norm(grad),
    }
}

/// Adam without bias correction, ascent orientation:
/// `x_{t+1} = P_{Q,V⁻¹}(x_t + α_t·V_t^{-1/2}·m_t)`.
pub fn adam_update(
    state: &mut OptimizerState,
    x: &Point,
    grad: &Point,
    feasible: &BoxConstraint,
    cfg: &AttackConfig,
) -> StepOutcome {
    adam_like_update(state, x, grad, feasible, cfg, false)
}

/// AMSGrad: Adam with `V̂_t = max(V̂_{t−1}, V_t)` in place of `V_t`.
pub fn amsgrad_update(
    state: &mut OptimizerState,
    x: &Point,
    grad: &Point,
    feasible: &BoxConstraint,
    cfg: &AttackConfig,
) -> StepOutcome {
    adam_like_update(state, x, grad, feasible, cfg, true)
}

type PureUpdate =
    fn(&mut OptimizerState, &Point, &Point, &BoxConstraint, &AttackConfig) -> StepOutcome;

fn oracle_step(
    update: PureUpdate,
    state: &mut OptimizerState,
    x: &Point,
    oracle: &mut dyn GradientOracle,
    feasible: &BoxConstraint,
    cfg: &AttackConfig,
) -> Result<OracleStep, ProblemError> {
    let evaluation = oracle.eval(x)?;
    let outcome = update(state, x, &evaluation.gradient, feasible, cfg);
    Ok(OracleStep {
        outcome,
        evaluation,
    })
}

pub fn ifgsm_step(
    state: &mut OptimizerState,
    x: &Point,
    oracle: &mut dyn GradientOracle,
    feasible: &BoxConstraint,
    cfg: &AttackConfig,
) -> Result<OracleStep, ProblemError> {
    oracle_step(ifgsm_update, state, x, oracle, feasible, cfg)
}

pub fn mi_step(
    state: &mut OptimizerState,
    x: &Point,
    oracle: &mut dyn GradientOracle,
    feasible: &BoxConstraint,
    cfg: &AttackConfig,
) -> Result<OracleStep, ProblemError> {
    oracle_step(mi_update, state, x, oracle, feasible, cfg)
}

pub fn mdcs_mi_step(
    state: &mut OptimizerState,
    x: &Point,
    oracle: &mut dyn GradientOracle,
    feasible: &BoxConstraint,
    cfg: &AttackConfig,
) -> Result<OracleStep, ProblemError> {
    oracle_step(mdcs_mi_update, state, x, oracle, feasible, cfg)
}

pub fn adam_step(
    state: &mut OptimizerState,
    x: &Point,
    oracle: &mut dyn GradientOracle,
    feasible: &BoxConstraint,
    cfg: &AttackConfig,
) -> Result<OracleStep, ProblemError> {
    oracle_step(adam_update, state, x, oracle, feasible, cfg)
}

pub fn amsgrad_step(
    state: &mut OptimizerState,
    x: &Point,
    oracle: &mut dyn GradientOracle,
    feasible: &BoxConstraint,
    cfg: &AttackConfig,
) -> Result<OracleStep, ProblemError> {
    oracle_step(amsgrad_update, state, x, oracle, feasible, cfg)
}
