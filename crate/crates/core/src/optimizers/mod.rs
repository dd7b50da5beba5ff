//! Step rules for every attack optimizer and the uniform iteration runner.

mod config;
mod sampling;
mod steps;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::BoxConstraint;
use crate::numerics::{Point, SeededRng};
use crate::problems::{GradientOracle, ProblemError};

pub use config::{AttackConfig, Algorithm, BetaSchedule, MefParams, OpsParams, StepSchedule};
pub use sampling::{
    AdditiveNoise, CoordinateMask, CoordinateScaling, Identity, InputOperator, MefStepper,
    OperatorSet, OpsStepper,
};
pub use steps::{
    adam_step, adam_update, amsgrad_step, amsgrad_update, fgsm, fgsm_update, ifgsm_step,
    ifgsm_update, mdcs_mi_step, mdcs_mi_update, mdcs_mi_update_with, mi_step, mi_update,
    pgd_init, CapRule, OptimizerState, OracleStep, StepOutcome,
};

/// Relative slack for the per-step invariant checks.
const CHECK_TOL: f64 = 1e-12;

/// RNG stream ids, one per consumer, so that adding a consumer never
/// shifts another's draws.
const PGD_STREAM: u64 = 0x7067_6400;
const MEF_STREAM: u64 = 0x6d65_6600;
const OPS_STREAM: u64 = 0x6f70_7300;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid attack configuration: {0}")]
    InvalidConfig(String),
    #[error("oracle failed at step {step}: {source}")]
    Oracle {
        step: usize,
        #[source]
        source: ProblemError,
        /// Everything recorded before the failure.
        partial: Box<Trajectory>,
    },
    #[error("trajectory is empty")]
    EmptyTrajectory,
}

/// Summary of the per-coordinate effective step-sizes at one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based step number.
    pub step: usize,
    pub alpha: f64,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub mean: Option<f64>,
    /// Effective step of `AttackConfig::tracked_coordinate`.
    pub tracked: Option<f64>,
    pub max_displacement: f64,
    pub projected: bool,
    /// `‖∇J(x_t)‖₁` at the point the step started from.
    pub gradient_l1: f64,
    /// `‖m_{t+1}‖∞` for momentum methods.
    pub momentum_linf: Option<f64>,
}

impl StepRecord {
    fn from_outcome(
        step: usize,
        outcome: &StepOutcome,
        tracked: usize,
        momentum_linf: Option<f64>,
    ) -> Self {
        let defined: Vec<f64> = outcome.effective.iter().flatten().copied().collect();
        let (min, max, mean) = if defined.is_empty() {
            (None, None, None)
        } else {
            (
                Some(defined.iter().cloned().fold(f64::INFINITY, f64::min)),
                Some(defined.iter().cloned().fold(f64::NEG_INFINITY, f64::max)),
                Some(defined.iter().sum::<f64>() / defined.len() as f64),
            )
        };
        Self {
            step,
            alpha: outcome.alpha,
            min,
            max,
            mean,
            tracked: outcome.effective.get(tracked).copied().flatten(),
            max_displacement: outcome.max_displacement,
            projected: outcome.projected,
            gradient_l1: outcome.gradient_l1,
            momentum_linf,
        }
    }
}

/// A broken runtime invariant, recorded rather than panicking so that a
/// whole sweep can be audited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Infeasible { step: usize },
    CapIncreased { step: usize, coord: usize, prev: f64, next: f64 },
    CapAboveOne { step: usize, coord: usize, value: f64 },
    CapBelowBound { step: usize, coord: usize, value: f64, bound: f64 },
    MomentumAboveBound { step: usize, value: f64, bound: f64 },
    DisplacementAboveStep { step: usize, displacement: f64, alpha: f64 },
    SecondMomentDecreased { step: usize, coord: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Iterates, losses and per-step records of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub config: AttackConfig,
    /// `x_0, …, x_T`.
    pub points: Vec<Point>,
    /// `J(x_0), …, J(x_T)` as returned by the oracle.
    pub losses: Vec<f64>,
    pub steps: Vec<StepRecord>,
    /// `max_t ‖∇J(x_t)‖₁` over the run.
    pub max_gradient_l1: f64,
    pub violations: Vec<Violation>,
    /// Cleared when the oracle failed part-way.
    pub valid: bool,
}

impl Trajectory {
    fn new(config: AttackConfig) -> Self {
        Self {
            config,
            points: Vec::new(),
            losses: Vec::new(),
            steps: Vec::new(),
            max_gradient_l1: 0.0,
            violations: Vec::new(),
            valid: true,
        }
    }

    pub fn iterations(&self) -> usize {
        self.steps.len()
    }

    pub fn last_point(&self) -> Option<&Point> {
        self.points.last()
    }

    pub fn initial_point(&self) -> Option<&Point> {
        self.points.first()
    }

    /// Checks every recorded point against the box.
    pub fn all_feasible(&self, feasible: &BoxConstraint) -> bool {
        self.points.iter().all(|p| feasible.contains(p))
    }
}

/// Mean of `x_1, …, x_T` (the starting point is excluded).
pub fn averaged_iterate(traj: &Trajectory) -> Result<Point, RunError> {
    if traj.points.len() < 2 {
        return Err(RunError::EmptyTrajectory);
    }
    Point::mean(&traj.points[1..]).ok_or(RunError::EmptyTrajectory)
}

enum Stepper<'a> {
    Single,
    Plain {
        algorithm: Algorithm,
        state: OptimizerState,
    },
    Mef(MefStepper),
    Ops(OpsStepper<'a>),
}

impl Stepper<'_> {
    fn state(&self) -> Option<&OptimizerState> {
        match self {
            Stepper::Single => None,
            Stepper::Plain { state, .. } => Some(state),
            Stepper::Mef(m) => Some(&m.state),
            Stepper::Ops(o) => Some(&o.state),
        }
    }

    fn step(
        &mut self,
        x: &Point,
        oracle: &mut dyn GradientOracle,
        feasible: &BoxConstraint,
        cfg: &AttackConfig,
    ) -> Result<OracleStep, ProblemError> {
        match self {
            Stepper::Single => {
                let evaluation = oracle.eval(x)?;
                let outcome = fgsm_update(x, &evaluation.gradient, feasible, cfg);
                Ok(OracleStep {
                    outcome,
                    evaluation,
                })
            }
            Stepper::Plain { algorithm, state } => match algorithm {
                Algorithm::IFgsm | Algorithm::Pgd => ifgsm_step(state, x, oracle, feasible, cfg),
                Algorithm::MiFgsm => mi_step(state, x, oracle, feasible, cfg),
                Algorithm::MdcsMi => mdcs_mi_step(state, x, oracle, feasible, cfg),
                Algorithm::Adam => adam_step(state, x, oracle, feasible, cfg),
                Algorithm::AmsGrad => amsgrad_step(state, x, oracle, feasible, cfg),
                other => unreachable!("{other} is not a plain stepper"),
            },
            Stepper::Mef(m) => m.step(x, oracle, feasible, cfg),
            Stepper::Ops(o) => o.step(x, oracle, feasible, cfg),
        }
    }

    fn momentum_bound(&self, cfg: &AttackConfig) -> Option<f64> {
        let geometric = |mu: f64| if mu < 1.0 { Some(1.0 / (1.0 - mu)) } else { None };
        match self {
            Stepper::Plain {
                algorithm: Algorithm::MdcsMi,
                ..
            } => cfg.momentum_bound(),
            Stepper::Mef(_) => geometric(cfg.mef.mu_outer),
            Stepper::Ops(_) => geometric(cfg.mu),
            _ => None,
        }
    }
}

fn check_step(
    traj: &mut Trajectory,
    step: usize,
    algorithm: Algorithm,
    before: Option<&OptimizerState>,
    after: Option<&OptimizerState>,
    outcome: &StepOutcome,
    momentum_bound: Option<f64>,
) {
    let (Some(before), Some(after)) = (before, after) else {
        return;
    };
    if algorithm.is_mdcs() {
        for (i, (&prev, &next)) in before.d.iter().zip(after.d.iter()).enumerate() {
            if next > prev {
                traj.violations.push(Violation::CapIncreased {
                    step,
                    coord: i,
                    prev,
                    next,
                });
            }
            if next > 1.0 {
                traj.violations.push(Violation::CapAboveOne {
                    step,
                    coord: i,
                    value: next,
                });
            }
            if let Some(bound) = momentum_bound {
                let floor = 1.0 / bound;
                if next < floor * (1.0 - CHECK_TOL) {
                    traj.violations.push(Violation::CapBelowBound {
                        step,
                        coord: i,
                        value: next,
                        bound: floor,
                    });
                }
            }
        }
        if let Some(bound) = momentum_bound {
            let norm = after.m.linf_norm();
            if norm > bound * (1.0 + CHECK_TOL) {
                traj.violations.push(Violation::MomentumAboveBound {
                    step,
                    value: norm,
                    bound,
                });
            }
        }
        if outcome.max_displacement > outcome.alpha * (1.0 + 1e-9) {
            traj.violations.push(Violation::DisplacementAboveStep {
                step,
                displacement: outcome.max_displacement,
                alpha: outcome.alpha,
            });
        }
    }
    if algorithm == Algorithm::AmsGrad {
        for (i, (&prev, &next)) in before.v_hat.iter().zip(after.v_hat.iter()).enumerate() {
            if next < prev {
                traj.violations
                    .push(Violation::SecondMomentDecreased { step, coord: i });
            }
        }
    }
}

/// Runs `cfg.algorithm` for `cfg.total_iters` steps (FGSM always takes one)
/// using the built-in operator set for MDCS-OPS.
pub fn run(
    oracle: &mut dyn GradientOracle,
    feasible: &BoxConstraint,
    cfg: &AttackConfig,
) -> Result<Trajectory, RunError> {
    let operators = OperatorSet::builtin();
    run_with_operators(oracle, feasible, cfg, &operators)
}

pub fn mdcs_mef_run(
    oracle: &mut dyn GradientOracle,
    feasible: &BoxConstraint,
    cfg: &AttackConfig,
    mef: &MefParams,
) -> Result<Trajectory, RunError> {
    let cfg = AttackConfig {
        algorithm: Algorithm::MdcsMef,
        mef: mef.clone(),
        ..cfg.clone()
    };
    run_with_operators(oracle, feasible, &cfg, &OperatorSet::new())
}

pub fn mdcs_ops_run(
    oracle: &mut dyn GradientOracle,
    feasible: &BoxConstraint,
    cfg: &AttackConfig,
    ops: &OpsParams,
    operators: &OperatorSet,
) -> Result<Trajectory, RunError> {
    let cfg = AttackConfig {
        algorithm: Algorithm::MdcsOps,
        ops: ops.clone(),
        ..cfg.clone()
    };
    run_with_operators(oracle, feasible, &cfg, operators)
}

/// The uniform driver behind [`run`].
///
/// Starts from the box centre (a uniform random point for PGD), records the
/// loss, point and step summary of every iteration, and audits the runtime
/// invariants into [`Trajectory::violations`].
pub fn run_with_operators(
    oracle: &mut dyn GradientOracle,
    feasible: &BoxConstraint,
    cfg: &AttackConfig,
    operators: &OperatorSet,
) -> Result<Trajectory, RunError> {
    cfg.validate()?;
    if (cfg.epsilon - feasible.radius()).abs() > 1e-12 * feasible.radius() {
        return Err(RunError::InvalidConfig(format!(
            "epsilon {} does not match box radius {}",
            cfg.epsilon,
            feasible.radius()
        )));
    }
    if oracle.dim() != feasible.dim() {
        return Err(RunError::InvalidConfig(format!(
            "oracle dimension {} does not match box dimension {}",
            oracle.dim(),
            feasible.dim()
        )));
    }
    let dim = feasible.dim();
    let invalid = |e: ProblemError| RunError::InvalidConfig(e.to_string());
    let mut stepper = match cfg.algorithm {
        Algorithm::Fgsm => Stepper::Single,
        Algorithm::MdcsMef => Stepper::Mef(
            MefStepper::new(dim, cfg.mef.clone(), SeededRng::new(cfg.seed, MEF_STREAM))
                .map_err(invalid)?,
        ),
        Algorithm::MdcsOps => Stepper::Ops(
            OpsStepper::new(
                dim,
                cfg.ops.clone(),
                operators,
                SeededRng::new(cfg.seed, OPS_STREAM),
            )
            .map_err(invalid)?,
        ),
        algorithm => Stepper::Plain {
            algorithm,
            state: OptimizerState::new(dim),
        },
    };
    let total = if cfg.algorithm == Algorithm::Fgsm {
        1
    } else {
        cfg.total_iters
    };
    let momentum_bound = stepper.momentum_bound(cfg);

    let mut x = if cfg.algorithm == Algorithm::Pgd {
        pgd_init(feasible, &mut SeededRng::new(cfg.seed, PGD_STREAM))
    } else {
        feasible.center().clone()
    };
    let mut traj = Trajectory::new(cfg.clone());
    traj.points.push(x.clone());
    if !feasible.contains(&x) {
        traj.violations.push(Violation::Infeasible { step: 0 });
    }

    let fail = |traj: &mut Trajectory, step: usize, source: ProblemError| {
        traj.valid = false;
        RunError::Oracle {
            step,
            source,
            partial: Box::new(traj.clone()),
        }
    };

    for step in 1..=total {
        let before = stepper.state().cloned();
        let result = stepper.step(&x, oracle, feasible, cfg);
        let OracleStep {
            outcome,
            evaluation,
        } = match result {
            Ok(s) => s,
            Err(e) => return Err(fail(&mut traj, step, e)),
        };
        traj.losses.push(evaluation.loss);
        traj.max_gradient_l1 = traj.max_gradient_l1.max(outcome.gradient_l1);
        let after = stepper.state();
        let momentum_linf = match cfg.algorithm {
            Algorithm::MiFgsm | Algorithm::MdcsMi | Algorithm::MdcsMef | Algorithm::MdcsOps => {
                after.map(|s| s.m.linf_norm())
            }
            _ => None,
        };
        check_step(
            &mut traj,
            step,
            cfg.algorithm,
            before.as_ref(),
            after,
            &outcome,
            momentum_bound,
        );
        traj.steps.push(StepRecord::from_outcome(
            step,
            &outcome,
            cfg.tracked_coordinate,
            momentum_linf,
        ));
        if !feasible.contains(&outcome.next) {
            traj.violations.push(Violation::Infeasible { step });
        }
        x = outcome.next;
        traj.points.push(x.clone());
    }
    match oracle.eval(&x) {
        Ok(e) => {
            traj.losses.push(e.loss);
            traj.max_gradient_l1 = traj.max_gradient_l1.max(crate::numerics::l1_norm(&e.gradient));
        }
        Err(e) => return Err(fail(&mut traj, total + 1, e)),
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{quadratic_oracle, sign_oscillation_fixture, Evaluation};

    fn quad_setup(seed: u64, dim: usize) -> (crate::problems::ConcaveQuadratic, BoxConstraint) {
        let mut rng = SeededRng::new(seed, 0);
        let center = Point::new((0..dim).map(|_| rng.uniform(0.3, 0.7)).collect());
        let target = center.map(|c| c + 0.0).zip_map(
            &Point::new((0..dim).map(|_| rng.uniform(-0.2, 0.2)).collect()),
            |a, b| a + b,
        );
        (
            quadratic_oracle(target, 1.0).unwrap(),
            BoxConstraint::new(center, 0.1, 0.0, 1.0).unwrap(),
        )
    }

    #[test]
    fn zero_budget_records_only_the_start() {
        let (mut q, b) = quad_setup(1, 3);
        let cfg = AttackConfig {
            epsilon: 0.1,
            total_iters: 0,
            ..AttackConfig::default()
        };
        let traj = run(&mut q, &b, &cfg).unwrap();
        assert_eq!(traj.points.len(), 1);
        assert_eq!(traj.losses.len(), 1);
        assert!(averaged_iterate(&traj).is_err());
    }

    #[test]
    fn every_algorithm_stays_feasible() {
        for algorithm in Algorithm::ALL {
            for seed in 0..3 {
                let (mut q, b) = quad_setup(seed, 5);
                let cfg = AttackConfig {
                    algorithm,
                    epsilon: 0.1,
                    total_iters: 25,
                    seed,
                    ..AttackConfig::default()
                };
                let traj = run(&mut q, &b, &cfg).unwrap();
                let expect = if algorithm == Algorithm::Fgsm { 2 } else { 26 };
                assert_eq!(traj.points.len(), expect, "{algorithm}");
                assert_eq!(traj.losses.len(), expect);
                assert!(traj.all_feasible(&b), "{algorithm}");
                assert!(traj.violations.is_empty(), "{algorithm}: {:?}", traj.violations);
            }
        }
    }

    #[test]
    fn ifgsm_fixture_cycle() {
        let (mut q, b, report) = sign_oscillation_fixture();
        let cfg = AttackConfig {
            algorithm: Algorithm::IFgsm,
            epsilon: 1.0,
            total_iters: 12,
            schedule: StepSchedule::Fixed(report.step),
            ..AttackConfig::default()
        };
        let traj = run(&mut q, &b, &cfg).unwrap();
        let xs: Vec<f64> = traj.points.iter().map(|p| p[0]).collect();
        let expect = [0.0, 0.1, 0.2, 0.3, 0.4, 0.3, 0.4, 0.3, 0.4, 0.3, 0.4, 0.3, 0.4];
        for (a, e) in xs.iter().zip(expect) {
            assert!((a - e).abs() < 1e-12, "{xs:?}");
        }
    }

    #[test]
    fn averaged_iterate_examples() {
        let mut traj = Trajectory::new(AttackConfig::default());
        traj.points.push(Point::new(vec![0.0]));
        for k in 0..10 {
            traj.points.push(Point::new(vec![if k % 2 == 0 { 0.3 } else { 0.4 }]));
        }
        assert!((averaged_iterate(&traj).unwrap()[0] - 0.35).abs() < 1e-15);
        let mut flat = Trajectory::new(AttackConfig::default());
        flat.points = vec![Point::new(vec![0.2]); 5];
        assert_eq!(averaged_iterate(&flat).unwrap()[0], 0.2);
    }

    #[test]
    fn epsilon_must_match_box() {
        let (mut q, b) = quad_setup(0, 2);
        let cfg = AttackConfig {
            epsilon: 0.2,
            ..AttackConfig::default()
        };
        assert!(matches!(run(&mut q, &b, &cfg), Err(RunError::InvalidConfig(_))));
    }

    struct Flaky {
        calls: usize,
    }

    impl GradientOracle for Flaky {
        fn dim(&self) -> usize {
            1
        }
        fn description(&self) -> String {
            "fails on the third call".into()
        }
        fn eval(&mut self, z: &Point) -> Result<Evaluation, ProblemError> {
            self.calls += 1;
            if self.calls == 3 {
                return Err(ProblemError::NonFinite { what: "loss" });
            }
            Ok(Evaluation {
                loss: z[0],
                gradient: Point::new(vec![1.0]),
            })
        }
    }

    #[test]
    fn oracle_failure_returns_partial_trajectory() {
        let b = BoxConstraint::unbounded(Point::new(vec![0.0]), 1.0).unwrap();
        let cfg = AttackConfig {
            algorithm: Algorithm::IFgsm,
            epsilon: 1.0,
            total_iters: 10,
            ..AttackConfig::default()
        };
        match run(&mut Flaky { calls: 0 }, &b, &cfg) {
            Err(RunError::Oracle { step, partial, .. }) => {
                assert_eq!(step, 3);
                assert!(!partial.valid);
                assert_eq!(partial.points.len(), 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
