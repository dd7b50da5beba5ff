//! Box-constrained local optimization for adversarial-style objectives.
//!
//! The crate provides the sign-based attack optimizers (FGSM, I-FGSM, PGD,
//! MI-FGSM), the adaptive baselines Adam and AMSGrad, and the MDCS family
//! (monotonically decreasing coordinate-wise step-sizes): MDCS-MI, MDCS-MEF
//! and MDCS-OPS. Around them sit gradient oracles (analytic problems,
//! counterexample fixtures, tiny hand-differentiated classifiers) and the
//! analysis tooling used to check convergence bounds and stability.

pub mod analysis;
pub mod constraints;
pub mod numerics;
pub mod optimizers;
pub mod problems;

pub use constraints::{BoxConstraint, ConstraintError, DiagScaling};
pub use numerics::{Point, PointError, SeededRng};
pub use optimizers::{
    run, Algorithm, AttackConfig, BetaSchedule, OptimizerState, RunError, StepSchedule, Trajectory,
};
pub use problems::{Evaluation, GradientOracle, ProblemError};
