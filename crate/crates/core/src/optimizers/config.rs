use serde::{Deserialize, Serialize};

use super::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Fgsm,
    #[serde(rename = "i_fgsm")]
    IFgsm,
    Pgd,
    #[serde(rename = "mi_fgsm")]
    MiFgsm,
    MdcsMi,
    Adam,
    #[serde(rename = "amsgrad")]
    AmsGrad,
    MdcsMef,
    MdcsOps,
}

impl Algorithm {
    pub const ALL: [Algorithm; 9] = [
        Algorithm::Fgsm,
        Algorithm::IFgsm,
        Algorithm::Pgd,
        Algorithm::MiFgsm,
        Algorithm::MdcsMi,
        Algorithm::Adam,
        Algorithm::AmsGrad,
        Algorithm::MdcsMef,
        Algorithm::MdcsOps,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Fgsm => "fgsm",
            Algorithm::IFgsm => "i_fgsm",
            Algorithm::Pgd => "pgd",
            Algorithm::MiFgsm => "mi_fgsm",
            Algorithm::MdcsMi => "mdcs_mi",
            Algorithm::Adam => "adam",
            Algorithm::AmsGrad => "amsgrad",
            Algorithm::MdcsMef => "mdcs_mef",
            Algorithm::MdcsOps => "mdcs_ops",
        }
    }

    /// Plain sign-based attacks, whose practice step ignores `gamma`.
    pub fn is_sign_baseline(self) -> bool {
        matches!(
            self,
            Algorithm::Fgsm | Algorithm::IFgsm | Algorithm::Pgd | Algorithm::MiFgsm
        )
    }

    pub fn is_mdcs(self) -> bool {
        matches!(
            self,
            Algorithm::MdcsMi | Algorithm::MdcsMef | Algorithm::MdcsOps
        )
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown algorithm '{s}'"))
    }
}

/// How the step size `α_t` evolves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    /// `α_t = ε·γ/T` (sign baselines use `γ = 1`).
    Practice,
    /// `α_t = γ/√t`.
    Theorem,
    /// `α_t = α` regardless of `t` and `T`.
    Fixed(f64),
}

/// Momentum weight `β_t` of the MDCS-MI recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSchedule {
    /// `β_t = β·λ^(t−1)`.
    Geometric,
    /// `β_t = μ`, the MI-FGSM decay factor.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MefParams {
    pub n_samples: usize,
    /// Offset along the sign of each sample's inner momentum.
    pub xi: f64,
    /// Half-width of the L∞ ball the samples are drawn from.
    pub explore_radius: f64,
    pub mu_inner: f64,
    pub mu_outer: f64,
}

impl Default for MefParams {
    fn default() -> Self {
        Self {
            n_samples: 4,
            xi: 0.0,
            explore_radius: 0.0,
            mu_inner: 0.0,
            mu_outer: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpsParams {
    /// Operators drawn per perturbation sample.
    pub n_ops: usize,
    /// Random perturbations drawn per iteration.
    pub n_perturb: usize,
    /// Half-width of the uniform perturbation `δ`.
    pub perturb_radius: f64,
}

impl Default for OpsParams {
    fn default() -> Self {
        Self {
            n_ops: 2,
            n_perturb: 2,
            perturb_radius: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub algorithm: Algorithm,
    pub epsilon: f64,
    pub total_iters: usize,
    pub gamma: f64,
    pub beta: f64,
    pub lambda: f64,
    pub mu: f64,
    pub schedule: StepSchedule,
    pub beta_schedule: BetaSchedule,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// Floor applied to second moments before taking `V^{-1/2}`.
    pub adam_floor: f64,
    /// Coordinate whose effective step-size is recorded every iteration.
    pub tracked_coordinate: usize,
    pub seed: u64,
    pub mef: MefParams,
    pub ops: OpsParams,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::MdcsMi,
            epsilon: 16.0 / 255.0,
            total_iters: 10,
            gamma: 2.0,
            beta: 0.999,
            lambda: 0.999,
            mu: 1.0,
            schedule: StepSchedule::Practice,
            beta_schedule: BetaSchedule::Geometric,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_floor: 1e-12,
            tracked_coordinate: 0,
            seed: 0,
            mef: MefParams::default(),
            ops: OpsParams::default(),
        }
    }
}

fn invalid(msg: String) -> RunError {
    RunError::InvalidConfig(msg)
}

impl AttackConfig {
    pub fn with_algorithm(&self, algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            ..self.clone()
        }
    }

    /// Checks every parameter range. `total_iters = 0` is accepted and means
    /// an empty run.
    pub fn validate(&self) -> Result<(), RunError> {
        let finite_pos = |v: f64| v > 0.0 && v.is_finite();
        if !finite_pos(self.epsilon) {
            return Err(invalid(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !finite_pos(self.gamma) {
            return Err(invalid(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(invalid(format!("beta must be in (0, 1], got {}", self.beta)));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(invalid(format!("lambda must be in (0, 1), got {}", self.lambda)));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(invalid(format!("mu must be >= 0, got {}", self.mu)));
        }
        if let StepSchedule::Fixed(a) = self.schedule {
            if !finite_pos(a) {
                return Err(invalid(format!("fixed step must be > 0, got {a}")));
            }
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(invalid(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !finite_pos(self.adam_floor) {
            return Err(invalid(format!("adam_floor must be > 0, got {}", self.adam_floor)));
        }
        let m = &self.mef;
        if m.n_samples == 0 {
            return Err(invalid("mef.n_samples must be >= 1".into()));
        }
        if !(m.xi >= 0.0 && m.explore_radius >= 0.0 && m.mu_inner >= 0.0 && m.mu_outer >= 0.0) {
            return Err(invalid("mef radii and decay factors must be >= 0".into()));
        }
        if !(self.ops.perturb_radius >= 0.0) {
            return Err(invalid("ops.perturb_radius must be >= 0".into()));
        }
        Ok(())
    }

    /// `α_t` for 1-based step `t`.
    pub fn step_size(&self, t: usize) -> f64 {
        match self.schedule {
            StepSchedule::Practice => {
                let gamma = if self.algorithm.is_sign_baseline() {
                    1.0
                } else {
                    self.gamma
                };
                self.epsilon * gamma / self.total_iters.max(1) as f64
            }
            StepSchedule::Theorem => self.gamma / (t.max(1) as f64).sqrt(),
            StepSchedule::Fixed(a) => a,
        }
    }

    /// `β_t` for 1-based step `t`.
    pub fn momentum_weight(&self, t: usize) -> f64 {
        match self.beta_schedule {
            BetaSchedule::Geometric => self.beta * self.lambda.powi(t.max(1) as i32 - 1),
            BetaSchedule::Constant => self.mu,
        }
    }

    /// Bound on `‖m_{t+1}‖∞` implied by the momentum schedule, if finite.
    pub fn momentum_bound(&self) -> Option<f64> {
        match self.beta_schedule {
            BetaSchedule::Geometric => Some(1.0 + self.beta / (1.0 - self.lambda)),
            BetaSchedule::Constant if self.mu < 1.0 => Some(1.0 / (1.0 - self.mu)),
            BetaSchedule::Constant => None,
        }
    }
}
