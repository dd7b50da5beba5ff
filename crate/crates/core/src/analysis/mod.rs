//! Theorem-bound evaluation, convergence-rate fitting, stability statistics
//! and attack metrics.

mod transfer;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::BoxConstraint;
use crate::numerics::{Point, SeededRng};
use crate::optimizers::{averaged_iterate, RunError, Trajectory};
use crate::problems::{GradientOracle, ProblemError};

pub use transfer::{
    stability_sweep, AttackOutcome, StabilityPoint, TransferConfig, TransferSetup,
};

/// Fits below this are machine noise and are dropped before taking logs.
pub const RATE_FLOOR: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("invalid theorem constants: {0}")]
    InvalidConstants(String),
    #[error("oracle '{0}' has no closed-form optimum")]
    UnsupportedOracle(String),
    #[error("rate fit needs at least 5 usable points spanning 2 decades, got {usable}")]
    InsufficientData { usable: usize },
    #[error("empty example set")]
    Empty,
    #[error("batch shapes differ: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// Constants of the convergence bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremConstants {
    /// Bound on `‖∇J‖₁`.
    pub m: f64,
    /// Bound on `‖m_t‖∞`, `1 + β/(1−λ)`.
    pub m2: f64,
    /// Euclidean diameter of the feasible set.
    pub g: f64,
    pub dim: usize,
    pub gamma: f64,
    pub beta: f64,
    pub lambda: f64,
}

impl TheoremConstants {
    pub fn new(
        m: f64,
        g: f64,
        dim: usize,
        gamma: f64,
        beta: f64,
        lambda: f64,
    ) -> Result<Self, AnalysisError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !(positive(m) && positive(g) && positive(gamma) && positive(beta) && dim > 0) {
            return Err(AnalysisError::InvalidConstants(format!(
                "need M, G, gamma, beta, d > 0 (M={m}, G={g}, gamma={gamma}, beta={beta}, d={dim})"
            )));
        }
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(AnalysisError::InvalidConstants(format!(
                "lambda must be in (0, 1), got {lambda}"
            )));
        }
        Ok(Self {
            m,
            m2: 1.0 + beta / (1.0 - lambda),
            g,
            dim,
            gamma,
            beta,
            lambda,
        })
    }

    /// Constants measured on a finished run: `M̂ = max_t ‖∇J(x_t)‖₁`, `G`
    /// the exact box diameter, `γ, β, λ` from the run's configuration.
    pub fn measured(traj: &Trajectory, feasible: &BoxConstraint) -> Result<Self, AnalysisError> {
        let cfg = &traj.config;
        Self::new(
            traj.max_gradient_l1.max(f64::MIN_POSITIVE),
            feasible.diameter(),
            feasible.dim(),
            cfg.gamma,
            cfg.beta,
            cfg.lambda,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundPair {
    /// The bound as typeset, with a `T`-independent middle term.
    pub printed: f64,
    /// The middle term divided by `T`.
    pub corrected: f64,
}

/// `M·(d·M₂·G²/(2γ√T) + βG²/(2γ(1−λ)²) + 2γM₂²/√T)`, and the same with the
/// middle term divided by `T`.
pub fn theorem_bound(k: &TheoremConstants, total_iters: usize) -> BoundPair {
    let t = total_iters.max(1) as f64;
    let root = t.sqrt();
    let g2 = k.g * k.g;
    let first = k.dim as f64 * k.m2 * g2 / (2.0 * k.gamma * root);
    let middle = k.beta * g2 / (2.0 * k.gamma * (1.0 - k.lambda).powi(2));
    let last = 2.0 * k.gamma * k.m2 * k.m2 / root;
    BoundPair {
        printed: k.m * (first + middle + last),
        corrected: k.m * (first + middle / t + last),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Suboptimality {
    /// `J(x*) − J(x̄_T)` with `x̄_T` the mean of `x_1, …, x_T`.
    pub averaged: f64,
    /// `J(x*) − J(x_T)`.
    pub last: f64,
}

pub fn suboptimality(
    oracle: &dyn GradientOracle,
    feasible: &BoxConstraint,
    traj: &Trajectory,
) -> Result<Suboptimality, AnalysisError> {
    let unsupported = || AnalysisError::UnsupportedOracle(oracle.description());
    let best = oracle.maximizer(feasible).ok_or_else(unsupported)?;
    let top = oracle.objective(&best).ok_or_else(unsupported)?;
    let avg = averaged_iterate(traj)?;
    let last = traj.last_point().ok_or(RunError::EmptyTrajectory)?;
    Ok(Suboptimality {
        averaged: top - oracle.objective(&avg).ok_or_else(unsupported)?,
        last: top - oracle.objective(last).ok_or_else(unsupported)?,
    })
}

/// `subopt ≈ coefficient · T^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub exponent: f64,
    pub coefficient: f64,
    pub r_squared: f64,
    pub points_used: usize,
}

/// Least-squares line through `(ln T, ln subopt)`.
///
/// Entries at or below [`RATE_FLOOR`] are dropped; the survivors must number
/// at least five and span at least two decades of `T`.
pub fn fit_rate(subopt_by_t: &BTreeMap<usize, f64>) -> Result<RateFit, AnalysisError> {
    let pts: Vec<(f64, f64)> = subopt_by_t
        .iter()
        .filter(|(&t, &s)| t > 0 && s > RATE_FLOOR && s.is_finite())
        .map(|(&t, &s)| ((t as f64).ln(), s.ln()))
        .collect();
    let usable = pts.len();
    let span = match (pts.first(), pts.last()) {
        (Some(a), Some(b)) => b.0 - a.0,
        _ => 0.0,
    };
    if usable < 5 || span < 100f64.ln() - 1e-12 {
        return Err(AnalysisError::InsufficientData { usable });
    }
    let n = usable as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(RateFit {
        exponent: slope,
        coefficient: intercept.exp(),
        r_squared,
        points_used: usable,
    })
}

/// One budget of a convergence sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub total_iters: usize,
    pub averaged: f64,
    pub last: f64,
    pub constants: TheoremConstants,
    pub bound: BoundPair,
    pub violations: usize,
    pub feasible: bool,
}

/// Runs `cfg` from scratch for every budget and evaluates both iterate
/// notions against the bound at the measured constants.
pub fn convergence_sweep(
    oracle: &mut dyn GradientOracle,
    feasible: &BoxConstraint,
    cfg: &crate::optimizers::AttackConfig,
    t_values: &[usize],
) -> Result<Vec<ConvergenceRow>, AnalysisError> {
    let mut rows = Vec::with_capacity(t_values.len());
    for &t in t_values {
        let run_cfg = crate::optimizers::AttackConfig {
            total_iters: t,
            ..cfg.clone()
        };
        let traj = crate::optimizers::run(oracle, feasible, &run_cfg)?;
        let sub = suboptimality(oracle, feasible, &traj)?;
        let constants = TheoremConstants::measured(&traj, feasible)?;
        rows.push(ConvergenceRow {
            total_iters: t,
            averaged: sub.averaged,
            last: sub.last,
            bound: theorem_bound(&constants, t),
            constants,
            violations: traj.violations.len(),
            feasible: traj.all_feasible(feasible),
        });
    }
    Ok(rows)
}

/// Fraction of `adversarials` that `predict` assigns a class other than the
/// true label.
pub fn attack_success_rate(
    predict: impl Fn(&Point) -> usize,
    labels: &[usize],
    adversarials: &[Point],
) -> Result<f64, AnalysisError> {
    if adversarials.is_empty() {
        return Err(AnalysisError::Empty);
    }
    if labels.len() != adversarials.len() {
        return Err(AnalysisError::ShapeMismatch(format!(
            "{} labels for {} adversarials",
            labels.len(),
            adversarials.len()
        )));
    }
    let fooled = adversarials
        .iter()
        .zip(labels)
        .filter(|(x, &y)| predict(x) != y)
        .count();
    Ok(fooled as f64 / adversarials.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    Two,
    Inf,
}

fn check_batches(clean: &[Point], adversarial: &[Point]) -> Result<(), AnalysisError> {
    if clean.is_empty() {
        return Err(AnalysisError::Empty);
    }
    if clean.len() != adversarial.len() {
        return Err(AnalysisError::ShapeMismatch(format!(
            "{} clean vs {} adversarial",
            clean.len(),
            adversarial.len()
        )));
    }
    for (i, (a, b)) in clean.iter().zip(adversarial).enumerate() {
        if a.len() != b.len() {
            return Err(AnalysisError::ShapeMismatch(format!(
                "pair {i}: {} vs {}",
                a.len(),
                b.len()
            )));
        }
    }
    Ok(())
}

/// Average distortion `mean_i ‖x_i^adv − x_i‖_p`.
pub fn ald(clean: &[Point], adversarial: &[Point], p: Norm) -> Result<f64, AnalysisError> {
    check_batches(clean, adversarial)?;
    let total: f64 = clean
        .iter()
        .zip(adversarial)
        .map(|(a, b)| {
            let diff = b.sub(a);
            match p {
                Norm::Two => diff.l2_norm(),
                Norm::Inf => diff.linf_norm(),
            }
        })
        .sum();
    Ok(total / clean.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Psnr {
    Finite(f64),
    /// The batches are identical.
    Infinite,
}

impl Psnr {
    pub fn value(self) -> f64 {
        match self {
            Psnr::Finite(v) => v,
            Psnr::Infinite => f64::INFINITY,
        }
    }
}

/// `10·log₁₀(peak²/MSE)` with the MSE pooled over every entry of the batch.
pub fn psnr(clean: &[Point], adversarial: &[Point], peak: f64) -> Result<Psnr, AnalysisError> {
    check_batches(clean, adversarial)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (a, b) in clean.iter().zip(adversarial) {
        sum += b.sub(a).iter().map(|v| v * v).sum::<f64>();
        count += a.len();
    }
    if count == 0 || sum == 0.0 {
        return Ok(Psnr::Infinite);
    }
    let mse = sum / count as f64;
    Ok(Psnr::Finite(10.0 * (peak * peak / mse).log10()))
}

/// Drawdown statistics of an ASR-vs-budget curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub asr_by_t: BTreeMap<usize, f64>,
    /// Peak of the largest drop; the curve maximum when there is no drop.
    pub peak: f64,
    /// Lowest later value after `peak`.
    pub trough: f64,
    /// `peak − trough`.
    pub max_drawdown: f64,
}

impl StabilityReport {
    pub fn from_curve(asr_by_t: BTreeMap<usize, f64>) -> Result<Self, AnalysisError> {
        let values: Vec<f64> = asr_by_t.values().copied().collect();
        let Some(&first) = values.first() else {
            return Err(AnalysisError::Empty);
        };
        let mut running_peak = first;
        let (mut peak, mut trough, mut drawdown) = (first, first, 0.0);
        for &v in &values {
            running_peak = running_peak.max(v);
            if running_peak - v > drawdown {
                drawdown = running_peak - v;
                peak = running_peak;
                trough = v;
            }
        }
        if drawdown == 0.0 {
            let top = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            peak = top;
            trough = top;
        }
        Ok(Self {
            asr_by_t,
            peak,
            trough,
            max_drawdown: drawdown,
        })
    }
}

/// Counts random secant pairs `(a, b)` in the box where the midpoint loss
/// falls below the chord by more than `tol`.
pub fn concavity_violations(
    oracle: &mut dyn GradientOracle,
    feasible: &BoxConstraint,
    rng: &mut SeededRng,
    pairs: usize,
    tol: f64,
) -> Result<usize, AnalysisError> {
    let draw = |rng: &mut SeededRng| {
        Point::new(
            (0..feasible.dim())
                .map(|i| rng.uniform(feasible.lower(i), feasible.upper(i)))
                .collect(),
        )
    };
    let mut bad = 0;
    for _ in 0..pairs {
        let a = draw(rng);
        let b = draw(rng);
        let mid = a.add(&b).scale(0.5);
        let ja = oracle.eval(&a)?.loss;
        let jb = oracle.eval(&b)?.loss;
        let jm = oracle.eval(&mid)?.loss;
        if jm < 0.5 * (ja + jb) - tol {
            bad += 1;
        }
    }
    Ok(bad)
}
