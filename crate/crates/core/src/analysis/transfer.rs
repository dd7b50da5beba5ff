//! Toy black-box transfer setup: a surrogate and a target network trained
//! on the same Gaussian blobs from different initializations.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{attack_success_rate, AnalysisError, StabilityReport};
use crate::constraints::BoxConstraint;
use crate::numerics::{Point, SeededRng};
use crate::optimizers::{run, AttackConfig};
use crate::problems::{
    classifier_attack_oracle, make_blobs, train_classifier, ClassifierKind, Dataset,
    ProblemError, ToyClassifier, TrainHyper, TrainReport,
};

const DATA_STREAM: u64 = 0x6461_7461;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferConfig {
    pub dim: usize,
    pub n_classes: usize,
    pub train_per_class: usize,
    pub eval_per_class: usize,
    /// Smallest centre distance over the cluster standard deviation.
    pub separation: f64,
    /// L∞ budget in units of the `[0, 1]` value range.
    pub epsilon: f64,
    pub t_values: Vec<usize>,
    pub surrogate: TrainHyper,
    pub target: TrainHyper,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            dim: 20,
            n_classes: 3,
            train_per_class: 100,
            eval_per_class: 40,
            separation: 4.0,
            epsilon: 0.1,
            t_values: vec![2, 5, 10, 20, 50, 100],
            surrogate: TrainHyper {
                hidden: 32,
                ..TrainHyper::default()
            },
            target: TrainHyper {
                hidden: 48,
                ..TrainHyper::default()
            },
        }
    }
}

/// Trained models plus the evaluation examples the target classifies
/// correctly.
#[derive(Debug, Clone)]
pub struct TransferSetup {
    pub config: TransferConfig,
    pub seed: u64,
    pub surrogate: Arc<ToyClassifier>,
    pub target: Arc<ToyClassifier>,
    pub surrogate_report: TrainReport,
    pub target_report: TrainReport,
    pub clean: Vec<Point>,
    pub labels: Vec<usize>,
    pub train: Dataset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    /// Final iterates, one per evaluation example.
    pub adversarials: Vec<Point>,
    pub white_box_asr: f64,
    pub transfer_asr: f64,
    /// Mean surrogate loss at the adversarials.
    pub white_box_loss: f64,
    /// Recorded iterates that left their box.
    pub infeasible_points: usize,
    pub recorded_points: usize,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityPoint {
    pub total_iters: usize,
    pub white_box_asr: f64,
    pub transfer_asr: f64,
    pub white_box_loss: f64,
    pub infeasible_points: usize,
    pub recorded_points: usize,
    pub violations: usize,
}

fn mix(seed: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ salt
}

impl TransferSetup {
    pub fn build(config: &TransferConfig, seed: u64) -> Result<Self, ProblemError> {
        if config.train_per_class == 0 || config.eval_per_class == 0 {
            return Err(ProblemError::EmptyDataset);
        }
        let mut rng = SeededRng::new(seed, DATA_STREAM);
        let all = make_blobs(
            &mut rng,
            config.train_per_class + config.eval_per_class,
            config.n_classes,
            config.dim,
            config.separation,
        )?;
        let cut = config.train_per_class * config.n_classes;
        let train = Dataset {
            inputs: all.inputs[..cut].to_vec(),
            labels: all.labels[..cut].to_vec(),
            n_classes: config.n_classes,
        };
        let surrogate_hyper = TrainHyper {
            seed: mix(seed, config.surrogate.seed ^ 1),
            ..config.surrogate.clone()
        };
        let target_hyper = TrainHyper {
            seed: mix(seed, config.target.seed ^ 2),
            ..config.target.clone()
        };
        let (surrogate, surrogate_report) =
            train_classifier(ClassifierKind::Mlp, &train, &surrogate_hyper)?;
        let (target, target_report) = train_classifier(ClassifierKind::Mlp, &train, &target_hyper)?;
        let (clean, labels): (Vec<Point>, Vec<usize>) = all.inputs[cut..]
            .iter()
            .zip(&all.labels[cut..])
            .filter(|(x, &y)| target.predict(x) == y)
            .map(|(x, &y)| (x.clone(), y))
            .unzip();
        if clean.is_empty() {
            return Err(ProblemError::EmptyDataset);
        }
        Ok(Self {
            config: config.clone(),
            seed,
            surrogate: Arc::new(surrogate),
            target: Arc::new(target),
            surrogate_report,
            target_report,
            clean,
            labels,
            train,
        })
    }

    /// Attacks every evaluation example on the surrogate with `cfg`
    /// (its `epsilon` is replaced by the setup's budget) and scores the
    /// final iterates on both models.
    pub fn attack(&self, cfg: &AttackConfig) -> Result<AttackOutcome, AnalysisError> {
        let cfg = AttackConfig {
            epsilon: self.config.epsilon,
            ..cfg.clone()
        };
        let mut adversarials = Vec::with_capacity(self.clean.len());
        let mut loss = 0.0;
        let mut infeasible_points = 0;
        let mut recorded_points = 0;
        let mut violations = 0;
        for (x, &y) in self.clean.iter().zip(&self.labels) {
            let feasible = BoxConstraint::new(x.clone(), self.config.epsilon, 0.0, 1.0)
                .map_err(|e| ProblemError::InvalidParameter(e.to_string()))?;
            let mut oracle = classifier_attack_oracle(Arc::clone(&self.surrogate), y)?;
            let traj = run(&mut oracle, &feasible, &cfg)?;
            infeasible_points += traj.points.iter().filter(|p| !feasible.contains(p)).count();
            recorded_points += traj.points.len();
            violations += traj.violations.len();
            loss += traj.losses.last().copied().unwrap_or(f64::NAN);
            adversarials.push(traj.points.last().cloned().unwrap_or_else(|| x.clone()));
        }
        let white_box_asr =
            attack_success_rate(|p| self.surrogate.predict(p), &self.labels, &adversarials)?;
        let transfer_asr =
            attack_success_rate(|p| self.target.predict(p), &self.labels, &adversarials)?;
        Ok(AttackOutcome {
            white_box_asr,
            transfer_asr,
            white_box_loss: loss / self.clean.len() as f64,
            adversarials,
            infeasible_points,
            recorded_points,
            violations,
        })
    }
}

/// Reruns the attack from scratch for every budget in `t_values` and
/// summarizes the transfer-ASR curve.
pub fn stability_sweep(
    setup: &TransferSetup,
    cfg: &AttackConfig,
    t_values: &[usize],
) -> Result<(Vec<StabilityPoint>, StabilityReport), AnalysisError> {
    let mut points = Vec::with_capacity(t_values.len());
    let mut curve = BTreeMap::new();
    for &t in t_values {
        let outcome = setup.attack(&AttackConfig {
            total_iters: t,
            ..cfg.clone()
        })?;
        curve.insert(t, outcome.transfer_asr);
        points.push(StabilityPoint {
            total_iters: t,
            white_box_asr: outcome.white_box_asr,
            transfer_asr: outcome.transfer_asr,
            white_box_loss: outcome.white_box_loss,
            infeasible_points: outcome.infeasible_points,
            recorded_points: outcome.recorded_points,
            violations: outcome.violations,
        });
    }
    Ok((points, StabilityReport::from_curve(curve)?))
}
