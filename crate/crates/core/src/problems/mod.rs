//! Gradient oracles: analytic objectives, counterexample fixtures, and tiny
//! classifiers wrapped as attack objectives.

mod classifier;
mod data;
mod persist;

use std::path::PathBuf;

use thiserror::Error;

use crate::constraints::BoxConstraint;
use crate::numerics::{l1_norm, Point, SeededRng};

pub use classifier::{
    classifier_attack_oracle, train_classifier, Activation, ClassifierKind, ClassifierOracle,
    Dense, ToyClassifier, TrainHyper, TrainReport,
};
pub use data::{load_csv, make_blobs, save_csv, Dataset, ValueBounds};
pub use persist::{load_model, model_from_text, model_to_text, save_model, MODEL_FORMAT_VERSION};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("oracle expects dimension {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("oracle produced a non-finite {what}")]
    NonFinite { what: &'static str },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}, column {column}: value {value} outside [{lo}, {hi}]")]
    OutOfBounds {
        line: u64,
        column: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("model file corrupted: {0}")]
    Corrupt(String),
}

/// Loss value and gradient at a query point.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub gradient: Point,
}

/// A loss-and-gradient evaluator for the maximization objective `J`.
///
/// `eval` takes `&mut self` so stochastic oracles can advance their owned
/// random stream; deterministic oracles ignore the mutability.
pub trait GradientOracle {
    fn dim(&self) -> usize;

    fn description(&self) -> String;

    fn eval(&mut self, z: &Point) -> Result<Evaluation, ProblemError>;

    fn is_stochastic(&self) -> bool {
        false
    }

    /// Noise-free (or expected) objective, when available in closed form.
    fn objective(&self, _z: &Point) -> Option<f64> {
        None
    }

    /// Closed-form maximizer of [`GradientOracle::objective`] over the box.
    fn maximizer(&self, _feasible: &BoxConstraint) -> Option<Point> {
        None
    }

    /// An upper bound on `‖∇J‖₁` over the box.
    fn gradient_l1_bound(&self, _feasible: &BoxConstraint) -> Option<f64> {
        None
    }
}

fn check_dim(expected: usize, z: &Point) -> Result<(), ProblemError> {
    if z.len() != expected {
        return Err(ProblemError::DimensionMismatch {
            expected,
            actual: z.len(),
        });
    }
    Ok(())
}

/// `J(z) = −a‖z − c‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcaveQuadratic {
    target: Point,
    scale: f64,
}

impl ConcaveQuadratic {
    pub fn new(target: Point, scale: f64) -> Result<Self, ProblemError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(ProblemError::InvalidParameter(format!(
                "quadratic scale must be positive, got {scale}"
            )));
        }
        if !target.is_finite() {
            return Err(ProblemError::NonFinite { what: "target" });
        }
        Ok(Self { target, scale })
    }

    pub fn target(&self) -> &Point {
        &self.target
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    fn value(&self, z: &Point) -> f64 {
        let diff = z.sub(&self.target);
        -self.scale * diff.dot(&diff)
    }
}

pub fn quadratic_oracle(target: Point, scale: f64) -> Result<ConcaveQuadratic, ProblemError> {
    ConcaveQuadratic::new(target, scale)
}

impl GradientOracle for ConcaveQuadratic {
    fn dim(&self) -> usize {
        self.target.len()
    }

    fn description(&self) -> String {
        format!("concave quadratic (dim {}, a = {})", self.dim(), self.scale)
    }

    fn eval(&mut self, z: &Point) -> Result<Evaluation, ProblemError> {
        check_dim(self.dim(), z)?;
        let gradient = z.zip_map(&self.target, |zi, ci| -2.0 * self.scale * (zi - ci));
        Ok(Evaluation {
            loss: self.value(z),
            gradient,
        })
    }

    fn objective(&self, z: &Point) -> Option<f64> {
        Some(self.value(z))
    }

    fn maximizer(&self, feasible: &BoxConstraint) -> Option<Point> {
        feasible.clip(&self.target).ok()
    }

    fn gradient_l1_bound(&self, feasible: &BoxConstraint) -> Option<f64> {
        let sum: f64 = (0..self.dim())
            .map(|i| {
                let c = self.target[i];
                (feasible.lower(i) - c).abs().max((feasible.upper(i) - c).abs())
            })
            .sum();
        Some(2.0 * self.scale * sum)
    }
}

/// Parameters of [`random_quadratic_instance`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadraticSpec {
    pub dim: usize,
    /// Box radius `ε`.
    pub radius: f64,
    /// Half-width of the uniform offset of the target from the box centre.
    pub target_spread: f64,
    pub scale: f64,
}

impl Default for QuadraticSpec {
    fn default() -> Self {
        Self {
            dim: 10,
            radius: 0.1,
            target_spread: 0.2,
            scale: 1.0,
        }
    }
}

/// A concave quadratic on an ε-box inside `[0, 1]^dim`: centre uniform in
/// `[0.3, 0.7]`, target offset uniform in `±target_spread`, so targets fall
/// both inside and outside the box.
pub fn random_quadratic_instance(
    rng: &mut SeededRng,
    spec: &QuadraticSpec,
) -> Result<(ConcaveQuadratic, BoxConstraint), ProblemError> {
    if spec.dim == 0 {
        return Err(ProblemError::InvalidParameter("dim must be >= 1".into()));
    }
    let center = Point::new((0..spec.dim).map(|_| rng.uniform(0.3, 0.7)).collect());
    let target = center.map(|c| c + rng.uniform(-spec.target_spread, spec.target_spread));
    let feasible = BoxConstraint::new(center, spec.radius, 0.0, 1.0)
        .map_err(|e| ProblemError::InvalidParameter(e.to_string()))?;
    Ok((ConcaveQuadratic::new(target, spec.scale)?, feasible))
}

/// `J(z) = ⟨w, z⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearObjective {
    weights: Point,
}

impl LinearObjective {
    pub fn new(weights: Point) -> Self {
        Self { weights }
    }
}

impl GradientOracle for LinearObjective {
    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn description(&self) -> String {
        format!("linear objective (dim {})", self.dim())
    }

    fn eval(&mut self, z: &Point) -> Result<Evaluation, ProblemError> {
        check_dim(self.dim(), z)?;
        Ok(Evaluation {
            loss: self.weights.dot(z),
            gradient: z.like(self.weights.as_slice().to_vec()),
        })
    }

    fn objective(&self, z: &Point) -> Option<f64> {
        Some(self.weights.dot(z))
    }

    fn maximizer(&self, feasible: &BoxConstraint) -> Option<Point> {
        Some(Point::new(
            (0..self.dim())
                .map(|i| {
                    if self.weights[i] > 0.0 {
                        feasible.upper(i)
                    } else if self.weights[i] < 0.0 {
                        feasible.lower(i)
                    } else {
                        feasible.center()[i]
                    }
                })
                .collect(),
        ))
    }

    fn gradient_l1_bound(&self, _feasible: &BoxConstraint) -> Option<f64> {
        Some(l1_norm(&self.weights))
    }
}

/// What the sign-descent oscillation fixture is expected to show.
#[derive(Debug, Clone, PartialEq)]
pub struct OscillationReport {
    /// Fixed I-FGSM step.
    pub step: f64,
    /// The two points I-FGSM alternates between once it reaches the target.
    pub cycle: [f64; 2],
    /// `J* − J(x_T)` at either cycle point.
    pub terminal_suboptimality: f64,
    /// Iteration budget at which MDCS-MI must beat `terminal_suboptimality`.
    pub mdcs_iters: usize,
}

pub const OSCILLATION_TARGET: f64 = 0.35;

/// 1-D quadratic `J(z) = −(z − 0.35)²` started at 0 with radius 1.
///
/// I-FGSM with the fixed step 0.1 walks 0.1, 0.2, 0.3, 0.4 and then
/// alternates between 0.3 and 0.4 forever.
pub fn sign_oscillation_fixture() -> (ConcaveQuadratic, BoxConstraint, OscillationReport) {
    let oracle = ConcaveQuadratic::new(Point::new(vec![OSCILLATION_TARGET]), 1.0)
        .expect("fixture parameters are valid");
    let feasible = BoxConstraint::new(Point::new(vec![0.0]), 1.0, -10.0, 10.0)
        .expect("fixture parameters are valid");
    let report = OscillationReport {
        step: 0.1,
        cycle: [0.3, 0.4],
        terminal_suboptimality: 0.0025,
        mdcs_iters: 50,
    };
    (oracle, feasible, report)
}

/// Stochastic online linear objective on `[-1, 1]`: each query returns
/// gradient `+C` with probability `p` and `−1` otherwise.
///
/// The expected objective `(pC − (1 − p))·z` is maximized at `+1`, yet Adam
/// with `β2 = 1/(1 + C²)` drifts the wrong way because the rare large
/// gradient is forgotten by the second-moment average.
#[derive(Debug, Clone)]
pub struct ReddiCounterexample {
    big: f64,
    prob: f64,
    rng: SeededRng,
}

impl ReddiCounterexample {
    pub fn new(big: f64, prob: f64, rng: SeededRng) -> Result<Self, ProblemError> {
        if !(big > 2.0 && big.is_finite()) {
            return Err(ProblemError::InvalidParameter(format!(
                "counterexample needs C > 2, got {big}"
            )));
        }
        if !(prob > 0.0 && prob < 1.0) {
            return Err(ProblemError::InvalidParameter(format!(
                "counterexample needs 0 < p < 1, got {prob}"
            )));
        }
        if !(prob * big > 1.0 - prob) {
            return Err(ProblemError::InvalidParameter(format!(
                "expected gradient pC - (1 - p) = {} must be positive",
                prob * big - (1.0 - prob)
            )));
        }
        Ok(Self { big, prob, rng })
    }

    pub fn expected_gradient(&self) -> f64 {
        self.prob * self.big - (1.0 - self.prob)
    }

    /// The default box for this fixture: `[-1, 1]` centred at 0.
    pub fn feasible_set() -> BoxConstraint {
        BoxConstraint::new(Point::new(vec![0.0]), 1.0, -1.0, 1.0).expect("valid box")
    }
}

pub fn reddi_counterexample(
    big: f64,
    prob: f64,
    rng: SeededRng,
) -> Result<ReddiCounterexample, ProblemError> {
    ReddiCounterexample::new(big, prob, rng)
}

impl GradientOracle for ReddiCounterexample {
    fn dim(&self) -> usize {
        1
    }

    fn description(&self) -> String {
        format!("online counterexample (C = {}, p = {})", self.big, self.prob)
    }

    fn eval(&mut self, z: &Point) -> Result<Evaluation, ProblemError> {
        check_dim(1, z)?;
        let slope = if self.rng.bernoulli(self.prob) {
            self.big
        } else {
            -1.0
        };
        Ok(Evaluation {
            loss: slope * z[0],
            gradient: z.like(vec![slope]),
        })
    }

    fn is_stochastic(&self) -> bool {
        true
    }

    fn objective(&self, z: &Point) -> Option<f64> {
        Some(self.expected_gradient() * z[0])
    }

    fn maximizer(&self, feasible: &BoxConstraint) -> Option<Point> {
        Some(Point::new(vec![feasible.upper(0)]))
    }

    fn gradient_l1_bound(&self, _feasible: &BoxConstraint) -> Option<f64> {
        Some(self.big)
    }
}

/// Central finite-difference gradient of a deterministic oracle's loss.
pub fn finite_difference_gradient(
    oracle: &mut dyn GradientOracle,
    z: &Point,
    h: f64,
) -> Result<Point, ProblemError> {
    let mut out = vec![0.0; z.len()];
    let mut probe = z.clone();
    for (i, slot) in out.iter_mut().enumerate() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = oracle.eval(&probe)?.loss;
        probe[i] = orig - h;
        let down = oracle.eval(&probe)?.loss;
        probe[i] = orig;
        *slot = (up - down) / (2.0 * h);
    }
    Ok(z.like(out))
}

/// Largest [`relative_error`] between the oracle gradient and central
/// differences over `points` uniform draws from the box.
pub fn max_gradient_error(
    oracle: &mut dyn GradientOracle,
    feasible: &BoxConstraint,
    rng: &mut SeededRng,
    points: usize,
    h: f64,
) -> Result<f64, ProblemError> {
    let mut worst = 0.0f64;
    for _ in 0..points {
        let z = Point::new(
            (0..feasible.dim())
                .map(|i| rng.uniform(feasible.lower(i), feasible.upper(i)))
                .collect(),
        );
        let g = oracle.eval(&z)?.gradient;
        let fd = finite_difference_gradient(oracle, &z, h)?;
        worst = worst.max(relative_error(&g, &fd));
    }
    Ok(worst)
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, zero when both vanish.
pub fn relative_error(a: &Point, b: &Point) -> f64 {
    let num = a.sub(b).l2_norm();
    let den = a.l2_norm().max(b.l2_norm());
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}
