//! Strict TOML run configuration. Every table rejects unknown keys.

use std::path::Path;

use mdcs_core::analysis::TransferConfig;
use mdcs_core::optimizers::{Algorithm, AttackConfig, StepSchedule};
use mdcs_core::problems::QuadraticSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    pub format: Format,
    pub converge: ConvergeConfig,
    pub transfer: TransferConfig,
    pub stability: StabilityConfig,
    pub stepdyn: StepdynConfig,
    pub ablate: AblateConfig,
    pub counterexample: CounterexampleConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seeds: (0..10).collect(),
            format: Format::Csv,
            converge: ConvergeConfig::default(),
            transfer: TransferConfig::default(),
            stability: StabilityConfig::default(),
            stepdyn: StepdynConfig::default(),
            ablate: AblateConfig::default(),
            counterexample: CounterexampleConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergeConfig {
    pub quadratic: QuadraticSpec,
    pub t_values: Vec<usize>,
    pub attack: AttackConfig,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        Self {
            quadratic: QuadraticSpec::default(),
            t_values: vec![16, 64, 256, 1024, 4096],
            attack: AttackConfig {
                epsilon: 0.1,
                schedule: StepSchedule::Theorem,
                ..AttackConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityConfig {
    pub algorithms: Vec<Algorithm>,
    /// Budgets; the transfer setup's list when empty.
    pub t_values: Vec<usize>,
    pub attack: AttackConfig,
    pub save_models: bool,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            algorithms: vec![Algorithm::IFgsm, Algorithm::MiFgsm, Algorithm::MdcsMi],
            t_values: Vec::new(),
            attack: AttackConfig::default(),
            save_models: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepdynConfig {
    pub algorithms: Vec<Algorithm>,
    /// Which evaluation example of the transfer setup to attack.
    pub example: usize,
    pub attack: AttackConfig,
    /// Schedule for the sign baselines; `attack.schedule` drives the rest.
    pub baseline_schedule: StepSchedule,
}

impl Default for StepdynConfig {
    fn default() -> Self {
        Self {
            algorithms: vec![Algorithm::IFgsm, Algorithm::MiFgsm, Algorithm::MdcsMi],
            example: 0,
            attack: AttackConfig {
                total_iters: 20,
                schedule: StepSchedule::Theorem,
                ..AttackConfig::default()
            },
            baseline_schedule: StepSchedule::Practice,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblateSweep {
    Gamma,
    Epsilon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    pub sweep: AblateSweep,
    pub gammas: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub attack: AttackConfig,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            sweep: AblateSweep::Gamma,
            gammas: vec![0.25, 0.5, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0, 10.0],
            epsilons: vec![0.02, 0.04, 0.06, 0.08, 0.1, 0.12, 0.16],
            attack: AttackConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fixture {
    Reddi,
    SignOscillation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CounterexampleConfig {
    pub fixture: Fixture,
    pub algorithms: Vec<Algorithm>,
    /// Large gradient `C` of the online fixture.
    pub big: f64,
    /// Probability of the large gradient.
    pub prob: f64,
    pub total_iters: usize,
    pub gamma: f64,
    /// Every this many steps a trajectory row is written.
    pub trajectory_stride: usize,
}

impl Default for CounterexampleConfig {
    fn default() -> Self {
        Self {
            fixture: Fixture::Reddi,
            algorithms: vec![Algorithm::Adam, Algorithm::AmsGrad, Algorithm::MdcsMi],
            big: 3.0,
            prob: 0.4,
            total_iters: 10_000,
            gamma: 0.5,
            trajectory_stride: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub algorithms: Vec<Algorithm>,
    pub dims: Vec<usize>,
    pub total_iters: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            algorithms: Algorithm::ALL.to_vec(),
            dims: vec![10, 100, 1000],
            total_iters: 100,
        }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(canonical.as_bytes())[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError("seeds must not be empty".into()));
        }
        for (name, attack) in [
            ("converge.attack", &self.converge.attack),
            ("stability.attack", &self.stability.attack),
            ("stepdyn.attack", &self.stepdyn.attack),
            ("ablate.attack", &self.ablate.attack),
        ] {
            attack
                .validate()
                .map_err(|e| ConfigError(format!("{name}: {e}")))?;
        }
        if !(self.transfer.epsilon > 0.0) {
            return Err(ConfigError("transfer.epsilon must be > 0".into()));
        }
        Ok(())
    }
}
