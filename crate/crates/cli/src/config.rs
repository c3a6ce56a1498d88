//! Run configuration. A TOML document holds an optional top-level `seed` and
//! one optional table per subcommand; missing keys take their defaults and
//! unknown keys are rejected.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEFAULT_SEED: u64 = 20240601;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub calibrate: CalibrateConfig,
    pub binary_sums: BinarySumsConfig,
    pub equilibrium: EquilibriumConfig,
    pub multi_round: MultiRoundConfig,
    pub sender: SenderConfig,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        // toml's error display carries the line and column of the offending key
        toml::from_str(text).map_err(|e| anyhow::anyhow!("{e}"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateConfig {
    pub epsilons: Vec<f64>,
    pub delta: f64,
    pub sample_rate_data: f64,
    pub sample_rate_agents: f64,
    pub num_agents: u64,
    pub clip_norm: f64,
    pub episode_lens: Vec<u32>,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![0.01, 0.1, 1.0],
            delta: 1e-4,
            sample_rate_data: 1e-8,
            sample_rate_agents: 0.5,
            num_agents: 10_000_000_000_000,
            clip_norm: 1.0,
            episode_lens: vec![1, 40],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BinarySumsConfig {
    pub bits: Vec<u8>,
    /// Common flip probability of every sender, one run per entry.
    pub flip_probs: Vec<f64>,
    pub trials: u64,
    /// Monte-Carlo estimates must lie within this many standard errors of
    /// the exact expectation.
    pub agreement_z: f64,
}

impl Default for BinarySumsConfig {
    fn default() -> Self {
        Self {
            bits: vec![1, 0, 1, 1, 0],
            flip_probs: vec![0.5, 0.0],
            trials: 1_000_000,
            agreement_z: 4.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GameKind {
    BinarySums,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquilibriumConfig {
    pub game: GameKind,
    pub benefit_weight: [f64; 2],
    pub privacy_weight: [f64; 2],
    pub starts: usize,
    pub max_iters: usize,
    pub tol: f64,
    /// Grid used by the potential-game check.
    pub potential_grid_step: f64,
    pub potential_tol: f64,
}

impl Default for EquilibriumConfig {
    fn default() -> Self {
        Self {
            game: GameKind::BinarySums,
            benefit_weight: [2.0, 2.0],
            privacy_weight: [1.0, 1.0],
            starts: 10,
            max_iters: 200,
            tol: 1e-9,
            potential_grid_step: 0.05,
            potential_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiRoundConfig {
    pub horizon: u32,
    pub discount: f64,
    pub alpha: f64,
    pub beta: f64,
    pub initial_savings: Vec<f64>,
    pub spend_grid: Vec<f64>,
    pub privacy_grid: Vec<f64>,
    /// Per-agent multiplier on the team term; anything other than all ones
    /// gives a perturbed, non-potential game.
    pub team_scale: Option<Vec<f64>>,
    pub max_sweeps: usize,
    pub tol: f64,
    pub enumeration_budget: u64,
    /// Also emit the messages received when spends go through randomized
    /// response at the chosen privacy levels.
    pub messages: bool,
}

impl Default for MultiRoundConfig {
    fn default() -> Self {
        Self {
            horizon: 2,
            discount: 1.0,
            alpha: 0.1,
            beta: 0.2,
            initial_savings: vec![1.0, 1.0],
            spend_grid: vec![0.0, 1.0],
            privacy_grid: vec![0.0, 0.5],
            team_scale: None,
            max_sweeps: 50,
            tol: 1e-12,
            enumeration_budget: privcomm::multi_round::DEFAULT_ENUMERATION_BUDGET,
            messages: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SenderConfig {
    pub dim: usize,
    /// Defaults to the origin.
    pub target_mean: Option<Vec<f64>>,
    /// Diagonal target covariance; defaults to the identity.
    pub target_variances: Option<Vec<f64>>,
    /// Full target covariance, row by row. Overrides `target_variances`.
    pub target_cov: Option<Vec<Vec<f64>>>,
    pub noise_vars: Vec<f64>,
    pub gd_steps: usize,
    pub learning_rate: f64,
    /// Allowed gap between the gradient-descent and closed-form optima.
    pub gd_tol: f64,
}

impl Default for SenderConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            target_mean: None,
            target_variances: None,
            target_cov: None,
            noise_vars: vec![0.0, 0.1, 0.5, 1.0],
            gd_steps: 20_000,
            learning_rate: 0.1,
            gd_tol: 1e-6,
        }
    }
}

/// Hex SHA-256 of the JSON encoding of the effective configuration.
pub fn config_hash<T: Serialize>(command: &str, seed: u64, section: &T) -> Result<String> {
    let doc = serde_json::json!({ "command": command, "seed": seed, "config": section });
    let digest = Sha256::digest(serde_json::to_vec(&doc)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
