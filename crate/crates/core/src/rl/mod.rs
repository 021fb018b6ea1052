//! Hybrid short/long reinforcement learning: answer verification, the
//! composite reward, group-relative advantages and a tabular toy trainer.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod grpo;
pub mod prob;
pub mod reward;
pub mod toy;
pub mod verify;

pub use grpo::{dpo_loss, grpo_advantages, sample_mode, RolloutGroup};
pub use prob::{prob_reward, ContextCopyModel, TokenModel};
pub use reward::{
    score_group, total_reward, HeuristicScorer, PreferenceScorer, RewardBreakdown, RewardContext,
};
pub use toy::{train_toy, ToyPolicy, ToyTask, TrainConfig, TrainingTrace};
pub use verify::{route_verifier, rule_reward, VerifierRoute};

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";

#[derive(Debug, Error)]
pub enum RlError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("training diverged: {0}")]
    Divergence(String),
}

/// Short mode answers directly; long mode reasons inside a think block first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Short,
    Long,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Short => "short",
            Mode::Long => "long",
        }
    }

    /// Prompt suffix selecting the mode.
    pub fn tag(self) -> &'static str {
        match self {
            Mode::Short => "/short",
            Mode::Long => "/long",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = RlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "short" => Ok(Mode::Short),
            "long" => Ok(Mode::Long),
            other => Err(RlError::Input(format!("unknown mode `{other}`"))),
        }
    }
}
