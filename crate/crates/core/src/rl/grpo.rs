//! Group-relative advantages, mode sampling and the DPO objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::reward::{standardize, RewardBreakdown};
use super::{Mode, RlError};

pub const DEFAULT_P_LONG: f64 = 0.5;
pub const DEFAULT_DPO_BETA: f64 = 0.1;

/// `G` responses to one prompt, all sampled in the same mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub prompt_id: usize,
    pub mode: Mode,
    pub responses: Vec<String>,
    pub rewards: Vec<RewardBreakdown>,
}

/// Within-group standardized totals. No KL or entropy terms enter the
/// objective, so this is the whole per-response weight.
pub fn grpo_advantages(group: &RolloutGroup) -> Result<Vec<f64>, RlError> {
    let totals: Vec<f64> = group.rewards.iter().map(|r| r.total).collect();
    standardize(&totals)
}

pub fn sample_mode_with<R: Rng + ?Sized>(rng: &mut R, p_long: f64) -> Mode {
    if rng.gen_bool(p_long.clamp(0.0, 1.0)) {
        Mode::Long
    } else {
        Mode::Short
    }
}

/// Seeded Bernoulli(`p_long`) draw.
pub fn sample_mode(seed: u64, p_long: f64) -> Result<Mode, RlError> {
    if !(0.0..=1.0).contains(&p_long) {
        return Err(RlError::Input(format!(
            "p_long must be in [0, 1], got {p_long}"
        )));
    }
    Ok(sample_mode_with(
        &mut ChaCha8Rng::seed_from_u64(seed),
        p_long,
    ))
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `−ln σ(β·((logp_w − ref_logp_w) − (logp_l − ref_logp_l)))`.
pub fn dpo_loss(logp_w: f64, logp_l: f64, ref_logp_w: f64, ref_logp_l: f64, beta: f64) -> f64 {
    let margin = (logp_w - ref_logp_w) - (logp_l - ref_logp_l);
    softplus(-beta * margin)
}
