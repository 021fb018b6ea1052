//! Composite reward: accuracy, format, repetition penalty and a
//! group-standardized preference score at half weight.
//!
//! `R = R_acc + R_format + R_rep + ½·R̃_rm`, with `R̃_rm` the preference score
//! standardized over the responses sampled for the same prompt.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::prob::{prob_reward, TokenModel};
use super::verify::{
    answer_prefix, answer_section, route_verifier, rule_reward, tokens, VerifierRoute,
};
use super::{Mode, RlError, THINK_CLOSE, THINK_OPEN};

/// Window length and repeat count that trigger the repetition penalty.
pub const REPEAT_WINDOW: usize = 20;
pub const REPEAT_COUNT: usize = 3;
pub const RM_WEIGHT: f64 = 0.5;
const ZERO_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    /// 0/1 from the rule verifier, or a probability in `[0, 1]` from the
    /// probability reward.
    pub r_acc: f64,
    pub r_format: f64,
    pub r_rep: f64,
    pub r_rm_raw: f64,
    pub r_rm_std: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn recomputed_total(&self) -> f64 {
        total_reward(self.r_acc, self.r_format, self.r_rep, self.r_rm_std)
    }

    pub fn is_consistent(&self) -> bool {
        self.total == self.recomputed_total()
    }
}

pub fn total_reward(r_acc: f64, r_format: f64, r_rep: f64, rm_std: f64) -> f64 {
    r_acc + r_format + r_rep + RM_WEIGHT * rm_std
}

/// Long mode wants exactly one `<think>…</think>` block followed by a
/// non-empty answer; short mode wants no think delimiters at all.
pub fn format_reward(response: &str, mode: Mode) -> f64 {
    let opens = response.matches(THINK_OPEN).count();
    let closes = response.matches(THINK_CLOSE).count();
    let ok = match mode {
        Mode::Short => opens == 0 && closes == 0,
        Mode::Long => {
            opens == 1
                && closes == 1
                && response.find(THINK_OPEN) < response.find(THINK_CLOSE)
                && !answer_section(response).trim().is_empty()
        }
    };
    if ok {
        1.0
    } else {
        0.0
    }
}

/// −1 when some 20-token window occurs at least three times (overlapping
/// occurrences count), else 0.
pub fn repetition_penalty(response: &str) -> f64 {
    let toks = tokens(response);
    if toks.len() < REPEAT_WINDOW + REPEAT_COUNT - 1 {
        return 0.0;
    }
    let mut counts: HashMap<&[&str], usize> = HashMap::new();
    for w in toks.windows(REPEAT_WINDOW) {
        let c = counts.entry(w).or_insert(0);
        *c += 1;
        if *c >= REPEAT_COUNT {
            return -1.0;
        }
    }
    0.0
}

/// `(s − mean) / std` with the population std; all zeros when the scores are
/// constant.
pub fn standardize(scores: &[f64]) -> Result<Vec<f64>, RlError> {
    if scores.len() < 2 {
        return Err(RlError::Input(format!(
            "standardizing needs at least 2 scores, got {}",
            scores.len()
        )));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= ZERO_STD {
        return Ok(vec![0.0; scores.len()]);
    }
    Ok(scores.iter().map(|s| (s - mean) / std).collect())
}

/// Preference model over the final-answer text.
pub trait PreferenceScorer {
    fn score(&self, answer: &str) -> f64;
}

impl<F: Fn(&str) -> f64> PreferenceScorer for F {
    fn score(&self, answer: &str) -> f64 {
        self(answer)
    }
}

/// Stand-in preference model: rewards an explicit answer marker and
/// penalizes length.
#[derive(Debug, Clone, Copy)]
pub struct HeuristicScorer {
    pub marker_bonus: f64,
    pub per_char_penalty: f64,
}

impl Default for HeuristicScorer {
    fn default() -> Self {
        Self {
            marker_bonus: 1.0,
            per_char_penalty: 0.02,
        }
    }
}

impl PreferenceScorer for HeuristicScorer {
    fn score(&self, answer: &str) -> f64 {
        let trimmed = answer.trim();
        let bonus = if trimmed.to_lowercase().contains("answer") {
            self.marker_bonus
        } else {
            0.0
        };
        bonus - self.per_char_penalty * trimmed.chars().count() as f64
    }
}

/// Scores only the answer part: in long mode everything up to the last
/// `</think>` is dropped (no closing tag means no answer, so the scorer sees
/// an empty string); in short mode the whole response is the answer.
pub fn rm_score(response: &str, scorer: &dyn PreferenceScorer, mode: Mode) -> f64 {
    let answer = match mode {
        Mode::Short => response,
        Mode::Long => match response.rfind(THINK_CLOSE) {
            Some(i) => &response[i + THINK_CLOSE.len()..],
            None => "",
        },
    };
    scorer.score(answer)
}

/// Everything needed to score the responses to one prompt.
pub struct RewardContext<'a> {
    pub prompt: &'a str,
    pub reference: &'a str,
    pub mode: Mode,
    pub scorer: &'a dyn PreferenceScorer,
    /// Needed only for references routed to the probability reward.
    pub model: Option<&'a dyn TokenModel>,
}

pub fn accuracy_reward(ctx: &RewardContext<'_>, response: &str) -> Result<f64, RlError> {
    match route_verifier(ctx.reference) {
        VerifierRoute::Rule => Ok(rule_reward(response, ctx.reference)),
        VerifierRoute::Probability => {
            let model = ctx.model.ok_or_else(|| {
                RlError::Input(
                    "reference needs the probability reward but no model was given".into(),
                )
            })?;
            prob_reward(model, ctx.prompt, answer_prefix(response), ctx.reference)
        }
    }
}

/// Full breakdown for a group of responses to one prompt.
pub fn score_group(
    ctx: &RewardContext<'_>,
    responses: &[String],
) -> Result<Vec<RewardBreakdown>, RlError> {
    let raw: Vec<f64> = responses
        .iter()
        .map(|r| rm_score(r, ctx.scorer, ctx.mode))
        .collect();
    let standardized = standardize(&raw)?;
    responses
        .iter()
        .zip(raw.iter().zip(&standardized))
        .map(|(resp, (&r_rm_raw, &r_rm_std))| {
            let r_acc = accuracy_reward(ctx, resp)?;
            let r_format = format_reward(resp, ctx.mode);
            let r_rep = repetition_penalty(resp);
            Ok(RewardBreakdown {
                r_acc,
                r_format,
                r_rep,
                r_rm_raw,
                r_rm_std,
                total: total_reward(r_acc, r_format, r_rep, r_rm_std),
            })
        })
        .collect()
}
