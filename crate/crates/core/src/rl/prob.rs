//! Probability-based reward: how likely the policy finds the reference
//! answer, given the prompt and its own reasoning with the final answer
//! replaced.

use super::verify::tokens;
use super::RlError;

/// Next-token probabilities over whitespace tokens.
pub trait TokenModel {
    fn token_prob(&self, context: &[&str], token: &str) -> f64;
}

/// Additively smoothed copy model: a token is likely in proportion to how
/// often it already appears in the context. Lets the probability reward run
/// without a trained policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContextCopyModel {
    pub vocab: usize,
    pub smoothing: f64,
}

impl Default for ContextCopyModel {
    fn default() -> Self {
        Self {
            vocab: 1000,
            smoothing: 1.0,
        }
    }
}

impl TokenModel for ContextCopyModel {
    fn token_prob(&self, context: &[&str], token: &str) -> f64 {
        let folded = token.to_lowercase();
        let hits = context
            .iter()
            .filter(|t| t.to_lowercase() == folded)
            .count() as f64;
        (hits + self.smoothing) / (context.len() as f64 + self.smoothing * self.vocab as f64)
    }
}

/// Arithmetic mean of the per-token probabilities of `reference`, each
/// conditioned on the prompt, the response prefix and the reference tokens
/// before it.
pub fn prob_reward(
    model: &dyn TokenModel,
    prompt: &str,
    response_prefix: &str,
    reference: &str,
) -> Result<f64, RlError> {
    let reference = tokens(reference);
    if reference.is_empty() {
        return Err(RlError::Input("reference answer is empty".into()));
    }
    let mut context = tokens(prompt);
    context.extend(tokens(response_prefix));
    let mut sum = 0.0;
    for tok in &reference {
        sum += model.token_prob(&context, tok);
        context.push(tok);
    }
    Ok(sum / reference.len() as f64)
}
