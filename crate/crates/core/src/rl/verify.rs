//! Verifier routing and rule-based answer matching.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// References with at most this many tokens can be rule-verified.
pub const RULE_MAX_TOKENS: usize = 5;
const NUMERIC_REL_TOL: f64 = 1e-6;

static NUMERIC: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[+-]?(\d+(\.\d*)?|\.\d+)(/\d+(\.\d*)?)?%?$").unwrap());
static OPTION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\(?[A-Ha-h]\)?[.)]?$").unwrap());
static ANSWER_MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)answer(?:\s+is)?\s*[:：]\s*([^\n]*)").unwrap());
static BOXED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\\boxed\{([^{}]*)\}").unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifierRoute {
    Rule,
    Probability,
}

pub fn tokens(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

fn is_rule_token(tok: &str) -> bool {
    NUMERIC.is_match(tok) || OPTION.is_match(tok)
}

/// Short numeric or multiple-choice references go to the rule verifier;
/// everything else (units, phrases) to the probability reward.
pub fn route_verifier(reference: &str) -> VerifierRoute {
    let toks = tokens(reference);
    if !toks.is_empty() && toks.len() <= RULE_MAX_TOKENS && toks.iter().all(|t| is_rule_token(t)) {
        VerifierRoute::Rule
    } else {
        VerifierRoute::Probability
    }
}

/// The part of a response after the last `</think>`, or all of it.
pub fn answer_section(response: &str) -> &str {
    match response.rfind(super::THINK_CLOSE) {
        Some(i) => &response[i + super::THINK_CLOSE.len()..],
        None => response,
    }
}

/// Byte range of the final answer inside `response`: the text after the last
/// `answer:` marker, else the last `\boxed{}`, else a short bare answer
/// section.
pub fn final_answer_span(response: &str) -> Option<std::ops::Range<usize>> {
    let section_start = response.len() - answer_section(response).len();
    let section = &response[section_start..];
    let captured = ANSWER_MARKER
        .captures_iter(section)
        .last()
        .or_else(|| BOXED.captures_iter(section).last())
        .and_then(|c| c.get(1))
        .map(|m| m.range());
    let range = match captured {
        Some(r) => r,
        None => {
            let n = tokens(section).len();
            if n == 0 || n > RULE_MAX_TOKENS {
                return None;
            }
            0..section.len()
        }
    };
    let text = &section[range.clone()];
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return None;
    }
    let lead = text.len() - text.trim_start().len();
    let start = section_start + range.start + lead;
    Some(start..start + trimmed.len())
}

pub fn extract_final_answer(response: &str) -> Option<&str> {
    final_answer_span(response).map(|r| &response[r])
}

/// `response` with its final answer cut off, keeping the reasoning and the
/// answer marker.
pub fn answer_prefix(response: &str) -> &str {
    match final_answer_span(response) {
        Some(r) => &response[..r.start],
        None => response,
    }
}

fn parse_number(s: &str) -> Option<f64> {
    let s = s.trim();
    if !NUMERIC.is_match(s) {
        return None;
    }
    let (body, scale) = match s.strip_suffix('%') {
        Some(b) => (b, 0.01),
        None => (s, 1.0),
    };
    let value = match body.split_once('/') {
        Some((n, d)) => {
            let d: f64 = d.parse().ok()?;
            if d == 0.0 {
                return None;
            }
            n.parse::<f64>().ok()? / d
        }
        None => body.parse().ok()?,
    };
    Some(value * scale)
}

fn normalize(s: &str) -> String {
    s.chars()
        .filter(|c| !c.is_whitespace() && !c.is_ascii_punctuation())
        .flat_map(char::to_lowercase)
        .collect()
}

fn strip_edges(s: &str) -> &str {
    s.trim().trim_end_matches(['.', ',', ';', '!', '?']).trim()
}

/// Whether two answers agree after normalization: numerically within a
/// relative `1e-6`, or as case-folded strings without whitespace and
/// punctuation.
pub fn answers_match(candidate: &str, reference: &str) -> bool {
    let (c, r) = (strip_edges(candidate), strip_edges(reference));
    if let (Some(a), Some(b)) = (parse_number(c), parse_number(r)) {
        let scale = a.abs().max(b.abs());
        return (a - b).abs() <= NUMERIC_REL_TOL * scale;
    }
    let (nc, nr) = (normalize(c), normalize(r));
    !nr.is_empty() && nc == nr
}

/// 1 when the extracted final answer matches the reference, else 0.
pub fn rule_reward(response: &str, reference: &str) -> f64 {
    match extract_final_answer(response) {
        Some(ans) if answers_match(ans, reference) => 1.0,
        _ => 0.0,
    }
}
