//! Visual-token budget arithmetic: the resampler's per-package cost against
//! fixed tokens-per-frame baselines and against raw encoder patches.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Side length of the encoder input the patch counts refer to.
pub const FRAME_SIDE: u32 = 448;
/// Encoder patch side. 14 is the divisor of 448 for which six frames of
/// patches over one 64-token package give a 96× ratio.
pub const DEFAULT_PATCH_SIDE: u32 = 14;

#[derive(Debug, Error, PartialEq)]
pub enum TokenError {
    #[error("unknown baseline scheme {0:?}; expected per_frame_128 or per_frame_256")]
    UnknownScheme(String),
    #[error("invalid budget input: {0}")]
    Input(String),
}

/// Fixed tokens-per-frame baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineScheme {
    PerFrame128,
    PerFrame256,
}

impl BaselineScheme {
    pub const ALL: [BaselineScheme; 2] = [BaselineScheme::PerFrame128, BaselineScheme::PerFrame256];

    pub fn tokens_per_frame(self) -> u64 {
        match self {
            BaselineScheme::PerFrame128 => 128,
            BaselineScheme::PerFrame256 => 256,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BaselineScheme::PerFrame128 => "per_frame_128",
            BaselineScheme::PerFrame256 => "per_frame_256",
        }
    }
}

impl fmt::Display for BaselineScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineScheme {
    type Err = TokenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BaselineScheme::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| TokenError::UnknownScheme(s.to_string()))
    }
}

/// `ceil(frames / package_size) · queries`.
pub fn budget(frames: u64, package_size: u64, queries: u64) -> Result<u64, TokenError> {
    if frames == 0 || package_size == 0 || queries == 0 {
        return Err(TokenError::Input(format!(
            "frames ({frames}), package_size ({package_size}) and queries ({queries}) must be >= 1"
        )));
    }
    Ok(frames.div_ceil(package_size) * queries)
}

pub fn baseline_budget(frames: u64, scheme: &str) -> Result<u64, TokenError> {
    let scheme: BaselineScheme = scheme.parse()?;
    Ok(frames * scheme.tokens_per_frame())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenBudgetReport {
    pub frames: u64,
    pub package_size: u64,
    pub queries: u64,
    pub packages: u64,
    pub our_tokens: u64,
    pub baseline_tokens: BTreeMap<String, u64>,
    pub tokens_per_frame: f64,
    pub compression_vs_patches: f64,
    pub compression_vs_baseline: BTreeMap<String, f64>,
}

pub fn compression_report(
    frames: u64,
    package_size: u64,
    queries: u64,
    patch_side: u32,
) -> Result<TokenBudgetReport, TokenError> {
    if patch_side == 0 || !FRAME_SIDE.is_multiple_of(patch_side) {
        return Err(TokenError::Input(format!(
            "patch side {patch_side} must divide {FRAME_SIDE}"
        )));
    }
    let our_tokens = budget(frames, package_size, queries)?;
    let patches_per_frame = ((FRAME_SIDE / patch_side) as u64).pow(2);
    let mut baseline_tokens = BTreeMap::new();
    let mut compression_vs_baseline = BTreeMap::new();
    for scheme in BaselineScheme::ALL {
        let tokens = frames * scheme.tokens_per_frame();
        baseline_tokens.insert(scheme.name().to_string(), tokens);
        compression_vs_baseline
            .insert(scheme.name().to_string(), tokens as f64 / our_tokens as f64);
    }
    Ok(TokenBudgetReport {
        frames,
        package_size,
        queries,
        packages: frames.div_ceil(package_size),
        our_tokens,
        baseline_tokens,
        tokens_per_frame: our_tokens as f64 / frames as f64,
        compression_vs_patches: (frames * patches_per_frame) as f64 / our_tokens as f64,
        compression_vs_baseline,
    })
}
