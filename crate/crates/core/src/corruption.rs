//! Document text-region corruption for joint OCR / document-knowledge
//! training samples.
//!
//! A seeded subset of a page's annotated text regions is selected, each
//! region gets an independently drawn corruption level, and the target text
//! stays the original annotation whatever the level:
//!
//! * low: 3×3 box blur, then mild Gaussian noise. The text stays legible.
//! * moderate: heavy Gaussian noise. Individual glyphs become ambiguous.
//! * high: the box is filled with a constant. Only context can recover it.
//!
//! Pixels outside every selected box are never touched.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::Raster;

#[derive(Debug, Error, PartialEq)]
pub enum CorruptionError {
    #[error("input error: {0}")]
    Input(String),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, CorruptionError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextRegion {
    pub id: String,
    /// `[x, y, w, h]` in pixels.
    pub bbox: [u32; 4],
    pub text: String,
}

impl TextRegion {
    pub fn new(id: impl Into<String>, bbox: [u32; 4], text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            bbox,
            text: text.into(),
        }
    }

    pub fn validate(&self, image: &Raster) -> Result<()> {
        let [x, y, w, h] = self.bbox.map(|v| v as usize);
        if w == 0 || h == 0 {
            return Err(CorruptionError::Input(format!(
                "region {:?} has an empty box",
                self.id
            )));
        }
        if x + w > image.width() || y + h > image.height() {
            return Err(CorruptionError::Input(format!(
                "region {:?} box {:?} exceeds the {}x{} image",
                self.id,
                self.bbox,
                image.width(),
                image.height()
            )));
        }
        if self.text.is_empty() {
            return Err(CorruptionError::Input(format!(
                "region {:?} has no text",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelKind {
    None,
    Low,
    Moderate,
    High,
}

impl LevelKind {
    pub const ALL: [LevelKind; 4] = [
        LevelKind::None,
        LevelKind::Low,
        LevelKind::Moderate,
        LevelKind::High,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LevelKind::None => "none",
            LevelKind::Low => "low",
            LevelKind::Moderate => "moderate",
            LevelKind::High => "high",
        }
    }
}

impl std::str::FromStr for LevelKind {
    type Err = CorruptionError;

    fn from_str(s: &str) -> Result<Self> {
        LevelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| CorruptionError::Input(format!("unknown corruption level {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorruptionLevel {
    None,
    /// Box blur of the given radius (0 disables it), then Gaussian noise.
    Low {
        sigma: f64,
        blur_radius: u32,
    },
    Moderate {
        sigma: f64,
    },
    High {
        fill: u8,
    },
}

impl CorruptionLevel {
    pub fn kind(&self) -> LevelKind {
        match self {
            CorruptionLevel::None => LevelKind::None,
            CorruptionLevel::Low { .. } => LevelKind::Low,
            CorruptionLevel::Moderate { .. } => LevelKind::Moderate,
            CorruptionLevel::High { .. } => LevelKind::High,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    pub sigma_low: f64,
    pub blur_radius_low: u32,
    pub sigma_moderate: f64,
    pub fill: u8,
    /// Probabilities of low, moderate, high.
    pub distribution: [f64; 3],
    pub target_fraction: f64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            sigma_low: 8.0,
            blur_radius_low: 1,
            sigma_moderate: 60.0,
            fill: 128,
            distribution: [1.0 / 3.0; 3],
            target_fraction: 0.5,
        }
    }
}

impl CorruptionConfig {
    pub fn level(&self, kind: LevelKind) -> CorruptionLevel {
        match kind {
            LevelKind::None => CorruptionLevel::None,
            LevelKind::Low => CorruptionLevel::Low {
                sigma: self.sigma_low,
                blur_radius: self.blur_radius_low,
            },
            LevelKind::Moderate => CorruptionLevel::Moderate {
                sigma: self.sigma_moderate,
            },
            LevelKind::High => CorruptionLevel::High { fill: self.fill },
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_distribution(&self.distribution)?;
        if !(self.target_fraction > 0.0 && self.target_fraction <= 1.0) {
            return Err(CorruptionError::Config(format!(
                "target fraction must be in (0, 1], got {}",
                self.target_fraction
            )));
        }
        for sigma in [self.sigma_low, self.sigma_moderate] {
            if !(sigma.is_finite() && sigma >= 0.0) {
                return Err(CorruptionError::Config(format!(
                    "noise sigma must be >= 0, got {sigma}"
                )));
            }
        }
        Ok(())
    }
}

fn validate_distribution(p: &[f64; 3]) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(CorruptionError::Config(format!(
            "probabilities must be non-negative, got {p:?}"
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(CorruptionError::Config(format!(
            "probabilities sum to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// Independent seeded draw of a level per region, in input order.
pub fn assign_levels(
    regions: &[TextRegion],
    seed: u64,
    distribution: [f64; 3],
    cfg: &CorruptionConfig,
) -> Result<BTreeMap<String, CorruptionLevel>> {
    validate_distribution(&distribution)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds = [LevelKind::Low, LevelKind::Moderate, LevelKind::High];
    let mut out = BTreeMap::new();
    for region in regions {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        // falls through to the last non-zero bucket when rounding leaves u above the total
        let mut kind = kinds[distribution.iter().rposition(|p| *p > 0.0).unwrap_or(0)];
        for (k, p) in kinds.iter().zip(distribution) {
            acc += p;
            if p > 0.0 && u < acc {
                kind = *k;
                break;
            }
        }
        out.insert(region.id.clone(), cfg.level(kind));
    }
    Ok(out)
}

/// Applies one level inside the region's box; everything outside is copied
/// bit for bit.
pub fn corrupt_region(
    image: &Raster,
    region: &TextRegion,
    level: &CorruptionLevel,
    seed: u64,
) -> Result<Raster> {
    region.validate(image)?;
    let mut out = image.clone();
    let [x0, y0, w, h] = region.bbox.map(|v| v as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match *level {
        CorruptionLevel::None => {}
        CorruptionLevel::High { fill } => {
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    for c in 0..image.channels() {
                        out.set(x, y, c, fill);
                    }
                }
            }
        }
        CorruptionLevel::Low { sigma, blur_radius } => {
            if blur_radius > 0 {
                box_blur_into(image, &mut out, region.bbox, blur_radius as usize);
            }
            add_noise(&mut out, region.bbox, sigma, &mut rng)?;
        }
        CorruptionLevel::Moderate { sigma } => add_noise(&mut out, region.bbox, sigma, &mut rng)?,
    }
    Ok(out)
}

/// Mean over a `(2r+1)²` window of `src` clipped to the image, written into
/// the box of `dst`.
fn box_blur_into(src: &Raster, dst: &mut Raster, bbox: [u32; 4], radius: usize) {
    let [x0, y0, w, h] = bbox.map(|v| v as usize);
    for y in y0..y0 + h {
        let ys = y.saturating_sub(radius)..(y + radius + 1).min(src.height());
        for x in x0..x0 + w {
            let xs = x.saturating_sub(radius)..(x + radius + 1).min(src.width());
            let count = (ys.len() * xs.len()) as f64;
            for c in 0..src.channels() {
                let mut sum = 0.0;
                for yy in ys.clone() {
                    for xx in xs.clone() {
                        sum += src.get(xx, yy, c) as f64;
                    }
                }
                dst.set(x, y, c, (sum / count).round() as u8);
            }
        }
    }
}

/// Per-pixel, per-channel Gaussian noise from one stream, rounded and
/// clipped to `[0, 255]`.
fn add_noise(img: &mut Raster, bbox: [u32; 4], sigma: f64, rng: &mut ChaCha8Rng) -> Result<()> {
    let normal = Normal::new(0.0, sigma).map_err(|e| CorruptionError::Config(e.to_string()))?;
    let [x0, y0, w, h] = bbox.map(|v| v as usize);
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            for c in 0..img.channels() {
                let v = img.get(x, y, c) as f64 + normal.sample(rng);
                img.set(x, y, c, v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub region_id: String,
    pub level: LevelKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionSample {
    pub image: Raster,
    /// In region-id order, which is also the order corruptions were applied.
    pub targets: Vec<Target>,
    pub seed: u64,
}

/// Stable per-region noise seed.
pub fn region_seed(seed: u64, region_id: &str) -> u64 {
    // FNV-1a over the id, folded into the sample seed with a splitmix round
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in region_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Applies explicit levels in region-id order. A later id overwrites an
/// earlier one where boxes overlap.
pub fn apply_levels(
    image: &Raster,
    regions: &[TextRegion],
    levels: &BTreeMap<String, CorruptionLevel>,
    seed: u64,
) -> Result<(Raster, Vec<Target>)> {
    let by_id: BTreeMap<&str, &TextRegion> = regions.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut out = image.clone();
    let mut targets = Vec::with_capacity(levels.len());
    for (id, level) in levels {
        let region = by_id
            .get(id.as_str())
            .ok_or_else(|| CorruptionError::Input(format!("no region with id {id:?}")))?;
        out = corrupt_region(&out, region, level, region_seed(seed, id))?;
        targets.push(Target {
            region_id: id.clone(),
            level: level.kind(),
            text: region.text.clone(),
        });
    }
    Ok((out, targets))
}

pub fn emit_sample(
    image: &Raster,
    regions: &[TextRegion],
    seed: u64,
    cfg: &CorruptionConfig,
) -> Result<CorruptionSample> {
    cfg.validate()?;
    if regions.is_empty() {
        return Err(CorruptionError::Input(
            "document has no text regions".into(),
        ));
    }
    let mut seen = BTreeSet::new();
    for r in regions {
        r.validate(image)?;
        if !seen.insert(r.id.as_str()) {
            return Err(CorruptionError::Input(format!(
                "duplicate region id {:?}",
                r.id
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = regions.len();
    let k = ((cfg.target_fraction * n as f64).round() as usize).clamp(1, n);
    let mut chosen = index::sample(&mut rng, n, k).into_vec();
    chosen.sort_unstable();
    let selected: Vec<TextRegion> = chosen.into_iter().map(|i| regions[i].clone()).collect();
    let levels = assign_levels(&selected, rng.gen(), cfg.distribution, cfg)?;
    let (image, targets) = apply_levels(image, &selected, &levels, seed)?;
    Ok(CorruptionSample {
        image,
        targets,
        seed,
    })
}

/// One line of the annotation JSONL input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentAnnotation {
    pub image: String,
    pub regions: Vec<TextRegion>,
}

/// One line of the targets JSONL output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetRecord {
    pub source: String,
    pub image: String,
    pub seed: u64,
    pub targets: Vec<Target>,
}

/// Renders blocky pseudo-glyph strokes for each region onto a flat page.
/// Used for fixtures and the demo; stroke and paper shades are parameters so
/// noise statistics can be measured away from the clipping limits.
pub fn render_synthetic_page(
    width: usize,
    height: usize,
    channels: usize,
    regions: &[TextRegion],
    paper: u8,
    ink: u8,
) -> Raster {
    let mut img = Raster::filled(width, height, channels, paper).expect("non-empty page");
    for region in regions {
        let [x0, y0, w, h] = region.bbox.map(|v| v as usize);
        let glyph_w = (h * 3 / 5).max(2);
        for (i, b) in region.text.bytes().enumerate() {
            let gx = x0 + i * (glyph_w + 1);
            if gx + glyph_w > x0 + w {
                break;
            }
            for y in y0..(y0 + h).min(height) {
                for x in gx..(gx + glyph_w).min(width) {
                    let cell = ((x - gx) * 3 / glyph_w) + 3 * ((y - y0) * 5 / h.max(1));
                    if (b as usize >> (cell % 8)) & 1 == 1 {
                        for c in 0..channels {
                            img.set(x, y, c, ink);
                        }
                    }
                }
            }
        }
    }
    img
}
