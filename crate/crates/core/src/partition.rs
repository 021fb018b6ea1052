//! High-resolution image partitioning.
//!
//! The ideal slice count is the image area in units of the encoder's native
//! square (`base²`). Grids whose slice count is within one of that ideal are
//! scored by how far a slice departs from a `base × base` square, in log
//! aspect and log area, and the lowest score wins.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::Raster;

/// Encoder pretraining side length in pixels.
pub const DEFAULT_BASE: u32 = 448;
pub const DEFAULT_MAX_SLICES: u32 = 9;
/// Tokens emitted per slice by the resampler.
pub const DEFAULT_QUERIES: u32 = 64;

/// Scores closer than this are treated as equal before tie-breaking.
const SCORE_TIE_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum PartitionError {
    #[error("image geometry must be at least 1x1, got {0}x{1}")]
    Geometry(u32, u32),
    #[error("invalid partition config: {0}")]
    Config(String),
    #[error("image is {actual_w}x{actual_h} but the plan was made for {plan_w}x{plan_h}")]
    Mismatch {
        actual_w: u32,
        actual_h: u32,
        plan_w: u32,
        plan_h: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageGeometry {
    pub width: u32,
    pub height: u32,
}

impl ImageGeometry {
    pub fn new(width: u32, height: u32) -> Result<Self, PartitionError> {
        if width == 0 || height == 0 {
            return Err(PartitionError::Geometry(width, height));
        }
        Ok(Self { width, height })
    }

    fn area(&self) -> f64 {
        self.width as f64 * self.height as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub base: u32,
    pub max_slices: u32,
    /// Weight of the log-area term relative to the log-aspect term.
    pub area_weight: f64,
    pub queries: u32,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            base: DEFAULT_BASE,
            max_slices: DEFAULT_MAX_SLICES,
            area_weight: 1.0,
            queries: DEFAULT_QUERIES,
        }
    }
}

impl PartitionConfig {
    pub fn validate(&self) -> Result<(), PartitionError> {
        if self.base == 0 {
            return Err(PartitionError::Config("base must be > 0".into()));
        }
        if self.max_slices == 0 {
            return Err(PartitionError::Config("max_slices must be >= 1".into()));
        }
        if self.queries == 0 {
            return Err(PartitionError::Config("queries must be >= 1".into()));
        }
        if !(self.area_weight.is_finite() && self.area_weight >= 0.0) {
            return Err(PartitionError::Config(
                "area_weight must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub source: ImageGeometry,
    pub grid_cols: u32,
    pub grid_rows: u32,
    pub slice_width: u32,
    pub slice_height: u32,
    pub score: f64,
    pub tokens_per_slice: u32,
}

impl PartitionPlan {
    pub fn slice_count(&self) -> u32 {
        self.grid_cols * self.grid_rows
    }

    pub fn tokens_total(&self) -> u64 {
        self.slice_count() as u64 * self.tokens_per_slice as u64
    }

    /// Size the source is resized to before cutting.
    pub fn resized_geometry(&self) -> (u32, u32) {
        (
            self.slice_width * self.grid_cols,
            self.slice_height * self.grid_rows,
        )
    }

    /// The JSON document the CLI writes for a plan.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "grid": [self.grid_cols, self.grid_rows],
            "slice": [self.slice_width, self.slice_height],
            "tokens_total": self.tokens_total(),
            "score": self.score,
        })
    }
}

/// `round(area / base²)` clamped to `[1, max_slices]`.
pub fn ideal_slice_count(g: ImageGeometry, base: u32, max_slices: u32) -> u32 {
    let base_area = base as f64 * base as f64;
    let raw = (g.area() / base_area).round();
    (raw.max(1.0).min(max_slices.max(1) as f64)) as u32
}

/// Deviation of a `cols × rows` grid's slices from a `base × base` square.
pub fn grid_score(g: ImageGeometry, cols: u32, rows: u32, base: u32, area_weight: f64) -> f64 {
    let slice_w = g.width as f64 / cols as f64;
    let slice_h = g.height as f64 / rows as f64;
    let aspect = (slice_w / slice_h).ln().abs();
    let area = (slice_w * slice_h / (base as f64 * base as f64)).ln().abs();
    aspect + area_weight * area
}

/// Slice counts considered for an image: one either side of the ideal.
pub fn candidate_counts(g: ImageGeometry, base: u32, max_slices: u32) -> Vec<u32> {
    let ideal = ideal_slice_count(g, base, max_slices);
    [ideal.saturating_sub(1), ideal, ideal + 1]
        .into_iter()
        .filter(|n| (1..=max_slices).contains(n))
        .collect()
}

/// Orders two scored grids: lower score, then fewer slices, then squarer
/// grid, then more columns.
pub fn prefer(a: (u32, u32, f64), b: (u32, u32, f64)) -> std::cmp::Ordering {
    use std::cmp::Ordering;
    let (ac, ar, asc) = a;
    let (bc, br, bsc) = b;
    if (asc - bsc).abs() > SCORE_TIE_TOL {
        return asc.partial_cmp(&bsc).unwrap_or(Ordering::Equal);
    }
    (ac * ar)
        .cmp(&(bc * br))
        .then(ac.abs_diff(ar).cmp(&bc.abs_diff(br)))
        .then(bc.cmp(&ac))
}

pub fn select_partition(
    g: ImageGeometry,
    cfg: &PartitionConfig,
) -> Result<PartitionPlan, PartitionError> {
    cfg.validate()?;
    let mut best: Option<(u32, u32, f64)> = None;
    for n in candidate_counts(g, cfg.base, cfg.max_slices) {
        for cols in (1..=n).filter(|c| n % c == 0) {
            let rows = n / cols;
            let cand = (
                cols,
                rows,
                grid_score(g, cols, rows, cfg.base, cfg.area_weight),
            );
            best = match best {
                Some(b) if prefer(b, cand).is_le() => Some(b),
                _ => Some(cand),
            };
        }
    }
    // The ideal count is clamped into [1, max_slices], so the set is never empty.
    let (cols, rows, score) = best.expect("candidate set contains the ideal count");
    Ok(PartitionPlan {
        source: g,
        grid_cols: cols,
        grid_rows: rows,
        slice_width: g.width.div_ceil(cols),
        slice_height: g.height.div_ceil(rows),
        score,
        tokens_per_slice: cfg.queries,
    })
}

/// Resizes the image to the plan's tiled geometry and cuts it into
/// row-major slices.
pub fn slice_image(image: &Raster, plan: &PartitionPlan) -> Result<Vec<Raster>, PartitionError> {
    if image.width() as u32 != plan.source.width || image.height() as u32 != plan.source.height {
        return Err(PartitionError::Mismatch {
            actual_w: image.width() as u32,
            actual_h: image.height() as u32,
            plan_w: plan.source.width,
            plan_h: plan.source.height,
        });
    }
    let (rw, rh) = plan.resized_geometry();
    let resized = image.resize_bilinear(rw as usize, rh as usize);
    let (sw, sh) = (plan.slice_width as usize, plan.slice_height as usize);
    let mut slices = Vec::with_capacity(plan.slice_count() as usize);
    for r in 0..plan.grid_rows as usize {
        for c in 0..plan.grid_cols as usize {
            slices.push(resized.crop(c * sw, r * sh, sw, sh));
        }
    }
    Ok(slices)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(w: u32, h: u32) -> ImageGeometry {
        ImageGeometry::new(w, h).unwrap()
    }

    /// Every grid with at most `max_slices` cells, filtered to the
    /// candidate counts, minimized by linear scan.
    fn brute_force(g: ImageGeometry, cfg: &PartitionConfig) -> (u32, u32) {
        let ideal = ((g.width as f64 * g.height as f64) / (cfg.base as f64).powi(2))
            .round()
            .clamp(1.0, cfg.max_slices as f64) as i64;
        let mut all = Vec::new();
        for cols in 1..=cfg.max_slices {
            for rows in 1..=cfg.max_slices {
                let n = (cols * rows) as i64;
                if n <= cfg.max_slices as i64 && (n - ideal).abs() <= 1 {
                    all.push((
                        cols,
                        rows,
                        grid_score(g, cols, rows, cfg.base, cfg.area_weight),
                    ));
                }
            }
        }
        let best = all.iter().copied().min_by(|a, b| prefer(*a, *b)).unwrap();
        (best.0, best.1)
    }

    #[test]
    fn ideal_counts() {
        assert_eq!(ideal_slice_count(geom(448, 448), 448, 9), 1);
        assert_eq!(ideal_slice_count(geom(896, 896), 448, 9), 4);
        assert_eq!(ideal_slice_count(geom(10000, 10000), 448, 9), 9);
        assert_eq!(ideal_slice_count(geom(10, 10), 448, 9), 1);
    }

    #[test]
    fn square_native_image_is_one_slice() {
        let plan = select_partition(geom(448, 448), &PartitionConfig::default()).unwrap();
        assert_eq!((plan.grid_cols, plan.grid_rows), (1, 1));
        assert_eq!(plan.tokens_total(), 64);
        assert_eq!(plan.score, 0.0);
    }

    #[test]
    fn wide_and_large_examples() {
        let cfg = PartitionConfig::default();
        let plan = select_partition(geom(896, 448), &cfg).unwrap();
        assert_eq!((plan.grid_cols, plan.grid_rows), (2, 1));
        assert_eq!((plan.slice_width, plan.slice_height), (448, 448));
        assert_eq!(plan.score, 0.0);
        assert_eq!(brute_force(geom(896, 448), &cfg), (2, 1));

        let plan = select_partition(geom(1344, 896), &cfg).unwrap();
        assert_eq!((plan.grid_cols, plan.grid_rows), (3, 2));
        assert_eq!(brute_force(geom(1344, 896), &cfg), (3, 2));
    }

    #[test]
    fn plan_json_shape() {
        let plan = select_partition(geom(896, 448), &PartitionConfig::default()).unwrap();
        let v = plan.to_json();
        assert_eq!(v["grid"], serde_json::json!([2, 1]));
        assert_eq!(v["slice"], serde_json::json!([448, 448]));
        assert_eq!(v["tokens_total"], 128);
    }

    #[test]
    fn rejects_zero_geometry_and_config() {
        assert!(ImageGeometry::new(0, 5).is_err());
        let cfg = PartitionConfig {
            max_slices: 0,
            ..Default::default()
        };
        assert!(select_partition(geom(5, 5), &cfg).is_err());
    }

    #[test]
    fn exact_tiling_reconstructs_source() {
        let img = Raster::from_fn(896, 448, 3, |x, y, c| {
            ((x * 7 + y * 3 + c * 11) % 251) as u8
        })
        .unwrap();
        let plan = select_partition(geom(896, 448), &PartitionConfig::default()).unwrap();
        let slices = slice_image(&img, &plan).unwrap();
        assert_eq!(slices.len(), 2);
        for (i, s) in slices.iter().enumerate() {
            assert_eq!((s.width(), s.height()), (448, 448));
            for y in 0..448 {
                for x in 0..448 {
                    for c in 0..3 {
                        assert_eq!(s.get(x, y, c), img.get(i * 448 + x, y, c));
                    }
                }
            }
        }
    }

    #[test]
    fn identity_plan_returns_resized_original() {
        let img = Raster::from_fn(300, 200, 1, |x, y, _| ((x + y) % 256) as u8).unwrap();
        let plan = select_partition(geom(300, 200), &PartitionConfig::default()).unwrap();
        assert_eq!(plan.slice_count(), 1);
        let slices = slice_image(&img, &plan).unwrap();
        assert_eq!(slices, vec![img]);
    }

    #[test]
    fn slice_pixels_sum_to_resized_count() {
        let cfg = PartitionConfig::default();
        for (w, h) in [(1000, 700), (1500, 333), (97, 2001)] {
            let img = Raster::filled(w, h, 1, 9).unwrap();
            let plan = select_partition(geom(w as u32, h as u32), &cfg).unwrap();
            let slices = slice_image(&img, &plan).unwrap();
            let (rw, rh) = plan.resized_geometry();
            let total: usize = slices.iter().map(|s| s.width() * s.height()).sum();
            assert_eq!(total, (rw * rh) as usize);
            assert!(rw >= w as u32 && rh >= h as u32);
        }
    }

    #[test]
    fn slice_rejects_wrong_image() {
        let plan = select_partition(geom(896, 448), &PartitionConfig::default()).unwrap();
        let img = Raster::filled(10, 10, 1, 0).unwrap();
        assert!(matches!(
            slice_image(&img, &plan),
            Err(PartitionError::Mismatch { .. })
        ));
    }

    #[test]
    fn ideal_count_monotone_in_area_for_fixed_aspect() {
        for (aw, ah) in [(1u32, 1u32), (4, 3), (16, 9), (1, 5)] {
            let mut last = 0;
            for k in 1..200u32 {
                let n = ideal_slice_count(geom(aw * k * 8, ah * k * 8), 448, 9);
                assert!(n >= last);
                last = n;
            }
        }
    }

    #[test]
    fn deterministic() {
        let cfg = PartitionConfig::default();
        let a = select_partition(geom(1234, 567), &cfg).unwrap();
        let b = select_partition(geom(1234, 567), &cfg).unwrap();
        assert_eq!(a, b);
    }
}
