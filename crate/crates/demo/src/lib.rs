//! Browser bindings for three interactive operations: partition planning,
//! video token budgets and a corruption preview on a synthetic page.
//!
//! Every export returns plain strings or byte buffers so the same functions
//! run (and are tested) natively.

use std::collections::BTreeMap;
use std::str::FromStr;

use mllm_lab::corruption::{
    apply_levels, render_synthetic_page, CorruptionConfig, LevelKind, TextRegion,
};
use mllm_lab::partition::{select_partition, ImageGeometry, PartitionConfig};
use mllm_lab::tokens::{compression_report, DEFAULT_PATCH_SIDE};
use serde_json::json;
use wasm_bindgen::prelude::*;

pub const PREVIEW_WIDTH: u32 = 320;
pub const PREVIEW_HEIGHT: u32 = 200;

/// Grid plan for a `width × height` image as JSON, with each slice's
/// rectangle in source pixels for drawing.
#[wasm_bindgen]
pub fn partition_plan(width: u32, height: u32, max_slices: u32) -> Result<String, String> {
    let cfg = PartitionConfig {
        max_slices,
        ..PartitionConfig::default()
    };
    let g = ImageGeometry::new(width, height).map_err(|e| e.to_string())?;
    let plan = select_partition(g, &cfg).map_err(|e| e.to_string())?;
    let (cols, rows) = (plan.grid_cols, plan.grid_rows);
    let cells: Vec<[f64; 4]> = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .map(|(r, c)| {
            let (cw, ch) = (width as f64 / cols as f64, height as f64 / rows as f64);
            [c as f64 * cw, r as f64 * ch, cw, ch]
        })
        .collect();
    let mut v = plan.to_json();
    v["cells"] = json!(cells);
    v["slice_count"] = json!(plan.slice_count());
    Ok(v.to_string())
}

/// Token budget report for packed video as JSON.
#[wasm_bindgen]
pub fn token_budget(frames: u32, package_size: u32, queries: u32) -> Result<String, String> {
    let report = compression_report(
        frames as u64,
        package_size as u64,
        queries as u64,
        DEFAULT_PATCH_SIDE,
    )
    .map_err(|e| e.to_string())?;
    serde_json::to_string(&report).map_err(|e| e.to_string())
}

fn preview_regions() -> Vec<TextRegion> {
    vec![
        TextRegion::new("a_title", [16, 14, 220, 22], "Quarterly Report"),
        TextRegion::new("b_line1", [16, 56, 280, 16], "Revenue grew in all regions"),
        TextRegion::new("c_line2", [16, 84, 260, 16], "Costs held flat year over"),
        TextRegion::new("d_total", [16, 130, 150, 18], "Total: 4,210"),
        TextRegion::new("e_note", [190, 168, 110, 14], "see notes"),
    ]
}

/// RGBA pixels (`PREVIEW_WIDTH × PREVIEW_HEIGHT`) of a synthetic document
/// with every text region corrupted at `level` (`none`, `low`, `moderate`
/// or `high`).
#[wasm_bindgen]
pub fn corruption_preview(level: &str, seed: u32) -> Result<Vec<u8>, String> {
    let kind = LevelKind::from_str(level).map_err(|e| e.to_string())?;
    let regions = preview_regions();
    let page = render_synthetic_page(
        PREVIEW_WIDTH as usize,
        PREVIEW_HEIGHT as usize,
        4,
        &regions,
        245,
        30,
    );
    let level = CorruptionConfig::default().level(kind);
    let levels: BTreeMap<String, _> = regions.iter().map(|r| (r.id.clone(), level)).collect();
    let (out, _) =
        apply_levels(&page, &regions, &levels, seed as u64).map_err(|e| e.to_string())?;
    Ok(out.into_data())
}

/// Region boxes of the preview page as JSON, for outlining.
#[wasm_bindgen]
pub fn preview_regions_json() -> String {
    let regions: Vec<_> = preview_regions()
        .into_iter()
        .map(|r| json!({"id": r.id, "bbox": r.bbox, "text": r.text}))
        .collect();
    json!(regions).to_string()
}
