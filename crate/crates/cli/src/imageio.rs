//! PNG/JPEG to and from the core raster type.

use std::path::Path;

use image::{ColorType, DynamicImage};
use mllm_lab::raster::Raster;

use crate::error::CliError;

pub fn load(path: &Path) -> Result<Raster, CliError> {
    let img = image::open(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, data) = match img {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw()),
        DynamicImage::ImageRgb8(b) => (3, b.into_raw()),
        other if other.color().has_alpha() => (4, other.into_rgba8().into_raw()),
        other if other.color().channel_count() <= 2 => (1, other.into_luma8().into_raw()),
        other => (3, other.into_rgb8().into_raw()),
    };
    Ok(Raster::new(w, h, channels, data)?)
}

pub fn save_png(path: &Path, raster: &Raster) -> Result<(), CliError> {
    let color = match raster.channels() {
        1 => ColorType::L8,
        3 => ColorType::Rgb8,
        _ => ColorType::Rgba8,
    };
    image::save_buffer_with_format(
        path,
        raster.data(),
        raster.width() as u32,
        raster.height() as u32,
        color,
        image::ImageFormat::Png,
    )
    .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}
