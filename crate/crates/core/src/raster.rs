//! 8-bit interleaved pixel buffer shared by the partitioner and the
//! corruption engine.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RasterError {
    #[error("buffer of {actual} bytes does not match {width}x{height}x{channels}")]
    BufferSize {
        width: usize,
        height: usize,
        channels: usize,
        actual: usize,
    },
    #[error("unsupported channel count {0}; expected 1, 3 or 4")]
    Channels(usize),
    #[error("empty geometry {0}x{1}")]
    Empty(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Raster {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<u8>,
    ) -> Result<Self, RasterError> {
        if !matches!(channels, 1 | 3 | 4) {
            return Err(RasterError::Channels(channels));
        }
        if width == 0 || height == 0 {
            return Err(RasterError::Empty(width, height));
        }
        if data.len() != width * height * channels {
            return Err(RasterError::BufferSize {
                width,
                height,
                channels,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(
        width: usize,
        height: usize,
        channels: usize,
        value: u8,
    ) -> Result<Self, RasterError> {
        Self::new(
            width,
            height,
            channels,
            vec![value; width * height * channels],
        )
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> u8,
    ) -> Result<Self, RasterError> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    fn offset(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[self.offset(x, y, c)]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        let i = self.offset(x, y, c);
        self.data[i] = v;
    }

    /// Copies the `w×h` window whose top-left corner is `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Raster {
        let mut data = Vec::with_capacity(w * h * self.channels);
        for row in y..y + h {
            let start = self.offset(x, row, 0);
            data.extend_from_slice(&self.data[start..start + w * self.channels]);
        }
        Raster {
            width: w,
            height: h,
            channels: self.channels,
            data,
        }
    }

    /// Bilinear resize with half-pixel centers. Same-size resize is a copy.
    pub fn resize_bilinear(&self, new_w: usize, new_h: usize) -> Raster {
        if new_w == self.width && new_h == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / new_w as f64;
        let sy = self.height as f64 / new_h as f64;
        let mut data = Vec::with_capacity(new_w * new_h * self.channels);
        for y in 0..new_h {
            let (y0, y1, fy) = source_coord(y, sy, self.height);
            for x in 0..new_w {
                let (x0, x1, fx) = source_coord(x, sx, self.width);
                for c in 0..self.channels {
                    let p00 = self.get(x0, y0, c) as f64;
                    let p10 = self.get(x1, y0, c) as f64;
                    let p01 = self.get(x0, y1, c) as f64;
                    let p11 = self.get(x1, y1, c) as f64;
                    let top = p00 + (p10 - p00) * fx;
                    let bottom = p01 + (p11 - p01) * fx;
                    let v = top + (bottom - top) * fy;
                    data.push(v.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        Raster {
            width: new_w,
            height: new_h,
            channels: self.channels,
            data,
        }
    }
}

fn source_coord(dst: usize, scale: f64, len: usize) -> (usize, usize, f64) {
    let src = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(len - 1);
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, src - i0 as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_buffers() {
        assert!(matches!(
            Raster::new(2, 2, 1, vec![0; 3]),
            Err(RasterError::BufferSize { .. })
        ));
        assert_eq!(
            Raster::new(2, 2, 2, vec![0; 8]),
            Err(RasterError::Channels(2))
        );
        assert_eq!(Raster::new(0, 2, 1, vec![]), Err(RasterError::Empty(0, 2)));
    }

    #[test]
    fn resize_constant_stays_constant() {
        let r = Raster::filled(7, 5, 3, 77).unwrap();
        let out = r.resize_bilinear(13, 4);
        assert!(out.data().iter().all(|&v| v == 77));
        assert_eq!(out.data().len(), 13 * 4 * 3);
    }

    #[test]
    fn upsample_by_two_interpolates() {
        let r = Raster::new(2, 1, 1, vec![0, 100]).unwrap();
        let out = r.resize_bilinear(4, 1);
        // half-pixel centers: src x = -0.25 (clamped), 0.25, 0.75, 1.25 (clamped)
        assert_eq!(out.data(), &[0, 25, 75, 100]);
    }

    #[test]
    fn crop_takes_window() {
        let r = Raster::from_fn(4, 3, 1, |x, y, _| (y * 4 + x) as u8).unwrap();
        let c = r.crop(1, 1, 2, 2);
        assert_eq!(c.data(), &[5, 6, 9, 10]);
    }
}
