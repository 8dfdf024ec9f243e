//! Raster types: single-channel heatmaps and 1- or 3-channel images.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Non-negative `height × width` grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    height: usize,
    width: usize,
    grid: Vec<f64>,
}

impl Heatmap {
    pub fn new(height: usize, width: usize, grid: Vec<f64>) -> Result<Self> {
        if grid.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "grid of {} values for {height}x{width}",
                grid.len()
            )));
        }
        if grid.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput("heatmap entries must be finite and non-negative".into()));
        }
        Ok(Self { height, width, grid })
    }

    pub(crate) fn from_raw(height: usize, width: usize, grid: Vec<f64>) -> Self {
        debug_assert_eq!(grid.len(), height * width);
        Self { height, width, grid }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::from_raw(height, width, vec![0.0; height * width])
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.grid
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.grid[row * self.width + col]
    }

    pub fn sum(&self) -> f64 {
        self.grid.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.grid.iter().copied().fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.grid.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.sum() - 1.0).abs() <= tol
    }

    /// Rescales to unit mass. Fails on an all-zero grid.
    pub fn normalized(&self) -> Result<Heatmap> {
        let total = self.sum();
        if total <= 0.0 {
            return Err(Error::Degenerate("heatmap has zero total mass".into()));
        }
        Ok(Heatmap::from_raw(
            self.height,
            self.width,
            self.grid.iter().map(|v| v / total).collect(),
        ))
    }

    /// 16-bit grayscale PNG, linearly scaled so the maximum maps to 65535.
    pub fn save_png16(&self, path: &Path) -> Result<()> {
        let max = self.max();
        let scale = if max > 0.0 { 65535.0 / max } else { 0.0 };
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
                let v = self.get(y as usize, x as usize) * scale;
                Luma([v.round().clamp(0.0, 65535.0) as u16])
            });
        crate::io::write_atomic_with(path, |file| {
            DynamicImage::ImageLuma16(buf).write_to(file, image::ImageFormat::Png)?;
            Ok(())
        })
    }
}

#[derive(Serialize, Deserialize)]
struct HeatmapRepr {
    resolution: [usize; 2],
    grid: Vec<Vec<f64>>,
}

impl Serialize for Heatmap {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        HeatmapRepr {
            resolution: [self.height, self.width],
            grid: self.grid.chunks(self.width).map(<[f64]>::to_vec).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Heatmap {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = HeatmapRepr::deserialize(deserializer)?;
        let [h, w] = repr.resolution;
        if repr.grid.len() != h || repr.grid.iter().any(|r| r.len() != w) {
            return Err(serde::de::Error::custom("grid shape does not match resolution"));
        }
        Heatmap::new(h, w, repr.grid.concat()).map_err(serde::de::Error::custom)
    }
}

/// `height × width × channels` raster with values in `[0, 1]`, interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidInput(format!("unsupported channel count {channels}")));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {height}x{width}x{channels}",
                pixels.len()
            )));
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput("image values must lie in [0, 1]".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub(crate) fn from_raw(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Self {
        Self {
            height,
            width,
            channels,
            pixels,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.pixels[(row * self.width + col) * self.channels + channel]
    }

    /// Loads PNG or portable graymap/pixmap. Gray inputs stay single-channel.
    pub fn load(path: &Path) -> Result<Image> {
        let img = image::open(path)?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        if img.color().has_color() {
            let rgb = img.to_rgb32f();
            let pixels = rgb.into_raw().into_iter().map(|v| f64::from(v).clamp(0.0, 1.0)).collect();
            Ok(Image::from_raw(h, w, 3, pixels))
        } else {
            let gray = img.to_luma32f();
            let pixels = gray.into_raw().into_iter().map(|v| f64::from(v).clamp(0.0, 1.0)).collect();
            Ok(Image::from_raw(h, w, 1, pixels))
        }
    }

    /// Saves as PNG (8 bits per channel) or, for `.pgm`/`.ppm` paths, as PNM.
    pub fn save(&self, path: &Path) -> Result<()> {
        let quant = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
        let (w, h) = (self.width as u32, self.height as u32);
        let dynamic = if self.channels == 1 {
            let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
                ImageBuffer::from_raw(w, h, self.pixels.iter().map(|v| quant(*v)).collect())
                    .expect("buffer size matches dimensions");
            DynamicImage::ImageLuma8(buf)
        } else {
            let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
                ImageBuffer::from_raw(w, h, self.pixels.iter().map(|v| quant(*v)).collect())
                    .expect("buffer size matches dimensions");
            DynamicImage::ImageRgb8(buf)
        };
        let format = match path.extension().and_then(|e| e.to_str()) {
            Some("pgm") | Some("ppm") | Some("pnm") => image::ImageFormat::Pnm,
            _ => image::ImageFormat::Png,
        };
        crate::io::write_atomic_with(path, |file| {
            dynamic.write_to(file, format)?;
            Ok(())
        })
    }
}
