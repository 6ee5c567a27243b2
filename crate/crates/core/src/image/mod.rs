//! Grayscale images, file formats, augmentations and rigid alignment.

mod augment;
mod io;
mod registration;
mod rigid;

use crate::{Error, Result};

pub use augment::{
    apply_augmentation, apply_augmentation_with, sample_augmentation, AugmentationRanges,
    AugmentationSpec,
};
pub use io::{load_image, read_tensor_file, save_image, write_tensor_file, RawTensor};
pub use registration::{register_rigid, register_rigid_with, RegistrationConfig, RegistrationResult};
pub use rigid::{apply_rigid, RigidTransform};
pub(crate) use io::Reader;
pub(crate) use rigid::warp as warp_unchecked;

/// Smallest accepted side length: an 11×11 SSIM window plus margins.
pub const MIN_SIDE: usize = 16;

/// Row-major grayscale image with pixels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(Error::validation(format!(
                "image is {height}x{width}; both sides must be at least {MIN_SIDE}"
            )));
        }
        if pixels.len() != height * width {
            return Err(Error::validation(format!(
                "{height}x{width} image needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        if let Some(i) = pixels
            .iter()
            .position(|p| !p.is_finite() || !(0.0..=1.0).contains(p))
        {
            return Err(Error::validation(format!(
                "pixel {i} has value {} outside [0, 1]",
                pixels[i]
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    /// Builds an image from `f(row, col)`, clamping into `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                let v = f(r, c);
                pixels.push(if v.is_nan() { v } else { v.clamp(0.0, 1.0) });
            }
        }
        Self::new(height, width, pixels)
    }

    /// Callers guarantee the invariants (same dims as an existing image,
    /// values already clamped).
    pub(crate) fn from_parts(height: usize, width: usize, pixels: Vec<f32>) -> Self {
        debug_assert_eq!(pixels.len(), height * width);
        debug_assert!(pixels.iter().all(|p| (0.0..=1.0).contains(p)));
        Self {
            height,
            width,
            pixels,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub(crate) fn check_same_dims(&self, other: &Image, what: &str) -> Result<()> {
        if !self.same_dims(other) {
            return Err(Error::validation(format!(
                "{what}: image dimensions differ ({}x{} vs {}x{})",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    /// Per-image min-max stretch to `[0, 1]`; a constant image maps to zeros.
    pub fn min_max_normalized(&self) -> Image {
        let (lo, hi) = self
            .pixels
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &p| (lo.min(p), hi.max(p)));
        let span = hi - lo;
        let pixels = if span > 0.0 {
            self.pixels
                .iter()
                .map(|&p| ((p - lo) / span).clamp(0.0, 1.0))
                .collect()
        } else {
            vec![0.0; self.pixels.len()]
        };
        Self::from_parts(self.height, self.width, pixels)
    }

    /// Rescales so the shorter side equals `size` (bilinear), then crops the
    /// central `size × size` square. Returns a clone when already that size.
    pub fn resized_center_crop(&self, size: usize) -> Result<Image> {
        if size < MIN_SIDE {
            return Err(Error::validation(format!("target size {size} below {MIN_SIDE}")));
        }
        if self.height == size && self.width == size {
            return Ok(self.clone());
        }
        let scale = size as f64 / self.height.min(self.width) as f64;
        let (sh, sw) = (
            ((self.height as f64 * scale).round() as usize).max(size),
            ((self.width as f64 * scale).round() as usize).max(size),
        );
        let (off_r, off_c) = ((sh - size) / 2, (sw - size) / 2);
        let mut pixels = Vec::with_capacity(size * size);
        for r in 0..size {
            // pixel-center aligned mapping, edge-clamped
            let sy = ((r + off_r) as f64 + 0.5) / scale - 0.5;
            for c in 0..size {
                let sx = ((c + off_c) as f64 + 0.5) / scale - 0.5;
                pixels.push(self.sample_clamped(sx, sy).clamp(0.0, 1.0));
            }
        }
        Ok(Self::from_parts(size, size, pixels))
    }

    fn sample_clamped(&self, x: f64, y: f64) -> f32 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = ((x - x0 as f64) as f32, (y - y0 as f64) as f32);
        let p = |r: usize, c: usize| self.pixels[r * self.width + c];
        (1.0 - fy) * ((1.0 - fx) * p(y0, x0) + fx * p(y0, x1))
            + fy * ((1.0 - fx) * p(y1, x0) + fx * p(y1, x1))
    }

    /// Encoder input: min-max stretch followed by resize/crop to `size`.
    pub fn standardized(&self, size: usize) -> Result<Image> {
        self.min_max_normalized().resized_center_crop(size)
    }
}
