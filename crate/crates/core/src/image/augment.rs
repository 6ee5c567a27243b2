//! Structure-preserving augmentations applied to each view before embedding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rigid::{warp, RigidTransform};
use super::Image;
use crate::{Error, Result};

/// One draw from the augmentation family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugmentationSpec {
    Hflip,
    Vflip,
    Rotate { angle_deg: f32 },
    /// `p → clamp(0.5 + scale·(p − 0.5), 0, 1)`
    Contrast { scale: f32 },
}

/// Parameter ranges for rotations and contrast changes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationRanges {
    pub max_rotation_deg: f32,
    pub contrast_min: f32,
    pub contrast_max: f32,
}

impl Default for AugmentationRanges {
    fn default() -> Self {
        Self {
            max_rotation_deg: 15.0,
            contrast_min: 0.8,
            contrast_max: 1.25,
        }
    }
}

impl AugmentationRanges {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_rotation_deg >= 0.0 && self.max_rotation_deg <= 45.0)
            || !(self.contrast_min > 0.0 && self.contrast_min <= self.contrast_max)
        {
            return Err(Error::validation(format!("invalid augmentation ranges {self:?}")));
        }
        Ok(())
    }
}

impl AugmentationSpec {
    pub fn validate(&self, ranges: &AugmentationRanges) -> Result<()> {
        match *self {
            AugmentationSpec::Rotate { angle_deg }
                if !(angle_deg.abs() <= ranges.max_rotation_deg) =>
            {
                Err(Error::validation(format!(
                    "rotation {angle_deg} deg outside ±{}",
                    ranges.max_rotation_deg
                )))
            }
            AugmentationSpec::Contrast { scale }
                if !(scale >= ranges.contrast_min && scale <= ranges.contrast_max) =>
            {
                Err(Error::validation(format!(
                    "contrast scale {scale} outside [{}, {}]",
                    ranges.contrast_min, ranges.contrast_max
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Applies `spec` after checking it against the default ranges.
pub fn apply_augmentation(img: &Image, spec: &AugmentationSpec) -> Result<Image> {
    apply_augmentation_with(img, spec, &AugmentationRanges::default())
}

pub fn apply_augmentation_with(
    img: &Image,
    spec: &AugmentationSpec,
    ranges: &AugmentationRanges,
) -> Result<Image> {
    spec.validate(ranges)?;
    let (h, w) = (img.height(), img.width());
    let px = img.pixels();
    let out = match *spec {
        AugmentationSpec::Hflip => {
            let mut out = Vec::with_capacity(px.len());
            for row in px.chunks(w) {
                out.extend(row.iter().rev());
            }
            Image::from_parts(h, w, out)
        }
        AugmentationSpec::Vflip => {
            let mut out = Vec::with_capacity(px.len());
            for row in px.chunks(w).rev() {
                out.extend_from_slice(row);
            }
            Image::from_parts(h, w, out)
        }
        AugmentationSpec::Rotate { angle_deg } => {
            warp(img, &RigidTransform::new(angle_deg as f64, 0.0, 0.0))
        }
        AugmentationSpec::Contrast { scale } => {
            let out = px
                .iter()
                .map(|&p| (0.5 + scale * (p - 0.5)).clamp(0.0, 1.0))
                .collect();
            Image::from_parts(h, w, out)
        }
    };
    Ok(out)
}

/// Uniform choice of kind, then uniform parameters within `ranges`.
pub fn sample_augmentation<R: Rng + ?Sized>(rng: &mut R, ranges: &AugmentationRanges) -> AugmentationSpec {
    match rng.random_range(0..4u32) {
        0 => AugmentationSpec::Hflip,
        1 => AugmentationSpec::Vflip,
        2 => {
            let m = ranges.max_rotation_deg;
            AugmentationSpec::Rotate {
                angle_deg: if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 },
            }
        }
        _ => AugmentationSpec::Contrast {
            scale: rng.random_range(ranges.contrast_min..=ranges.contrast_max),
        },
    }
}
