//! Rotation-plus-translation warps with bilinear sampling and zero fill.
//!
//! Coordinates are `(x, y) = (column, row)` with `y` pointing down. A
//! transform maps an input location `p` to `R(θ)·(p − c) + c + t`, where `c`
//! is the image center; positive angles therefore turn content clockwise on
//! screen.

use serde::{Deserialize, Serialize};

use super::Image;
use crate::{Error, Result};

/// Largest rotation accepted by [`apply_rigid`], in degrees.
pub const MAX_RIGID_ROTATION_DEG: f64 = 45.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation_deg: f64,
    pub tx: f64,
    pub ty: f64,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation_deg: 0.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn new(rotation_deg: f64, tx: f64, ty: f64) -> Self {
        Self {
            rotation_deg,
            tx,
            ty,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    fn rotate(v: (f64, f64), deg: f64) -> (f64, f64) {
        let (s, c) = deg.to_radians().sin_cos();
        (c * v.0 - s * v.1, s * v.0 + c * v.1)
    }

    /// The transform undoing `self`.
    pub fn inverse(&self) -> Self {
        let (x, y) = Self::rotate((self.tx, self.ty), -self.rotation_deg);
        Self::new(-self.rotation_deg, -x, -y)
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &RigidTransform) -> Self {
        let (x, y) = Self::rotate((self.tx, self.ty), next.rotation_deg);
        Self::new(self.rotation_deg + next.rotation_deg, x + next.tx, y + next.ty)
    }

    /// Checks `|rotation| ≤ 45°`, `|tx| ≤ width/4`, `|ty| ≤ height/4`.
    pub fn validate_for(&self, height: usize, width: usize) -> Result<()> {
        let finite = self.rotation_deg.is_finite() && self.tx.is_finite() && self.ty.is_finite();
        if !finite
            || self.rotation_deg.abs() > MAX_RIGID_ROTATION_DEG
            || self.tx.abs() > width as f64 / 4.0
            || self.ty.abs() > height as f64 / 4.0
        {
            return Err(Error::validation(format!(
                "rigid transform {self:?} outside limits for a {height}x{width} image \
                 (|rotation| <= 45 deg, |tx| <= width/4, |ty| <= height/4)"
            )));
        }
        Ok(())
    }
}

/// Bilinear value at `(x, y)`, treating everything outside the grid as 0.
#[inline]
fn sample_zero(px: &[f32], h: usize, w: usize, x: f64, y: f64) -> f32 {
    if x <= -1.0 || y <= -1.0 || x >= w as f64 || y >= h as f64 {
        return 0.0;
    }
    let (xf, yf) = (x.floor(), y.floor());
    let (x0, y0) = (xf as isize, yf as isize);
    let (fx, fy) = ((x - xf) as f32, (y - yf) as f32);
    let at = |r: isize, c: isize| -> f32 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            px[r as usize * w + c as usize]
        }
    };
    let top = (1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1);
    let bottom = (1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1);
    (1.0 - fy) * top + fy * bottom
}

/// Warps without range checks; used by registration and augmentation.
pub(crate) fn warp_into(img: &Image, t: &RigidTransform, out: &mut [f32]) {
    warp_padded(img, t, 0, out);
}

/// Like [`warp_into`] but onto a canvas extended by `pad` pixels on every
/// side, so `out` is `(h + 2·pad) × (w + 2·pad)`. With integer translations,
/// the warp by `(θ, tx, ty)` is the `h × w` window of the `(θ, 0, 0)` canvas
/// at offset `(pad − ty, pad − tx)`.
pub(crate) fn warp_padded(img: &Image, t: &RigidTransform, pad: usize, out: &mut [f32]) {
    let (h, w) = (img.height(), img.width());
    let (ch, cw) = (h + 2 * pad, w + 2 * pad);
    debug_assert_eq!(out.len(), ch * cw);
    let px = img.pixels();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (s, c) = t.rotation_deg.to_radians().sin_cos();
    let p = pad as f64;
    // inverse map R(−θ)·(p − c − t) + c, affine in the column index
    let dx0 = -cx - t.tx - p;
    for r in 0..ch {
        let dy = (r as f64 - p - cy) - t.ty;
        let ax = cx + (c * dx0 + s * dy);
        let ay = cy + (c * dy - s * dx0);
        let row = &mut out[r * cw..(r + 1) * cw];
        for (col, o) in row.iter_mut().enumerate() {
            let sx = ax + c * col as f64;
            let sy = ay - s * col as f64;
            // truncation equals floor on the non-negative fast path
            let (xi, yi) = (sx as usize, sy as usize);
            let v = if sx >= 0.0 && sy >= 0.0 && xi < w - 1 && yi < h - 1 {
                let i = yi * w + xi;
                let (fx, fy) = ((sx - xi as f64) as f32, (sy - yi as f64) as f32);
                let top = px[i] + fx * (px[i + 1] - px[i]);
                let bottom = px[i + w] + fx * (px[i + w + 1] - px[i + w]);
                top + fy * (bottom - top)
            } else {
                sample_zero(px, h, w, sx, sy)
            };
            *o = v.clamp(0.0, 1.0);
        }
    }
}

pub(crate) fn warp(img: &Image, t: &RigidTransform) -> Image {
    if t.is_identity() {
        return img.clone();
    }
    let mut out = vec![0.0; img.pixels().len()];
    warp_into(img, t, &mut out);
    Image::from_parts(img.height(), img.width(), out)
}

/// Rotates about the image center, then translates; bilinear, zero fill.
pub fn apply_rigid(img: &Image, t: &RigidTransform) -> Result<Image> {
    t.validate_for(img.height(), img.width())?;
    Ok(warp(img, t))
}
