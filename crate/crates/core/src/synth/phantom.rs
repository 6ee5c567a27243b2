//! Procedural phantoms: a smooth background, band-limited texture and
//! anti-aliased filled ellipses.
//!
//! A phantom is a continuous function of position, so perturbed copies can
//! be rendered through a rigid view transform without resampling artifacts
//! or zero-filled borders.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::image::{Image, RigidTransform, MIN_SIDE};
use crate::rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ellipse {
    /// Center column.
    pub cx: f64,
    /// Center row.
    pub cy: f64,
    pub semi_a: f64,
    pub semi_b: f64,
    pub angle_deg: f64,
    pub intensity: f64,
}

impl Ellipse {
    /// Half extents of the axis-aligned bounding box.
    pub fn half_extents(&self) -> (f64, f64) {
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let (a, b) = (self.semi_a, self.semi_b);
        (
            (a * a * c * c + b * b * s * s).sqrt(),
            (a * a * s * s + b * b * c * c).sqrt(),
        )
    }

    pub fn inside_canvas(&self, size: usize) -> bool {
        let (hx, hy) = self.half_extents();
        let hi = (size - 1) as f64;
        self.cx - hx >= 0.0 && self.cx + hx <= hi && self.cy - hy >= 0.0 && self.cy + hy <= hi
    }

    /// Moves the center the least distance that brings the ellipse inside.
    pub(crate) fn pushed_inside(mut self, size: usize) -> Self {
        let (hx, hy) = self.half_extents();
        let hi = (size - 1) as f64;
        self.cx = self.cx.clamp(hx, (hi - hx).max(hx));
        self.cy = self.cy.clamp(hy, (hi - hy).max(hy));
        self
    }

    /// Fractional coverage of the pixel at `(x, y)`, with a one-pixel ramp
    /// across the boundary.
    #[inline]
    fn coverage(&self, x: f64, y: f64, cos: f64, sin: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (cos * dx + sin * dy) / self.semi_a;
        let v = (-sin * dx + cos * dy) / self.semi_b;
        let rho = (u * u + v * v).sqrt();
        // first-order signed distance in pixels
        let dist = (rho - 1.0) * self.semi_a.min(self.semi_b);
        (0.5 - dist).clamp(0.0, 1.0)
    }
}

/// A plane wave `amplitude · sin(2π(fx·x + fy·y) + phase)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Wave {
    pub fx: f64,
    pub fy: f64,
    pub phase: f64,
    pub amplitude: f64,
}

impl Wave {
    #[inline]
    fn at(&self, x: f64, y: f64) -> f64 {
        self.amplitude * (2.0 * PI * (self.fx * x + self.fy * y) + self.phase).sin()
    }
}

/// Slowly varying field under the structures, plus fine texture on top of
/// everything.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundField {
    pub level: f64,
    /// Change across the full canvas width / height.
    pub gradient_x: f64,
    pub gradient_y: f64,
    pub smooth: Vec<Wave>,
    pub texture: Vec<Wave>,
}

/// Tunable ranges for random phantoms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomParams {
    pub min_structures: usize,
    pub max_structures: usize,
    /// Semi-axis range as a fraction of the canvas size.
    pub min_axis_frac: f64,
    pub max_axis_frac: f64,
    pub texture_waves: usize,
    /// Texture wavelength range in pixels.
    pub min_wavelength: f64,
    pub max_wavelength: f64,
    /// Standard deviation of the texture summed over all waves.
    pub texture_std: f64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            min_structures: 4,
            max_structures: 9,
            min_axis_frac: 0.06,
            max_axis_frac: 0.28,
            texture_waves: 12,
            min_wavelength: 3.0,
            max_wavelength: 9.0,
            texture_std: 0.05,
        }
    }
}

impl PhantomParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_structures > self.max_structures
            || !(0.0 < self.min_axis_frac && self.min_axis_frac <= self.max_axis_frac && self.max_axis_frac < 0.5)
            || !(2.0 <= self.min_wavelength && self.min_wavelength <= self.max_wavelength)
            || !(self.texture_std >= 0.0 && self.texture_std.is_finite())
        {
            return Err(Error::validation(format!("invalid phantom parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub seed: u64,
    /// Square canvas side in pixels.
    pub size: usize,
    pub structures: Vec<Ellipse>,
    pub background: BackgroundField,
}

impl PhantomSpec {
    /// Draws a random phantom; a pure function of `(seed, size, params)`.
    pub fn random(seed: u64, size: usize, params: &PhantomParams) -> Result<Self> {
        params.validate()?;
        if size < MIN_SIDE {
            return Err(Error::validation(format!("canvas size {size} below {MIN_SIDE}")));
        }
        let mut r = rng::stream(seed, 0x5048_414e);
        let s = size as f64;

        let n = r.random_range(params.min_structures..=params.max_structures);
        let mut structures = Vec::with_capacity(n);
        for _ in 0..n {
            let semi_a = s * r.random_range(params.min_axis_frac..=params.max_axis_frac);
            let semi_b = s * r.random_range(params.min_axis_frac..=params.max_axis_frac);
            let angle_deg = r.random_range(0.0..180.0);
            let mut e = Ellipse {
                cx: 0.0,
                cy: 0.0,
                semi_a,
                semi_b,
                angle_deg,
                intensity: r.random_range(0.1..=0.9),
            };
            let (hx, hy) = e.half_extents();
            e.cx = r.random_range(hx..=(s - 1.0 - hx).max(hx));
            e.cy = r.random_range(hy..=(s - 1.0 - hy).max(hy));
            structures.push(e.pushed_inside(size));
        }

        let smooth = (0..3)
            .map(|_| {
                let theta = r.random_range(0.0..PI);
                let cycles = r.random_range(0.3..1.2);
                Wave {
                    fx: cycles * theta.cos() / s,
                    fy: cycles * theta.sin() / s,
                    phase: r.random_range(0.0..2.0 * PI),
                    amplitude: r.random_range(0.02..0.06),
                }
            })
            .collect();
        // equal amplitudes; the sum of k unit sines has variance k/2
        let amp = if params.texture_waves > 0 {
            params.texture_std * (2.0 / params.texture_waves as f64).sqrt()
        } else {
            0.0
        };
        let texture = (0..params.texture_waves)
            .map(|_| {
                let theta = r.random_range(0.0..PI);
                let freq = 1.0 / r.random_range(params.min_wavelength..=params.max_wavelength);
                Wave {
                    fx: freq * theta.cos(),
                    fy: freq * theta.sin(),
                    phase: r.random_range(0.0..2.0 * PI),
                    amplitude: amp,
                }
            })
            .collect();

        Ok(Self {
            seed,
            size,
            structures,
            background: BackgroundField {
                level: r.random_range(0.15..0.4),
                gradient_x: r.random_range(-0.1..0.1),
                gradient_y: r.random_range(-0.1..0.1),
                smooth,
                texture,
            },
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < MIN_SIDE {
            return Err(Error::validation(format!("canvas size {} below {MIN_SIDE}", self.size)));
        }
        for (i, e) in self.structures.iter().enumerate() {
            if !(e.semi_a > 0.0 && e.semi_b > 0.0) {
                return Err(Error::validation(format!("structure {i} has non-positive axes")));
            }
            if !(0.1..=0.9).contains(&e.intensity) {
                return Err(Error::validation(format!(
                    "structure {i} intensity {} outside [0.1, 0.9]",
                    e.intensity
                )));
            }
            if !e.inside_canvas(self.size) {
                return Err(Error::validation(format!(
                    "structure {i} at ({:.2}, {:.2}) extends outside the {}x{} canvas",
                    e.cx, e.cy, self.size, self.size
                )));
            }
        }
        Ok(())
    }

    /// Phantom value at continuous position `(x, y)` = (column, row).
    fn value_at(&self, x: f64, y: f64, trig: &[(f64, f64)]) -> f64 {
        let bg = &self.background;
        let s = self.size as f64;
        let c = (s - 1.0) / 2.0;
        let mut v = bg.level + bg.gradient_x * (x - c) / s + bg.gradient_y * (y - c) / s;
        for w in &bg.smooth {
            v += w.at(x, y);
        }
        for (e, &(cos, sin)) in self.structures.iter().zip(trig) {
            let cov = e.coverage(x, y, cos, sin);
            if cov > 0.0 {
                v = v * (1.0 - cov) + e.intensity * cov;
            }
        }
        for w in &bg.texture {
            v += w.at(x, y);
        }
        v
    }

    /// Renders the phantom as seen through `view` (content moved by `view`),
    /// optionally modulated by `gain(x, y)` before clamping.
    pub(crate) fn render_view(&self, view: &RigidTransform, gain: impl Fn(f64, f64) -> f64) -> Image {
        let trig: Vec<(f64, f64)> = self
            .structures
            .iter()
            .map(|e| {
                let (s, c) = e.angle_deg.to_radians().sin_cos();
                (c, s)
            })
            .collect();
        let n = self.size;
        let c = (n as f64 - 1.0) / 2.0;
        let (s, co) = view.rotation_deg.to_radians().sin_cos();
        let mut px = Vec::with_capacity(n * n);
        for r in 0..n {
            for col in 0..n {
                let dx = col as f64 - c - view.tx;
                let dy = r as f64 - c - view.ty;
                let (x, y) = (c + co * dx + s * dy, c + co * dy - s * dx);
                let v = self.value_at(x, y, &trig) * gain(col as f64, r as f64);
                px.push(v.clamp(0.0, 1.0) as f32);
            }
        }
        Image::new(n, n, px).expect("rendered phantom satisfies image invariants")
    }
}

/// Renders `spec` on its own canvas.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Image> {
    spec.validate()?;
    Ok(spec.render_view(&RigidTransform::IDENTITY, |_, _| 1.0))
}
