//! Gaussian-windowed SSIM over fully interior windows.
//!
//! With the luminance term disabled the per-window index is the
//! contrast-structure product `(2σ_ab + C2) / (σ_a² + σ_b² + C2)`, which is
//! invariant to additive intensity shifts. All statistics are accumulated in
//! `f64`.

use serde::{Deserialize, Serialize};

use crate::image::{register_rigid_with, Image, RegistrationConfig, RigidTransform};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimConfig {
    pub window_size: usize,
    pub gaussian_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
    pub luminance_term_enabled: bool,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window_size: 11,
            gaussian_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
            luminance_term_enabled: true,
        }
    }
}

impl SsimConfig {
    /// Default windowing with the luminance term dropped.
    pub fn brightness_normalized() -> Self {
        Self {
            luminance_term_enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_size < 3 || self.window_size % 2 == 0 {
            return Err(Error::validation(format!(
                "window_size must be odd and >= 3, got {}",
                self.window_size
            )));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.gaussian_sigma)
            || !positive(self.k1)
            || !positive(self.k2)
            || !positive(self.dynamic_range)
        {
            return Err(Error::validation(format!(
                "sigma, K1, K2 and dynamic range must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn kernel(&self) -> Vec<f64> {
        let half = (self.window_size / 2) as f64;
        let taps: Vec<f64> = (0..self.window_size)
            .map(|i| {
                let d = i as f64 - half;
                (-d * d / (2.0 * self.gaussian_sigma * self.gaussian_sigma)).exp()
            })
            .collect();
        let sum: f64 = taps.iter().sum();
        taps.into_iter().map(|t| t / sum).collect()
    }
}

/// Separable valid-mode filter: `(h, w)` → `(h − k + 1, w − k + 1)`.
fn blur_valid(src: &[f64], h: usize, w: usize, kernel: &[f64], tmp: &mut Vec<f64>, out: &mut Vec<f64>) {
    let k = kernel.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    tmp.clear();
    tmp.resize(h * ow, 0.0);
    for r in 0..h {
        let row = &src[r * w..(r + 1) * w];
        let dst = &mut tmp[r * ow..(r + 1) * ow];
        for (t, &kv) in kernel.iter().enumerate() {
            for (d, &s) in dst.iter_mut().zip(&row[t..t + ow]) {
                *d += kv * s;
            }
        }
    }
    out.clear();
    out.resize(oh * ow, 0.0);
    for r in 0..oh {
        let dst = &mut out[r * ow..(r + 1) * ow];
        for (t, &kv) in kernel.iter().enumerate() {
            let src_row = &tmp[(r + t) * ow..(r + t + 1) * ow];
            for (d, &s) in dst.iter_mut().zip(src_row) {
                *d += kv * s;
            }
        }
    }
}

/// SSIM against a fixed image with its window statistics cached.
///
/// Registration scores hundreds of candidate warps against one fixed image;
/// the plan keeps the fixed image's local means and variances and reuses
/// scratch buffers between calls.
#[derive(Clone, Debug)]
pub struct SsimPlan {
    cfg: SsimConfig,
    kernel: Vec<f64>,
    height: usize,
    width: usize,
    fixed: Vec<f64>,
    mu_a: Vec<f64>,
    var_a: Vec<f64>,
    buf: Vec<f64>,
    tmp: Vec<f64>,
    mu_b: Vec<f64>,
    e_bb: Vec<f64>,
    e_ab: Vec<f64>,
}

impl SsimPlan {
    pub fn new(fixed: &Image, cfg: &SsimConfig) -> Result<Self> {
        cfg.validate()?;
        let (h, w) = (fixed.height(), fixed.width());
        if h < cfg.window_size || w < cfg.window_size {
            return Err(Error::validation(format!(
                "{h}x{w} image smaller than the {0}x{0} window",
                cfg.window_size
            )));
        }
        let kernel = cfg.kernel();
        let a: Vec<f64> = fixed.pixels().iter().map(|&p| p as f64).collect();
        let mut tmp = Vec::new();
        let mut mu_a = Vec::new();
        blur_valid(&a, h, w, &kernel, &mut tmp, &mut mu_a);
        let sq: Vec<f64> = a.iter().map(|v| v * v).collect();
        let mut var_a = Vec::new();
        blur_valid(&sq, h, w, &kernel, &mut tmp, &mut var_a);
        for (v, m) in var_a.iter_mut().zip(&mu_a) {
            *v -= m * m;
        }
        Ok(Self {
            cfg: *cfg,
            kernel,
            height: h,
            width: w,
            fixed: a,
            mu_a,
            var_a,
            buf: Vec::new(),
            tmp,
            mu_b: Vec::new(),
            e_bb: Vec::new(),
            e_ab: Vec::new(),
        })
    }

    pub fn config(&self) -> &SsimConfig {
        &self.cfg
    }

    /// Mean SSIM between the fixed image and `moving`.
    pub fn score(&mut self, moving: &Image) -> Result<f64> {
        if moving.height() != self.height || moving.width() != self.width {
            return Err(Error::validation(format!(
                "ssim: image dimensions differ ({}x{} vs {}x{})",
                self.height,
                self.width,
                moving.height(),
                moving.width()
            )));
        }
        Ok(self.score_pixels(moving.pixels()))
    }

    /// Same as [`score`](Self::score) on a raw buffer of the fixed image's size.
    pub(crate) fn score_pixels(&mut self, moving: &[f32]) -> f64 {
        let (h, w) = (self.height, self.width);
        debug_assert_eq!(moving.len(), h * w);

        self.buf.clear();
        self.buf.extend(moving.iter().map(|&p| p as f64));
        blur_valid(&self.buf, h, w, &self.kernel, &mut self.tmp, &mut self.mu_b);
        for v in self.buf.iter_mut() {
            *v *= *v;
        }
        blur_valid(&self.buf, h, w, &self.kernel, &mut self.tmp, &mut self.e_bb);
        self.buf.clear();
        self.buf
            .extend(moving.iter().zip(&self.fixed).map(|(&b, &a)| a * b as f64));
        blur_valid(&self.buf, h, w, &self.kernel, &mut self.tmp, &mut self.e_ab);

        let (mu_b, e_bb) = (&self.mu_b, &self.e_bb);
        self.combine(|i| (mu_b[i], e_bb[i]))
    }

    /// Window statistics of a moving canvas larger than the fixed image.
    pub(crate) fn canvas_stats(&mut self, canvas: &[f32], ch: usize, cw: usize) -> CanvasStats {
        let pixels: Vec<f64> = canvas.iter().map(|&p| p as f64).collect();
        let mut mu = Vec::new();
        blur_valid(&pixels, ch, cw, &self.kernel, &mut self.tmp, &mut mu);
        let sq: Vec<f64> = pixels.iter().map(|v| v * v).collect();
        let mut e_bb = Vec::new();
        blur_valid(&sq, ch, cw, &self.kernel, &mut self.tmp, &mut e_bb);
        CanvasStats {
            width: cw,
            valid_width: cw + 1 - self.kernel.len(),
            pixels,
            mu,
            e_bb,
        }
    }

    /// SSIM against the `h × w` window of a canvas at offset `(oy, ox)`.
    ///
    /// Equal bit for bit to [`score_pixels`](Self::score_pixels) on the
    /// cropped window: the blurred sums involve the same values in the same
    /// order.
    pub(crate) fn score_window(&mut self, st: &CanvasStats, oy: usize, ox: usize) -> f64 {
        let (h, w) = (self.height, self.width);
        self.buf.clear();
        for r in 0..h {
            let src = &st.pixels[(oy + r) * st.width + ox..][..w];
            let a = &self.fixed[r * w..(r + 1) * w];
            self.buf.extend(src.iter().zip(a).map(|(&b, &a)| a * b));
        }
        blur_valid(&self.buf, h, w, &self.kernel, &mut self.tmp, &mut self.e_ab);
        let ow = w + 1 - self.kernel.len();
        self.combine(|i| {
            let j = (oy + i / ow) * st.valid_width + ox + i % ow;
            (st.mu[j], st.e_bb[j])
        })
    }

    /// Mean SSIM map given the moving image's local mean and second moment
    /// per window; `e_ab` must already hold the blurred cross product.
    #[inline]
    fn combine(&self, moving_at: impl Fn(usize) -> (f64, f64)) -> f64 {
        let (c1, c2) = (self.cfg.c1(), self.cfg.c2());
        let mut total = 0.0;
        for i in 0..self.mu_a.len() {
            let ma = self.mu_a[i];
            let (mb, ebb) = moving_at(i);
            let var_b = ebb - mb * mb;
            let cov = self.e_ab[i] - ma * mb;
            let mut s = (2.0 * cov + c2) / (self.var_a[i] + var_b + c2);
            if self.cfg.luminance_term_enabled {
                s *= (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
            }
            total += s;
        }
        total / self.mu_a.len() as f64
    }
}

/// Blurred statistics of a padded moving canvas, see
/// [`SsimPlan::score_window`].
pub(crate) struct CanvasStats {
    width: usize,
    valid_width: usize,
    pixels: Vec<f64>,
    mu: Vec<f64>,
    e_bb: Vec<f64>,
}

/// Mean SSIM over all fully interior windows.
pub fn ssim(a: &Image, b: &Image, cfg: &SsimConfig) -> Result<f64> {
    a.check_same_dims(b, "ssim")?;
    SsimPlan::new(a, cfg)?.score(b)
}

/// Registers `synth` onto `real` (maximizing brightness-normalized SSIM with
/// `cfg`'s window) and scores the aligned pair with `cfg`.
pub fn registered_ssim(real: &Image, synth: &Image, cfg: &SsimConfig) -> Result<(f64, RigidTransform)> {
    let reg_cfg = RegistrationConfig {
        ssim: SsimConfig {
            luminance_term_enabled: false,
            ..*cfg
        },
        ..RegistrationConfig::default()
    };
    let found = register_rigid_with(real, synth, &reg_cfg)?;
    if !cfg.luminance_term_enabled {
        return Ok((found.score, found.transform));
    }
    let aligned = crate::image::warp_unchecked(synth, &found.transform);
    Ok((ssim(real, &aligned, cfg)?, found.transform))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::apply_rigid;
    use rand::Rng;

    fn noise(h: usize, w: usize, seed: u64) -> Image {
        let mut r = crate::rng::stream(seed, 0);
        Image::from_fn(h, w, |_, _| r.random::<f32>()).unwrap()
    }

    fn smooth(h: usize, w: usize, phase: f32) -> Image {
        Image::from_fn(h, w, |r, c| {
            let (x, y) = (c as f32 / w as f32, r as f32 / h as f32);
            0.5 + 0.2 * (7.0 * x + phase).sin() * (5.0 * y - phase).cos() + 0.1 * (13.0 * x * y).sin()
        })
        .unwrap()
    }

    #[test]
    fn self_similarity_is_one() {
        for cfg in [SsimConfig::default(), SsimConfig::brightness_normalized()] {
            let a = noise(32, 40, 1);
            assert!((ssim(&a, &a, &cfg).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_without_luminance_are_identical() {
        let a = Image::filled(32, 32, 0.3).unwrap();
        let b = Image::filled(32, 32, 0.7).unwrap();
        let v = ssim(&a, &b, &SsimConfig::brightness_normalized()).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        assert!(ssim(&a, &b, &SsimConfig::default()).unwrap() < 0.9);
    }

    #[test]
    fn exactly_symmetric() {
        let (a, b) = (noise(33, 33, 2), smooth(33, 33, 0.4));
        for cfg in [SsimConfig::default(), SsimConfig::brightness_normalized()] {
            assert_eq!(ssim(&a, &b, &cfg).unwrap(), ssim(&b, &a, &cfg).unwrap());
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = noise(32, 32, 1);
        assert!(ssim(&a, &noise(32, 33, 1), &SsimConfig::default()).is_err());
        let even = SsimConfig {
            window_size: 10,
            ..Default::default()
        };
        assert!(ssim(&a, &a, &even).is_err());
        let big = SsimConfig {
            window_size: 33,
            ..Default::default()
        };
        assert!(ssim(&a, &a, &big).is_err());
    }

    #[test]
    fn registered_score_of_known_warp() {
        let real = smooth(64, 64, 0.3);
        let synth = apply_rigid(&real, &RigidTransform::new(4.0, 3.0, -2.0)).unwrap();
        let (s, t) = registered_ssim(&real, &synth, &SsimConfig::brightness_normalized()).unwrap();
        assert!(s >= 0.95, "score {s}, transform {t:?}");
        let other = smooth(64, 64, 2.5);
        let (s2, _) = registered_ssim(&real, &other, &SsimConfig::brightness_normalized()).unwrap();
        assert!(s2 < s);
    }
}
