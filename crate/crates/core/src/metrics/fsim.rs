//! Feature similarity (FSIM) from phase congruency and gradient magnitude.
//!
//! Phase congruency uses a log-Gabor filter bank built in the frequency
//! domain with Kovesi's noise compensation; gradients use the Scharr
//! operator. Pixel values are scaled by 255 internally so the customary
//! constants `T1 = 0.85`, `T2 = 160` apply unchanged.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::{Error, Result};

/// Smallest side accepted by [`fsim`].
pub const FSIM_MIN_SIDE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FsimConfig {
    pub scales: usize,
    pub orientations: usize,
    pub min_wavelength: f64,
    pub mult: f64,
    pub sigma_on_f: f64,
    pub d_theta_on_sigma: f64,
    /// Noise threshold in standard deviations above the noise mean.
    pub noise_k: f64,
    pub epsilon: f64,
    pub t1: f64,
    pub t2: f64,
}

impl Default for FsimConfig {
    fn default() -> Self {
        Self {
            scales: 4,
            orientations: 4,
            min_wavelength: 6.0,
            mult: 2.0,
            sigma_on_f: 0.55,
            d_theta_on_sigma: 1.2,
            noise_k: 2.0,
            epsilon: 1e-4,
            t1: 0.85,
            t2: 160.0,
        }
    }
}

impl FsimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales < 2 || self.orientations < 2 {
            return Err(Error::validation(format!(
                "FSIM needs at least 2 scales and 2 orientations, got {} and {}",
                self.scales, self.orientations
            )));
        }
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.min_wavelength)
            || !pos(self.mult)
            || !pos(self.sigma_on_f)
            || !pos(self.d_theta_on_sigma)
            || !pos(self.epsilon)
            || !pos(self.t1)
            || !pos(self.t2)
            || !(self.noise_k >= 0.0)
        {
            return Err(Error::validation(format!("invalid FSIM config {self:?}")));
        }
        Ok(())
    }
}

/// Per-image maps that FSIM compares; compute once, compare many times.
#[derive(Clone, Debug)]
pub struct FsimFeatures {
    height: usize,
    width: usize,
    phase_congruency: Vec<f64>,
    gradient: Vec<f64>,
}

impl FsimFeatures {
    pub fn phase_congruency(&self) -> &[f64] {
        &self.phase_congruency
    }

    pub fn gradient_magnitude(&self) -> &[f64] {
        &self.gradient
    }
}

/// Frequency coordinate of FFT bin `i` out of `n`, already in unshifted order.
fn freq(i: usize, n: usize) -> f64 {
    let (half, denom) = if n % 2 == 0 { (n / 2, n as f64) } else { ((n - 1) / 2, (n - 1) as f64) };
    if n % 2 == 0 {
        if i < half {
            i as f64 / denom
        } else {
            (i as f64 - n as f64) / denom
        }
    } else if i <= half {
        i as f64 / denom
    } else {
        (i as f64 - n as f64) / denom
    }
}

struct Fft2 {
    h: usize,
    w: usize,
    row_fwd: std::sync::Arc<dyn rustfft::Fft<f64>>,
    row_inv: std::sync::Arc<dyn rustfft::Fft<f64>>,
    col_fwd: std::sync::Arc<dyn rustfft::Fft<f64>>,
    col_inv: std::sync::Arc<dyn rustfft::Fft<f64>>,
    col: Vec<Complex<f64>>,
}

impl Fft2 {
    fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            h,
            w,
            row_fwd: planner.plan_fft_forward(w),
            row_inv: planner.plan_fft_inverse(w),
            col_fwd: planner.plan_fft_forward(h),
            col_inv: planner.plan_fft_inverse(h),
            col: vec![Complex::default(); h],
        }
    }

    /// In-place 2-D transform; the inverse includes the `1/(h·w)` factor.
    fn run(&mut self, data: &mut [Complex<f64>], inverse: bool) {
        let (h, w) = (self.h, self.w);
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        for r in data.chunks_mut(w) {
            row.process(r);
        }
        for c in 0..w {
            for r in 0..h {
                self.col[r] = data[r * w + c];
            }
            col.process(&mut self.col);
            for r in 0..h {
                data[r * w + c] = self.col[r];
            }
        }
        if inverse {
            let s = 1.0 / (h * w) as f64;
            for v in data.iter_mut() {
                *v *= s;
            }
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (_, &mut hi, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    if n % 2 == 1 {
        hi
    } else {
        let lo = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Phase congruency map of `y` (values already on the 0–255 scale).
fn phase_congruency(y: &[f64], h: usize, w: usize, cfg: &FsimConfig) -> Vec<f64> {
    let n = h * w;
    let mut fft = Fft2::new(h, w);

    let mut radius = vec![0.0; n];
    let mut sin_t = vec![0.0; n];
    let mut cos_t = vec![0.0; n];
    let mut lowpass = vec![0.0; n];
    for r in 0..h {
        let fy = freq(r, h);
        for c in 0..w {
            let fx = freq(c, w);
            let i = r * w + c;
            let rad = (fx * fx + fy * fy).sqrt();
            // Butterworth low-pass, cutoff 0.45, order 15
            lowpass[i] = 1.0 / (1.0 + (rad / 0.45).powi(30));
            radius[i] = if i == 0 { 1.0 } else { rad };
            let theta = (-fy).atan2(fx);
            sin_t[i] = theta.sin();
            cos_t[i] = theta.cos();
        }
    }

    let log_sig2 = 2.0 * cfg.sigma_on_f.ln().powi(2);
    let log_gabor: Vec<Vec<f64>> = (0..cfg.scales)
        .map(|s| {
            let fo = 1.0 / (cfg.min_wavelength * cfg.mult.powi(s as i32));
            let mut g: Vec<f64> = radius
                .iter()
                .zip(&lowpass)
                .map(|(&rad, &lp)| (-(rad / fo).ln().powi(2) / log_sig2).exp() * lp)
                .collect();
            g[0] = 0.0;
            g
        })
        .collect();

    let mut image_fft: Vec<Complex<f64>> = y.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.run(&mut image_fft, false);

    let theta_sigma = PI / cfg.orientations as f64 / cfg.d_theta_on_sigma;
    let mut energy_all = vec![0.0; n];
    let mut an_all = vec![0.0; n];
    let mut eo: Vec<Vec<Complex<f64>>> = vec![vec![Complex::default(); n]; cfg.scales];
    let mut ifft_filters: Vec<Vec<f64>> = vec![vec![0.0; n]; cfg.scales];
    let mut buf = vec![Complex::default(); n];

    for o in 0..cfg.orientations {
        let angle = o as f64 * PI / cfg.orientations as f64;
        let (sa, ca) = angle.sin_cos();
        let spread: Vec<f64> = (0..n)
            .map(|i| {
                let ds = sin_t[i] * ca - cos_t[i] * sa;
                let dc = cos_t[i] * ca + sin_t[i] * sa;
                let dtheta = ds.atan2(dc).abs();
                (-dtheta * dtheta / (2.0 * theta_sigma * theta_sigma)).exp()
            })
            .collect();

        let mut sum_an = vec![0.0; n];
        let mut sum_e = vec![0.0; n];
        let mut sum_o = vec![0.0; n];
        let mut em_n = 0.0;
        for s in 0..cfg.scales {
            let filter: Vec<f64> = log_gabor[s].iter().zip(&spread).map(|(g, sp)| g * sp).collect();
            if s == 0 {
                em_n = filter.iter().map(|f| f * f).sum();
            }
            for (b, &f) in buf.iter_mut().zip(&filter) {
                *b = Complex::new(f, 0.0);
            }
            fft.run(&mut buf, true);
            let root_n = (n as f64).sqrt();
            for (d, b) in ifft_filters[s].iter_mut().zip(&buf) {
                *d = b.re * root_n;
            }

            for ((b, f), im) in buf.iter_mut().zip(&filter).zip(&image_fft) {
                *b = im * *f;
            }
            fft.run(&mut buf, true);
            eo[s].copy_from_slice(&buf);
            for i in 0..n {
                sum_an[i] += buf[i].norm();
                sum_e[i] += buf[i].re;
                sum_o[i] += buf[i].im;
            }
        }

        let mut energy = vec![0.0; n];
        for i in 0..n {
            let x_energy = (sum_e[i] * sum_e[i] + sum_o[i] * sum_o[i]).sqrt() + cfg.epsilon;
            let (me, mo) = (sum_e[i] / x_energy, sum_o[i] / x_energy);
            for e in &eo {
                let (ev, ov) = (e[i].re, e[i].im);
                energy[i] += ev * me + ov * mo - (ev * mo - ov * me).abs();
            }
        }

        // noise statistics from the smallest scale's response amplitude
        let mut e2: Vec<f64> = eo[0].iter().map(|c| c.norm_sqr()).collect();
        let mean_e2n = -median(&mut e2) / 0.5f64.ln();
        let noise_power = mean_e2n / em_n;
        let mut sum_an2 = 0.0;
        let mut sum_aiaj = 0.0;
        for i in 0..n {
            for si in 0..cfg.scales {
                let a = ifft_filters[si][i];
                sum_an2 += a * a;
                for f in &ifft_filters[si + 1..] {
                    sum_aiaj += a * f[i];
                }
            }
        }
        let noise_energy2 = 2.0 * noise_power * sum_an2 + 4.0 * noise_power * sum_aiaj;
        let tau = (noise_energy2 / 2.0).max(0.0).sqrt();
        let noise_mean = tau * (PI / 2.0).sqrt();
        let noise_sigma = ((2.0 - PI / 2.0) * tau * tau).sqrt();
        let threshold = (noise_mean + cfg.noise_k * noise_sigma) / 1.7;

        for i in 0..n {
            energy_all[i] += (energy[i] - threshold).max(0.0);
            an_all[i] += sum_an[i];
        }
    }

    energy_all
        .iter()
        .zip(&an_all)
        .map(|(e, a)| e / (a + cfg.epsilon))
        .collect()
}

/// Scharr gradient magnitude with zero padding ("same" size).
fn gradient_magnitude(y: &[f64], h: usize, w: usize) -> Vec<f64> {
    let at = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            y[r as usize * w + c as usize]
        }
    };
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h as isize {
        for c in 0..w as isize {
            let gx = (3.0 * (at(r - 1, c - 1) - at(r - 1, c + 1))
                + 10.0 * (at(r, c - 1) - at(r, c + 1))
                + 3.0 * (at(r + 1, c - 1) - at(r + 1, c + 1)))
                / 16.0;
            let gy = (3.0 * (at(r - 1, c - 1) - at(r + 1, c - 1))
                + 10.0 * (at(r - 1, c) - at(r + 1, c))
                + 3.0 * (at(r - 1, c + 1) - at(r + 1, c + 1)))
                / 16.0;
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    out
}

/// Averages `factor × factor` blocks; large inputs are reduced so the
/// shorter side is roughly 256 before feature extraction.
fn downsample(y: &[f64], h: usize, w: usize, factor: usize) -> (Vec<f64>, usize, usize) {
    if factor <= 1 {
        return (y.to_vec(), h, w);
    }
    let (oh, ow) = (h / factor, w / factor);
    let mut out = vec![0.0; oh * ow];
    let norm = 1.0 / (factor * factor) as f64;
    for r in 0..oh {
        for c in 0..ow {
            let mut acc = 0.0;
            for i in 0..factor {
                for j in 0..factor {
                    acc += y[(r * factor + i) * w + c * factor + j];
                }
            }
            out[r * ow + c] = acc * norm;
        }
    }
    (out, oh, ow)
}

pub fn fsim_features(img: &Image, cfg: &FsimConfig) -> Result<FsimFeatures> {
    cfg.validate()?;
    let (h, w) = (img.height(), img.width());
    if h < FSIM_MIN_SIDE || w < FSIM_MIN_SIDE {
        return Err(Error::validation(format!(
            "FSIM needs images of at least {FSIM_MIN_SIDE}x{FSIM_MIN_SIDE}, got {h}x{w}"
        )));
    }
    let y: Vec<f64> = img.pixels().iter().map(|&p| p as f64 * 255.0).collect();
    let factor = ((h.min(w) as f64 / 256.0).round() as usize).max(1);
    let (y, h, w) = downsample(&y, h, w, factor);
    Ok(FsimFeatures {
        height: h,
        width: w,
        phase_congruency: phase_congruency(&y, h, w, cfg),
        gradient: gradient_magnitude(&y, h, w),
    })
}

/// FSIM between two precomputed feature sets.
pub fn fsim_from_features(a: &FsimFeatures, b: &FsimFeatures, cfg: &FsimConfig) -> Result<f64> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(Error::validation(format!(
            "fsim: feature maps differ in size ({}x{} vs {}x{})",
            a.height, a.width, b.height, b.width
        )));
    }
    let (mut num, mut den, mut gsim_sum) = (0.0, 0.0, 0.0);
    for i in 0..a.phase_congruency.len() {
        let (p1, p2) = (a.phase_congruency[i], b.phase_congruency[i]);
        let (g1, g2) = (a.gradient[i], b.gradient[i]);
        let pc_sim = (2.0 * p1 * p2 + cfg.t1) / (p1 * p1 + p2 * p2 + cfg.t1);
        let g_sim = (2.0 * g1 * g2 + cfg.t2) / (g1 * g1 + g2 * g2 + cfg.t2);
        let pc_max = p1.max(p2);
        num += g_sim * pc_sim * pc_max;
        den += pc_max;
        gsim_sum += g_sim;
    }
    if den > 0.0 {
        Ok(num / den)
    } else {
        // no phase structure in either image: fall back to gradient agreement
        Ok(gsim_sum / a.phase_congruency.len() as f64)
    }
}

pub fn fsim(a: &Image, b: &Image, cfg: &FsimConfig) -> Result<f64> {
    a.check_same_dims(b, "fsim")?;
    fsim_from_features(&fsim_features(a, cfg)?, &fsim_features(b, cfg)?, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn pattern(seed: u64) -> Image {
        let mut r = crate::rng::stream(seed, 3);
        let (fx, fy, ph): (f32, f32, f32) = (r.random_range(0.1..0.5), r.random_range(0.1..0.5), r.random());
        Image::from_fn(48, 48, |i, j| {
            let (x, y) = (j as f32 - 24.0, i as f32 - 24.0);
            let disk = if x * x + y * y < 150.0 { 0.3 } else { 0.0 };
            0.3 + disk + 0.15 * (fx * x + ph * 6.0).sin() * (fy * y).cos()
        })
        .unwrap()
    }

    #[test]
    fn self_similarity_and_symmetry() {
        let cfg = FsimConfig::default();
        let (a, b) = (pattern(1), pattern(2));
        assert!((fsim(&a, &a, &cfg).unwrap() - 1.0).abs() < 1e-4);
        let (ab, ba) = (fsim(&a, &b, &cfg).unwrap(), fsim(&b, &a, &cfg).unwrap());
        assert!((ab - ba).abs() < 1e-6);
        assert!((0.0..=1.0).contains(&ab) && ab < 1.0);
    }

    #[test]
    fn phase_congruency_is_bounded() {
        let f = fsim_features(&pattern(5), &FsimConfig::default()).unwrap();
        assert!(f.phase_congruency().iter().all(|&p| (0.0..=1.0 + 1e-9).contains(&p)));
        assert!(f.phase_congruency().iter().any(|&p| p > 0.05));
    }

    #[test]
    fn odd_sizes_and_constants() {
        let cfg = FsimConfig::default();
        let a = Image::from_fn(33, 35, |r, c| ((r * 5 + c * 3) % 17) as f32 / 17.0).unwrap();
        assert!((fsim(&a, &a, &cfg).unwrap() - 1.0).abs() < 1e-4);
        let flat = Image::filled(32, 32, 0.5).unwrap();
        assert!((fsim(&flat, &flat, &cfg).unwrap() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn rejects_small_and_mismatched() {
        let cfg = FsimConfig::default();
        let small = Image::filled(31, 40, 0.5).unwrap();
        assert!(fsim(&small, &small, &cfg).is_err());
        assert!(fsim(&pattern(1), &Image::filled(48, 40, 0.1).unwrap(), &cfg).is_err());
    }

    #[test]
    fn median_handles_even_counts() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
    }
}
