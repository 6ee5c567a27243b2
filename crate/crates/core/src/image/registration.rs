//! Rigid registration by exhaustive coarse grid plus step-halving refinement.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::rigid::{warp_into, warp_padded, RigidTransform};
use super::Image;
use crate::metrics::{SsimConfig, SsimPlan};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegistrationConfig {
    /// Coarse grid covers `[-rotation_range_deg, rotation_range_deg]`.
    pub rotation_range_deg: f64,
    pub rotation_step_deg: f64,
    pub translation_range_px: f64,
    pub translation_step_px: f64,
    /// Refinement halves the step until it reaches this value.
    pub min_step: f64,
    /// Objective; normally the brightness-normalized variant.
    pub ssim: SsimConfig,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            rotation_range_deg: 10.0,
            rotation_step_deg: 2.0,
            translation_range_px: 8.0,
            translation_step_px: 2.0,
            min_step: 0.25,
            ssim: SsimConfig::brightness_normalized(),
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.rotation_step_deg)
            || !ok(self.translation_step_px)
            || !ok(self.min_step)
            || !(self.rotation_range_deg >= 0.0 && self.rotation_range_deg <= 45.0)
            || !(self.translation_range_px >= 0.0 && self.translation_range_px.is_finite())
        {
            return Err(Error::validation(format!("invalid registration config {self:?}")));
        }
        self.ssim.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    /// Maps `moving` onto `fixed`.
    pub transform: RigidTransform,
    /// Objective value at `transform`.
    pub score: f64,
}

/// Candidate ordering: higher score first, then smaller parameter magnitude.
fn better(a: (f64, RigidTransform), b: (f64, RigidTransform)) -> bool {
    if a.0 != b.0 {
        return a.0 > b.0;
    }
    let key = |t: &RigidTransform| {
        (
            t.rotation_deg.abs() + t.tx.abs() + t.ty.abs(),
            t.rotation_deg.abs(),
            t.tx.abs(),
            t.ty.abs(),
        )
    };
    let (ka, kb) = (key(&a.1), key(&b.1));
    if ka != kb {
        return ka < kb;
    }
    // sign-only ties: prefer non-negative parameters
    (a.1.rotation_deg, a.1.tx, a.1.ty) > (b.1.rotation_deg, b.1.tx, b.1.ty)
}

struct Objective<'a> {
    moving: &'a Image,
    plan: SsimPlan,
    warped: Vec<f32>,
    // keyed on parameters in units of 1/1024 so revisits are free
    cache: HashMap<(i64, i64, i64), f64>,
}

fn cache_key(t: &RigidTransform) -> (i64, i64, i64) {
    let q = |v: f64| (v * 1024.0).round() as i64;
    (q(t.rotation_deg), q(t.tx), q(t.ty))
}

impl Objective<'_> {
    fn eval(&mut self, t: RigidTransform) -> f64 {
        let key = cache_key(&t);
        if let Some(&s) = self.cache.get(&key) {
            return s;
        }
        warp_into(self.moving, &t, &mut self.warped);
        let s = self.plan.score_pixels(&self.warped);
        self.cache.insert(key, s);
        s
    }
}

fn grid(range: f64, step: f64) -> Vec<f64> {
    let n = (range / step + 1e-9).floor() as i64;
    (-n..=n).map(|i| i as f64 * step).collect()
}

/// Registration with the default search grid.
pub fn register_rigid(fixed: &Image, moving: &Image) -> Result<RigidTransform> {
    Ok(register_rigid_with(fixed, moving, &RegistrationConfig::default())?.transform)
}

/// Finds the rigid transform of `moving` that best matches `fixed`.
///
/// Every point of the coarse grid is scored; the best one (ties going to the
/// smallest parameters) seeds a pattern search that tries ± one step along each
/// axis, moves while the objective strictly improves, and halves the step down
/// to `min_step`.
pub fn register_rigid_with(
    fixed: &Image,
    moving: &Image,
    cfg: &RegistrationConfig,
) -> Result<RegistrationResult> {
    fixed.check_same_dims(moving, "register_rigid")?;
    cfg.validate()?;
    let mut obj = Objective {
        moving,
        plan: SsimPlan::new(fixed, &cfg.ssim)?,
        warped: vec![0.0; moving.pixels().len()],
        cache: HashMap::new(),
    };

    let rots = grid(cfg.rotation_range_deg, cfg.rotation_step_deg);
    let shifts = grid(cfg.translation_range_px, cfg.translation_step_px);
    // Integer shifts of one rotated canvas replace per-candidate warps, and
    // the canvas window statistics are shared by all shifts.
    let integral = shifts.iter().all(|v| v.fract() == 0.0);
    let pad = shifts.iter().fold(0.0f64, |m, v| m.max(v.abs())) as usize;
    let (ch, cw) = (fixed.height() + 2 * pad, fixed.width() + 2 * pad);
    let mut canvas = vec![0.0f32; if integral { ch * cw } else { 0 }];
    let mut best = (f64::NEG_INFINITY, RigidTransform::IDENTITY);
    for &r in &rots {
        let stats = integral.then(|| {
            warp_padded(moving, &RigidTransform::new(r, 0.0, 0.0), pad, &mut canvas);
            obj.plan.canvas_stats(&canvas, ch, cw)
        });
        for &ty in &shifts {
            for &tx in &shifts {
                let t = RigidTransform::new(r, tx, ty);
                let score = match &stats {
                    Some(st) => {
                        let s = obj.plan.score_window(st, (pad as f64 - ty) as usize, (pad as f64 - tx) as usize);
                        obj.cache.insert(cache_key(&t), s);
                        s
                    }
                    None => obj.eval(t),
                };
                let cand = (score, t);
                if better(cand, best) {
                    best = cand;
                }
            }
        }
    }

    // refinement stays within one coarse step of the grid
    let rot_lim = cfg.rotation_range_deg + cfg.rotation_step_deg;
    let t_lim = cfg.translation_range_px + cfg.translation_step_px;
    let mut step = cfg.rotation_step_deg.max(cfg.translation_step_px) / 2.0;
    loop {
        let step_now = step.max(cfg.min_step);
        loop {
            let c = best.1;
            let moves = [
                (step_now, 0.0, 0.0),
                (-step_now, 0.0, 0.0),
                (0.0, step_now, 0.0),
                (0.0, -step_now, 0.0),
                (0.0, 0.0, step_now),
                (0.0, 0.0, -step_now),
            ];
            let mut improved = false;
            for (dr, dx, dy) in moves {
                let t = RigidTransform::new(c.rotation_deg + dr, c.tx + dx, c.ty + dy);
                if t.rotation_deg.abs() > rot_lim || t.tx.abs() > t_lim || t.ty.abs() > t_lim {
                    continue;
                }
                let cand = (obj.eval(t), t);
                if cand.0 > best.0 {
                    best = cand;
                    improved = true;
                }
            }
            if !improved {
                break;
            }
        }
        if step_now <= cfg.min_step {
            break;
        }
        step = step_now / 2.0;
    }

    Ok(RegistrationResult {
        transform: best.1,
        score: best.0,
    })
}
