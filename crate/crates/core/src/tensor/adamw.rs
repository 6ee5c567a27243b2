//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-3,
        }
    }
}

/// Per-parameter moment estimates plus the shared step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState {
    pub config: AdamWConfig,
    step: u64,
    first_moment: Vec<Vec<f32>>,
    second_moment: Vec<Vec<f32>>,
}

impl AdamWState {
    /// Zeroed moments matching `params`.
    pub fn new(config: AdamWConfig, params: &[Tensor<f32>]) -> Self {
        let zeros: Vec<Vec<f32>> = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Self {
            config,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// Rebuilds a state from stored buffers (checkpoint reload).
    pub fn from_parts(
        config: AdamWConfig,
        step: u64,
        first_moment: Vec<Vec<f32>>,
        second_moment: Vec<Vec<f32>>,
    ) -> Result<Self> {
        if first_moment.len() != second_moment.len()
            || first_moment
                .iter()
                .zip(&second_moment)
                .any(|(m, v)| m.len() != v.len())
        {
            return Err(Error::validation("AdamW moment buffers disagree in shape"));
        }
        Ok(Self {
            config,
            step,
            first_moment,
            second_moment,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Vec<f32>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<f32>] {
        &self.second_moment
    }

    /// One optimizer step.
    ///
    /// `grads[i] == None` leaves parameter `i` and its moments untouched
    /// (frozen). Gradients are scanned for NaN before anything is modified,
    /// so an aborted step leaves every buffer as it was.
    pub fn step(
        &mut self,
        params: &mut [Tensor<f32>],
        grads: &[Option<&[f32]>],
        names: &[String],
    ) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::Dimension {
                op: "adamw_step",
                lhs: vec![params.len(), grads.len()],
                rhs: vec![self.first_moment.len()],
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let name = names.get(i).map(String::as_str).unwrap_or("?");
            if p.numel() != self.first_moment[i].len() {
                return Err(Error::Dimension {
                    op: "adamw_step",
                    lhs: p.shape().to_vec(),
                    rhs: vec![self.first_moment[i].len()],
                });
            }
            if let Some(g) = g {
                if g.len() != p.numel() {
                    return Err(Error::Dimension {
                        op: "adamw_step",
                        lhs: p.shape().to_vec(),
                        rhs: vec![g.len()],
                    });
                }
                if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Numerical(format!(
                        "non-finite gradient {} in parameter '{name}' at element {j}",
                        g[j]
                    )));
                }
            }
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let decay = 1.0 - c.lr * c.weight_decay;

        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.iter()).zip(m).zip(v) {
                *w *= decay;
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}
