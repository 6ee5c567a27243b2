//! The embedding network: conv blocks, global average pooling, a dense
//! head and L2 normalization.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::EncoderConfig;
use crate::image::Image;
use crate::rng;
use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

/// Unit-norm image embedding.
pub type Embedding = Vec<f32>;

/// Parameter names and shapes, in storage order.
pub fn parameter_layout(cfg: &EncoderConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let mut c_in = 1;
    for (i, &c_out) in cfg.widths.iter().enumerate() {
        out.push((format!("conv{i}.weight"), vec![c_out, c_in, 3, 3]));
        out.push((format!("conv{i}.bias"), vec![c_out]));
        c_in = c_out;
    }
    out.push(("head.weight".to_string(), vec![cfg.embedding_dim, c_in]));
    out.push(("head.bias".to_string(), vec![cfg.embedding_dim]));
    out
}

/// Forward pass on any tape: `x: [N, 1, S, S]` → `[N, embedding_dim]`.
///
/// `params` follow [`parameter_layout`]. Generic so the gradient checker can
/// run the same graph in `f64`.
pub fn forward_graph<T: Scalar>(tape: &mut Tape<T>, params: &[Var], x: Var) -> Result<Var> {
    if params.len() < 6 || params.len() % 2 != 0 {
        return Err(Error::Contract(format!(
            "encoder graph needs conv/bias pairs plus a head, got {} parameters",
            params.len()
        )));
    }
    let blocks = params.len() / 2 - 1;
    let mut h = x;
    for b in 0..blocks {
        h = tape.conv2d(h, params[2 * b], 1, 1)?;
        h = tape.add_bias(h, params[2 * b + 1])?;
        h = tape.relu(h)?;
        h = tape.max_pool2d(h)?;
    }
    let pooled = tape.global_avg_pool(h)?;
    let y = tape.dense(pooled, params[2 * blocks], params[2 * blocks + 1])?;
    tape.l2_normalize(y)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    config: EncoderConfig,
    names: Vec<String>,
    params: Vec<Tensor<f32>>,
}

impl Encoder {
    /// An encoder with no weights; [`embed`](Self::embed) fails until
    /// parameters are loaded.
    pub fn uninitialized(config: EncoderConfig) -> Self {
        Self {
            config,
            names: Vec::new(),
            params: Vec::new(),
        }
    }

    /// He-normal conv weights, scaled-normal head, zero biases.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(seed, 0x494e_4954);
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape) in parameter_layout(&config) {
            let n: usize = shape.iter().product();
            let data = if name.ends_with(".bias") {
                vec![0.0; n]
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let gain = if name.starts_with("conv") { 2.0 } else { 1.0 };
                let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("positive std");
                (0..n).map(|_| normal.sample(&mut r) as f32).collect()
            };
            names.push(name);
            params.push(Tensor::new(shape, data)?);
        }
        Ok(Self {
            config,
            names,
            params,
        })
    }

    /// Rebuilds an encoder from named tensors, checking names and shapes.
    pub fn from_parameters(config: EncoderConfig, named: Vec<(String, Tensor<f32>)>) -> Result<Self> {
        config.validate()?;
        let layout = parameter_layout(&config);
        if named.len() != layout.len() {
            return Err(Error::validation(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                named.len()
            )));
        }
        let mut names = Vec::new();
        let mut params = Vec::new();
        for ((name, t), (want_name, want_shape)) in named.into_iter().zip(layout) {
            if name != want_name || t.shape() != want_shape.as_slice() {
                return Err(Error::validation(format!(
                    "parameter '{name}' {:?} does not match expected '{want_name}' {want_shape:?}",
                    t.shape()
                )));
            }
            if let Some(i) = t.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("parameter '{name}' element {i} is not finite")));
            }
            names.push(name);
            params.push(t);
        }
        Ok(Self {
            config,
            names,
            params,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn is_initialized(&self) -> bool {
        !self.params.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<f32>] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Tensor<f32>] {
        &mut self.params
    }

    /// Whether parameter `i` belongs to a frozen block.
    pub fn is_frozen(&self, i: usize) -> bool {
        i < 2 * self.config.frozen_block_count
    }

    fn check_ready(&self) -> Result<()> {
        if !self.is_initialized() {
            return Err(Error::State("encoder has no parameters; initialize or load a checkpoint".into()));
        }
        Ok(())
    }

    /// Pushes the parameters onto `tape`; trainable ones require gradients
    /// when `trainable` is set.
    pub(crate) fn push_params(&self, tape: &mut Tape<f32>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut t = Tensor::new(p.shape().to_vec(), p.data().to_vec()).expect("consistent shape");
                if trainable && !self.is_frozen(i) {
                    t = t.requiring_grad();
                }
                tape.leaf(t)
            })
            .collect()
    }

    /// Stacks standardized images into an `[N, 1, S, S]` tensor.
    pub(crate) fn batch_tensor(&self, images: &[&Image]) -> Result<Tensor<f32>> {
        let s = self.config.input_size;
        let mut data = Vec::with_capacity(images.len() * s * s);
        for img in images {
            if img.height() != s || img.width() != s {
                return Err(Error::validation(format!(
                    "network input must be {s}x{s}, got {}x{}",
                    img.height(),
                    img.width()
                )));
            }
            data.extend_from_slice(img.pixels());
        }
        Tensor::new(vec![images.len(), 1, s, s], data)
    }

    /// Embeds images that are already standardized to `input_size`.
    pub fn embed_standardized(&self, img: &Image) -> Result<Embedding> {
        self.check_ready()?;
        let mut tape = Tape::new();
        let params = self.push_params(&mut tape, false);
        let x = tape.leaf(self.batch_tensor(&[img])?);
        let y = forward_graph(&mut tape, &params, x)?;
        Ok(tape.value(y).data().to_vec())
    }

    /// Min-max normalizes, resizes to `input_size` and embeds.
    pub fn embed(&self, img: &Image) -> Result<Embedding> {
        self.check_ready()?;
        self.embed_standardized(&img.standardized(self.config.input_size)?)
    }

    /// Embeds many images in parallel; each row equals [`embed`](Self::embed)
    /// of that image exactly, whatever the worker count.
    pub fn embed_all(&self, images: &[Image]) -> Result<Vec<Embedding>> {
        self.check_ready()?;
        images.par_iter().map(|img| self.embed(img)).collect()
    }
}

/// Input normalization used for both training and inference.
pub fn standardize(img: &Image, cfg: &EncoderConfig) -> Result<Image> {
    img.standardized(cfg.input_size)
}
