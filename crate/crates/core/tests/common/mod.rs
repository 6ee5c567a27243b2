//! Independent oracles and a finite-difference gradient checker shared by the
//! integration tests and the acceptance runner.
#![allow(dead_code)]

use memaudit_core::audit::PairLabel;
use memaudit_core::encoder::{forward_graph, parameter_layout, EncoderConfig};
use memaudit_core::image::Image;
use memaudit_core::metrics::SsimConfig;
use memaudit_core::rng;
use memaudit_core::tensor::{Scalar, Tape, Tensor, Var};
use memaudit_core::Result;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// SSIM by direct summation over every fully interior window, with the 2-D
/// Gaussian weights built from scratch.
pub fn naive_ssim(a: &Image, b: &Image, cfg: &SsimConfig) -> f64 {
    let k = cfg.window_size;
    let half = (k / 2) as f64;
    let mut w2 = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let (di, dj) = (i as f64 - half, j as f64 - half);
            w2[i * k + j] = (-(di * di + dj * dj) / (2.0 * cfg.gaussian_sigma * cfg.gaussian_sigma)).exp();
        }
    }
    let total: f64 = w2.iter().sum();
    w2.iter_mut().for_each(|v| *v /= total);

    let (c1, c2) = ((cfg.k1 * cfg.dynamic_range).powi(2), (cfg.k2 * cfg.dynamic_range).powi(2));
    let (h, w) = (a.height(), a.width());
    let mut sum = 0.0;
    let mut count = 0usize;
    for r0 in 0..=h - k {
        for c0 in 0..=w - k {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let wt = w2[i * k + j];
                    ma += wt * a.get(r0 + i, c0 + j) as f64;
                    mb += wt * b.get(r0 + i, c0 + j) as f64;
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let wt = w2[i * k + j];
                    let da = a.get(r0 + i, c0 + j) as f64 - ma;
                    let db = b.get(r0 + i, c0 + j) as f64 - mb;
                    va += wt * da * da;
                    vb += wt * db * db;
                    cov += wt * da * db;
                }
            }
            let cs = (2.0 * cov + c2) / (va + vb + c2);
            let l = if cfg.luminance_term_enabled {
                (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1)
            } else {
                1.0
            };
            sum += l * cs;
            count += 1;
        }
    }
    sum / count as f64
}

/// Mean silhouette with absolute-difference distance, straight from the
/// definition (O(n²)). Singleton clusters score 0.
pub fn naive_silhouette(scores: &[f64], labels: &[PairLabel]) -> f64 {
    let n = scores.len();
    let mut total = 0.0;
    for i in 0..n {
        let own = labels.iter().filter(|&&l| l == labels[i]).count();
        if own == 1 {
            continue;
        }
        let mut a = 0.0;
        for j in 0..n {
            if j != i && labels[j] == labels[i] {
                a += (scores[i] - scores[j]).abs();
            }
        }
        a /= (own - 1) as f64;
        let mut b = f64::INFINITY;
        for other in PairLabel::ALL {
            if other == labels[i] {
                continue;
            }
            let members: Vec<usize> = (0..n).filter(|&j| labels[j] == other).collect();
            if members.is_empty() {
                continue;
            }
            let d = members.iter().map(|&j| (scores[i] - scores[j]).abs()).sum::<f64>() / members.len() as f64;
            b = b.min(d);
        }
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n as f64
}

/// Macro F1 from per-class true/false positive counts; a class with no
/// support and no predictions scores 0.
pub fn naive_macro_f1(truth: &[PairLabel], predicted: &[PairLabel]) -> f64 {
    let mut total = 0.0;
    for c in PairLabel::ALL {
        let tp = truth.iter().zip(predicted).filter(|(t, p)| **t == c && **p == c).count() as f64;
        let fp = truth.iter().zip(predicted).filter(|(t, p)| **t != c && **p == c).count() as f64;
        let fneg = truth.iter().zip(predicted).filter(|(t, p)| **t == c && **p != c).count() as f64;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
        if precision + recall > 0.0 {
            total += 2.0 * precision * recall / (precision + recall);
        }
    }
    total / 3.0
}

pub fn random_image(seed: u64, h: usize, w: usize) -> Image {
    let mut r = rng::stream(seed, 0);
    Image::from_fn(h, w, |_, _| r.random::<f32>()).unwrap()
}

/// Smooth random image with structure at several scales, values in [0, 1].
pub fn textured_image(seed: u64, h: usize, w: usize) -> Image {
    let mut r = rng::stream(seed, 1);
    let waves: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| (r.random_range(0.05..0.5), r.random_range(0.05..0.5), r.random_range(0.0..6.3), r.random_range(0.2..1.0)))
        .collect();
    let norm: f64 = waves.iter().map(|w| w.3).sum();
    Image::from_fn(h, w, |y, x| {
        let v: f64 = waves
            .iter()
            .map(|&(fy, fx, ph, amp)| amp * (fy * y as f64 + fx * x as f64 + ph).sin())
            .sum();
        (0.5 + 0.5 * v / norm) as f32
    })
    .unwrap()
}

pub fn normal_tensor(seed: u64, stream: u64, shape: Vec<usize>, scale: f64) -> Tensor<f64> {
    let mut r = rng::stream(seed, stream);
    let n = shape.iter().product();
    let data = (0..n).map(|_| { let z: f64 = StandardNormal.sample(&mut r); scale * z }).collect::<Vec<f64>>();
    Tensor::new(shape, data).unwrap()
}

/// A differentiable function of some input tensors, buildable on a tape of
/// either precision.
pub trait Graph {
    fn build<T: Scalar>(&self, tape: &mut Tape<T>, inputs: &[Var]) -> Result<Var>;
}

/// Outcome of a gradient check.
#[derive(Debug, Clone, Copy)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates skipped because a perturbation crossed a ReLU or max-pool
    /// switch.
    pub skipped: usize,
}

/// Scalar loss `mean((g(x) − target)²)`; reduces any output shape to a
/// scalar with a non-degenerate gradient.
fn loss_on<T: Scalar, G: Graph>(g: &G, inputs: &[Tensor<f64>], target: &Tensor<f64>, grad: bool) -> (Tape<T>, Vec<Var>, Var) {
    let mut tape = Tape::<T>::new().with_branch_tracking();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| {
            let c = t.cast::<T>();
            tape.leaf(if grad { c.requiring_grad() } else { c })
        })
        .collect();
    let out = g.build(&mut tape, &vars).unwrap();
    let loss = if tape.value(out).numel() == 1 && target.numel() == 0 {
        out
    } else {
        let t = tape.leaf(target.cast::<T>());
        tape.mse_scalar(out, t).unwrap()
    };
    (tape, vars, loss)
}

/// Compares `f32` reverse-mode gradients with `f64` central differences.
///
/// `target` of size 0 means the graph already yields a scalar loss. Up to
/// `max_coords` coordinates per input are probed. The relative error of a
/// coordinate is `|a − n| / max(|a|, |n|, floor)` with `floor` one percent of
/// the largest numeric gradient of that input.
pub fn grad_check<G: Graph>(g: &G, inputs: &[Tensor<f64>], target: &Tensor<f64>, max_coords: usize) -> GradReport {
    let (mut tape, vars, loss) = loss_on::<f32, G>(g, inputs, target, true);
    tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).expect("input gradient").iter().map(|&x| x as f64).collect())
        .collect();

    let (base_tape, _, _) = loss_on::<f64, G>(g, inputs, target, false);
    let base_sig = base_tape.branch_signature();
    let eps = 1e-5;
    let mut report = GradReport {
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
    };
    for (k, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let stride = n.div_ceil(max_coords).max(1);
        let mut numeric = Vec::new();
        for idx in (0..n).step_by(stride) {
            let eval = |delta: f64| {
                let mut moved = inputs.to_vec();
                moved[k].data_mut()[idx] += delta;
                let (t, _, l) = loss_on::<f64, G>(g, &moved, target, false);
                (t.value(l).data()[0], t.branch_signature())
            };
            let (fp, sp) = eval(eps);
            let (fm, sm) = eval(-eps);
            if sp != base_sig || sm != base_sig {
                report.skipped += 1;
                continue;
            }
            numeric.push((idx, (fp - fm) / (2.0 * eps)));
        }
        let floor = 1e-2 * numeric.iter().map(|p| p.1.abs()).fold(1e-6, f64::max);
        for (idx, num) in numeric {
            let a = analytic[k][idx];
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(floor);
            report.max_rel_err = report.max_rel_err.max(rel);
            report.checked += 1;
        }
    }
    report
}

/// A one-op graph usable at either precision.
macro_rules! graph {
    ($name:ident, |$t:ident, $x:ident| $body:expr) => {
        struct $name;
        impl Graph for $name {
            fn build<T: Scalar>(&self, $t: &mut Tape<T>, $x: &[Var]) -> Result<Var> {
                $body
            }
        }
    };
}

graph!(AddG, |t, x| t.add(x[0], x[1]));
graph!(MulG, |t, x| t.mul(x[0], x[1]));
graph!(ScaleG, |t, x| t.scale(x[0], T::from_f64(-1.7).unwrap()));
graph!(MatmulG, |t, x| t.matmul(x[0], x[1]));
graph!(AddBiasG, |t, x| t.add_bias(x[0], x[1]));
graph!(ReluG, |t, x| t.relu(x[0]));
graph!(PoolG, |t, x| t.max_pool2d(x[0]));
graph!(GapG, |t, x| t.global_avg_pool(x[0]));
graph!(DenseG, |t, x| t.dense(x[0], x[1], x[2]));
graph!(NormG, |t, x| t.l2_normalize(x[0]));
graph!(CosG, |t, x| t.cosine_similarity(x[0], x[1]));
graph!(Conv1G, |t, x| t.conv2d(x[0], x[1], 1, 1));
graph!(Conv2G, |t, x| t.conv2d(x[0], x[1], 2, 0));
graph!(MseG, |t, x| t.mse_scalar(x[0], x[1]));

fn empty() -> Tensor<f64> {
    Tensor::new(vec![0], vec![]).unwrap()
}

fn op_report<G: Graph>(g: &G, seed: u64, shapes: &[Vec<usize>], out_shape: &[usize]) -> GradReport {
    let inputs: Vec<Tensor<f64>> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| normal_tensor(seed, i as u64, s.clone(), 1.0))
        .collect();
    let target = if out_shape.is_empty() {
        empty()
    } else {
        normal_tensor(seed, 99, out_shape.to_vec(), 1.0)
    };
    grad_check(g, &inputs, &target, 64)
}

/// Gradient check of every tape op on one seed. An empty output shape marks
/// an op that already yields the scalar loss.
pub fn op_reports(seed: u64) -> Vec<(&'static str, GradReport)> {
    vec![
        ("add", op_report(&AddG, seed, &[vec![3, 4], vec![3, 4]], &[3, 4])),
        ("mul", op_report(&MulG, seed, &[vec![3, 4], vec![3, 4]], &[3, 4])),
        ("scale", op_report(&ScaleG, seed, &[vec![5]], &[5])),
        ("relu", op_report(&ReluG, seed, &[vec![4, 5]], &[4, 5])),
        ("matmul", op_report(&MatmulG, seed, &[vec![3, 4], vec![4, 2]], &[3, 2])),
        ("add_bias", op_report(&AddBiasG, seed, &[vec![2, 3, 4, 4], vec![3]], &[2, 3, 4, 4])),
        ("dense", op_report(&DenseG, seed, &[vec![3, 5], vec![4, 5], vec![4]], &[3, 4])),
        ("conv2d", op_report(&Conv1G, seed, &[vec![2, 2, 6, 6], vec![3, 2, 3, 3]], &[2, 3, 6, 6])),
        ("conv2d_strided", op_report(&Conv2G, seed, &[vec![1, 2, 7, 7], vec![2, 2, 3, 3]], &[1, 2, 3, 3])),
        ("max_pool2d", op_report(&PoolG, seed, &[vec![2, 2, 6, 6]], &[2, 2, 3, 3])),
        ("global_avg_pool", op_report(&GapG, seed, &[vec![2, 3, 4, 4]], &[2, 3])),
        ("l2_normalize", op_report(&NormG, seed, &[vec![3, 6]], &[3, 6])),
        ("cosine_similarity", op_report(&CosG, seed, &[vec![3, 6], vec![3, 6]], &[3])),
        ("mse_scalar", op_report(&MseG, seed, &[vec![4, 3], vec![4, 3]], &[])),
    ]
}

/// Two images through a three-block encoder, then the cosine-vs-target loss.
struct EncoderLoss;

impl Graph for EncoderLoss {
    fn build<T: Scalar>(&self, t: &mut Tape<T>, x: &[Var]) -> Result<Var> {
        let emb = forward_graph(t, &x[1..], x[0])?;
        let cos = split_cosine(t, emb)?;
        let target = t.leaf(Tensor::vector(vec![T::from_f64(0.3).unwrap()]));
        t.mse_scalar(cos, target)
    }
}

/// Cosine between the two rows of a `[2, d]` embedding batch, via a fixed
/// selection matmul so everything stays on the tape.
fn split_cosine<T: Scalar>(t: &mut Tape<T>, emb: Var) -> Result<Var> {
    let sel = |row: usize| Tensor::new(vec![1, 2], (0..2).map(|i| T::from_f64(if i == row { 1.0 } else { 0.0 }).unwrap()).collect()).unwrap();
    let s0 = t.leaf(sel(0));
    let s1 = t.leaf(sel(1));
    let a = t.matmul(s0, emb)?;
    let b = t.matmul(s1, emb)?;
    t.cosine_similarity(a, b)
}


/// Gradient check of the cosine-vs-target loss through a three-block encoder.
pub fn encoder_report(seed: u64) -> GradReport {
    let cfg = EncoderConfig {
        input_size: 16,
        widths: vec![3, 4, 5],
        embedding_dim: 8,
        frozen_block_count: 0,
    };
    let mut inputs = vec![normal_tensor(seed, 100, vec![2, 1, 16, 16], 1.0)];
    for (i, (_, shape)) in parameter_layout(&cfg).into_iter().enumerate() {
        let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
        inputs.push(normal_tensor(seed, i as u64, shape, (2.0 / fan_in as f64).sqrt()));
    }
    grad_check(&EncoderLoss, &inputs, &empty(), 48)
}
