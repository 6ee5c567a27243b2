//! Wengert tape: forward ops append records, `backward` replays them in
//! reverse.

use super::kernels::{self, ConvGeom};
use super::{Scalar, Tensor};
use crate::{Error, Result};

/// Handle to a tensor stored on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Epsilon added under the square root when normalizing.
const NORM_EPS: f64 = 1e-12;

#[derive(Debug)]
enum Op<T> {
    Add(usize, usize),
    AddBias {
        x: usize,
        bias: usize,
        channels: usize,
        inner: usize,
    },
    Mul(usize, usize),
    Scale(usize, T),
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Conv2d {
        x: usize,
        w: usize,
        geom: ConvGeom,
    },
    Relu(usize),
    MaxPool2 {
        x: usize,
        argmax: Vec<u32>,
    },
    GlobalAvgPool {
        x: usize,
        spatial: usize,
    },
    Dense {
        x: usize,
        w: usize,
        b: usize,
        rows: usize,
        inp: usize,
        out: usize,
    },
    L2Normalize {
        x: usize,
        dim: usize,
        norms: Vec<T>,
    },
    Cosine {
        a: usize,
        b: usize,
        dim: usize,
        na: Vec<T>,
        nb: Vec<T>,
    },
    MseScalar {
        pred: usize,
        target: usize,
    },
}

#[derive(Debug)]
struct Record<T> {
    op: Op<T>,
    output: usize,
}

/// Arena of tensors plus the ordered list of differentiable operations that
/// produced them.
///
/// Records are appended in execution order, so every record's inputs precede
/// it. An operation is recorded only when at least one input requires a
/// gradient; a tape fed only constants is a plain forward evaluator.
#[derive(Debug)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Tensor<T>>,
    records: Vec<Record<T>>,
    track_branches: bool,
    branch_hash: u64,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            records: Vec::new(),
            track_branches: false,
            branch_hash: 0xcbf2_9ce4_8422_2325,
        }
    }

    /// Enables hashing of every ReLU sign pattern and max-pool winner so a
    /// caller can tell whether two forward passes took the same branches.
    pub fn with_branch_tracking(mut self) -> Self {
        self.track_branches = true;
        self
    }

    pub fn branch_signature(&self) -> u64 {
        self.branch_hash
    }

    /// Stores a tensor; its `requires_grad` flag decides whether it is a
    /// differentiable leaf.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(t);
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0]
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad()
    }

    pub fn num_records(&self) -> usize {
        self.records.len()
    }

    fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    fn data(&self, v: Var) -> &[T] {
        &self.nodes[v.0].data
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, inputs: &[Var], op: Op<T>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Tensor {
            shape,
            data,
            requires_grad,
            grad: None,
        });
        let output = self.nodes.len() - 1;
        if requires_grad {
            self.records.push(Record { op, output });
        }
        Var(output)
    }

    fn mix_branch(&mut self, bits: impl Iterator<Item = u64>) {
        if !self.track_branches {
            return;
        }
        let mut h = self.branch_hash;
        for b in bits {
            h ^= b;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        self.branch_hash = h;
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x + y)
            .collect();
        Ok(self.push(self.shape(a).to_vec(), data, &[a, b], Op::Add(a.0, b.0)))
    }

    /// Adds a per-channel bias along dimension 1 (`[N, C, ...] + [C]`).
    /// This is the only broadcasting the tape supports.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let bs = self.shape(bias).to_vec();
        if xs.len() < 2 || bs.len() != 1 || bs[0] != xs[1] {
            return Err(Error::Dimension {
                op: "add_bias",
                lhs: xs,
                rhs: bs,
            });
        }
        let channels = xs[1];
        let inner: usize = xs[2..].iter().product();
        let bv = self.data(bias);
        let mut data = self.data(x).to_vec();
        for (i, chunk) in data.chunks_mut(inner).enumerate() {
            let b = bv[i % channels];
            chunk.iter_mut().for_each(|v| *v = *v + b);
        }
        let op = Op::AddBias {
            x: x.0,
            bias: bias.0,
            channels,
            inner,
        };
        Ok(self.push(xs, data, &[x, bias], op))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x * y)
            .collect();
        Ok(self.push(self.shape(a).to_vec(), data, &[a, b], Op::Mul(a.0, b.0)))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        let data = self.data(x).iter().map(|&v| v * s).collect();
        Ok(self.push(self.shape(x).to_vec(), data, &[x], Op::Scale(x.0, s)))
    }

    /// `[M, K] × [K, N] → [M, N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.data(a), false, self.data(b), false, &mut out, false);
        let op = Op::MatMul {
            a: a.0,
            b: b.0,
            m,
            k,
            n,
        };
        Ok(self.push(vec![m, n], out, &[a, b], op))
    }

    /// NCHW convolution with an `[C_out, C_in, KH, KW]` kernel, no bias.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), stride, padding)?;
        let out = kernels::conv2d_forward(self.data(x), self.data(w), &geom);
        let op = Op::Conv2d { x: x.0, w: w.0, geom };
        Ok(self.push(geom.out_shape(), out, &[x, w], op))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let data: Vec<T> = self.data(x).iter().map(|&v| v.max(T::zero())).collect();
        if self.track_branches {
            let bits: Vec<u64> = self.data(x).iter().map(|&v| (v > T::zero()) as u64).collect();
            self.mix_branch(bits.into_iter());
        }
        Ok(self.push(self.shape(x).to_vec(), data, &[x], Op::Relu(x.0)))
    }

    /// 2×2 max pooling, stride 2, over the last two dimensions of NCHW input.
    pub fn max_pool2d(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[2] < 2 || s[3] < 2 {
            return Err(Error::Dimension {
                op: "max_pool2d",
                lhs: s,
                rhs: vec![2, 2],
            });
        }
        let (out, argmax) = kernels::max_pool2_forward(self.data(x), s[0] * s[1], s[2], s[3]);
        self.mix_branch(argmax.iter().map(|&i| i as u64));
        let shape = vec![s[0], s[1], s[2] / 2, s[3] / 2];
        Ok(self.push(shape, out, &[x], Op::MaxPool2 { x: x.0, argmax }))
    }

    /// `[N, C, H, W] → [N, C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[2] * s[3] == 0 {
            return Err(Error::Dimension {
                op: "global_avg_pool",
                lhs: s,
                rhs: vec![],
            });
        }
        let spatial = s[2] * s[3];
        let inv = T::one() / T::from_usize(spatial).unwrap();
        let out = self
            .data(x)
            .chunks(spatial)
            .map(|c| c.iter().copied().sum::<T>() * inv)
            .collect();
        Ok(self.push(vec![s[0], s[1]], out, &[x], Op::GlobalAvgPool { x: x.0, spatial }))
    }

    /// Affine layer `x · wᵀ + b` with `x: [N, in]`, `w: [out, in]`, `b: [out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] || sb != [sw[0]] {
            return Err(Error::Dimension {
                op: "dense",
                lhs: sx.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        let (rows, inp, out) = (sx[0], sx[1], sw[0]);
        let mut y = vec![T::zero(); rows * out];
        for row in y.chunks_mut(out) {
            row.copy_from_slice(self.data(b));
        }
        T::gemm(rows, inp, out, self.data(x), false, self.data(w), true, &mut y, true);
        let op = Op::Dense {
            x: x.0,
            w: w.0,
            b: b.0,
            rows,
            inp,
            out,
        };
        Ok(self.push(vec![rows, out], y, &[x, w, b], op))
    }

    /// Scales every row (last dimension) to unit Euclidean norm, with
    /// `1e-12` added under the square root.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let dim = *s.last().filter(|&&d| d > 0).ok_or_else(|| Error::Dimension {
            op: "l2_normalize",
            lhs: s.clone(),
            rhs: vec![],
        })?;
        let norms = kernels::row_norms(self.data(x), dim, T::from_f64_lossy(NORM_EPS));
        let data = self
            .data(x)
            .chunks(dim)
            .zip(&norms)
            .flat_map(|(r, &n)| r.iter().map(move |&v| v / n))
            .collect();
        Ok(self.push(s, data, &[x], Op::L2Normalize { x: x.0, dim, norms }))
    }

    /// Row-wise cosine similarity over the last dimension; the output drops
    /// that dimension (a pair of vectors gives a 0-d scalar).
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("cosine_similarity", a, b)?;
        let s = self.shape(a).to_vec();
        let dim = *s.last().filter(|&&d| d > 0).ok_or_else(|| Error::Dimension {
            op: "cosine_similarity",
            lhs: s.clone(),
            rhs: vec![],
        })?;
        let eps = T::from_f64_lossy(NORM_EPS);
        let na = kernels::row_norms(self.data(a), dim, eps);
        let nb = kernels::row_norms(self.data(b), dim, eps);
        let out = self
            .data(a)
            .chunks(dim)
            .zip(self.data(b).chunks(dim))
            .enumerate()
            .map(|(i, (ra, rb))| kernels::dot(ra, rb) / (na[i] * nb[i]))
            .collect();
        let op = Op::Cosine {
            a: a.0,
            b: b.0,
            dim,
            na,
            nb,
        };
        Ok(self.push(s[..s.len() - 1].to_vec(), out, &[a, b], op))
    }

    /// Mean of squared differences, as a 0-d scalar.
    pub fn mse_scalar(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("mse_scalar", pred, target)?;
        let n = self.data(pred).len();
        if n == 0 {
            return Err(Error::Dimension {
                op: "mse_scalar",
                lhs: self.shape(pred).to_vec(),
                rhs: self.shape(target).to_vec(),
            });
        }
        let sum: T = self
            .data(pred)
            .iter()
            .zip(self.data(target))
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        let value = sum / T::from_usize(n).unwrap();
        let op = Op::MseScalar {
            pred: pred.0,
            target: target.0,
        };
        Ok(self.push(Vec::new(), vec![value], &[pred, target], op))
    }

    /// Populates `grad` on every tensor that requires one with
    /// `∂loss/∂tensor`. Each record is visited once, newest first.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        if self.records.is_empty() {
            return Err(Error::Contract(
                "backward on a tape with no recorded operations".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);

        for rec in self.records.iter().rev() {
            let Some(g) = grads[rec.output].take() else {
                continue;
            };
            self.backprop_record(rec, &g, &mut grads);
            grads[rec.output] = Some(g);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if node.requires_grad {
                let len = node.data.len();
                node.set_grad(g.unwrap_or_else(|| vec![T::zero(); len]));
            }
        }
        Ok(())
    }

    fn backprop_record(&self, rec: &Record<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let wants = |i: usize| nodes[i].requires_grad;
        let data = |i: usize| nodes[i].data.as_slice();

        match &rec.op {
            Op::Add(a, b) => {
                for &i in [a, b].iter() {
                    if wants(*i) {
                        accumulate(grads, *i, g.iter().copied());
                    }
                }
            }
            Op::AddBias {
                x,
                bias,
                channels,
                inner,
            } => {
                if wants(*x) {
                    accumulate(grads, *x, g.iter().copied());
                }
                if wants(*bias) {
                    let mut db = vec![T::zero(); *channels];
                    for (i, chunk) in g.chunks(*inner).enumerate() {
                        db[i % channels] = db[i % channels] + chunk.iter().copied().sum::<T>();
                    }
                    accumulate(grads, *bias, db.into_iter());
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let v: Vec<T> = g.iter().zip(data(*b)).map(|(&g, &y)| g * y).collect();
                    accumulate(grads, *a, v.into_iter());
                }
                if wants(*b) {
                    let v: Vec<T> = g.iter().zip(data(*a)).map(|(&g, &x)| g * x).collect();
                    accumulate(grads, *b, v.into_iter());
                }
            }
            Op::Scale(x, s) => {
                if wants(*x) {
                    accumulate(grads, *x, g.iter().map(|&v| v * *s));
                }
            }
            Op::MatMul { a, b, m, k, n } => {
                if wants(*a) {
                    // dA = dC · Bᵀ
                    let mut da = vec![T::zero(); m * k];
                    T::gemm(*m, *n, *k, g, false, data(*b), true, &mut da, false);
                    accumulate(grads, *a, da.into_iter());
                }
                if wants(*b) {
                    // dB = Aᵀ · dC
                    let mut db = vec![T::zero(); k * n];
                    T::gemm(*k, *m, *n, data(*a), true, g, false, &mut db, false);
                    accumulate(grads, *b, db.into_iter());
                }
            }
            Op::Conv2d { x, w, geom } => {
                let mut dx = wants(*x).then(|| vec![T::zero(); data(*x).len()]);
                let mut dw = wants(*w).then(|| vec![T::zero(); data(*w).len()]);
                kernels::conv2d_backward(
                    data(*x),
                    data(*w),
                    g,
                    geom,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    accumulate(grads, *x, dx.into_iter());
                }
                if let Some(dw) = dw {
                    accumulate(grads, *w, dw.into_iter());
                }
            }
            Op::Relu(x) => {
                if wants(*x) {
                    let v: Vec<T> = g
                        .iter()
                        .zip(data(*x))
                        .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                        .collect();
                    accumulate(grads, *x, v.into_iter());
                }
            }
            Op::MaxPool2 { x, argmax } => {
                if wants(*x) {
                    let mut dx = vec![T::zero(); data(*x).len()];
                    for (&i, &gv) in argmax.iter().zip(g) {
                        dx[i as usize] = dx[i as usize] + gv;
                    }
                    accumulate(grads, *x, dx.into_iter());
                }
            }
            Op::GlobalAvgPool { x, spatial } => {
                if wants(*x) {
                    let inv = T::one() / T::from_usize(*spatial).unwrap();
                    let sp = *spatial;
                    accumulate(grads, *x, g.iter().flat_map(|&v| std::iter::repeat_n(v * inv, sp)));
                }
            }
            Op::Dense {
                x,
                w,
                b,
                rows,
                inp,
                out,
            } => {
                if wants(*x) {
                    // dX = dY · W
                    let mut dx = vec![T::zero(); rows * inp];
                    T::gemm(*rows, *out, *inp, g, false, data(*w), false, &mut dx, false);
                    accumulate(grads, *x, dx.into_iter());
                }
                if wants(*w) {
                    // dW = dYᵀ · X
                    let mut dw = vec![T::zero(); out * inp];
                    T::gemm(*out, *rows, *inp, g, true, data(*x), false, &mut dw, false);
                    accumulate(grads, *w, dw.into_iter());
                }
                if wants(*b) {
                    let mut db = vec![T::zero(); *out];
                    for row in g.chunks(*out) {
                        db.iter_mut().zip(row).for_each(|(d, &v)| *d = *d + v);
                    }
                    accumulate(grads, *b, db.into_iter());
                }
            }
            Op::L2Normalize { x, dim, norms } => {
                if wants(*x) {
                    let y = &nodes[rec.output].data;
                    let mut dx = Vec::with_capacity(y.len());
                    for ((yr, gr), &n) in y.chunks(*dim).zip(g.chunks(*dim)).zip(norms) {
                        let proj = kernels::dot(yr, gr);
                        dx.extend(yr.iter().zip(gr).map(|(&yv, &gv)| (gv - yv * proj) / n));
                    }
                    accumulate(grads, *x, dx.into_iter());
                }
            }
            Op::Cosine { a, b, dim, na, nb } => {
                let c = &nodes[rec.output].data;
                let (da_rows, db_rows) = (data(*a), data(*b));
                // ∂c/∂a = b/(|a||b|) − c·a/|a|², symmetric for b
                if wants(*a) {
                    let mut out = Vec::with_capacity(da_rows.len());
                    for i in 0..c.len() {
                        let ra = &da_rows[i * dim..(i + 1) * dim];
                        let rb = &db_rows[i * dim..(i + 1) * dim];
                        let inv_ab = T::one() / (na[i] * nb[i]);
                        let ca = c[i] / (na[i] * na[i]);
                        out.extend(ra.iter().zip(rb).map(|(&x, &y)| g[i] * (y * inv_ab - ca * x)));
                    }
                    accumulate(grads, *a, out.into_iter());
                }
                if wants(*b) {
                    let mut out = Vec::with_capacity(db_rows.len());
                    for i in 0..c.len() {
                        let ra = &da_rows[i * dim..(i + 1) * dim];
                        let rb = &db_rows[i * dim..(i + 1) * dim];
                        let inv_ab = T::one() / (na[i] * nb[i]);
                        let cb = c[i] / (nb[i] * nb[i]);
                        out.extend(rb.iter().zip(ra).map(|(&y, &x)| g[i] * (x * inv_ab - cb * y)));
                    }
                    accumulate(grads, *b, out.into_iter());
                }
            }
            Op::MseScalar { pred, target } => {
                let (p, t) = (data(*pred), data(*target));
                let scale = g[0] * T::from_f64_lossy(2.0) / T::from_usize(p.len()).unwrap();
                if wants(*pred) {
                    accumulate(grads, *pred, p.iter().zip(t).map(|(&p, &t)| scale * (p - t)));
                }
                if wants(*target) {
                    accumulate(grads, *target, p.iter().zip(t).map(|(&p, &t)| scale * (t - p)));
                }
            }
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], idx: usize, contrib: impl Iterator<Item = T>) {
    match &mut grads[idx] {
        Some(existing) => existing
            .iter_mut()
            .zip(contrib)
            .for_each(|(e, c)| *e = *e + c),
        slot @ None => *slot = Some(contrib.collect()),
    }
}
