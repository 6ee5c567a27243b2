//! Forward and backward kernels on raw row-major buffers.
//!
//! Kernels never allocate tape state; the tape decides what to keep.

use super::Scalar;
use crate::{Error, Result};

/// Geometry of a batched 2-D convolution over NCHW input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let mismatch = || Error::Dimension {
            op: "conv2d",
            lhs: input.to_vec(),
            rhs: weight.to_vec(),
        };
        if input.len() != 4 || weight.len() != 4 || input[1] != weight[1] || stride == 0 {
            return Err(mismatch());
        }
        let (h, w) = (input[2] + 2 * pad, input[3] + 2 * pad);
        let (kh, kw) = (weight[2], weight[3]);
        if kh == 0 || kw == 0 || kh > h || kw > w {
            return Err(mismatch());
        }
        Ok(Self {
            batch: input[0],
            c_in: input[1],
            h: input[2],
            w: input[3],
            c_out: weight[0],
            kh,
            kw,
            stride,
            pad,
            oh: (h - kh) / stride + 1,
            ow: (w - kw) / stride + 1,
        })
    }

    /// Rows of the unfolded patch matrix.
    pub fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }

    pub fn in_image_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    pub fn out_image_len(&self) -> usize {
        self.c_out * self.oh * self.ow
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.batch, self.c_out, self.oh, self.ow]
    }

    /// Valid output columns `[lo, hi)` for kernel column offset `kj`.
    fn col_range(&self, kj: usize) -> (usize, usize) {
        // ix = ox*stride + kj - pad must satisfy 0 <= ix < w
        let lo = if kj >= self.pad {
            0
        } else {
            (self.pad - kj).div_ceil(self.stride)
        };
        let limit = self.w + self.pad; // ix < w  <=>  ox*stride + kj < w + pad
        let hi = if limit > kj {
            ((limit - kj - 1) / self.stride + 1).min(self.ow)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

/// Unfolds one image (`c_in × h × w`) into a `patch_len × out_pixels` matrix.
fn im2col<T: Scalar>(img: &[T], g: &ConvGeom, cols: &mut [T]) {
    let p = g.out_pixels();
    for c in 0..g.c_in {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = g.col_range(kj);
                for oy in 0..g.oh {
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out_row[..lo].fill(T::zero());
                    out_row[hi..].fill(T::zero());
                    if g.stride == 1 {
                        let start = lo + kj - g.pad;
                        out_row[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                    } else {
                        for (ox, v) in out_row.iter_mut().enumerate().take(hi).skip(lo) {
                            *v = src[ox * g.stride + kj - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, img: &mut [T]) {
    let p = g.out_pixels();
    for c in 0..g.c_in {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = g.col_range(kj);
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let grad_row = &src[oy * g.ow..(oy + 1) * g.ow];
                    for ox in lo..hi {
                        dst[ox * g.stride + kj - g.pad] =
                            dst[ox * g.stride + kj - g.pad] + grad_row[ox];
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(x: &[T], w: &[T], g: &ConvGeom) -> Vec<T> {
    let k = g.patch_len();
    let p = g.out_pixels();
    let mut out = vec![T::zero(); g.batch * g.out_image_len()];
    let mut cols = vec![T::zero(); k * p];
    for n in 0..g.batch {
        im2col(&x[n * g.in_image_len()..(n + 1) * g.in_image_len()], g, &mut cols);
        let y = &mut out[n * g.out_image_len()..(n + 1) * g.out_image_len()];
        T::gemm(g.c_out, k, p, w, false, &cols, false, y, false);
    }
    out
}

/// Accumulates input and weight gradients of a convolution.
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    g: &ConvGeom,
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let k = g.patch_len();
    let p = g.out_pixels();
    let mut cols = vec![T::zero(); k * p];
    let mut dcols = vec![T::zero(); k * p];
    for n in 0..g.batch {
        let dy_n = &dy[n * g.out_image_len()..(n + 1) * g.out_image_len()];
        if let Some(dw) = dw.as_deref_mut() {
            im2col(&x[n * g.in_image_len()..(n + 1) * g.in_image_len()], g, &mut cols);
            // dW (c_out × k) += dY_n (c_out × p) · colsᵀ (p × k)
            T::gemm(g.c_out, p, k, dy_n, false, &cols, true, dw, true);
        }
        if let Some(dx) = dx.as_deref_mut() {
            // dcols (k × p) = Wᵀ (k × c_out) · dY_n (c_out × p)
            T::gemm(k, g.c_out, p, w, true, dy_n, false, &mut dcols, false);
            col2im(
                &dcols,
                g,
                &mut dx[n * g.in_image_len()..(n + 1) * g.in_image_len()],
            );
        }
    }
}

/// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
/// Returns the pooled values and, per output, the flat index of the winner.
pub(crate) fn max_pool2_forward<T: Scalar>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for pl in 0..planes {
        let base = pl * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let i0 = base + 2 * oy * w + 2 * ox;
                let mut best = i0;
                for idx in [i0 + 1, i0 + w, i0 + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

/// Row-wise Euclidean norms with `eps` added under the root.
pub(crate) fn row_norms<T: Scalar>(x: &[T], dim: usize, eps: T) -> Vec<T> {
    x.chunks(dim)
        .map(|r| (r.iter().map(|&v| v * v).sum::<T>() + eps).sqrt())
        .collect()
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
        let mut out = vec![0.0; g.batch * g.out_image_len()];
        for n in 0..g.batch {
            for co in 0..g.c_out {
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        let mut acc = 0.0;
                        for ci in 0..g.c_in {
                            for ki in 0..g.kh {
                                for kj in 0..g.kw {
                                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize
                                    {
                                        continue;
                                    }
                                    acc += x[((n * g.c_in + ci) * g.h + iy as usize) * g.w
                                        + ix as usize]
                                        * w[((co * g.c_in + ci) * g.kh + ki) * g.kw + kj];
                                }
                            }
                        }
                        out[((n * g.c_out + co) * g.oh + oy) * g.ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn all_ones_window_sums() {
        let g = ConvGeom::new(&[1, 1, 3, 3], &[1, 1, 2, 2], 1, 0).unwrap();
        let y = conv2d_forward(&[1.0f32; 9], &[1.0f32; 4], &g);
        assert_eq!((g.oh, g.ow), (2, 2));
        assert_eq!(y, vec![4.0; 4]);
    }

    #[test]
    fn matches_naive_with_padding_and_stride() {
        for &(stride, pad, h, w) in &[(1, 1, 7, 5), (2, 1, 8, 9), (2, 0, 7, 7), (3, 2, 10, 6)] {
            let g = ConvGeom::new(&[2, 3, h, w], &[4, 3, 3, 3], stride, pad).unwrap();
            let x: Vec<f64> = (0..g.batch * g.in_image_len())
                .map(|i| ((i * 37 % 17) as f64 - 8.0) / 7.0)
                .collect();
            let wt: Vec<f64> = (0..g.c_out * g.patch_len())
                .map(|i| ((i * 11 % 13) as f64 - 6.0) / 5.0)
                .collect();
            let fast = conv2d_forward(&x, &wt, &g);
            let slow = naive_conv(&x, &wt, &g);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "stride {stride} pad {pad}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let g = ConvGeom::new(&[1, 2, 6, 5], &[1, 2, 3, 3], 2, 1).unwrap();
        let x: Vec<f64> = (0..g.in_image_len()).map(|i| (i as f64).sin()).collect();
        let c: Vec<f64> = (0..g.patch_len() * g.out_pixels())
            .map(|i| (i as f64 * 0.7).cos())
            .collect();
        let mut cols = vec![0.0; c.len()];
        im2col(&x, &g, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&c, &g, &mut back);
        let lhs = dot(&cols, &c);
        let rhs = dot(&x, &back);
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn max_pool_picks_first_maximum() {
        let x = [1.0f32, 3.0, 3.0, 0.0];
        let (v, a) = max_pool2_forward(&x, 1, 2, 2);
        assert_eq!(v, vec![3.0]);
        assert_eq!(a, vec![1]);
    }
}
