//! Batched layer kernels. Activations are stored sample-major, each sample in
//! (channel, row, column) order.

use super::Shape3;
use crate::scalar::{matmul, MatRef, Scalar};

/// Geometry of a valid, stride-1 convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub input: Shape3,
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
}

impl ConvGeom {
    fn out_h(&self) -> usize {
        self.input.height - self.kernel_h + 1
    }

    fn out_w(&self) -> usize {
        self.input.width - self.kernel_w + 1
    }

    /// Rows of the unfolded patch matrix.
    fn patch_len(&self) -> usize {
        self.input.channels * self.kernel_h * self.kernel_w
    }

    fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// Unfolds one sample into a `patch_len x positions` matrix.
    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let (oh, ow) = (self.out_h(), self.out_w());
        let (h, w) = (self.input.height, self.input.width);
        let mut row = 0;
        for c in 0..self.input.channels {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ki in 0..self.kernel_h {
                for kj in 0..self.kernel_w {
                    let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let src = &plane[(oy + ki) * w + kj..(oy + ki) * w + kj + ow];
                        dst[oy * ow..(oy + 1) * ow].copy_from_slice(src);
                    }
                    row += 1;
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: scatters patch gradients back onto the input.
    fn col2im<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        let (oh, ow) = (self.out_h(), self.out_w());
        let (h, w) = (self.input.height, self.input.width);
        let mut row = 0;
        for c in 0..self.input.channels {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ki in 0..self.kernel_h {
                for kj in 0..self.kernel_w {
                    let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let dst = &mut plane[(oy + ki) * w + kj..(oy + ki) * w + kj + ow];
                        for (d, s) in dst.iter_mut().zip(&src[oy * ow..(oy + 1) * ow]) {
                            *d += *s;
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    pub fn forward<T: Scalar>(&self, x: &[T], batch: usize, weights: &[T], bias: &[T], out: &mut [T]) {
        let (k, p, f) = (self.patch_len(), self.positions(), self.filters);
        let in_len = self.input.len();
        let mut cols = vec![T::zero(); k * p];
        let w = MatRef::row_major(weights, f, k);
        for b in 0..batch {
            self.im2col(&x[b * in_len..(b + 1) * in_len], &mut cols);
            let y = &mut out[b * f * p..(b + 1) * f * p];
            matmul(w, MatRef::row_major(&cols, k, p), T::zero(), y);
            for (row, &bv) in y.chunks_exact_mut(p).zip(bias) {
                for v in row {
                    *v += bv;
                }
            }
        }
    }

    /// Accumulates weight/bias gradients; writes the input gradient when `dx` is given.
    #[allow(clippy::too_many_arguments)]
    pub fn backward<T: Scalar>(
        &self,
        x: &[T],
        dy: &[T],
        batch: usize,
        weights: &[T],
        dw: &mut [T],
        db: &mut [T],
        mut dx: Option<&mut [T]>,
    ) {
        let (k, p, f) = (self.patch_len(), self.positions(), self.filters);
        let in_len = self.input.len();
        let mut cols = vec![T::zero(); k * p];
        let mut dcols = vec![T::zero(); k * p];
        let w = MatRef::row_major(weights, f, k);
        for b in 0..batch {
            self.im2col(&x[b * in_len..(b + 1) * in_len], &mut cols);
            let g = &dy[b * f * p..(b + 1) * f * p];
            let g_mat = MatRef::row_major(g, f, p);
            matmul(g_mat, MatRef::row_major(&cols, k, p).t(), T::one(), dw);
            for (row, d) in g.chunks_exact(p).zip(db.iter_mut()) {
                *d += row.iter().copied().sum::<T>();
            }
            if let Some(dx) = dx.as_deref_mut() {
                matmul(w.t(), g_mat, T::zero(), &mut dcols);
                let dxb = &mut dx[b * in_len..(b + 1) * in_len];
                dxb.iter_mut().for_each(|v| *v = T::zero());
                self.col2im(&dcols, dxb);
            }
        }
    }
}

/// `y = x W^T + b` for a batch of flattened inputs; `W` is `out x in` row-major.
pub(crate) fn dense_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    in_len: usize,
    weights: &[T],
    bias: &[T],
    out: &mut [T],
) {
    let out_len = bias.len();
    matmul(
        MatRef::row_major(x, batch, in_len),
        MatRef::row_major(weights, out_len, in_len).t(),
        T::zero(),
        out,
    );
    for row in out.chunks_exact_mut(out_len) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward<T: Scalar>(
    x: &[T],
    dy: &[T],
    batch: usize,
    in_len: usize,
    weights: &[T],
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    let out_len = db.len();
    let g = MatRef::row_major(dy, batch, out_len);
    matmul(g.t(), MatRef::row_major(x, batch, in_len), T::one(), dw);
    for row in dy.chunks_exact(out_len) {
        for (d, &v) in db.iter_mut().zip(row) {
            *d += v;
        }
    }
    if let Some(dx) = dx {
        matmul(g, MatRef::row_major(weights, out_len, in_len), T::zero(), dx);
    }
}

/// Non-overlapping max pooling. Records, per output, the in-sample index of
/// the winning input (first maximum on ties).
pub(crate) fn maxpool_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    input: Shape3,
    pool_h: usize,
    pool_w: usize,
    out: &mut [T],
    winners: &mut [u32],
) {
    let (oh, ow) = (input.height / pool_h, input.width / pool_w);
    let (h, w) = (input.height, input.width);
    let out_len = input.channels * oh * ow;
    for b in 0..batch {
        let xb = &x[b * input.len()..(b + 1) * input.len()];
        for c in 0..input.channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = c * h * w + oy * pool_h * w + ox * pool_w;
                    for i in 0..pool_h {
                        for j in 0..pool_w {
                            let idx = c * h * w + (oy * pool_h + i) * w + ox * pool_w + j;
                            if xb[idx] > xb[best] {
                                best = idx;
                            }
                        }
                    }
                    let o = b * out_len + (c * oh + oy) * ow + ox;
                    out[o] = xb[best];
                    winners[o] = best as u32;
                }
            }
        }
    }
}

pub(crate) fn maxpool_backward<T: Scalar>(dy: &[T], winners: &[u32], batch: usize, in_len: usize, dx: &mut [T]) {
    dx.iter_mut().for_each(|v| *v = T::zero());
    let out_len = dy.len() / batch;
    for b in 0..batch {
        let dxb = &mut dx[b * in_len..(b + 1) * in_len];
        for o in 0..out_len {
            dxb[winners[b * out_len + o] as usize] += dy[b * out_len + o];
        }
    }
}
