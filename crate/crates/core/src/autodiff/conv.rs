//! Direct (loop) convolution kernels on NCHW buffers.

use super::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_ch: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    fn x_idx(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        ((b * self.in_ch + c) * self.in_h + y) * self.in_w + x
    }
    fn o_idx(&self, b: usize, o: usize, y: usize, x: usize) -> usize {
        ((b * self.out_ch + o) * self.out_h + y) * self.out_w + x
    }
    /// Input coordinate hit by output `(oy, ox)` and kernel tap `(ky, kx)`.
    fn tap(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky) as isize - self.pad as isize;
        let x = (ox * self.stride + kx) as isize - self.pad as isize;
        (y >= 0 && x >= 0 && (y as usize) < self.in_h && (x as usize) < self.in_w)
            .then_some((y as usize, x as usize))
    }
}

// conv2d: weight [O, C, kh, kw]

pub(crate) fn conv2d_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], bias: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); g.batch * g.out_ch * g.out_h * g.out_w];
    for b in 0..g.batch {
        for o in 0..g.out_ch {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let mut acc = bias[o];
                    for c in 0..g.in_ch {
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                if let Some((y, xx)) = g.tap(oy, ox, ky, kx) {
                                    acc += x[g.x_idx(b, c, y, xx)]
                                        * w[((o * g.in_ch + c) * g.kh + ky) * g.kw + kx];
                                }
                            }
                        }
                    }
                    out[g.o_idx(b, o, oy, ox)] = acc;
                }
            }
        }
    }
    out
}

/// Returns (dx, dw, dbias) for conv2d given upstream gradient `go`.
pub(crate) fn conv2d_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    go: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); x.len()];
    let mut dw = vec![T::zero(); w.len()];
    let mut db = vec![T::zero(); g.out_ch];
    for b in 0..g.batch {
        for o in 0..g.out_ch {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let gv = go[g.o_idx(b, o, oy, ox)];
                    db[o] += gv;
                    for c in 0..g.in_ch {
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                if let Some((y, xx)) = g.tap(oy, ox, ky, kx) {
                                    let wi = ((o * g.in_ch + c) * g.kh + ky) * g.kw + kx;
                                    let xi = g.x_idx(b, c, y, xx);
                                    dx[xi] += gv * w[wi];
                                    dw[wi] += gv * x[xi];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

// Transposed convolution: weight [C_in, O, kh, kw]. The geometry is that of
// the *adjoint* conv2d, i.e. `in_*` fields describe the transposed output.

pub(crate) fn conv_t_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], bias: &[T]) -> Vec<T> {
    // x has shape [B, out_ch, out_h, out_w] in `g`'s conv2d terms; result has
    // shape [B, in_ch, in_h, in_w]. Bias is per in_ch.
    let mut out = vec![T::zero(); g.batch * g.in_ch * g.in_h * g.in_w];
    for b in 0..g.batch {
        for c in 0..g.in_ch {
            let base = (b * g.in_ch + c) * g.in_h * g.in_w;
            for v in &mut out[base..base + g.in_h * g.in_w] {
                *v = bias[c];
            }
        }
        for o in 0..g.out_ch {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let xv = x[g.o_idx(b, o, oy, ox)];
                    for c in 0..g.in_ch {
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                if let Some((y, xx)) = g.tap(oy, ox, ky, kx) {
                                    out[g.x_idx(b, c, y, xx)] +=
                                        xv * w[((o * g.in_ch + c) * g.kh + ky) * g.kw + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv_t_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    go: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); x.len()];
    let mut dw = vec![T::zero(); w.len()];
    let mut db = vec![T::zero(); g.in_ch];
    for b in 0..g.batch {
        for c in 0..g.in_ch {
            let base = (b * g.in_ch + c) * g.in_h * g.in_w;
            for &v in &go[base..base + g.in_h * g.in_w] {
                db[c] += v;
            }
        }
        for o in 0..g.out_ch {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let xi = g.o_idx(b, o, oy, ox);
                    let mut acc = T::zero();
                    for c in 0..g.in_ch {
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                if let Some((y, xx)) = g.tap(oy, ox, ky, kx) {
                                    let wi = ((o * g.in_ch + c) * g.kh + ky) * g.kw + kx;
                                    let gv = go[g.x_idx(b, c, y, xx)];
                                    acc += gv * w[wi];
                                    dw[wi] += gv * x[xi];
                                }
                            }
                        }
                    }
                    dx[xi] += acc;
                }
            }
        }
    }
    (dx, dw, db)
}

pub(crate) fn maxpool_forward<T: Real>(
    x: &[T],
    (b, c, h, w): (usize, usize, usize, usize),
    k: usize,
    stride: usize,
) -> (Vec<T>, Vec<usize>, usize, usize) {
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut arg = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..k {
                    for kx in 0..k {
                        let i = base + (oy * stride + ky) * w + ox * stride + kx;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg, oh, ow)
}
