//! Raw slice kernels behind the graph ops. Layout is NCHW throughout.

use super::Scalar;

/// Patch geometry of a strided window sweep over a `c x h x w` image that
/// produces an `oh x ow` grid of window positions.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Patch {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Patch {
    pub fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn positions(&self) -> usize {
        self.oh * self.ow
    }

    fn is_identity(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfold `x` (one `c x h x w` image) into a `rows x positions` matrix.
pub(crate) fn im2col<T: Scalar>(x: &[T], p: &Patch, cols: &mut [T]) {
    if p.is_identity() {
        cols.copy_from_slice(x);
        return;
    }
    let npos = p.positions();
    let pad = p.pad as isize;
    for ci in 0..p.c {
        let plane = &x[ci * p.h * p.w..(ci + 1) * p.h * p.w];
        for ky in 0..p.kh {
            for kx in 0..p.kw {
                let row = (ci * p.kh + ky) * p.kw + kx;
                let dst = &mut cols[row * npos..(row + 1) * npos];
                for oy in 0..p.oh {
                    let iy = (oy * p.stride + ky) as isize - pad;
                    let out = &mut dst[oy * p.ow..(oy + 1) * p.ow];
                    if iy < 0 || iy >= p.h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * p.w..(iy as usize + 1) * p.w];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * p.stride + kx) as isize - pad;
                        *o = if ix < 0 || ix >= p.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add the columns back into `x`.
pub(crate) fn col2im<T: Scalar>(cols: &[T], p: &Patch, x: &mut [T]) {
    if p.is_identity() {
        for (xv, &c) in x.iter_mut().zip(cols) {
            *xv += c;
        }
        return;
    }
    let npos = p.positions();
    let pad = p.pad as isize;
    for ci in 0..p.c {
        let plane = &mut x[ci * p.h * p.w..(ci + 1) * p.h * p.w];
        for ky in 0..p.kh {
            for kx in 0..p.kw {
                let row = (ci * p.kh + ky) * p.kw + kx;
                let src = &cols[row * npos..(row + 1) * npos];
                for oy in 0..p.oh {
                    let iy = (oy * p.stride + ky) as isize - pad;
                    if iy < 0 || iy >= p.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * p.w..(iy as usize + 1) * p.w];
                    for ox in 0..p.ow {
                        let ix = (ox * p.stride + kx) as isize - pad;
                        if ix >= 0 && ix < p.w as isize {
                            dst[ix as usize] += src[oy * p.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `n` images with kernel `o x rows`; adds `bias`.
pub(crate) fn conv2d_forward<T: Scalar>(
    x: &[T],
    n: usize,
    p: &Patch,
    kernel: &[T],
    bias: &[T],
    out: &mut [T],
) {
    let o = bias.len();
    let (rows, npos) = (p.rows(), p.positions());
    let in_len = p.c * p.h * p.w;
    let mut cols = vec![T::zero(); rows * npos];
    for b in 0..n {
        im2col(&x[b * in_len..(b + 1) * in_len], p, &mut cols);
        let dst = &mut out[b * o * npos..(b + 1) * o * npos];
        T::gemm(o, rows, npos, kernel, false, &cols, false, dst, false);
        for (oc, chunk) in dst.chunks_mut(npos).enumerate() {
            let bv = bias[oc];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    n: usize,
    p: &Patch,
    kernel: &[T],
    dout: &[T],
    o: usize,
    mut dx: Option<&mut [T]>,
    mut dk: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let (rows, npos) = (p.rows(), p.positions());
    let in_len = p.c * p.h * p.w;
    let mut cols = vec![T::zero(); rows * npos];
    for b in 0..n {
        let g = &dout[b * o * npos..(b + 1) * o * npos];
        if let Some(dk) = dk.as_deref_mut() {
            im2col(&x[b * in_len..(b + 1) * in_len], p, &mut cols);
            T::gemm(o, npos, rows, g, false, &cols, true, dk, true);
        }
        if let Some(dx) = dx.as_deref_mut() {
            T::gemm(rows, o, npos, kernel, true, g, false, &mut cols, false);
            col2im(&cols, p, &mut dx[b * in_len..(b + 1) * in_len]);
        }
        if let Some(db) = db.as_deref_mut() {
            for (oc, chunk) in g.chunks(npos).enumerate() {
                db[oc] += chunk.iter().copied().sum::<T>();
            }
        }
    }
}

/// Transposed convolution. `p` describes the *output* image (`c` = output
/// channels) and the input grid (`oh x ow`); kernel is `cin x rows`.
pub(crate) fn conv_transpose_forward<T: Scalar>(
    y: &[T],
    n: usize,
    cin: usize,
    p: &Patch,
    kernel: &[T],
    bias: &[T],
    out: &mut [T],
) {
    let (rows, npos) = (p.rows(), p.positions());
    let out_len = p.c * p.h * p.w;
    let plane = p.h * p.w;
    let mut cols = vec![T::zero(); rows * npos];
    for b in 0..n {
        let src = &y[b * cin * npos..(b + 1) * cin * npos];
        T::gemm(rows, cin, npos, kernel, true, src, false, &mut cols, false);
        let dst = &mut out[b * out_len..(b + 1) * out_len];
        dst.fill(T::zero());
        col2im(&cols, p, dst);
        for (oc, chunk) in dst.chunks_mut(plane).enumerate() {
            let bv = bias[oc];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_transpose_backward<T: Scalar>(
    y: &[T],
    n: usize,
    cin: usize,
    p: &Patch,
    kernel: &[T],
    dout: &[T],
    mut dy: Option<&mut [T]>,
    mut dk: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let (rows, npos) = (p.rows(), p.positions());
    let out_len = p.c * p.h * p.w;
    let plane = p.h * p.w;
    let mut cols = vec![T::zero(); rows * npos];
    for b in 0..n {
        let g = &dout[b * out_len..(b + 1) * out_len];
        if dy.is_some() || dk.is_some() {
            im2col(g, p, &mut cols);
        }
        if let Some(dy) = dy.as_deref_mut() {
            let dst = &mut dy[b * cin * npos..(b + 1) * cin * npos];
            T::gemm(cin, rows, npos, kernel, false, &cols, false, dst, true);
        }
        if let Some(dk) = dk.as_deref_mut() {
            let src = &y[b * cin * npos..(b + 1) * cin * npos];
            T::gemm(cin, npos, rows, src, false, &cols, true, dk, true);
        }
        if let Some(db) = db.as_deref_mut() {
            for (oc, chunk) in g.chunks(plane).enumerate() {
                db[oc] += chunk.iter().copied().sum::<T>();
            }
        }
    }
}

/// 2x2 stride-2 max pooling over `planes` planes of `h x w`. Records the flat
/// input index of each maximum (first in row-major order on ties).
pub(crate) fn max_pool2_forward<T: Scalar>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
    out: &mut [T],
    argmax: &mut [u32],
) {
    let (oh, ow) = (h / 2, w / 2);
    for pl in 0..planes {
        let base = pl * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                let o = pl * oh * ow + oy * ow + ox;
                out[o] = x[best];
                argmax[o] = best as u32;
            }
        }
    }
}

pub(crate) fn upsample2_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, out: &mut [T]) {
    let (oh, ow) = (2 * h, 2 * w);
    for pl in 0..planes {
        for y in 0..oh {
            let src = &x[pl * h * w + (y / 2) * w..pl * h * w + (y / 2 + 1) * w];
            let dst = &mut out[pl * oh * ow + y * ow..pl * oh * ow + (y + 1) * ow];
            for (xo, d) in dst.iter_mut().enumerate() {
                *d = src[xo / 2];
            }
        }
    }
}

pub(crate) fn upsample2_backward<T: Scalar>(dout: &[T], planes: usize, h: usize, w: usize, dx: &mut [T]) {
    let (oh, ow) = (2 * h, 2 * w);
    for pl in 0..planes {
        for y in 0..oh {
            let src = &dout[pl * oh * ow + y * ow..pl * oh * ow + (y + 1) * ow];
            let base = pl * h * w + (y / 2) * w;
            for (xo, &g) in src.iter().enumerate() {
                dx[base + xo / 2] += g;
            }
        }
    }
}
