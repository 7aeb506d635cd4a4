//! Forward definitions of the differentiable ops.

use rand::Rng;

use super::graph::{split_axis, Op};
use super::kernels::{self, Patch};
use super::{Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;

impl<T: Scalar> Graph<T> {
    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::InvalidShape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| f(a)).collect();
        let t = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        self.derive(t, op, &[x])
    }

    fn binary(&mut self, a: Var, b: Var, op: Op<T>, what: &str, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.derive(t, op, &[a, b]))
    }

    /// Cross-correlation of an NCHW input with an OIHW kernel.
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernel).to_vec();
        if xs.len() != 4 || ks.len() != 4 || xs[1] != ks[1] {
            return Err(Error::InvalidShape(format!(
                "conv2d input {xs:?} incompatible with kernel {ks:?}"
            )));
        }
        if self.value(bias).numel() != ks[0] {
            return Err(Error::InvalidShape(format!(
                "conv2d bias {:?} for kernel {ks:?}",
                self.shape(bias)
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidGeometry("stride must be positive".into()));
        }
        let (h, w, kh, kw) = (xs[2], xs[3], ks[2], ks[3]);
        let oh = out_extent(h, kh, stride, padding)?;
        let ow = out_extent(w, kw, stride, padding)?;
        let patch = Patch { c: xs[1], h, w, kh, kw, stride, pad: padding, oh, ow };
        let mut out = vec![T::zero(); xs[0] * ks[0] * oh * ow];
        kernels::conv2d_forward(
            self.data(x),
            xs[0],
            &patch,
            self.data(kernel),
            self.data(bias),
            &mut out,
        );
        let t = Tensor::new(vec![xs[0], ks[0], oh, ow], out)?;
        Ok(self.derive(t, Op::Conv2d { x: x.id, k: kernel.id, b: bias.id, patch }, &[x, kernel, bias]))
    }

    /// Transposed convolution; the kernel is laid out `in x out x kh x kw`,
    /// so `conv2d_transpose(., k)` is the adjoint of `conv2d(., k)`.
    pub fn conv2d_transpose(
        &mut self,
        y: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let ys = self.shape(y).to_vec();
        let ks = self.shape(kernel).to_vec();
        if ys.len() != 4 || ks.len() != 4 || ys[1] != ks[0] {
            return Err(Error::InvalidShape(format!(
                "conv2d_transpose input {ys:?} incompatible with kernel {ks:?}"
            )));
        }
        if self.value(bias).numel() != ks[1] {
            return Err(Error::InvalidShape(format!(
                "conv2d_transpose bias {:?} for kernel {ks:?}",
                self.shape(bias)
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidGeometry("stride must be positive".into()));
        }
        let (kh, kw) = (ks[2], ks[3]);
        let oh = (ys[2] - 1) * stride + kh;
        let ow = (ys[3] - 1) * stride + kw;
        if oh <= 2 * padding || ow <= 2 * padding {
            return Err(Error::InvalidGeometry(format!(
                "padding {padding} leaves no output for input {ys:?} and kernel {ks:?}"
            )));
        }
        let (oh, ow) = (oh - 2 * padding, ow - 2 * padding);
        let patch = Patch { c: ks[1], h: oh, w: ow, kh, kw, stride, pad: padding, oh: ys[2], ow: ys[3] };
        let mut out = vec![T::zero(); ys[0] * ks[1] * oh * ow];
        kernels::conv_transpose_forward(
            self.data(y),
            ys[0],
            ys[1],
            &patch,
            self.data(kernel),
            self.data(bias),
            &mut out,
        );
        let t = Tensor::new(vec![ys[0], ks[1], oh, ow], out)?;
        Ok(self.derive(
            t,
            Op::ConvTranspose { y: y.id, k: kernel.id, b: bias.id, patch },
            &[y, kernel, bias],
        ))
    }

    /// 2x2 window, stride 2.
    pub fn max_pool2d(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[2] % 2 != 0 || s[3] % 2 != 0 {
            return Err(Error::InvalidGeometry(format!(
                "max_pool2d needs even spatial extents, got {s:?}"
            )));
        }
        let planes = s[0] * s[1];
        let n_out = planes * (s[2] / 2) * (s[3] / 2);
        let mut out = vec![T::zero(); n_out];
        let mut argmax = vec![0u32; n_out];
        kernels::max_pool2_forward(self.data(x), planes, s[2], s[3], &mut out, &mut argmax);
        let t = Tensor::new(vec![s[0], s[1], s[2] / 2, s[3] / 2], out)?;
        Ok(self.derive(t, Op::MaxPool { x: x.id, argmax }, &[x]))
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample_nearest2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::InvalidShape(format!("upsample needs NCHW, got {s:?}")));
        }
        let mut out = vec![T::zero(); s[0] * s[1] * 4 * s[2] * s[3]];
        kernels::upsample2_forward(self.data(x), s[0] * s[1], s[2], s[3], &mut out);
        let t = Tensor::new(vec![s[0], s[1], 2 * s[2], 2 * s[3]], out)?;
        Ok(self.derive(t, Op::Upsample { x: x.id }, &[x]))
    }

    /// `x (N x F) . weight (F x G) + bias (G)`.
    pub fn dense(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || self.value(bias).numel() != ws[1] {
            return Err(Error::InvalidShape(format!(
                "dense input {xs:?}, weight {ws:?}, bias {:?}",
                self.shape(bias)
            )));
        }
        let (n, g) = (xs[0], ws[1]);
        let mut out = vec![T::zero(); n * g];
        T::gemm(n, xs[1], g, self.data(x), false, self.data(weight), false, &mut out, false);
        let b = self.data(bias);
        for row in out.chunks_mut(g) {
            for (o, &bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        let t = Tensor::new(vec![n, g], out)?;
        Ok(self.derive(t, Op::Dense { x: x.id, w: weight.id, b: bias.id }, &[x, weight, bias]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid { x: x.id }, |a| T::one() / (T::one() + (-a).exp()))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh { x: x.id }, |a| a.tanh())
    }

    pub fn leaky_relu(&mut self, x: Var) -> Var {
        let slope = T::lit(LEAKY_SLOPE);
        self.unary(x, Op::LeakyRelu { x: x.id, slope }, |a| if a > T::zero() { a } else { a * slope })
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs { x: x.id }, |a| a.abs())
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square { x: x.id }, |a| a * a)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, Op::Ln { x: x.id }, |a| a.ln())
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::lit(lo), T::lit(hi));
        self.unary(x, Op::Clamp { x: x.id, lo, hi }, |a| a.max(lo).min(hi))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let (s, b) = (T::lit(scale), T::lit(shift));
        self.unary(x, Op::Affine { x: x.id, scale: s }, |a| a * s + b)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let s = T::lit(s);
        self.unary(x, Op::Affine { x: x.id, scale: s }, |a| a * s)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add { a: a.id, b: b.id }, "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub { a: a.id, b: b.id }, "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul { a: a.id, b: b.id }, "mul", |x, y| x * y)
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.data(x).iter().copied().sum();
        self.derive(Tensor::scalar(s), Op::Sum { x: x.id }, &[x])
    }

    /// Sum of several one-element (or equally shaped) values.
    pub fn add_all(&mut self, xs: &[Var]) -> Result<Var> {
        let (&first, rest) = xs
            .split_first()
            .ok_or_else(|| Error::InvalidShape("add_all of nothing".into()))?;
        rest.iter().try_fold(first, |acc, &x| self.add(acc, x))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidShape("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::InvalidShape(format!("concat axis {axis} for shape {base:?}")));
        }
        let mut extent = 0;
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::InvalidShape(format!(
                    "concat along {axis}: {base:?} vs {s:?}"
                )));
            }
            extent += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = extent;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.data(p)[o * len..(o + 1) * len]);
            }
        }
        let t = Tensor::new(shape, out)?;
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(self.derive(t, Op::Concat { parts: ids, axis }, parts))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::InvalidShape(format!(
                "narrow [{start}, {}) on axis {axis} of {s:?}",
                start + len
            )));
        }
        let (outer, ext, inner) = split_axis(&s, axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        let src = self.data(x);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * ext + start) * inner..(o * ext + start + len) * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let t = Tensor::new(shape, out)?;
        Ok(self.derive(t, Op::Narrow { x: x.id, axis, start }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let mut t = t;
        t.set_grad(None)?;
        Ok(self.derive(t, Op::Reshape { x: x.id }, &[x]))
    }

    /// Collapses every axis after the first.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let n = s[0];
        let rest = s[1..].iter().product::<usize>().max(1);
        self.reshape(x, &[n, rest])
    }

    /// Forward differences `x[i+1] - x[i]` along `axis`.
    pub fn diff(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || s[axis] < 2 {
            return Err(Error::InvalidShape(format!("diff along {axis} of {s:?}")));
        }
        let (outer, ext, inner) = split_axis(&s, axis);
        let src = self.data(x);
        let mut out = Vec::with_capacity(outer * (ext - 1) * inner);
        for o in 0..outer {
            for i in 0..ext - 1 {
                let a = &src[(o * ext + i) * inner..(o * ext + i + 1) * inner];
                let b = &src[(o * ext + i + 1) * inner..(o * ext + i + 2) * inner];
                out.extend(a.iter().zip(b).map(|(&p, &q)| q - p));
            }
        }
        let mut shape = s;
        shape[axis] -= 1;
        let t = Tensor::new(shape, out)?;
        Ok(self.derive(t, Op::Diff { x: x.id, axis }, &[x]))
    }

    /// Broadcasts an `N x m` matrix to `N x m x h x w` constant planes.
    pub fn tile_spatial(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::InvalidShape(format!("tile_spatial needs N x m, got {s:?}")));
        }
        let mut out = Vec::with_capacity(s[0] * s[1] * h * w);
        for &v in self.data(x) {
            out.extend(std::iter::repeat_n(v, h * w));
        }
        let t = Tensor::new(vec![s[0], s[1], h, w], out)?;
        Ok(self.derive(t, Op::TileSpatial { x: x.id }, &[x]))
    }

    /// Inverted dropout with keep-probability `1 - rate`; identity when the
    /// rate is zero.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let v = self.value(x);
        let data = v.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let t = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        self.derive(t, Op::Mask { x: x.id, mask }, &[x])
    }
}

fn out_extent(size: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let span = size + 2 * pad;
    if span < k || (span - k) % stride != 0 {
        return Err(Error::InvalidGeometry(format!(
            "extent {size} with kernel {k}, stride {stride}, padding {pad} is not integral"
        )));
    }
    Ok((span - k) / stride + 1)
}
