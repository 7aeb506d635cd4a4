//! Parameter initialization shared by the networks: weights uniform in
//! `±1/sqrt(fan_in)`, biases zero.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Bound, Graph, ParamStore, Scalar, Tensor, Var};

fn uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.random_range(-bound..bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("positive extents")
}

/// `name.w` (`out x in x k x k`) and `name.b`.
pub(crate) fn add_conv<T: Scalar>(
    store: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
) -> Result<()> {
    store.insert(format!("{name}.w"), uniform(&[cout, cin, k, k], cin * k * k, rng))?;
    store.insert(format!("{name}.b"), Tensor::zeros(&[cout]))
}

/// `name.w` (`in x out x k x k`, transpose-convolution layout) and `name.b`.
pub(crate) fn add_conv_transpose<T: Scalar>(
    store: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
) -> Result<()> {
    store.insert(format!("{name}.w"), uniform(&[cin, cout, k, k], cin * k * k, rng))?;
    store.insert(format!("{name}.b"), Tensor::zeros(&[cout]))
}

/// `name.w` (`in x out`) and `name.b`.
pub(crate) fn add_dense<T: Scalar>(
    store: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
    name: &str,
    fin: usize,
    fout: usize,
) -> Result<()> {
    store.insert(format!("{name}.w"), uniform(&[fin, fout], fin, rng))?;
    store.insert(format!("{name}.b"), Tensor::zeros(&[fout]))
}

/// Sets the forget-gate slice (second quarter) of an LSTM bias to `value`.
pub(crate) fn set_forget_bias<T: Scalar>(store: &mut ParamStore<T>, name: &str, value: f64) {
    let p = store.get_mut(name).expect("bias registered");
    let hidden = p.value.numel() / 4;
    p.value.data_mut()[hidden..2 * hidden].fill(T::lit(value));
}

/// Weight and bias handles of one layer.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Layer {
    pub w: Var,
    pub b: Var,
}

impl Layer {
    pub fn get(p: &Bound, name: &str) -> Result<Self> {
        Ok(Self { w: p.get(&format!("{name}.w"))?, b: p.get(&format!("{name}.b"))? })
    }

    pub fn conv<T: Scalar>(&self, g: &mut Graph<T>, x: Var, stride: usize, pad: usize) -> Result<Var> {
        g.conv2d(x, self.w, self.b, stride, pad)
    }

    pub fn conv_transpose<T: Scalar>(&self, g: &mut Graph<T>, x: Var, stride: usize, pad: usize) -> Result<Var> {
        g.conv2d_transpose(x, self.w, self.b, stride, pad)
    }

    pub fn dense<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        g.dense(x, self.w, self.b)
    }
}
