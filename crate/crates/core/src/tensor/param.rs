use std::collections::BTreeMap;

use super::{Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};

/// A trainable tensor with its Adam state.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub first_moment: Vec<T>,
    pub second_moment: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let n = value.numel();
        Self { value, first_moment: vec![T::zero(); n], second_moment: vec![T::zero(); n], step: 0 }
    }
}

/// Named parameters, iterated in lexicographic name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Param<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Graph handles for every parameter of a store.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl FromIterator<(String, Var)> for Bound {
    fn from_iter<I: IntoIterator<Item = (String, Var)>>(iter: I) -> Self {
        Self { vars: iter.into_iter().collect() }
    }
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::InvalidShape(format!("duplicate parameter `{name}`")));
        }
        self.params.insert(name, Param::new(value));
        Ok(())
    }

    pub fn insert_param(&mut self, name: impl Into<String>, param: Param<T>) {
        self.params.insert(name.into(), param);
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    /// Registers every parameter as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        self.bind_with(g, true)
    }

    /// Registers every parameter as a constant (frozen network).
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> Bound {
        self.bind_with(g, false)
    }

    fn bind_with(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(name, p)| {
                let mut t = p.value.clone();
                t.set_grad(None).expect("clear grad");
                let v = if trainable { g.leaf(t) } else { g.constant(t) };
                (name.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    /// Copies leaf gradients from a graph after `backward`, adding to any
    /// gradient already stored.
    pub fn collect_grads(&mut self, g: &Graph<T>, bound: &Bound) -> Result<()> {
        for (name, p) in &mut self.params {
            let Some(&var) = bound.vars.get(name) else { continue };
            let Some(src) = g.grad(var) else { continue };
            match p.value.grad_mut() {
                Some(dst) => dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s),
                None => p.value.set_grad(Some(src.to_vec()))?,
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.value.set_grad(None).expect("clear grad");
        }
    }

    pub fn grad_norm_sq(&self) -> f64 {
        self.params
            .values()
            .filter_map(|p| p.value.grad())
            .flat_map(|g| g.iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum()
    }

    pub fn scale_grads(&mut self, factor: f64) {
        let f = T::lit(factor);
        for p in self.params.values_mut() {
            if let Some(g) = p.value.grad_mut() {
                g.iter_mut().for_each(|v| *v *= f);
            }
        }
    }

    /// Bias-corrected Adam update over all parameters in name order, then
    /// clears the gradients. Every parameter must carry a gradient.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if let Some((name, _)) = self.params.iter().find(|(_, p)| p.value.grad().is_none()) {
            return Err(Error::IncompleteGradient(name.clone()));
        }
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let (one, lr, eps) = (T::one(), T::lit(cfg.lr), T::lit(cfg.eps));
        for p in self.params.values_mut() {
            p.step += 1;
            let c1 = one - b1.powi(p.step as i32);
            let c2 = one - b2.powi(p.step as i32);
            let grad = p.value.grad().expect("checked above").to_vec();
            let Param { value, first_moment, second_moment, .. } = p;
            for (((w, m), v), g) in value
                .data_mut()
                .iter_mut()
                .zip(first_moment.iter_mut())
                .zip(second_moment.iter_mut())
                .zip(grad)
            {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            value.set_grad(None)?;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let params = self
            .params
            .iter()
            .map(|(k, p)| {
                let conv = |v: &[T]| v.iter().map(|x| U::lit(x.as_f64())).collect::<Vec<U>>();
                let q = Param {
                    value: p.value.cast(),
                    first_moment: conv(&p.first_moment),
                    second_moment: conv(&p.second_moment),
                    step: p.step,
                };
                (k.clone(), q)
            })
            .collect();
        ParamStore { params }
    }

    /// Bitwise equality of parameter values (ignores optimizer state).
    pub fn same_values(&self, other: &Self) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|((ka, a), (kb, b))| {
                ka == kb
                    && a.value.shape() == b.value.shape()
                    && a.value
                        .data()
                        .iter()
                        .zip(b.value.data())
                        .all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
            })
    }
}

/// Rescales the gradients of all `stores` so their joint L2 norm is at most
/// `max_norm`. Returns the pre-clip norm when clipping happened.
pub fn clip_global_norm<T: Scalar>(stores: &mut [&mut ParamStore<T>], max_norm: f64) -> Option<f64> {
    let norm = stores.iter().map(|s| s.grad_norm_sq()).sum::<f64>().sqrt();
    if norm > max_norm {
        let factor = max_norm / norm;
        for s in stores.iter_mut() {
            s.scale_grads(factor);
        }
        Some(norm)
    } else {
        None
    }
}
