//! Central finite-difference verification of analytic gradients (64-bit).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

pub const GRAD_CHECK_EPS: f64 = 1e-5;

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>], trainable: bool) -> Result<(Graph<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| if trainable { g.leaf(t.clone()) } else { g.constant(t.clone()) })
        .collect();
    let loss = f(&mut g, &vars)?;
    if g.value(loss).numel() != 1 {
        return Err(Error::InvalidShape(format!(
            "grad_check needs a scalar function, got {:?}",
            g.shape(loss)
        )));
    }
    Ok((g, vars, loss))
}

fn scalar_of<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let (g, _, loss) = evaluate(f, inputs, false)?;
    let v = g.value(loss).item();
    if !v.is_finite() {
        return Err(Error::Numeric("function value is not finite".into()));
    }
    Ok(v)
}

/// Elements far below the largest gradient of their tensor are compared
/// against this fraction of it rather than their own size, since their
/// finite-difference estimate is dominated by rounding.
const SCALE_FLOOR: f64 = 1e-3;

/// Disagreement above which an element is re-measured with other steps.
const RETRY_ABOVE: f64 = 1e-6;

fn five_point<F>(f: &F, probe: &mut [Tensor<f64>], i: usize, j: usize, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let orig = probe[i].data()[j];
    let mut at = |offset: f64| {
        probe[i].data_mut()[j] = orig + offset;
        scalar_of(f, probe)
    };
    let (p1, m1, p2, m2) = (at(eps)?, at(-eps)?, at(2.0 * eps)?, at(-2.0 * eps)?);
    probe[i].data_mut()[j] = orig;
    let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * eps);
    if !numeric.is_finite() {
        return Err(Error::Numeric(format!("finite difference of input {i}[{j}] is not finite")));
    }
    Ok(numeric)
}

/// Compares the analytic gradient of the scalar `f` with respect to every
/// element of every input against the five-point difference
/// `(8 (f(x+e) - f(x-e)) - (f(x+2e) - f(x-2e))) / (12 e)`.
/// Returns the largest `|a - n| / max(|a|, |n|, 1e-3 max_k |a_k|, 1e-8)`,
/// `k` ranging over the same input tensor. An element that disagrees is
/// re-measured with `e` = eps/3, 3 eps, eps/10, eps/30 and keeps its best
/// agreement: a kink crossed by one step or rounding at another does not
/// decide the outcome, while a wrong backward disagrees at every step.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let (mut g, vars, loss) = evaluate(&f, inputs, true)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    drop(g);

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (i, grads) in analytic.iter().enumerate() {
        let scale = grads.iter().fold(0.0f64, |m, a| m.max(a.abs())) * SCALE_FLOOR;
        for (j, &a) in grads.iter().enumerate() {
            if !a.is_finite() {
                return Err(Error::Numeric(format!("gradient of input {i}[{j}] is not finite")));
            }
            let mut best = f64::INFINITY;
            for step in [eps, eps / 3.0, eps * 3.0, eps / 10.0, eps / 30.0] {
                let numeric = five_point(&f, &mut probe, i, j, step)?;
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(scale).max(1e-8);
                best = best.min(rel);
                if best <= RETRY_ABOVE {
                    break;
                }
            }
            worst = worst.max(best);
        }
    }
    Ok(worst)
}

/// [`grad_check`] on inputs drawn uniformly from `[-1, 1)` with `seed`.
pub fn grad_check_random<F>(f: F, shapes: &[Vec<usize>], seed: u64, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = shapes
        .iter()
        .map(|s| {
            let n: usize = s.iter().product();
            Tensor::new(s.clone(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    grad_check(f, &inputs, eps)
}
