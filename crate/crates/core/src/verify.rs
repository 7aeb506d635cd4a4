//! Finite-difference verification suite over every differentiable building
//! block, from single kernels up to a coupled generator+actor rollout.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::actor::{Actor, ActorConfig, ActorProvider};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorConfig};
use crate::losses::{self, Discriminator, DiscriminatorConfig};
use crate::seed;
use crate::tensor::{grad_check, Bound, Graph, ParamStore, Tensor, Var, GRAD_CHECK_EPS};

/// Passing threshold on the maximum relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Seeds tried per op; the reported error is the worst of them.
pub const SEEDS_PER_OP: u64 = 3;

pub const OPS: &[&str] = &[
    "conv2d",
    "conv2d_transpose",
    "max_pool2d",
    "upsample",
    "dense",
    "sigmoid",
    "tanh",
    "leaky_relu",
    "conv_lstm_step",
    "lstm_step",
    "recon_loss",
    "action_loss",
    "adversarial_loss",
    "discriminator_loss",
    "discriminate",
    "encoders",
    "combine_decode",
    "actor_decode",
    "coupled_rollout",
];

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub op: String,
    pub max_rel_error: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

fn random(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("positive extents")
}

/// Weighted sum with fixed, distinct weights so every element matters.
pub fn probe(g: &mut Graph<f64>, y: Var) -> Result<Var> {
    let n = g.value(y).numel();
    let w: Vec<f64> = (0..n).map(|i| 0.3 + ((i * 7919) % 101) as f64 / 101.0).collect();
    let wv = g.constant(Tensor::new(g.shape(y).to_vec(), w)?);
    let m = g.mul(y, wv)?;
    Ok(g.sum(m))
}

/// Grad-checks `f` with respect to every parameter of `store` (bound under
/// their names) and every tensor of `extra`.
pub fn grad_check_params<F>(store: &ParamStore<f64>, extra: &[Tensor<f64>], f: F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &Bound, &[Var]) -> Result<Var>,
{
    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
    let mut inputs: Vec<Tensor<f64>> = store.iter().map(|(_, p)| p.value.clone()).collect();
    inputs.extend(extra.iter().cloned());
    let k = names.len();
    grad_check(
        |g, vars| {
            let bound: Bound = names.iter().cloned().zip(vars[..k].iter().copied()).collect();
            f(g, &bound, &vars[k..])
        },
        &inputs,
        GRAD_CHECK_EPS,
    )
}

fn merge(stores: &[&ParamStore<f64>]) -> ParamStore<f64> {
    let mut out = ParamStore::new();
    for s in stores {
        for (name, p) in s.iter() {
            out.insert_param(name, p.clone());
        }
    }
    out
}

/// Default initialization shrinks signals layer by layer until gradients of
/// the first layers sit at the roundoff floor; larger weights keep them
/// measurable.
fn jittered(mut store: ParamStore<f64>, seed: u64) -> ParamStore<f64> {
    crate::generator::jitter(&mut store, 0.5, seed);
    store
}

fn tiny_generator() -> GeneratorConfig {
    GeneratorConfig { height: 8, width: 8, channels: 2, action_dim: 2, widths: [2, 3, 3], kernel: 3 }
}

fn tiny_actor(gen: &GeneratorConfig) -> ActorConfig {
    // χ̃ of the tiny generator is 1x1; the actor reads it through a fixed
    // 4x4 lift.
    ActorConfig { conv_widths: [2, 2], dense_hidden: 3, chi_hw: (4, 4), ..ActorConfig::for_generator(gen) }
}

fn frames_and_flows(cfg: &GeneratorConfig, batch: usize, count: usize, rng: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Vec<Tensor<f64>>) {
    let shape = [batch, cfg.channels, cfg.height, cfg.width];
    let frames: Vec<Tensor<f64>> = (0..count).map(|_| random(&shape, 0.0, 1.0, rng)).collect();
    let mut flows = vec![Tensor::zeros(&shape)];
    for w in frames.windows(2) {
        let d = w[1].data().iter().zip(w[0].data()).map(|(a, b)| a - b).collect();
        flows.push(Tensor::new(shape.to_vec(), d).expect("same shape"));
    }
    (frames, flows)
}

fn check_once(op: &str, seed: u64) -> Result<f64> {
    let mut rng = seed::rng(seed, op, 0);
    let r = &mut rng;
    match op {
        "conv2d" => {
            let inputs = [random(&[2, 3, 5, 5], -1.0, 1.0, r), random(&[4, 3, 3, 3], -1.0, 1.0, r), random(&[4], -1.0, 1.0, r)];
            grad_check(
                |g, v| {
                    let y = g.conv2d(v[0], v[1], v[2], 2, 1)?;
                    probe(g, y)
                },
                &inputs,
                GRAD_CHECK_EPS,
            )
        }
        "conv2d_transpose" => {
            let inputs = [random(&[2, 3, 3, 3], -1.0, 1.0, r), random(&[3, 2, 3, 3], -1.0, 1.0, r), random(&[2], -1.0, 1.0, r)];
            grad_check(
                |g, v| {
                    let y = g.conv2d_transpose(v[0], v[1], v[2], 2, 1)?;
                    probe(g, y)
                },
                &inputs,
                GRAD_CHECK_EPS,
            )
        }
        "max_pool2d" => grad_check(
            |g, v| {
                let y = g.max_pool2d(v[0])?;
                probe(g, y)
            },
            &[random(&[2, 2, 4, 4], -1.0, 1.0, r)],
            GRAD_CHECK_EPS,
        ),
        "upsample" => grad_check(
            |g, v| {
                let y = g.upsample_nearest2(v[0])?;
                probe(g, y)
            },
            &[random(&[1, 2, 3, 3], -1.0, 1.0, r)],
            GRAD_CHECK_EPS,
        ),
        "dense" => {
            let inputs = [random(&[3, 4], -1.0, 1.0, r), random(&[4, 5], -1.0, 1.0, r), random(&[5], -1.0, 1.0, r)];
            grad_check(
                |g, v| {
                    let y = g.dense(v[0], v[1], v[2])?;
                    probe(g, y)
                },
                &inputs,
                GRAD_CHECK_EPS,
            )
        }
        "sigmoid" | "tanh" | "leaky_relu" => grad_check(
            |g, v| {
                let y = match op {
                    "sigmoid" => g.sigmoid(v[0]),
                    "tanh" => g.tanh(v[0]),
                    _ => g.leaky_relu(v[0]),
                };
                probe(g, y)
            },
            &[random(&[3, 4], -2.0, 2.0, r)],
            GRAD_CHECK_EPS,
        ),
        "conv_lstm_step" => {
            let inputs = [
                random(&[1, 2, 4, 4], -1.0, 1.0, r),
                random(&[1, 3, 4, 4], -1.0, 1.0, r),
                random(&[1, 3, 4, 4], -1.0, 1.0, r),
                random(&[12, 5, 3, 3], -0.5, 0.5, r),
                random(&[12], -0.5, 0.5, r),
            ];
            grad_check(
                |g, v| {
                    let (mut h, mut c) = (v[1], v[2]);
                    for t in 0..3 {
                        let x = g.affine(v[0], 1.0 - 0.4 * t as f64, 0.1 * t as f64);
                        (h, c) = g.conv_lstm_step(x, h, c, v[3], v[4])?;
                    }
                    let ph = probe(g, h)?;
                    let pc = probe(g, c)?;
                    g.add(ph, pc)
                },
                &inputs,
                GRAD_CHECK_EPS,
            )
        }
        "lstm_step" => {
            let inputs = [
                random(&[2, 3], -1.0, 1.0, r),
                random(&[2, 4], -1.0, 1.0, r),
                random(&[2, 4], -1.0, 1.0, r),
                random(&[7, 16], -0.8, 0.8, r),
                random(&[16], -0.5, 0.5, r),
            ];
            grad_check(
                |g, v| {
                    let (mut h, mut c) = (v[1], v[2]);
                    for t in 0..3 {
                        let x = g.affine(v[0], 1.0 - 0.4 * t as f64, 0.1 * t as f64);
                        (h, c) = g.lstm_step(x, h, c, v[3], v[4])?;
                    }
                    let ph = probe(g, h)?;
                    let pc = probe(g, c)?;
                    g.add(ph, pc)
                },
                &inputs,
                GRAD_CHECK_EPS,
            )
        }
        "recon_loss" => {
            let inputs: Vec<Tensor<f64>> = (0..4).map(|_| random(&[2, 2, 4, 4], 0.0, 1.0, r)).collect();
            // Under λ = 1 the analytic gradient is a sum of signs that can be
            // exactly zero; a linear probe term keeps it away from zero.
            let l1 = grad_check(
                |g, v| {
                    let l = losses::recon_loss(g, &v[..2], &v[2..], 1, 1)?;
                    let mut terms = vec![l];
                    for &x in v {
                        terms.push(probe(g, x)?);
                    }
                    g.add_all(&terms)
                },
                &inputs,
                GRAD_CHECK_EPS,
            )?;
            let l2 = grad_check(
                |g, v| losses::recon_loss(g, &v[..2], &v[2..], 2, 2),
                &inputs,
                GRAD_CHECK_EPS,
            )?;
            Ok(l1.max(l2))
        }
        "action_loss" => {
            let inputs: Vec<Tensor<f64>> = (0..6).map(|_| random(&[2, 2], -1.0, 1.0, r)).collect();
            grad_check(|g, v| losses::action_loss(g, &v[..3], &v[3..]), &inputs, GRAD_CHECK_EPS)
        }
        "adversarial_loss" => grad_check(
            |g, v| {
                let d = g.sigmoid(v[0]);
                Ok(losses::adversarial_gen_loss(g, d))
            },
            &[random(&[4, 1], -3.0, 3.0, r)],
            GRAD_CHECK_EPS,
        ),
        "discriminator_loss" => grad_check(
            |g, v| {
                let dr = g.sigmoid(v[0]);
                let df = g.sigmoid(v[1]);
                losses::discriminator_loss(g, dr, df)
            },
            &[random(&[4, 1], -3.0, 3.0, r), random(&[4, 1], -3.0, 3.0, r)],
            GRAD_CHECK_EPS,
        ),
        "discriminate" => {
            let cfg = DiscriminatorConfig { widths: [3, 3, 3, 3], ..DiscriminatorConfig::new(3, 1, 16, 16) };
            let store = jittered(cfg.init::<f64>(seed)?, seed);
            let frames: Vec<Tensor<f64>> = (0..3).map(|_| random(&[2, 1, 16, 16], 0.0, 1.0, r)).collect();
            grad_check_params(&store, &frames, |g, p, v| {
                let d = Discriminator::from_bound(&cfg, p)?;
                let out = d.discriminate(g, &v[..1], &v[1..])?;
                probe(g, out)
            })
        }
        "encoders" => {
            let cfg = tiny_generator();
            let store = jittered(cfg.init::<f64>(seed)?, seed);
            let (frames, flows) = frames_and_flows(&cfg, 2, 2, r);
            grad_check_params(&store, &[frames[1].clone(), flows[1].clone()], |g, p, v| {
                let net = Generator::from_bound(&cfg, p)?;
                let (x_hat, skips) = net.encode_image(g, v[0])?;
                let o_hat = net.encode_flow(g, v[1])?;
                let mut terms = vec![probe(g, x_hat)?, probe(g, o_hat)?];
                for s in skips {
                    terms.push(probe(g, s)?);
                }
                g.add_all(&terms)
            })
        }
        "combine_decode" => {
            let cfg = tiny_generator();
            let store = jittered(cfg.init::<f64>(seed)?, seed);
            let (frames, _) = frames_and_flows(&cfg, 2, 1, r);
            let f = random(&[2, cfg.latent_channels(), 1, 1], -1.0, 1.0, r);
            grad_check_params(&store, &[frames[0].clone(), f], |g, p, v| {
                let net = Generator::from_bound(&cfg, p)?;
                let (x_hat, skips) = net.encode_image(g, v[0])?;
                let chi = net.combine(g, x_hat, v[1])?;
                let x = net.decode(g, chi, &skips)?;
                probe(g, x)
            })
        }
        "actor_decode" => {
            let gen = tiny_generator();
            let cfg = tiny_actor(&gen);
            let store = jittered(cfg.init::<f64>(seed)?, seed);
            let chi = random(&[2, cfg.chi_channels, 4, 4], -1.0, 1.0, r);
            let a = random(&[2, cfg.action_dim], -1.0, 1.0, r);
            grad_check_params(&store, &[chi, a], |g, p, v| {
                let actor = Actor::from_bound(&cfg, p)?;
                let s0 = actor.zero_state(g, 2);
                let s1 = actor.rec_step(g, v[1], s0)?;
                let s2 = actor.rec_step(g, v[1], s1)?;
                let out = actor.decode(g, v[0], s2.h, None)?;
                probe(g, out)
            })
        }
        "coupled_rollout" => {
            let gen_cfg = tiny_generator();
            let actor_cfg = tiny_actor(&gen_cfg);
            let gen_store = jittered(gen_cfg.init::<f64>(seed)?, seed);
            let actor_store = jittered(actor_cfg.init::<f64>(seed)?, seed::derive(seed, "actor", 0));
            let store = merge(&[&gen_store, &actor_store]);
            let (frames, flows) = frames_and_flows(&gen_cfg, 2, COUPLED_N + COUPLED_T, r);
            let actions: Vec<Tensor<f64>> = (0..COUPLED_N + COUPLED_T).map(|_| random(&[2, 2], -1.0, 1.0, r)).collect();
            let inputs = CoupledInputs { gen: &gen_cfg, actor: &actor_cfg, frames, flows, actions, lift_seed: seed };
            // Targets sit a small, sign-definite offset away from the reference
            // outputs: the loss stays small against its own rounding and no
            // perturbation crosses an |.| kink.
            let reference = {
                let mut g = Graph::new();
                let p = store.bind_frozen(&mut g);
                let out = inputs.run(&mut g, &p)?;
                out.into_iter().map(|v| g.value(v).clone()).collect::<Vec<_>>()
            };
            let targets: Vec<Tensor<f64>> = reference
                .into_iter()
                .map(|t| {
                    let d = t.data().iter().map(|&x| x + offset(r)).collect();
                    Tensor::new(t.shape().to_vec(), d).expect("same shape")
                })
                .collect();
            let k = COUPLED_T;
            // Whole rollout loss against every parameter of both networks.
            let joint = grad_check_params(&store, &[], |g, p, _| {
                let out = inputs.run(g, p)?;
                let t: Vec<Var> = targets.iter().map(|t| g.constant(t.clone())).collect();
                let ri = losses::recon_loss(g, &t[..k], &out[..k], 2, 2)?;
                let rf = losses::recon_loss(g, &t[k..2 * k], &out[k..2 * k], 2, 2)?;
                let ra = losses::action_loss(g, &t[2 * k..], &out[2 * k..])?;
                g.add_all(&[ri, rf, ra])
            })?;
            // Action loss against the actor alone, generator frozen.
            let actor_only = grad_check_params(&actor_store, &[], |g, p, _| {
                let frozen = gen_store.bind_frozen(g);
                let all: Bound = frozen.iter().chain(p.iter()).map(|(n, v)| (n.to_string(), v)).collect();
                let out = inputs.run(g, &all)?;
                let t: Vec<Var> = targets[2 * k..].iter().map(|t| g.constant(t.clone())).collect();
                losses::action_loss(g, &t, &out[2 * k..])
            })?;
            Ok(joint.max(actor_only))
        }
        other => Err(Error::UnknownOp(other.to_string())),
    }
}

const COUPLED_N: usize = 2;
const COUPLED_T: usize = 3;

fn offset(rng: &mut ChaCha8Rng) -> f64 {
    let m = rng.random_range(0.02..0.05);
    if rng.random_bool(0.5) { m } else { -m }
}

struct CoupledInputs<'a> {
    gen: &'a GeneratorConfig,
    actor: &'a ActorConfig,
    frames: Vec<Tensor<f64>>,
    flows: Vec<Tensor<f64>>,
    actions: Vec<Tensor<f64>>,
    lift_seed: u64,
}

impl CoupledInputs<'_> {
    /// Generated frames, flows and actor predictions, concatenated.
    fn run(&self, g: &mut Graph<f64>, p: &Bound) -> Result<Vec<Var>> {
        let net = Generator::from_bound(self.gen, p)?;
        let actor = Actor::from_bound(self.actor, p)?;
        let n = COUPLED_N;
        let fr: Vec<Var> = self.frames[..n].iter().map(|t| g.constant(t.clone())).collect();
        let fl: Vec<Var> = self.flows[..n].iter().map(|t| g.constant(t.clone())).collect();
        let ac: Vec<Var> = self.actions[..n].iter().map(|t| g.constant(t.clone())).collect();
        let state = net.warmup(g, &fr, &fl, &ac)?;
        let mut provider = LiftedActor::new(ActorProvider::new(g, actor, &ac)?, self.actor.chi_channels, self.lift_seed);
        let out = net.rollout(g, state, &mut provider, COUPLED_T)?;
        let mut all = out.frames;
        all.extend(out.flows);
        all.extend(provider.inner.into_predictions());
        Ok(all)
    }
}

/// Feeds the tiny generator's 1x1 χ̃ to the actor through a fixed random
/// stride-4 transpose convolution. Nearest upsampling would duplicate values
/// and create pooling ties.
struct LiftedActor {
    inner: ActorProvider,
    kernel: Tensor<f64>,
}

impl LiftedActor {
    fn new(inner: ActorProvider, channels: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed, "lift", 0);
        Self { inner, kernel: random(&[channels, channels, 4, 4], -1.0, 1.0, &mut rng) }
    }
}

impl crate::generator::ActionProvider<f64> for LiftedActor {
    fn next_action(&mut self, g: &mut Graph<f64>, step: usize) -> Result<Var> {
        self.inner.next_action(g, step)
    }

    fn observe(&mut self, g: &mut Graph<f64>, step: usize, chi_next: Var) -> Result<()> {
        let c = self.kernel.shape()[1];
        let k = g.constant(self.kernel.clone());
        let b = g.constant(Tensor::zeros(&[c]));
        let chi = g.conv2d_transpose(chi_next, k, b, 4, 0)?;
        self.inner.observe(g, step, chi)
    }
}

/// Worst relative error of `op` over [`SEEDS_PER_OP`] seeds derived from `seed`.
pub fn run_check(op: &str, seed: u64) -> Result<CheckResult> {
    if !OPS.contains(&op) {
        return Err(Error::UnknownOp(op.to_string()));
    }
    let mut worst = 0.0f64;
    for i in 0..SEEDS_PER_OP {
        worst = worst.max(check_once(op, seed::derive(seed, "grad-check", i))?);
    }
    Ok(CheckResult { op: op.to_string(), max_rel_error: worst })
}

/// Runs `ops` (all of [`OPS`] when empty) in order.
pub fn run_suite(ops: &[&str], seed: u64) -> Result<Vec<CheckResult>> {
    let selected: Vec<&str> = if ops.is_empty() { OPS.to_vec() } else { ops.to_vec() };
    selected.iter().map(|op| run_check(op, seed)).collect()
}
