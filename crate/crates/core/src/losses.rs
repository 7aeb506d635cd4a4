//! Reconstruction (with gradient-difference terms), action, adversarial and
//! discriminator losses, the phase-gated total, and the discriminator.

use crate::error::{Error, Result};
use crate::nn::{self, Layer};
use crate::seed;
use crate::tensor::{Bound, Graph, ParamStore, Scalar, Tensor, Var};

/// Lower and upper clamp for discriminator probabilities inside logarithms.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Exponent of the per-pixel reconstruction term (1 or 2).
    pub lambda1: u32,
    /// Exponent of the gradient-difference term (1 or 2).
    pub lambda2: u32,
    /// Exponent of the action error (always 2).
    pub lambda_a: u32,
    pub mu: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 1, lambda2: 1, lambda_a: 2, mu: 1e-4, beta: 1.0, gamma: 1.0 }
    }
}

impl LossWeights {
    pub fn with_gates(self, beta: f64, gamma: f64) -> Self {
        Self { beta, gamma, ..self }
    }

    pub fn check(&self) -> Result<()> {
        let gate = |v: f64| v == 0.0 || v == 1.0;
        if ![1, 2].contains(&self.lambda1) || ![1, 2].contains(&self.lambda2) {
            return Err(Error::Config("lambda1 and lambda2 must be 1 or 2".into()));
        }
        if self.lambda_a != 2 {
            return Err(Error::Config("lambda_a must be 2".into()));
        }
        if !(self.mu >= 0.0) || !gate(self.beta) || !gate(self.gamma) {
            return Err(Error::Config("mu must be non-negative and beta, gamma in {0, 1}".into()));
        }
        Ok(())
    }

    /// Scalar form of [`total_loss`].
    pub fn total(&self, recon_image: f64, recon_flow: f64, adv: f64, action: f64) -> f64 {
        self.beta * (recon_image + recon_flow + self.mu * adv) + self.gamma * action
    }
}

fn power<T: Scalar>(g: &mut Graph<T>, x: Var, exponent: u32) -> Var {
    match exponent {
        1 => g.abs(x),
        _ => g.square(x),
    }
}

fn check_pairs<T: Scalar>(g: &Graph<T>, targets: &[Var], preds: &[Var]) -> Result<usize> {
    if targets.is_empty() || targets.len() != preds.len() {
        return Err(Error::InvalidShape(format!(
            "{} targets vs {} predictions",
            targets.len(),
            preds.len()
        )));
    }
    for (&x, &y) in targets.iter().zip(preds) {
        if g.shape(x) != g.shape(y) {
            return Err(Error::InvalidShape(format!(
                "target {:?} vs prediction {:?}",
                g.shape(x),
                g.shape(y)
            )));
        }
    }
    Ok(g.shape(targets[0])[0])
}

fn check_maps<T: Scalar>(g: &Graph<T>, targets: &[Var], preds: &[Var]) -> Result<usize> {
    let batch = check_pairs(g, targets, preds)?;
    if let Some(&x) = targets.iter().find(|&&x| g.shape(x).len() != 4) {
        return Err(Error::InvalidShape(format!("expected N x C x H x W maps, got {:?}", g.shape(x))));
    }
    Ok(batch)
}

/// Σ_t Σ |x − x̃|^λ1 / batch.
pub fn pixel_loss<T: Scalar>(g: &mut Graph<T>, targets: &[Var], preds: &[Var], lambda1: u32) -> Result<Var> {
    let batch = check_maps(g, targets, preds)?;
    let mut terms = Vec::with_capacity(targets.len());
    for (&x, &y) in targets.iter().zip(preds) {
        let d = g.sub(x, y)?;
        let p = power(g, d, lambda1);
        terms.push(g.sum(p));
    }
    let total = g.add_all(&terms)?;
    Ok(g.scale(total, 1.0 / batch as f64))
}

/// Σ_t Σ_{H,W axes} ||Δx| − |Δx̃||^λ2 / batch, Δ the neighbouring-pixel
/// difference.
pub fn gradient_difference_loss<T: Scalar>(g: &mut Graph<T>, targets: &[Var], preds: &[Var], lambda2: u32) -> Result<Var> {
    let batch = check_maps(g, targets, preds)?;
    let mut terms = Vec::with_capacity(targets.len() * 2);
    for (&x, &y) in targets.iter().zip(preds) {
        for axis in [2, 3] {
            if g.shape(x)[axis] < 2 {
                continue;
            }
            let dx = g.diff(x, axis)?;
            let dx = g.abs(dx);
            let dy = g.diff(y, axis)?;
            let dy = g.abs(dy);
            let e = g.sub(dx, dy)?;
            let p = power(g, e, lambda2);
            terms.push(g.sum(p));
        }
    }
    if terms.is_empty() {
        return Ok(g.constant(Tensor::scalar(T::zero())));
    }
    let total = g.add_all(&terms)?;
    Ok(g.scale(total, 1.0 / batch as f64))
}

/// Pixel plus gradient-difference terms over `N x C x H x W` maps.
pub fn recon_loss<T: Scalar>(g: &mut Graph<T>, targets: &[Var], preds: &[Var], lambda1: u32, lambda2: u32) -> Result<Var> {
    let p = pixel_loss(g, targets, preds, lambda1)?;
    let d = gradient_difference_loss(g, targets, preds, lambda2)?;
    g.add(p, d)
}

pub fn recon_image_loss<T: Scalar>(g: &mut Graph<T>, x: &[Var], x_pred: &[Var], w: &LossWeights) -> Result<Var> {
    recon_loss(g, x, x_pred, w.lambda1, w.lambda2)
}

pub fn recon_flow_loss<T: Scalar>(g: &mut Graph<T>, o: &[Var], o_pred: &[Var], w: &LossWeights) -> Result<Var> {
    recon_loss(g, o, o_pred, w.lambda1, w.lambda2)
}

/// Σ_t ‖a_t − ã_t‖² / batch over `N x m` actions.
pub fn action_loss<T: Scalar>(g: &mut Graph<T>, targets: &[Var], preds: &[Var]) -> Result<Var> {
    let batch = check_pairs(g, targets, preds)?;
    let mut terms = Vec::with_capacity(targets.len());
    for (&a, &b) in targets.iter().zip(preds) {
        let d = g.sub(a, b)?;
        let sq = g.square(d);
        terms.push(g.sum(sq));
    }
    let total = g.add_all(&terms)?;
    Ok(g.scale(total, 1.0 / batch as f64))
}

fn mean_neg_ln<T: Scalar>(g: &mut Graph<T>, p: Var) -> Var {
    let n = g.value(p).numel();
    let p = g.clamp(p, PROB_EPS, 1.0 - PROB_EPS);
    let l = g.ln(p);
    let s = g.sum(l);
    g.scale(s, -1.0 / n as f64)
}

/// Mean over the batch of −ln D(fake).
pub fn adversarial_gen_loss<T: Scalar>(g: &mut Graph<T>, d_fake: Var) -> Var {
    mean_neg_ln(g, d_fake)
}

/// Mean over the batch of −ln D(real) − ln(1 − D(fake)).
pub fn discriminator_loss<T: Scalar>(g: &mut Graph<T>, d_real: Var, d_fake: Var) -> Result<Var> {
    let real = mean_neg_ln(g, d_real);
    let not_fake = g.affine(d_fake, -1.0, 1.0);
    let fake = mean_neg_ln(g, not_fake);
    g.add(real, fake)
}

/// Loss components of one batch; gated-off parts may be absent.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossParts {
    pub recon_image: Option<Var>,
    pub recon_flow: Option<Var>,
    pub adversarial: Option<Var>,
    pub action: Option<Var>,
}

/// β·(recon_image + recon_flow + μ·adv) + γ·action. Absent parts count as 0.
pub fn total_loss<T: Scalar>(g: &mut Graph<T>, parts: &LossParts, w: &LossWeights) -> Result<Var> {
    let mut terms = Vec::new();
    if w.beta != 0.0 {
        for v in [parts.recon_image, parts.recon_flow].into_iter().flatten() {
            terms.push(g.scale(v, w.beta));
        }
        if let Some(v) = parts.adversarial {
            terms.push(g.scale(v, w.beta * w.mu));
        }
    }
    if w.gamma != 0.0 {
        if let Some(v) = parts.action {
            terms.push(g.scale(v, w.gamma));
        }
    }
    if terms.is_empty() {
        return Ok(g.constant(Tensor::scalar(T::zero())));
    }
    g.add_all(&terms)
}

pub const DISC_LAYERS: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiscriminatorConfig {
    /// Frames per stacked input (n + T).
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub widths: [usize; DISC_LAYERS],
}

impl DiscriminatorConfig {
    pub fn new(frames: usize, channels: usize, height: usize, width: usize) -> Self {
        Self { frames, channels, height, width, widths: [16, 32, 32, 32] }
    }

    pub fn check(&self) -> Result<()> {
        let scale = 1 << DISC_LAYERS;
        if self.height % scale != 0 || self.width % scale != 0 || self.height == 0 || self.width == 0 {
            return Err(Error::InvalidGeometry(format!(
                "discriminator input {}x{} must be a positive multiple of {scale}",
                self.height, self.width
            )));
        }
        if self.frames == 0 || self.channels == 0 || self.widths.contains(&0) {
            return Err(Error::Config("discriminator sizes must be positive".into()));
        }
        Ok(())
    }

    /// Fresh parameters named `disc.*`.
    pub fn init<T: Scalar>(&self, seed: u64) -> Result<ParamStore<T>> {
        self.check()?;
        let mut rng = seed::rng(seed, "disc-init", 0);
        let mut store = ParamStore::new();
        let mut cin = self.frames * self.channels;
        for (i, &cout) in self.widths.iter().enumerate() {
            nn::add_conv(&mut store, &mut rng, &format!("disc.conv.{i}"), cin, cout, 4)?;
            cin = cout;
        }
        let flat = cin * (self.height >> DISC_LAYERS) * (self.width >> DISC_LAYERS);
        nn::add_dense(&mut store, &mut rng, "disc.out", flat, 1)?;
        Ok(store)
    }
}

/// Discriminator parameters bound to one graph.
pub struct Discriminator {
    cfg: DiscriminatorConfig,
    convs: Vec<Layer>,
    out: Layer,
}

impl Discriminator {
    pub fn bind<T: Scalar>(cfg: &DiscriminatorConfig, store: &ParamStore<T>, g: &mut Graph<T>) -> Result<(Self, Bound)> {
        let bound = store.bind(g);
        Ok((Self::from_bound(cfg, &bound)?, bound))
    }

    pub fn bind_frozen<T: Scalar>(cfg: &DiscriminatorConfig, store: &ParamStore<T>, g: &mut Graph<T>) -> Result<Self> {
        Self::from_bound(cfg, &store.bind_frozen(g))
    }

    pub fn from_bound(cfg: &DiscriminatorConfig, p: &Bound) -> Result<Self> {
        cfg.check()?;
        let convs = (0..DISC_LAYERS).map(|i| Layer::get(p, &format!("disc.conv.{i}"))).collect::<Result<_>>()?;
        Ok(Self { cfg: cfg.clone(), convs, out: Layer::get(p, "disc.out")? })
    }

    /// Probability that `[past, future]` is a real sequence, `N x 1`.
    pub fn discriminate<T: Scalar>(&self, g: &mut Graph<T>, past: &[Var], future: &[Var]) -> Result<Var> {
        if past.len() + future.len() != self.cfg.frames {
            return Err(Error::InvalidLength(format!(
                "discriminator takes {} frames, got {} + {}",
                self.cfg.frames,
                past.len(),
                future.len()
            )));
        }
        let frames: Vec<Var> = past.iter().chain(future).copied().collect();
        let mut h = g.concat(&frames, 1)?;
        for layer in &self.convs {
            let y = layer.conv(g, h, 2, 1)?;
            h = g.leaky_relu(y);
        }
        let flat = g.flatten(h)?;
        let logit = self.out.dense(g, flat)?;
        Ok(g.sigmoid(logit))
    }
}
