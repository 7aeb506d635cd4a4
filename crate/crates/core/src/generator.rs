//! The generator: image and flow encoders, an action-augmented ConvLSTM over
//! encoded flow, latent combination, and a skip-connected decoder, rolled out
//! on its own predictions.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::{self, Layer};
use crate::seed;
use crate::tensor::{Bound, Graph, ParamStore, Scalar, Tensor, Var};

pub const STAGES: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub action_dim: usize,
    /// Encoder stage widths; the decoder mirrors them.
    pub widths: [usize; STAGES],
    pub kernel: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { height: 32, width: 32, channels: 3, action_dim: 2, widths: [16, 32, 64], kernel: 3 }
    }
}

impl GeneratorConfig {
    pub fn check(&self) -> Result<()> {
        let scale = 1 << STAGES;
        if self.height % scale != 0 || self.width % scale != 0 || self.height == 0 || self.width == 0 {
            return Err(Error::InvalidGeometry(format!(
                "frame {}x{} must be a positive multiple of {scale}",
                self.height, self.width
            )));
        }
        if self.kernel % 2 == 0 || self.widths.contains(&0) || self.channels == 0 || self.action_dim == 0 {
            return Err(Error::Config("generator needs an odd kernel and positive widths".into()));
        }
        Ok(())
    }

    /// Spatial extent of the deepest feature maps.
    pub fn latent_hw(&self) -> (usize, usize) {
        (self.height >> STAGES, self.width >> STAGES)
    }

    /// Channels of x̂, f̃ and χ̃.
    pub fn latent_channels(&self) -> usize {
        self.widths[STAGES - 1]
    }

    fn frame_shape(&self, batch: usize) -> Vec<usize> {
        vec![batch, self.channels, self.height, self.width]
    }

    /// Fresh parameters named `gen.*`.
    pub fn init<T: Scalar>(&self, seed: u64) -> Result<ParamStore<T>> {
        self.check()?;
        let mut rng = seed::rng(seed, "generator-init", 0);
        let mut store = ParamStore::new();
        let k = self.kernel;
        let w = self.widths;
        for enc in ["enc_x", "enc_o"] {
            let mut cin = self.channels;
            for (i, &cout) in w.iter().enumerate() {
                nn::add_conv(&mut store, &mut rng, &format!("gen.{enc}.{i}"), cin, cout, k)?;
                cin = cout;
            }
        }
        let hidden = self.latent_channels();
        nn::add_conv(&mut store, &mut rng, "gen.lstm", w[2] + self.action_dim + hidden, 4 * hidden, k)?;
        nn::set_forget_bias(&mut store, "gen.lstm.b", 1.0);
        nn::add_conv(&mut store, &mut rng, "gen.comb.0", w[2] + hidden, w[2], k)?;
        nn::add_conv(&mut store, &mut rng, "gen.comb.1", w[2], w[2], k)?;
        let outs = [w[1], w[0], self.channels];
        let mut cin = w[2];
        for (j, &cout) in outs.iter().enumerate() {
            let skip = w[STAGES - 1 - j];
            nn::add_conv_transpose(&mut store, &mut rng, &format!("gen.dec.{j}"), cin + skip, cout, k)?;
            cin = cout;
        }
        Ok(store)
    }
}

/// Recurrent state carried through warmup and rollout.
#[derive(Clone, Debug)]
pub struct GeneratorState {
    pub h: Var,
    pub c: Var,
    /// Pre-pool features of the current frame, shallowest first.
    pub skips: Vec<Var>,
    pub x_hat: Var,
    /// Current (observed or predicted) frame and its flow.
    pub frame: Var,
    pub flow: Var,
}

/// Outputs of a rollout; entry `t` holds step `t + 1`.
#[derive(Clone, Debug, Default)]
pub struct Rollout {
    pub frames: Vec<Var>,
    pub flows: Vec<Var>,
    pub chis: Vec<Var>,
    /// Actions actually fed to the generator at steps `0..T`.
    pub actions: Vec<Var>,
}

/// Supplies the action for each rollout step and sees each new latent χ̃.
pub trait ActionProvider<T: Scalar> {
    /// Action fed at step `step` (`a_step`, normalized, `B x m`).
    fn next_action(&mut self, g: &mut Graph<T>, step: usize) -> Result<Var>;

    /// Called with χ̃ of step `step + 1` right after it is computed.
    fn observe(&mut self, _g: &mut Graph<T>, _step: usize, _chi_next: Var) -> Result<()> {
        Ok(())
    }
}

/// Independent Gaussian perturbation of fed actions, clamped to `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct ActionNoise {
    sigma: f64,
    rng: ChaCha8Rng,
}

impl ActionNoise {
    pub fn new(sigma: f64, seed: u64) -> Self {
        Self { sigma, rng: seed::rng(seed, "action-noise", 0) }
    }

    /// Zero sigma returns `a` itself so clean and zero-noise runs coincide.
    pub fn apply<T: Scalar>(&mut self, g: &mut Graph<T>, a: Var) -> Result<Var> {
        if self.sigma == 0.0 {
            return Ok(a);
        }
        let normal = Normal::new(0.0, self.sigma).map_err(|e| Error::Config(format!("noise sigma: {e}")))?;
        let shape = g.shape(a).to_vec();
        let n: usize = shape.iter().product();
        let eps: Vec<T> = (0..n).map(|_| T::lit(normal.sample(&mut self.rng))).collect();
        let eps = g.constant(Tensor::new(shape, eps)?);
        let noisy = g.add(a, eps)?;
        Ok(g.clamp(noisy, -1.0, 1.0))
    }
}

fn maybe_noise<T: Scalar>(noise: &mut Option<ActionNoise>, g: &mut Graph<T>, a: Var) -> Result<Var> {
    match noise {
        Some(n) => n.apply(g, a),
        None => Ok(a),
    }
}

/// Replays recorded actions `a_0, a_1, ...`.
pub struct ReplayProvider<T> {
    actions: Vec<Tensor<T>>,
    noise: Option<ActionNoise>,
}

impl<T: Scalar> ReplayProvider<T> {
    pub fn new(actions: Vec<Tensor<T>>) -> Self {
        Self { actions, noise: None }
    }

    pub fn with_noise(mut self, noise: ActionNoise) -> Self {
        self.noise = Some(noise);
        self
    }
}

impl<T: Scalar> ActionProvider<T> for ReplayProvider<T> {
    fn next_action(&mut self, g: &mut Graph<T>, step: usize) -> Result<Var> {
        let a = self.actions.get(step).cloned().ok_or_else(|| {
            Error::Provider(format!("recorded actions exhausted at step {step} (have {})", self.actions.len()))
        })?;
        let a = g.constant(a);
        maybe_noise(&mut self.noise, g, a)
    }
}

/// Holds the last observed action `a_0` for the whole horizon.
pub struct FixedProvider<T> {
    action: Tensor<T>,
    noise: Option<ActionNoise>,
}

impl<T: Scalar> FixedProvider<T> {
    pub fn new(a0: Tensor<T>) -> Self {
        Self { action: a0, noise: None }
    }

    pub fn with_noise(mut self, noise: ActionNoise) -> Self {
        self.noise = Some(noise);
        self
    }
}

impl<T: Scalar> ActionProvider<T> for FixedProvider<T> {
    fn next_action(&mut self, g: &mut Graph<T>, _step: usize) -> Result<Var> {
        let a = g.constant(self.action.clone());
        maybe_noise(&mut self.noise, g, a)
    }
}

/// Generator parameters bound to one graph.
pub struct Generator {
    cfg: GeneratorConfig,
    enc_x: Vec<Layer>,
    enc_o: Vec<Layer>,
    lstm: Layer,
    comb: [Layer; 2],
    dec: Vec<Layer>,
}

impl Generator {
    /// Trainable binding.
    pub fn bind<T: Scalar>(cfg: &GeneratorConfig, store: &ParamStore<T>, g: &mut Graph<T>) -> Result<(Self, Bound)> {
        let bound = store.bind(g);
        Ok((Self::from_bound(cfg, &bound)?, bound))
    }

    /// Frozen binding: parameters enter the graph as constants.
    pub fn bind_frozen<T: Scalar>(cfg: &GeneratorConfig, store: &ParamStore<T>, g: &mut Graph<T>) -> Result<Self> {
        Self::from_bound(cfg, &store.bind_frozen(g))
    }

    pub fn from_bound(cfg: &GeneratorConfig, p: &Bound) -> Result<Self> {
        cfg.check()?;
        let stages = |prefix: &str| (0..STAGES).map(|i| Layer::get(p, &format!("{prefix}.{i}"))).collect::<Result<Vec<_>>>();
        Ok(Self {
            cfg: cfg.clone(),
            enc_x: stages("gen.enc_x")?,
            enc_o: stages("gen.enc_o")?,
            lstm: Layer::get(p, "gen.lstm")?,
            comb: [Layer::get(p, "gen.comb.0")?, Layer::get(p, "gen.comb.1")?],
            dec: stages("gen.dec")?,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    fn check_frame<T: Scalar>(&self, g: &Graph<T>, x: Var) -> Result<usize> {
        let s = g.shape(x);
        if s.len() != 4 || s[1..] != self.cfg.frame_shape(1)[1..] {
            return Err(Error::InvalidShape(format!(
                "expected frames N x {} x {} x {}, got {s:?}",
                self.cfg.channels, self.cfg.height, self.cfg.width
            )));
        }
        Ok(s[0])
    }

    fn encode<T: Scalar>(&self, g: &mut Graph<T>, layers: &[Layer], x: Var) -> Result<(Var, Vec<Var>)> {
        let pad = self.cfg.kernel / 2;
        let mut h = x;
        let mut skips = Vec::with_capacity(STAGES);
        for layer in layers {
            let pre = layer.conv(g, h, 1, pad)?;
            let act = g.leaky_relu(pre);
            skips.push(act);
            h = g.max_pool2d(act)?;
        }
        Ok((h, skips))
    }

    /// Latent image x̂ and per-stage skip features of a frame in `[0, 1]`.
    pub fn encode_image<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<(Var, Vec<Var>)> {
        self.check_frame(g, x)?;
        let centred = g.affine(x, 2.0, -1.0);
        self.encode(g, &self.enc_x, centred)
    }

    /// Latent flow ô of a flow map in `[-1, 1]`.
    pub fn encode_flow<T: Scalar>(&self, g: &mut Graph<T>, o: Var) -> Result<Var> {
        self.check_frame(g, o)?;
        Ok(self.encode(g, &self.enc_o, o)?.0)
    }

    /// Appends each action component as a constant plane: Ô = [ô, tile(a)].
    pub fn augment_flow<T: Scalar>(&self, g: &mut Graph<T>, o_hat: Var, a: Var) -> Result<Var> {
        let s = g.shape(o_hat).to_vec();
        let a_s = g.shape(a).to_vec();
        if s.len() != 4 || a_s != [s[0], self.cfg.action_dim] {
            return Err(Error::InvalidShape(format!("cannot augment {s:?} with actions {a_s:?}")));
        }
        let planes = g.tile_spatial(a, s[2], s[3])?;
        g.concat(&[o_hat, planes], 1)
    }

    /// Zero recurrent state for `batch` windows.
    pub fn zero_hidden<T: Scalar>(&self, g: &mut Graph<T>, batch: usize) -> (Var, Var) {
        let (h, w) = self.cfg.latent_hw();
        let shape = [batch, self.cfg.latent_channels(), h, w];
        (g.constant(Tensor::zeros(&shape)), g.constant(Tensor::zeros(&shape)))
    }

    /// One ConvLSTM step on Ô; returns the motion kernel f̃ = h'.
    pub fn flow_step<T: Scalar>(&self, g: &mut Graph<T>, aug: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        g.conv_lstm_step(aug, h, c, self.lstm.w, self.lstm.b)
    }

    /// χ̃ = conv(leaky(conv([x̂, f̃]))).
    pub fn combine<T: Scalar>(&self, g: &mut Graph<T>, x_hat: Var, f: Var) -> Result<Var> {
        let pad = self.cfg.kernel / 2;
        let joined = g.concat(&[x_hat, f], 1)?;
        let h = self.comb[0].conv(g, joined, 1, pad)?;
        let h = g.leaky_relu(h);
        self.comb[1].conv(g, h, 1, pad)
    }

    /// Upsample, join the matching skip, transpose-convolve; sigmoid output.
    pub fn decode<T: Scalar>(&self, g: &mut Graph<T>, chi: Var, skips: &[Var]) -> Result<Var> {
        if skips.len() != STAGES {
            return Err(Error::InvalidShape(format!("decoder needs {STAGES} skips, got {}", skips.len())));
        }
        let pad = self.cfg.kernel / 2;
        let mut h = chi;
        for (j, layer) in self.dec.iter().enumerate() {
            let up = g.upsample_nearest2(h)?;
            let skip = skips[STAGES - 1 - j];
            if g.shape(up)[2..] != g.shape(skip)[2..] || g.shape(up)[0] != g.shape(skip)[0] {
                return Err(Error::InvalidShape(format!(
                    "skip {:?} does not match decoder stage input {:?}",
                    g.shape(skip),
                    g.shape(up)
                )));
            }
            let joined = g.concat(&[up, skip], 1)?;
            let y = layer.conv_transpose(g, joined, 1, pad)?;
            h = if j + 1 == STAGES { g.sigmoid(y) } else { g.leaky_relu(y) };
        }
        Ok(h)
    }

    /// Runs the recurrent core over the conditioning window `t = -n+1 .. -1`
    /// and caches the encoding of the last observed frame `x_0`; its flow
    /// `o_0` and action `a_0` are consumed by the first rollout step.
    pub fn warmup<T: Scalar>(&self, g: &mut Graph<T>, frames: &[Var], flows: &[Var], actions: &[Var]) -> Result<GeneratorState> {
        let n = frames.len();
        if n < 2 {
            return Err(Error::InsufficientHistory(n));
        }
        if flows.len() != n || actions.len() < n - 1 {
            return Err(Error::InvalidLength(format!(
                "warmup got {n} frames, {} flows, {} actions",
                flows.len(),
                actions.len()
            )));
        }
        let batch = self.check_frame(g, frames[n - 1])?;
        let (mut h, mut c) = self.zero_hidden(g, batch);
        for k in 0..n - 1 {
            let o_hat = self.encode_flow(g, flows[k])?;
            let aug = self.augment_flow(g, o_hat, actions[k])?;
            (h, c) = self.flow_step(g, aug, h, c)?;
        }
        let (x_hat, skips) = self.encode_image(g, frames[n - 1])?;
        Ok(GeneratorState { h, c, skips, x_hat, frame: frames[n - 1], flow: flows[n - 1] })
    }

    /// One free-running step: consumes the state's flow with action `a`,
    /// predicts the next frame and moves the state onto it. Returns
    /// `(x̃, õ, χ̃)`.
    pub fn step<T: Scalar>(&self, g: &mut Graph<T>, state: &mut GeneratorState, a: Var) -> Result<(Var, Var, Var)> {
        let chi = self.advance(g, state, a)?;
        let x = self.decode(g, chi, &state.skips)?;
        let o = self.settle(g, state, x)?;
        Ok((x, o, chi))
    }

    fn advance<T: Scalar>(&self, g: &mut Graph<T>, state: &mut GeneratorState, a: Var) -> Result<Var> {
        let o_hat = self.encode_flow(g, state.flow)?;
        let aug = self.augment_flow(g, o_hat, a)?;
        let (h, c) = self.flow_step(g, aug, state.h, state.c)?;
        state.h = h;
        state.c = c;
        self.combine(g, state.x_hat, h)
    }

    fn settle<T: Scalar>(&self, g: &mut Graph<T>, state: &mut GeneratorState, x: Var) -> Result<Var> {
        let o = g.sub(x, state.frame)?;
        let (x_hat, skips) = self.encode_image(g, x)?;
        *state = GeneratorState { h: state.h, c: state.c, skips, x_hat, frame: x, flow: o };
        Ok(o)
    }

    /// Predicts `horizon` frames, each step feeding back its own prediction.
    pub fn rollout<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        mut state: GeneratorState,
        provider: &mut dyn ActionProvider<T>,
        horizon: usize,
    ) -> Result<Rollout> {
        let mut out = Rollout::default();
        for t in 0..horizon {
            let a = provider.next_action(g, t)?;
            let chi = self.advance(g, &mut state, a)?;
            provider.observe(g, t, chi)?;
            let x = self.decode(g, chi, &state.skips)?;
            let o = self.settle(g, &mut state, x)?;
            out.frames.push(x);
            out.flows.push(o);
            out.chis.push(chi);
            out.actions.push(a);
        }
        Ok(out)
    }
}

/// Random perturbation of every parameter, used to give tests generic weights.
pub fn jitter<T: Scalar>(store: &mut ParamStore<T>, scale: f64, seed: u64) {
    let mut rng = seed::rng(seed, "jitter", 0);
    for (_, p) in store.iter_mut() {
        for v in p.value.data_mut() {
            *v += T::lit(rng.random_range(-scale..scale));
        }
    }
}
