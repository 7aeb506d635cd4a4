//! The actor: an LSTM over past actions and a decoder reading the
//! generator's latent χ̃ to predict the next normalized action.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::generator::{ActionNoise, ActionProvider, GeneratorConfig};
use crate::nn::{self, Layer};
use crate::seed;
use crate::tensor::{Bound, Graph, ParamStore, Scalar, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct ActorConfig {
    pub action_dim: usize,
    /// LSTM cell units.
    pub hidden: usize,
    /// Channels and spatial extent of the χ̃ it reads.
    pub chi_channels: usize,
    pub chi_hw: (usize, usize),
    /// Widths of the two conv+pool stages over χ̃.
    pub conv_widths: [usize; 2],
    pub dense_hidden: usize,
    /// Dropout before the last dense layer (training only).
    pub dropout: f64,
}

impl ActorConfig {
    /// Matches the latent geometry of `gen`.
    pub fn for_generator(gen: &GeneratorConfig) -> Self {
        Self {
            action_dim: gen.action_dim,
            hidden: 2,
            chi_channels: gen.latent_channels(),
            chi_hw: gen.latent_hw(),
            conv_widths: [16, 16],
            dense_hidden: 32,
            dropout: 0.0,
        }
    }

    pub fn check(&self) -> Result<()> {
        let (h, w) = self.chi_hw;
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(Error::InvalidGeometry(format!("actor needs χ̃ extents divisible by 4, got {h}x{w}")));
        }
        if self.hidden == 0 || self.action_dim == 0 || !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("actor needs positive sizes and dropout in [0, 1)".into()));
        }
        Ok(())
    }

    fn flat_features(&self) -> usize {
        self.conv_widths[1] * (self.chi_hw.0 / 4) * (self.chi_hw.1 / 4)
    }

    /// Fresh parameters named `actor.*`.
    pub fn init<T: Scalar>(&self, seed: u64) -> Result<ParamStore<T>> {
        self.check()?;
        let mut rng = seed::rng(seed, "actor-init", 0);
        let mut store = ParamStore::new();
        let (m, hid) = (self.action_dim, self.hidden);
        nn::add_dense(&mut store, &mut rng, "actor.lstm", m + hid, 4 * hid)?;
        nn::set_forget_bias(&mut store, "actor.lstm.b", 1.0);
        nn::add_conv(&mut store, &mut rng, "actor.enc.0", self.chi_channels, self.conv_widths[0], 3)?;
        nn::add_conv(&mut store, &mut rng, "actor.enc.1", self.conv_widths[0], self.conv_widths[1], 3)?;
        nn::add_dense(&mut store, &mut rng, "actor.dec.0", self.flat_features() + hid, self.dense_hidden)?;
        nn::add_dense(&mut store, &mut rng, "actor.dec.1", self.dense_hidden, m)?;
        Ok(store)
    }
}

/// LSTM state; `h` is α̂.
#[derive(Clone, Copy, Debug)]
pub struct ActorState {
    pub h: Var,
    pub c: Var,
}

/// Actor parameters bound to one graph.
pub struct Actor {
    cfg: ActorConfig,
    lstm: Layer,
    enc: [Layer; 2],
    dec: [Layer; 2],
}

impl Actor {
    pub fn bind<T: Scalar>(cfg: &ActorConfig, store: &ParamStore<T>, g: &mut Graph<T>) -> Result<(Self, Bound)> {
        let bound = store.bind(g);
        Ok((Self::from_bound(cfg, &bound)?, bound))
    }

    pub fn bind_frozen<T: Scalar>(cfg: &ActorConfig, store: &ParamStore<T>, g: &mut Graph<T>) -> Result<Self> {
        Self::from_bound(cfg, &store.bind_frozen(g))
    }

    pub fn from_bound(cfg: &ActorConfig, p: &Bound) -> Result<Self> {
        cfg.check()?;
        Ok(Self {
            cfg: cfg.clone(),
            lstm: Layer::get(p, "actor.lstm")?,
            enc: [Layer::get(p, "actor.enc.0")?, Layer::get(p, "actor.enc.1")?],
            dec: [Layer::get(p, "actor.dec.0")?, Layer::get(p, "actor.dec.1")?],
        })
    }

    pub fn config(&self) -> &ActorConfig {
        &self.cfg
    }

    pub fn zero_state<T: Scalar>(&self, g: &mut Graph<T>, batch: usize) -> ActorState {
        let z = crate::tensor::Tensor::zeros(&[batch, self.cfg.hidden]);
        ActorState { h: g.constant(z.clone()), c: g.constant(z) }
    }

    /// α̂_t from `a_t` and the previous state.
    pub fn rec_step<T: Scalar>(&self, g: &mut Graph<T>, a: Var, state: ActorState) -> Result<ActorState> {
        let s = g.shape(a);
        if s.len() != 2 || s[1] != self.cfg.action_dim {
            return Err(Error::InvalidShape(format!(
                "actor expects actions N x {}, got {s:?}",
                self.cfg.action_dim
            )));
        }
        let (h, c) = g.lstm_step(a, state.h, state.c, self.lstm.w, self.lstm.b)?;
        Ok(ActorState { h, c })
    }

    /// ã_{t+1} = tanh(dense(leaky(dense([flatten(enc(χ̃_{t+1})), α̂_t])))).
    /// Dropout applies only when `rng` is given.
    pub fn decode<T: Scalar>(&self, g: &mut Graph<T>, chi: Var, alpha: Var, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        let s = g.shape(chi).to_vec();
        if s.len() != 4 || s[1] != self.cfg.chi_channels || (s[2], s[3]) != self.cfg.chi_hw {
            return Err(Error::InvalidShape(format!(
                "actor expects χ̃ N x {} x {} x {}, got {s:?}",
                self.cfg.chi_channels, self.cfg.chi_hw.0, self.cfg.chi_hw.1
            )));
        }
        let mut h = chi;
        for layer in &self.enc {
            let y = layer.conv(g, h, 1, 1)?;
            let y = g.leaky_relu(y);
            h = g.max_pool2d(y)?;
        }
        let flat = g.flatten(h)?;
        let joined = g.concat(&[flat, alpha], 1)?;
        let y = self.dec[0].dense(g, joined)?;
        let mut y = g.leaky_relu(y);
        if let Some(rng) = rng {
            y = g.dropout(y, self.cfg.dropout, rng);
        }
        let y = self.dec[1].dense(g, y)?;
        Ok(g.tanh(y))
    }

    /// Replays the conditioning actions `a_{-n+1} .. a_{-1}`.
    pub fn warmup<T: Scalar>(&self, g: &mut Graph<T>, actions: &[Var]) -> Result<ActorState> {
        let batch = actions.first().map(|&a| g.shape(a)[0]).ok_or(Error::InsufficientHistory(1))?;
        let mut state = self.zero_state(g, batch);
        for &a in actions {
            state = self.rec_step(g, a, state)?;
        }
        Ok(state)
    }
}

/// Decodes `horizon` actions from a fixed χ̃ stream, feeding each prediction
/// back into the recurrence. `past` holds `a_{-n+1} .. a_0`; `chis[t]` is
/// χ̃_{t+1}.
pub fn actor_rollout<T: Scalar>(
    g: &mut Graph<T>,
    actor: &Actor,
    past: &[Var],
    chis: &[Var],
    horizon: usize,
) -> Result<Vec<Var>> {
    if past.len() < 2 {
        return Err(Error::InsufficientHistory(past.len()));
    }
    if chis.len() < horizon {
        return Err(Error::Stream(format!("need {horizon} latent maps, got {}", chis.len())));
    }
    let (a0, history) = past.split_last().expect("non-empty");
    let mut state = actor.warmup(g, history)?;
    let mut fed = *a0;
    let mut out = Vec::with_capacity(horizon);
    for &chi in &chis[..horizon] {
        state = actor.rec_step(g, fed, state)?;
        let a = actor.decode(g, chi, state.h, None)?;
        out.push(a);
        fed = a;
    }
    Ok(out)
}

/// Actor in the generator loop: step 0 feeds the observed `a_0`; step `t`
/// feeds the action the actor decoded from χ̃_t of the previous step.
pub struct ActorProvider {
    actor: Actor,
    state: ActorState,
    pending: Var,
    fed: Option<Var>,
    predictions: Vec<Var>,
    noise: Option<ActionNoise>,
    dropout_rng: Option<ChaCha8Rng>,
}

impl ActorProvider {
    /// `past` holds the conditioning actions `a_{-n+1} .. a_0`.
    pub fn new<T: Scalar>(g: &mut Graph<T>, actor: Actor, past: &[Var]) -> Result<Self> {
        if past.len() < 2 {
            return Err(Error::InsufficientHistory(past.len()));
        }
        let (a0, history) = past.split_last().expect("non-empty");
        let state = actor.warmup(g, history)?;
        Ok(Self { actor, state, pending: *a0, fed: None, predictions: Vec::new(), noise: None, dropout_rng: None })
    }

    pub fn with_noise(mut self, noise: ActionNoise) -> Self {
        self.noise = Some(noise);
        self
    }

    /// Enables training-mode dropout.
    pub fn with_dropout(mut self, rng: ChaCha8Rng) -> Self {
        self.dropout_rng = Some(rng);
        self
    }

    /// Actor outputs ã_1, ã_2, ... (before any noise).
    pub fn predictions(&self) -> &[Var] {
        &self.predictions
    }

    pub fn into_predictions(self) -> Vec<Var> {
        self.predictions
    }
}

impl<T: Scalar> ActionProvider<T> for ActorProvider {
    fn next_action(&mut self, g: &mut Graph<T>, step: usize) -> Result<Var> {
        if step != self.predictions.len() {
            return Err(Error::Provider(format!(
                "actor asked for step {step} before observing step {}",
                self.predictions.len()
            )));
        }
        let a = match &mut self.noise {
            Some(n) => n.apply(g, self.pending)?,
            None => self.pending,
        };
        self.fed = Some(a);
        Ok(a)
    }

    fn observe(&mut self, g: &mut Graph<T>, step: usize, chi_next: Var) -> Result<()> {
        let fed = self
            .fed
            .take()
            .ok_or_else(|| Error::Provider(format!("actor observed step {step} without feeding an action")))?;
        self.state = self.actor.rec_step(g, fed, self.state)?;
        let a = self.actor.decode(g, chi_next, self.state.h, self.dropout_rng.as_mut())?;
        self.predictions.push(a);
        self.pending = a;
        Ok(())
    }
}
